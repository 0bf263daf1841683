import numpy as np

from helpers import orbit_camera
from tok4d import formats, fsq
from tok4d.cli import dispatch
from tok4d.splat import RenderTarget, render
from tok4d.gaussians import GaussianSet


def write_image(path, rng, size=32):
    img = rng.uniform(size=(size, size, 3))
    formats.write_ppm(img, path)
    return formats.read_ppm(path)


def test_eval_identical_images(tmp_path, capsys):
    rng = np.random.default_rng(0)
    img = tmp_path / "a.ppm"
    write_image(img, rng)
    assert dispatch(["eval", str(img), str(img)]) == 0
    assert capsys.readouterr().out.strip() == "psnr=inf ssim=1.0"


def test_eval_different_images(tmp_path, capsys):
    rng = np.random.default_rng(1)
    a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
    write_image(a, rng)
    write_image(b, rng)
    assert dispatch(["eval", str(a), str(b)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("psnr=") and " ssim=" in out


def test_tokenize_detokenize_image_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    img_path = tmp_path / "x.ppm"
    original = write_image(img_path, rng)
    tokens = tmp_path / "x.atok"
    out_img = tmp_path / "y.ppm"
    assert dispatch(["tokenize", "--modality", "image", str(img_path),
                     str(tokens), "--seed", "5"]) == 0
    assert dispatch(["detokenize", str(tokens), str(out_img), "--seed", "5"]) == 0
    decoded = formats.read_ppm(out_img)
    assert decoded.shape == original.shape


def test_tokenize_center_crop(tmp_path):
    rng = np.random.default_rng(12)
    img_path = tmp_path / "odd.ppm"
    formats.write_ppm(rng.uniform(size=(37, 45, 3)), img_path)
    tokens = tmp_path / "odd.atok"
    # without the flag, non-divisible dims are the caller's problem
    assert dispatch(["tokenize", "--modality", "image", str(img_path),
                     str(tokens)]) == 2
    assert dispatch(["tokenize", "--modality", "image", str(img_path),
                     str(tokens), "--center-crop"]) == 0
    ts = formats.read_tokens(tokens)
    assert ts.bounds == (1, 2, 2, 1)  # 45 -> 32, 37 -> 32 at p=16


def test_tokenize_discrete_flag(tmp_path):
    rng = np.random.default_rng(3)
    img_path = tmp_path / "x.ppm"
    write_image(img_path, rng)
    tokens = tmp_path / "x.atok"
    assert dispatch(["tokenize", "--modality", "image", str(img_path),
                     str(tokens), "--discrete"]) == 0
    ts = formats.read_tokens(tokens)
    assert ts.discrete and ts.channels == 8
    assert np.all(ts.features >= 0) and np.all(ts.features < 4096)


def test_video_stream_encode_and_detokenize(tmp_path):
    rng = np.random.default_rng(4)
    video = rng.uniform(size=(8, 32, 32, 3))
    vid_path = tmp_path / "v.avid"
    formats.write_video(video, vid_path)
    tokens = tmp_path / "v.atok"
    assert dispatch(["stream-encode", str(vid_path), str(tokens),
                     "--tile-len", "4"]) == 0
    ts = formats.read_tokens(tokens)
    assert ts.bounds[0] == 2  # 8 frames / t_p
    out_path = tmp_path / "v_out.avid"
    assert dispatch(["detokenize", str(tokens), str(out_path),
                     "--tile-len", "4", "--frames", "8"]) == 0
    decoded = formats.read_video(out_path)
    assert decoded.shape == video.shape


def test_tokenize_video_matches_stream_encode(tmp_path):
    rng = np.random.default_rng(5)
    video = rng.uniform(size=(8, 32, 32, 3))
    vid_path = tmp_path / "v.avid"
    formats.write_video(video, vid_path)
    a, b = tmp_path / "a.atok", tmp_path / "b.atok"
    assert dispatch(["tokenize", "--modality", "video", str(vid_path), str(a)]) == 0
    assert dispatch(["stream-encode", str(vid_path), str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_tokenize_video_from_ppm_frame_directory(tmp_path):
    rng = np.random.default_rng(13)
    frame_dir = tmp_path / "frames"
    frame_dir.mkdir()
    video = rng.uniform(size=(4, 16, 16, 3))
    for i, frame in enumerate(video):
        formats.write_ppm(frame, frame_dir / f"{i:04d}.ppm")
    tokens = tmp_path / "v.atok"
    assert dispatch(["tokenize", "--modality", "video", str(frame_dir),
                     str(tokens), "--tile-len", "4"]) == 0
    ts = formats.read_tokens(tokens)
    assert ts.bounds == (1, 1, 1, 1) and len(ts) == 1


def test_quantize_continuous_tokens(tmp_path):
    rng = np.random.default_rng(6)
    from tok4d.tokens import TokenSet, Modality
    coords = np.array([[0, 0, 0, 0], [0, 1, 0, 0]])
    ts = TokenSet(Modality.IMAGE, (1, 2, 2, 1), coords,
                  rng.normal(size=(2, 48)).astype(np.float32))
    src, dst = tmp_path / "c.atok", tmp_path / "d.atok"
    formats.write_tokens(ts, src)
    assert dispatch(["quantize", str(src), str(dst)]) == 0
    out = formats.read_tokens(dst)
    assert out.discrete
    want = fsq.fsq_quantize(ts.features.astype(np.float64)).ids
    assert np.array_equal(out.features.astype(np.int64), want)


def test_quantize_rejects_wrong_width(tmp_path):
    from tok4d.tokens import TokenSet, Modality
    ts = TokenSet(Modality.IMAGE, (1, 2, 2, 1), np.array([[0, 0, 0, 0]]),
                  np.zeros((1, 10), dtype=np.float32))
    src = tmp_path / "c.atok"
    formats.write_tokens(ts, src)
    assert dispatch(["quantize", str(src), str(tmp_path / "d.atok")]) == 2


def test_fid_decompose_identical(tmp_path, capsys):
    rng = np.random.default_rng(7)
    feats = rng.normal(size=(64, 6)).astype(np.float32)
    f1, f2 = tmp_path / "a.atft", tmp_path / "b.atft"
    formats.write_features(feats, f1)
    formats.write_features(feats, f2)
    assert dispatch(["fid-decompose", str(f1), str(f2)]) == 0
    out = capsys.readouterr().out.strip()
    total, mean, cov = (float(part.split("=")[1]) for part in out.split())
    assert abs(total) < 1e-7 and abs(mean) < 1e-9 and abs(cov) < 1e-7
    assert out.startswith("total=")
    # nine decimal places
    assert len(out.split()[0].split(".")[-1]) == 9


def test_fid_decompose_total_is_sum(tmp_path, capsys):
    rng = np.random.default_rng(8)
    f1, f2 = tmp_path / "a.atft", tmp_path / "b.atft"
    formats.write_features(rng.normal(size=(50, 4)).astype(np.float32), f1)
    formats.write_features(rng.normal(size=(60, 4)).astype(np.float32) + 1, f2)
    assert dispatch(["fid-decompose", str(f1), str(f2)]) == 0
    out = capsys.readouterr().out.strip()
    total, mean, cov = (float(part.split("=")[1]) for part in out.split())
    assert abs(total - (mean + cov)) < 1e-8


def test_render_cli(tmp_path):
    cam = orbit_camera([0.0, 0.0, 1.0], size=16, focal=8.0)
    cam_path = tmp_path / "cam.txt"
    formats.write_camera_file(cam.rotation, cam.translation, cam.focal,
                              cam.cx, cam.cy, cam_path)
    splat_path = tmp_path / "scene.splat"
    formats.write_splats(np.array([[0.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]),
                         np.array([[0.5, 0.5, 0.5]]), np.array([0.9]),
                         np.array([[1.0, 0.0, 0.0, 0.0]]), splat_path)
    out = tmp_path / "out.ppm"
    assert dispatch(["render", str(splat_path), str(out), "--camera",
                     str(cam_path), "--width", "16", "--height", "16"]) == 0
    img = formats.read_ppm(out)
    assert img.shape == (16, 16, 3)
    assert img[:, :, 0].max() > 0.3  # the red gaussian is visible


def test_detokenize_threed_writes_splats(tmp_path):
    rng = np.random.default_rng(9)
    from tok4d.tokens import TokenSet, Modality
    coords = np.array([[0, 30, 31, 32], [0, 33, 31, 32]])
    ts = TokenSet(Modality.THREED, (1, 64, 64, 64), coords,
                  rng.normal(size=(2, 48)).astype(np.float32))
    tokens = tmp_path / "t.atok"
    formats.write_tokens(ts, tokens)
    out = tmp_path / "scene.splat"
    assert dispatch(["detokenize", str(tokens), str(out)]) == 0
    pos, col, scale, alpha, quat = formats.read_splats(out)
    assert len(pos) == 2 * 4  # K = 4 gaussians per token
    assert np.all((col >= 0) & (col <= 1))
    assert np.all(scale > 0)


def test_train_toy_cli(tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("stage=1\nsteps=3\nseed=5\nblocks=2\nwidth=32\nheads=4\n"
                   "semantic_dim=8\nsynthetic=1\nsynthetic_count=2\n"
                   "resolutions=16\n")
    ckpt = tmp_path / "toy.atck"
    assert dispatch(["train-toy", str(cfg), str(ckpt)]) == 0
    out = capsys.readouterr().out
    assert "steps=3" in out and "train_psnr=" in out
    assert ckpt.exists()
    from tok4d.model import Model
    model = Model.load(ckpt)
    assert model.config.blocks == 2


def test_usage_error_exit_code():
    assert dispatch(["tokenize", "--nonsense"]) == 1
    assert dispatch(["eval", "just-one-arg"]) == 1


def test_data_error_exit_code(tmp_path):
    bad = tmp_path / "bad.atok"
    bad.write_bytes(b"XXXX" + b"\x00" * 40)
    assert dispatch(["detokenize", str(bad), str(tmp_path / "o.ppm")]) == 2
    assert dispatch(["eval", str(tmp_path / "missing.ppm"),
                     str(tmp_path / "missing.ppm")]) == 2


def test_determinism_given_seed(tmp_path):
    rng = np.random.default_rng(10)
    img_path = tmp_path / "x.ppm"
    write_image(img_path, rng)
    t1, t2 = tmp_path / "1.atok", tmp_path / "2.atok"
    assert dispatch(["tokenize", "--modality", "image", str(img_path), str(t1),
                     "--seed", "9"]) == 0
    assert dispatch(["tokenize", "--modality", "image", str(img_path), str(t2),
                     "--seed", "9"]) == 0
    assert t1.read_bytes() == t2.read_bytes()


def test_tokenize_threed_manifest(tmp_path):
    rng = np.random.default_rng(11)
    # build a tiny multiview rig around a voxel cluster
    active = np.array([[31, 31, 31], [32, 32, 32], [33, 31, 32]])
    gs = GaussianSet(
        token_coords=np.concatenate([np.zeros((3, 1), dtype=np.int64), active], axis=1),
        raw_offset=rng.normal(scale=0.2, size=(3, 1, 3)),
        raw_color=rng.normal(size=(3, 1, 3)),
        raw_scale=np.full((3, 1, 3), 0.5),
        raw_opacity=np.full((3, 1), 2.0),
        raw_rotation=rng.normal(size=(3, 1, 4)),
    )
    lines = []
    for i, direction in enumerate(([1, 0, 0], [-1, 0, 0], [0, 1, 0])):
        cam = orbit_camera(direction, size=32, focal=32.0)
        img = render(gs, cam, RenderTarget(32, 32))
        name = f"view{i}.ppm"
        formats.write_ppm(img, tmp_path / name)
        vals = list(cam.rotation.reshape(-1)) + list(cam.translation) + \
            [cam.focal, cam.cx, cam.cy]
        lines.append(name + " " + " ".join(repr(float(v)) for v in vals))
    manifest = tmp_path / "views.txt"
    manifest.write_text("\n".join(lines) + "\n")
    voxels = tmp_path / "voxels.txt"
    voxels.write_text("\n".join(" ".join(str(v) for v in row) for row in active))
    tokens = tmp_path / "cloud.atok"
    assert dispatch(["tokenize", "--modality", "3d", str(manifest), str(tokens),
                     "--voxels", str(voxels)]) == 0
    ts = formats.read_tokens(tokens)
    assert ts.modality == 2 and len(ts) == 3
    assert ts.bounds == (1, 64, 64, 64)
