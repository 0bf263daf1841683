import io

import numpy as np
import pytest

from tok4d import formats
from tok4d.errors import BadMagic, TruncatedStream, UnsupportedVersion
from tok4d.tokens import Modality, TokenSet


def random_token_set(rng, modality=Modality.VIDEO):
    bounds = (4, 6, 6, 1)
    n = int(rng.integers(1, 20))
    all_coords = np.stack(np.unravel_index(
        rng.choice(4 * 6 * 6, size=n, replace=False), (4, 6, 6, 1)), axis=1)
    feats = rng.normal(size=(n, 5)).astype(np.float32)
    return TokenSet(modality, bounds, all_coords, feats)


def test_atok_round_trip_bit_exact():
    rng = np.random.default_rng(0)
    for _ in range(10):
        ts = random_token_set(rng)
        buf = io.BytesIO()
        formats.write_tokens(ts, buf)
        out = formats.read_tokens(buf.getvalue())
        assert out.modality == ts.modality
        assert out.bounds == ts.bounds
        assert out.discrete == ts.discrete
        assert np.array_equal(out.coords, ts.coords)
        assert out.features.tobytes() == ts.features.tobytes()


def test_atok_preserves_negative_zero():
    feats = np.array([[-0.0, 0.0, -0.0]], dtype=np.float32)
    ts = TokenSet(Modality.IMAGE, (1, 2, 2, 1), np.array([[0, 0, 0, 0]]), feats)
    buf = io.BytesIO()
    formats.write_tokens(ts, buf)
    out = formats.read_tokens(buf.getvalue())
    assert out.features.tobytes() == feats.tobytes()
    assert np.signbit(out.features[0, 0])


def test_atok_discrete_flag_round_trips():
    ids = np.arange(8, dtype=np.float32).reshape(1, 8)
    ts = TokenSet(Modality.IMAGE, (1, 2, 2, 1), np.array([[0, 0, 0, 0]]),
                  ids, discrete=True)
    buf = io.BytesIO()
    formats.write_tokens(ts, buf)
    assert formats.read_tokens(buf.getvalue()).discrete


def test_atok_bad_magic():
    with pytest.raises(BadMagic):
        formats.read_tokens(b"XXXX" + b"\x00" * 64)


def test_atok_unsupported_version():
    buf = io.BytesIO()
    ts = random_token_set(np.random.default_rng(1))
    formats.write_tokens(ts, buf)
    data = bytearray(buf.getvalue())
    data[4] = 9
    with pytest.raises(UnsupportedVersion):
        formats.read_tokens(bytes(data))


def test_atok_truncated_records():
    ts = random_token_set(np.random.default_rng(2))
    buf = io.BytesIO()
    formats.write_tokens(ts, buf)
    data = buf.getvalue()
    with pytest.raises(TruncatedStream):
        formats.read_tokens(data[:-5])


def test_atok_header_declares_more_records_than_present():
    # header says L=2 but only one record follows
    ts = TokenSet(Modality.IMAGE, (1, 2, 2, 1), np.array([[0, 0, 0, 0]]),
                  np.ones((1, 2), dtype=np.float32))
    buf = io.BytesIO()
    formats.write_tokens(ts, buf)
    data = bytearray(buf.getvalue())
    data[30] = 2  # L lives after magic(4)+ver(4)+mod(1)+flag(1)+bounds(16)+C(4)
    with pytest.raises(TruncatedStream):
        formats.read_tokens(bytes(data))


def test_atft_round_trip():
    rng = np.random.default_rng(3)
    feats = rng.normal(size=(17, 9)).astype(np.float32)
    buf = io.BytesIO()
    formats.write_features(feats, buf)
    out = formats.read_features(buf.getvalue())
    assert out.tobytes() == feats.tobytes()


def test_avid_round_trip():
    rng = np.random.default_rng(4)
    video = rng.integers(0, 256, size=(3, 4, 5, 3)).astype(np.float64) / 255.0
    buf = io.BytesIO()
    formats.write_video(video, buf)
    out = formats.read_video(buf.getvalue())
    assert out.shape == video.shape
    assert np.array_equal(out, video)


def test_ppm_round_trip():
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, size=(6, 7, 3)).astype(np.float64) / 255.0
    buf = io.BytesIO()
    formats.write_ppm(img, buf)
    out = formats.read_ppm(buf.getvalue())
    assert np.array_equal(out, img)


def test_checkpoint_round_trip_bit_exact():
    rng = np.random.default_rng(6)
    params = {"a.w": rng.normal(size=(3, 4)).astype(np.float32),
              "b.g": rng.normal(size=(7,)).astype(np.float32)}
    cfg = (2, 32, 4, 32, 16, 4)
    buf = io.BytesIO()
    formats.write_checkpoint(cfg, params, buf)
    first = buf.getvalue()
    cfg2, loaded = formats.read_checkpoint(first)
    assert cfg2 == cfg
    assert set(loaded) == set(params)
    for k in params:
        assert loaded[k].tobytes() == params[k].reshape(-1).tobytes()
    buf2 = io.BytesIO()
    formats.write_checkpoint(cfg2, loaded, buf2)
    assert buf2.getvalue() == first


def test_splat_text_round_trip():
    rng = np.random.default_rng(7)
    pos, col, scale = rng.normal(size=(5, 3)), rng.uniform(size=(5, 3)), rng.uniform(0.01, 1, (5, 3))
    alpha, quat = rng.uniform(size=5), rng.normal(size=(5, 4))
    buf = io.StringIO()
    formats.write_splats(pos, col, scale, alpha, quat, buf)
    p2, c2, s2, a2, q2 = formats.read_splats(buf.getvalue().encode())
    for a, b in [(pos, p2), (col, c2), (scale, s2), (alpha, a2), (quat, q2)]:
        assert np.array_equal(a, b)  # repr() round-trips float64 exactly


def test_camera_and_manifest_parsing(tmp_path):
    rot = np.eye(3)
    cam_file = tmp_path / "cam.txt"
    formats.write_camera_file(rot, [0.0, 0.0, 2.0], 32.0, 16.0, 16.0, cam_file)
    r, t, f, cx, cy = formats.read_camera_file(cam_file)
    assert np.array_equal(r, rot) and f == 32.0 and (cx, cy) == (16.0, 16.0)

    manifest = tmp_path / "views.txt"
    manifest.write_text("a.ppm " + " ".join(["1", "0", "0", "0", "1", "0", "0", "0", "1",
                                             "0", "0", "2", "32", "16", "16"]) + "\n")
    views = formats.read_view_manifest(manifest)
    assert len(views) == 1 and views[0][0] == "a.ppm"


def test_config_parsing(tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("stage=1\nsteps = 100\n# comment\nseed=7\n")
    out = formats.read_config(cfg)
    assert out == {"stage": "1", "steps": "100", "seed": "7"}
