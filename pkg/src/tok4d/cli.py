"""Command-line surface: files in, files out.

Subcommands cover the whole pipeline: `tokenize` / `detokenize` between
media (PPM, AVID, multiview manifests) and ATOK token files, `stream-encode`
for tiled video encoding, `quantize` for continuous-to-discrete ids,
`fid-decompose` for the Fréchet mean/covariance split, `eval` for
PSNR/SSIM, `train-toy` for curriculum runs, and `render` for splat files.

Exit codes: 0 success, 1 usage error, 2 data/pipeline error.  Every
randomized path sits behind --seed, so identical invocations produce
identical bytes.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import formats, fsq
from . import model as nn
from .errors import Tok4dError
from .metrics import feature_stats, frechet, psnr, ssim
from .model import Model, ModelConfig
from .patchify import Camera, VoxelGrid, aggregate_voxels, patchify_image, \
    embed as embed_grid, unpatchify
from .splat import RenderTarget, render_world
from .stream import stream_decode, stream_encode
from .tokens import Modality, TokenSet, canonicalize, check_subspace
from .trainer import TrainConfig, run_toy

DEFAULT_MODEL = ModelConfig(blocks=4, width=64, heads=4, latent_dim=48,
                            semantic_dim=16, gaussians_per_token=4)


def _load_model(args) -> Model:
    if getattr(args, "checkpoint", None):
        return Model.load(args.checkpoint)
    return Model.init(DEFAULT_MODEL, seed=args.seed)


def _center_crop(pixels: np.ndarray, patch: int) -> np.ndarray:
    """Crop H and W (the trailing spatial axes before channels) down to
    multiples of the patch size, keeping the center."""
    h, w = pixels.shape[-3], pixels.shape[-2]
    h2, w2 = (h // patch) * patch, (w // patch) * patch
    if h2 == 0 or w2 == 0:
        raise Tok4dError(f"{h}x{w} input smaller than one {patch}px patch")
    top, left = (h - h2) // 2, (w - w2) // 2
    return pixels[..., top:top + h2, left:left + w2, :]


def _cmd_tokenize(args) -> int:
    model = _load_model(args)
    cfg = model.config
    if args.modality == "image":
        image = formats.read_ppm(args.input)
        if args.center_crop:
            image = _center_crop(image, cfg.patch_p)
        grid = patchify_image(image, cfg.patch_t, cfg.patch_p)
        ts = embed_grid(grid, model.p("embed.w").data, model.p("embed.b").data)
        feats = nn.encode(model, canonicalize(ts))
        code = nn.project_recon(model, feats, args.seed)
        out = TokenSet(Modality.IMAGE, grid.bounds, grid.coords, code.mean)
    elif args.modality == "video":
        video = _read_video_any(args.input)
        if args.center_crop:
            video = _center_crop(video, cfg.patch_p)
        result = stream_encode(model, video, tile_len=args.tile_len, seed=args.seed)
        out = TokenSet(Modality.VIDEO, result.bounds, result.coords,
                       result.latents.mean)
    else:
        views, view_tokens = [], []
        root = Path(args.input).parent
        for ppm, rot, trans, focal, cx, cy in formats.read_view_manifest(args.input):
            cam = Camera(formats.read_ppm(root / ppm), rot, trans, focal, cx, cy)
            views.append(cam)
            grid = patchify_image(cam.image, cfg.patch_t, cfg.patch_p)
            view_tokens.append(embed_grid(grid, model.p("embed.w").data,
                                          model.p("embed.b").data))
        if not args.voxels:
            raise Tok4dError("--voxels is required for 3d tokenization")
        voxels = VoxelGrid(formats.read_voxel_list(args.voxels))
        ts3d = aggregate_voxels(views, voxels, view_tokens)
        feats = nn.encode(model, ts3d)
        code = nn.project_recon(model, feats, args.seed)
        out = TokenSet(Modality.THREED, ts3d.bounds, ts3d.coords, code.mean)
    out = canonicalize(out)
    check_subspace(out)
    if args.discrete:
        code = fsq.fsq_quantize(out.features.astype(np.float64))
        out = TokenSet(out.modality, out.bounds, out.coords,
                       code.ids.astype(np.float32), discrete=True)
    formats.write_tokens(out, args.output)
    return 0


def _latents_from_tokens(ts: TokenSet) -> np.ndarray:
    if ts.discrete:
        return fsq.ids_to_levels(ts.features.astype(np.int64))
    return ts.features.astype(np.float64)


def _cmd_detokenize(args) -> int:
    model = _load_model(args)
    cfg = model.config
    ts = canonicalize(formats.read_tokens(args.input))
    latents = _latents_from_tokens(ts)
    if ts.modality == Modality.IMAGE:
        feats = nn.decode(model, latents, ts.coords)
        blocks = nn.pixel_head(model, feats)
        image = unpatchify(blocks, ts.bounds, cfg.patch_t, cfg.patch_p, 1)
        formats.write_ppm(image, args.output)
    elif ts.modality == Modality.VIDEO:
        frames = args.frames or ts.bounds[0] * cfg.patch_t
        video = stream_decode(model, latents, ts.coords, ts.bounds, frames,
                              tile_len=args.tile_len)
        if video.ndim == 3:
            video = video[None]
        formats.write_video(video, args.output)
    else:
        feats = nn.decode(model, latents, ts.coords)
        gs = nn.gaussian_head(model, feats, ts.coords,
                              grid_resolution=ts.bounds[1])
        n = len(gs)
        formats.write_splats(gs.positions_world.reshape(n, 3),
                             gs.colors.reshape(n, 3),
                             gs.scales.reshape(n, 3),
                             gs.opacities.reshape(n),
                             gs.rotations.reshape(n, 4), args.output)
    return 0


def _cmd_stream_encode(args) -> int:
    model = _load_model(args)
    video = _read_video_any(args.input)
    if args.center_crop:
        video = _center_crop(video, model.config.patch_p)
    result = stream_encode(model, video, tile_len=args.tile_len, seed=args.seed)
    out = TokenSet(Modality.VIDEO, result.bounds, result.coords,
                   result.latents.mean)
    formats.write_tokens(canonicalize(out), args.output)
    return 0


def _cmd_quantize(args) -> int:
    ts = formats.read_tokens(args.input)
    if ts.discrete:
        raise Tok4dError("input tokens are already discrete")
    if ts.channels != fsq.LATENT_DIM:
        raise Tok4dError(f"quantize expects {fsq.LATENT_DIM}-dim latents, "
                         f"got {ts.channels}")
    code = fsq.fsq_quantize(ts.features.astype(np.float64))
    out = TokenSet(ts.modality, ts.bounds, ts.coords,
                   code.ids.astype(np.float32), discrete=True)
    formats.write_tokens(out, args.output)
    return 0


def _cmd_fid_decompose(args) -> int:
    stats_a = feature_stats(formats.read_features(args.features_a))
    stats_b = feature_stats(formats.read_features(args.features_b))
    total, mean_term, cov_term = frechet(stats_a, stats_b)
    print(f"total={total:.9f} mean={mean_term:.9f} cov={cov_term:.9f}")
    return 0


def _read_video_any(path: str) -> np.ndarray:
    """AVID container or a directory of numbered PPM frames."""
    p = Path(path)
    if p.is_dir():
        frames = sorted(p.glob("*.ppm"))
        if not frames:
            raise Tok4dError(f"{p} holds no .ppm frames")
        return np.stack([formats.read_ppm(f) for f in frames])
    return formats.read_video(path)


def _read_media(path: str) -> np.ndarray:
    if Path(path).is_dir():
        return _read_video_any(path)
    with open(path, "rb") as handle:
        magic = handle.read(4)
    if magic == formats.AVID_MAGIC:
        return formats.read_video(path)
    return formats.read_ppm(path)


def _cmd_eval(args) -> int:
    x = _read_media(args.reference)
    y = _read_media(args.candidate)
    p = psnr(x, y)
    s = ssim(x, y)
    print(f"psnr={p:g} ssim={float(s)}")
    return 0


def _cmd_train_toy(args) -> int:
    config = TrainConfig.from_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    report = run_toy(config, checkpoint_path=args.output,
                     log_stream=sys.stdout if args.verbose else None)
    counts = " ".join(f"{k}:{v}" for k, v in sorted(report.task_counts.items()))
    print(f"steps={report.steps} final_loss={report.final_loss:.6g} "
          f"train_psnr={report.final_psnr:.4g} tasks=[{counts}]")
    return 0


def _cmd_render(args) -> int:
    positions, colors, scales, opacities, _ = formats.read_splats(args.splats)
    rot, trans, focal, cx, cy = formats.read_camera_file(args.camera)
    cam = Camera(np.zeros((args.height, args.width, 3)), rot, trans, focal, cx, cy)
    background = np.array([float(v) for v in args.background.split(",")])
    target = RenderTarget(args.width, args.height, background=background)
    image = render_world(positions, colors, scales.mean(axis=1), opacities,
                         cam, target)
    formats.write_ppm(image, args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tok4d",
        description="Sparse-4D visual tokenizer: encode media to latent "
                    "tokens, decode them back, train and evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=0,
                       help="seed for model init / sampling (default 0)")

    p = sub.add_parser("tokenize", help="media -> ATOK latent tokens")
    p.add_argument("input", help="PPM image, AVID video, or view manifest")
    p.add_argument("output", help="ATOK file to write")
    p.add_argument("--modality", choices=("image", "video", "3d"), required=True)
    p.add_argument("--checkpoint", help="ATCK checkpoint (default: seeded init)")
    p.add_argument("--discrete", action="store_true",
                   help="quantize latents to codebook ids")
    p.add_argument("--voxels", help="voxel list file (3d only)")
    p.add_argument("--tile-len", type=int, default=16, dest="tile_len",
                   help="temporal tile length in frames (video)")
    p.add_argument("--center-crop", action="store_true", dest="center_crop",
                   help="crop H/W to patch multiples instead of erroring")
    add_seed(p)
    p.set_defaults(func=_cmd_tokenize)

    p = sub.add_parser("detokenize", help="ATOK tokens -> media")
    p.add_argument("input")
    p.add_argument("output", help="PPM (image), AVID (video) or splat text (3d)")
    p.add_argument("--checkpoint")
    p.add_argument("--frames", type=int, default=0,
                   help="trim decoded video to this many frames")
    p.add_argument("--tile-len", type=int, default=16, dest="tile_len")
    add_seed(p)
    p.set_defaults(func=_cmd_detokenize)

    p = sub.add_parser("stream-encode", help="AVID video -> ATOK tokens, tiled")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--tile-len", type=int, default=16, dest="tile_len")
    p.add_argument("--checkpoint")
    p.add_argument("--center-crop", action="store_true", dest="center_crop",
                   help="crop H/W to patch multiples instead of erroring")
    add_seed(p)
    p.set_defaults(func=_cmd_stream_encode)

    p = sub.add_parser("quantize", help="continuous ATOK -> discrete ids")
    p.add_argument("input")
    p.add_argument("output")
    add_seed(p)
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("fid-decompose",
                       help="Frechet distance of two ATFT feature files")
    p.add_argument("features_a")
    p.add_argument("features_b")
    add_seed(p)
    p.set_defaults(func=_cmd_fid_decompose)

    p = sub.add_parser("eval", help="PSNR/SSIM between two media files")
    p.add_argument("reference")
    p.add_argument("candidate")
    add_seed(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("train-toy", help="run one curriculum stage")
    p.add_argument("config", help="key=value config file")
    p.add_argument("output", help="checkpoint to write")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--verbose", action="store_true",
                   help="stream per-step loss lines to stdout")
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("render", help="splat file + camera -> PPM")
    p.add_argument("splats")
    p.add_argument("output")
    p.add_argument("--camera", required=True,
                   help="text file: 9 rotation, 3 translation, f, cx, cy")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--background", default="0,0,0",
                   help="background color r,g,b in [0,1]")
    add_seed(p)
    p.set_defaults(func=_cmd_render)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except Tok4dError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
