"""Progressive four-stage training curriculum at desk scale.

Stages add capabilities: (1) image reconstruction, (2) video dynamics with
a 48-wide latent, (3) 3D geometry, (4) discrete latents through the
straight-through quantizer.  Task mixing is a deterministic round-robin
cycle whose per-9-slot composition matches the published sampling ratios
exactly, and the image-understanding distillation term is accumulated into
every slot.  AdamW (beta1 0.9, beta2 0.95, weight decay 0.1) with linear
warmup into cosine decay drives the updates; the encoder parameter group
runs at 0.1x the base rate and an EMA copy (decay 0.9999) shadows every
parameter.  Given (seed, config) the whole run is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import formats, fsq
from . import model as nn
from .errors import (
    ConfigError,
    DataError,
    NonFiniteLoss,
    ShapeMismatch,
    StepOutOfRange,
    UnknownStage,
)
from .gaussians import GaussianSet
from .losses import LossReport, LossWeights, Task, distill_kl, kl_gauss, l1_loss, \
    sigmoid_pair_loss, total_loss, gram_from_features, lpips_from_features, \
    clip_from_features
from .metrics import psnr
from .model import Model, ModelConfig
from .patchify import Camera, VoxelGrid, aggregate_selection, patchify_image, \
    patchify_video, embed as embed_grid
from .probe import ProbeNet, _resize_matrix
from .splat import RenderTarget, render, render_op
from .stream import block_causal_mask, split_tiles

LR_MAX = 3e-4
LR_MIN = 3e-5
WARMUP_FRACTION = 0.01  # 2k of 200k steps, scaled proportionally
ENCODER_LR_SCALE = 0.1
EMA_DECAY = 0.9999

# Deterministic 9-slot cycles matching the stage sampling ratios exactly.
_CYCLES = {
    1: [Task.IMAGE_RECON],
    2: [Task.IMAGE_RECON, Task.VIDEO_RECON, Task.VIDEO_RECON, Task.VIDEO_RECON,
        Task.VIDEO_UNDERST, Task.IMAGE_RECON, Task.VIDEO_RECON, Task.VIDEO_RECON,
        Task.VIDEO_RECON],
    3: [Task.IMAGE_RECON, Task.VIDEO_RECON, Task.THREED_RECON, Task.VIDEO_RECON,
        Task.VIDEO_UNDERST, Task.IMAGE_RECON, Task.VIDEO_RECON,
        Task.THREED_UNDERST, Task.VIDEO_RECON],
}
_CYCLES[4] = list(_CYCLES[3])

STAGE_LATENT_DIM = {1: 32, 2: 48, 3: 48, 4: 48}
STAGE_RESOLUTIONS = {1: (16, 32, 64), 2: (16, 32, 64), 3: (16, 32, 64),
                     4: (16, 32, 64)}


def task_cycle(stage: int) -> list[Task]:
    """The stage's deterministic task sequence (repeats indefinitely)."""
    if stage not in _CYCLES:
        raise UnknownStage(f"stage {stage} outside 1..4")
    return list(_CYCLES[stage])


def lr_at(step: int, total_steps: int, lr_max: float = LR_MAX,
          lr_min: float = LR_MIN, warmup: int | None = None) -> float:
    """Linear warmup to lr_max, then cosine annealing to lr_min."""
    if not 0 <= step <= total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {total_steps}]")
    if warmup is None:
        warmup = max(1, round(total_steps * WARMUP_FRACTION))
    if step <= warmup:
        return lr_max * step / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * progress))


def ema_update(ema: dict[str, np.ndarray], params: dict[str, np.ndarray],
               gamma: float = EMA_DECAY) -> dict[str, np.ndarray]:
    """In-place exponential moving average: ema <- gamma ema + (1-gamma) p."""
    for name, value in params.items():
        if ema[name].shape != np.shape(value):
            raise ShapeMismatch(f"{name}: ema {ema[name].shape} vs {np.shape(value)}")
        ema[name] = gamma * ema[name] + (1.0 - gamma) * value
    return ema


@dataclass
class OptState:
    """AdamW moments plus the EMA shadow."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.1
    eps: float = 1e-8
    ema_decay: float = EMA_DECAY

    @classmethod
    def init(cls, model: Model) -> "OptState":
        zeros = {n: np.zeros_like(t.data) for n, t in model.params.items()}
        shadow = {n: t.data.copy() for n, t in model.params.items()}
        return cls(m=zeros, v={n: z.copy() for n, z in zeros.items()}, ema=shadow)


def adamw_apply(model: Model, grads: dict[str, np.ndarray], state: OptState,
                lr: float, encoder_scale: float = ENCODER_LR_SCALE) -> None:
    """One decoupled-weight-decay Adam update; encoder group at reduced lr.

    Decay applies to matrices only — biases, norm gains/offsets and the
    pool query are exempt, the standard transformer recipe.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 / (1.0 - state.beta1 ** t)
    bc2 = 1.0 / (1.0 - state.beta2 ** t)
    enc = set(model.encoder_param_names())
    for name in sorted(model.params):
        g = grads.get(name)
        p = model.params[name].data
        m, v = state.m[name], state.v[name]
        if g is not None:
            m *= state.beta1
            m += (1 - state.beta1) * g
            v *= state.beta2
            v += (1 - state.beta2) * (g * g)
        else:
            m *= state.beta1
            v *= state.beta2
        group_lr = lr * (encoder_scale if name in enc else 1.0)
        update = m * bc1
        update /= np.sqrt(v * bc2) + state.eps
        if p.ndim >= 2:
            update += state.weight_decay * p
        update *= group_lr
        p -= update
        shadow = state.ema[name]
        shadow *= state.ema_decay
        shadow += (1.0 - state.ema_decay) * p


# -- data ---------------------------------------------------------------------

@dataclass
class Asset3D:
    views: list[Camera]
    voxels: VoxelGrid
    label: int


@dataclass
class Dataset:
    images: list[np.ndarray] = field(default_factory=list)
    videos: list[np.ndarray] = field(default_factory=list)
    assets: list[Asset3D] = field(default_factory=list)

    def require(self, stage: int) -> None:
        if not self.images:
            raise DataError("no images available")
        if stage >= 2 and not self.videos:
            raise DataError("stage >= 2 needs videos")
        if stage >= 3 and not self.assets:
            raise DataError("stage >= 3 needs 3D assets")


def _smooth_field(rng, res: int, channels: int = 3, coarse: int = 4) -> np.ndarray:
    base = rng.uniform(0.1, 0.9, size=(coarse, coarse, channels))
    up = _resize_matrix(res, coarse)
    return np.einsum("ij,jkc,lk->ilc", up, base, up)


def synthetic_images(seed: int, count: int, resolutions) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, 101])
    return [_smooth_field(rng, int(rng.choice(resolutions))) for _ in range(count)]


def synthetic_videos(seed: int, count: int, resolutions, frames: int = 8):
    rng = np.random.default_rng([seed, 202])
    out = []
    for _ in range(count):
        res = int(rng.choice(resolutions))
        base = _smooth_field(rng, res)
        vid = np.stack([np.roll(base, shift=2 * f, axis=1) for f in range(frames)])
        out.append(vid)
    return out


def synthetic_assets(seed: int, count: int, view_size: int = 32,
                     resolution: int = 64) -> list[Asset3D]:
    """Tiny voxel clusters observed by four orbit cameras; ground-truth view
    images are renders of a reference splat built from the voxels."""
    rng = np.random.default_rng([seed, 303])
    out = []
    for idx in range(count):
        n_vox = int(rng.integers(4, 9))
        active = np.unique(resolution // 2 + rng.integers(-6, 7, size=(n_vox, 3)),
                           axis=0)
        voxels = VoxelGrid(active, resolution)
        tokens = len(active)
        gs = GaussianSet(
            token_coords=np.concatenate([np.zeros((tokens, 1), dtype=np.int64),
                                         active], axis=1),
            raw_offset=rng.normal(scale=0.3, size=(tokens, 1, 3)),
            raw_color=rng.normal(scale=1.5, size=(tokens, 1, 3)),
            raw_scale=np.full((tokens, 1, 3), 0.5),
            raw_opacity=np.full((tokens, 1), 3.0),
            raw_rotation=rng.normal(size=(tokens, 1, 4)),
            grid_resolution=resolution,
        )
        views = []
        for direction in ([1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, 0.3, 1]):
            cam = _orbit_camera(direction, view_size)
            target = RenderTarget(view_size, view_size,
                                  background=np.full(3, 0.05))
            cam.image = render(gs, cam, target)
            views.append(cam)
        out.append(Asset3D(views, voxels, idx))
    return out


def _orbit_camera(direction, size: int, distance: float = 3.0) -> Camera:
    direction = np.asarray(direction, dtype=np.float64)
    forward = -direction / np.linalg.norm(direction)
    up = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up) > 0.9:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(up, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    center = direction / np.linalg.norm(direction) * distance
    return Camera(np.zeros((size, size, 3)), rot, -rot @ center,
                  focal=size, cx=size / 2.0, cy=size / 2.0)


class SyntheticTeacher:
    """Stand-in for a frozen pretrained vision-text pair: a fixed seeded
    projection embeds images; a fixed table holds text embeddings."""

    def __init__(self, semantic_dim: int, n_texts: int = 16, seed: int = 0,
                 patch: int = 8):
        rng = np.random.default_rng([seed, 404])
        table = rng.normal(size=(n_texts, semantic_dim))
        self.texts = table / np.linalg.norm(table, axis=1, keepdims=True)
        self.patch = patch
        self.proj = rng.normal(scale=(patch * patch * 3) ** -0.5,
                               size=(semantic_dim, patch * patch * 3))

    @property
    def n_texts(self) -> int:
        return len(self.texts)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        small = np.einsum("ij,jkc,lk->ilc", _resize_matrix(self.patch, h),
                          image, _resize_matrix(self.patch, w))
        emb = self.proj @ small.reshape(-1)
        return emb / max(np.linalg.norm(emb), 1e-12)

    def embed_video(self, video: np.ndarray) -> np.ndarray:
        emb = np.mean([self.embed_image(f) for f in video], axis=0)
        return emb / max(np.linalg.norm(emb), 1e-12)

    def sims(self, emb: np.ndarray) -> np.ndarray:
        return self.texts @ emb

    def match_row(self, label: int) -> np.ndarray:
        row = -np.ones((1, self.n_texts))
        row[0, label % self.n_texts] = 1.0
        return row


# -- configuration -------------------------------------------------------------

@dataclass
class TrainConfig:
    stage: int = 1
    steps: int = 100
    seed: int = 0
    blocks: int = 4
    width: int = 64
    heads: int = 4
    semantic_dim: int = 16
    gaussians_per_token: int = 4
    patch_t: int = 4
    patch_p: int = 16
    tile_len: int = 16
    batch: int = 2
    image_dir: str | None = None
    video_dir: str | None = None
    asset_dir: str | None = None
    synthetic: int = 0
    synthetic_count: int = 8
    resolutions: tuple[int, ...] | None = None
    init_from: str | None = None
    lr_max: float = LR_MAX
    lr_min: float = LR_MIN
    weights: LossWeights = field(default_factory=LossWeights)
    log_path: str | None = None

    def __post_init__(self):
        if self.stage not in (1, 2, 3, 4):
            raise UnknownStage(f"stage {self.stage}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")

    @property
    def latent_dim(self) -> int:
        return STAGE_LATENT_DIM[self.stage]

    @property
    def stage_resolutions(self) -> tuple[int, ...]:
        return self.resolutions or STAGE_RESOLUTIONS[self.stage]

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        raw = formats.read_config(path)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict[str, str]) -> "TrainConfig":
        kw: dict = {}
        ints = {"stage", "steps", "seed", "blocks", "width", "heads",
                "semantic_dim", "gaussians_per_token", "patch_t", "patch_p",
                "tile_len", "batch", "synthetic", "synthetic_count"}
        floats = {"lr_max", "lr_min"}
        weight_overrides = {}
        for key, value in raw.items():
            try:
                if key in ints:
                    kw[key] = int(value)
                elif key in floats:
                    kw[key] = float(value)
                elif key == "resolutions":
                    kw[key] = tuple(int(v) for v in value.split(",") if v)
                elif key in ("image_dir", "video_dir", "asset_dir", "init_from",
                             "log_path"):
                    kw[key] = value
                elif key.startswith("lambda_") or key in ("tau", "sigmoid_scale",
                                                          "sigmoid_bias"):
                    weight_overrides[key] = float(value)
                else:
                    raise ConfigError(f"unknown config key {key!r}")
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        if weight_overrides:
            kw["weights"] = replace(LossWeights(), **weight_overrides)
        return cls(**kw)


def load_dataset(config: TrainConfig) -> Dataset:
    """Data from directories or seeded synthetic stand-ins; missing paths
    fail before any training step."""
    data = Dataset()
    if config.image_dir is not None:
        root = Path(config.image_dir)
        if not root.is_dir():
            raise DataError(f"image_dir {root} does not exist")
        for path in sorted(root.glob("*.ppm")):
            data.images.append(formats.read_ppm(path))
        if not data.images:
            raise DataError(f"image_dir {root} holds no .ppm files")
    if config.video_dir is not None:
        root = Path(config.video_dir)
        if not root.is_dir():
            raise DataError(f"video_dir {root} does not exist")
        for path in sorted(root.glob("*.avid")):
            data.videos.append(formats.read_video(path))
        if not data.videos:
            raise DataError(f"video_dir {root} holds no .avid files")
    if config.asset_dir is not None:
        root = Path(config.asset_dir)
        if not root.is_dir():
            raise DataError(f"asset_dir {root} does not exist")
        for idx, manifest in enumerate(sorted(root.glob("*/views.txt"))):
            asset_root = manifest.parent
            views = []
            for ppm, rot, trans, focal, cx, cy in formats.read_view_manifest(manifest):
                image = formats.read_ppm(asset_root / ppm)
                views.append(Camera(image, rot, trans, focal, cx, cy))
            voxels = VoxelGrid(formats.read_voxel_list(asset_root / "voxels.txt"))
            data.assets.append(Asset3D(views, voxels, idx))
        if not data.assets:
            raise DataError(f"asset_dir {root} holds no asset directories")
    if config.synthetic:
        count = config.synthetic_count
        res = config.stage_resolutions
        if not data.images:
            data.images = synthetic_images(config.seed, count, res)
        if not data.videos and config.stage >= 2:
            data.videos = synthetic_videos(config.seed, max(2, count // 2),
                                           [r for r in res if r >= 16])
        if not data.assets and config.stage >= 3:
            data.assets = synthetic_assets(config.seed, max(2, count // 2))
    data.require(config.stage)
    return data


# -- the training loop ----------------------------------------------------------

class Trainer:
    def __init__(self, config: TrainConfig, dataset: Dataset | None = None):
        self.config = config
        self.dataset = dataset if dataset is not None else load_dataset(config)
        self.dataset.require(config.stage)
        model_cfg = ModelConfig(blocks=config.blocks, width=config.width,
                                heads=config.heads, latent_dim=config.latent_dim,
                                semantic_dim=config.semantic_dim,
                                gaussians_per_token=config.gaussians_per_token,
                                patch_t=config.patch_t, patch_p=config.patch_p)
        if config.init_from is not None:
            path = Path(config.init_from)
            if not path.is_file():
                raise DataError(f"init_from checkpoint {path} does not exist")
            self.model = Model.load(path, patch_t=config.patch_t,
                                    patch_p=config.patch_p)
            if self.model.config.latent_dim < config.latent_dim:
                self.model = nn.widen_latent_projection(self.model,
                                                        config.latent_dim)
            if self.model.config.as_tuple() != model_cfg.as_tuple():
                raise ConfigError("checkpoint architecture does not match config")
        else:
            self.model = Model.init(model_cfg, seed=config.seed)
        self.opt = OptState.init(self.model)
        self.probe = ProbeNet(seed=config.seed)
        self.teacher = SyntheticTeacher(config.semantic_dim, seed=config.seed)
        self.cycle = task_cycle(config.stage)
        self._probe_cache: dict[int, list[np.ndarray]] = {}
        self._teacher_cache: dict[int, np.ndarray] = {}

    # -- per-task forward passes ------------------------------------------

    def _rng(self, step: int, lane: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, step, lane])

    def _clean_probe(self, idx: int, image: np.ndarray) -> list[np.ndarray]:
        if idx not in self._probe_cache:
            self._probe_cache[idx] = [f.data for f in
                                      self.probe.features_t(ad.constant(image))]
        return self._probe_cache[idx]

    def _distill_sem(self, step: int, enc_feats: ad.Tensor | None = None):
        """Image-understanding distillation, accumulated into every slot."""
        idx = step % len(self.dataset.images)
        image = self.dataset.images[idx]
        if idx not in self._teacher_cache:
            self._teacher_cache[idx] = self.teacher.sims(
                self.teacher.embed_image(image))
        teacher_sims = self._teacher_cache[idx]
        if enc_feats is None:
            grid = patchify_image(image, self.config.patch_t, self.config.patch_p)
            feats = nn.embed_t(self.model, grid.raw)
            enc_feats = nn.encode_t(self.model, feats, grid.coords)
        student = nn.pool_semantic_t(self.model, enc_feats)
        student_sims = ad.matmul(ad.constant(self.teacher.texts), student)
        return distill_kl(teacher_sims, student_sims, self.config.weights.tau)

    def _latent_for_decode(self, sample_t: ad.Tensor) -> ad.Tensor:
        if self.config.stage >= 4:
            return fsq.straight_through(sample_t)
        return sample_t

    def _image_parts(self, step: int, indices: list[int]) -> dict:
        """Reconstruction terms averaged over the image batch; the semantic
        distillation term rides on the first sample's encoding."""
        cfg = self.config
        acc: dict[str, ad.Tensor] = {}
        first_encoded = None
        for j, idx in enumerate(indices):
            image = self.dataset.images[idx]
            grid = patchify_image(image, cfg.patch_t, cfg.patch_p)
            feats = nn.embed_t(self.model, grid.raw)
            encoded = nn.encode_t(self.model, feats, grid.coords)
            if first_encoded is None:
                first_encoded = encoded
            eps = self._rng(step, 10 + j).standard_normal(
                (len(grid.coords), cfg.latent_dim))
            mu, logvar, sample = nn.project_recon_t(self.model, encoded, eps)
            decoded = nn.decode_t(self.model, self._latent_for_decode(sample),
                                  grid.coords)
            blocks = nn.pixel_head_t(self.model, decoded)
            recon = nn.unpatchify_t(blocks, grid.bounds, cfg.patch_t, cfg.patch_p, 1)
            clean_feats = self._clean_probe(idx, image)
            recon_feats = self.probe.features_t(recon)
            sample_parts = {
                "l1": l1_loss(ad.constant(image), recon),
                "gram": gram_from_features(clean_feats, recon_feats),
                "lpips": lpips_from_features(clean_feats, recon_feats),
                "clip": clip_from_features(clean_feats, recon_feats),
                "kl": kl_gauss(mu, logvar),
            }
            for key, value in sample_parts.items():
                acc[key] = value if key not in acc else acc[key] + value
        scale = 1.0 / len(indices)
        parts = {key: value * scale for key, value in acc.items()}
        parts["sem"] = self._distill_sem(step, first_encoded)
        return parts

    def _encode_video(self, video: np.ndarray):
        cfg = self.config
        tiles, _ = split_tiles(video, cfg.tile_len, cfg.patch_t)
        padded = np.concatenate(tiles, axis=0)
        grid = patchify_video(padded, cfg.patch_t, cfg.patch_p)
        mask = block_causal_mask(grid.coords[:, 0], cfg.tile_len, cfg.patch_t)
        feats = nn.embed_t(self.model, grid.raw)
        encoded = nn.encode_t(self.model, feats, grid.coords, mask=mask)
        return grid, mask, encoded

    def _video_parts(self, step: int, idx: int) -> dict:
        cfg = self.config
        video = self.dataset.videos[idx]
        grid, mask, encoded = self._encode_video(video)
        eps = self._rng(step, 2).standard_normal((len(grid.coords), cfg.latent_dim))
        mu, logvar, sample = nn.project_recon_t(self.model, encoded, eps)
        decoded = nn.decode_t(self.model, self._latent_for_decode(sample),
                              grid.coords, mask=mask)
        blocks = nn.pixel_head_t(self.model, decoded)
        recon = nn.unpatchify_t(blocks, grid.bounds, cfg.patch_t, cfg.patch_p,
                                video.shape[0])
        return {
            "l1": l1_loss(ad.constant(video), recon),
            "kl": kl_gauss(mu, logvar),
            "sem": self._distill_sem(step),
        }

    def _video_underst_parts(self, step: int, idx: int) -> dict:
        video = self.dataset.videos[idx]
        _, _, encoded = self._encode_video(video)
        student = nn.pool_semantic_t(self.model, encoded)
        sig = sigmoid_pair_loss(student.reshape(1, -1),
                                ad.constant(self.teacher.texts),
                                self.teacher.match_row(idx),
                                self.config.weights.sigmoid_scale,
                                self.config.weights.sigmoid_bias)
        return {"sem": sig + self._distill_sem(step)}

    def _encode_asset(self, asset: Asset3D):
        cfg = self.config
        view_tokens = []
        view_feats = []
        for cam in asset.views:
            grid = patchify_image(cam.image, cfg.patch_t, cfg.patch_p)
            feats = nn.embed_t(self.model, grid.raw)
            view_feats.append(feats)
            view_tokens.append(embed_grid(grid, self.model.p("embed.w").data,
                                          self.model.p("embed.b").data))
        selection = aggregate_selection(asset.views, asset.voxels, view_tokens)
        stacked = ad.concat(view_feats, axis=0)
        offsets = np.cumsum([0] + [len(ts) for ts in view_tokens])
        rows = offsets[selection[:, 0]] + selection[:, 1]
        coords = np.concatenate([np.zeros((len(rows), 1), dtype=np.int64),
                                 asset.voxels.active], axis=1)
        order = np.lexsort((coords[:, 3], coords[:, 2], coords[:, 1], coords[:, 0]))
        coords = coords[order]
        width = self.config.width
        gathered = ad.take_flat(
            stacked, (rows[order][:, None] * width
                      + np.arange(width)[None, :]).astype(np.int64))
        encoded = nn.encode_t(self.model, gathered, coords)
        return coords, encoded

    def _threed_parts(self, step: int, idx: int) -> dict:
        cfg = self.config
        asset = self.dataset.assets[idx]
        coords, encoded = self._encode_asset(asset)
        eps = self._rng(step, 3).standard_normal((len(coords), cfg.latent_dim))
        mu, logvar, sample = nn.project_recon_t(self.model, encoded, eps)
        decoded = nn.decode_t(self.model, self._latent_for_decode(sample), coords)
        offset, color, scale, opacity, rotation = nn.gaussian_head_raw_t(
            self.model, decoded)
        view_idx = int(self._rng(step, 4).integers(0, len(asset.views)))
        cam = asset.views[view_idx]
        h, w = cam.image.shape[:2]
        target = RenderTarget(w, h, background=np.full(3, 0.05))
        image = render_op(offset, color, scale, opacity, rotation.data, coords,
                          cam, target, grid_resolution=asset.voxels.resolution)
        return {
            "l1": l1_loss(ad.constant(cam.image), image),
            "kl": kl_gauss(mu, logvar),
            "sem": self._distill_sem(step),
        }

    def _threed_underst_parts(self, step: int, idx: int) -> dict:
        asset = self.dataset.assets[idx]
        _, encoded = self._encode_asset(asset)
        student = nn.pool_semantic_t(self.model, encoded)
        sig = sigmoid_pair_loss(student.reshape(1, -1),
                                ad.constant(self.teacher.texts),
                                self.teacher.match_row(asset.label),
                                self.config.weights.sigmoid_scale,
                                self.config.weights.sigmoid_bias)
        return {"sem": sig + self._distill_sem(step)}

    # -- stepping -----------------------------------------------------------

    def loss_for(self, step: int, task: Task):
        pick = self._rng(step, 0)
        if task is Task.IMAGE_RECON:
            n = len(self.dataset.images)
            size = min(self.config.batch, n)
            indices = [int(v) for v in pick.choice(n, size=size, replace=False)]
            parts = self._image_parts(step, indices)
        elif task is Task.VIDEO_RECON:
            parts = self._video_parts(step, int(pick.integers(0, len(self.dataset.videos))))
        elif task is Task.VIDEO_UNDERST:
            parts = self._video_underst_parts(step, int(pick.integers(0, len(self.dataset.videos))))
        elif task is Task.THREED_RECON:
            parts = self._threed_parts(step, int(pick.integers(0, len(self.dataset.assets))))
        else:
            parts = self._threed_underst_parts(step, int(pick.integers(0, len(self.dataset.assets))))
        return total_loss(task, parts, self.config.weights)

    def train_step(self, step: int, task: Task) -> LossReport:
        """Forward, backward, AdamW, EMA; aborts with state intact on a
        non-finite loss or gradient."""
        lr = lr_at(step, self.config.steps, self.config.lr_max, self.config.lr_min)
        loss, values = self.loss_for(step, task)
        if not np.isfinite(loss.data):
            raise NonFiniteLoss(f"step {step}: loss {loss.data}")
        for tensor in self.model.params.values():
            tensor.grad = None
        loss.backward()
        grads = {}
        for name, tensor in self.model.params.items():
            if tensor.grad is None:
                continue
            if not np.all(np.isfinite(tensor.grad)):
                raise NonFiniteLoss(f"step {step}: non-finite gradient in {name}")
            grads[name] = tensor.grad
        adamw_apply(self.model, grads, self.opt, lr)
        return LossReport(step=step, task=task, lr=lr, values=values)

    def eval_train_psnr(self, seed: int = 0) -> float:
        """Mean PSNR over the training images, decoding from latent means."""
        cfg = self.config
        scores = []
        for image in self.dataset.images:
            grid = patchify_image(image, cfg.patch_t, cfg.patch_p)
            ts = embed_grid(grid, self.model.p("embed.w").data,
                            self.model.p("embed.b").data)
            feats = nn.encode(self.model, ts)
            code = nn.project_recon(self.model, feats, seed)
            latent = code.mean
            if cfg.stage >= 4:
                latent = fsq.quantize_values(latent)
            decoded = nn.decode(self.model, latent, grid.coords)
            blocks = nn.pixel_head(self.model, decoded)
            from .patchify import unpatchify
            recon = unpatchify(blocks, grid.bounds, cfg.patch_t, cfg.patch_p, 1)
            scores.append(psnr(image, recon))
        return float(np.mean(scores))


@dataclass
class TrainReport:
    steps: int
    task_counts: dict[str, int]
    final_loss: float
    final_psnr: float
    log_lines: list[str] = field(default_factory=list)


def run_toy(config: TrainConfig, checkpoint_path=None,
            log_stream=None) -> TrainReport:
    """Execute one curriculum stage for the configured step budget."""
    trainer = Trainer(config)
    counts: dict[str, int] = {}
    lines: list[str] = []
    last = 0.0
    for step in range(config.steps):
        task = trainer.cycle[step % len(trainer.cycle)]
        counts[task.tag] = counts.get(task.tag, 0) + 1
        report = trainer.train_step(step, task)
        last = report.values.get("total", 0.0)
        line = report.line()
        lines.append(line)
        if log_stream is not None:
            log_stream.write(line + "\n")
    final_psnr = trainer.eval_train_psnr()
    if checkpoint_path is not None:
        trainer.model.save(checkpoint_path)
    if config.log_path is not None:
        Path(config.log_path).write_text("\n".join(lines) + "\n")
    return TrainReport(steps=config.steps, task_counts=counts,
                       final_loss=last, final_psnr=final_psnr, log_lines=lines)
