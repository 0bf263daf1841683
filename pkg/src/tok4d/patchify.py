"""Space-time patchification and the 3D multiview-to-voxel path.

Images and videos are cut into non-overlapping t_p x p x p pixel blocks,
one token per block; images are zero-padded to t_p frames first.  Blocks
flatten in (frame, row, col, channel) order, and ``unpatchify`` is the
exact inverse.  For 3D assets, every active voxel of a 64^3 grid in the
[-1, 1]^3 world cube takes the embedded patch feature of its projection in
the nearest camera view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCamera,
    DimensionNotDivisible,
    InvariantViolation,
    ShapeMismatch,
    VoxelNotVisible,
)
from .tokens import Modality, TokenSet

PATCH_T = 4
PATCH_P = 16


@dataclass
class PatchGrid:
    """Raw patch vectors plus their token coordinates.

    `raw` is (L, t_p*p*p*3) float64 with pixel values in [0, 1]; `coords`
    is (L, 4).  `frames` records the unpadded temporal length so decode can
    drop padding.
    """

    modality: Modality
    patch_t: int
    patch_p: int
    raw: np.ndarray
    coords: np.ndarray
    bounds: tuple[int, int, int, int]
    frames: int

    def __post_init__(self):
        want = self.patch_t * self.patch_p * self.patch_p * 3
        if self.raw.shape[1] != want:
            raise InvariantViolation(f"raw vectors of length {self.raw.shape[1]}, want {want}")


@dataclass
class Camera:
    """Pinhole view: world -> camera is x_c = R @ x_w + t, depth is Z_c.

    `image` is (H, W, 3) in [0, 1]; `focal` in pixels; principal point
    (cx, cy) in pixel coordinates.
    """

    image: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    focal: float
    cx: float
    cy: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.focal <= 0:
            raise InvariantViolation(f"focal must be positive, got {self.focal}")
        gram = self.rotation @ self.rotation.T
        if np.abs(gram - np.eye(3)).max() > 1e-6:
            raise InvariantViolation("rotation not orthonormal within 1e-6")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (solves R c + t = 0)."""
        return -self.rotation.T @ self.translation


@dataclass
class VoxelGrid:
    """Active voxels of a cubic grid spanning the [-1, 1]^3 world cube."""

    active: np.ndarray
    resolution: int = 64

    def __post_init__(self):
        self.active = np.asarray(self.active, dtype=np.int64)
        if self.active.ndim != 2 or self.active.shape[1] != 3 or len(self.active) == 0:
            raise InvariantViolation("active voxels must be a non-empty (N, 3) list")
        if self.active.min() < 0 or self.active.max() >= self.resolution:
            raise InvariantViolation("voxel index outside the grid")
        if len(np.unique(self.active, axis=0)) != len(self.active):
            raise InvariantViolation("duplicate active voxel")

    @property
    def voxel_size(self) -> float:
        return 2.0 / self.resolution

    def centers(self) -> np.ndarray:
        """World-space centers of the active voxels."""
        return (self.active + 0.5) * self.voxel_size - 1.0


def _check_divisible(name: str, value: int, divisor: int) -> None:
    if value % divisor != 0:
        raise DimensionNotDivisible(f"{name}={value} not divisible by {divisor}")


def patchify_video(video: np.ndarray, patch_t: int = PATCH_T, patch_p: int = PATCH_P,
                   t_offset: int = 0) -> PatchGrid:
    """Partition a (T, H, W, 3) video into space-time blocks.

    `t_offset` shifts the temporal token coordinates (used by streaming
    tiles so cached positions stay global).
    """
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4 or video.shape[3] != 3:
        raise ShapeMismatch(f"video must be (T, H, W, 3), got {video.shape}")
    T, H, W, _ = video.shape
    _check_divisible("T", T, patch_t)
    _check_divisible("H", H, patch_p)
    _check_divisible("W", W, patch_p)
    nt, ny, nx = T // patch_t, H // patch_p, W // patch_p
    blocks = video.reshape(nt, patch_t, ny, patch_p, nx, patch_p, 3)
    # token order (t, x, y) matches the canonical lexicographic sort
    blocks = blocks.transpose(0, 4, 2, 1, 3, 5, 6)
    raw = blocks.reshape(nt * nx * ny, patch_t * patch_p * patch_p * 3)
    t_idx, x_idx, y_idx = np.meshgrid(np.arange(nt), np.arange(nx), np.arange(ny),
                                      indexing="ij")
    coords = np.stack([t_idx.reshape(-1) + t_offset, x_idx.reshape(-1),
                       y_idx.reshape(-1), np.zeros(nt * nx * ny, dtype=np.int64)],
                      axis=1)
    bounds = (nt + t_offset, nx, ny, 1)
    return PatchGrid(Modality.VIDEO, patch_t, patch_p, raw, coords, bounds, T)


def patchify_image(image: np.ndarray, patch_t: int = PATCH_T,
                   patch_p: int = PATCH_P) -> PatchGrid:
    """Single image as a one-frame video, zero-padded to t_p frames."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatch(f"image must be (H, W, 3), got {image.shape}")
    padded = np.zeros((patch_t,) + image.shape, dtype=np.float64)
    padded[0] = image
    pg = patchify_video(padded, patch_t, patch_p)
    return PatchGrid(Modality.IMAGE, patch_t, patch_p, pg.raw, pg.coords,
                     pg.bounds, frames=1)


def unpatchify(pixel_blocks: np.ndarray, bounds, patch_t: int, patch_p: int,
               frames: int) -> np.ndarray:
    """Exact inverse of patchify: (L, t_p*p*p*3) blocks back to pixels.

    Blocks must arrive in canonical (t, x, y) token order.  Returns the
    first `frames` frames, discarding temporal padding; a single frame
    comes back as (H, W, 3).
    """
    pixel_blocks = np.asarray(pixel_blocks)
    nt, nx, ny, nz = (int(b) for b in bounds)
    want = (nt * nx * ny, patch_t * patch_p * patch_p * 3)
    if nz != 1 or pixel_blocks.shape != want:
        raise ShapeMismatch(f"blocks {pixel_blocks.shape} inconsistent with {want}")
    if not 1 <= frames <= nt * patch_t:
        raise ShapeMismatch(f"frames={frames} outside 1..{nt * patch_t}")
    blocks = pixel_blocks.reshape(nt, nx, ny, patch_t, patch_p, patch_p, 3)
    video = blocks.transpose(0, 3, 2, 4, 1, 5, 6)
    video = video.reshape(nt * patch_t, ny * patch_p, nx * patch_p, 3)
    out = video[:frames]
    return out[0] if frames == 1 else out


def embed(grid: PatchGrid, weight: np.ndarray, bias: np.ndarray | None = None) -> TokenSet:
    """Linear patch embedding: one token per location, feature = W raw + b."""
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 2 or weight.shape[1] != grid.raw.shape[1]:
        raise ShapeMismatch(
            f"embedding weight {weight.shape} vs raw length {grid.raw.shape[1]}")
    feats = grid.raw @ weight.T
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (weight.shape[0],):
            raise ShapeMismatch(f"bias {bias.shape} vs output dim {weight.shape[0]}")
        feats = feats + bias
    return TokenSet(grid.modality, grid.bounds, grid.coords, feats)


def project_point(point, cam: Camera) -> tuple[float, float, float]:
    """Pinhole projection of a world point to (u, v, depth) in pixels."""
    p_cam = cam.rotation @ np.asarray(point, dtype=np.float64) + cam.translation
    if p_cam[2] <= 0:
        raise BehindCamera(f"depth {p_cam[2]:.6g} <= 0")
    u = cam.focal * p_cam[0] / p_cam[2] + cam.cx
    v = cam.focal * p_cam[1] / p_cam[2] + cam.cy
    return float(u), float(v), float(p_cam[2])


def aggregate_selection(views: list[Camera], voxels: VoxelGrid,
                        view_tokens: list[TokenSet]) -> np.ndarray:
    """Pure-geometry half of voxel aggregation.

    For each active voxel, returns (view index, token row) of the feature
    it gathers: the view whose camera center is nearest (ties to the lower
    index) among those where the voxel's projected pixel lands inside the
    image, taking the patch that contains the pixel.  Raises
    VoxelNotVisible if no view works.
    """
    if not views or len(views) != len(view_tokens):
        raise ShapeMismatch("need one embedded token set per view")
    lookup = []
    for cam, ts in zip(views, view_tokens):
        H, W = cam.image.shape[:2]
        _, nx, ny, _ = ts.bounds
        patch = W // nx
        if nx * patch != W or ny * patch != H:
            raise ShapeMismatch(f"view {W}x{H} inconsistent with token grid {nx}x{ny}")
        index = {(int(c[1]), int(c[2])): i for i, c in enumerate(ts.coords)}
        lookup.append((cam, H, W, patch, index))

    centers = voxels.centers()
    selection = np.empty((len(centers), 2), dtype=np.int64)
    for vi, center in enumerate(centers):
        order = np.argsort([np.linalg.norm(cam.center - center) for cam in views],
                           kind="stable")
        chosen = None
        for view_idx in order:
            cam, H, W, patch, index = lookup[view_idx]
            try:
                u, v, _ = project_point(center, cam)
            except BehindCamera:
                continue
            if not (0 <= u < W and 0 <= v < H):
                continue
            key = (int(u // patch), int(v // patch))
            if key not in index:
                continue
            chosen = (view_idx, index[key])
            break
        if chosen is None:
            raise VoxelNotVisible(
                f"voxel {tuple(voxels.active[vi])} projects outside every view")
        selection[vi] = chosen
    return selection


def aggregate_voxels(views: list[Camera], voxels: VoxelGrid,
                     view_tokens: list[TokenSet]) -> TokenSet:
    """Gather each active voxel's feature from its nearest visible view.

    `view_tokens[i]` holds the embedded patch tokens of `views[i]`
    (patchify_image + embed); features are copied verbatim, never blended.
    """
    selection = aggregate_selection(views, voxels, view_tokens)
    channels = view_tokens[0].channels
    feats = np.empty((len(selection), channels), dtype=np.float32)
    for vi, (view_idx, row) in enumerate(selection):
        feats[vi] = view_tokens[view_idx].features[row]
    res = voxels.resolution
    coords = np.concatenate([np.zeros((len(selection), 1), dtype=np.int64),
                             voxels.active], axis=1)
    ts3d = TokenSet(Modality.THREED, (1, res, res, res), coords, feats)
    from .tokens import canonicalize
    return canonicalize(ts3d)
