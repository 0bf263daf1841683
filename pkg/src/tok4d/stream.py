"""Tile-by-tile video encoding with KV caching.

Long videos split into consecutive disjoint temporal tiles.  Within a tile
attention is fully bidirectional; across tiles it is causal: a tile's
tokens attend to every cached key/value of earlier tiles plus the current
tile, and the per-layer cache grows append-only.  The result is elementwise
equal (within float noise) to a single full-sequence pass under the
equivalent block-causal mask, while each tile computes keys and values only
for its own tokens.

The decoder streams through the same contract, and training uses the same
block-causal mask so streaming inference matches the trained behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as nn
from .errors import CacheOrderViolation, InvariantViolation
from .model import LatentCode, Model
from .patchify import patchify_video


@dataclass
class AttentionCache:
    """Append-only per-layer key/value store for one video.

    `t_max` is the temporal high-water mark: a new tile must start strictly
    after it.  `key_counts[i][l]` records how many key projections layer l
    computed in tile i (reused cache entries are never recomputed).
    """

    n_layers: int
    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)
    t_max: int = -1
    key_counts: list = field(default_factory=list)

    def __post_init__(self):
        self.keys = [None] * self.n_layers
        self.values = [None] * self.n_layers

    def begin_tile(self, t_min: int) -> None:
        if t_min <= self.t_max:
            raise CacheOrderViolation(
                f"tile starting at t={t_min} not after cached t_max={self.t_max}")
        self.key_counts.append([0] * self.n_layers)

    def end_tile(self, t_new_max: int) -> None:
        self.t_max = max(self.t_max, t_new_max)

    def layer_kv(self, layer: int):
        return self.keys[layer], self.values[layer]

    def append(self, layer: int, k: np.ndarray, v: np.ndarray) -> None:
        self.key_counts[-1][layer] += k.shape[1]
        if self.keys[layer] is None:
            self.keys[layer], self.values[layer] = k, v
        else:
            self.keys[layer] = np.concatenate([self.keys[layer], k], axis=1)
            self.values[layer] = np.concatenate([self.values[layer], v], axis=1)

    @property
    def cached_tokens(self) -> int:
        return 0 if self.keys[0] is None else self.keys[0].shape[1]


def split_tiles(video: np.ndarray, tile_len: int,
                patch_t: int = 4) -> tuple[list[np.ndarray], int]:
    """Consecutive disjoint tiles of `tile_len` frames; the last tile is
    zero-padded up to a multiple of patch_t.  Returns (tiles, pad_frames)."""
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4 or video.shape[0] < 1:
        raise InvariantViolation(f"video must be (T>=1, H, W, 3), got {video.shape}")
    if tile_len % patch_t != 0 or tile_len < patch_t:
        raise InvariantViolation(f"tile_len {tile_len} must be a positive multiple of {patch_t}")
    frames = video.shape[0]
    tiles = []
    pad = 0
    for start in range(0, frames, tile_len):
        chunk = video[start:start + tile_len]
        remainder = len(chunk) % patch_t
        if remainder:
            pad = patch_t - remainder
            filler = np.zeros((pad,) + chunk.shape[1:])
            chunk = np.concatenate([chunk, filler], axis=0)
        tiles.append(chunk)
    return tiles, pad


def block_causal_mask(t_coords: np.ndarray, tile_len: int, patch_t: int) -> np.ndarray:
    """Additive mask: token i attends to j iff tile(j) <= tile(i)."""
    tiles = np.asarray(t_coords) // (tile_len // patch_t)
    blocked = tiles[None, :] > tiles[:, None]
    return np.where(blocked, -np.inf, 0.0)


@dataclass
class StreamResult:
    latents: LatentCode
    coords: np.ndarray
    bounds: tuple[int, int, int, int]
    frames: int
    pad: int
    key_counts: list
    tile_tokens: list


def _embed_raw(model: Model, raw: np.ndarray) -> np.ndarray:
    return raw @ model.p("embed.w").data.T + model.p("embed.b").data


def stream_encode(model: Model, video: np.ndarray, tile_len: int = 16,
                  seed: int = 0) -> StreamResult:
    """Encode a video tile by tile, reusing cached keys/values across tiles.

    Latents come back in canonical (t, x, y) token order; the sampling seed
    for the reparameterized latents covers the whole video, so streaming
    and full-pass encodes draw identical noise.
    """
    cfg = model.config
    tiles, pad = split_tiles(video, tile_len, cfg.patch_t)
    cache = AttentionCache(cfg.blocks)
    means, logvars, coords_list, counts = [], [], [], []
    for i, tile in enumerate(tiles):
        offset = i * (tile_len // cfg.patch_t)
        grid = patchify_video(tile, cfg.patch_t, cfg.patch_p, t_offset=offset)
        cache.begin_tile(int(grid.coords[:, 0].min()))
        feats = _embed_raw(model, grid.raw)
        encoded = nn.encode_t(model, feats, grid.coords, cache=cache)
        mu, logvar, _ = nn.project_recon_t(model, encoded,
                                           np.zeros((len(grid.coords), cfg.latent_dim)))
        cache.end_tile(int(grid.coords[:, 0].max()))
        means.append(mu.data)
        logvars.append(logvar.data)
        coords_list.append(grid.coords)
        counts.append(len(grid.coords))
    mean = np.concatenate(means, axis=0)
    logvar = np.concatenate(logvars, axis=0)
    coords = np.concatenate(coords_list, axis=0)
    eps = nn.reparam_noise(mean.shape, seed)
    sample = mean + np.exp(logvar / 2.0) * eps
    n_t = sum(t.shape[0] for t in tiles) // cfg.patch_t
    h, w = video.shape[1], video.shape[2]
    bounds = (n_t, w // cfg.patch_p, h // cfg.patch_p, 1)
    return StreamResult(LatentCode(mean, logvar, sample, seed), coords, bounds,
                        frames=video.shape[0], pad=pad,
                        key_counts=cache.key_counts, tile_tokens=counts)


def encode_video_full(model: Model, video: np.ndarray, tile_len: int = 16,
                      seed: int = 0) -> StreamResult:
    """Single-pass oracle: full-sequence encode under the block-causal mask."""
    cfg = model.config
    tiles, pad = split_tiles(video, tile_len, cfg.patch_t)
    padded = np.concatenate(tiles, axis=0)
    grid = patchify_video(padded, cfg.patch_t, cfg.patch_p)
    feats = _embed_raw(model, grid.raw)
    mask = block_causal_mask(grid.coords[:, 0], tile_len, cfg.patch_t)
    encoded = nn.encode_t(model, feats, grid.coords, mask=mask)
    mu, logvar, _ = nn.project_recon_t(model, encoded,
                                       np.zeros((len(grid.coords), cfg.latent_dim)))
    order = np.lexsort((grid.coords[:, 2], grid.coords[:, 1], grid.coords[:, 0]))
    mean, logvar_v = mu.data[order], logvar.data[order]
    eps = nn.reparam_noise(mean.shape, seed)
    sample = mean + np.exp(logvar_v / 2.0) * eps
    bounds = (padded.shape[0] // cfg.patch_t, video.shape[2] // cfg.patch_p,
              video.shape[1] // cfg.patch_p, 1)
    return StreamResult(LatentCode(mean, logvar_v, sample, seed),
                        grid.coords[order], bounds, frames=video.shape[0],
                        pad=pad, key_counts=[], tile_tokens=[])


def stream_decode(model: Model, latents: np.ndarray, coords: np.ndarray,
                  bounds, frames: int, tile_len: int = 16) -> np.ndarray:
    """Mirror of stream_encode on the decoder: tile-causal latent decoding
    back to pixels, temporal padding dropped."""
    cfg = model.config
    latents = np.asarray(latents, dtype=np.float64)
    coords = np.asarray(coords)
    order = np.lexsort((coords[:, 3], coords[:, 2], coords[:, 1], coords[:, 0]))
    latents, coords = latents[order], coords[order]
    tiles_of = coords[:, 0] // (tile_len // cfg.patch_t)
    cache = AttentionCache(cfg.blocks)
    blocks = np.empty((len(coords), cfg.patch_dim))
    for tile_id in np.unique(tiles_of):
        idx = np.nonzero(tiles_of == tile_id)[0]
        cache.begin_tile(int(coords[idx, 0].min()))
        feats = nn.decode_t(model, latents[idx], coords[idx], cache=cache)
        cache.end_tile(int(coords[idx, 0].max()))
        blocks[idx] = nn.pixel_head_t(model, feats).data
    from .patchify import unpatchify
    out = unpatchify(blocks, bounds, cfg.patch_t, cfg.patch_p, frames)
    return out
