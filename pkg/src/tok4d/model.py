"""Sparse transformer encoder/decoder over token sets.

Pre-norm blocks (attention + GELU MLP) run over the token sequence with
rotary position information injected into queries and keys at every layer;
token order is irrelevant because positions travel with features.  The
encoder maps embedded tokens to width-d features; projections produce
KL-regularized latents (mean/logvar/sample) and a pooled, l2-normalized
semantic vector.  The decoder lifts latents back to width d and feeds the
pixel or Gaussian head.

Everything runs on the autodiff tape in double precision so the full loss
is reverse-mode differentiable and verifiable against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import formats
from .errors import InvariantViolation, ShapeMismatch
from .gaussians import GaussianSet
from .patchify import PatchGrid, embed
from .rope import RopeTable, alloc_freqs, angles
from .tokens import TokenSet

LN_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    blocks: int = 4
    width: int = 64
    heads: int = 4
    latent_dim: int = 32       # reconstruction projection width
    semantic_dim: int = 16     # pooled semantic embedding width
    gaussians_per_token: int = 4
    patch_t: int = 4
    patch_p: int = 16

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise InvariantViolation(f"width {self.width} not divisible by heads {self.heads}")
        if self.head_dim % 2 or self.head_dim < 8:
            raise InvariantViolation(f"head_dim {self.head_dim} must be even and >= 8")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def patch_dim(self) -> int:
        return self.patch_t * self.patch_p * self.patch_p * 3

    def as_tuple(self):
        return (self.blocks, self.width, self.heads, self.latent_dim,
                self.semantic_dim, self.gaussians_per_token)


@dataclass
class LatentCode:
    """Per-token reconstruction latents: mean, log-variance, and the
    reparameterized sample drawn with a recorded seed."""

    mean: np.ndarray
    logvar: np.ndarray
    sample: np.ndarray
    seed: int


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d, dp = cfg.width, cfg.patch_dim
    shapes: dict[str, tuple] = {"embed.w": (d, dp), "embed.b": (d,)}
    for side in ("enc", "dec"):
        for i in range(cfg.blocks):
            p = f"{side}.{i}."
            shapes |= {p + "ln1.g": (d,), p + "ln1.b": (d,),
                       p + "atn.q.w": (d, d), p + "atn.q.b": (d,),
                       p + "atn.k.w": (d, d), p + "atn.k.b": (d,),
                       p + "atn.v.w": (d, d), p + "atn.v.b": (d,),
                       p + "atn.o.w": (d, d), p + "atn.o.b": (d,),
                       p + "ln2.g": (d,), p + "ln2.b": (d,),
                       p + "mlp.w1": (4 * d, d), p + "mlp.b1": (4 * d,),
                       p + "mlp.w2": (d, 4 * d), p + "mlp.b2": (d,)}
        shapes |= {f"{side}.out.g": (d,), f"{side}.out.b": (d,)}
    c_r, c_s, k = cfg.latent_dim, cfg.semantic_dim, cfg.gaussians_per_token
    shapes |= {"dec.in.w": (d, c_r), "dec.in.b": (d,),
               "recon.mu.w": (c_r, d), "recon.mu.b": (c_r,),
               "recon.logvar.w": (c_r, d), "recon.logvar.b": (c_r,),
               "sem.query": (d,), "sem.w": (c_s, d), "sem.b": (c_s,),
               "pixel.w": (dp, d), "pixel.b": (dp,),
               "gauss.w": (14 * k, d), "gauss.b": (14 * k,)}
    return shapes


class Model:
    """Parameter store plus the rotary table; forward ops are free functions."""

    def __init__(self, config: ModelConfig, params: dict[str, ad.Tensor]):
        self.config = config
        self.params = params
        self.rope = alloc_freqs(config.head_dim)

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "Model":
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in _param_shapes(config).items():
            if name.endswith(".g"):
                data = np.ones(shape)
            elif name == "sem.query":
                data = rng.normal(scale=config.width ** -0.5, size=shape)
            elif name == "recon.logvar.b":
                # start with small posterior noise (sigma ~ 0.05) so early
                # reconstruction gradients are not drowned by the sampler
                data = np.full(shape, -6.0)
            elif len(shape) == 1:
                data = np.zeros(shape)  # biases and norm offsets
            else:
                fan_in = shape[1]
                data = rng.normal(scale=fan_in ** -0.5, size=shape)
            params[name] = ad.Tensor(data, requires_grad=True)
        return cls(config, params)

    def p(self, name: str) -> ad.Tensor:
        return self.params[name]

    def encoder_param_names(self) -> list[str]:
        """The parameter group trained at the reduced learning rate."""
        return [n for n in self.params if n.startswith(("embed.", "enc."))]

    def save(self, sink) -> None:
        arrays = {name: t.data.astype(np.float32) for name, t in self.params.items()}
        formats.write_checkpoint(self.config.as_tuple(), arrays, sink)

    @classmethod
    def load(cls, source, patch_t: int = 4, patch_p: int = 16) -> "Model":
        cfg_tuple, flat = formats.read_checkpoint(source)
        config = ModelConfig(blocks=cfg_tuple[0], width=cfg_tuple[1],
                             heads=cfg_tuple[2], latent_dim=cfg_tuple[3],
                             semantic_dim=cfg_tuple[4],
                             gaussians_per_token=cfg_tuple[5],
                             patch_t=patch_t, patch_p=patch_p)
        shapes = _param_shapes(config)
        if set(flat) != set(shapes):
            raise InvariantViolation("checkpoint sections do not match the config block")
        params = {}
        for name, shape in shapes.items():
            arr = flat[name]
            if arr.size != int(np.prod(shape)):
                raise InvariantViolation(f"section {name}: {arr.size} values, want {shape}")
            params[name] = ad.Tensor(arr.astype(np.float64).reshape(shape),
                                     requires_grad=True)
        return cls(config, params)


def widen_latent_projection(model: Model, new_latent_dim: int) -> Model:
    """Grow the reconstruction bottleneck (e.g. 32 -> 48) output-preserving.

    New projection rows and decoder input columns are zero-initialized, so
    the first forward after widening reproduces the narrow model's latents
    in the leading dims and decodes identically.
    """
    old = model.config.latent_dim
    if new_latent_dim < old:
        raise InvariantViolation(f"cannot narrow latents {old} -> {new_latent_dim}")
    cfg = replace(model.config, latent_dim=new_latent_dim)
    params = {}
    for name, shape in _param_shapes(cfg).items():
        src = model.params[name].data
        if name in ("recon.mu.w", "recon.logvar.w", "recon.mu.b", "recon.logvar.b",
                    "dec.in.w"):
            grown = np.zeros(shape)
            grown[tuple(slice(0, s) for s in src.shape)] = src
            params[name] = ad.Tensor(grown, requires_grad=True)
        else:
            params[name] = ad.Tensor(src.copy(), requires_grad=True)
    return Model(cfg, params)


# -- tape building blocks ----------------------------------------------------

def _layer_norm(x: ad.Tensor, gain: ad.Tensor, bias: ad.Tensor) -> ad.Tensor:
    return ad.layer_norm(x, gain, bias, eps=LN_EPS)


def _rope_apply(x: ad.Tensor, cos: np.ndarray, sin: np.ndarray) -> ad.Tensor:
    """Rotate (heads, L, head_dim) by per-token angles (L, n_pairs)."""
    even, odd = x[..., 0::2], x[..., 1::2]
    out_even = even * cos - odd * sin
    out_odd = even * sin + odd * cos
    h, l, pairs = out_even.shape
    return ad.stack([out_even, out_odd], axis=3).reshape(h, l, 2 * pairs)


def attend(q, k, v, positions, table: RopeTable, cached=None, mask=None):
    """Single-head attention contract: softmax(QK^T/sqrt(hd)) V with rotary
    positions applied to queries and keys.

    `cached`, if given, is (k_rotated, v) arrays from earlier tiles whose
    keys are attended but not recomputed.  `mask` is an additive (L_q,
    L_kv) array (0 = attend, -inf = blocked).  Accepts numpy arrays or
    tensors; returns the same kind.
    """
    want_numpy = not isinstance(q, ad.Tensor)
    q, k, v = ad.as_tensor(q), ad.as_tensor(k), ad.as_tensor(v)
    if q.shape[-1] != table.head_dim or k.shape != v.shape or len(k.shape) != 2:
        raise ShapeMismatch(f"q {q.shape}, k {k.shape}, v {v.shape}")
    if q.shape[0] != k.shape[0]:
        raise ShapeMismatch("q and k must cover the same tokens")
    phi = angles(table, np.asarray(positions).reshape(-1, 4))
    cos, sin = np.cos(phi), np.sin(phi)
    q3 = q.reshape((1,) + tuple(q.shape))
    k3 = k.reshape((1,) + tuple(k.shape))
    q_rot = _rope_apply(q3, cos, sin)
    k_rot = _rope_apply(k3, cos, sin)
    v3 = v.reshape((1,) + tuple(v.shape))
    if cached is not None:
        ck, cv = cached
        k_rot = ad.concat([ad.constant(ck.reshape(1, -1, table.head_dim)), k_rot], axis=1)
        v3 = ad.concat([ad.constant(cv.reshape(1, -1, table.head_dim)), v3], axis=1)
    scores = ad.matmul(q_rot, k_rot.transpose(0, 2, 1)) * (table.head_dim ** -0.5)
    if mask is not None:
        scores = scores + ad.constant(mask[None])
    out = ad.matmul(ad.softmax(scores, axis=-1), v3)
    out = out.reshape(tuple(q.shape))
    return out.data if want_numpy else out


def _block(model: Model, prefix: str, x: ad.Tensor, cos, sin, mask,
           cache=None, layer: int = 0) -> ad.Tensor:
    p = model.p
    cfg = model.config
    h, hd = cfg.heads, cfg.head_dim
    length = x.shape[0]

    def heads_split(t):
        return t.reshape(length, h, hd).transpose(1, 0, 2)

    normed = _layer_norm(x, p(prefix + "ln1.g"), p(prefix + "ln1.b"))
    q = heads_split(ad.matmul(normed, p(prefix + "atn.q.w").transpose()) + p(prefix + "atn.q.b"))
    k = heads_split(ad.matmul(normed, p(prefix + "atn.k.w").transpose()) + p(prefix + "atn.k.b"))
    v = heads_split(ad.matmul(normed, p(prefix + "atn.v.w").transpose()) + p(prefix + "atn.v.b"))
    q = _rope_apply(q, cos, sin)
    k = _rope_apply(k, cos, sin)
    if cache is not None:
        cached_k, cached_v = cache.layer_kv(layer)
        if cached_k is not None:
            k_all = ad.concat([ad.constant(cached_k), k], axis=1)
            v_all = ad.concat([ad.constant(cached_v), v], axis=1)
        else:
            k_all, v_all = k, v
        cache.append(layer, k.data, v.data)
    else:
        k_all, v_all = k, v
    scores = ad.matmul(q, k_all.transpose(0, 2, 1)) * (hd ** -0.5)
    if mask is not None:
        scores = scores + ad.constant(mask[None])
    ctx = ad.matmul(ad.softmax(scores, axis=-1), v_all)
    ctx = ctx.transpose(1, 0, 2).reshape(length, cfg.width)
    x = x + ad.matmul(ctx, p(prefix + "atn.o.w").transpose()) + p(prefix + "atn.o.b")

    normed2 = _layer_norm(x, p(prefix + "ln2.g"), p(prefix + "ln2.b"))
    hidden = ad.gelu(ad.matmul(normed2, p(prefix + "mlp.w1").transpose()) + p(prefix + "mlp.b1"))
    return x + ad.matmul(hidden, p(prefix + "mlp.w2").transpose()) + p(prefix + "mlp.b2")


def _stack(model: Model, side: str, x: ad.Tensor, coords: np.ndarray,
           mask=None, cache=None) -> ad.Tensor:
    phi = angles(model.rope, coords)
    cos, sin = np.cos(phi), np.sin(phi)
    for i in range(model.config.blocks):
        x = _block(model, f"{side}.{i}.", x, cos, sin, mask, cache=cache, layer=i)
    return _layer_norm(x, model.p(f"{side}.out.g"), model.p(f"{side}.out.b"))


def encode_t(model: Model, features, coords, mask=None, cache=None) -> ad.Tensor:
    x = ad.as_tensor(features)
    if x.shape[-1] != model.config.width:
        raise ShapeMismatch(f"features width {x.shape[-1]} != {model.config.width}")
    return _stack(model, "enc", x, coords, mask=mask, cache=cache)


def encode(model: Model, ts: TokenSet, mask=None, cache=None) -> np.ndarray:
    """Per-token width-d features for an embedded token set."""
    return encode_t(model, ts.features.astype(np.float64), ts.coords,
                    mask=mask, cache=cache).data


def decode_t(model: Model, latents, coords, mask=None, cache=None) -> ad.Tensor:
    z = ad.as_tensor(latents)
    if z.shape[-1] != model.config.latent_dim:
        raise ShapeMismatch(f"latent width {z.shape[-1]} != {model.config.latent_dim}")
    x = ad.matmul(z, model.p("dec.in.w").transpose()) + model.p("dec.in.b")
    return _stack(model, "dec", x, coords, mask=mask, cache=cache)


def decode(model: Model, latents: np.ndarray, coords: np.ndarray,
           mask=None, cache=None) -> np.ndarray:
    return decode_t(model, np.asarray(latents, dtype=np.float64), coords,
                    mask=mask, cache=cache).data


def embed_tokens(model: Model, grid: PatchGrid) -> TokenSet:
    return embed(grid, model.p("embed.w").data, model.p("embed.b").data)


def embed_t(model: Model, raw: np.ndarray) -> ad.Tensor:
    return ad.matmul(ad.constant(raw), model.p("embed.w").transpose()) + model.p("embed.b")


def project_recon_t(model: Model, features: ad.Tensor, eps: np.ndarray):
    mu = ad.matmul(features, model.p("recon.mu.w").transpose()) + model.p("recon.mu.b")
    logvar = ad.matmul(features, model.p("recon.logvar.w").transpose()) \
        + model.p("recon.logvar.b")
    sample = mu + ad.exp(logvar * 0.5) * ad.constant(eps)
    return mu, logvar, sample


def reparam_noise(shape, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def project_recon(model: Model, features: np.ndarray, seed: int) -> LatentCode:
    """Latent mean/logvar plus a reparameterized sample, deterministic per seed."""
    feats = ad.constant(np.asarray(features, dtype=np.float64))
    eps = reparam_noise((feats.shape[0], model.config.latent_dim), seed)
    mu, logvar, sample = project_recon_t(model, feats, eps)
    return LatentCode(mu.data, logvar.data, sample.data, seed)


def pool_semantic_t(model: Model, features: ad.Tensor) -> ad.Tensor:
    d = model.config.width
    logits = ad.matmul(features, model.p("sem.query")) * (d ** -0.5)
    weights = ad.softmax(logits, axis=0)
    pooled = ad.matmul(weights, features)
    sem = ad.matmul(model.p("sem.w"), pooled) + model.p("sem.b")
    return sem / ad.sqrt((sem * sem).sum() + 1e-24)


def pool_semantic(model: Model, features: np.ndarray) -> np.ndarray:
    return pool_semantic_t(model, ad.constant(np.asarray(features, dtype=np.float64))).data


def pixel_head_t(model: Model, features: ad.Tensor) -> ad.Tensor:
    raw = ad.matmul(features, model.p("pixel.w").transpose()) + model.p("pixel.b")
    return ad.sigmoid(raw)


def pixel_head(model: Model, features: np.ndarray) -> np.ndarray:
    """Per-token pixel blocks in (0, 1), ready for unpatchify."""
    return pixel_head_t(model, ad.constant(np.asarray(features, dtype=np.float64))).data


def gaussian_head_raw_t(model: Model, features: ad.Tensor):
    """Raw (pre-activation) splat parameters as tape tensors."""
    k = model.config.gaussians_per_token
    raw = ad.matmul(features, model.p("gauss.w").transpose()) + model.p("gauss.b")
    length = raw.shape[0]
    raw = raw.reshape(length, k, 14)
    return (raw[:, :, 0:3], raw[:, :, 3:6], raw[:, :, 6:9], raw[:, :, 9],
            raw[:, :, 10:14])


def gaussian_head(model: Model, features: np.ndarray, coords: np.ndarray,
                  grid_resolution: int = 64) -> GaussianSet:
    """Decode K Gaussians per token with the position/scale/opacity activations."""
    feats = ad.constant(np.asarray(features, dtype=np.float64))
    offset, color, scale, opacity, rotation = gaussian_head_raw_t(model, feats)
    return GaussianSet(np.asarray(coords), offset.data, color.data, scale.data,
                       opacity.data, rotation.data, grid_resolution=grid_resolution)


def unpatchify_t(blocks: ad.Tensor, bounds, patch_t: int, patch_p: int,
                 frames: int) -> ad.Tensor:
    """Tape twin of patchify.unpatchify: a pure index gather, so running the
    numpy inverse over an index ramp yields the exact permutation."""
    from .patchify import unpatchify

    ramp = np.arange(np.prod(blocks.shape), dtype=np.float64).reshape(blocks.shape)
    idx = unpatchify(ramp, bounds, patch_t, patch_p, frames).astype(np.int64)
    return ad.take_flat(blocks, idx, out_shape=idx.shape)
