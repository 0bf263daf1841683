"""Forward Gaussian-splat renderer with gradients.

Two interchangeable backends compute the same rasterization: a compiled
Cython kernel (built via ``python setup.py build_ext --inplace``) and the
vectorized numpy reference in :mod:`._reference`.  The compiled kernel is
selected at import when present; set ``TOK4D_NO_EXT=1`` to force the
fallback.  ``benchmarks/bench_splat.py`` compares the two.

The renderer is deliberately isotropic: the screen footprint of a Gaussian
is sigma = focal * mean_scale / depth, rotation quaternions are validated
and carried but do not affect this projection.  The kernel cuts off at
3 sigma, which perturbs gradients near the cutoff radius (finite-difference
tests keep clear of it).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import sigmoid_np
from ..errors import InvariantViolation, NonFiniteGradient
from ..gaussians import GaussianSet
from ..patchify import Camera
from . import _reference

try:
    from . import _rasterize as _compiled
except ImportError:
    _compiled = None

_FORCE_PYTHON = os.environ.get("TOK4D_NO_EXT", "") not in ("", "0")


def active_backend() -> str:
    return "cython" if (_compiled is not None and not _FORCE_PYTHON) else "numpy"


def have_compiled() -> bool:
    return _compiled is not None


@dataclass
class RenderTarget:
    """Output raster: dimensions in pixels plus a background color."""

    width: int
    height: int
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvariantViolation("render target dimensions must be >= 1")
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)


def render_world(positions, colors, scale_mean, opacity, cam: Camera,
                 target: RenderTarget, backend: str | None = None) -> np.ndarray:
    """Rasterize world-space Gaussians with activated parameters."""
    positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
    colors = np.ascontiguousarray(colors, dtype=np.float64).reshape(-1, 3)
    scale_mean = np.ascontiguousarray(scale_mean, dtype=np.float64).reshape(-1)
    opacity = np.ascontiguousarray(opacity, dtype=np.float64).reshape(-1)
    args = (positions, colors, scale_mean, opacity, cam.rotation, cam.translation,
            cam.focal, cam.cx, cam.cy, target.width, target.height, target.background)
    if (backend or active_backend()) == "cython":
        return _compiled_forward(*args)
    return _reference.render_forward(*args)


def render_world_grad(positions, colors, scale_mean, opacity, cam: Camera,
                      target: RenderTarget, d_image, backend: str | None = None):
    positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
    colors = np.ascontiguousarray(colors, dtype=np.float64).reshape(-1, 3)
    scale_mean = np.ascontiguousarray(scale_mean, dtype=np.float64).reshape(-1)
    opacity = np.ascontiguousarray(opacity, dtype=np.float64).reshape(-1)
    args = (positions, colors, scale_mean, opacity, cam.rotation, cam.translation,
            cam.focal, cam.cx, cam.cy, target.width, target.height,
            target.background, np.ascontiguousarray(d_image, dtype=np.float64))
    if (backend or active_backend()) == "cython":
        return _compiled_backward(*args)
    return _reference.render_backward(*args)


def render(gs: GaussianSet, cam: Camera, target: RenderTarget,
           backend: str | None = None) -> np.ndarray:
    """Render a decoded GaussianSet; empty sets give the background."""
    if len(gs) == 0:
        return np.broadcast_to(target.background,
                               (target.height, target.width, 3)).copy()
    pos, col, s_mean, alpha = gs.flat_world()
    return render_world(pos, col, s_mean, alpha, cam, target, backend)


def render_grad(gs: GaussianSet, cam: Camera, target: RenderTarget,
                d_image: np.ndarray, backend: str | None = None) -> dict:
    """Gradients w.r.t. the pre-activation splat parameters.

    Chains the rasterizer's world-space gradients through tanh (offsets),
    sigmoid (color, opacity) and softplus (scales).  Rotation is not part
    of the isotropic projection and receives no gradient.
    """
    tokens, k = gs.token_coords.shape[0], gs.gaussians_per_token
    if len(gs) == 0:
        return {"offset": np.zeros((tokens, k, 3)), "color": np.zeros((tokens, k, 3)),
                "scale": np.zeros((tokens, k, 3)), "opacity": np.zeros((tokens, k))}
    pos, col, s_mean, alpha = gs.flat_world()
    d_pos, d_col, d_smean, d_alpha = render_world_grad(
        pos, col, s_mean, alpha, cam, target, d_image, backend)
    voxel = 2.0 / gs.grid_resolution
    th = np.tanh(gs.raw_offset)
    grads = {
        "offset": d_pos.reshape(tokens, k, 3) * voxel * (1.0 - th * th),
        "color": d_col.reshape(tokens, k, 3) * col.reshape(tokens, k, 3)
                 * (1.0 - col.reshape(tokens, k, 3)),
        "scale": (d_smean.reshape(tokens, k, 1) / 3.0) * sigmoid_np(gs.raw_scale),
        "opacity": d_alpha.reshape(tokens, k) * alpha.reshape(tokens, k)
                   * (1.0 - alpha.reshape(tokens, k)),
    }
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"renderer gradient for {name} is not finite")
    return grads


def render_op(raw_offset: ad.Tensor, raw_color: ad.Tensor, raw_scale: ad.Tensor,
              raw_opacity: ad.Tensor, raw_rotation: np.ndarray,
              token_coords: np.ndarray, cam: Camera, target: RenderTarget,
              grid_resolution: int = 64) -> ad.Tensor:
    """Tape node rendering raw head outputs to an image (training hook)."""

    def build(offset, color, scale, opacity):
        return GaussianSet(token_coords, offset, color, scale, opacity,
                           raw_rotation, grid_resolution=grid_resolution)

    gs = build(raw_offset.data, raw_color.data, raw_scale.data, raw_opacity.data)
    image = render(gs, cam, target)

    def vjp(g):
        grads = render_grad(gs, cam, target, g)
        return (grads["offset"], grads["color"], grads["scale"], grads["opacity"])

    return ad.custom(image, (raw_offset, raw_color, raw_scale, raw_opacity), vjp)


def _compiled_forward(positions, colors, scale_mean, opacity, rotation, translation,
                      focal, cx, cy, width, height, background):
    u, v, sigma, order = _screen_setup(positions, scale_mean, rotation,
                                       translation, focal, cx, cy)
    image = np.ascontiguousarray(
        np.broadcast_to(background, (height, width, 3)).astype(np.float64))
    if len(order):
        _compiled.forward(u[order], v[order], sigma, opacity[order],
                          np.ascontiguousarray(colors[order]), image)
    return np.clip(image, 0.0, 1.0)


def _compiled_backward(positions, colors, scale_mean, opacity, rotation, translation,
                       focal, cx, cy, width, height, background, d_image):
    g_total = len(positions)
    d_pos = np.zeros((g_total, 3))
    d_col = np.zeros((g_total, 3))
    d_scale = np.zeros(g_total)
    d_opac = np.zeros(g_total)
    u, v, sigma, order = _screen_setup(positions, scale_mean, rotation,
                                       translation, focal, cx, cy)
    if len(order) == 0:
        return d_pos, d_col, d_scale, d_opac
    n = len(order)
    d_u = np.zeros(n)
    d_v = np.zeros(n)
    d_sigma = np.zeros(n)
    d_opac_s = np.zeros(n)
    d_col_s = np.zeros((n, 3))
    bg = np.ascontiguousarray(np.asarray(background, dtype=np.float64).reshape(3))
    _compiled.backward(u[order], v[order], sigma, opacity[order],
                       np.ascontiguousarray(colors[order]), bg,
                       np.ascontiguousarray(d_image, dtype=np.float64),
                       d_u, d_v, d_sigma, d_opac_s, d_col_s)
    cam = positions @ rotation.T + translation
    z = cam[order, 2]
    d_xc = d_u * focal / z
    d_yc = d_v * focal / z
    d_zc = -(d_u * cam[order, 0] + d_v * cam[order, 1]
             + d_sigma * scale_mean[order]) * focal / z ** 2
    d_pos[order] = np.stack([d_xc, d_yc, d_zc], axis=1) @ rotation
    d_col[order] = d_col_s
    d_scale[order] = d_sigma * focal / z
    d_opac[order] = d_opac_s
    return d_pos, d_col, d_scale, d_opac


def _screen_setup(positions, scale_mean, rotation, translation, focal, cx, cy):
    cam, u, v, depth, valid = _reference.project(positions, rotation, translation,
                                                 focal, cx, cy)
    order = np.argsort(np.where(valid, depth, np.inf), kind="stable")
    order = order[valid[order]]
    sigma = focal * scale_mean[order] / depth[order]
    return u, v, np.ascontiguousarray(sigma), order
