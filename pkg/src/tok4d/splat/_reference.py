"""Pure-numpy splat rasterizer: the reference the compiled kernel must match.

Gaussians project through the pinhole camera to screen position (u, v) with
an isotropic footprint sigma = focal * mean_scale / depth.  Per pixel q and
Gaussian g (front to back):

    w_gq = opacity_g * exp(-0.5 * d_gq^2 / sigma_g^2)   (0 beyond 3 sigma)
    C_q  = sum_g color_g * w_gq * prod_{j<g} (1 - w_jq) + bg * prod_j (1 - w_jq)

Pixel centers sit at (ix + 0.5, iy + 0.5).  Gaussians behind the camera are
skipped.  The backward pass differentiates the same expression w.r.t. the
screen-space quantities and chains to world positions, mean scale, opacity
and color; everything vectorizes over (gaussian, pixel).
"""

from __future__ import annotations

import numpy as np

CUTOFF_SIGMA = 3.0


def project(positions: np.ndarray, rotation: np.ndarray, translation: np.ndarray,
            focal: float, cx: float, cy: float):
    """Camera-space coordinates and screen projection of (G, 3) positions."""
    cam = positions @ rotation.T + translation
    depth = cam[:, 2]
    valid = depth > 0.0
    safe = np.where(valid, depth, 1.0)
    u = focal * cam[:, 0] / safe + cx
    v = focal * cam[:, 1] / safe + cy
    return cam, u, v, depth, valid


def _screen_geometry(positions, scale_mean, rotation, translation, focal, cx, cy):
    cam, u, v, depth, valid = project(positions, rotation, translation, focal, cx, cy)
    order = np.argsort(np.where(valid, depth, np.inf), kind="stable")
    order = order[valid[order]]
    sigma = focal * scale_mean[order] / depth[order]
    return cam, u, v, depth, order, sigma


def _weights(u, v, sigma, opacity, order, width, height):
    px = np.arange(width) + 0.5
    py = np.arange(height) + 0.5
    dx = px[None, None, :] - u[order][:, None, None]
    dy = py[None, :, None] - v[order][:, None, None]
    d2 = dx * dx + dy * dy
    sig2 = (sigma ** 2)[:, None, None]
    kernel = np.where(d2 <= (CUTOFF_SIGMA ** 2) * sig2,
                      np.exp(-0.5 * d2 / sig2), 0.0)
    w = opacity[order][:, None, None] * kernel
    return dx, dy, d2, kernel, w


def render_forward(positions, colors, scale_mean, opacity, rotation, translation,
                   focal, cx, cy, width, height, background):
    """Composite (G, ...) Gaussians into an (H, W, 3) image in [0, 1]."""
    background = np.asarray(background, dtype=np.float64)
    image = np.broadcast_to(background, (height, width, 3)).astype(np.float64).copy()
    if len(positions) == 0:
        return image
    cam, u, v, depth, order, sigma = _screen_geometry(
        positions, scale_mean, rotation, translation, focal, cx, cy)
    if len(order) == 0:
        return image
    _, _, _, _, w = _weights(u, v, sigma, opacity, order, width, height)
    trans = np.cumprod(1.0 - w, axis=0)
    t_before = np.concatenate([np.ones((1, height, width)), trans[:-1]], axis=0)
    col = colors[order][:, None, None, :]
    image = (col * (w * t_before)[..., None]).sum(axis=0) \
        + background * trans[-1][..., None]
    return np.clip(image, 0.0, 1.0)


def render_backward(positions, colors, scale_mean, opacity, rotation, translation,
                    focal, cx, cy, width, height, background, d_image):
    """Gradients of the compositing expression w.r.t. the activated inputs.

    Returns (d_positions, d_colors, d_scale_mean, d_opacity) matching the
    input shapes; skipped (behind-camera) Gaussians get zero gradient.
    """
    g_total = len(positions)
    d_pos = np.zeros((g_total, 3))
    d_col = np.zeros((g_total, 3))
    d_scale = np.zeros(g_total)
    d_opac = np.zeros(g_total)
    if g_total == 0:
        return d_pos, d_col, d_scale, d_opac

    background = np.asarray(background, dtype=np.float64)
    d_image = np.asarray(d_image, dtype=np.float64)
    cam, u, v, depth, order, sigma = _screen_geometry(
        positions, scale_mean, rotation, translation, focal, cx, cy)
    if len(order) == 0:
        return d_pos, d_col, d_scale, d_opac

    dx, dy, d2, kernel, w = _weights(u, v, sigma, opacity, order, width, height)
    trans = np.cumprod(1.0 - w, axis=0)
    t_before = np.concatenate([np.ones((1, height, width)), trans[:-1]], axis=0)
    col = colors[order][:, None, None, :]
    contrib = col * (w * t_before)[..., None]                # (G, H, W, 3)
    final = contrib.sum(axis=0) + background * trans[-1][..., None]
    # everything composited strictly behind gaussian g, background included
    after = final[None] - np.cumsum(contrib, axis=0)

    # dC/dw_g = col_g T_g - after_g / (1 - w_g), contracted with dL/dC
    denom = np.maximum(1.0 - w, 1e-12)[..., None]
    dw = (d_image[None] * (col * t_before[..., None] - after / denom)).sum(axis=3)

    d_col_sorted = (d_image[None] * (w * t_before)[..., None]).sum(axis=(1, 2))
    d_opac_sorted = (dw * kernel).sum(axis=(1, 2))
    d_kernel = dw * opacity[order][:, None, None]
    sig = sigma[:, None, None]
    d_d2 = d_kernel * kernel * (-0.5 / (sig * sig))
    d_sigma_sorted = (d_kernel * kernel * d2 / sig ** 3).sum(axis=(1, 2))
    d_u_sorted = (d_d2 * (-2.0 * dx)).sum(axis=(1, 2))
    d_v_sorted = (d_d2 * (-2.0 * dy)).sum(axis=(1, 2))

    # chain through the projection to world space
    z = depth[order]
    x_cam, y_cam = cam[order, 0], cam[order, 1]
    d_xc = d_u_sorted * focal / z
    d_yc = d_v_sorted * focal / z
    d_zc = -(d_u_sorted * x_cam + d_v_sorted * y_cam
             + d_sigma_sorted * scale_mean[order]) * focal / z ** 2
    d_cam = np.stack([d_xc, d_yc, d_zc], axis=1)
    d_pos[order] = d_cam @ rotation
    d_col[order] = d_col_sorted
    d_scale[order] = d_sigma_sorted * focal / z
    d_opac[order] = d_opac_sorted
    return d_pos, d_col, d_scale, d_opac
