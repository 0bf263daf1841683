"""Fixed perceptual probe network.

A small seeded convolutional pyramid standing in for pretrained perceptual
towers: three 3x3 conv layers (strides 4, 2, 2) with GELU, channels
(8, 16, 32).  The weights are drawn once from a seeded generator and never
trained, so probe features are a deterministic function of (seed, image).
Inputs are bilinearly resized to a fixed square (default 224) and shifted
to [-1, 1] before the first layer.

Layer shapes for a 224 input: (8, 56, 56), (16, 28, 28), (32, 14, 14).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch

PROBE_SIZE = 224


@lru_cache(maxsize=32)
def _resize_matrix(dst: int, src: int) -> np.ndarray:
    """Row-stochastic 1-D bilinear interpolation matrix (dst, src)."""
    out = np.zeros((dst, src))
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    lo = np.floor(pos).astype(int)
    frac = pos - lo
    for i in range(dst):
        j0 = min(max(lo[i], 0), src - 1)
        j1 = min(max(lo[i] + 1, 0), src - 1)
        out[i, j0] += 1.0 - frac[i]
        out[i, j1] += frac[i]
    return out


def resize_bilinear(image: ad.Tensor, height: int, width: int) -> ad.Tensor:
    """Differentiable bilinear resize of a (H, W, 3) tensor."""
    h, w = image.shape[:2]
    chw = image.transpose(2, 0, 1)
    rh = ad.constant(_resize_matrix(height, h))
    rw = ad.constant(_resize_matrix(width, w).T)
    out = ad.matmul(ad.matmul(rh, chw), rw)
    return out.transpose(1, 2, 0)


@lru_cache(maxsize=64)
def _conv_index(h: int, w: int, c_in: int, kernel: int, stride: int, pad: int):
    """Flat gather indices for im2col; out-of-range taps hit a zero slot."""
    oh = (h + 2 * pad - kernel) // stride + 1
    ow = (w + 2 * pad - kernel) // stride + 1
    oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    base_y = oy.reshape(-1, 1) * stride - pad
    base_x = ox.reshape(-1, 1) * stride - pad
    ky, kx = np.meshgrid(np.arange(kernel), np.arange(kernel), indexing="ij")
    iy = base_y + ky.reshape(1, -1)
    ix = base_x + kx.reshape(1, -1)
    valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
    plane = np.where(valid, iy * w + ix, h * w)  # h*w = zero slot in a padded plane
    idx = (np.arange(c_in)[None, None, :] * (h * w + 1) + plane[:, :, None])
    return idx.reshape(oh * ow, c_in * kernel * kernel), oh, ow


def conv2d(x: ad.Tensor, weight: np.ndarray, stride: int = 2,
           pad: int = 1) -> ad.Tensor:
    """im2col convolution of a (C_in, H, W) tensor with fixed weights."""
    c_in, h, w = x.shape
    c_out, c_in_w, kernel, _ = weight.shape
    if c_in_w != c_in:
        raise ShapeMismatch(f"conv weight expects {c_in_w} channels, got {c_in}")
    idx, oh, ow = _conv_index(h, w, c_in, kernel, stride, pad)
    planes = x.reshape(c_in, h * w)
    padded = ad.concat([planes, ad.constant(np.zeros((c_in, 1)))], axis=1)
    cols = ad.take_flat(padded, idx, out_shape=idx.shape)
    out = ad.matmul(cols, ad.constant(weight.reshape(c_out, -1).T))
    return out.transpose(1, 0).reshape(c_out, oh, ow)


class ProbeNet:
    """Seeded, never-trained feature pyramid over 3-channel images.

    `feature_scale` multiplies the emitted feature maps (not the forward
    chain).  It calibrates the magnitude of Gram matrices built from these
    random features to a range comparable to pretrained-tower features, so
    the standard loss weights transfer; the channel-normalized perceptual
    and cosine terms are scale-invariant and unaffected.
    """

    def __init__(self, seed: int = 0, channels: tuple[int, ...] = (8, 16, 32),
                 input_size: int = PROBE_SIZE, feature_scale: float = 0.5,
                 strides: tuple[int, ...] = (4, 2, 2)):
        self.seed = seed
        self.channels = tuple(channels)
        self.input_size = input_size
        self.feature_scale = feature_scale
        self.strides = tuple(strides)
        if len(self.strides) != len(self.channels):
            raise ShapeMismatch("one stride per conv layer")
        rng = np.random.default_rng(seed)
        self.weights = []
        c_prev = 3
        for c in self.channels:
            fan_in = c_prev * 9
            self.weights.append(rng.normal(scale=1.0 / np.sqrt(fan_in),
                                           size=(c, c_prev, 3, 3)))
            c_prev = c

    def features_t(self, image: ad.Tensor) -> list[ad.Tensor]:
        """Layer activations for an (H, W, 3) image tensor in [0, 1]."""
        if image.ndim != 3 or image.shape[2] != 3:
            raise ShapeMismatch(f"probe wants (H, W, 3), got {image.shape}")
        if image.shape[:2] != (self.input_size, self.input_size):
            image = resize_bilinear(image, self.input_size, self.input_size)
        x = (image * 2.0 - 1.0).transpose(2, 0, 1)
        feats = []
        for weight, stride in zip(self.weights, self.strides):
            x = ad.gelu(conv2d(x, weight, stride=stride))
            feats.append(x * self.feature_scale if self.feature_scale != 1.0 else x)
        return feats

    def features(self, image: np.ndarray) -> list[np.ndarray]:
        return [f.data for f in self.features_t(ad.constant(image))]

    def pooled(self, image: np.ndarray) -> np.ndarray:
        """Mean-pooled final layer; the semantic-flavoured probe summary."""
        return self.features(image)[-1].mean(axis=(1, 2))

    def layer_shapes(self) -> list[tuple[int, int, int]]:
        side = self.input_size
        shapes = []
        for c, stride in zip(self.channels, self.strides):
            side = (side + 2 - 3) // stride + 1
            shapes.append((c, side, side))
        return shapes
