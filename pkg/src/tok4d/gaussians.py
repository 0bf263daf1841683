"""Per-token Gaussian splat parameters decoded for the 3D path.

Every source token (an active voxel) carries K Gaussians parameterized
pre-activation; activations are applied lazily:

* position: voxel index p plus tanh(offset), so each Gaussian stays within
  one voxel of its source (|x - p|_inf < 1);
* color and opacity: sigmoid into (0, 1);
* scale: softplus plus a 1e-4 floor, per axis;
* rotation: quaternion normalized to unit length (identity fallback for a
  vanishing raw vector; the isotropic renderer carries but ignores it).

World coordinates place the voxel grid in the [-1, 1]^3 cube.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import sigmoid_np, softplus_np
from .errors import InvariantViolation

SCALE_FLOOR = 1e-4
OFFSET_BOUND = 1.0 - 1e-9


@dataclass
class GaussianSet:
    """Raw splat parameters for L tokens x K Gaussians."""

    token_coords: np.ndarray   # (L, 4) source token coordinates
    raw_offset: np.ndarray     # (L, K, 3)
    raw_color: np.ndarray      # (L, K, 3)
    raw_scale: np.ndarray      # (L, K, 3)
    raw_opacity: np.ndarray    # (L, K)
    raw_rotation: np.ndarray   # (L, K, 4)
    grid_resolution: int = 64

    def __post_init__(self):
        self.token_coords = np.asarray(self.token_coords, dtype=np.int64)
        for name in ("raw_offset", "raw_color", "raw_scale", "raw_opacity",
                     "raw_rotation"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        tokens = self.token_coords.shape[0]
        k = self.gaussians_per_token
        want = {"raw_offset": (tokens, k, 3), "raw_color": (tokens, k, 3),
                "raw_scale": (tokens, k, 3), "raw_opacity": (tokens, k),
                "raw_rotation": (tokens, k, 4)}
        for name, shape in want.items():
            got = getattr(self, name).shape
            if got != shape:
                raise InvariantViolation(f"{name} shape {got}, want {shape}")

    @property
    def gaussians_per_token(self) -> int:
        return self.raw_opacity.shape[1] if self.raw_opacity.ndim == 2 else 0

    def __len__(self) -> int:
        return self.token_coords.shape[0] * self.gaussians_per_token

    # -- activated views ---------------------------------------------------

    @property
    def positions_voxel(self) -> np.ndarray:
        """(L, K, 3) positions in voxel units: p + tanh(offset).

        float64 tanh saturates to exactly 1.0 around |x| ~ 19, and adding
        1 - ulp to a grid coordinate rounds back to a whole voxel, so the
        offset is clipped to +-(1 - 1e-9): the |x - p| < 1 bound then holds
        strictly for arbitrarily large raw offsets (the inset is ~3e-11
        world units on a 64-grid, far below any rendering effect).
        """
        return self.token_coords[:, None, 1:4].astype(np.float64) \
            + np.clip(np.tanh(self.raw_offset), -OFFSET_BOUND, OFFSET_BOUND)

    @property
    def positions_world(self) -> np.ndarray:
        size = 2.0 / self.grid_resolution
        return (self.positions_voxel + 0.5) * size - 1.0

    @property
    def colors(self) -> np.ndarray:
        return sigmoid_np(self.raw_color)

    @property
    def scales(self) -> np.ndarray:
        return softplus_np(self.raw_scale) + SCALE_FLOOR

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid_np(self.raw_opacity)

    @property
    def rotations(self) -> np.ndarray:
        norm = np.linalg.norm(self.raw_rotation, axis=-1, keepdims=True)
        out = np.divide(self.raw_rotation, norm, where=norm > 1e-12,
                        out=np.zeros_like(self.raw_rotation))
        degenerate = (norm <= 1e-12)[..., 0]
        out[degenerate] = np.array([1.0, 0.0, 0.0, 0.0])
        return out

    def flat_world(self):
        """(positions, colors, mean scales, opacities) flattened to L*K rows."""
        g = len(self)
        return (self.positions_world.reshape(g, 3),
                self.colors.reshape(g, 3),
                self.scales.reshape(g, 3).mean(axis=1),
                self.opacities.reshape(g))
