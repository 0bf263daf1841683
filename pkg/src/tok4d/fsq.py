"""Finite scalar quantization of 48-dim latents into 8 discrete tokens.

Each latent dimension is bounded by 1.5*tanh and rounded half-away-from-
zero onto the four levels {-1.5, -0.5, 0.5, 1.5}.  Groups of 6 consecutive
dimensions pack into one id over a 4^6 = 4096-entry implicit codebook
(little-endian base-4).  Gradients pass straight through the rounding:
downstream cotangents reach the pre-quantization latents unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import IdOutOfRange, NonFiniteInput, OffGridLevel

LATENT_DIM = 48
GROUP_DIM = 6
N_GROUPS = LATENT_DIM // GROUP_DIM
N_LEVELS = 4
CODEBOOK_SIZE = N_LEVELS ** GROUP_DIM  # 4096
LEVELS = np.array([-1.5, -0.5, 0.5, 1.5])


@dataclass
class DiscreteCode:
    """Quantization result: codebook ids plus the dequantized grid values."""

    ids: np.ndarray      # (..., 8) int64 in [0, 4096)
    levels: np.ndarray   # (..., 48) float64 on the level grid


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_values(z: np.ndarray) -> np.ndarray:
    """Per-dimension level: round(1.5 tanh z + 0.5) - 0.5, half away from zero."""
    z = np.asarray(z, dtype=np.float64)
    if not np.isfinite(z).all():
        raise NonFiniteInput("quantizer input contains NaN/inf")
    return _round_half_away(1.5 * np.tanh(z) + 0.5) - 0.5


def fsq_quantize(z: np.ndarray) -> DiscreteCode:
    """Quantize (..., 48) latents to 8 ids per token."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != LATENT_DIM:
        raise OffGridLevel(f"expected {LATENT_DIM} latent dims, got {z.shape[-1]}")
    levels = quantize_values(z)
    grouped = levels.reshape(z.shape[:-1] + (N_GROUPS, GROUP_DIM))
    digits = (grouped + 1.5).astype(np.int64)
    weights = N_LEVELS ** np.arange(GROUP_DIM, dtype=np.int64)
    ids = (digits * weights).sum(axis=-1)
    return DiscreteCode(ids=ids, levels=levels)


def levels_to_id(levels: np.ndarray) -> int:
    """Pack 6 grid levels into one codebook id (little-endian base 4)."""
    levels = np.asarray(levels, dtype=np.float64)
    if levels.shape != (GROUP_DIM,):
        raise OffGridLevel(f"expected {GROUP_DIM} levels, got shape {levels.shape}")
    digits = levels + 1.5
    if not np.all(np.isin(digits, np.arange(N_LEVELS))):
        raise OffGridLevel(f"levels {levels} not on the grid {LEVELS}")
    weights = N_LEVELS ** np.arange(GROUP_DIM, dtype=np.int64)
    return int((digits.astype(np.int64) * weights).sum())


def id_to_levels(code: int) -> np.ndarray:
    """Exact inverse of levels_to_id."""
    code = int(code)
    if not 0 <= code < CODEBOOK_SIZE:
        raise IdOutOfRange(f"id {code} outside [0, {CODEBOOK_SIZE})")
    digits = (code // N_LEVELS ** np.arange(GROUP_DIM, dtype=np.int64)) % N_LEVELS
    return digits.astype(np.float64) - 1.5


def ids_to_levels(ids: np.ndarray) -> np.ndarray:
    """Vectorized inverse: (..., 8) ids back to (..., 48) grid values."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= CODEBOOK_SIZE:
        raise IdOutOfRange("id outside the codebook")
    weights = N_LEVELS ** np.arange(GROUP_DIM, dtype=np.int64)
    digits = (ids[..., None] // weights) % N_LEVELS
    return digits.reshape(ids.shape[:-1] + (LATENT_DIM,)).astype(np.float64) - 1.5


def straight_through(z: ad.Tensor) -> ad.Tensor:
    """Tape node for the quantizer: forward rounds, backward is identity."""
    out = quantize_values(z.data)
    return ad.custom(out, (z,), lambda g: (g,))


def bounded_surrogate(z: ad.Tensor) -> ad.Tensor:
    """The smooth stand-in 1.5*tanh(z) used to verify the quantizer's
    gradient path against finite differences."""
    return ad.mul(ad.tanh(z), 1.5)
