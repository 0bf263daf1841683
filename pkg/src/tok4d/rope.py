"""Rotary position embeddings over the (t, x, y, z) grid.

The head dimension is split into rotation pairs; pairs are allocated as
evenly as possible across the four axes, any remainder going to t, x, y, z
in that order.  Pair j within an axis rotates by angle pos_axis * theta_j
with theta_j = base ** (-2j / d_axis), so attention scores depend only on
coordinate differences along each axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, OddHeadDim

AXES = ("t", "x", "y", "z")
DEFAULT_BASE = 10000.0


@dataclass(frozen=True)
class RopeTable:
    """Frequency layout for one head dimension.

    `pair_axis[j]` is the coordinate axis (0..3) rotating pair j and
    `pair_freq[j]` its angular frequency; pairs occupy vector slots
    (2j, 2j+1).
    """

    head_dim: int
    pair_axis: np.ndarray
    pair_freq: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.head_dim // 2


def alloc_freqs(head_dim: int, base: float = DEFAULT_BASE) -> RopeTable:
    """Deterministic per-axis pair allocation for an even head_dim >= 8."""
    if head_dim % 2 != 0 or head_dim < 8:
        raise OddHeadDim(f"head_dim must be even and >= 8, got {head_dim}")
    n_pairs = head_dim // 2
    counts = [n_pairs // 4] * 4
    for axis in range(n_pairs % 4):
        counts[axis] += 1
    pair_axis = np.repeat(np.arange(4), counts)
    pair_freq = np.concatenate([
        base ** (-2.0 * np.arange(c) / (2.0 * c)) if c else np.empty(0)
        for c in counts
    ])
    return RopeTable(head_dim, pair_axis, pair_freq)


def angles(table: RopeTable, positions: np.ndarray) -> np.ndarray:
    """Rotation angle per (position, pair): positions (L, 4) -> (L, n_pairs)."""
    positions = np.asarray(positions, dtype=np.float64)
    return positions[..., table.pair_axis] * table.pair_freq


def rotate(vec: np.ndarray, pos, table: RopeTable) -> np.ndarray:
    """Rotate one head vector by its position's per-pair angles.

    Norm-preserving; a zero position is the identity.  `pos` is a Coord4 or
    any length-4 sequence.
    """
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape[-1] != table.head_dim:
        raise LengthMismatch(f"vector length {vec.shape[-1]} != head_dim {table.head_dim}")
    pos = np.asarray(pos.as_tuple() if hasattr(pos, "as_tuple") else pos,
                     dtype=np.float64)
    phi = angles(table, pos)
    cos, sin = np.cos(phi), np.sin(phi)
    even, odd = vec[..., 0::2], vec[..., 1::2]
    out = np.empty_like(vec)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out
