"""Sparse 4D token sets.

A token set is an ordered sequence of (coordinate, feature) pairs on a
bounded (t, x, y, z) integer grid.  Each modality activates only a subspace
of the four axes: images live in the (x, y) plane at t = z = 0, videos
extend along t with z = 0, and 3D assets occupy (x, y, z) at t = 0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DuplicateCoordinate, InvariantViolation, SubspaceViolation


class Modality(enum.IntEnum):
    IMAGE = 0
    VIDEO = 1
    THREED = 2


@dataclass(frozen=True)
class Coord4:
    """Grid position (t, x, y, z); all components non-negative."""

    t: int
    x: int
    y: int
    z: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.t, self.x, self.y, self.z)


# Axes forced to zero per modality.
_ZERO_AXES = {
    Modality.IMAGE: (("t", 0), ("z", 3)),
    Modality.VIDEO: (("z", 3),),
    Modality.THREED: (("t", 0),),
}


@dataclass
class TokenSet:
    """Feature-coordinate pairs with modality and grid bounds.

    `coords` is (L, 4) int64 in (t, x, y, z) order, `features` is (L, C)
    float.  Construction validates everything except ordering; call
    :func:`canonicalize` to sort.
    """

    modality: Modality
    bounds: tuple[int, int, int, int]
    coords: np.ndarray
    features: np.ndarray
    discrete: bool = field(default=False)

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.int64)
        # Features are float32 canonically: that is the ATOK storage width,
        # which makes serialization round trips bit-exact by construction.
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.coords.ndim != 2 or self.coords.shape[1] != 4:
            raise InvariantViolation(f"coords must be (L, 4), got {self.coords.shape}")
        if self.features.ndim != 2:
            raise InvariantViolation(f"features must be (L, C), got {self.features.shape}")
        if len(self.coords) != len(self.features):
            raise InvariantViolation(
                f"{len(self.coords)} coords vs {len(self.features)} feature rows")
        if len(self.coords) == 0:
            raise InvariantViolation("empty token set")
        if len(self.bounds) != 4 or any(int(b) <= 0 for b in self.bounds):
            raise InvariantViolation(f"bounds must be 4 positive ints, got {self.bounds}")
        if self.coords.min() < 0:
            raise InvariantViolation("negative coordinate")
        limits = np.asarray(self.bounds, dtype=np.int64)
        if (self.coords >= limits).any():
            bad = int(np.argmax((self.coords >= limits).any(axis=1)))
            raise InvariantViolation(
                f"token {bad} at {tuple(self.coords[bad])} outside bounds {self.bounds}")
        if not np.isfinite(self.features).all():
            raise InvariantViolation("non-finite feature value")

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def coord(self, i: int) -> Coord4:
        t, x, y, z = (int(v) for v in self.coords[i])
        return Coord4(t, x, y, z)

    def is_sorted(self) -> bool:
        keys = self._sort_keys()
        return bool(np.all(keys[1:] > keys[:-1]))

    def _sort_keys(self) -> np.ndarray:
        # Lexicographic (t, x, y, z) packed into one integer per token.
        nt, nx, ny, nz = (int(b) for b in self.bounds)
        c = self.coords
        return ((c[:, 0] * nx + c[:, 1]) * ny + c[:, 2]) * nz + c[:, 3]


def canonicalize(ts: TokenSet) -> TokenSet:
    """Sort tokens lexicographically by (t, x, y, z); idempotent.

    Raises DuplicateCoordinate if two tokens share a position.
    """
    keys = ts._sort_keys()
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    if np.any(sorted_keys[1:] == sorted_keys[:-1]):
        where = int(np.argmax(sorted_keys[1:] == sorted_keys[:-1]))
        dup = tuple(ts.coords[order[where]])
        raise DuplicateCoordinate(f"two tokens at {dup}")
    return TokenSet(ts.modality, ts.bounds, ts.coords[order], ts.features[order],
                    discrete=ts.discrete)


def check_subspace(ts: TokenSet) -> None:
    """Verify the modality's zero-axis rules hold for every token.

    Image tokens need t = z = 0, video tokens z = 0, 3D tokens t = 0.
    Raises SubspaceViolation naming the first offending token.
    """
    for name, axis in _ZERO_AXES[Modality(ts.modality)]:
        bad = np.nonzero(ts.coords[:, axis] != 0)[0]
        if bad.size:
            i = int(bad[0])
            raise SubspaceViolation(
                f"token {i} at {tuple(ts.coords[i])}: {name} != 0 for "
                f"{Modality(ts.modality).name.lower()} modality")
