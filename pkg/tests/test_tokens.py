import numpy as np
import pytest

from tok4d.errors import DuplicateCoordinate, InvariantViolation, SubspaceViolation
from tok4d.tokens import Modality, TokenSet, canonicalize, check_subspace


def make_set(coords, modality=Modality.IMAGE, bounds=(1, 8, 8, 1), c=3):
    coords = np.asarray(coords)
    feats = np.arange(len(coords) * c, dtype=np.float32).reshape(len(coords), c)
    return TokenSet(modality, bounds, coords, feats)


def test_canonicalize_sorts_lexicographically():
    ts = make_set([(0, 1, 0, 0), (0, 0, 0, 0)])
    out = canonicalize(ts)
    assert out.coords.tolist() == [[0, 0, 0, 0], [0, 1, 0, 0]]
    # features travel with their coordinates
    assert np.array_equal(out.features[0], ts.features[1])


def test_canonicalize_idempotent():
    ts = canonicalize(make_set([(0, 3, 2, 0), (0, 0, 5, 0), (0, 3, 1, 0)]))
    again = canonicalize(ts)
    assert np.array_equal(again.coords, ts.coords)
    assert np.array_equal(again.features, ts.features)


def test_canonicalize_is_a_permutation():
    rng = np.random.default_rng(0)
    coords = np.stack(np.unravel_index(rng.permutation(16), (1, 4, 4, 1)), axis=1)
    ts = make_set(coords)
    out = canonicalize(ts)
    got = {tuple(c) + tuple(f) for c, f in zip(out.coords, out.features)}
    want = {tuple(c) + tuple(f) for c, f in zip(ts.coords, ts.features)}
    assert got == want


def test_duplicate_coordinate_rejected():
    ts = make_set([(0, 0, 0, 0), (0, 0, 0, 0)])
    with pytest.raises(DuplicateCoordinate):
        canonicalize(ts)


def test_subspace_image_ok():
    check_subspace(make_set([(0, 3, 5, 0)]))


def test_subspace_image_z_violation():
    ts = make_set([(0, 3, 5, 2)], bounds=(1, 8, 8, 8))
    with pytest.raises(SubspaceViolation, match="z != 0"):
        check_subspace(ts)


def test_subspace_threed_t_violation():
    ts = make_set([(1, 3, 5, 2)], modality=Modality.THREED, bounds=(8, 8, 8, 8))
    with pytest.raises(SubspaceViolation, match="t != 0"):
        check_subspace(ts)


def test_subspace_video_allows_t():
    check_subspace(make_set([(2, 3, 5, 0)], modality=Modality.VIDEO,
                            bounds=(4, 8, 8, 1)))


@pytest.mark.parametrize("modality,bounds,n_axes", [
    (Modality.IMAGE, (5, 5, 5, 5), (0, 3)),
    (Modality.VIDEO, (5, 5, 5, 5), (3,)),
    (Modality.THREED, (5, 5, 5, 5), (0,)),
])
def test_subspace_rule_tokenwise(modality, bounds, n_axes):
    rng = np.random.default_rng(1)
    for trial in range(20):
        coords = np.zeros((4, 4), dtype=np.int64)
        free = [a for a in range(4) if a not in n_axes]
        coords[:, free] = rng.integers(0, 5, size=(4, len(free)))
        coords = np.unique(coords, axis=0)
        ts = TokenSet(modality, bounds, coords,
                      rng.normal(size=(len(coords), 2)))
        check_subspace(ts)  # inactive axes zero => always passes
        bad = coords.copy()
        bad[rng.integers(0, len(bad)), n_axes[0]] = 1
        if len(np.unique(bad, axis=0)) != len(bad):
            continue  # edit collided with an existing token; irrelevant here
        bad_ts = TokenSet(modality, bounds, bad, rng.normal(size=(len(bad), 2)))
        with pytest.raises(SubspaceViolation):
            check_subspace(canonicalize(bad_ts))


def test_empty_set_rejected():
    with pytest.raises(InvariantViolation):
        TokenSet(Modality.IMAGE, (1, 2, 2, 1),
                 np.zeros((0, 4), dtype=np.int64), np.zeros((0, 3)))


def test_out_of_bounds_rejected():
    with pytest.raises(InvariantViolation):
        make_set([(0, 9, 0, 0)])


def test_nonfinite_feature_rejected():
    coords = np.array([[0, 0, 0, 0]])
    with pytest.raises(InvariantViolation):
        TokenSet(Modality.IMAGE, (1, 2, 2, 1), coords, np.array([[np.nan, 0.0, 0.0]]))
