import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnatt.matching import brute_force_match, build_index, match_treated, squared_distances


def scan_oracle(controls, ids, q):
    """Pure-Python scan: min of (squared distance, id), dimensions summed in order."""
    best = None
    for row, c in enumerate(controls.tolist()):
        acc = 0.0
        for a, b in zip(c, q):
            diff = a - b
            acc += diff * diff
        key = (acc, int(ids[row]))
        if best is None or key < best[0]:
            best = (key, row)
    return best[1]


def test_single_control_always_returned():
    idx = build_index(np.array([[1.0, 2.0]]), [42])
    res = match_treated(idx, np.random.default_rng(0).normal(size=(5, 2)))
    assert res.control_ids.tolist() == [42] * 5


def test_query_on_a_control_point():
    controls = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    res = match_treated(build_index(controls, [5, 9, 2]), np.array([[1.0, 1.0]]))
    assert res.control_ids.tolist() == [2]
    assert res.distances.tolist() == [0.0]


def test_nearest_in_one_dimension():
    res = match_treated(build_index(np.array([[0.0], [1.0]]), [3, 7]), np.array([[0.9]]), [100])
    assert res.control_ids.tolist() == [7]
    assert res.distances[0] == pytest.approx(0.1)
    assert res.pairs == [(100, 7, res.distances[0])]


def test_equidistant_tie_goes_to_lowest_id():
    res = match_treated(build_index(np.array([[1.0], [0.0]]), [7, 3]), np.array([[0.5]]))
    assert res.control_ids.tolist() == [3]


def test_errors():
    with pytest.raises(ValueError):
        build_index(np.empty((0, 3)))
    idx = build_index(np.zeros((4, 3)))
    with pytest.raises(ValueError, match="dimension"):
        match_treated(idx, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        match_treated(idx, np.empty((0, 3)))


def test_random_instance_matches_scan():
    rng = np.random.default_rng(123)
    controls = rng.normal(size=(1000, 5))
    queries = rng.normal(size=(200, 5))
    ids = rng.permutation(5000)[:1000]
    res = match_treated(build_index(controls, ids), queries)
    expected = [scan_oracle(controls, ids, q) for q in queries.tolist()]
    assert res.control_rows.tolist() == expected
    assert res.control_ids.tolist() == ids[expected].tolist()


def test_500_by_2000_against_brute_force():
    rng = np.random.default_rng(7)
    controls = rng.normal(size=(2000, 8))
    treated = rng.normal(size=(500, 8))
    ids = np.arange(10_000, 12_000)
    res = match_treated(build_index(controls, ids), treated)
    assert res.control_rows.tolist() == brute_force_match(controls, treated, ids).tolist()
    assert len(res) == 500


def test_heavy_ties_on_a_lattice():
    rng = np.random.default_rng(2)
    controls = rng.integers(0, 3, size=(300, 3)).astype(float)
    queries = rng.integers(0, 3, size=(100, 3)).astype(float) + 0.5
    ids = rng.permutation(300)
    res = match_treated(build_index(controls, ids), queries)
    assert res.control_rows.tolist() == [scan_oracle(controls, ids, q) for q in queries.tolist()]


def test_kernel_matches_scalar_loop_bitwise():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(50, 13))
    q = rng.normal(size=13)
    fast = squared_distances(pts, q)
    for row, p in enumerate(pts.tolist()):
        acc = 0.0
        for a, b in zip(p, q.tolist()):
            acc += (a - b) * (a - b)
        assert fast[row] == acc


def test_matched_distance_beats_random_pairing():
    rng = np.random.default_rng(8)
    controls = rng.normal(size=(800, 6))
    treated = rng.normal(size=(200, 6))
    res = match_treated(build_index(controls), treated)
    partners = np.random.default_rng(0).integers(0, 800, 200)
    rand = np.linalg.norm(treated - controls[partners], axis=1).mean()
    assert res.distances.mean() <= rand


def test_pair_dump(tmp_path):
    res = match_treated(build_index(np.array([[0.0], [2.0]]), [1, 2]), np.array([[0.5], [1.8]]), [10, 11])
    res.write(tmp_path / "pairs.csv")
    lines = (tmp_path / "pairs.csv").read_text().splitlines()
    assert lines == ["treated_id,control_id,distance", "10,1,0.5", f"11,2,{float(res.distances[1])!r}"]


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 60),
    st.integers(1, 30),
    st.integers(1, 6),
    st.integers(0, 2**32 - 1),
    st.booleans(),
)
def test_exactness_property(n_c, n_t, dim, seed, discrete):
    rng = np.random.default_rng(seed)
    if discrete:
        controls = rng.integers(-2, 3, size=(n_c, dim)).astype(float)
        treated = rng.integers(-2, 3, size=(n_t, dim)).astype(float) / 2
    else:
        controls = rng.normal(size=(n_c, dim))
        treated = rng.normal(size=(n_t, dim))
    ids = rng.permutation(n_c * 3)[:n_c]
    res = match_treated(build_index(controls, ids), treated)
    assert len(res) == n_t
    for i, q in enumerate(treated.tolist()):
        assert res.control_rows[i] == scan_oracle(controls, ids, q)
    again = match_treated(build_index(controls, ids), treated)
    assert np.array_equal(again.control_ids, res.control_ids)
    assert np.array_equal(again.distances, res.distances)
