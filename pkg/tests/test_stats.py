import math
import statistics
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnatt.matching import build_index, match_treated
from nnatt.profiles import assemble_covariates
from nnatt.stats import (
    Heatmap,
    att,
    balance_diagnostic,
    build_heatmap,
    heatmap_correlation,
    improvement_fraction,
    normalized_att,
    report_cell,
    std_error,
    z_score,
)
from nnatt.synth import SynthConfig, generate
from nnatt.treatment import default_specs


def test_att_examples():
    assert att([1, 0, -1]) == 0
    assert att([1, 1, 0, 0]) == 0.5
    with pytest.raises(ValueError):
        att([])


def test_att_matches_exact_rational_sum():
    diffs = np.random.default_rng(0).choice([-1, 0, 1], 10_000)
    exact = Fraction(int(diffs.sum()), len(diffs))
    assert abs(att(diffs) - float(exact)) < 1e-12


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.floats(-10, 10))
def test_att_is_linear(diffs, alpha):
    assert att([alpha * d for d in diffs]) == pytest.approx(alpha * att(diffs), abs=1e-9)


def test_std_error_examples():
    assert std_error([0.3] * 7) == 0
    assert std_error([1, 0, 1, 0]) == pytest.approx(0.28867513459481287, abs=1e-15)
    assert std_error([1, 0, 1, 0]) * 2 == pytest.approx(0.57735, abs=1e-5)  # sample sd
    with pytest.raises(ValueError):
        std_error([1])


def test_std_error_matches_two_pass_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        diffs = rng.choice([-1.0, 0.0, 1.0], rng.integers(2, 3000))
        n = len(diffs)
        oracle = statistics.stdev(diffs.tolist()) / math.sqrt(n)
        assert abs(std_error(diffs) - oracle) < 1e-10


def test_normalized_att():
    assert normalized_att(-0.01, 0.2) == pytest.approx(-0.05)
    assert normalized_att(0.0, 0.37) == 0
    with pytest.raises(ValueError):
        normalized_att(0.1, 0.0)


def test_z_score():
    z = z_score(0.04, 0.01)
    assert z == pytest.approx(4)
    assert report_cell("t", "g", [0.04 + 0.01 * s for s in (-1, 1) * 50], 0.2, 2.0).significant
    assert z_score(0.0, 0.5) == 0
    assert z_score(-0.02, 0.01) == pytest.approx(-2)
    with pytest.raises(ValueError):
        z_score(0.1, 0.0)


@settings(max_examples=60)
@given(st.lists(st.sampled_from([-1.0, 0.0, 1.0]), min_size=3, max_size=60), st.floats(0.01, 100))
def test_z_and_flag_invariant_to_positive_rescaling(diffs, scale):
    if len(set(diffs)) < 2:
        return
    a = report_cell("t", "g", diffs, 0.3, 2.0)
    b = report_cell("t", "g", [scale * d for d in diffs], 0.3, 2.0)
    assert b.z == pytest.approx(a.z, rel=1e-9)
    # Normalizing by the genre frequency rescales both estimate and SE.
    se_norm = a.std_error / 0.3
    assert (abs(a.normalized_att / se_norm) >= 2.0) == a.significant


def test_report_cell_zero_variance():
    c = report_cell("t", "g", [0.0] * 5, 0.1, 2.0)
    assert c.z == 0 and not c.significant
    c = report_cell("t", "g", [1.0] * 5, 0.1, 2.0)
    assert c.z == math.inf and c.significant


def pearson_oracle(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def test_correlation_examples():
    assert heatmap_correlation([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        heatmap_correlation([1, 1, 1], [1, 2, 3])


def test_correlation_matches_textbook_formula():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x, y = rng.normal(size=112), rng.normal(size=112)
        assert abs(heatmap_correlation(x, y) - pearson_oracle(x.tolist(), y.tolist())) < 1e-12


def test_balance_examples():
    assert improvement_fraction(0.13, 0.72) == pytest.approx(0.8194, abs=1e-4)
    assert f"{improvement_fraction(0.13, 0.72):.0%}" == "82%"
    assert improvement_fraction(0.5, 0.5) == 0


def test_balance_on_clustered_points():
    rng = np.random.default_rng(3)
    centers = rng.normal(scale=10, size=(20, 4))
    treated = centers[rng.integers(0, 20, 200)] + rng.normal(scale=0.1, size=(200, 4))
    controls = centers[rng.integers(0, 20, 2000)] + rng.normal(scale=0.1, size=(2000, 4))
    res = match_treated(build_index(controls), treated)
    for seed in range(5):
        b = balance_diagnostic(res, treated, controls, seed)
        assert b.improvement > 0
        assert b.mean_matched_distance == pytest.approx(res.distances.mean())


@pytest.fixture(scope="module")
def small_run():
    ds = generate(SynthConfig(n_users=80, n_programs=120, n_events=4000, seed=3,
                              planted_effects={("pressure", "Drama"): 0.08}))
    joined = ds.joined()
    covs = assemble_covariates(joined, "genre")
    return joined, covs, build_heatmap(joined, covs, default_specs(), profile_kind="genre")


def test_heatmap_grid_complete(small_run):
    joined, _, hm = small_run
    assert len(hm.cells) == 8 * 14 == 112
    assert [(c.treatment, c.genre) for c in hm.cells] == [
        (s.attribute, g) for s in default_specs() for g in joined.genre_vocabulary
    ]
    for c in hm.cells:
        assert c.normalized_att == pytest.approx(c.att / c.genre_frequency)
        assert c.significant == (abs(c.z) >= 2.0)


def test_heatmap_rows_sum_to_zero(small_run):
    _, _, hm = small_run
    assert np.all(np.abs(hm.att_grid().sum(axis=1)) < 1e-9)


def test_heatmap_reuses_one_matching_per_treatment(small_run):
    joined, _, hm = small_run
    assert set(hm.runs) == {s.attribute for s in default_specs()}
    for run in hm.runs.values():
        assert len(run.match) == run.assignment.n_treated == len(joined) // 5


def test_heatmap_deterministic(small_run):
    joined, covs, hm = small_run
    again = build_heatmap(joined, covs, default_specs(), profile_kind="genre")
    assert [c.row() for c in again.cells] == [c.row() for c in hm.cells]
    assert heatmap_correlation(hm, hm) == pytest.approx(1.0)


def test_heatmap_file_round_trip(small_run, tmp_path):
    _, _, hm = small_run
    hm.write(tmp_path / "h.csv")
    back = Heatmap.read(tmp_path / "h.csv")
    assert back.treatments == hm.treatments and back.genres == hm.genres
    assert np.array_equal(back.z_grid(), hm.z_grid())
    hm.write_long(tmp_path / "long.csv")
    assert len((tmp_path / "long.csv").read_text().splitlines()) == 1 + 112 * 5


def test_correlation_rejects_mismatched_grids(small_run):
    _, _, hm = small_run
    other = Heatmap(hm.cells[:14], hm.treatments[:1], hm.genres)
    with pytest.raises(ValueError):
        heatmap_correlation(hm, other)
