import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri
from scipy.stats import kstwobign

from nodediscovery.discriminate import (
    Thresholds,
    chauvenet_statistic,
    chauvenet_threshold,
    classify,
    empirical_cdf,
    kolmogorov_cdf,
    kolmogorov_critical,
    ks_statistic,
    node_statistics,
    standardized_moments,
    write_verdicts_csv,
)
from nodediscovery.moments import ZScoreSeries

samples_st = st.lists(st.floats(-8, 8, allow_nan=False), min_size=1, max_size=60)


def test_empirical_cdf_examples():
    f = empirical_cdf([-1.0, 0.0, 1.0])
    assert f(0.5) == pytest.approx(2 / 3)
    assert f(-1.5) == 0.0
    assert f(1.0) == 1.0 and f(7.0) == 1.0
    assert f(0.0) == pytest.approx(2 / 3)  # right-continuous: the jump is included
    g = empirical_cdf([2.0, 2.0, 2.0, 5.0])
    assert len(g.points) == 2
    assert g.heights[0] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        empirical_cdf([])


def test_ks_single_sample():
    assert ks_statistic([0.0]) == pytest.approx(0.5)


@pytest.mark.parametrize("n", [1, 5, 40, 99])
def test_ks_equioscillation_minimum(n):
    z = ndtri((np.arange(n) + 0.5) / n)
    assert ks_statistic(z) == pytest.approx(math.sqrt(n) * 0.5 / n, rel=1e-9)


def brute_sup(z):
    """Dense-grid supremum plus one-sided limits at the samples."""
    z = np.sort(np.asarray(z))
    grid = np.concatenate([np.linspace(-10, 10, 20001), z, np.nextafter(z, -np.inf)])
    f = np.searchsorted(z, grid, side="right") / len(z)
    from scipy.special import ndtr

    return math.sqrt(len(z)) * np.max(np.abs(f - ndtr(grid)))


@settings(max_examples=60, deadline=None)
@given(samples_st)
def test_ks_bounds_and_brute_force(z):
    t = ks_statistic(z)
    assert 0 <= t <= math.sqrt(len(z)) + 1e-12
    assert t == pytest.approx(brute_sup(z), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(samples_st, st.randoms(use_true_random=False))
def test_ks_permutation_invariant(z, rnd):
    perm = list(z)
    rnd.shuffle(perm)
    assert ks_statistic(perm) == ks_statistic(z)


def test_kolmogorov_distribution_against_scipy():
    for x in (0.3, 0.8, 1.0, 1.358, 2.0, 3.0):
        assert kolmogorov_cdf(x) == pytest.approx(kstwobign.cdf(x), abs=1e-10)


def test_kolmogorov_critical_values():
    assert kolmogorov_critical(0.05) == pytest.approx(1.358, abs=5e-4)
    assert kolmogorov_critical(0.01) == pytest.approx(1.628, abs=5e-4)
    assert kolmogorov_critical(0.05) == pytest.approx(kstwobign.isf(0.05), abs=1e-6)
    assert kolmogorov_critical(0.999999) < 0.3
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            kolmogorov_critical(bad)


@pytest.mark.slow
def test_ks_calibration():
    rng = np.random.default_rng(2024)
    k = kolmogorov_critical(0.05)
    trials = 10_000
    rejected = sum(ks_statistic(rng.standard_normal(100)) > k for _ in range(trials))
    assert abs(rejected / trials - 0.05) <= 0.01


def test_chauvenet_examples():
    mode = -0.5 * math.log(2 * math.pi)
    assert chauvenet_statistic([0.0]) == pytest.approx(mode)
    assert chauvenet_statistic(np.zeros(37)) == pytest.approx(mode)
    base = [0.3, -0.2, 1.1]
    assert chauvenet_statistic(base + [6.0]) < chauvenet_statistic(base)
    with pytest.raises(ValueError):
        chauvenet_statistic([])


@settings(max_examples=60)
@given(samples_st, st.integers(0, 59), st.floats(0.0, 5.0))
def test_chauvenet_monotone(z, idx, bump):
    idx %= len(z)
    bigger = list(z)
    bigger[idx] = math.copysign(abs(z[idx]) + bump, z[idx] if z[idx] != 0 else 1.0)
    assert chauvenet_statistic(bigger) <= chauvenet_statistic(z) + 1e-12
    assert chauvenet_statistic(z) <= -0.5 * math.log(2 * math.pi) + 1e-15


def test_chauvenet_threshold_helper():
    assert chauvenet_threshold(0.5, 10) == pytest.approx(math.log(0.05))
    assert chauvenet_threshold() == pytest.approx(-2.9957, abs=1e-4)
    with pytest.raises(ValueError):
        chauvenet_threshold(0.0, 10)


def test_classify_infinite_threshold():
    out = classify([0.1, 5.0, 50.0], [-1, -2, -3], Thresholds())
    assert not any(v.classified_neighbor_mid or v.classified_neighbor_tail for v in out)


def test_classify_tail_boundary_inclusive():
    labels = ["HKG", "USA", "CAN", "SIN", "ROC", "MAS", "VIE", "XXA", "XXB"]
    ls = [-41.3, -16.1, -15.2, -8.5, -8.1, -4.5, -3.6, -1.2, -0.95]
    out = classify(np.zeros(len(ls)), ls, Thresholds(l_star=-3.6), labels=labels)
    flagged = [v.label for v in out if v.classified_neighbor_tail]
    assert flagged == labels[:7]


@settings(max_examples=60)
@given(
    st.lists(st.tuples(st.floats(0, 5), st.floats(-20, -0.9)), min_size=1, max_size=20),
    st.floats(0, 4),
    st.floats(0, 2),
    st.floats(-12, 0),
    st.floats(0, 3),
)
def test_classify_monotone_in_thresholds(stats, t_star, dt, l_star, dl):
    ks, ls = zip(*stats)
    loose = classify(ks, ls, Thresholds(t_star, l_star))
    strict = classify(ks, ls, Thresholds(t_star + dt, l_star - dl))
    for a, b in zip(loose, strict):
        assert a.classified_neighbor_mid >= b.classified_neighbor_mid
        assert a.classified_neighbor_tail >= b.classified_neighbor_tail


def test_classify_length_mismatch():
    with pytest.raises(ValueError):
        classify([1.0], [1.0, 2.0], Thresholds())


def test_thresholds_reject_nan():
    with pytest.raises(ValueError):
        Thresholds(t_star=math.nan)


def test_standardized_moments():
    rng = np.random.default_rng(1)
    m, v, s, k = standardized_moments(rng.standard_normal(200_000))
    assert abs(m) < 0.01 and abs(v - 1) < 0.01 and abs(s) < 0.02 and abs(k) < 0.05
    assert all(math.isnan(x) for x in standardized_moments([]))


def test_node_statistics_and_csv(tmp_path):
    z = np.array([[0.1, np.nan], [-0.4, np.nan], [2.0, np.nan]])
    zs = ZScoreSeries(z, np.isfinite(z), ["A", "B"], np.arange(3.0))
    t, l, samples = node_statistics(zs)
    assert t[0] == pytest.approx(ks_statistic(z[:, 0]))
    assert l[0] == pytest.approx(chauvenet_statistic(z[:, 0]))
    assert math.isnan(t[1]) and math.isnan(l[1]) and samples[1].size == 0
    verdicts = classify(t, l, Thresholds(0.5, -1.0), samples, ["A", "B"])
    assert not verdicts[1].classified_neighbor_mid and not verdicts[1].classified_neighbor_tail
    write_verdicts_csv(tmp_path / "v.csv", verdicts)
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "region,L,T,m,v,s,kappa,n,flag_mid,flag_tail"
    assert lines[2].startswith("B,,,")
