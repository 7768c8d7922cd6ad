"""Per-node discriminators over pooled conditional z-scores.

The mid-body test is a one-sample Kolmogorov-Smirnov distance to the standard
normal; the tail-end test is the average standard-normal log-likelihood of
the z-scores (a Chauvenet-style outlier score).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EmpiricalCDF:
    """Right-continuous step function: F(z) = #{samples <= z} / n."""

    points: np.ndarray
    heights: np.ndarray
    n: int

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        k = np.searchsorted(self.points, z, side="right")
        cum = np.concatenate([[0.0], np.cumsum(self.heights)])
        out = cum[k]
        return float(out) if out.ndim == 0 else out


def empirical_cdf(samples) -> EmpiricalCDF:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empirical_cdf needs at least one sample")
    pts, counts = np.unique(x, return_counts=True)
    return EmpiricalCDF(pts, counts / x.size, x.size)


def ks_statistic(z_node) -> float:
    """sqrt(n) * sup_z |F_n(z) - Phi(z)| with Phi the standard normal CDF.

    The supremum is attained just before or at a jump of the empirical CDF, so
    both one-sided limits are checked at every distinct sample value.
    """
    ecdf = empirical_cdf(z_node)
    phi = ndtr(ecdf.points)
    after = np.cumsum(ecdf.heights)
    before = after - ecdf.heights
    sup = max(np.max(np.abs(after - phi)), np.max(np.abs(phi - before)))
    return math.sqrt(ecdf.n) * float(sup)


def kolmogorov_cdf(x: float) -> float:
    """CDF of the limiting Kolmogorov distribution."""
    if x <= 0:
        return 0.0
    if x < 1.0:
        # theta-function form converges quickly for small x
        c = math.pi**2 / (8.0 * x * x)
        total = 0.0
        for k in range(1, 200):
            term = math.exp(-(2 * k - 1) ** 2 * c)
            total += term
            if term < 1e-18:
                break
        return math.sqrt(2.0 * math.pi) / x * total
    total = 0.0
    for k in range(1, 200):
        term = math.exp(-2.0 * k * k * x * x)
        total += term if k % 2 else -term
        if term < 1e-18:
            break
    return 1.0 - 2.0 * total


def kolmogorov_critical(a: float, tol: float = 1e-9) -> float:
    """K_a with K(K_a) = 1 - a, found by bisection."""
    if not 0 < a < 1:
        raise ValueError(f"significance level must lie in (0, 1), got {a}")
    target = 1.0 - a
    lo, hi = 0.0, 10.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if kolmogorov_cdf(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chauvenet_statistic(z_node) -> float:
    """Average log standard-normal density of the samples."""
    z = np.asarray(z_node, dtype=float).ravel()
    if z.size == 0:
        raise ValueError("chauvenet_statistic needs at least one sample")
    return -LOG_SQRT_2PI - 0.5 * float(np.mean(z * z))


def chauvenet_threshold(prob_cutoff: float = 0.5, count: int = 10) -> float:
    """Log-probability threshold of the classic rule (probability * count < cutoff)."""
    if prob_cutoff <= 0 or count < 1:
        raise ValueError("prob_cutoff must be positive and count >= 1")
    return math.log(prob_cutoff / count)


def standardized_moments(z) -> tuple[float, float, float, float]:
    """Mean, variance, skewness and excess kurtosis (population normalisation)."""
    x = np.asarray(z, dtype=float).ravel()
    if x.size == 0:
        return (math.nan,) * 4
    mean = float(x.mean())
    dev = x - mean
    var = float(np.mean(dev**2))
    if var <= 0:
        return mean, var, math.nan, math.nan
    skew = float(np.mean(dev**3) / var**1.5)
    kurt = float(np.mean(dev**4) / var**2 - 3.0)
    return mean, var, skew, kurt


@dataclass(frozen=True)
class Thresholds:
    t_star: float = math.inf
    l_star: float = -math.inf

    def __post_init__(self):
        if math.isnan(self.t_star) or math.isnan(self.l_star):
            raise ValueError("thresholds must not be NaN")


@dataclass(frozen=True)
class NodeVerdict:
    node: int
    label: str
    ks_stat: float
    chauvenet_stat: float
    classified_neighbor_mid: bool
    classified_neighbor_tail: bool
    z_moments: tuple[float, float, float, float]
    n_samples: int


def classify(
    ks_stats: Sequence[float],
    chauvenet_stats: Sequence[float],
    thresholds: Thresholds,
    z_samples: Sequence[np.ndarray] | None = None,
    labels: Sequence[str] | None = None,
) -> list[NodeVerdict]:
    """Flag neighbours: mid-body when T > T*, tail-end when L <= L*."""
    n = len(ks_stats)
    if len(chauvenet_stats) != n:
        raise ValueError("ks_stats and chauvenet_stats differ in length")
    labels = list(labels) if labels is not None else [f"node_{i}" for i in range(n)]
    out = []
    for i in range(n):
        z = z_samples[i] if z_samples is not None else np.array([])
        out.append(
            NodeVerdict(
                node=i,
                label=labels[i],
                ks_stat=float(ks_stats[i]),
                chauvenet_stat=float(chauvenet_stats[i]),
                classified_neighbor_mid=bool(ks_stats[i] > thresholds.t_star),
                classified_neighbor_tail=bool(chauvenet_stats[i] <= thresholds.l_star),
                z_moments=standardized_moments(z),
                n_samples=len(z),
            )
        )
    return out


def node_statistics(zs) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """T_i and L_i for every column of a z-score series (NaN when a node has no samples)."""
    samples = [zs.node(i) for i in range(zs.z.shape[1])]
    t = np.array([ks_statistic(s) if len(s) else math.nan for s in samples])
    l = np.array([chauvenet_statistic(s) if len(s) else math.nan for s in samples])
    return t, l, samples


VERDICT_COLUMNS = ["region", "L", "T", "m", "v", "s", "kappa", "n", "flag_mid", "flag_tail"]


def write_verdicts_csv(path: str | Path, verdicts: Sequence[NodeVerdict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(VERDICT_COLUMNS)
        for v in verdicts:
            w.writerow(
                [v.label, _fmt(v.chauvenet_stat), _fmt(v.ks_stat)]
                + [_fmt(x) for x in v.z_moments]
                + [v.n_samples, int(v.classified_neighbor_mid), int(v.classified_neighbor_tail)]
            )


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else f"{x:.6g}"
