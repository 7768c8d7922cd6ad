"""Repeated randomized trials, confusion counting and ROC threshold sweeps."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .discriminate import node_statistics, standardized_moments
from .estimate import EstimatedParams, EstimationConfig, estimate_parameters, prepare_i_series
from .moments import zscore_series
from .network import gamma_from_topology
from .simulate import Dataset, TransmissionParams, draw_scenario, synthesize_dataset

log = logging.getLogger(__name__)

TAIL_GRID = np.round(np.arange(-12.0, 0.0 + 1e-9, 0.05), 10)
MID_GRID = np.round(np.arange(0.0, 4.0 + 1e-9, 0.02), 10)


@dataclass(frozen=True)
class ConfusionCounts:
    n_tp: int
    n_fn: int
    n_fp: int
    n_tn: int

    def __post_init__(self):
        if min(self.n_tp, self.n_fn, self.n_fp, self.n_tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.n_tp + self.n_fn + self.n_fp + self.n_tn

    @classmethod
    def from_flags(cls, flagged: np.ndarray, truth: np.ndarray) -> "ConfusionCounts":
        f = np.asarray(flagged, dtype=bool)
        t = np.asarray(truth, dtype=bool)
        return cls(int((f & t).sum()), int((~f & t).sum()), int((f & ~t).sum()), int((~f & ~t).sum()))

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.n_tp + other.n_tp, self.n_fn + other.n_fn, self.n_fp + other.n_fp, self.n_tn + other.n_tn
        )


def ratios(c: ConfusionCounts) -> tuple[float, float]:
    """True-positive and false-positive ratios (R_TP, R_FP)."""
    pos = c.n_tp + c.n_fn
    neg = c.n_fp + c.n_tn
    if pos == 0 or neg == 0:
        raise ZeroDivisionError(f"need both neighbours and non-neighbours, got {pos} and {neg}")
    return c.n_tp / pos, c.n_fp / neg


@dataclass
class RocCurve:
    which: str
    points: np.ndarray  # rows of (threshold, r_fp, r_tp), sorted by threshold
    best_gap: float
    best_threshold: float
    n_excluded: int = 0

    @property
    def gaps(self) -> np.ndarray:
        return self.points[:, 2] - self.points[:, 1]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "r_fp", "r_tp"])
            for th, fp, tp in self.points:
                w.writerow([f"{th:.6g}", f"{fp:.6g}", f"{tp:.6g}"])

    def to_svg(self, path: str | Path, size: int = 320) -> None:
        """ROC plot (R_TP against R_FP) with the chance diagonal."""
        pad = 40
        span = size - 2 * pad

        def xy(fp, tp):
            return pad + fp * span, size - pad - tp * span

        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in (xy(fp, tp) for _, fp, tp in self.points))
        x0, y0 = xy(0, 0)
        x1, y1 = xy(1, 1)
        svg = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
            f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
            f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="gray" stroke-dasharray="4"/>',
            f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>',
            f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">R_FP</text>',
            f'<text x="12" y="{size / 2}" font-size="12" transform="rotate(-90 12 {size / 2})">R_TP</text>',
            f'<text x="{size / 2}" y="20" text-anchor="middle" font-size="12">'
            f"{self.which}: best gap {self.best_gap:.3f} at {self.best_threshold:.3g}</text>",
            "</svg>",
        ]
        Path(path).write_text("\n".join(svg) + "\n")


@dataclass
class TrialConfig:
    """Settings of one synthetic experiment (one ROC curve)."""

    spreader: str = "index"
    n_nodes: int = 10
    mean_degree: float = 2.0
    alpha: float = 0.067
    beta: float = 0.033
    gamma: float = 0.1
    n_obs: int = 100
    delta_t: float = 1.0
    substeps: int = 10
    initial_infected: float = 200.0
    seed_node: int = 0
    series: str = "I_series"
    theta: str = "given"
    estimation: EstimationConfig = field(default_factory=EstimationConfig)

    def __post_init__(self):
        if self.series not in ("I_series", "deltaJ_series"):
            raise ValueError(f"series must be I_series or deltaJ_series, got {self.series!r}")
        if self.theta not in ("given", "unknown"):
            raise ValueError(f"theta must be 'given' or 'unknown', got {self.theta!r}")

    @property
    def params(self) -> TransmissionParams:
        return TransmissionParams(self.alpha, self.beta)


@dataclass
class TrialResult:
    seed: int
    ground_truth: np.ndarray
    ks: np.ndarray
    chauvenet: np.ndarray
    z_samples: list[np.ndarray]
    dataset: Dataset
    estimate: EstimatedParams | None = None
    n_skipped: int = 0

    @property
    def has_both_classes(self) -> bool:
        return bool(self.ground_truth.any() and (~self.ground_truth).any())


@dataclass
class TrialBatch:
    config: TrialConfig
    trials: list[TrialResult]

    @property
    def n_trials(self) -> int:
        return len(self.trials)


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def run_trial(cfg: TrialConfig, seed: int) -> TrialResult:
    """Draw a topology, synthesize a dataset and compute per-node statistics."""
    topo_seed, noise_seed, est_seed = _child_seeds(seed, 3)
    net, scenario = draw_scenario(
        cfg.spreader, cfg.n_nodes, cfg.mean_degree, topo_seed, cfg.initial_infected, cfg.seed_node
    )
    syn = synthesize_dataset(
        net, cfg.params, cfg.gamma, scenario, cfg.n_obs, cfg.delta_t, cfg.substeps, seed=noise_seed
    )
    data = syn.i_series if cfg.series == "I_series" else syn.dj_series
    est = None
    if cfg.theta == "given":
        params = cfg.params
        mobility = gamma_from_topology(net, cfg.gamma)
        analysed = prepare_i_series(data, params.alpha)
    else:
        est = estimate_parameters(data, cfg.estimation, seed=est_seed)
        params = est.params
        mobility = est.mobility()
        analysed = prepare_i_series(data, est.alpha)
    zs = zscore_series(analysed, params, mobility)
    t, l, samples = node_statistics(zs)
    return TrialResult(
        seed=seed,
        ground_truth=scenario.ground_truth(cfg.n_nodes),
        ks=t,
        chauvenet=l,
        z_samples=samples,
        dataset=analysed,
        estimate=est,
        n_skipped=zs.n_skipped,
    )


def _run_one(args):
    cfg, seed = args
    return run_trial(cfg, seed)


def run_batch(cfg: TrialConfig, n_trials: int = 100, base_seed: int = 0, workers: int = 1) -> TrialBatch:
    """Run trials with seeds base_seed, base_seed + 1, ...; results are in seed order."""
    seeds = [base_seed + k for k in range(n_trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_run_one, [(cfg, s) for s in seeds]))
    else:
        trials = [run_trial(cfg, s) for s in seeds]
    return TrialBatch(cfg, trials)


def _pooled(batch: TrialBatch, which: str) -> tuple[np.ndarray, np.ndarray, int]:
    if which not in ("mid", "tail"):
        raise ValueError(f"which must be 'mid' or 'tail', got {which!r}")
    stats, truth, excluded = [], [], 0
    for tr in batch.trials:
        if not tr.has_both_classes:
            excluded += 1
            continue
        # nodes without any z-score are never flagged
        if which == "tail":
            stats.append(np.where(np.isnan(tr.chauvenet), np.inf, tr.chauvenet))
        else:
            stats.append(np.where(np.isnan(tr.ks), -np.inf, tr.ks))
        truth.append(tr.ground_truth)
    if not stats:
        raise ZeroDivisionError("no trial has both neighbours and non-neighbours")
    return np.concatenate(stats), np.concatenate(truth).astype(bool), excluded


def sweep(stats: np.ndarray, truth: np.ndarray, which: str, grid: Sequence[float]) -> RocCurve:
    """Pooled ROC over a threshold grid for already pooled statistics."""
    th = np.asarray(grid, dtype=float)
    if th.size == 0:
        raise ValueError("threshold grid is empty")
    if np.any(np.diff(th) < 0):
        raise ValueError("threshold grid must be sorted")
    truth = np.asarray(truth, dtype=bool)
    if which == "tail":
        flags = stats[None, :] <= th[:, None]
    else:
        flags = stats[None, :] > th[:, None]
    pos, neg = truth.sum(), (~truth).sum()
    if pos == 0 or neg == 0:
        raise ZeroDivisionError(f"need both neighbours and non-neighbours, got {pos} and {neg}")
    r_tp = (flags & truth).sum(axis=1) / pos
    r_fp = (flags & ~truth).sum(axis=1) / neg
    gap = r_tp - r_fp
    best = gap.max()
    hits = np.flatnonzero(gap == best)
    # ties go to the threshold that flags fewer nodes
    k = hits[0] if which == "tail" else hits[-1]
    return RocCurve(which, np.column_stack([th, r_fp, r_tp]), float(best), float(th[k]))


def default_grid(which: str, stats: np.ndarray) -> np.ndarray:
    """The fixed grid for ``which``, extended by any finite statistic lying outside it.

    Data far from the usual range (e.g. L of a few hundred below zero for
    converted deltaJ series) would otherwise never be separated by any grid
    threshold.
    """
    base = TAIL_GRID if which == "tail" else MID_GRID
    s = np.asarray(stats, dtype=float)
    s = s[np.isfinite(s)]
    outside = s[(s < base[0]) | (s > base[-1])]
    return np.union1d(base, outside)


def roc_sweep(batch: TrialBatch, which: str, grid: Sequence[float] | None = None) -> RocCurve:
    """Micro-averaged ROC: confusion counts are summed over trials at each threshold.

    Without an explicit ``grid`` the default grid is extended to cover the
    pooled statistics (see ``default_grid``).
    """
    stats, truth, excluded = _pooled(batch, which)
    if grid is None:
        grid = default_grid(which, stats)
    curve = sweep(stats, truth, which, grid)
    curve.n_excluded = excluded
    return curve


def optimal_threshold(batch: TrialBatch, which: str, grid: Sequence[float] | None = None) -> tuple[float, float]:
    curve = roc_sweep(batch, which, grid)
    return curve.best_threshold, curve.best_gap


def confusion_at(batch: TrialBatch, which: str, threshold: float) -> ConfusionCounts:
    stats, truth, _ = _pooled(batch, which)
    flags = stats <= threshold if which == "tail" else stats > threshold
    return ConfusionCounts.from_flags(flags, truth)


@dataclass(frozen=True)
class MomentRow:
    m: float
    v: float
    s: float
    kappa: float
    n_nodes: int

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.m, self.v, self.s, self.kappa


def measure_zscore_moments(batch: TrialBatch, grouping: str = "all", min_samples: int = 4) -> MomentRow:
    """Per-node z moments (excess kurtosis) averaged over the nodes of a group and the trials."""
    if grouping not in ("all", "neighbor", "non_neighbor"):
        raise ValueError(f"unknown grouping {grouping!r}")
    if not batch.trials:
        raise ValueError("batch is empty")
    rows = []
    for tr in batch.trials:
        for i, z in enumerate(tr.z_samples):
            nb = bool(tr.ground_truth[i])
            if grouping == "neighbor" and not nb or grouping == "non_neighbor" and nb:
                continue
            if len(z) < min_samples:
                continue
            mom = standardized_moments(z)
            if not any(math.isnan(x) for x in mom):
                rows.append(mom)
    if not rows:
        return MomentRow(math.nan, math.nan, math.nan, math.nan, 0)
    avg = np.mean(np.array(rows), axis=0)
    return MomentRow(*(float(x) for x in avg), n_nodes=len(rows))


MOMENT_COLUMNS = ["parameter", "group", "m", "v", "s", "kappa", "n_nodes"]


def write_moment_table(path: str | Path, rows: Sequence[tuple[str, str, MomentRow]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MOMENT_COLUMNS)
        for parameter, group, r in rows:
            w.writerow([parameter, group] + [f"{x:.4g}" for x in r.as_tuple()] + [r.n_nodes])
