"""Parameter and topology estimation, and the deltaJ -> I conversion.

The objective is the Gaussian transition likelihood implied by the
short-interval moments: each observation I(t_{d+1}) is scored against
N(m(t_{d+1}), v(t_{d+1})) propagated from I(t_d). Growth (alpha - beta) only
enters the mean and spread (alpha + beta) only the covariance, so the
continuous search runs over (alpha - beta, log(alpha + beta), gamma) one
coordinate at a time. The topology is searched by single-link flips.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .moments import Coefficients, coefficients, diffusion_matrix
from .network import Mobility, Network, gamma_from_topology
from .simulate import Dataset, TransmissionParams

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def convert_deltaJ_to_I(dataset: Dataset, alpha: float, delta_t: float | None = None) -> Dataset:
    """I(t_d) ~ deltaJ(t_d) / (alpha * dt), with the fluctuation term dropped."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if dataset.kind != "deltaJ_series":
        raise ValueError(f"expected a deltaJ_series dataset, got {dataset.kind}")
    dt = dataset.delta_t if delta_t is None else delta_t
    return Dataset(
        "I_series",
        dataset.values / (alpha * dt),
        dataset.delta_t,
        list(dataset.labels),
        ground_truth=dataset.ground_truth,
        times=dataset.times,
        flags=list(dataset.flags) + [f"converted from deltaJ with alpha={alpha:.6g}"],
    )


@dataclass
class EstimationConfig:
    restarts: int = 10
    max_rounds: int = 30
    max_sweeps: int = 8
    tol: float = 1e-5
    alpha_bounds: tuple[float, float] = (1e-4, 5.0)
    beta_bounds: tuple[float, float] = (1e-4, 5.0)
    gamma_bounds: tuple[float, float] = (1e-4, 0.99)
    var_floor: float = 1.0
    alpha0: float = 0.5
    fixed_point_tol: float = 1e-4
    fixed_point_max: int = 20
    fixed_point_damping: float = 0.5
    flip_refit_gamma: bool = False
    link_moves: bool = True
    flip_tol: float = 1e-3
    exhaustive: bool = False
    exhaustive_max_nodes: int = 5


@dataclass
class EstimatedParams:
    alpha: float
    beta: float
    gamma: float
    adjacency: np.ndarray
    log_likelihood: float
    converged: bool
    initial_log_likelihood: float = -math.inf
    gamma_identifiable: bool = True
    at_bounds: list[str] = field(default_factory=list)
    n_evaluations: int = 0
    best_restart: int = 0
    fixed_point_iterations: int = 0

    @property
    def r(self) -> float:
        return self.alpha / self.beta

    @property
    def params(self) -> TransmissionParams:
        return TransmissionParams(self.alpha, self.beta)

    @property
    def network(self) -> Network:
        return Network(self.adjacency)

    def mobility(self) -> Mobility:
        return _mobility(self.adjacency, self.gamma)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "r": self.r,
            "adjacency": np.asarray(self.adjacency).tolist(),
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "gamma_identifiable": self.gamma_identifiable,
            "at_bounds": list(self.at_bounds),
            "fixed_point_iterations": self.fixed_point_iterations,
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, doc: dict) -> "EstimatedParams":
        return cls(
            alpha=float(doc["alpha"]),
            beta=float(doc["beta"]),
            gamma=float(doc["gamma"]),
            adjacency=np.array(doc["adjacency"], dtype=np.int64),
            log_likelihood=float(doc["log_likelihood"]),
            converged=bool(doc["converged"]),
            gamma_identifiable=bool(doc.get("gamma_identifiable", True)),
            at_bounds=list(doc.get("at_bounds", [])),
            fixed_point_iterations=int(doc.get("fixed_point_iterations", 0)),
        )


def _mobility(adjacency: np.ndarray, gamma: float) -> np.ndarray:
    adj = np.asarray(adjacency)
    if adj.sum() == 0:
        return np.zeros(adj.shape, dtype=float)
    return gamma_from_topology(Network(adj), gamma).gamma_matrix


def transition_log_likelihood(
    values: np.ndarray,
    params: TransmissionParams,
    mobility: Mobility | np.ndarray,
    delta_t: float,
    var_floor: float = 1.0,
) -> float:
    """Sum over steps of log N(I(t_{d+1}); m, v + var_floor * 1)."""
    x = np.asarray(values, dtype=float)
    coeff = coefficients(params, mobility)
    prev, nxt = x[:-1], x[1:]
    n = x.shape[1]
    m = prev + prev @ coeff.a.T * delta_t
    v = diffusion_matrix(coeff, prev) * delta_t
    v = v + var_floor * np.eye(n)
    try:
        chol = np.linalg.cholesky(v)
    except np.linalg.LinAlgError:
        return -math.inf
    resid = (nxt - m)[:, :, None]
    sol = np.linalg.solve(chol, resid)[:, :, 0]
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum()
    return float(-0.5 * (np.sum(sol * sol) + logdet + prev.shape[0] * n * math.log(2 * math.pi)))


def _unit_mobility(adjacency: np.ndarray) -> np.ndarray:
    """Mobility law with gamma = 1 (rows of isolated nodes are zero)."""
    adj = np.asarray(adjacency, dtype=float)
    k = adj.sum(axis=1)
    w = adj * np.sqrt(np.outer(k, k))
    rows = w.sum(axis=1)
    out = np.zeros_like(w)
    nz = rows > 0
    out[nz] = w[nz] / rows[nz, None]
    return out


def _forward_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve L x = r for a stack of lower-triangular L (batched forward substitution)."""
    n = rhs.shape[1]
    x = np.empty_like(rhs)
    for i in range(n):
        x[:, i] = (rhs[:, i] - np.einsum("dk,dk->d", chol[:, i, :i], x[:, :i])) / chol[:, i, i]
    return x


class _Objective:
    """Transition log-likelihood in (growth, log spread, gamma, topology).

    For a fixed topology the mean is linear in (growth, gamma) and the
    covariance linear in (spread, gamma), so the per-topology pieces are cached.
    """

    def __init__(self, values: np.ndarray, delta_t: float, var_floor: float):
        self.values = np.asarray(values, dtype=float)
        self.delta_t = delta_t
        self.var_floor = var_floor
        self.calls = 0
        prev, nxt = self.values[:-1], self.values[1:]
        self._prev = prev
        self._resid0 = nxt - prev
        self._growth_dir = prev * delta_t
        self._spread_cov = np.einsum("di,ij->dij", prev * delta_t, np.eye(prev.shape[1]))
        self._floor = var_floor * np.eye(prev.shape[1])
        self._const = prev.shape[0] * prev.shape[1] * math.log(2 * math.pi)
        self._key = None

    def _topology(self, adjacency: np.ndarray):
        key = np.asarray(adjacency).tobytes()
        if key != self._key:
            g1 = _unit_mobility(adjacency)
            unit = coefficients(TransmissionParams(1.0, 1.0), g1)
            bare = coefficients(TransmissionParams(1.0, 1.0), np.zeros_like(g1))
            self._mob_dir = self._prev @ (unit.a - bare.a).T * self.delta_t
            self._mob_cov = diffusion_matrix(Coefficients(unit.a - bare.a, unit.b - bare.b), self._prev) * self.delta_t
            self._key = key
        return self._mob_dir, self._mob_cov

    def __call__(self, growth: float, log_spread: float, gamma: float, adjacency: np.ndarray) -> float:
        self.calls += 1
        spread = math.exp(log_spread)
        if spread <= abs(growth):
            return -math.inf
        mob_dir, mob_cov = self._topology(adjacency)
        resid = self._resid0 - growth * self._growth_dir - gamma * mob_dir
        cov = spread * self._spread_cov + gamma * mob_cov + self._floor
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            return -math.inf
        sol = _forward_solve(chol, resid)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum()
        return float(-0.5 * (np.sum(sol * sol) + logdet + self._const))


def _golden_max(f, lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Maximise a unimodal function on [lo, hi]."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    if fc >= fd:
        return c, fc
    return d, fd


@dataclass
class _Point:
    growth: float
    log_spread: float
    gamma: float
    adjacency: np.ndarray
    ll: float = -math.inf


class _Search:
    def __init__(self, obj: _Objective, cfg: EstimationConfig, n_nodes: int):
        self.obj = obj
        self.cfg = cfg
        self.n = n_nodes
        a_lo, a_hi = cfg.alpha_bounds
        b_lo, b_hi = cfg.beta_bounds
        self.a_lo, self.a_hi, self.b_lo, self.b_hi = a_lo, a_hi, b_lo, b_hi

    def evaluate(self, p: _Point) -> _Point:
        p.ll = self.obj(p.growth, p.log_spread, p.gamma, p.adjacency)
        return p

    def growth_range(self, spread: float) -> tuple[float, float]:
        # alpha = (s + g)/2 in [a_lo, a_hi], beta = (s - g)/2 in [b_lo, b_hi]
        lo = max(2 * self.a_lo - spread, spread - 2 * self.b_hi)
        hi = min(2 * self.a_hi - spread, spread - 2 * self.b_lo)
        return lo, hi

    def spread_range(self, growth: float) -> tuple[float, float]:
        lo = max(2 * self.a_lo - growth, 2 * self.b_lo + growth)
        hi = min(2 * self.a_hi - growth, 2 * self.b_hi + growth)
        return lo, hi

    def optimize_continuous(self, p: _Point) -> _Point:
        cfg = self.cfg
        has_links = p.adjacency.sum() > 0
        for _ in range(cfg.max_sweeps):
            before = p.ll
            lo, hi = self.growth_range(math.exp(p.log_spread))
            if hi > lo:
                g, ll = _golden_max(lambda g: self.obj(g, p.log_spread, p.gamma, p.adjacency), lo, hi, cfg.tol)
                if ll > p.ll:
                    p.growth, p.ll = g, ll
            lo, hi = self.spread_range(p.growth)
            if hi > lo:
                ls, ll = _golden_max(
                    lambda ls: self.obj(p.growth, ls, p.gamma, p.adjacency), math.log(lo), math.log(hi), cfg.tol
                )
                if ll > p.ll:
                    p.log_spread, p.ll = ls, ll
            if has_links:
                gl, gh = cfg.gamma_bounds
                gm, ll = _golden_max(lambda gm: self.obj(p.growth, p.log_spread, gm, p.adjacency), gl, gh, cfg.tol)
                if ll > p.ll:
                    p.gamma, p.ll = gm, ll
            if p.ll - before <= cfg.tol * max(1.0, abs(p.ll)):
                break
        return p

    def flip_pass(self, p: _Point, rng: np.random.Generator) -> int:
        pairs = list(itertools.combinations(range(self.n), 2))
        accepted = 0
        for k in rng.permutation(len(pairs)):
            i, j = pairs[k]
            adj = p.adjacency.copy()
            adj[i, j] = adj[j, i] = 1 - adj[i, j]
            gamma, ll = p.gamma, self.obj(p.growth, p.log_spread, p.gamma, adj)
            if self.cfg.flip_refit_gamma and adj.sum() > 0:
                # rescaling gamma lets a link that redistributes the flux pay off
                g_opt, ll_opt = _golden_max(
                    lambda gm: self.obj(p.growth, p.log_spread, gm, adj), *self.cfg.gamma_bounds, self.cfg.flip_tol
                )
                if ll_opt > ll:
                    gamma, ll = g_opt, ll_opt
            if ll > p.ll:
                p.adjacency, p.gamma, p.ll = adj, gamma, ll
                accepted += 1
        return accepted

    def move_pass(self, p: _Point, rng: np.random.Generator) -> int:
        """Relocate single links (remove one, add another), keeping the link count."""
        iu = np.triu_indices(self.n, 1)
        on = [k for k in range(len(iu[0])) if p.adjacency[iu[0][k], iu[1][k]]]
        off = [k for k in range(len(iu[0])) if not p.adjacency[iu[0][k], iu[1][k]]]
        accepted = 0
        for a in rng.permutation(on):
            for b in rng.permutation(off):
                adj = p.adjacency.copy()
                adj[iu[0][a], iu[1][a]] = adj[iu[1][a], iu[0][a]] = 0
                adj[iu[0][b], iu[1][b]] = adj[iu[1][b], iu[0][b]] = 1
                ll = self.obj(p.growth, p.log_spread, p.gamma, adj)
                if ll > p.ll:
                    p.adjacency, p.ll = adj, ll
                    off[off.index(b)] = a
                    accepted += 1
                    break
        return accepted

    def hill_climb(self, p: _Point, rng: np.random.Generator) -> tuple[_Point, bool]:
        self.evaluate(p)
        p = self.optimize_continuous(p)
        if self.n < 2:
            return p, True
        for _ in range(self.cfg.max_rounds):
            before = p.ll
            accepted = self.flip_pass(p, rng)
            if accepted == 0 and self.cfg.link_moves:
                accepted = self.move_pass(p, rng)
            p = self.optimize_continuous(p)
            if accepted == 0 and p.ll - before <= self.cfg.tol * max(1.0, abs(p.ll)):
                return p, True
        return p, False


def _initial_point(values: np.ndarray, delta_t: float, cfg: EstimationConfig, n: int, rng, jitter: bool) -> _Point:
    total = values.sum(axis=1)
    pos = total > 0
    growth = 0.05
    if pos.sum() >= 2:
        t = np.flatnonzero(pos) * delta_t
        growth = float(np.polyfit(t, np.log(total[pos]), 1)[0])
    spread = max(abs(growth) + 0.05, 0.1)
    gamma = 0.1
    if jitter:
        spread *= math.exp(rng.normal(0, 0.5))
        gamma = float(rng.uniform(*cfg.gamma_bounds))
    lo = max(2 * cfg.alpha_bounds[0] - spread, spread - 2 * cfg.beta_bounds[1])
    hi = min(2 * cfg.alpha_bounds[1] - spread, spread - 2 * cfg.beta_bounds[0])
    growth = min(max(growth, lo), hi)
    p_link = min(1.0, 2.0 / max(n, 1))  # spanning-tree density 2(N-1)/N over N-1 partners
    adj = np.zeros((n, n), dtype=np.int64)
    if n >= 2:
        iu = np.triu_indices(n, 1)
        adj[iu] = rng.random(len(iu[0])) < p_link
        adj = adj + adj.T
    return _Point(growth, math.log(spread), gamma, adj)


def arrival_tree(values: np.ndarray) -> np.ndarray:
    """Initial topology linking each node to its likeliest source of first infection.

    Nodes are visited in order of first nonzero count; each is linked to the
    node with the most cases among those already infected one step earlier.
    Nodes infected at the first recorded arrival time, and nodes never
    infected, get no parent.
    """
    x = np.asarray(values, dtype=float)
    n = x.shape[1]
    adj = np.zeros((n, n), dtype=np.int64)
    hit = x > 0
    first = np.where(hit.any(axis=0), hit.argmax(axis=0), -1)
    for j in np.argsort(np.where(first < 0, x.shape[0], first), kind="stable"):
        d = first[j]
        if d <= 0:
            continue
        donors = np.flatnonzero((first >= 0) & (first < d))
        if donors.size == 0:
            continue
        i = donors[np.argmax(x[d - 1, donors])]
        adj[i, j] = adj[j, i] = 1
    return adj


def _finish(p: _Point, cfg: EstimationConfig, converged: bool, init_ll: float, calls: int, restart: int) -> EstimatedParams:
    spread = math.exp(p.log_spread)
    alpha = 0.5 * (spread + p.growth)
    beta = 0.5 * (spread - p.growth)
    identifiable = bool(p.adjacency.sum() > 0)
    at_bounds = []
    for name, val, (lo, hi) in (
        ("alpha", alpha, cfg.alpha_bounds),
        ("beta", beta, cfg.beta_bounds),
        ("gamma", p.gamma, cfg.gamma_bounds),
    ):
        if name == "gamma" and not identifiable:
            continue
        if abs(val - lo) <= 10 * cfg.tol * max(1.0, lo) or abs(val - hi) <= 10 * cfg.tol * max(1.0, hi):
            at_bounds.append(name)
    return EstimatedParams(
        alpha=alpha,
        beta=beta,
        gamma=p.gamma,
        adjacency=p.adjacency,
        log_likelihood=p.ll,
        converged=converged,
        initial_log_likelihood=init_ll,
        gamma_identifiable=identifiable,
        at_bounds=at_bounds,
        n_evaluations=calls,
        best_restart=restart,
    )


def _estimate_i_series(
    values: np.ndarray,
    delta_t: float,
    cfg: EstimationConfig,
    seeds: np.random.SeedSequence,
    warm: EstimatedParams | None = None,
) -> EstimatedParams:
    n = values.shape[1]
    obj = _Objective(values, delta_t, cfg.var_floor)
    search = _Search(obj, cfg, n)

    if cfg.exhaustive:
        if n > cfg.exhaustive_max_nodes:
            raise ValueError(f"exhaustive topology search limited to {cfg.exhaustive_max_nodes} nodes")
        return _exhaustive(values, delta_t, cfg, np.random.default_rng(seeds), search)

    # every restart owns an independent stream, so results do not depend on
    # the order in which restarts are run
    n_restarts = 1 if warm is not None else max(1, cfg.restarts)
    rngs = [np.random.default_rng(child) for child in seeds.spawn(n_restarts)]
    starts = []
    for k, rng in enumerate(rngs):
        if warm is not None:
            spread = warm.alpha + warm.beta
            start = _Point(warm.alpha - warm.beta, math.log(spread), warm.gamma, np.array(warm.adjacency))
        else:
            start = _initial_point(values, delta_t, cfg, n, rng, jitter=k > 0)
            if k == 0:
                start.adjacency = arrival_tree(values)
        starts.append(start)

    best, best_k, best_conv = None, 0, False
    first = starts[0]
    init_ll = search.evaluate(_Point(first.growth, first.log_spread, first.gamma, first.adjacency.copy())).ll
    for k, (start, rng) in enumerate(zip(starts, rngs)):
        p, conv = search.hill_climb(start, rng)
        # ties keep the lowest restart index
        if best is None or p.ll > best.ll:
            best, best_k, best_conv = p, k, conv
    return _finish(best, cfg, best_conv, init_ll, obj.calls, best_k)


def _exhaustive(values, delta_t, cfg, rng, search: _Search) -> EstimatedParams:
    n = values.shape[1]
    pairs = list(itertools.combinations(range(n), 2))
    base = _initial_point(values, delta_t, cfg, n, rng, jitter=False)
    init_ll = search.evaluate(_Point(base.growth, base.log_spread, base.gamma, base.adjacency.copy())).ll
    best = None
    for bits in itertools.product((0, 1), repeat=len(pairs)):
        adj = np.zeros((n, n), dtype=np.int64)
        for (i, j), on in zip(pairs, bits):
            adj[i, j] = adj[j, i] = on
        p = search.evaluate(_Point(base.growth, base.log_spread, base.gamma, adj))
        p = search.optimize_continuous(p)
        if best is None or p.ll > best.ll:
            best = p
    return _finish(best, cfg, True, init_ll, search.obj.calls, 0)


def estimate_parameters(
    dataset: Dataset,
    config: EstimationConfig | None = None,
    seed: int | None = 0,
) -> EstimatedParams:
    """Maximum-likelihood (alpha, beta, gamma, topology) under the sqrt(k_i k_j) mobility law.

    For deltaJ data the conversion needs alpha and the estimate needs I, so the
    two are iterated from ``config.alpha0`` with a damped fixed-point update
    until alpha moves less than ``config.fixed_point_tol``.
    """
    cfg = config or EstimationConfig()
    if dataset.n_obs < 3:
        raise ValueError(f"estimation needs at least 3 observations, got {dataset.n_obs}")
    seeds = np.random.SeedSequence(seed)
    if dataset.kind == "I_series":
        return _estimate_i_series(dataset.values, dataset.delta_t, cfg, seeds)

    alpha = cfg.alpha0
    est = None
    for it in range(1, cfg.fixed_point_max + 1):
        conv = convert_deltaJ_to_I(dataset, alpha)
        est = _estimate_i_series(conv.values, dataset.delta_t, cfg, seeds.spawn(1)[0], warm=est)
        new_alpha = (1 - cfg.fixed_point_damping) * est.alpha + cfg.fixed_point_damping * alpha
        log.debug("fixed point %d: alpha %.6g -> %.6g", it, alpha, est.alpha)
        if abs(est.alpha - alpha) < cfg.fixed_point_tol:
            est.fixed_point_iterations = it
            return est
        alpha = new_alpha
    # final estimate is reported on the data converted with its own alpha
    conv = convert_deltaJ_to_I(dataset, alpha)
    est = _estimate_i_series(conv.values, dataset.delta_t, cfg, seeds.spawn(1)[0], warm=est)
    est.fixed_point_iterations = cfg.fixed_point_max
    est.converged = False
    return est


def prepare_i_series(dataset: Dataset, alpha: float) -> Dataset:
    """Return an I_series view, converting deltaJ data with ``alpha``."""
    if dataset.kind == "I_series":
        return dataset
    return convert_deltaJ_to_I(dataset, alpha)


def with_config(cfg: EstimationConfig, **changes) -> EstimationConfig:
    return replace(cfg, **changes)
