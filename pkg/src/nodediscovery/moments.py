"""Short-interval moment propagation and conditional z-scores.

Over one observation interval the linearized Langevin system is described by
drift coefficients ``a[i, p]`` and diffusion coefficients ``b[i, j, p]``; the
mean, covariance, skewness and kurtosis tensors at t_{d+1} follow from the
observed counts at t_d to leading order in the interval length.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import Mobility
from .simulate import Dataset, TransmissionParams

RIDGE_EPS = 1e-9
MAX_CONDITION = 1e14


class ConditioningError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Coefficients:
    a: np.ndarray
    b: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class MomentSet:
    m: np.ndarray
    v: np.ndarray
    s: np.ndarray | None = None
    kappa: np.ndarray | None = None


@dataclass(frozen=True)
class ConditionalStats:
    node: int
    cond_mean: float
    cond_var: float


def coefficients(params: TransmissionParams, mobility: Mobility | np.ndarray) -> Coefficients:
    """Drift and diffusion coefficients of the linearized system.

    a_ip  = (alpha - beta - sum_j g_ij) d_ip + g_pi
    b_ijp = {(alpha + beta + sum_j g_ij) d_ip + g_pi} d_ij - g_ij d_ip - g_ji d_jp
    """
    g = mobility.gamma_matrix if isinstance(mobility, Mobility) else np.asarray(mobility, dtype=float)
    n = g.shape[0]
    out = g.sum(axis=1)
    eye = np.eye(n)
    a = np.diag(params.alpha - params.beta - out) + g.T

    b = np.zeros((n, n, n))
    idx = np.arange(n)
    # diagonal (i == j) block: b_iip = (alpha+beta+out_i) d_ip + g_pi
    b[idx, idx, :] = np.diag(params.alpha + params.beta + out) + g.T
    # - g_ij d_ip - g_ji d_jp
    b -= g[:, :, None] * eye[:, None, :]
    b -= g.T[:, :, None] * eye[None, :, :]
    return Coefficients(a, b)


def diffusion_matrix(coeff: Coefficients, observed: np.ndarray) -> np.ndarray:
    """C_ij = sum_p b_ijp I_p; accepts a single vector or a stack of them."""
    return np.einsum("ijp,...p->...ij", coeff.b, observed)


def propagate_moments(
    observed: np.ndarray,
    coeff: Coefficients,
    delta_t: float,
    higher: bool = True,
) -> MomentSet:
    """Moments at t_{d+1} from the deterministic initial condition I(t_d).

    The mean is exact through O(dt), the covariance O(dt), skewness O(dt^2)
    and kurtosis O(dt^3). With ``higher=False`` only mean and covariance are
    computed.
    """
    if delta_t <= 0:
        raise ValueError(f"delta_t must be positive, got {delta_t}")
    x = np.asarray(observed, dtype=float)
    b = coeff.b
    m = x + coeff.a @ x * delta_t
    c = diffusion_matrix(coeff, x)
    v = c * delta_t
    if not higher:
        return MomentSet(m, v)

    # X_ijk = sum_p b_ijp C_pk
    X = np.einsum("ijp,pk->ijk", b, c)
    s = 0.5 * (X + X.transpose(0, 2, 1) + X.transpose(2, 0, 1)) * delta_t**2
    # Y_pkl = X_pkl + X_plk + X_klp is fully symmetric
    Y = X + X.transpose(0, 2, 1) + X.transpose(2, 0, 1)
    # the six index pairings of the outer b
    t = np.einsum("ijp,pkl->ijkl", b, Y)
    kappa = (
        t
        + t.transpose(0, 2, 1, 3)  # b_ikp Y_pjl
        + t.transpose(0, 2, 3, 1)  # b_ilp Y_pjk
        + t.transpose(2, 0, 1, 3)  # b_jkp Y_pil
        + t.transpose(2, 0, 3, 1)  # b_jlp Y_pik
        + t.transpose(2, 3, 0, 1)  # b_klp Y_pij
    ) * (delta_t**3 / 6.0)
    return MomentSet(m, v, s, kappa)


def _condition(m, v, node, rest_obs, eps=RIDGE_EPS):
    n = len(m)
    rest = np.delete(np.arange(n), node)
    v_rr = v[np.ix_(rest, rest)]
    v_ir = v[node, rest]
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(m))):
        raise ConditioningError("predicted moments are not finite")
    tr = np.trace(v_rr)
    if n == 1 or tr <= 0:
        return m[node], v[node, node]
    reg = v_rr + eps * tr / (n - 1) * np.eye(n - 1)
    try:
        w = np.linalg.solve(reg, v_ir)
    except np.linalg.LinAlgError:
        raise ConditioningError(
            f"covariance of the nodes other than {node} is singular "
            f"(condition number {np.linalg.cond(reg):.3g})"
        ) from None
    cond_mean = m[node] + w @ (rest_obs - m[rest])
    cond_var = v[node, node] - w @ v_ir
    return cond_mean, cond_var


def conditional_stats(
    ms: MomentSet, node: int, observed_rest: np.ndarray, eps: float = RIDGE_EPS
) -> ConditionalStats:
    """Mean and variance of one node given simultaneous observations of the others.

    A ridge of ``eps * trace / (N-1)`` is added to the covariance of the
    conditioning nodes before inversion.
    """
    cm, cv = _condition(ms.m, ms.v, node, np.asarray(observed_rest, dtype=float), eps)
    return ConditionalStats(node, float(cm), float(cv))


@dataclass
class ZScoreSeries:
    """Conditional z-scores; rows are t_1..t_{D-1}.

    Entries where the conditional variance vanished are NaN and ``valid`` is
    False there.
    """

    z: np.ndarray
    valid: np.ndarray
    labels: list[str]
    times: np.ndarray

    @property
    def n_skipped(self) -> int:
        return int((~self.valid).sum())

    def node(self, i: int) -> np.ndarray:
        return self.z[self.valid[:, i], i]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + list(self.labels))
            for t, row, ok in zip(self.times, self.z, self.valid):
                w.writerow([repr(float(t))] + [repr(float(x)) if o else "" for x, o in zip(row, ok)])


def zscore_series(
    dataset: Dataset,
    params: TransmissionParams,
    mobility: Mobility | np.ndarray,
    eps: float = RIDGE_EPS,
    var_tol: float = 1e-12,
) -> ZScoreSeries:
    """z_i(t_{d+1}) = (I_i(t_{d+1}) - m_i^C) / sqrt(v_ii^C) for every node and step."""
    if dataset.kind != "I_series":
        raise ValueError("zscore_series needs an I_series dataset; convert deltaJ data first")
    coeff = coefficients(params, mobility)
    x = dataset.values
    prev, nxt = x[:-1], x[1:]
    dt = dataset.delta_t
    m = prev + prev @ coeff.a.T * dt
    v = diffusion_matrix(coeff, prev) * dt
    steps, n = prev.shape
    z = np.full((steps, n), np.nan)
    valid = np.zeros((steps, n), dtype=bool)
    for i in range(n):
        rest = np.delete(np.arange(n), i)
        vii = v[:, i, i]
        if n == 1:
            cm, cv = m[:, i], vii
        else:
            v_rr = v[:, rest][:, :, rest]
            v_ir = v[:, i, rest]
            tr = np.trace(v_rr, axis1=1, axis2=2)
            ridge = eps * tr / (n - 1)
            reg = v_rr + ridge[:, None, None] * np.eye(n - 1)
            trivial = tr <= 0
            reg[trivial] = np.eye(n - 1)
            try:
                w = np.linalg.solve(reg, v_ir[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                bad = [d for d in range(steps) if not trivial[d] and np.linalg.cond(reg[d]) > MAX_CONDITION]
                d = bad[0] if bad else 0
                raise ConditioningError(
                    f"node {dataset.labels[i]} at t={dataset.times[d + 1]}: conditioning covariance "
                    f"singular (condition number {np.linalg.cond(reg[d]):.3g})"
                ) from None
            w[trivial] = 0.0
            cm = m[:, i] + np.einsum("dk,dk->d", w, nxt[:, rest] - m[:, rest])
            cv = vii - np.einsum("dk,dk->d", w, v_ir)
        ok = cv > var_tol * np.maximum(vii, 1.0)
        z[ok, i] = (nxt[ok, i] - cm[ok]) / np.sqrt(cv[ok])
        valid[:, i] = ok
    return ZScoreSeries(z, valid, list(dataset.labels), np.asarray(dataset.times)[1:])
