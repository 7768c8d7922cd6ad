"""Closed-form moments for the three-node spreader / neighbour / apart network.

Node order used throughout is (neighbour, apart, spreader). The neighbour is
linked to both other nodes with rates gamma (to apart) and gamma_prime (to the
spreader); apart and spreader are not linked. With gamma_prime = 0 the
spreader is disconnected and the network is the unperturbed one.

These expressions are the small-interval moments of the general propagation
evaluated on this network and truncated at first order in gamma_prime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .simulate import TransmissionParams

NEIGHBOR, APART, SPREADER = 0, 1, 2


@dataclass(frozen=True)
class ThreeNodeConfig:
    i_n: float
    i_a: float
    i_s: float
    gamma: float
    gamma_prime: float
    params: TransmissionParams
    delta_t: float = 1.0

    def __post_init__(self):
        if self.gamma < 0 or self.gamma_prime < 0:
            raise ValueError("gamma and gamma_prime must be nonnegative")
        if min(self.i_n, self.i_a, self.i_s) < 0:
            raise ValueError("infected counts must be nonnegative")
        if self.delta_t <= 0:
            raise ValueError(f"delta_t must be positive, got {self.delta_t}")

    def gamma_matrix(self) -> np.ndarray:
        """Mobility matrix in (neighbour, apart, spreader) order."""
        g, gp = self.gamma, self.gamma_prime
        return np.array([[0.0, g, gp], [g, 0.0, 0.0], [gp, 0.0, 0.0]])

    def counts(self) -> np.ndarray:
        return np.array([self.i_n, self.i_a, self.i_s], dtype=float)


@dataclass(frozen=True)
class NodeMoments:
    m: float
    v: float
    s: float
    kappa: float


def perturbed_moments(cfg: ThreeNodeConfig, node: str, alt_mixed_term: bool = False) -> NodeMoments:
    """Diagonal moments of the neighbour (``"neighbor"``) or apart (``"apart"``) node.

    The O(gamma_prime^2) parts of the neighbour's skewness and kurtosis are
    dropped. ``alt_mixed_term=True`` swaps the gamma_prime * gamma^2
    coefficient of the neighbour kurtosis to 3 I_n + I_a + 2 I_s, a variant
    with the roles of I_a and I_s exchanged that is kept for comparison; the
    default 3 I_n + 2 I_a + I_s is what the general moment propagation gives
    on this network.
    """
    a = cfg.params.alpha
    b = cfg.params.beta
    sp = a + b
    g, gp = cfg.gamma, cfg.gamma_prime
    i_n, i_a, i_s = cfg.i_n, cfg.i_a, cfg.i_s
    dt = cfg.delta_t

    if node == "neighbor":
        m = i_n + ((a - b) * i_n - g * (i_n - i_a)) * dt - gp * (i_n - i_s) * dt
        v = (sp * i_n + g * (i_n + i_a)) * dt + gp * (i_n + i_s) * dt
        s = 1.5 * (sp**2 * i_n + g * sp * (2 * i_n + i_a)) * dt**2
        s += 1.5 * gp * (sp * (2 * i_n + i_s) + g * (2 * i_n + i_a + i_s)) * dt**2
        k0 = 3 * (sp**3 * i_n + g * sp**2 * (3 * i_n + i_a) + g**2 * sp * (i_n + i_a))
        mixed = (3 * i_n + i_a + 2 * i_s) if alt_mixed_term else (3 * i_n + 2 * i_a + i_s)
        k1 = gp * (3 * sp**2 * (3 * i_n + i_s) + 6 * g * sp * (3 * i_n + i_a + i_s) + g**2 * mixed)
        return NodeMoments(m, v, s, (k0 + k1) * dt**3)
    if node == "apart":
        m = i_a + ((a - b) * i_a - g * (i_a - i_n)) * dt
        v = (sp * i_a + g * (i_a + i_n)) * dt
        s = 1.5 * (sp**2 * i_a + g * sp * (2 * i_a + i_n)) * dt**2
        k = 3 * (sp**3 * i_a + g * sp**2 * (3 * i_a + i_n) + g**2 * sp * (i_a + i_n)) * dt**3
        k += gp * g**2 * (i_n + i_s) * dt**3
        return NodeMoments(m, v, s, k)
    raise ValueError(f"node must be 'neighbor' or 'apart', got {node!r}")


def zscore_signal(cfg: ThreeNodeConfig) -> tuple[float, float]:
    """Mean and variance of the neighbour z-score when standardised without the spreader.

    The observation carries the gamma_prime disturbance while the reference
    mean and variance are those of the gamma_prime = 0 model.
    """
    sp = cfg.params.alpha + cfg.params.beta
    denom = sp * cfg.i_n + cfg.gamma * (cfg.i_n + cfg.i_a)
    if denom <= 0:
        raise ZeroDivisionError("reference variance (alpha+beta) I_n + gamma (I_n + I_a) is zero")
    gp = cfg.gamma_prime
    mean = -gp * (cfg.i_n - cfg.i_s) / math.sqrt(denom) * math.sqrt(cfg.delta_t)
    var = 1.0 + gp * (cfg.i_n + cfg.i_s) / denom
    return mean, var


def max_apart_nodes(cfg: ThreeNodeConfig) -> float:
    """Rough bound on how many comparable non-neighbours still leave a visible signal.

    Lumping k non-neighbours with about I_n cases each into the apart node
    (I_a ~ k I_n), the excess z variance of the neighbour exceeds one while
    k < (gamma' (I_n + I_s) / I_n - alpha - beta - gamma) / gamma. For
    I_s >> I_n this is about gamma' I_s / (gamma I_n); for I_s ~ I_n it is
    (2 gamma' - gamma - alpha - beta) / gamma. A qualitative guide only.
    """
    if cfg.gamma <= 0 or cfg.i_n <= 0:
        raise ValueError("the bound needs gamma > 0 and I_n > 0")
    sp = cfg.params.alpha + cfg.params.beta
    return (cfg.gamma_prime * (cfg.i_n + cfg.i_s) / cfg.i_n - sp - cfg.gamma) / cfg.gamma
