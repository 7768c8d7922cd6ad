"""Langevin integration of the meta-population SIR model and dataset synthesis.

States are continuous (diffusion approximation). One Euler-Maruyama step
draws an infection, a recovery and one migration noise per directed link;
the migration draw is shared by both endpoints so travellers are conserved.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import Mobility, Network, gamma_from_topology, generate_er, initial_populations

log = logging.getLogger(__name__)

SPREADER_KINDS = ("absent", "index", "intermediate")
DATASET_KINDS = ("I_series", "deltaJ_series")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransmissionParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha and beta must be positive, got {self.alpha}, {self.beta}")

    @property
    def r(self) -> float:
        return self.alpha / self.beta


@dataclass
class EpidemicState:
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    j: np.ndarray
    t: float = 0.0
    clamped: int = 0

    @classmethod
    def initial(cls, populations: np.ndarray, infected: np.ndarray) -> "EpidemicState":
        pop = np.asarray(populations, dtype=float)
        inf = np.asarray(infected, dtype=float)
        return cls(s=pop - inf, i=inf.copy(), r=np.zeros_like(pop), j=np.zeros_like(pop))

    def total(self) -> float:
        return float(self.s.sum() + self.i.sum() + self.r.sum())


def advance_state(
    state: EpidemicState,
    params: TransmissionParams,
    mobility: Mobility,
    dt_int: float,
    rng: np.random.Generator,
    mode: str = "full",
    paired_noise: bool = True,
) -> EpidemicState:
    """One Euler-Maruyama step of the Langevin equations.

    ``mode="full"`` uses the infection rate alpha*S*I/P; ``"linearized"`` uses
    alpha*I (early growth, I << S). The cumulative count J shares the
    infection noise with I. Susceptible and removed persons migrate along the
    drift only; their noise does not feed back into I.
    """
    if dt_int <= 0:
        raise ValueError(f"dt_int must be positive, got {dt_int}")
    s, i, r = state.s, state.i, state.r
    g = mobility.gamma_matrix
    n = len(i)

    if mode == "full":
        pop = s + i + r
        with np.errstate(invalid="ignore", divide="ignore"):
            infect_rate = np.where(pop > 0, params.alpha * s * i / pop, 0.0)
    elif mode == "linearized":
        infect_rate = params.alpha * i
    else:
        raise ValueError(f"unknown mode {mode!r}")
    recover_rate = params.beta * i

    z_inf = rng.standard_normal(n)
    z_rec = rng.standard_normal(n)
    z_mig = rng.standard_normal((n, n))

    infections = infect_rate * dt_int + np.sqrt(infect_rate * dt_int) * z_inf
    recoveries = recover_rate * dt_int + np.sqrt(recover_rate * dt_int) * z_rec

    # flux[i, j]: infectious persons moving i -> j during the step
    mig_rate = g * i[:, None]
    mig_mean = mig_rate * dt_int
    mig_sd = np.sqrt(mig_rate * dt_int)
    out_flux = mig_mean + mig_sd * z_mig
    if paired_noise:
        in_flux = out_flux
    else:
        in_flux = mig_mean + mig_sd * rng.standard_normal((n, n))
    di_mig = in_flux.sum(axis=0) - out_flux.sum(axis=1)

    outflow = g.sum(axis=1)
    ds_mig = (g.T @ s - outflow * s) * dt_int
    dr_mig = (g.T @ r - outflow * r) * dt_int

    new_s = s - infections + ds_mig
    new_i = i + infections - recoveries + di_mig
    new_r = r + recoveries + dr_mig
    new_j = state.j + infections

    stacked = np.stack([new_s, new_i, new_r, new_j])
    if not np.all(np.isfinite(stacked)):
        raise SimulationError(f"non-finite state at t={state.t + dt_int}")
    clamped = state.clamped
    for arr in (new_s, new_i, new_r):
        neg = arr < 0
        if neg.any():
            clamped += int(neg.sum())
            arr[neg] = 0.0
    return EpidemicState(new_s, new_i, new_r, new_j, state.t + dt_int, clamped)


@dataclass(frozen=True)
class Scenario:
    """Where the outbreak starts and how the hidden node is wired.

    ``hidden_links`` has one entry per observed node; the hidden node is
    appended as the last node of the simulated network.
    """

    spreader_kind: str
    hidden_links: np.ndarray | None = None
    seed_node: int = 0
    initial_infected: float = 200.0

    def __post_init__(self):
        if self.spreader_kind not in SPREADER_KINDS:
            raise ValueError(f"spreader_kind must be one of {SPREADER_KINDS}")
        if self.spreader_kind == "absent":
            if self.hidden_links is not None and np.any(self.hidden_links):
                raise ValueError("absent scenario cannot have hidden links")
            object.__setattr__(self, "hidden_links", None)
        else:
            if self.hidden_links is None:
                raise ValueError(f"{self.spreader_kind} scenario needs hidden_links")
            links = np.asarray(self.hidden_links, dtype=np.int64)
            if not np.isin(links, (0, 1)).all():
                raise ValueError("hidden_links must be binary")
            object.__setattr__(self, "hidden_links", links)

    @classmethod
    def absent(cls, seed_node: int = 0, initial_infected: float = 200.0) -> "Scenario":
        return cls("absent", None, seed_node, initial_infected)

    @classmethod
    def index(cls, hidden_links, initial_infected: float = 200.0) -> "Scenario":
        links = np.asarray(hidden_links, dtype=np.int64)
        return cls("index", links, len(links), initial_infected)

    @classmethod
    def intermediate(cls, hidden_links, seed_node: int = 0, initial_infected: float = 200.0) -> "Scenario":
        return cls("intermediate", np.asarray(hidden_links, dtype=np.int64), seed_node, initial_infected)

    @property
    def has_hidden(self) -> bool:
        return self.spreader_kind != "absent"

    def ground_truth(self, n_observed: int) -> np.ndarray:
        if not self.has_hidden:
            return np.zeros(n_observed, dtype=bool)
        return self.hidden_links.astype(bool)

    def full_network(self, net: Network) -> Network:
        if not self.has_hidden:
            return net
        n = net.n_nodes
        if len(self.hidden_links) != n:
            raise ValueError(f"hidden_links has {len(self.hidden_links)} entries, network has {n} nodes")
        adj = np.zeros((n + 1, n + 1), dtype=np.int64)
        adj[:n, :n] = net.adjacency
        adj[:n, n] = self.hidden_links
        adj[n, :n] = self.hidden_links
        return Network(adj)

    def to_dict(self) -> dict:
        return {
            "spreader_kind": self.spreader_kind,
            "hidden_links": None if self.hidden_links is None else self.hidden_links.tolist(),
            "seed_node": self.seed_node,
            "initial_infected": self.initial_infected,
        }


@dataclass
class Dataset:
    """Time-indexed observations of the observed nodes (rows are times)."""

    kind: str
    values: np.ndarray
    delta_t: float
    labels: list[str] = field(default_factory=list)
    ground_truth: np.ndarray | None = None
    times: np.ndarray | None = None
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] < 2:
            raise ValueError(f"values must be a D x N matrix with D >= 2, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("dataset values must be finite")
        if not self.labels:
            self.labels = [f"node_{i}" for i in range(self.n_nodes)]
        if len(self.labels) != self.n_nodes:
            raise ValueError("one label per node required")
        if self.times is None:
            self.times = np.arange(self.n_obs) * self.delta_t
        if self.ground_truth is not None:
            self.ground_truth = np.asarray(self.ground_truth, dtype=bool)

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + list(self.labels))
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path: str | Path, kind: str = "I_series", delta_t: float | None = None) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "t":
            raise ValueError(f"{path}: expected header starting with 't'")
        labels = rows[0][1:]
        body = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(labels) + 1:
                raise ValueError(f"{path}:{lineno}: expected {len(labels) + 1} fields, got {len(row)}")
            try:
                body.append([float(x) for x in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
        arr = np.array(body)
        times = arr[:, 0]
        if delta_t is None:
            steps = np.diff(times)
            delta_t = float(steps[0]) if len(steps) else 1.0
        return cls(kind, arr[:, 1:], float(delta_t), labels, times=times)


@dataclass
class Synthesis:
    i_series: Dataset
    dj_series: Dataset
    full_network: Network
    clamped: int
    negative_increments: int


def synthesize_dataset(
    net: Network,
    params: TransmissionParams,
    gamma_scalar: float,
    scenario: Scenario,
    n_obs: int,
    delta_t: float = 1.0,
    substeps: int = 10,
    seed: int | None = 0,
    mode: str = "full",
    paired_noise: bool = True,
    population_per_node: float = 1e6,
) -> Synthesis:
    """Integrate the full (N+1)-node system and record the N observed nodes.

    I is recorded at t_0..t_{D-1}; J at t_0..t_D so that both views have D
    rows. Negative J increments (possible in the diffusion approximation at
    small counts) are clamped to zero in the recorded series and counted.
    """
    if n_obs < 2:
        raise ValueError(f"n_obs must be >= 2, got {n_obs}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    n = net.n_nodes
    full = scenario.full_network(net)
    mobility = gamma_from_topology(full, gamma_scalar)
    pops = initial_populations(full, population_per_node * full.n_nodes)
    infected = np.zeros(full.n_nodes)
    if not 0 <= scenario.seed_node < full.n_nodes:
        raise ValueError(f"seed_node {scenario.seed_node} outside network of {full.n_nodes} nodes")
    infected[scenario.seed_node] = min(scenario.initial_infected, pops.initial[scenario.seed_node])

    rng = np.random.default_rng(seed)
    state = EpidemicState.initial(pops.initial, infected)
    dt_int = delta_t / substeps
    i_rec = np.empty((n_obs, n))
    j_rec = np.empty((n_obs + 1, n))
    for d in range(n_obs + 1):
        if d < n_obs:
            i_rec[d] = state.i[:n]
        j_rec[d] = state.j[:n]
        if d == n_obs:
            break
        for _ in range(substeps):
            state = advance_state(state, params, mobility, dt_int, rng, mode, paired_noise)
    dj = np.diff(j_rec, axis=0)
    neg = int((dj < 0).sum())
    dj[dj < 0] = 0.0
    if state.clamped:
        log.debug("clamped %d negative state components during synthesis", state.clamped)
    truth = scenario.ground_truth(n)
    times = np.arange(n_obs) * delta_t
    return Synthesis(
        i_series=Dataset("I_series", i_rec, delta_t, ground_truth=truth, times=times),
        dj_series=Dataset("deltaJ_series", dj, delta_t, ground_truth=truth, times=times),
        full_network=full,
        clamped=state.clamped,
        negative_increments=neg,
    )


def draw_scenario(
    kind: str,
    n_nodes: int,
    mean_degree: float,
    seed: int | np.random.Generator | None,
    initial_infected: float = 200.0,
    seed_node: int = 0,
) -> tuple[Network, Scenario]:
    """Draw a random topology and split off the hidden node when there is one.

    For hidden-spreader scenarios an (N+1)-node graph without isolated nodes is
    drawn and its last node becomes the hidden spreader.
    """
    if kind == "absent":
        return generate_er(n_nodes, mean_degree, seed), Scenario.absent(seed_node, initial_infected)
    if kind not in SPREADER_KINDS:
        raise ValueError(f"unknown spreader kind {kind!r}")
    full = generate_er(n_nodes + 1, mean_degree, seed)
    observed = Network(full.adjacency[:n_nodes, :n_nodes])
    links = full.adjacency[:n_nodes, n_nodes]
    if kind == "index":
        return observed, Scenario.index(links, initial_infected)
    return observed, Scenario.intermediate(links, seed_node, initial_infected)


def write_sidecar(path: str | Path, **meta) -> None:
    Path(path).write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
