"""Network topologies, mobility matrices and initial populations."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Network:
    """Undirected meta-population network given by a binary adjacency matrix."""

    adjacency: np.ndarray
    degrees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.int64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        if adj.shape[0] < 1:
            raise ValueError("network needs at least one node")
        if not np.isin(adj, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(adj)):
            raise ValueError("self-links are not allowed")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        deg = adj.sum(axis=1)
        deg.setflags(write=False)
        object.__setattr__(self, "degrees", deg)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_links(self) -> int:
        """Number of nonzero entries (a bidirectional pair counts twice)."""
        return int(self.adjacency.sum())

    def isolated(self) -> np.ndarray:
        return np.flatnonzero(self.degrees == 0)

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.adjacency, self.adjacency.T))

    def to_dict(self) -> dict:
        return {"n": self.n_nodes, "adjacency": self.adjacency.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        net = cls(np.array(doc["adjacency"], dtype=np.int64))
        if "n" in doc and int(doc["n"]) != net.n_nodes:
            raise ValueError(f"'n'={doc['n']} does not match adjacency size {net.n_nodes}")
        return net

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "Network":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Mobility:
    """Per-unit-time movement probabilities between nodes.

    ``gamma_scalar`` is the network-wide outgoing fraction when the matrix was
    built from the topology law; hand-built matrices may leave it ``None``.
    """

    gamma_matrix: np.ndarray
    gamma_scalar: float | None = None

    def __post_init__(self):
        g = np.array(self.gamma_matrix, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError(f"gamma_matrix must be square, got shape {g.shape}")
        if np.any(np.diag(g) != 0):
            raise ValueError("gamma_matrix diagonal must be zero")
        g.setflags(write=False)
        object.__setattr__(self, "gamma_matrix", g)

    @property
    def n_nodes(self) -> int:
        return self.gamma_matrix.shape[0]

    def outflow(self) -> np.ndarray:
        return self.gamma_matrix.sum(axis=1)


@dataclass(frozen=True)
class Populations:
    initial: np.ndarray
    total: float


def generate_er(
    n_nodes: int,
    mean_degree: float,
    seed: int | np.random.Generator | None,
    allow_isolated: bool = False,
    max_retries: int = 1000,
) -> Network:
    """Draw an Erdos-Renyi graph with link probability ``mean_degree / (n_nodes - 1)``.

    Unless ``allow_isolated`` is set, graphs with an isolated node are redrawn
    from the same random stream, up to ``max_retries`` times.
    """
    if n_nodes < 2:
        raise ValueError(f"n_nodes must be >= 2, got {n_nodes}")
    if not 0 < mean_degree <= n_nodes - 1:
        raise ValueError(f"mean_degree must lie in (0, {n_nodes - 1}], got {mean_degree}")
    rng = np.random.default_rng(seed)
    p = mean_degree / (n_nodes - 1)
    iu = np.triu_indices(n_nodes, k=1)
    for _ in range(max_retries):
        upper = rng.random(len(iu[0])) < p
        adj = np.zeros((n_nodes, n_nodes), dtype=np.int64)
        adj[iu] = upper
        adj = adj + adj.T
        if allow_isolated or np.all(adj.sum(axis=1) > 0):
            return Network(adj)
    raise RuntimeError(
        f"no graph without isolated nodes after {max_retries} draws "
        f"(n_nodes={n_nodes}, mean_degree={mean_degree})"
    )


def _link_weights(net: Network) -> np.ndarray:
    k = net.degrees.astype(float)
    return net.adjacency * np.sqrt(np.outer(k, k))


def gamma_from_topology(net: Network, gamma_scalar: float) -> Mobility:
    """Mobility where flux along a link is proportional to sqrt(k_i k_j).

    Each non-isolated row is normalised to ``gamma_scalar``; isolated rows stay zero.
    """
    if not 0 < gamma_scalar < 1:
        raise ValueError(f"gamma_scalar must lie in (0, 1), got {gamma_scalar}")
    w = _link_weights(net)
    rows = w.sum(axis=1)
    g = np.zeros_like(w)
    nz = rows > 0
    g[nz] = w[nz] / rows[nz, None] * gamma_scalar
    return Mobility(g, float(gamma_scalar))


def initial_populations(net: Network, total: float) -> Populations:
    """Split ``total`` among nodes in proportion to their outgoing link weight."""
    if total <= 0:
        raise ValueError(f"total must be positive, got {total}")
    w = _link_weights(net)
    denom = w.sum()
    if denom == 0:
        raise ValueError("network has no links; populations are undefined")
    return Populations(w.sum(axis=1) / denom * total, float(total))


def write_matrix_csv(path: str | Path, matrix: np.ndarray, labels: Sequence[str] | None = None) -> None:
    """Write a square matrix (or a vector as one row) with node labels as header."""
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))
    n = mat.shape[1]
    labels = list(labels) if labels is not None else [f"node_{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from"] + labels)
        row_labels = labels if mat.shape[0] == n else [f"row_{i}" for i in range(mat.shape[0])]
        for lab, row in zip(row_labels, mat):
            w.writerow([lab] + [repr(float(x)) for x in row])
