"""Graphs, Ising models, message-passing parameters and seeded generators.

Conventions used across the package:

* Nodes are dense integers ``0..n-1``.
* Undirected edges are canonical ``(min, max)`` pairs, stored sorted.
* Undirected edge ``e = (i, j)`` owns two directed edges: ``2e`` is ``i -> j``
  and ``2e + 1`` is ``j -> i``. Message vectors have length ``2|E|`` in
  this order, so the reverse of directed edge ``d`` is ``d ^ 1``.
* Random generation uses ``numpy.random.default_rng`` (PCG64) seeded with the
  caller's integer, so every generator is a pure function of its arguments.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

Edge = tuple[int, int]


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def canonical_edge(i: int, j: int) -> Edge:
    i, j = int(i), int(j)
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class UndirectedGraph:
    """Simple undirected graph on nodes ``0..node_count-1``."""

    node_count: int
    edges: tuple[Edge, ...]

    def __init__(self, node_count: int, edges: Iterable[Sequence[int]] = ()):
        node_count = int(node_count)
        if node_count < 0:
            raise ValueError(f"node_count must be nonnegative, got {node_count}")
        seen: set[Edge] = set()
        for k, (i, j) in enumerate(edges):
            if not (0 <= i < node_count and 0 <= j < node_count):
                raise ValueError(f"edge {k} ({i}, {j}) references a node outside 0..{node_count - 1}")
            if i == j:
                raise ValueError(f"edge {k} is a self-loop on node {i}")
            e = canonical_edge(i, j)
            if e in seen:
                raise ValueError(f"edge {k} {e} is duplicated")
            seen.add(e)
        object.__setattr__(self, "node_count", node_count)
        object.__setattr__(self, "edges", tuple(sorted(seen)))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_index(self) -> dict[Edge, int]:
        return {e: k for k, e in enumerate(self.edges)}

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.node_count)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(a)) for a in nbrs)

    def degree(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=int)

    # Directed-edge bookkeeping shared by the engines.

    @cached_property
    def directed_source(self) -> np.ndarray:
        ends = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        return _frozen(ends.reshape(-1), dtype=np.int64)

    @cached_property
    def directed_target(self) -> np.ndarray:
        ends = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        return _frozen(ends[:, ::-1].reshape(-1), dtype=np.int64)

    @cached_property
    def directed_reverse(self) -> np.ndarray:
        return _frozen(np.arange(2 * self.edge_count) ^ 1, dtype=np.int64)

    @cached_property
    def directed_undirected(self) -> np.ndarray:
        return _frozen(np.arange(2 * self.edge_count) // 2, dtype=np.int64)

    def directed_index(self, i: int, j: int) -> int:
        """Position of message ``i -> j`` in a message vector."""
        e = self.edge_index[canonical_edge(i, j)]
        return 2 * e if i < j else 2 * e + 1

    @cached_property
    def incoming(self) -> sp.csr_matrix:
        """Sparse ``n x 2|E|`` matrix summing messages into their target node."""
        return self._incidence(self.directed_target)

    @cached_property
    def outgoing(self) -> sp.csr_matrix:
        """Sparse ``n x 2|E|`` matrix summing directed-edge values onto their source node."""
        return self._incidence(self.directed_source)

    def _incidence(self, nodes: np.ndarray) -> sp.csr_matrix:
        m = 2 * self.edge_count
        return sp.csr_matrix(
            (np.ones(m), (nodes, np.arange(m))), shape=(self.node_count, m)
        )

    def is_forest(self) -> bool:
        parent = list(range(self.node_count))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in self.edges:
            ri, rj = find(i), find(j)
            if ri == rj:
                return False
            parent[ri] = rj
        return True


def sum_into_nodes(incidence: sp.csr_matrix, values: np.ndarray) -> np.ndarray:
    """Apply an incidence matrix to a vector or to each row of a batch."""
    if values.ndim == 1:
        return incidence @ values
    return (incidence @ values.T).T


def _edge_vector(graph: UndirectedGraph, values, name: str) -> np.ndarray:
    """Turn an edge mapping or an aligned sequence into an array in edge order."""
    if isinstance(values, Mapping):
        out = np.zeros(graph.edge_count)
        filled = np.zeros(graph.edge_count, dtype=bool)
        for key, v in values.items():
            e = canonical_edge(*key)
            if e not in graph.edge_index:
                raise ValueError(f"{name} has a value for {tuple(key)}, which is not an edge")
            k = graph.edge_index[e]
            if filled[k]:
                raise ValueError(f"{name} lists edge {e} twice")
            out[k] = float(v)
            filled[k] = True
        if not filled.all():
            raise ValueError(f"{name} is missing edge {graph.edges[int(np.argmin(filled))]}")
        return out
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape != (graph.edge_count,):
        raise ValueError(f"{name} has {arr.size} entries for {graph.edge_count} edges")
    return arr


def _check_finite(arr: np.ndarray, what: str, labels: Sequence | None = None) -> None:
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        k = int(bad[0])
        where = labels[k] if labels is not None else k
        raise ValueError(f"non-finite {what} at {where}")


def _node_vector(graph: UndirectedGraph, values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape != (graph.node_count,):
        raise ValueError(f"{name} has length {arr.size}, expected {graph.node_count}")
    return arr


@dataclass(frozen=True, eq=False)
class IsingModel:
    """Pairwise binary model ``p(x) ∝ exp(sum J_ij x_i x_j + sum m_ext_i x_i)``.

    ``couplings`` is aligned with ``graph.edges``.
    """

    graph: UndirectedGraph
    couplings: np.ndarray
    m_ext: np.ndarray

    @property
    def n(self) -> int:
        return self.graph.node_count

    def coupling(self, i: int, j: int) -> float:
        return float(self.couplings[self.graph.edge_index[canonical_edge(i, j)]])

    def with_inputs(self, m_ext) -> "IsingModel":
        return build_ising(self.graph, self.couplings, m_ext)


def build_ising(graph: UndirectedGraph, couplings, m_ext) -> IsingModel:
    """Validate and assemble an :class:`IsingModel`.

    ``couplings`` is either a mapping ``{(i, j): J}`` covering exactly the
    graph's edges or a sequence aligned with ``graph.edges``.
    """
    J = _edge_vector(graph, couplings, "couplings")
    _check_finite(J, "coupling", graph.edges)
    h = _node_vector(graph, m_ext, "m_ext")
    _check_finite(h, "external field", None)
    return IsingModel(graph, _frozen(J), _frozen(h))


@dataclass(frozen=True, eq=False)
class CbpParams:
    """Circular BP parameters: ``alpha``/``beta`` per undirected edge, ``kappa``/``gamma`` per node."""

    alpha: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "beta", "kappa", "gamma"):
            arr = _frozen(getattr(self, name))
            if arr.ndim != 1:
                raise ValueError(f"{name} must be one-dimensional")
            _check_finite(arr, name)
            object.__setattr__(self, name, arr)
        if self.alpha.shape != self.beta.shape:
            raise ValueError("alpha and beta must have one entry per edge")
        if self.kappa.shape != self.gamma.shape:
            raise ValueError("kappa and gamma must have one entry per node")

    @classmethod
    def uniform(cls, graph: UndirectedGraph, alpha=1.0, kappa=1.0, beta=1.0, gamma=1.0) -> "CbpParams":
        E, n = graph.edge_count, graph.node_count
        return cls(np.full(E, alpha), np.full(E, beta), np.full(n, kappa), np.full(n, gamma))

    @classmethod
    def ones(cls, graph: UndirectedGraph) -> "CbpParams":
        """The parameter choice under which Circular BP is plain BP."""
        return cls.uniform(graph)

    @classmethod
    def from_maps(cls, graph: UndirectedGraph, alpha, beta, kappa, gamma) -> "CbpParams":
        return cls(
            _edge_vector(graph, alpha, "alpha"),
            _edge_vector(graph, beta, "beta"),
            _node_vector(graph, kappa, "kappa"),
            _node_vector(graph, gamma, "gamma"),
        )

    def matches(self, graph: UndirectedGraph) -> bool:
        return self.alpha.size == graph.edge_count and self.kappa.size == graph.node_count

    def check(self, graph: UndirectedGraph) -> None:
        if not self.matches(graph):
            raise ValueError(
                f"parameters sized for {self.alpha.size} edges/{self.kappa.size} nodes, "
                f"graph has {graph.edge_count}/{graph.node_count}"
            )
        ends = np.array(graph.edges, dtype=int).reshape(-1, 2)
        for k, (i, j) in enumerate(ends):
            if self.alpha[k] != 0 and (self.kappa[i] == 0 or self.kappa[j] == 0):
                node = i if self.kappa[i] == 0 else j
                raise ValueError(f"kappa is zero at node {node} while edge {(int(i), int(j))} has nonzero alpha")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.kappa, self.beta, self.gamma])

    @classmethod
    def from_vector(cls, graph: UndirectedGraph, vec) -> "CbpParams":
        E, n = graph.edge_count, graph.node_count
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (2 * E + 2 * n,):
            raise ValueError(f"parameter vector has length {vec.size}, expected {2 * E + 2 * n}")
        return cls(vec[:E], vec[E + n : 2 * E + n], vec[E : E + n], vec[2 * E + n :])


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Per-example external fields, optionally paired with exact marginals ``p_i(+1)``."""

    m_ext: np.ndarray
    targets: np.ndarray | None = field(default=None)

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.m_ext, dtype=float))
        _check_finite(m.reshape(-1), "external field")
        object.__setattr__(self, "m_ext", _frozen(m))
        if self.targets is not None:
            t = np.atleast_2d(np.asarray(self.targets, dtype=float))
            if t.shape != m.shape:
                raise ValueError(f"targets have shape {t.shape}, examples {m.shape}")
            if np.any((t <= 0) | (t >= 1)):
                raise ValueError("targets must lie strictly inside (0, 1)")
            object.__setattr__(self, "targets", _frozen(t))

    def __len__(self) -> int:
        return self.m_ext.shape[0]

    @property
    def node_count(self) -> int:
        return self.m_ext.shape[1]

    def with_targets(self, targets) -> "TrainingSet":
        return TrainingSet(self.m_ext, targets)


# Generators ---------------------------------------------------------------


def gen_erdos_renyi(n: int, p: float, seed: int) -> UndirectedGraph:
    """Include each unordered pair independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")
    if n < 1:
        raise ValueError(f"need at least one node, got {n}")
    rng = np.random.default_rng(seed)
    rows, cols = np.triu_indices(n, k=1)
    keep = rng.random(rows.size) < p
    return UndirectedGraph(n, zip(rows[keep].tolist(), cols[keep].tolist()))


def complete_graph(n: int) -> UndirectedGraph:
    rows, cols = np.triu_indices(n, k=1)
    return UndirectedGraph(n, zip(rows.tolist(), cols.tolist()))


def grid_graph(rows: int, cols: int) -> UndirectedGraph:
    edges = []
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            if c + 1 < cols:
                edges.append((k, k + 1))
            if r + 1 < rows:
                edges.append((k, k + cols))
    return UndirectedGraph(rows * cols, edges)


def random_tree(n: int, seed: int) -> UndirectedGraph:
    """Uniform random recursive tree: node k attaches to a uniformly chosen earlier node."""
    rng = np.random.default_rng(seed)
    parents = [int(rng.integers(0, k)) for k in range(1, n)]
    return UndirectedGraph(n, [(p, k) for k, p in enumerate(parents, start=1)])


def sample_spin_glass(graph: UndirectedGraph, seed: int) -> IsingModel:
    """Couplings ``J_ij ~ N(0, 1)`` i.i.d. per edge, external field zero."""
    rng = np.random.default_rng(seed)
    J = rng.standard_normal(graph.edge_count)
    return build_ising(graph, J, np.zeros(graph.node_count))


def sample_inputs(n: int, count: int, seed: int) -> TrainingSet:
    """``count`` external-field vectors with i.i.d. ``N(0, 1)`` entries."""
    if n < 1 or count < 1:
        raise ValueError("n and count must both be at least 1")
    rng = np.random.default_rng(seed)
    return TrainingSet(rng.standard_normal((count, n)))
