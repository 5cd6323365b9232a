"""Contraction certificates for Circular BP.

The nonnegative matrix ``A`` acts on directed edges. Its entry at row
``i -> j`` and column ``k -> i`` (with ``k`` a neighbour of ``i``) is

    |kappa_i| * tanh|beta_ij J_ij| * (|1 - alpha_ij / kappa_i| if k == j else 1)

and every other entry is zero. If some induced norm of ``A`` is below one, or
if ``alpha/kappa <= 1`` everywhere and the spectral radius is below one, the
synchronous iteration converges to a unique fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import CbpParams, IsingModel, UndirectedGraph

DENSE_LIMIT = 4096


@dataclass(frozen=True, eq=False)
class EdgeMatrix:
    """``A`` with rows/columns indexed like message vectors (see :mod:`circbp.model`)."""

    graph: UndirectedGraph
    matrix: np.ndarray | sp.csr_matrix

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def __matmul__(self, x):
        return self.matrix @ x


def build_A(model: IsingModel, params: CbpParams) -> EdgeMatrix:
    g = model.graph
    params.check(g)
    if np.any(params.kappa == 0):
        raise ValueError(f"kappa is zero at node {int(np.flatnonzero(params.kappa == 0)[0])}")
    src, tgt, und = g.directed_source, g.directed_target, g.directed_undirected
    strength = np.tanh(np.abs(params.beta * model.couplings))
    ratio = np.abs(1.0 - params.alpha[und] / params.kappa[src])

    # incoming[i] lists directed edges k -> i
    order = np.argsort(tgt, kind="stable")
    bounds = np.searchsorted(tgt[order], np.arange(g.node_count + 1))
    rows, cols, vals = [], [], []
    for d in range(2 * g.edge_count):
        i = src[d]
        into_i = order[bounds[i] : bounds[i + 1]]
        scale = abs(params.kappa[i]) * strength[und[d]]
        w = np.full(into_i.size, scale)
        w[into_i == (d ^ 1)] *= ratio[d]
        rows.append(np.full(into_i.size, d))
        cols.append(into_i)
        vals.append(w)
    m = 2 * g.edge_count
    if m == 0:
        return EdgeMatrix(g, np.zeros((0, 0)))
    coo = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    mat = coo.tocsr()
    return EdgeMatrix(g, mat.toarray() if m <= DENSE_LIMIT else mat)


def induced_norms(A: EdgeMatrix | np.ndarray) -> tuple[float, float]:
    """``(l1, linf)``: largest column sum and largest row sum of ``|A|``."""
    M = A.matrix if isinstance(A, EdgeMatrix) else A
    if M.shape[0] == 0:
        return 0.0, 0.0
    absM = abs(M)
    l1 = float(np.max(np.asarray(absM.sum(axis=0))))
    linf = float(np.max(np.asarray(absM.sum(axis=1))))
    return l1, linf


def spectral_radius(A: EdgeMatrix | np.ndarray, tol: float = 1e-13, max_iter: int = 10_000) -> float:
    """Perron root of a nonnegative matrix by power iteration from the all-ones vector.

    The iteration runs on ``A + I``, whose Perron root is ``rho(A) + 1`` and
    which is aperiodic, so the estimate settles even when ``A`` is cyclic
    (as it is on bipartite graphs). The estimate at each step is the
    growth of the l1 mass, which never exceeds ``min(l1, linf)`` of ``A``.
    """
    M = A.matrix if isinstance(A, EdgeMatrix) else A
    m = M.shape[0]
    if m == 0:
        return 0.0
    if (M < 0).sum() if sp.issparse(M) else np.any(M < 0):
        raise ValueError("spectral_radius expects a nonnegative matrix")
    x = np.full(m, 1.0 / m)
    prev = np.inf
    for _ in range(max_iter):
        y = M @ x + x
        lam = float(y.sum())
        x = y / lam
        ratios = (M @ x + x) / x
        if abs(lam - prev) <= tol or float(ratios.max() - ratios.min()) <= tol:
            break
        prev = lam
    return max(lam - 1.0, 0.0)


def gelfand_estimate(A: EdgeMatrix | np.ndarray, squarings: int = 12) -> float:
    """``||A^k||_1^(1/k)`` with ``k = 2**squarings``, computed by normalised repeated squaring."""
    M = A.dense() if isinstance(A, EdgeMatrix) else np.asarray(A, dtype=float)
    if M.shape[0] == 0:
        return 0.0
    log_norm = 0.0
    for _ in range(squarings):
        M = M @ M
        c = float(np.abs(M).sum(axis=0).max())
        if c == 0.0:
            return 0.0
        M /= c
        log_norm = 2.0 * log_norm + np.log(c)
    return float(np.exp(log_norm / 2.0**squarings))


def spectral_norm_estimate(A: EdgeMatrix | np.ndarray, tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on ``A^T A``."""
    M = A.matrix if isinstance(A, EdgeMatrix) else A
    m = M.shape[0]
    if m == 0:
        return 0.0
    x = np.full(m, 1.0 / np.sqrt(m))
    prev = np.inf
    for _ in range(max_iter):
        y = M.T @ (M @ x)
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 0.0
        x = y / lam
        if abs(lam - prev) <= tol * lam:
            break
        prev = lam
    return float(np.sqrt(lam))


def find_safe_uniform(model: IsingModel, beta=None, gamma=None, max_inverse: int = 64) -> tuple[float, float]:
    """Largest ``v`` in ``1, 1/2, 1/3, ...`` with ``rho(A) < 1`` at ``alpha = kappa = v``.

    ``gamma`` does not enter ``A``; it is accepted so callers can pass the
    full parameter set they intend to run with.
    """
    g = model.graph
    beta = np.ones(g.edge_count) if beta is None else np.asarray(beta, dtype=float)
    gamma = np.ones(g.node_count) if gamma is None else np.asarray(gamma, dtype=float)
    rho = np.inf
    for k in range(1, max_inverse + 1):
        v = 1.0 / k
        params = CbpParams(np.full(g.edge_count, v), beta, np.full(g.node_count, v), gamma)
        rho = spectral_radius(build_A(model, params))
        if rho < 1.0:
            return v, rho
    raise RuntimeError(f"no v >= 1/{max_inverse} gives rho(A) < 1 (last rho {rho:.6g})")
