"""Exact marginals: exhaustive enumeration for Ising models, linear algebra for Gaussians."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import logsumexp

from .model import IsingModel

if TYPE_CHECKING:
    from .gaussian import GaussianModel

ENUMERATION_CAP = 20
_CHUNK = 1 << 14


@dataclass(frozen=True, eq=False)
class ExactMarginals:
    """``p_plus[i]`` is ``p(x_i = +1)``; ``log_partition`` is ``log Z``."""

    p_plus: np.ndarray
    log_partition: float


def _spins(n: int, start: int, stop: int) -> np.ndarray:
    """Spin configurations ``start..stop-1``; bit ``i`` of the index set means ``x_i = +1``."""
    idx = np.arange(start, stop, dtype=np.int64)[:, None]
    bits = (idx >> np.arange(n, dtype=np.int64)) & 1
    return (2 * bits - 1).astype(float)


def _enumerate(model: IsingModel, fields: np.ndarray, cap: int) -> tuple[np.ndarray, np.ndarray]:
    """Marginals and log partition for each row of ``fields`` (shape ``(B, n)``)."""
    n = model.n
    if n > cap:
        raise ValueError(f"{n} nodes exceeds the enumeration cap of {cap}")
    ends = np.array(model.graph.edges, dtype=int).reshape(-1, 2)
    total = 1 << n
    # Log-weights of all states for all examples, built chunkwise.
    logw = np.empty((total, fields.shape[0]))
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        x = _spins(n, start, stop)
        pair = (x[:, ends[:, 0]] * x[:, ends[:, 1]]) @ model.couplings
        logw[start:stop] = pair[:, None] + x @ fields.T
    log_z = logsumexp(logw, axis=0)
    w = np.exp(logw - log_z)
    p_plus = np.zeros_like(fields)
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        p_plus += w[start:stop].T @ (_spins(n, start, stop) > 0)
    return np.clip(p_plus, 0.0, 1.0), log_z


def exact_marginals_binary(model: IsingModel, cap: int = ENUMERATION_CAP) -> ExactMarginals:
    """Sum over all ``2**n`` spin states with log-sum-exp stabilisation."""
    if model.n == 0:
        return ExactMarginals(np.zeros(0), 0.0)
    p, log_z = _enumerate(model, model.m_ext[None, :], cap)
    return ExactMarginals(p[0], float(log_z[0]))


def exact_marginals_batch(model: IsingModel, m_ext, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """``p(x_i = +1)`` for each row of ``m_ext``, sharing the coupling energies."""
    fields = np.atleast_2d(np.asarray(m_ext, dtype=float))
    if fields.shape[1] != model.n:
        raise ValueError(f"inputs have {fields.shape[1]} columns for {model.n} nodes")
    # Bound the (states x examples) work array to roughly 128 MB.
    per_pass = max(1, (1 << 24) // (1 << model.n))
    parts = [_enumerate(model, fields[s : s + per_pass], cap)[0] for s in range(0, len(fields), per_pass)]
    return np.vstack(parts)


# Gaussian ------------------------------------------------------------------


class NotPositiveDefinite(ValueError):
    """Raised when an assembled precision matrix is not symmetric positive definite."""

    def __init__(self, min_eigenvalue: float):
        super().__init__(f"assembled precision matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.6g})")
        self.min_eigenvalue = min_eigenvalue


def assemble_precision(gmodel: "GaussianModel", p_ext=None) -> np.ndarray:
    """Global precision matrix from the edge blocks plus the unitary precisions."""
    n = gmodel.graph.node_count
    P = np.zeros((n, n))
    ends = np.array(gmodel.graph.edges, dtype=int).reshape(-1, 2)
    i, j = ends[:, 0], ends[:, 1]
    b = gmodel.blocks
    np.add.at(P, (i, i), b[:, 0])
    np.add.at(P, (j, j), b[:, 2])
    P[i, j] = b[:, 1]
    P[j, i] = b[:, 1]
    P[np.diag_indices(n)] += gmodel.p_ext if p_ext is None else p_ext
    return P


def exact_gaussian(gmodel: "GaussianModel", p_ext=None, mu_ext=None) -> tuple[np.ndarray, np.ndarray]:
    """Exact marginal ``(means, precisions)`` via the inverse of the global precision.

    ``p_ext`` and ``mu_ext`` override the model's unitary potentials.
    """
    p_ext = gmodel.p_ext if p_ext is None else np.asarray(p_ext, dtype=float)
    mu_ext = gmodel.mu_ext if mu_ext is None else np.asarray(mu_ext, dtype=float)
    P = assemble_precision(gmodel, p_ext)
    if P.size == 0:
        return np.zeros(0), np.zeros(0)
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(float(np.linalg.eigvalsh(P)[0])) from None
    cov = np.linalg.inv(P)
    return cov @ (p_ext * mu_ext), 1.0 / np.diag(cov)
