"""Circular BP on scalar Gaussian Markov random fields.

A model has one symmetric positive definite 2x2 precision block per edge,
stored as ``(p_ii, p_ij, p_jj)`` for the canonical ``(i, j)`` with ``i < j``,
plus a unitary precision ``p_ext`` and mean ``mu_ext`` per node. Messages
carry a precision ``P`` and a potential ``v = P * mean``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .exact import exact_gaussian
from .model import CbpParams, UndirectedGraph, gen_erdos_renyi, sum_into_nodes
from .propagation import RunOptions, iterate


@dataclass(frozen=True, eq=False)
class GaussianModel:
    graph: UndirectedGraph
    blocks: np.ndarray
    p_ext: np.ndarray
    mu_ext: np.ndarray

    def __post_init__(self):
        g = self.graph
        blocks = np.array(self.blocks, dtype=float).reshape(-1, 3)
        p_ext = np.array(self.p_ext, dtype=float).reshape(-1)
        mu_ext = np.array(self.mu_ext, dtype=float).reshape(-1)
        if blocks.shape[0] != g.edge_count:
            raise ValueError(f"{blocks.shape[0]} blocks for {g.edge_count} edges")
        if p_ext.shape != (g.node_count,) or mu_ext.shape != (g.node_count,):
            raise ValueError("p_ext and mu_ext need one entry per node")
        for k, (a, c, b) in enumerate(blocks):
            if not (a > 0 and b > 0 and a * b - c * c > 0):
                raise ValueError(f"block on edge {g.edges[k]} is not positive definite")
        if np.any(~(p_ext > 0)):
            raise ValueError(f"p_ext must be positive (node {int(np.argmin(p_ext > 0))})")
        if not np.all(np.isfinite(mu_ext)):
            raise ValueError("mu_ext must be finite")
        for name, arr in (("blocks", blocks), ("p_ext", p_ext), ("mu_ext", mu_ext)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_block_map(cls, graph: UndirectedGraph, blocks: dict, p_ext, mu_ext) -> "GaussianModel":
        """``blocks`` maps ``(i, j)`` to a 2x2 matrix whose first row/column belongs to ``i``."""
        rows = np.empty((graph.edge_count, 3))
        for (i, j), blk in blocks.items():
            blk = np.asarray(blk, dtype=float)
            if i > j:
                i, j, blk = j, i, blk[::-1, ::-1]
            rows[graph.edge_index[(i, j)]] = (blk[0, 0], blk[0, 1], blk[1, 1])
        return cls(graph, rows, p_ext, mu_ext)

    def with_inputs(self, p_ext, mu_ext) -> "GaussianModel":
        return GaussianModel(self.graph, self.blocks, p_ext, mu_ext)


@dataclass(frozen=True, eq=False)
class GaussianInputs:
    """Per-example unitary potentials; both arrays have shape ``(count, n)``."""

    p_ext: np.ndarray
    mu_ext: np.ndarray

    def __len__(self) -> int:
        return self.p_ext.shape[0]


def gaussian_g(y, block, beta=1.0):
    """Precision of a message: ``beta p_jj - (beta p_ij)^2 / (beta p_ii + y)``.

    ``block`` is ``(p_ii, p_ij, p_jj)`` oriented so ``i`` is the sender.
    """
    p_ii, p_ij, p_jj = block
    den = beta * p_ii + y
    if np.any(den == 0):
        raise ZeroDivisionError("beta * p_ii + y vanishes")
    return beta * p_jj - (beta * p_ij) ** 2 / den


def gaussian_h(x, y, block, beta=1.0):
    """Potential of a message: ``-beta p_ij x / (beta p_ii + y)``."""
    p_ii, p_ij, _ = block
    den = beta * p_ii + y
    if np.any(den == 0):
        raise ZeroDivisionError("beta * p_ii + y vanishes")
    return -beta * p_ij * x / den


@dataclass(frozen=True, eq=False)
class GaussianReport:
    converged: bool | np.ndarray
    iterations_used: int | np.ndarray
    final_residual: float | np.ndarray
    precision_messages: np.ndarray
    potential_messages: np.ndarray
    trajectory: np.ndarray | None = None

    def to_dict(self, means, precisions) -> dict:
        return {
            "converged": bool(self.converged),
            "iterations_used": int(self.iterations_used),
            "final_residual": float(self.final_residual),
            "means": [float(m) for m in means],
            "precisions": [float(p) for p in precisions],
        }


def _oriented(gmodel: GaussianModel):
    """Per-directed-edge ``(sender diagonal, off-diagonal, receiver diagonal)``."""
    b = gmodel.blocks
    forward = (np.arange(2 * gmodel.graph.edge_count) % 2) == 0
    und = gmodel.graph.directed_undirected
    send = np.where(forward, b[und, 0], b[und, 2])
    recv = np.where(forward, b[und, 2], b[und, 0])
    return send, b[und, 1], recv


def _node_params(gmodel, params, state, p_ext, v_ext):
    E2 = 2 * gmodel.graph.edge_count
    P_msg, v_msg = state[..., :E2], state[..., E2:]
    inc = gmodel.graph.incoming
    P = params.kappa * (sum_into_nodes(inc, P_msg) + params.gamma * p_ext)
    v = params.kappa * (sum_into_nodes(inc, v_msg) + params.gamma * v_ext)
    return P, v


def _gaussian_sweep(gmodel: GaussianModel, params: CbpParams, p_ext, v_ext):
    g = gmodel.graph
    src, rev, und = g.directed_source, g.directed_reverse, g.directed_undirected
    E2 = 2 * g.edge_count
    send, off, recv = _oriented(gmodel)
    a = params.alpha[und]
    b = params.beta[und]

    def sweep(state):
        P, v = _node_params(gmodel, params, state, p_ext, v_ext)
        P_msg, v_msg = state[..., :E2], state[..., E2:]
        y = P[..., src] - a * P_msg[..., rev]
        x = v[..., src] - a * v_msg[..., rev]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            den = b * send + y
            return np.concatenate([b * recv - (b * off) ** 2 / den, -b * off * x / den], axis=-1)

    return sweep


def run_gaussian_cbp(
    gmodel: GaussianModel,
    params: CbpParams | None = None,
    opts: RunOptions | None = None,
    p_ext=None,
    mu_ext=None,
    init=None,
) -> tuple[np.ndarray, np.ndarray, GaussianReport]:
    """Iterate Gaussian Circular BP; returns ``(means, precisions, report)``.

    Message precisions start at 1 and potentials at 0 unless ``init`` gives
    a ``(precisions, potentials)`` pair. ``p_ext``/``mu_ext`` override the
    model's unitary potentials and may be batches of shape ``(count, n)``.
    """
    opts = opts or RunOptions()
    g = gmodel.graph
    params = params or CbpParams.ones(g)
    params.check(g)
    if np.any(params.kappa == 0):
        raise ValueError("kappa must be nonzero")
    p_ext = gmodel.p_ext if p_ext is None else np.asarray(p_ext, dtype=float)
    mu_ext = gmodel.mu_ext if mu_ext is None else np.asarray(mu_ext, dtype=float)
    v_ext = p_ext * mu_ext
    E2 = 2 * g.edge_count
    lead = p_ext.shape[:-1]
    if init is None:
        state = np.concatenate([np.ones(lead + (E2,)), np.zeros(lead + (E2,))], axis=-1)
    else:
        P0, v0 = (np.broadcast_to(np.asarray(a, dtype=float), lead + (E2,)) for a in init)
        state = np.concatenate([P0, v0], axis=-1)
    res = iterate(_gaussian_sweep(gmodel, params, p_ext, v_ext), state, opts)
    P, v = _node_params(gmodel, params, res.state, p_ext, v_ext)
    with np.errstate(divide="ignore", invalid="ignore"):
        means = v / P
    converged = res.converged & np.all(np.isfinite(res.state), axis=-1)
    if not lead:
        converged, used, resid = bool(converged), int(res.iterations_used), float(res.final_residual)
    else:
        used, resid = res.iterations_used, res.final_residual
    report = GaussianReport(converged, used, resid, res.state[..., :E2], res.state[..., E2:], res.trajectory)
    return means, P, report


# Random models ---------------------------------------------------------------


def sample_gaussian_suite(n: int, p: float, seed: int) -> GaussianModel:
    """Random cyclic-or-not Gaussian model on an Erdos-Renyi graph.

    Per edge: ``s ~ U[5, 10]``, ``J ~ N(0.5, 1)``, ``c = tanh(J) s`` and the
    block is the inverse of ``[[s, c], [c, s]]``. Per node:
    ``p_ext ~ Exponential(rate 3)`` and ``mu_ext ~ N(0, 1)``.
    """
    graph = gen_erdos_renyi(n, p, seed)
    rng = np.random.default_rng([seed, 1])
    E = graph.edge_count
    s = rng.uniform(5.0, 10.0, E)
    J = rng.normal(0.5, 1.0, E)
    c = np.tanh(J) * s
    det = s * s - c * c
    blocks = np.column_stack([s / det, -c / det, s / det])
    inputs = sample_gaussian_inputs(n, 1, seed)
    return GaussianModel(graph, blocks, inputs.p_ext[0], inputs.mu_ext[0])


def sample_gaussian_inputs(n: int, count: int, seed: int) -> GaussianInputs:
    rng = np.random.default_rng([seed, 2])
    p_ext = rng.exponential(scale=1.0 / 3.0, size=(count, n))
    mu_ext = rng.standard_normal((count, n))
    return GaussianInputs(p_ext, mu_ext)


# KL fitting ------------------------------------------------------------------


def kl_per_node(approx, exact) -> np.ndarray:
    """``KL(exact || approx)`` for each node; arguments are ``(means, precisions)``."""
    mu_a, p_a = (np.asarray(a, dtype=float) for a in approx)
    mu_t, p_t = (np.asarray(a, dtype=float) for a in exact)
    if np.any(~(p_a > 0)) or np.any(~(p_t > 0)):
        raise ValueError("precisions must be positive")
    # log(sd_a/sd_t) + (var_t + dmu^2) / (2 var_a) - 1/2 with var = 1/precision
    return 0.5 * (np.log(p_t / p_a) + p_a / p_t + p_a * (mu_t - mu_a) ** 2 - 1.0)


def kl_cost(approx, exact) -> float:
    return float(np.sum(kl_per_node(approx, exact)))


@dataclass(frozen=True)
class GaussianFitOptions:
    max_iters: int = 200
    tol: float = 1e-10
    max_nfev: int = 40
    penalty: float = 1e3

    def run_options(self) -> RunOptions:
        return RunOptions(max_iters=self.max_iters, tol=self.tol)


def exact_targets(gmodel: GaussianModel, inputs: GaussianInputs) -> tuple[np.ndarray, np.ndarray]:
    pairs = [exact_gaussian(gmodel, P, mu) for P, mu in zip(inputs.p_ext, inputs.mu_ext)]
    return np.array([m for m, _ in pairs]), np.array([p for _, p in pairs])


def heldout_kl(gmodel: GaussianModel, params: CbpParams, inputs: GaussianInputs, targets=None, opts: GaussianFitOptions | None = None) -> float:
    """Mean over examples of the summed per-node KL; ``inf`` when a precision is invalid."""
    opts = opts or GaussianFitOptions()
    targets = exact_targets(gmodel, inputs) if targets is None else targets
    means, precs, _ = run_gaussian_cbp(gmodel, params, opts.run_options(), inputs.p_ext, inputs.mu_ext)
    if not (np.all(np.isfinite(means)) and np.all(precs > 0)):
        return np.inf
    return float(np.mean(np.sum(kl_per_node((means, precs), targets), axis=-1)))


def fit_gaussian(gmodel: GaussianModel, train: GaussianInputs, val: GaussianInputs, opts: GaussianFitOptions | None = None) -> CbpParams:
    """Least-squares fit of all four parameter groups to exact marginals.

    Residuals are ``sqrt(KL)`` per node and example, so the squared residual
    sum is the total KL. Starts from all ones; returns whichever of start and
    fit has the lower validation KL.
    """
    opts = opts or GaussianFitOptions()
    g = gmodel.graph
    train_t = exact_targets(gmodel, train)
    val_t = exact_targets(gmodel, val)
    run_opts = opts.run_options()
    size = train.p_ext.size

    def residuals(x):
        params = CbpParams.from_vector(g, x)
        if np.any(params.kappa == 0):
            return np.full(size, opts.penalty)
        means, precs, _ = run_gaussian_cbp(gmodel, params, run_opts, train.p_ext, train.mu_ext)
        ok = np.isfinite(means) & (precs > 0)
        kl = np.full(means.shape, opts.penalty**2)
        with np.errstate(divide="ignore", invalid="ignore"):
            good = kl_per_node((np.where(ok, means, 0.0), np.where(ok, precs, 1.0)), train_t)
        kl = np.where(ok, good, kl)
        return np.sqrt(np.maximum(kl, 0.0)).reshape(-1)

    start = CbpParams.ones(g)
    best, best_val = start, heldout_kl(gmodel, start, val, val_t, opts)
    try:
        fit = least_squares(residuals, start.to_vector(), method="trf", max_nfev=opts.max_nfev)
        candidate = CbpParams.from_vector(g, fit.x)
        cand_val = heldout_kl(gmodel, candidate, val, val_t, opts)
        if cand_val < best_val:
            best = candidate
    except (ValueError, FloatingPointError):
        pass
    return best
