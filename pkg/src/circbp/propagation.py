"""Log-domain message passing on Ising models.

Messages ``M[d]`` and beliefs ``B[i]`` are half log-odds, so the belief
marginal is ``p(x_i = +1) = sigmoid(2 B_i)``. All engines use a synchronous
schedule: beliefs are formed from the previous message vector, then every
message is recomputed at once.

Every function accepts either a single message vector of length ``2|E|`` or a
batch of shape ``(batch, 2|E|)`` together with fields of shape ``(batch, n)``.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import CbpParams, IsingModel, sum_into_nodes

CLAMP = 1e-12
F_LIMIT = float(np.arctanh(1.0 - CLAMP))


def _f_saturated(x, J, z):
    # min(|x|,|J|) plus a non-positive log1p correction; exact where tanh*tanh rounds toward 1
    a, b = np.abs(x), np.abs(J)
    gap = np.log1p(np.exp(-2.0 * (a + b))) - np.log1p(np.exp(-2.0 * np.abs(a - b)))
    return np.copysign(np.minimum(np.minimum(a, b) + 0.5 * gap, F_LIMIT), z)


def f_update(x, J):
    """``arctanh(tanh(J) tanh(x))`` with the product clamped away from +-1.

    Products above 0.99 in magnitude have lost relative precision, so those
    entries are recomputed from an equivalent log1p form.
    """
    z = np.tanh(J) * np.tanh(x)
    out = np.arctanh(np.clip(z, -1.0 + CLAMP, 1.0 - CLAMP))
    near = np.abs(z) > 0.99
    if not near.any():
        return out
    if np.ndim(out) == 0:
        return _f_saturated(x, J, z)
    x, J = np.broadcast_arrays(x, J)
    out[near] = _f_saturated(x[near], J[near], z[near])
    return out


def g_update(x, J, alpha, beta):
    """Reweighted update ``(1/alpha) arctanh(tanh(alpha beta J) tanh(x))``."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha == 0):
        raise ValueError("alpha must be nonzero for the reweighted update")
    return f_update(x, alpha * beta * J) / alpha


@dataclass(frozen=True)
class RunOptions:
    """Iteration controls shared by every engine.

    ``init`` is ``"zero"`` or ``"random"``; random messages are
    ``init_scale * N(0, 1)`` drawn from ``seed``. ``record`` keeps the full
    state trajectory (initial state first).
    """

    max_iters: int = 100
    tol: float = 1e-8
    damping: float = 0.0
    init: str = "zero"
    seed: int = 0
    init_scale: float = 1.0
    record: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.init not in ("zero", "random"):
            raise ValueError(f"unknown init {self.init!r}")

    def initial_state(self, shape) -> np.ndarray:
        if self.init == "zero":
            return np.zeros(shape)
        return self.init_scale * np.random.default_rng(self.seed).standard_normal(shape)


@dataclass(frozen=True, eq=False)
class RunReport:
    converged: bool
    iterations_used: int
    final_residual: float
    beliefs: np.ndarray
    messages: np.ndarray
    trajectory: np.ndarray | None = None

    @property
    def marginals(self) -> np.ndarray:
        return expit(2.0 * self.beliefs)

    def to_dict(self) -> dict:
        return {
            "converged": bool(self.converged),
            "iterations_used": int(self.iterations_used),
            "final_residual": float(self.final_residual),
            "beliefs": [float(p) for p in self.marginals],
        }


@dataclass(frozen=True, eq=False)
class BatchReport:
    """Per-example outcome of a batched run; arrays have a leading batch axis."""

    converged: np.ndarray
    iterations_used: np.ndarray
    final_residual: np.ndarray
    beliefs: np.ndarray
    messages: np.ndarray

    @property
    def marginals(self) -> np.ndarray:
        return expit(2.0 * self.beliefs)

    def report(self, k: int) -> RunReport:
        return RunReport(
            bool(self.converged[k]),
            int(self.iterations_used[k]),
            float(self.final_residual[k]),
            self.beliefs[k],
            self.messages[k],
        )


@dataclass(frozen=True, eq=False)
class IterationResult:
    state: np.ndarray
    converged: np.ndarray
    iterations_used: np.ndarray
    final_residual: np.ndarray
    trajectory: np.ndarray | None


def iterate(sweep: Callable[[np.ndarray], np.ndarray], state: np.ndarray, opts: RunOptions) -> IterationResult:
    """Damped fixed-point loop shared by the binary and Gaussian engines.

    The residual of an example is the largest absolute change of its state
    in the last sweep. The loop stops when every example is at or below
    ``opts.tol`` or after ``opts.max_iters`` sweeps.
    """
    eps = opts.damping
    batch_shape = state.shape[:-1]
    first_hit = np.full(batch_shape, -1, dtype=np.int64)
    residual = np.full(batch_shape, np.inf)
    history = [state.copy()] if opts.record else None
    it = 0
    while it < opts.max_iters:
        it += 1
        new = sweep(state)
        if eps:
            new = (1.0 - eps) * new + eps * state
        residual = np.max(np.abs(new - state), axis=-1, initial=0.0)
        state = new
        if history is not None:
            history.append(state.copy())
        ok = residual <= opts.tol
        first_hit = np.where(ok & (first_hit < 0), it, first_hit)
        if np.all(ok):
            break
    converged = residual <= opts.tol
    used = np.where(converged & (first_hit > 0), first_hit, it)
    return IterationResult(
        state,
        converged,
        used,
        residual,
        np.stack(history) if history is not None else None,
    )


# Circular BP ---------------------------------------------------------------


def compute_beliefs(model: IsingModel, params: CbpParams, messages: np.ndarray, m_ext=None) -> np.ndarray:
    """``B_i = kappa_i (sum_j M_{j->i} + gamma_i M_ext_i)``."""
    h = model.m_ext if m_ext is None else m_ext
    return params.kappa * (sum_into_nodes(model.graph.incoming, messages) + params.gamma * h)


def _cbp_sweep(model: IsingModel, params: CbpParams, m_ext, variant: str = "cbp"):
    g = model.graph
    src, rev, und = g.directed_source, g.directed_reverse, g.directed_undirected
    alpha = params.alpha[und]
    coupling = (params.beta * model.couplings)[und]
    kappa, gamma = params.kappa, params.gamma
    incoming = g.incoming

    def sweep(M: np.ndarray) -> np.ndarray:
        B = kappa * (sum_into_nodes(incoming, M) + gamma * m_ext)
        x = B[..., src] - alpha * M[..., rev]
        if variant == "reweighted":
            return f_update(x, alpha * coupling) / alpha
        return f_update(x, coupling)

    return sweep


def step_cbp(model: IsingModel, params: CbpParams, messages: np.ndarray, damping: float = 0.0, m_ext=None) -> np.ndarray:
    """One synchronous Circular BP sweep, optionally damped."""
    h = model.m_ext if m_ext is None else m_ext
    new = _cbp_sweep(model, params, h)(messages)
    if damping:
        new = (1.0 - damping) * new + damping * messages
    return new


def _single_report(model, params, result: IterationResult) -> RunReport:
    return RunReport(
        bool(result.converged),
        int(result.iterations_used),
        float(result.final_residual),
        compute_beliefs(model, params, result.state),
        result.state,
        result.trajectory,
    )


def _start(model: IsingModel, opts: RunOptions, init_messages, batch: int | None = None) -> np.ndarray:
    shape = (2 * model.graph.edge_count,) if batch is None else (batch, 2 * model.graph.edge_count)
    if init_messages is None:
        return opts.initial_state(shape)
    m0 = np.array(init_messages, dtype=float)
    if m0.shape != shape:
        m0 = np.broadcast_to(m0, shape).copy()
    return m0


def run_cbp(model: IsingModel, params: CbpParams, opts: RunOptions | None = None, init_messages=None) -> RunReport:
    """Iterate Circular BP to a fixed point (or ``max_iters``)."""
    opts = opts or RunOptions()
    params.check(model.graph)
    result = iterate(_cbp_sweep(model, params, model.m_ext), _start(model, opts, init_messages), opts)
    return _single_report(model, params, result)


def run_reweighted(model: IsingModel, params: CbpParams, opts: RunOptions | None = None, init_messages=None) -> RunReport:
    """Reweighted (fractional) BP: the Circular BP loop with ``g_update`` in place of ``f_update``."""
    opts = opts or RunOptions()
    params.check(model.graph)
    if np.any(params.alpha == 0):
        raise ValueError(f"alpha is zero on edge {model.graph.edges[int(np.flatnonzero(params.alpha == 0)[0])]}")
    result = iterate(_cbp_sweep(model, params, model.m_ext, "reweighted"), _start(model, opts, init_messages), opts)
    return _single_report(model, params, result)


def _bp_sweep(model: IsingModel, m_ext):
    g = model.graph
    src, rev, und = g.directed_source, g.directed_reverse, g.directed_undirected
    J = model.couplings[und]

    def sweep(M: np.ndarray) -> np.ndarray:
        total = sum_into_nodes(g.incoming, M) + m_ext
        cavity = total[..., src] - M[..., rev]
        return f_update(cavity, J)

    return sweep


def step_bp(model: IsingModel, messages: np.ndarray, m_ext=None) -> np.ndarray:
    """One synchronous BP sweep: each message excludes the reverse message from the sender's total field."""
    return _bp_sweep(model, model.m_ext if m_ext is None else m_ext)(messages)


def run_bp(model: IsingModel, opts: RunOptions | None = None, init_messages=None) -> RunReport:
    opts = opts or RunOptions()
    result = iterate(_bp_sweep(model, model.m_ext), _start(model, opts, init_messages), opts)
    return _single_report(model, CbpParams.ones(model.graph), result)


# Mean field ----------------------------------------------------------------


def _mean_field_sweep(model: IsingModel, m_ext):
    g = model.graph
    src, und = g.directed_source, g.directed_undirected
    J = model.couplings[und]

    def sweep(B: np.ndarray) -> np.ndarray:
        return m_ext + sum_into_nodes(g.incoming, J * np.tanh(B[..., src]))

    return sweep


def run_mean_field(model: IsingModel, opts: RunOptions | None = None, init_beliefs=None) -> RunReport:
    """Naive mean field ``B_i <- sum_j J_ij tanh(B_j) + M_ext_i`` with synchronous, damped updates.

    The reported messages are ``J_ij tanh(B_i)`` for each directed edge ``i -> j``.
    """
    opts = opts or RunOptions()
    g = model.graph
    B0 = opts.initial_state(g.node_count) if init_beliefs is None else np.array(init_beliefs, dtype=float)
    result = iterate(_mean_field_sweep(model, model.m_ext), B0, opts)
    B = result.state
    messages = model.couplings[g.directed_undirected] * np.tanh(B[g.directed_source])
    return RunReport(
        bool(result.converged),
        int(result.iterations_used),
        float(result.final_residual),
        B,
        messages,
        result.trajectory,
    )


# Batched runs --------------------------------------------------------------

METHODS = ("bp", "cbp", "reweighted", "mean-field")


def run_batch(
    model: IsingModel,
    m_ext,
    method: str = "cbp",
    params: CbpParams | None = None,
    opts: RunOptions | None = None,
    init_state=None,
) -> BatchReport:
    """Run one engine on every row of ``m_ext`` at once.

    ``method`` is one of ``METHODS``; ``params`` is required for ``cbp``
    and ``reweighted``. Every example keeps iterating until all have
    converged, which leaves converged examples at their fixed point.
    """
    opts = opts or RunOptions()
    h = np.atleast_2d(np.asarray(m_ext, dtype=float))
    g = model.graph
    batch = h.shape[0]
    if method == "mean-field":
        B0 = opts.initial_state((batch, g.node_count)) if init_state is None else np.array(init_state, dtype=float)
        res = iterate(_mean_field_sweep(model, h), B0, opts)
        B = res.state
        messages = model.couplings[g.directed_undirected] * np.tanh(B[:, g.directed_source])
        return BatchReport(res.converged, res.iterations_used, res.final_residual, B, messages)
    if method == "bp":
        params = CbpParams.ones(g)
        sweep = _bp_sweep(model, h)
    elif method in ("cbp", "reweighted"):
        if params is None:
            raise ValueError(f"method {method!r} needs parameters")
        params.check(g)
        if method == "reweighted" and np.any(params.alpha == 0):
            raise ValueError("alpha must be nonzero for the reweighted update")
        sweep = _cbp_sweep(model, params, h, method)
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    res = iterate(sweep, _start(model, opts, init_state, batch), opts)
    B = compute_beliefs(model, params, res.state, h)
    return BatchReport(res.converged, res.iterations_used, res.final_residual, B, res.state)
