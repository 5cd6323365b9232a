"""Fitting Circular BP parameters.

Supervised fitting unrolls ``T`` synchronous sweeps from zero messages,
differentiates the mean squared error between belief marginals and exact
marginals by hand-written reverse mode, and optimises with Rprop and/or a
trust-region least-squares solver. Unsupervised fitting applies local
per-example rules for ``alpha`` and ``kappa`` on noise inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit

from .convergence import find_safe_uniform
from .model import CbpParams, IsingModel, TrainingSet, sum_into_nodes
from .propagation import CLAMP, RunOptions, compute_beliefs, f_update, iterate, _cbp_sweep

VARIANTS = ("cbp", "reweighted")
OPTIMIZERS = ("rprop", "least-squares", "both")


@dataclass(frozen=True)
class FitOptions:
    """Supervised fitting controls.

    ``optimizer="both"`` runs Rprop and least squares from the same start and
    keeps whichever has the lower validation loss.
    """

    T: int = 100
    lr: float = 0.001
    max_epochs: int = 300
    patience: int = 40
    optimizer: str = "both"
    variant: str = "cbp"
    max_nfev: int = 60

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass(frozen=True)
class UnsupOptions:
    """Unsupervised fitting controls.

    Noise inputs are ``input_scale * N(0, 1)``. Both rates are halved after a
    third and after two thirds of the examples.
    """

    n_examples: int = 5000
    eta1: float = 0.03
    eta2: float = 0.0003
    damping: float = 0.7
    T: int = 100
    input_scale: float = 1.0

    def __post_init__(self):
        if self.eta1 < 0 or self.eta2 < 0:
            raise ValueError("learning rates must be nonnegative")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.n_examples < 1 or self.T < 1:
            raise ValueError("n_examples and T must be at least 1")

    def run_options(self) -> RunOptions:
        return RunOptions(max_iters=self.T, damping=self.damping)


def _targets(target) -> np.ndarray:
    return np.asarray(getattr(target, "p_plus", target), dtype=float)


def loss_mse(beliefs, target) -> float:
    """Mean over nodes (and examples) of ``(sigmoid(2 B_i) - p_i)^2``.

    ``beliefs`` are half log-odds; ``target`` holds probabilities or is an
    :class:`~circbp.exact.ExactMarginals`.
    """
    b = np.asarray(beliefs, dtype=float)
    p = _targets(target)
    if b.shape != p.shape:
        raise ValueError(f"beliefs have shape {b.shape}, targets {p.shape}")
    return float(np.mean((expit(2.0 * b) - p) ** 2))


def score(per_graph_mse) -> float:
    """``-mean(log10(mse))`` over graphs; higher is better."""
    mse = np.asarray(per_graph_mse, dtype=float)
    if mse.size == 0 or np.any(~(mse > 0)):
        raise ValueError("score needs at least one strictly positive MSE")
    return float(-np.mean(np.log10(mse)))


# Unrolled iteration and its reverse pass ------------------------------------


class Unrolled:
    """``T`` synchronous sweeps from zero messages on a batch of inputs.

    After construction ``beliefs`` holds ``B`` after the last sweep, and
    :meth:`backward` maps a cotangent on those beliefs to per-example
    parameter gradients laid out like :meth:`CbpParams.to_vector`.
    """

    def __init__(self, model: IsingModel, params: CbpParams, m_ext, T: int, damping: float = 0.0, variant: str = "cbp"):
        g = model.graph
        self.model, self.params, self.T, self.damping, self.variant = model, params, T, damping, variant
        self.h = np.atleast_2d(np.asarray(m_ext, dtype=float))
        und = g.directed_undirected
        self.a = params.alpha[und]
        self.Jd = model.couplings[und]
        self.bd = params.beta[und]
        self.K = self.bd * self.Jd * (self.a if variant == "reweighted" else 1.0)
        M = np.zeros((self.h.shape[0], 2 * g.edge_count))
        self.states = [M]
        for _ in range(T):
            F = self._local(M)[-1]
            M = (1.0 - damping) * F + damping * M if damping else F
            self.states.append(M)
        self.beliefs = compute_beliefs(model, params, M, self.h)

    def _local(self, M):
        g, p = self.model.graph, self.params
        field = sum_into_nodes(g.incoming, M) + p.gamma * self.h
        x = (p.kappa * field)[:, g.directed_source] - self.a * M[:, g.directed_reverse]
        y = np.tanh(x)
        t = np.tanh(self.K)
        z = t * y
        f = f_update(x, self.K)
        F = f / self.a if self.variant == "reweighted" else f
        return field, y, t, z, f, F

    def backward(self, grad_beliefs: np.ndarray) -> np.ndarray:
        g, p = self.model.graph, self.params
        src, tgt, rev = g.directed_source, g.directed_target, g.directed_reverse
        batch, E, n = self.h.shape[0], g.edge_count, g.node_count
        ga = np.zeros((batch, 2 * E))
        gb = np.zeros((batch, 2 * E))
        gk = np.zeros((batch, n))
        gg = np.zeros((batch, n))

        def through_beliefs(gB, M):
            field = sum_into_nodes(g.incoming, M) + p.gamma * self.h
            gk[...] += gB * field
            gg[...] += gB * p.kappa * self.h
            return (p.kappa * gB)[:, tgt]

        gM = through_beliefs(grad_beliefs, self.states[-1])
        eps = self.damping
        for t in range(self.T - 1, -1, -1):
            M = self.states[t]
            _, y, tK, z, f, _ = self._local(M)
            gF = (1.0 - eps) * gM if eps else gM
            carry = eps * gM if eps else np.zeros_like(gM)
            if self.variant == "reweighted":
                gf = gF / self.a
                ga += -gF * f / self.a**2
            else:
                gf = gF
            active = np.abs(z) < 1.0 - CLAMP
            gz = np.where(active, gf / (1.0 - z * z), 0.0)
            gx = gz * tK * (1.0 - y * y)
            gK = gz * y * (1.0 - tK * tK)
            if self.variant == "reweighted":
                ga += gK * self.bd * self.Jd
                gb += gK * self.a * self.Jd
            else:
                gb += gK * self.Jd
            ga += -gx * M[:, rev]
            carry += (-self.a * gx)[:, rev]
            gB = sum_into_nodes(g.outgoing, gx)
            carry += through_beliefs(gB, M)
            gM = carry
        per_edge = lambda v: v.reshape(batch, E, 2).sum(axis=-1)  # noqa: E731
        return np.concatenate([per_edge(ga), gk, per_edge(gb), gg], axis=1)


def _loss_cotangent(B: np.ndarray, p: np.ndarray) -> np.ndarray:
    s = expit(2.0 * B)
    return 4.0 * (s - p) * s * (1.0 - s) / B.size


def _gradient_params(graph, vec) -> CbpParams:
    return CbpParams.from_vector(graph, vec)


def grad_supervised(model: IsingModel, params: CbpParams, m_ext, target, T: int = 100, damping: float = 0.0, variant: str = "cbp") -> tuple[float, CbpParams]:
    """Loss and its exact gradient after ``T`` sweeps from zero messages.

    ``m_ext`` and ``target`` may be single vectors or aligned batches; the
    loss is the mean over every node of every example. The gradient is
    returned as a :class:`CbpParams` holding d loss / d parameter.
    """
    p = np.atleast_2d(_targets(target))
    run = Unrolled(model, params, m_ext, T, damping, variant)
    loss = loss_mse(run.beliefs, p)
    grad = run.backward(_loss_cotangent(run.beliefs, p)).sum(axis=0)
    return loss, _gradient_params(model.graph, grad)


def unrolled_loss(model, params, m_ext, target, T, variant="cbp") -> float:
    run = Unrolled(model, params, m_ext, T, 0.0, variant)
    return loss_mse(run.beliefs, np.atleast_2d(_targets(target)))


# Optimisers ------------------------------------------------------------------


def rprop(
    objective,
    x0: np.ndarray,
    lr: float,
    max_epochs: int,
    patience: int,
    validate,
    history: list | None = None,
    grow: float = 1.2,
    shrink: float = 0.5,
    step_bounds: tuple[float, float] = (1e-6, 1.0),
) -> tuple[np.ndarray, float]:
    """Sign-based Rprop (the variant that skips the update after a sign flip).

    ``objective(x)`` returns ``(loss, grad)``; ``validate(x)`` returns the
    validation loss. Returns the best-validation point and its loss.
    """
    x = np.array(x0, dtype=float)
    step = np.full_like(x, lr)
    prev = np.zeros_like(x)
    best_x, best_val = x.copy(), np.inf
    stale = 0
    for epoch in range(max_epochs + 1):
        train, grad = objective(x)
        val = validate(x)
        if history is not None:
            history.append({"epoch": epoch, "optimizer": "rprop", "train_loss": train, "val_loss": val})
        if val < best_val:
            best_x, best_val, stale = x.copy(), val, 0
        else:
            stale += 1
            if stale > patience:
                break
        if epoch == max_epochs or not np.all(np.isfinite(grad)):
            break
        agree = grad * prev
        step = np.where(agree > 0, np.minimum(step * grow, step_bounds[1]), step)
        step = np.where(agree < 0, np.maximum(step * shrink, step_bounds[0]), step)
        grad = np.where(agree < 0, 0.0, grad)
        x = x - np.sign(grad) * step
        prev = grad
    return best_x, best_val


def fit_supervised(
    model: IsingModel,
    train: TrainingSet,
    val: TrainingSet,
    opts: FitOptions | None = None,
    history: list | None = None,
) -> CbpParams:
    """Fit ``(alpha, kappa, beta, gamma)`` to exact marginals.

    Circular BP starts from ``beta = gamma = 1`` and ``alpha = kappa = v``
    from :func:`find_safe_uniform`; the reweighted variant starts from all
    ones. The returned parameters have the lowest validation loss among the
    starting point and the optimiser results.
    """
    opts = opts or FitOptions()
    if train.targets is None or val.targets is None:
        raise ValueError("supervised fitting needs exact targets on both splits")
    g = model.graph
    if opts.variant == "cbp":
        v, _ = find_safe_uniform(model)
        start = CbpParams.uniform(g, alpha=v, kappa=v)
    else:
        start = CbpParams.ones(g)
    x0 = start.to_vector()

    def unpack(x):
        return CbpParams.from_vector(g, x)

    def finite(x):
        return bool(np.all(np.isfinite(x)))

    def validate(x):
        if not finite(x) or (opts.variant == "reweighted" and np.any(x[: g.edge_count] == 0)):
            return np.inf
        loss = unrolled_loss(model, unpack(x), val.m_ext, val.targets, opts.T, opts.variant)
        return loss if np.isfinite(loss) else np.inf

    def objective(x):
        loss, grad = grad_supervised(model, unpack(x), train.m_ext, train.targets, opts.T, 0.0, opts.variant)
        return loss, grad.to_vector()

    best_x, best_val = x0, validate(x0)
    if history is not None:
        history.append({"epoch": 0, "optimizer": "init", "train_loss": objective(x0)[0], "val_loss": best_val})
    if opts.optimizer in ("rprop", "both"):
        x, val_loss = rprop(objective, x0, opts.lr, opts.max_epochs, opts.patience, validate, history)
        if val_loss < best_val:
            best_x, best_val = x, val_loss
    if opts.optimizer in ("least-squares", "both"):
        x = _least_squares_fit(model, train, x0, opts)
        val_loss = validate(x)
        if history is not None:
            history.append({"epoch": 0, "optimizer": "least-squares", "train_loss": unrolled_loss(model, unpack(x), train.m_ext, train.targets, opts.T, opts.variant), "val_loss": val_loss})
        if val_loss < best_val:
            best_x, best_val = x, val_loss
    return unpack(best_x)


def _least_squares_fit(model, train: TrainingSet, x0, opts: FitOptions) -> np.ndarray:
    g = model.graph
    p = train.targets
    scale = 1.0 / np.sqrt(p.size)

    def residuals(x):
        run = Unrolled(model, CbpParams.from_vector(g, x), train.m_ext, opts.T, 0.0, opts.variant)
        r = (expit(2.0 * run.beliefs) - p) * scale
        return r.reshape(-1) if np.all(np.isfinite(r)) else np.full(p.size, 1e3)

    def jacobian(x):
        run = Unrolled(model, CbpParams.from_vector(g, x), train.m_ext, opts.T, 0.0, opts.variant)
        s = expit(2.0 * run.beliefs)
        slope = 2.0 * s * (1.0 - s) * scale
        jac = np.empty((p.shape[0], g.node_count, x.size))
        for i in range(g.node_count):
            seed = np.zeros_like(s)
            seed[:, i] = slope[:, i]
            jac[:, i, :] = run.backward(seed)
        jac = jac.reshape(p.size, x.size)
        return np.where(np.isfinite(jac), jac, 0.0)

    try:
        result = least_squares(residuals, x0, jac=jacobian, method="trf", max_nfev=opts.max_nfev)
    except (ValueError, FloatingPointError):
        return x0
    return result.x


# Unsupervised rules ----------------------------------------------------------


def unsupervised_deltas(model: IsingModel, params: CbpParams, messages, beliefs, m_ext, eta1: float, eta2: float) -> tuple[np.ndarray, np.ndarray]:
    """``(d_alpha, d_kappa)`` from one example's messages and beliefs.

    For edge ``(i, j)``:
    ``d_alpha = eta1 [M_ji (B_i - alpha M_ji) + M_ij (B_j - alpha M_ij)]``;
    for node ``i``: ``d_kappa = -eta2 M_ext_i (B_i - M_ext_i)``.
    """
    g = model.graph
    M = np.asarray(messages, dtype=float)
    B = np.asarray(beliefs, dtype=float)
    h = np.asarray(m_ext, dtype=float)
    a = params.alpha[g.directed_undirected]
    term = M * (B[g.directed_target] - a * M)
    d_alpha = eta1 * term.reshape(g.edge_count, 2).sum(axis=1)
    d_kappa = -eta2 * h * (B - h)
    return d_alpha, d_kappa


def unsupervised_step(model: IsingModel, params: CbpParams, example, eta1: float, eta2: float, opts: RunOptions | None = None) -> CbpParams:
    """Run Circular BP on one input and apply the local ``alpha``/``kappa`` rules."""
    opts = opts or RunOptions()
    h = np.asarray(example, dtype=float)
    res = iterate(_cbp_sweep(model, params, h), opts.initial_state(2 * model.graph.edge_count), opts)
    B = compute_beliefs(model, params, res.state, h)
    d_alpha, d_kappa = unsupervised_deltas(model, params, res.state, B, h, eta1, eta2)
    return CbpParams(params.alpha + d_alpha, params.beta, params.kappa + d_kappa, params.gamma)


def fit_unsupervised(model: IsingModel, opts: UnsupOptions | None = None, seed: int = 0, init: CbpParams | None = None, history: list | None = None) -> CbpParams:
    """Online local learning of ``alpha`` and ``kappa`` on noise inputs.

    Unless ``init`` is given, starts from ``alpha = kappa = v`` with ``v``
    from :func:`find_safe_uniform`, so the first runs are guaranteed to
    converge. ``beta`` and ``gamma`` are never changed.
    """
    opts = opts or UnsupOptions()
    g = model.graph
    if init is None:
        v, _ = find_safe_uniform(model)
        init = CbpParams.uniform(g, alpha=v, kappa=v)
    params = init
    noise = opts.input_scale * np.random.default_rng(seed).standard_normal((opts.n_examples, g.node_count))
    run_opts = opts.run_options()
    cuts = (opts.n_examples / 3.0, 2.0 * opts.n_examples / 3.0)
    for k, h in enumerate(noise):
        factor = 0.5 ** sum(k >= c for c in cuts)
        params = unsupervised_step(model, params, h, opts.eta1 * factor, opts.eta2 * factor, run_opts)
        if history is not None and (k + 1) % max(1, opts.n_examples // 20) == 0:
            history.append({"example": k + 1, "mean_alpha": float(params.alpha.mean()) if g.edge_count else 0.0, "mean_kappa": float(params.kappa.mean())})
    return params
