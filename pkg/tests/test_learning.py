import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from circbp.exact import exact_marginals_batch
from circbp.model import (
    CbpParams,
    TrainingSet,
    UndirectedGraph,
    build_ising,
    complete_graph,
    gen_erdos_renyi,
    random_tree,
    sample_inputs,
    sample_spin_glass,
)
from circbp.learning import (
    FitOptions,
    UnsupOptions,
    Unrolled,
    fit_supervised,
    fit_unsupervised,
    grad_supervised,
    loss_mse,
    rprop,
    score,
    unrolled_loss,
    unsupervised_deltas,
    unsupervised_step,
)
from circbp.propagation import RunOptions, run_batch, run_cbp

# mpmath, 40 digits: (sigmoid(2) - 1/2)^2
SIGMOID2_GAP_SQ = 0.1450064145964934826513758152395746387707


def fd_gradient(model, params, h, p, T, variant="cbp", step=1e-5):
    g = model.graph
    x0 = params.to_vector()
    out = np.empty_like(x0)
    for k in range(x0.size):
        up, dn = x0.copy(), x0.copy()
        up[k] += step
        dn[k] -= step
        lu = unrolled_loss(model, CbpParams.from_vector(g, up), h, p, T, variant)
        ld = unrolled_loss(model, CbpParams.from_vector(g, dn), h, p, T, variant)
        out[k] = (lu - ld) / (2 * step)
    return out


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def random_instance(seed, n_max=6, T_max=20):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, n_max + 1))
    g = gen_erdos_renyi(n, 0.7, seed)
    while g.edge_count == 0:
        seed += 1000
        g = gen_erdos_renyi(n, 0.7, seed)
    model = build_ising(g, 0.6 * rng.normal(size=g.edge_count), np.zeros(n))
    params = CbpParams(
        rng.uniform(0.3, 1.0, g.edge_count),
        rng.uniform(0.5, 1.2, g.edge_count),
        rng.uniform(0.5, 1.0, n),
        rng.uniform(0.5, 1.5, n),
    )
    h = rng.normal(size=(3, n))
    p = rng.uniform(0.05, 0.95, size=(3, n))
    T = int(rng.integers(1, T_max + 1))
    return model, params, h, p, T


class TestLoss:
    def test_perfect_fit(self):
        assert loss_mse([0.3, -0.2], 1 / (1 + np.exp(-2 * np.array([0.3, -0.2])))) == 0.0

    def test_extreme(self):
        assert loss_mse([50.0], [0.0]) == pytest.approx(1.0)

    def test_factorized_hand_value(self):
        h = np.ones(4)
        target = 1 / (1 + np.exp(-2 * h))
        assert loss_mse(np.zeros(4), target) == pytest.approx(SIGMOID2_GAP_SQ, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_mse([0.0, 0.0], [0.5])


class TestScore:
    def test_examples(self):
        assert score([0.01]) == pytest.approx(2.0)
        assert score([0.1, 0.001]) == pytest.approx(2.0)

    @pytest.mark.parametrize("bad", [[0.0], [-1.0], []])
    def test_rejects_nonpositive(self, bad):
        with pytest.raises(ValueError):
            score(bad)


class TestGradient:
    @pytest.mark.parametrize("variant", ["cbp", "reweighted"])
    def test_matches_central_differences(self, variant):
        worst = 0.0
        for seed in range(25):
            model, params, h, p, T = random_instance(seed)
            _, grad = grad_supervised(model, params, h, p, T, variant=variant)
            worst = max(worst, relative_error(grad.to_vector(), fd_gradient(model, params, h, p, T, variant)))
        assert worst < 1e-4

    def test_damped_unroll_gradient(self):
        model, params, h, p, T = random_instance(3)
        run = Unrolled(model, params, h, T, damping=0.4)
        s = 1 / (1 + np.exp(-2 * run.beliefs))
        cot = 4 * (s - p) * s * (1 - s) / p.size
        analytic = run.backward(cot).sum(axis=0)
        g = model.graph
        x0 = params.to_vector()
        fd = np.empty_like(x0)
        for k in range(x0.size):
            e = np.zeros_like(x0)
            e[k] = 1e-5
            lu = loss_mse(Unrolled(model, CbpParams.from_vector(g, x0 + e), h, T, 0.4).beliefs, p)
            ld = loss_mse(Unrolled(model, CbpParams.from_vector(g, x0 - e), h, T, 0.4).beliefs, p)
            fd[k] = (lu - ld) / 2e-5
        assert relative_error(analytic, fd) < 1e-4

    def test_zero_at_perfect_fit(self):
        model, params, h, _, T = random_instance(7)
        p = 1 / (1 + np.exp(-2 * Unrolled(model, params, h, T).beliefs))
        loss, grad = grad_supervised(model, params, h, p, T)
        assert loss < 1e-30
        assert np.abs(grad.to_vector()).max() < 1e-10

    def test_single_edge_beta(self):
        model = build_ising(UndirectedGraph(2, [(0, 1)]), [0.9], [0.0, 0.0])
        params = CbpParams([0.6], [1.1], [0.8, 0.9], [1.2, 0.7])
        h, p = np.array([[0.4, -0.3]]), np.array([[0.3, 0.6]])
        _, grad = grad_supervised(model, params, h, p, 10)
        fd = fd_gradient(model, params, h, p, 10)
        assert grad.beta[0] == pytest.approx(fd[3], rel=1e-6)

    def test_relabeling_permutes_gradient(self):
        model, params, h, p, T = random_instance(11)
        n, g = model.n, model.graph
        perm = np.random.default_rng(0).permutation(n)  # old node i becomes perm[i]
        g2 = UndirectedGraph(n, [(perm[i], perm[j]) for i, j in g.edges])
        emap = {(min(perm[i], perm[j]), max(perm[i], perm[j])): e for e, (i, j) in enumerate(g.edges)}
        order = np.array([emap[e] for e in g2.edges])
        inv = np.argsort(perm)
        model2 = build_ising(g2, model.couplings[order], np.zeros(n))
        params2 = CbpParams(params.alpha[order], params.beta[order], params.kappa[inv], params.gamma[inv])
        _, g1 = grad_supervised(model, params, h, p, T)
        _, g2grad = grad_supervised(model2, params2, h[:, inv], p[:, inv], T)
        np.testing.assert_allclose(g2grad.alpha, g1.alpha[order], atol=1e-14)
        np.testing.assert_allclose(g2grad.beta, g1.beta[order], atol=1e-14)
        np.testing.assert_allclose(g2grad.kappa, g1.kappa[inv], atol=1e-14)
        np.testing.assert_allclose(g2grad.gamma, g1.gamma[inv], atol=1e-14)

    def test_unrolled_matches_engine(self):
        model, params, h, _, T = random_instance(5)
        batch = run_batch(model, h, "cbp", params, RunOptions(max_iters=T, tol=1e-300))
        np.testing.assert_allclose(Unrolled(model, params, h, T).beliefs, batch.beliefs, atol=1e-13)


class TestRprop:
    def test_minimises_quadratic(self):
        target = np.array([0.3, -0.7, 0.05])

        def objective(x):
            return float(np.sum((x - target) ** 2)), 2 * (x - target)

        x, val = rprop(objective, np.zeros(3), 0.01, 500, 50, lambda x: objective(x)[0])
        np.testing.assert_allclose(x, target, atol=1e-4)

    def test_returns_best_validation_point(self):
        hist = []
        x, val = rprop(lambda x: (0.0, np.ones_like(x)), np.zeros(1), 0.1, 10, 100, lambda x: float(abs(x[0] + 0.25)), hist)
        assert val == min(h["val_loss"] for h in hist)


def splits(model, seed, sizes=(60, 30, 30)):
    out = []
    for k, size in enumerate(sizes):
        ts = sample_inputs(model.n, size, seed + k)
        out.append(ts.with_targets(exact_marginals_batch(model, ts.m_ext)))
    return out


class TestFitSupervised:
    def test_tree_not_worse_than_bp(self):
        model = sample_spin_glass(random_tree(7, 2), 2)
        train, val, test = splits(model, 10)
        params = fit_supervised(model, train, val, FitOptions(T=30, max_epochs=15, max_nfev=5))
        fit_mse = unrolled_loss(model, params, test.m_ext, test.targets, 30)
        bp_mse = unrolled_loss(model, CbpParams.ones(model.graph), test.m_ext, test.targets, 30)
        assert fit_mse <= bp_mse + 1e-9

    def test_improves_on_bp_for_loopy_graph(self):
        model = sample_spin_glass(gen_erdos_renyi(9, 0.6, 100), 200)
        train, val, test = splits(model, 20, (100, 50, 50))
        hist = []
        params = fit_supervised(model, train, val, FitOptions(optimizer="least-squares", max_nfev=15), hist)
        mse = lambda prm: loss_mse(run_batch(model, test.m_ext, "cbp", prm, RunOptions()).beliefs, test.targets)  # noqa: E731
        assert mse(params) < mse(CbpParams.ones(model.graph))
        init_val = hist[0]["val_loss"]
        assert unrolled_loss(model, params, val.m_ext, val.targets, 100) <= init_val

    def test_validation_never_worse_than_start(self):
        model = sample_spin_glass(complete_graph(5), 4)
        train, val, _ = splits(model, 30, (30, 20, 1))
        hist = []
        params = fit_supervised(model, train, val, FitOptions(T=20, max_epochs=10, optimizer="rprop", lr=0.5), hist)
        assert unrolled_loss(model, params, val.m_ext, val.targets, 20) <= hist[0]["val_loss"]

    def test_reweighted_variant_runs(self):
        model = sample_spin_glass(complete_graph(4), 5)
        train, val, _ = splits(model, 40, (20, 10, 1))
        params = fit_supervised(model, train, val, FitOptions(T=20, max_epochs=5, max_nfev=3, variant="reweighted"))
        assert np.all(params.alpha != 0)

    def test_needs_targets(self):
        model = sample_spin_glass(complete_graph(3), 0)
        ts = sample_inputs(3, 5, 0)
        with pytest.raises(ValueError, match="targets"):
            fit_supervised(model, ts, ts)

    def test_option_validation(self):
        with pytest.raises(ValueError):
            FitOptions(optimizer="adam")
        with pytest.raises(ValueError):
            FitOptions(variant="trw")


class TestUnsupervised:
    def test_zero_messages_give_zero_alpha_delta(self):
        model = sample_spin_glass(complete_graph(4), 0)
        params = CbpParams.uniform(model.graph, 0.5, 0.5)
        da, _ = unsupervised_deltas(model, params, np.zeros(12), np.ones(4), np.ones(4), 0.1, 0.1)
        np.testing.assert_array_equal(da, 0.0)

    def test_belief_equal_to_input_gives_zero_kappa_delta(self):
        model = sample_spin_glass(complete_graph(3), 0)
        h = np.array([0.4, -1.0, 2.0])
        _, dk = unsupervised_deltas(model, CbpParams.ones(model.graph), np.ones(6), h, h, 0.1, 0.1)
        np.testing.assert_array_equal(dk, 0.0)

    def test_two_node_hand_values(self):
        model = build_ising(UndirectedGraph(2, [(0, 1)]), [1.0], [0.0, 0.0])
        params = CbpParams([0.8], [1.0], [1.0, 1.0], [1.0, 1.0])
        M = np.array([0.3, -0.2])  # 0->1, 1->0
        B = np.array([0.5, 0.1])
        h = np.array([1.0, -0.5])
        da, dk = unsupervised_deltas(model, params, M, B, h, 0.1, 0.01)
        # 0.1 * [(-0.2)(0.5 + 0.16) + 0.3 (0.1 - 0.24)]
        assert da[0] == pytest.approx(-0.0174, abs=1e-15)
        np.testing.assert_allclose(dk, [0.005, 0.003], atol=1e-15)

    def test_step_leaves_beta_gamma(self):
        model = sample_spin_glass(complete_graph(4), 1)
        params = CbpParams.uniform(model.graph, 0.5, 0.5, 0.9, 1.1)
        new = unsupervised_step(model, params, np.ones(4), 0.1, 0.1, RunOptions(damping=0.5))
        np.testing.assert_array_equal(new.beta, params.beta)
        np.testing.assert_array_equal(new.gamma, params.gamma)
        assert not np.array_equal(new.alpha, params.alpha)

    def test_zero_rates_leave_params(self):
        model = sample_spin_glass(complete_graph(4), 1)
        init = CbpParams.uniform(model.graph, 0.5, 0.5)
        out = fit_unsupervised(model, UnsupOptions(n_examples=20, eta1=0, eta2=0), init=init)
        np.testing.assert_array_equal(out.to_vector(), init.to_vector())

    def test_deterministic(self):
        model = sample_spin_glass(complete_graph(5), 2)
        opts = UnsupOptions(n_examples=50)
        a, b = fit_unsupervised(model, opts, seed=3), fit_unsupervised(model, opts, seed=3)
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())

    def test_expected_alpha_delta_vanishes_at_balanced_state(self):
        model = build_ising(UndirectedGraph(2, [(0, 1)]), [1.0], [0.0, 0.0])
        opts = RunOptions(max_iters=200, tol=1e-12)

        def deltas(a, noise):
            params = CbpParams([a], [1.0], [1.0, 1.0], [1.0, 1.0])
            rep = run_batch(model, noise, "cbp", params, opts)
            return np.array([unsupervised_deltas(model, params, rep.messages[k], rep.beliefs[k], noise[k], 1.0, 0.0)[0][0] for k in range(len(noise))])

        fit_noise = np.random.default_rng(0).normal(size=(3000, 2))
        a_star = brentq(lambda a: deltas(a, fit_noise).mean(), 0.5, 1.5, xtol=1e-10)
        fresh = deltas(a_star, np.random.default_rng(1).normal(size=(3000, 2)))
        assert abs(fresh.mean()) < 3 * fresh.std() / np.sqrt(fresh.size)

    def test_fit_converges_on_frustrated_graph(self):
        model = sample_spin_glass(gen_erdos_renyi(9, 0.6, 101), 201)
        params = fit_unsupervised(model, UnsupOptions(n_examples=300), seed=0)
        h = sample_inputs(9, 20, 5).m_ext
        rep = run_batch(model, h, "cbp", params, RunOptions(max_iters=1000, damping=0.7))
        assert rep.converged.all()

    def test_option_validation(self):
        with pytest.raises(ValueError):
            UnsupOptions(damping=1.0)
        with pytest.raises(ValueError):
            UnsupOptions(eta1=-1)
