import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from circbp.convergence import (
    build_A,
    find_safe_uniform,
    gelfand_estimate,
    induced_norms,
    spectral_norm_estimate,
    spectral_radius,
)
from circbp.model import (
    CbpParams,
    UndirectedGraph,
    build_ising,
    complete_graph,
    gen_erdos_renyi,
    random_tree,
    sample_spin_glass,
)
from circbp.propagation import RunOptions, run_cbp


def eig_radius(M):
    return float(np.abs(np.linalg.eigvals(M)).max()) if M.size else 0.0


def random_params(graph, rng):
    return CbpParams(
        rng.uniform(-1.5, 1.5, graph.edge_count),
        rng.uniform(-1.5, 1.5, graph.edge_count),
        rng.uniform(0.2, 1.5, graph.node_count) * rng.choice([-1, 1], graph.node_count),
        rng.uniform(-1.5, 1.5, graph.node_count),
    )


class TestBuildA:
    def test_single_edge_bp_is_zero(self):
        model = build_ising(UndirectedGraph(2, [(0, 1)]), [0.8], [0, 0])
        A = build_A(model, CbpParams.ones(model.graph)).dense()
        np.testing.assert_array_equal(A, np.zeros((2, 2)))

    def test_three_cycle_by_hand(self):
        J = 0.7
        model = build_ising(complete_graph(3), [J, -J, J], [0, 0, 0])
        t = np.tanh(J)
        # message order: 0->1, 1->0, 0->2, 2->0, 1->2, 2->1
        expect = np.zeros((6, 6))
        expect[0, 3] = t  # 0->1 reads 2->0
        expect[1, 5] = t  # 1->0 reads 2->1
        expect[2, 1] = t  # 0->2 reads 1->0
        expect[3, 4] = t  # 2->0 reads 1->2
        expect[4, 0] = t  # 1->2 reads 0->1
        expect[5, 2] = t  # 2->1 reads 0->2
        A = build_A(model, CbpParams.ones(model.graph))
        np.testing.assert_allclose(A.dense(), expect, atol=1e-15)
        assert spectral_radius(A) == pytest.approx(t, abs=1e-10)
        assert eig_radius(expect) == pytest.approx(t, abs=1e-12)

    def test_with_alpha_reverse_entry(self):
        model = build_ising(UndirectedGraph(2, [(0, 1)]), [0.8], [0, 0])
        params = CbpParams([0.25], [1.0], [0.5, 1.0], [1.0, 1.0])
        A = build_A(model, params).dense()
        t = np.tanh(0.8)
        np.testing.assert_allclose(A, [[0.0, 0.5 * t * 0.5], [t * 0.75, 0.0]], atol=1e-15)

    @given(st.integers(0, 5000), st.floats(0.05, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_uniform_v_entries_and_linearity(self, seed, v):
        model = sample_spin_glass(gen_erdos_renyi(7, 0.6, seed), seed)
        g = model.graph
        A1 = build_A(model, CbpParams.uniform(g, 1.0, 1.0)).dense()
        Av = build_A(model, CbpParams.uniform(g, v, v)).dense()
        np.testing.assert_allclose(Av, v * A1, rtol=1e-14, atol=0)
        for d in range(2 * g.edge_count):
            assert Av[d, d ^ 1] == 0.0
            nz = np.flatnonzero(A1[d])
            np.testing.assert_array_equal(g.directed_target[nz], g.directed_source[d])
            np.testing.assert_allclose(A1[d, nz], np.tanh(abs(model.couplings[g.directed_undirected[d]])))

    def test_sparse_storage_for_large_graphs(self):
        g = complete_graph(70)
        model = sample_spin_glass(g, 0)
        A = build_A(model, CbpParams.ones(g))
        assert A.is_sparse and A.dimension == 2 * g.edge_count
        assert spectral_radius(A) > 0

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        model = sample_spin_glass(gen_erdos_renyi(8, 0.5, 1), 1)
        assert np.all(build_A(model, random_params(model.graph, rng)).dense() >= 0)


class TestSpectralRadius:
    def test_zero_and_scaled_identity(self):
        assert spectral_radius(np.zeros((4, 4))) == 0.0
        assert spectral_radius(0.3 * np.eye(5)) == pytest.approx(0.3, abs=1e-12)

    def test_rejects_negative_entries(self):
        with pytest.raises(ValueError):
            spectral_radius(np.array([[0.0, -1.0], [1.0, 0.0]]))

    def test_periodic_matrix(self):
        # bipartite cycle: plain power iteration would oscillate
        P = np.roll(np.eye(6), 1, axis=1) * 0.9
        assert spectral_radius(P) == pytest.approx(0.9, abs=1e-10)

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_agrees_with_eigvals_and_gelfand(self, seed):
        rng = np.random.default_rng(seed)
        model = sample_spin_glass(gen_erdos_renyi(6, 0.6, seed), seed)
        A = build_A(model, random_params(model.graph, rng))
        rho = spectral_radius(A)
        assert rho == pytest.approx(eig_radius(A.dense()), abs=1e-6)
        assert rho == pytest.approx(gelfand_estimate(A), rel=5e-3, abs=1e-6)

    @given(st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_bounded_by_induced_norms(self, seed):
        rng = np.random.default_rng(seed)
        model = sample_spin_glass(gen_erdos_renyi(int(rng.integers(2, 9)), 0.7, seed), seed)
        A = build_A(model, random_params(model.graph, rng))
        l1, linf = induced_norms(A)
        assert spectral_radius(A) <= min(l1, linf) + 1e-9
        assert spectral_radius(A) <= spectral_norm_estimate(A) + 1e-9


class TestNorms:
    def test_zero_matrix(self):
        assert induced_norms(np.zeros((3, 3))) == (0.0, 0.0)

    def test_row_stochastic(self):
        rng = np.random.default_rng(0)
        M = rng.uniform(size=(5, 5))
        M /= M.sum(axis=1, keepdims=True)
        assert induced_norms(M)[1] == pytest.approx(1.0)

    def test_spectral_norm_matches_svd(self):
        M = np.abs(np.random.default_rng(2).normal(size=(8, 8)))
        assert spectral_norm_estimate(M) == pytest.approx(np.linalg.svd(M, compute_uv=False)[0], rel=1e-10)


class TestFindSafeUniform:
    def test_tree_accepts_one(self):
        model = build_ising(random_tree(10, 0), np.full(9, 0.5), np.zeros(10))
        v, rho = find_safe_uniform(model)
        assert v == 1.0 and rho < 1

    def test_schedule_is_harmonic(self):
        model = sample_spin_glass(complete_graph(9), 3)
        v, rho = find_safe_uniform(model)
        k = round(1 / v)
        assert v == 1.0 / k and rho < 1
        if k > 1:
            g = model.graph
            prev = 1.0 / (k - 1)
            assert spectral_radius(build_A(model, CbpParams.uniform(g, prev, prev))) >= 1

    def test_complete_graph_end_to_end(self):
        model = sample_spin_glass(complete_graph(9), 11).with_inputs(np.random.default_rng(0).normal(size=9))
        v, _ = find_safe_uniform(model)
        rep = run_cbp(model, CbpParams.uniform(model.graph, v, v), RunOptions(max_iters=2000, tol=1e-10))
        assert rep.converged

    def test_cap_raises(self):
        model = build_ising(complete_graph(9), np.full(36, 50.0), np.zeros(9))
        with pytest.raises(RuntimeError, match="no v"):
            find_safe_uniform(model, max_inverse=2)
