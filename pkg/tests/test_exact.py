import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from circbp.exact import (
    NotPositiveDefinite,
    assemble_precision,
    exact_gaussian,
    exact_marginals_batch,
    exact_marginals_binary,
)
from circbp.gaussian import GaussianModel
from circbp.model import UndirectedGraph, build_ising, complete_graph, gen_erdos_renyi, sample_spin_glass
from circbp.propagation import f_update

# mpmath, 40 digits: two-node chain J=1, M_ext=(1, 0)
P2_TWO_NODE = 0.7900128291929869653027516304791492775414
LOGZ_TWO_NODE = 2.253856022085944992887453612716608862869
B2_TWO_NODE = 0.6625013736789322154688755984147886583433


def brute_force(model):
    """Independent oracle: plain itertools loop with compensated sums."""
    n = model.n
    edges = model.graph.edges
    weights, states = [], []
    for x in itertools.product((-1, 1), repeat=n):
        e = sum(J * x[i] * x[j] for (i, j), J in zip(edges, model.couplings))
        e += sum(h * xi for h, xi in zip(model.m_ext, x))
        weights.append(e)
        states.append(x)
    top = max(weights)
    w = [math.exp(e - top) for e in weights]
    z = math.fsum(w)
    p = [math.fsum(wk for wk, x in zip(w, states) if x[i] == 1) / z for i in range(n)]
    return np.array(p), top + math.log(z)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_single_node_zero_field():
    r = exact_marginals_binary(build_ising(UndirectedGraph(1), {}, [0.0]))
    assert r.p_plus[0] == pytest.approx(0.5, abs=1e-15)
    assert r.log_partition == pytest.approx(math.log(2.0), abs=1e-15)


def test_factorized_model():
    g = complete_graph(4)
    h = np.array([0.3, -1.2, 2.0, 0.0])
    r = exact_marginals_binary(build_ising(g, np.zeros(6), h))
    np.testing.assert_allclose(r.p_plus, sigmoid(2 * h), atol=1e-14)


def test_two_node_chain_against_frozen_value_and_closed_form():
    model = build_ising(UndirectedGraph(2, [(0, 1)]), [1.0], [1.0, 0.0])
    r = exact_marginals_binary(model)
    assert r.p_plus[1] == pytest.approx(P2_TWO_NODE, abs=1e-14)
    assert r.log_partition == pytest.approx(LOGZ_TWO_NODE, abs=1e-13)
    # Closed form: the exact marginal of node 2 is sigmoid(2 f(1, 1)).
    assert r.p_plus[1] == pytest.approx(sigmoid(2 * f_update(1.0, 1.0)), abs=1e-14)
    assert f_update(1.0, 1.0) == pytest.approx(B2_TWO_NODE, abs=1e-15)


@given(st.integers(1, 8), st.floats(0.0, 1.0), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_matches_independent_enumeration(n, p, seed):
    g = gen_erdos_renyi(n, p, seed)
    rng = np.random.default_rng(seed)
    model = sample_spin_glass(g, seed).with_inputs(rng.normal(size=n))
    r = exact_marginals_binary(model)
    p_ref, logz_ref = brute_force(model)
    np.testing.assert_allclose(r.p_plus, p_ref, atol=1e-12)
    assert r.log_partition == pytest.approx(logz_ref, abs=1e-12)


def test_batch_agrees_with_single():
    model = sample_spin_glass(gen_erdos_renyi(7, 0.6, 3), 3)
    h = np.random.default_rng(0).normal(size=(5, 7))
    batch = exact_marginals_batch(model, h)
    for k in range(5):
        np.testing.assert_allclose(batch[k], exact_marginals_binary(model.with_inputs(h[k])).p_plus, atol=1e-14)


def test_enumeration_cap():
    with pytest.raises(ValueError, match="cap"):
        exact_marginals_binary(build_ising(UndirectedGraph(21), {}, np.zeros(21)))


def test_large_fields_stay_finite():
    model = build_ising(complete_graph(3), [30.0, -30.0, 30.0], [50.0, -50.0, 0.0])
    r = exact_marginals_binary(model)
    assert np.all(np.isfinite(r.p_plus)) and np.isfinite(r.log_partition)


# Gaussian ------------------------------------------------------------------


def test_gaussian_single_node():
    m = GaussianModel(UndirectedGraph(1), np.zeros((0, 3)), [2.0], [3.0])
    mean, prec = exact_gaussian(m)
    assert mean[0] == pytest.approx(3.0) and prec[0] == pytest.approx(2.0)


def test_gaussian_decoupled_nodes():
    m = GaussianModel.from_block_map(UndirectedGraph(2, [(0, 1)]), {(0, 1): [[1.0, 0.0], [0.0, 2.0]]}, [1.0, 1.0], [0.5, -2.0])
    mean, prec = exact_gaussian(m)
    np.testing.assert_allclose(mean, [0.5 / 2.0, -2.0 / 3.0])
    np.testing.assert_allclose(prec, [2.0, 3.0])


def test_gaussian_three_cycle_two_solvers():
    g = complete_graph(3)
    blocks = {(0, 1): [[1.0, 0.4], [0.4, 1.5]], (0, 2): [[0.8, -0.3], [-0.3, 1.0]], (1, 2): [[1.2, 0.5], [0.5, 0.9]]}
    m = GaussianModel.from_block_map(g, blocks, [0.7, 1.1, 0.4], [1.0, -2.0, 0.5])
    mean, prec = exact_gaussian(m)
    P = assemble_precision(m)
    # Route two: direct solve for the mean, unit-vector solves for the variances.
    mean2 = np.linalg.solve(P, m.p_ext * m.mu_ext)
    var2 = np.array([np.linalg.solve(P, e)[k] for k, e in enumerate(np.eye(3))])
    np.testing.assert_allclose(mean, mean2, atol=1e-12)
    np.testing.assert_allclose(prec, 1.0 / var2, atol=1e-12)


def test_gaussian_not_positive_definite():
    # SPD blocks plus positive unitary precisions always sum to an SPD matrix,
    # so only an overriding negative unitary precision can break it.
    g = UndirectedGraph(2, [(0, 1)])
    m = GaussianModel.from_block_map(g, {(0, 1): [[1.0, 0.9], [0.9, 1.0]]}, [1.0, 1.0], [0.0, 0.0])
    with pytest.raises(NotPositiveDefinite) as info:
        exact_gaussian(m, p_ext=[-1.0, 1.0])
    assert info.value.min_eigenvalue < 0
