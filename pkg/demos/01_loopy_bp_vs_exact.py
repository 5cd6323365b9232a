"""BP is exact on a tree and drifts on a loopy spin glass; unit-parameter Circular BP is BP."""

import numpy as np

from circbp import CbpParams, RunOptions, exact_marginals_binary, gen_erdos_renyi, random_tree, run_bp, run_cbp, sample_spin_glass

rng = np.random.default_rng(0)

tree = sample_spin_glass(random_tree(10, seed=1), seed=2).with_inputs(rng.normal(size=10))
rep = run_bp(tree, RunOptions(tol=1e-12))
err = np.abs(rep.marginals - exact_marginals_binary(tree).p_plus).max()
print(f"tree: converged={rep.converged} after {rep.iterations_used} sweeps, max error {err:.1e}")

loopy = sample_spin_glass(gen_erdos_renyi(9, 0.6, seed=3), seed=4).with_inputs(rng.normal(size=9))
rep = run_bp(loopy, RunOptions(max_iters=500))
exact = exact_marginals_binary(loopy).p_plus
print(f"loopy: converged={rep.converged}, max error {np.abs(rep.marginals - exact).max():.3f}")

same = run_cbp(loopy, CbpParams.ones(loopy.graph), RunOptions(max_iters=500))
print("CBP with unit parameters reproduces BP bit for bit:", np.array_equal(same.messages, rep.messages))
