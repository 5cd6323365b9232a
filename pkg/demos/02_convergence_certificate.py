"""Shrinking alpha = kappa = v until the spectral radius of A drops below one guarantees convergence."""

import numpy as np

from circbp import CbpParams, RunOptions, build_A, complete_graph, find_safe_uniform, induced_norms, run_bp, run_cbp, sample_spin_glass, spectral_radius

model = sample_spin_glass(complete_graph(9), seed=7).with_inputs(np.random.default_rng(1).normal(size=9))

A_bp = build_A(model, CbpParams.ones(model.graph))
print(f"BP:  rho(A) = {spectral_radius(A_bp):.3f}, (l1, linf) = {tuple(round(x, 3) for x in induced_norms(A_bp))}")
print("BP converged from zero messages:", run_bp(model, RunOptions(max_iters=1000)).converged)

v, rho = find_safe_uniform(model)
print(f"safe v = {v:.4f} with rho(A) = {rho:.3f}")
for seed in range(3):
    rep = run_cbp(model, CbpParams.uniform(model.graph, v, v), RunOptions(max_iters=2000, init="random", seed=seed, init_scale=5.0))
    print(f"  random start {seed}: converged={rep.converged}, marginals {np.round(rep.marginals[:4], 6)} ...")
