"""Gaussian BP gets the means right on loops but not the precisions; fitting the parameters repairs them."""

import numpy as np

from circbp import CbpParams, RunOptions, exact_gaussian, fit_gaussian, heldout_kl, run_gaussian_cbp, sample_gaussian_inputs, sample_gaussian_suite

model = sample_gaussian_suite(9, 0.6, seed=1)
means, precs, rep = run_gaussian_cbp(model, opts=RunOptions(max_iters=2000, tol=1e-12))
mu, prec = exact_gaussian(model)
print(f"BP converged={rep.converged}: mean error {np.abs(means - mu).max():.1e}, precision error {np.abs(precs - prec).max():.3f}")

train, val, test = (sample_gaussian_inputs(9, k, s) for k, s in ((100, 10), (50, 11), (100, 12)))
params = fit_gaussian(model, train, val)
print(f"held-out KL  BP {heldout_kl(model, CbpParams.ones(model.graph), test):.2e}")
print(f"held-out KL CBP {heldout_kl(model, params, test):.2e}")
