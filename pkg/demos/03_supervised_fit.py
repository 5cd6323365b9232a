"""Fit Circular BP parameters to exact marginals on one loopy graph and compare test error with BP."""

from circbp import FitOptions, RunOptions, exact_marginals_batch, fit_supervised, gen_erdos_renyi, loss_mse, run_batch, sample_inputs, sample_spin_glass

model = sample_spin_glass(gen_erdos_renyi(9, 0.6, seed=11), seed=12)


def split(size, seed):
    inputs = sample_inputs(model.n, size, seed)
    return inputs.with_targets(exact_marginals_batch(model, inputs.m_ext))


train, val, test = split(200, 1), split(100, 2), split(100, 3)
history = []
# Least squares alone keeps the demo under a minute; the bench default also runs Rprop.
params = fit_supervised(model, train, val, FitOptions(optimizer="least-squares", max_nfev=30), history)

bp = run_batch(model, test.m_ext, "bp")
cbp = run_batch(model, test.m_ext, "cbp", params, RunOptions())
print(f"test MSE  BP {loss_mse(bp.beliefs, test.targets):.2e}  (converged {bp.converged.mean():.0%})")
print(f"test MSE CBP {loss_mse(cbp.beliefs, test.targets):.2e}  (converged {cbp.converged.mean():.0%})")
print("mean alpha", params.alpha.mean().round(3), "mean kappa", params.kappa.mean().round(3))
