"""Learn alpha and kappa from pure noise with local rules; no exact marginals are used for training."""

from circbp import RunOptions, UnsupOptions, exact_marginals_batch, fit_unsupervised, gen_erdos_renyi, loss_mse, run_batch, sample_inputs, sample_spin_glass

model = sample_spin_glass(gen_erdos_renyi(9, 0.6, seed=21), seed=22)
log = []
params = fit_unsupervised(model, UnsupOptions(n_examples=2000), seed=0, history=log)
for entry in log[::5]:
    print(f"after {entry['example']:5d} noise inputs: mean alpha {entry['mean_alpha']:.3f}, mean kappa {entry['mean_kappa']:.3f}")

test = sample_inputs(9, 100, seed=5)
exact = exact_marginals_batch(model, test.m_ext)
bp = run_batch(model, test.m_ext, "bp")
cbp = run_batch(model, test.m_ext, "cbp", params, RunOptions(max_iters=1000, damping=0.7))
print(f"BP : MSE {loss_mse(bp.beliefs, exact):.2e}, converged {bp.converged.mean():.0%}")
print(f"CBP: MSE {loss_mse(cbp.beliefs, exact):.2e}, converged {cbp.converged.mean():.0%}")
