"""Store orthogonal patterns in a Hopfield network, erase half the pixels, and reconstruct three ways."""

from circbp.bench import denoise_demo, denoising_params, hopfield_pseudoinverse, orthogonal_patterns

patterns = orthogonal_patterns(20, 64, seed=0)
params = denoising_params(hopfield_pseudoinverse(patterns), seed=1)
for method in ("hopfield", "bp", "cbp"):
    rep = denoise_demo(patterns, 0.5, method, seed=2, params=params)
    print(f"{method:8s} mean bit accuracy {rep.mean_accuracy:.4f}, converged {rep.converged.mean():.0%}")
