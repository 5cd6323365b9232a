"""A miniature benchmark sweep written to demos/out/: one CSV row per (p, graph, method) plus a score summary."""

from pathlib import Path

from circbp.bench import ExperimentConfig, run_experiment

config = ExperimentConfig(p_list=(0.2, 1.0), graphs_per_p=2, splits=(50, 25, 50), methods=("bp", "mean-field", "cbp-unsupervised"), unsup_examples=300)
result = run_experiment(config, out_dir=Path(__file__).parent / "out")
print(result.csv_text())
for p, scores in result.summary["scores"].items():
    print(p, {m: round(s, 2) for m, s in scores.items()})
