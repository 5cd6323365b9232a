"""Experiment harness, Hopfield denoising and IDX ingestion."""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from math import isqrt
from pathlib import Path

import numpy as np
from scipy.linalg import hadamard

from .exact import ENUMERATION_CAP, exact_marginals_batch
from .learning import FitOptions, UnsupOptions, fit_supervised, fit_unsupervised, score
from .model import (
    CbpParams,
    IsingModel,
    TrainingSet,
    build_ising,
    complete_graph,
    gen_erdos_renyi,
    grid_graph,
    random_tree,
    sample_inputs,
    sample_spin_glass,
)
from .propagation import RunOptions, run_batch

TOPOLOGIES = ("erdos-renyi", "grid", "complete", "tree")
BENCH_METHODS = ("bp", "cbp-supervised", "cbp-unsupervised", "reweighted", "mean-field")
CSV_COLUMNS = ("p", "graph_seed", "method", "mean_mse", "converged_fraction")
MSE_FLOOR = float(np.finfo(float).tiny)


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark sweep.

    ``splits`` is ``(train, val, test)``. Fitting knobs ride along so a
    config file fully determines the run. BP, mean field and supervised
    fits are evaluated after ``T`` sweeps; unsupervised parameters run
    damped for up to ``unsup_eval_iters`` sweeps, since their damped
    iteration can contract slowly.
    """

    topology: str = "erdos-renyi"
    p_list: tuple[float, ...] = (0.2, 0.6, 1.0)
    graphs_per_p: int = 5
    n_nodes: int = 9
    splits: tuple[int, int, int] = (200, 100, 100)
    methods: tuple[str, ...] = ("bp", "cbp-supervised")
    seed: int = 0
    T: int = 100
    optimizer: str = "both"
    max_epochs: int = 300
    unsup_examples: int = 5000
    unsup_damping: float = 0.7
    unsup_eval_iters: int = 10_000
    mean_field_damping: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "p_list", tuple(float(p) for p in self.p_list))
        object.__setattr__(self, "splits", tuple(int(s) for s in self.splits))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}")
        if any(not 0.0 <= p <= 1.0 for p in self.p_list):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.unsup_eval_iters < 1:
            raise ValueError("unsup_eval_iters must be at least 1")
        if self.graphs_per_p < 1 or self.n_nodes < 1 or len(self.splits) != 3 or min(self.splits) < 1:
            raise ValueError("graphs_per_p, n_nodes and every split size must be at least 1")
        unknown = set(self.methods) - set(BENCH_METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; expected a subset of {BENCH_METHODS}")
        if self.topology == "grid" and isqrt(self.n_nodes) ** 2 != self.n_nodes:
            raise ValueError("grid topology needs a square node count")

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "desk": ExperimentConfig(),
    "full": ExperimentConfig(
        p_list=(0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
        graphs_per_p=30,
        methods=BENCH_METHODS,
    ),
}


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def make_graph(topology: str, n: int, p: float, seed: int):
    if topology == "erdos-renyi":
        return gen_erdos_renyi(n, p, seed)
    if topology == "grid":
        side = isqrt(n)
        return grid_graph(side, side)
    if topology == "complete":
        return complete_graph(n)
    return random_tree(n, seed)


@dataclass(frozen=True)
class ExperimentResult:
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def json_text(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / "results.csv", out / "summary.json"
        csv_path.write_text(self.csv_text())
        json_path.write_text(self.json_text())
        return csv_path, json_path


def _split(model: IsingModel, size: int, seed: int) -> TrainingSet:
    inputs = sample_inputs(model.n, size, seed)
    return inputs.with_targets(exact_marginals_batch(model, inputs.m_ext))


def evaluate_method(method: str, model: IsingModel, splits: tuple[TrainingSet, TrainingSet, TrainingSet], config: ExperimentConfig, seed: int) -> tuple[float, float]:
    """Fit (if needed) and return ``(mean test MSE, converged fraction)``."""
    train, val, test = splits
    T = config.T
    if method == "bp":
        rep = run_batch(model, test.m_ext, "bp", opts=RunOptions(max_iters=T))
    elif method == "mean-field":
        rep = run_batch(model, test.m_ext, "mean-field", opts=RunOptions(max_iters=T, damping=config.mean_field_damping))
    elif method in ("cbp-supervised", "reweighted"):
        variant = "cbp" if method == "cbp-supervised" else "reweighted"
        opts = FitOptions(T=T, optimizer=config.optimizer, max_epochs=config.max_epochs, variant=variant)
        params = fit_supervised(model, train, val, opts)
        rep = run_batch(model, test.m_ext, variant, params, RunOptions(max_iters=T))
    else:
        uopts = UnsupOptions(n_examples=config.unsup_examples, damping=config.unsup_damping, T=T)
        params = fit_unsupervised(model, uopts, seed=seed)
        rep = run_batch(model, test.m_ext, "cbp", params, RunOptions(max_iters=config.unsup_eval_iters, damping=config.unsup_damping))
    mse = float(np.mean((rep.marginals - test.targets) ** 2))
    return max(mse, MSE_FLOOR), float(np.mean(rep.converged))


def run_experiment(config: ExperimentConfig, out_dir=None, progress=None) -> ExperimentResult:
    """Generate every graph of the sweep, fit and score the requested methods.

    CSV rows follow ``CSV_COLUMNS``; ``mean_mse`` is the test MSE averaged
    over examples and nodes, floored at the smallest normal double so the
    score stays finite. The summary maps each ``p`` to per-method scores.
    """
    if config.n_nodes > ENUMERATION_CAP:
        raise ValueError(f"n_nodes={config.n_nodes} exceeds the exact-marginal cap of {ENUMERATION_CAP}")
    rows = []
    for pi, p in enumerate(config.p_list):
        for gi in range(config.graphs_per_p):
            graph_seed = derive_seed(config.seed, pi, gi)
            graph = make_graph(config.topology, config.n_nodes, p, derive_seed(graph_seed, 0))
            model = sample_spin_glass(graph, derive_seed(graph_seed, 1))
            splits = tuple(_split(model, size, derive_seed(graph_seed, 2 + k)) for k, size in enumerate(config.splits))
            for method in config.methods:
                mse, conv = evaluate_method(method, model, splits, config, derive_seed(graph_seed, 10))
                rows.append({"p": p, "graph_seed": graph_seed, "method": method, "mean_mse": mse, "converged_fraction": conv})
                if progress is not None:
                    progress(rows[-1])
    result = ExperimentResult(rows, summarize(rows, config))
    if out_dir is not None:
        result.write(out_dir)
    return result


def summarize(rows: list[dict], config: ExperimentConfig | None = None) -> dict:
    scores: dict[str, dict[str, float]] = {}
    converged: dict[str, dict[str, float]] = {}
    for p in sorted({r["p"] for r in rows}):
        key = repr(float(p))
        scores[key], converged[key] = {}, {}
        for method in dict.fromkeys(r["method"] for r in rows):
            sel = [r for r in rows if r["p"] == p and r["method"] == method]
            if sel:
                scores[key][method] = score([r["mean_mse"] for r in sel])
                converged[key][method] = float(np.mean([r["converged_fraction"] for r in sel]))
    out = {"scores": scores, "converged_fraction": converged}
    if config is not None:
        out["config"] = config.to_dict()
    return out


def read_rows(csv_text: str) -> list[dict]:
    rows = []
    for rec in csv.DictReader(io.StringIO(csv_text)):
        rows.append({
            "p": float(rec["p"]),
            "graph_seed": int(rec["graph_seed"]),
            "method": rec["method"],
            "mean_mse": float(rec["mean_mse"]),
            "converged_fraction": float(rec["converged_fraction"]),
        })
    return rows


# Hopfield ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PatternSet:
    """Rows are +-1 patterns, columns are pixels."""

    patterns: np.ndarray

    def __post_init__(self):
        arr = np.atleast_2d(np.array(self.patterns, dtype=float))
        if not np.all(np.abs(arr) == 1):
            raise ValueError("patterns must have entries in {-1, +1}")
        arr.setflags(write=False)
        object.__setattr__(self, "patterns", arr)

    @property
    def count(self) -> int:
        return self.patterns.shape[0]

    @property
    def size(self) -> int:
        return self.patterns.shape[1]


def orthogonal_patterns(count: int, n: int, seed: int) -> PatternSet:
    """Mutually orthogonal +-1 patterns from Hadamard rows, scrambled by column permutation and sign flips."""
    if n & (n - 1) or count >= n:
        raise ValueError("n must be a power of two and count below n")
    rng = np.random.default_rng(seed)
    rows = 1 + rng.choice(n - 1, size=count, replace=False)
    H = hadamard(n)[rows].astype(float)
    H = H[:, rng.permutation(n)] * rng.choice([-1.0, 1.0], size=n)
    return PatternSet(H)


def random_patterns(count: int, n: int, seed: int) -> PatternSet:
    return PatternSet(np.random.default_rng(seed).choice([-1.0, 1.0], size=(count, n)))


def hopfield_pseudoinverse(patterns: PatternSet) -> np.ndarray:
    """``theta = (1/n) X (X^T X)^{-1} X^T`` with the patterns as columns of ``X``."""
    X = patterns.patterns.T
    n, K = X.shape
    gram = X.T @ X
    if np.linalg.matrix_rank(gram) < K:
        raise ValueError("patterns are linearly dependent; the pseudoinverse rule cannot store them")
    return (X @ np.linalg.solve(gram, X.T)) / n


def _sgn(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0, -1.0)


def hopfield_recall(theta: np.ndarray, x0, max_iter: int = 100) -> tuple[np.ndarray, bool]:
    """Synchronous ``x <- sgn(theta x)`` (zero maps to +1); returns the state and whether it settled."""
    x = np.asarray(x0, dtype=float)
    for _ in range(max_iter):
        new = _sgn(theta @ x)
        if np.array_equal(new, x):
            return x, True
        x = new
    return x, False


def hopfield_ising(theta: np.ndarray, noisy: np.ndarray, coupling_scale: float = 5.0, field_scale: float = 3.0) -> IsingModel:
    """Complete-graph Ising model with ``J = 5 theta`` and ``M_ext = 3 * noisy``."""
    n = theta.shape[0]
    graph = complete_graph(n)
    ends = np.array(graph.edges, dtype=int).reshape(-1, 2)
    return build_ising(graph, coupling_scale * theta[ends[:, 0], ends[:, 1]], field_scale * np.asarray(noisy, dtype=float))


def corrupt(patterns: np.ndarray, noise_fraction: float, seed: int) -> np.ndarray:
    """Zero ``round(noise_fraction * n)`` pixels chosen uniformly at random in each pattern."""
    if not 0.0 <= noise_fraction <= 1.0:
        raise ValueError("noise_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    out = np.array(patterns, dtype=float)
    k = int(round(noise_fraction * out.shape[1]))
    for row in out:
        row[rng.choice(out.shape[1], size=k, replace=False)] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class DenoiseReport:
    method: str
    accuracy: np.ndarray
    reconstructions: np.ndarray
    converged: np.ndarray

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracy))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "mean_accuracy": self.mean_accuracy,
            "accuracy": [float(a) for a in self.accuracy],
            "converged": [bool(c) for c in self.converged],
        }


DENOISE_METHODS = ("hopfield", "bp", "cbp")


def denoising_params(theta: np.ndarray, seed: int, n_examples: int = 1000, damping: float = 0.8) -> CbpParams:
    """Unsupervised Circular BP parameters for the Hopfield Ising model, trained on noise images."""
    model = hopfield_ising(theta, np.zeros(theta.shape[0]))
    # Noise images are N(0, I); the model sees them through the factor 3 on M_ext.
    opts = UnsupOptions(n_examples=n_examples, damping=damping, input_scale=3.0)
    return fit_unsupervised(model, opts, seed=seed)


def denoise_demo(
    patterns: PatternSet,
    noise_fraction: float,
    method: str,
    seed: int,
    params: CbpParams | None = None,
    damping: float = 0.8,
    max_iters: int = 1000,
) -> DenoiseReport:
    """Corrupt every pattern, reconstruct it, and score bit accuracy against the clean pattern.

    BP and Circular BP read pixels as ``tanh(B_i)`` and score their sign.
    Circular BP uses ``params`` or, if absent, :func:`denoising_params`.
    """
    if method not in DENOISE_METHODS:
        raise ValueError(f"method must be one of {DENOISE_METHODS}")
    clean = patterns.patterns
    noisy = corrupt(clean, noise_fraction, seed)
    theta = hopfield_pseudoinverse(patterns)
    if method == "hopfield":
        outs = [hopfield_recall(theta, x) for x in noisy]
        recon = np.array([x for x, _ in outs])
        conv = np.array([c for _, c in outs])
    else:
        model = hopfield_ising(theta, np.zeros(patterns.size))
        fields = 3.0 * noisy
        if method == "bp":
            rep = run_batch(model, fields, "bp", opts=RunOptions(max_iters=max_iters))
        else:
            params = params if params is not None else denoising_params(theta, derive_seed(seed, 1), damping=damping)
            rep = run_batch(model, fields, "cbp", params, RunOptions(max_iters=max_iters, damping=damping))
        recon = np.tanh(rep.beliefs)
        conv = rep.converged
    accuracy = np.mean(_sgn(recon) == clean, axis=1)
    return DenoiseReport(method, accuracy, recon, np.asarray(conv, dtype=bool))


# IDX files -----------------------------------------------------------------

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def load_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file.

    Images (magic 2051) come back as a ``(count, rows * cols)`` array rescaled
    from ``[0, 255]`` to ``[-1, 1]``; labels (magic 2049) as a ``uint8`` vector.
    """
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise ValueError(f"truncated IDX header: need 4 bytes at offset 0, file has {len(data)}")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic == IDX_IMAGES:
        ndims = 3
    elif magic == IDX_LABELS:
        ndims = 1
    else:
        raise ValueError(f"bad IDX magic 0x{magic:08x} at offset 0 (expected 0x{IDX_IMAGES:08x} or 0x{IDX_LABELS:08x})")
    header = 4 + 4 * ndims
    if len(data) < header:
        raise ValueError(f"truncated IDX header: dimensions end at offset {header}, file has {len(data)} bytes")
    dims = struct.unpack_from(f">{ndims}I", data, 4)
    expected = int(np.prod(dims))
    if len(data) < header + expected:
        raise ValueError(f"truncated IDX payload: {expected} bytes expected from offset {header}, only {len(data) - header} present")
    payload = np.frombuffer(data, dtype=np.uint8, count=expected, offset=header)
    if magic == IDX_LABELS:
        return payload.copy()
    return payload.reshape(dims[0], dims[1] * dims[2]) / 127.5 - 1.0


def save_idx(path, array: np.ndarray, labels: bool = False) -> None:
    """Write unsigned bytes as IDX; images are ``(count, rows, cols)`` in ``0..255``."""
    arr = np.asarray(array, dtype=np.uint8)
    if labels:
        head = struct.pack(">II", IDX_LABELS, arr.shape[0])
    else:
        head = struct.pack(">IIII", IDX_IMAGES, *arr.shape)
    Path(path).write_bytes(head + arr.tobytes())


def config_with(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
