"""Command-line interface: ``circbp <command> ...``.

Every command is deterministic given its inputs and ``--seed``; JSON goes to
``--out`` (or stdout when omitted).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench, serialization as ser
from .convergence import build_A, find_safe_uniform, induced_norms, spectral_norm_estimate, spectral_radius
from .exact import exact_gaussian, exact_marginals_batch
from .gaussian import GaussianFitOptions, fit_gaussian, heldout_kl, run_gaussian_cbp, sample_gaussian_inputs, sample_gaussian_suite
from .learning import FitOptions, UnsupOptions, fit_supervised, fit_unsupervised
from .model import CbpParams, sample_inputs, sample_spin_glass
from .propagation import RunOptions, run_batch


def _run_options(args) -> RunOptions:
    return RunOptions(max_iters=args.max_iters, tol=args.tol, damping=args.damping)


def _add_run_flags(p, max_iters=100):
    p.add_argument("--max-iters", type=int, default=max_iters)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--damping", type=float, default=0.0)


def _load_params(path, graph) -> CbpParams:
    return CbpParams.ones(graph) if path is None else ser.params_from_dict(ser.read_json(path), graph)


def cmd_generate(args) -> None:
    if args.gaussian:
        gmodel = sample_gaussian_suite(args.n, args.p, args.seed)
        ser.write_json(ser.gaussian_to_dict(gmodel), args.out)
        if args.examples_out:
            ser.write_json(ser.gaussian_inputs_to_dict(sample_gaussian_inputs(args.n, args.examples, args.seed + 1)), args.examples_out)
        return
    graph = bench.make_graph(args.topology, args.n, args.p, args.seed)
    model = sample_spin_glass(graph, bench.derive_seed(args.seed, 1))
    if args.random_field:
        model = model.with_inputs(sample_inputs(args.n, 1, bench.derive_seed(args.seed, 2)).m_ext[0])
    ser.write_json(ser.model_to_dict(model), args.out)
    if args.examples_out:
        inputs = sample_inputs(args.n, args.examples, bench.derive_seed(args.seed, 3))
        if args.targets:
            inputs = inputs.with_targets(exact_marginals_batch(model, inputs.m_ext))
        ser.write_json(ser.inputs_to_dict(inputs), args.examples_out)


def cmd_infer(args) -> None:
    model = ser.model_from_dict(ser.read_json(args.model))
    params = _load_params(args.params, model.graph) if args.method in ("cbp", "reweighted") else None
    fields = ser.inputs_from_dict(ser.read_json(args.inputs)).m_ext if args.inputs else model.m_ext[None, :]
    rep = run_batch(model, fields, args.method, params, _run_options(args))
    reports = [rep.report(k).to_dict() for k in range(len(fields))]
    ser.write_json({"method": args.method, "reports": reports} if args.inputs else reports[0], args.out)


def cmd_analyze(args) -> None:
    model = ser.model_from_dict(ser.read_json(args.model))
    params = _load_params(args.params, model.graph)
    A = build_A(model, params)
    l1, linf = induced_norms(A)
    v, rho_v = find_safe_uniform(model, params.beta, params.gamma)
    ser.write_json(
        {"rho": spectral_radius(A), "l1": l1, "linf": linf, "spectral_norm": spectral_norm_estimate(A), "safe_v": v, "safe_rho": rho_v},
        args.out,
    )


def _split(model, path, size, seed):
    if path:
        inputs = ser.inputs_from_dict(ser.read_json(path))
    else:
        inputs = sample_inputs(model.n, size, seed)
    if inputs.targets is None:
        inputs = inputs.with_targets(exact_marginals_batch(model, inputs.m_ext))
    return inputs


def cmd_fit(args) -> None:
    model = ser.model_from_dict(ser.read_json(args.model))
    log: list = []
    if args.mode == "supervised":
        train = _split(model, args.train, args.train_size, bench.derive_seed(args.seed, 0))
        val = _split(model, args.val, args.val_size, bench.derive_seed(args.seed, 1))
        opts = FitOptions(T=args.T, lr=args.lr, max_epochs=args.max_epochs, patience=args.patience, optimizer=args.optimizer, variant=args.variant)
        params = fit_supervised(model, train, val, opts, history=log)
    else:
        opts = UnsupOptions(n_examples=args.n_examples, eta1=args.eta1, eta2=args.eta2, damping=args.damping, T=args.T)
        params = fit_unsupervised(model, opts, seed=args.seed, history=log)
    ser.write_json(ser.params_to_dict(params, model.graph), args.out)
    if args.log:
        ser.write_json({"mode": args.mode, "history": log}, args.log)


def cmd_bench(args) -> None:
    overrides = {
        "preset": args.preset,
        "topology": args.topology,
        "p_list": args.p_list,
        "graphs_per_p": args.graphs_per_p,
        "n_nodes": args.n_nodes,
        "splits": args.splits,
        "methods": args.methods,
        "seed": args.seed,
        "unsup_examples": args.unsup_examples,
        "max_epochs": args.max_epochs,
    }
    config = ser.load_config(args.config, **overrides)

    def progress(row):
        if args.verbose:
            print(f"p={row['p']} graph={row['graph_seed']} {row['method']}: mse={row['mean_mse']:.3e}", file=sys.stderr)

    result = bench.run_experiment(config, args.out, progress)
    if args.out is None:
        print(result.csv_text(), end="")
        print(result.json_text(), end="")


def cmd_gaussian_infer(args) -> None:
    gmodel = ser.gaussian_from_dict(ser.read_json(args.model))
    params = _load_params(args.params, gmodel.graph)
    means, precs, rep = run_gaussian_cbp(gmodel, params, _run_options(args))
    out = rep.to_dict(means, precs)
    if args.exact:
        em, ep = exact_gaussian(gmodel)
        out["exact"] = {"means": em.tolist(), "precisions": ep.tolist()}
    ser.write_json(out, args.out)


def cmd_gaussian_fit(args) -> None:
    gmodel = ser.gaussian_from_dict(ser.read_json(args.model))
    train = ser.gaussian_inputs_from_dict(ser.read_json(args.train)) if args.train else sample_gaussian_inputs(gmodel.graph.node_count, args.train_size, bench.derive_seed(args.seed, 0))
    val = sample_gaussian_inputs(gmodel.graph.node_count, args.val_size, bench.derive_seed(args.seed, 1))
    opts = GaussianFitOptions(max_nfev=args.max_nfev)
    params = fit_gaussian(gmodel, train, val, opts)
    ser.write_json(ser.params_to_dict(params, gmodel.graph), args.out)
    if args.log:
        ones = CbpParams.ones(gmodel.graph)
        ser.write_json({"val_kl_initial": heldout_kl(gmodel, ones, val, opts=opts), "val_kl_fitted": heldout_kl(gmodel, params, val, opts=opts)}, args.log)


def cmd_denoise(args) -> None:
    if args.idx:
        images = bench.load_idx(args.idx)[: args.count]
        patterns = bench.PatternSet(np.where(images >= 0, 1.0, -1.0))
    else:
        patterns = bench.orthogonal_patterns(args.count, args.pixels, args.seed)
    reports = {}
    params = None
    for method in args.methods:
        if method == "cbp" and params is None:
            theta = bench.hopfield_pseudoinverse(patterns)
            params = bench.denoising_params(theta, bench.derive_seed(args.seed, 1), n_examples=args.n_examples, damping=args.damping)
        reports[method] = bench.denoise_demo(patterns, args.noise_fraction, method, args.seed, params=params, damping=args.damping).to_dict()
    ser.write_json({"noise_fraction": args.noise_fraction, "patterns": patterns.count, "pixels": patterns.size, "results": reports}, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="circbp", description="Circular belief propagation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a spin-glass or Gaussian model")
    p.add_argument("--n", type=int, default=9)
    p.add_argument("--p", type=float, default=0.6)
    p.add_argument("--topology", choices=bench.TOPOLOGIES, default="erdos-renyi")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gaussian", action="store_true", help="sample a Gaussian model instead")
    p.add_argument("--random-field", action="store_true", help="draw M_ext ~ N(0,1) instead of zero")
    p.add_argument("--examples", type=int, default=100)
    p.add_argument("--examples-out", help="also write an input set of --examples vectors")
    p.add_argument("--targets", action="store_true", help="attach exact marginals to the input set")
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("infer", help="run BP, Circular BP, reweighted BP or mean field")
    p.add_argument("--model", required=True)
    p.add_argument("--params")
    p.add_argument("--inputs", help="input-set JSON; one report per example")
    p.add_argument("--method", choices=("bp", "cbp", "reweighted", "mean-field"), default="cbp")
    _add_run_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("analyze", help="spectral radius, norms and safe uniform parameter")
    p.add_argument("--model", required=True)
    p.add_argument("--params")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fit", help="learn Circular BP parameters")
    p.add_argument("--mode", choices=("supervised", "unsupervised"), required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--train")
    p.add_argument("--val")
    p.add_argument("--train-size", type=int, default=200)
    p.add_argument("--val-size", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--max-epochs", type=int, default=300)
    p.add_argument("--patience", type=int, default=40)
    p.add_argument("--optimizer", choices=("rprop", "least-squares", "both"), default="both")
    p.add_argument("--variant", choices=("cbp", "reweighted"), default="cbp")
    p.add_argument("--n-examples", type=int, default=5000)
    p.add_argument("--eta1", type=float, default=0.03)
    p.add_argument("--eta2", type=float, default=0.0003)
    p.add_argument("--damping", type=float, default=0.7)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench", help="run a benchmark sweep")
    p.add_argument("--config", help="INI file with an [experiment] section")
    p.add_argument("--preset", choices=sorted(bench.PRESETS))
    p.add_argument("--topology", choices=bench.TOPOLOGIES)
    p.add_argument("--p-list")
    p.add_argument("--graphs-per-p", type=int)
    p.add_argument("--n-nodes", type=int)
    p.add_argument("--splits", help="train,val,test sizes")
    p.add_argument("--methods", help="comma-separated subset of " + ",".join(bench.BENCH_METHODS))
    p.add_argument("--seed", type=int)
    p.add_argument("--unsup-examples", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--out", help="directory for results.csv and summary.json")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gaussian-infer", help="run Gaussian Circular BP")
    p.add_argument("--model", required=True)
    p.add_argument("--params")
    p.add_argument("--exact", action="store_true", help="include exact marginals")
    _add_run_flags(p, max_iters=1000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gaussian_infer)

    p = sub.add_parser("gaussian-fit", help="fit Gaussian Circular BP parameters by KL least squares")
    p.add_argument("--model", required=True)
    p.add_argument("--train")
    p.add_argument("--train-size", type=int, default=100)
    p.add_argument("--val-size", type=int, default=50)
    p.add_argument("--max-nfev", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_gaussian_fit)

    p = sub.add_parser("denoise", help="Hopfield / BP / Circular BP pattern denoising")
    p.add_argument("--idx", help="IDX image file; images are binarised by sign")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--pixels", type=int, default=64)
    p.add_argument("--noise-fraction", type=float, default=0.5)
    p.add_argument("--methods", nargs="+", choices=bench.DENOISE_METHODS, default=list(bench.DENOISE_METHODS))
    p.add_argument("--n-examples", type=int, default=1000)
    p.add_argument("--damping", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_denoise)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"circbp {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
