"""Command-line interface: ``hiwa generate | align | benchmark | sweep``.

Exit codes: 0 on success (a run that did not converge still succeeds and
says so in its JSON), 2 on usage or input errors, 1 on anything else.
"""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import experiments
from .datagen import GenSpec, GroundTruth, generate
from .diagnostics import (
    disambiguity_check,
    estimate_pairwise_costs,
    metric_report,
    perturbation_report,
)
from .exceptions import HiwaError
from .io import dump_json, read_dataset, result_to_dict, write_dataset
from .solver import SolverConfig, solve

logger = logging.getLogger("hiwa")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2


def _default_threads():
    value = os.environ.get("HIWA_THREADS", "0")
    try:
        return int(value)
    except ValueError:
        return 0


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers, got %r" % text)
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _add_solver_flags(p):
    p.add_argument("--gamma1", type=float, help="cluster-level entropic weight (default: cost-relative)")
    p.add_argument("--gamma2", type=float, help="point-level entropic weight (default: cost-relative)")
    p.add_argument("--mu", type=float, default=SolverConfig.mu)
    p.add_argument("--outer-iters", type=int, default=SolverConfig.outer_max_iters)
    p.add_argument("--tol", type=float, default=SolverConfig.outer_tol)
    p.add_argument("--inner-iters", type=int, default=SolverConfig.inner_max_iters)
    p.add_argument("--inner-tol", type=float, default=SolverConfig.inner_tol)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="worker threads, 0 = all cores (default: $HIWA_THREADS or 0)")
    p.add_argument("--mode", choices=("hiwa", "wa"), default="hiwa",
                   help="hiwa: cluster-aware; wa: pool all points into one cluster")


def _config_from(args, **overrides):
    kw = dict(
        gamma1=args.gamma1,
        gamma2=args.gamma2,
        mu=args.mu,
        outer_max_iters=args.outer_iters,
        outer_tol=args.tol,
        inner_max_iters=args.inner_iters,
        inner_tol=args.inner_tol,
        seed=args.seed,
        threads=args.threads,
        mode="flat" if args.mode == "wa" else "hierarchical",
    )
    kw.update(overrides)
    return SolverConfig(**kw)


def _spec_from(args):
    return GenSpec(
        S=args.clusters,
        d=args.intrinsic_dim,
        D=args.ambient_dim,
        n=args.samples,
        subspace_mode=args.subspace_mode,
        noise_sigma=args.noise,
        permute_clusters=args.permute,
        seed=args.seed,
        shared_samples=args.shared_samples,
    )


def cmd_generate(args):
    spec = _spec_from(args)
    X, Y, truth = generate(spec)
    write_dataset(args.out_x, X)
    write_dataset(args.out_y, Y)
    payload = truth.to_dict()
    payload["spec"] = {
        "S": spec.S, "d": spec.d, "D": spec.D, "n": spec.n,
        "subspace_mode": spec.subspace_mode, "noise_sigma": spec.noise_sigma,
        "permute_clusters": spec.permute_clusters, "seed": spec.seed,
        "shared_samples": spec.shared_samples,
    }
    with open(args.out_truth, "w", encoding="utf-8") as fh:
        dump_json(payload, fh)
    return EXIT_OK


def _diagnostics(X, Y, result, truth, truth_payload, config, args):
    S = len(X)
    if truth is not None:
        # X cluster matched to Y cluster j
        match = list(truth.permutation) or list(range(S))
    else:
        match = [int(np.argmax(result.P[:, j])) for j in range(S)]
    out = {}
    if config.mode == "hierarchical" and len(set(match)) == S:
        X_ordered = [X[match[j]] for j in range(S)]
        # solver couplings have marginals 1/n; rescale to unit sums
        blocks = [result.couplings[match[j]][j] * X[match[j]].shape[1] for j in range(S)]
        if all(b.shape[0] == b.shape[1] for b in blocks):
            out["perturbation"] = perturbation_report(X_ordered, Y, blocks).to_dict()
    dims = args.intrinsic_dims
    if dims is None and truth_payload is not None and "spec" in truth_payload:
        dims = [truth_payload["spec"]["d"]] * S
    if dims is not None:
        if len(dims) == 1:
            dims = dims * S
        sizes = {c.shape[1] for c in X} | {c.shape[1] for c in Y}
        if len(sizes) == 1:
            costs = estimate_pairwise_costs(X, Y, config, seed=config.seed)
            report = disambiguity_check(X, Y, costs, dims, dims, args.delta)
            out["disambiguity"] = report.to_dict()
    return out


def cmd_align(args):
    X = read_dataset(args.x_file)
    Y = read_dataset(args.y_file)
    config = _config_from(args)
    result = solve(X, Y, config)
    metrics = None
    truth = None
    truth_payload = None
    if args.truth:
        with open(args.truth, encoding="utf-8") as fh:
            truth_payload = json.load(fh)
        truth = GroundTruth.from_dict(truth_payload)
        metrics = metric_report(result.R, result.P, truth, X)
    diagnostics = None
    if args.diagnostics:
        diagnostics = _diagnostics(X, Y, result, truth, truth_payload, config, args)
    payload = result_to_dict(result, config, metrics, diagnostics)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            dump_json(payload, fh)
    else:
        dump_json(payload, sys.stdout)
    return EXIT_OK


def _write_csv(rows, fields, path):
    fh = open(path, "w", encoding="utf-8", newline="") if path else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("%.17g" % v if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if path:
            fh.close()


def cmd_benchmark(args):
    config = SolverConfig(outer_max_iters=args.outer_iters, seed=args.seed)
    rows = experiments.benchmark(args.clusters_list, args.threads_list, trials=args.trials,
                                 n=args.samples, d=args.intrinsic_dim, D=args.ambient_dim,
                                 config=config, seed=args.seed)
    _write_csv(rows, ["S", "threads", "trial", "wall_time_sec"], args.out)
    return EXIT_OK


RAW_FIELDS = ["config", "mode", "subspace_mode", "S", "d", "D", "n", "seed",
              "alignment_error", "correspondence_error", "converged", "iterations"]


def cmd_sweep(args):
    config = _config_from(args)
    trials = args.trials
    if args.experiment == "worst_vs_random":
        rows = experiments.worst_vs_random(
            trials=trials or 20, S=args.clusters or 5, d=args.intrinsic_dim or 2,
            D=args.ambient_dim or 6, sample_sizes=args.samples or (25, 100),
            config=config, seed=args.seed)
    elif args.experiment == "dim_sample_sweep":
        ambient = None
        if args.ambient_dims:
            ambient = dict(zip(args.intrinsic_dims_list or experiments.DIMS, args.ambient_dims))
        rows = experiments.dim_sample_sweep(
            trials=trials or 20, S=args.clusters or 5,
            dims=args.intrinsic_dims_list or experiments.DIMS,
            sample_sizes=args.samples or experiments.SAMPLE_SIZES,
            ambient=ambient, config=config, seed=args.seed)
    else:
        rows = experiments.ablation(
            trials=trials or 50, S=args.clusters or 5, d=args.intrinsic_dim or 2,
            D=args.ambient_dim or 6, n=(args.samples or [50])[0], config=config, seed=args.seed)
    _write_csv(rows, RAW_FIELDS, args.out)
    summary = experiments.percentile_summary(rows)
    fields = list(summary[0]) if summary else ["config", "mode"]
    summary_path = args.summary
    if summary_path is None and args.out:
        root, ext = os.path.splitext(args.out)
        summary_path = root + "_summary" + (ext or ".csv")
    if summary_path is None:
        sys.stdout.write("\n")
    _write_csv(summary, fields, summary_path)
    return EXIT_OK


def _add_gen_flags(p, required=True):
    p.add_argument("--clusters", type=int, required=required)
    p.add_argument("--intrinsic-dim", type=int, required=required)
    p.add_argument("--ambient-dim", type=int, required=required)
    p.add_argument("--samples", type=int, required=required)


def build_parser():
    parser = argparse.ArgumentParser(prog="hiwa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset pair and its ground truth")
    _add_gen_flags(p)
    p.add_argument("--subspace-mode", choices=("random", "equally_spaced"), default="random")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--permute", action="store_true")
    p.add_argument("--shared-samples", action="store_true",
                   help="Y is a transformed copy of X's points instead of a fresh draw")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-x", required=True)
    p.add_argument("--out-y", required=True)
    p.add_argument("--out-truth", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("align", help="align two clustered CSV datasets")
    p.add_argument("x_file")
    p.add_argument("y_file")
    _add_solver_flags(p)
    p.add_argument("--truth", help="ground-truth JSON from 'generate'; adds error metrics")
    p.add_argument("--diagnostics", action="store_true",
                   help="add perturbation and disambiguity reports")
    p.add_argument("--intrinsic-dims", type=_int_list,
                   help="per-cluster intrinsic dimensions for the disambiguity check")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--out", help="write the result JSON here instead of stdout")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("benchmark", help="time serial against parallel solves")
    p.add_argument("--clusters-list", type=_int_list, default=[2, 4, 6, 8, 10])
    p.add_argument("--threads-list", type=_int_list, default=[1, os.cpu_count() or 1])
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--intrinsic-dim", type=int, default=2)
    p.add_argument("--ambient-dim", type=int, default=6)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--outer-iters", type=int, default=SolverConfig.outer_max_iters)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("sweep", help="run a synthetic experiment grid")
    p.add_argument("experiment", choices=experiments.EXPERIMENTS)
    p.add_argument("--trials", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--intrinsic-dim", type=int)
    p.add_argument("--ambient-dim", type=int)
    p.add_argument("--samples", type=_int_list, help="per-cluster sample sizes")
    p.add_argument("--intrinsic-dims-list", type=_int_list)
    p.add_argument("--ambient-dims", type=_int_list,
                   help="embedding dimension per entry of --intrinsic-dims-list")
    _add_solver_flags(p)
    p.add_argument("--out", help="raw per-trial CSV (default stdout)")
    p.add_argument("--summary", help="percentile summary CSV (default: <out>_summary.csv)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (HiwaError, ValueError, OSError) as exc:
        print("hiwa %s: error: %s" % (args.command, exc), file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print("hiwa %s: internal error: %s" % (args.command, exc), file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
