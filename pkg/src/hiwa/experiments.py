"""Synthetic experiment grids and the runners behind ``hiwa sweep``/``benchmark``."""
import logging
from dataclasses import replace

import numpy as np

from .datagen import GenSpec, generate
from .diagnostics import alignment_error, correspondence_error
from .solver import SolverConfig, solve

__all__ = [
    "EXPERIMENTS",
    "run_trial",
    "worst_vs_random",
    "dim_sample_sweep",
    "ablation",
    "benchmark",
    "percentile_summary",
]

logger = logging.getLogger(__name__)

EXPERIMENTS = ("worst_vs_random", "dim_sample_sweep", "ablation")

DIMS = (2, 3, 4, 5)
SAMPLE_SIZES = (12, 25, 50, 100, 200)

# embedding dimension per intrinsic dimension for the (d, n) grid; keeps the
# ambient-to-intrinsic ratio fixed so subspace overlap stays comparable
DEFAULT_AMBIENT = {2: 6, 3: 9, 4: 12, 5: 15}


def run_trial(spec, config, label="", keep_result=False):
    """Generate one dataset pair, align it, and score the result.

    The dataset seed is ``spec.seed`` and the solver seed is ``config.seed``.
    Returns a flat dict ready to be written as a CSV row.
    """
    X, Y, truth = generate(spec)
    result = solve(X, Y, config)
    row = {
        "config": label,
        "mode": "wa" if config.mode == "flat" else "hiwa",
        "subspace_mode": spec.subspace_mode,
        "S": spec.S,
        "d": spec.d,
        "D": spec.D,
        "n": spec.n,
        "seed": spec.seed,
        "alignment_error": alignment_error(result.R, truth.R_star, X),
        "correspondence_error": correspondence_error(result.P, truth.P_star),
        "converged": result.converged,
        "iterations": result.iterations,
        "wall_time_sec": result.wall_time,
    }
    if keep_result:
        row["result"] = result
    logger.info("%s seed=%d align=%.4g corr=%.4g iters=%d", label, spec.seed,
                row["alignment_error"], row["correspondence_error"], result.iterations)
    return row


def _seeded(config, seed):
    return replace(config, seed=seed)


def worst_vs_random(trials=20, S=5, d=2, D=6, sample_sizes=(25, 100), config=None, seed=0):
    """Equally spaced (worst case) versus random subspaces on identical settings."""
    config = config or SolverConfig()
    rows = []
    for n in sample_sizes:
        for mode in ("random", "equally_spaced"):
            label = "%s_n%d" % (mode, n)
            for t in range(trials):
                spec = GenSpec(S, d, D, n, subspace_mode=mode, permute_clusters=True, seed=seed + t)
                rows.append(run_trial(spec, _seeded(config, seed + t), label))
    return rows


def dim_sample_sweep(trials=20, S=5, dims=DIMS, sample_sizes=SAMPLE_SIZES, ambient=None,
                     config=None, seed=0):
    """Alignment quality over intrinsic dimension and per-cluster sample size."""
    config = config or SolverConfig()
    ambient = dict(DEFAULT_AMBIENT, **(ambient or {}))
    rows = []
    for d in dims:
        D = ambient.get(d, 3 * d)
        for n in sample_sizes:
            label = "d%d_n%d" % (d, n)
            for t in range(trials):
                spec = GenSpec(S, d, D, n, permute_clusters=True, seed=seed + t)
                rows.append(run_trial(spec, _seeded(config, seed + t), label))
    return rows


def ablation(trials=50, S=5, d=2, D=6, n=50, config=None, seed=0):
    """Hierarchical versus flat alignment on the same data and seeds."""
    config = config or SolverConfig()
    rows = []
    for t in range(trials):
        spec = GenSpec(S, d, D, n, permute_clusters=True, seed=seed + t)
        for mode in ("hierarchical", "flat"):
            cfg = replace(config, seed=seed + t, mode=mode)
            rows.append(run_trial(spec, cfg, "ablation_" + ("hiwa" if mode == "hierarchical" else "wa")))
    return rows


def benchmark(cluster_counts, thread_counts, trials=10, n=50, d=2, D=6, config=None, seed=0):
    """Wall time of a full solve per (cluster count, thread count, trial)."""
    config = config or SolverConfig()
    rows = []
    for S in cluster_counts:
        for t in range(trials):
            X, Y, _ = generate(GenSpec(S, d, D, n, permute_clusters=True, seed=seed + t))
            for threads in thread_counts:
                result = solve(X, Y, replace(config, seed=seed + t, threads=threads))
                rows.append({"S": S, "threads": threads, "trial": t,
                             "wall_time_sec": result.wall_time})
    return rows


def percentile_summary(rows, percentiles=(25, 50, 75)):
    """25th/50th/75th percentiles of both errors per (config, mode)."""
    groups = {}
    for row in rows:
        groups.setdefault((row["config"], row["mode"]), []).append(row)
    summary = []
    for (label, mode), members in groups.items():
        out = {"config": label, "mode": mode, "trials": len(members)}
        for metric in ("alignment_error", "correspondence_error"):
            values = np.array([m[metric] for m in members])
            for q in percentiles:
                out["%s_p%d" % (metric, q)] = float(np.percentile(values, q))
        summary.append(out)
    return summary
