"""Hierarchical Wasserstein alignment by consensus ADMM.

The source and target datasets are lists of clusters (``D x n_i`` arrays,
points as columns).  For every cluster pair ``(i, j)`` a local orthogonal
transform ``R_ij`` and point coupling ``Q_ij`` are fitted; a cluster coupling
``P`` weighs the pairs, and the local transforms are driven to a shared ``R``
through dual variables ``Lambda_ij``.  One outer iteration is:

1. all pair subproblems (in parallel),
2. ``P`` update from the pair costs,
3. consensus update of ``R``,
4. dual update of every ``Lambda_ij``.

``mode="flat"`` pools each dataset into a single cluster, which turns the
same machinery into plain Wasserstein-Procrustes alignment.
"""
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .exceptions import DimensionError, InputError
from .manifold import consensus_align, random_orthogonal, stiefel_align
from .transport import (
    Coupling,
    SinkhornParams,
    build_pair_cost,
    marginal_violation,
    neg_entropy,
    sinkhorn,
    transport_cost,
)

__all__ = [
    "SolverConfig",
    "PairState",
    "SolverState",
    "SubproblemResult",
    "AlignmentResult",
    "solve",
    "subproblem_solve",
    "update_P",
    "objective",
    "default_gammas",
    "aggregate_coupling",
]

logger = logging.getLogger(__name__)

MODES = ("hierarchical", "flat")

# entropic scales relative to the median initial cost when not given
GAMMA1_SCALE = 0.1
GAMMA2_SCALE = 0.05


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters.

    ``gamma1`` and ``gamma2`` may be left as ``None``; they are then set to
    ``0.1`` and ``0.05`` times the median entry of the cost matrix between the
    pooled datasets under the initial transform.
    """

    gamma1: float = None
    gamma2: float = None
    mu: float = 0.01
    outer_max_iters: int = 300
    outer_tol: float = 1e-6
    inner_max_iters: int = 30
    inner_tol: float = 1e-5
    p_floor: float = 1e-6
    seed: int = 0
    threads: int = 0
    mode: str = "hierarchical"
    sinkhorn_max_iters: int = 1000
    sinkhorn_tol: float = 1e-9

    def __post_init__(self):
        for name in ("gamma1", "gamma2"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError("%s must be positive, got %r" % (name, value))
        for name in ("mu", "outer_tol", "inner_tol", "p_floor", "sinkhorn_tol"):
            if not getattr(self, name) > 0:
                raise ValueError("%s must be positive, got %r" % (name, getattr(self, name)))
        for name in ("outer_max_iters", "inner_max_iters", "sinkhorn_max_iters"):
            if getattr(self, name) < 1:
                raise ValueError("%s must be >= 1, got %r" % (name, getattr(self, name)))
        if self.threads < 0:
            raise ValueError("threads must be >= 0, got %r" % (self.threads,))
        if self.mode not in MODES:
            raise ValueError("mode must be one of %s, got %r" % (MODES, self.mode))

    def to_dict(self):
        return asdict(self)


@dataclass
class PairState:
    R: np.ndarray
    Q: Coupling
    Lambda: np.ndarray
    cost_value: float


@dataclass
class SolverState:
    R: np.ndarray
    P: Coupling
    pairs: list  # pairs[i][j] is a PairState


@dataclass
class SubproblemResult:
    R: np.ndarray
    Q: Coupling
    cost_value: float
    inner_iters: int
    sinkhorn_converged: bool
    degenerate: bool


@dataclass
class AlignmentResult:
    """Outcome of :func:`solve`.

    ``R`` and ``P`` come from the final iterate when the run converged and
    from the iterate with the smallest primal residual otherwise.  In flat
    mode ``P`` is the point coupling summed over the original cluster blocks,
    so it is comparable with a hierarchical run.
    """

    R: np.ndarray
    P: np.ndarray
    objective_trace: list
    primal_residual_trace: list
    iterations: int
    converged: bool
    det_R: int
    wall_time: float
    gamma1: float
    gamma2: float
    mode: str
    couplings: list = field(default_factory=list, repr=False)
    pair_costs: np.ndarray = None
    P_marginal_trace: list = field(default_factory=list)
    Q_marginal_trace: list = field(default_factory=list)
    sinkhorn_failures: int = 0
    degenerate_svd: bool = False


def _validate_dataset(clusters, name):
    if isinstance(clusters, np.ndarray) and clusters.ndim == 2:
        clusters = [clusters]
    clusters = [np.asarray(c, dtype=float) for c in clusters]
    if not clusters:
        raise InputError("%s has no clusters" % name)
    for k, c in enumerate(clusters):
        if c.ndim != 2:
            raise InputError("%s cluster %d must be a 2-d D x n array" % (name, k))
        if c.shape[1] == 0:
            raise InputError("%s cluster %d is empty" % (name, k))
        if not np.isfinite(c).all():
            raise InputError("%s cluster %d contains non-finite values" % (name, k))
    dims = {c.shape[0] for c in clusters}
    if len(dims) != 1:
        raise InputError("%s clusters disagree on the embedding dimension: %s" % (name, sorted(dims)))
    return clusters


def default_gammas(X, Y, R):
    """Entropic parameters scaled to the median cost between the pooled datasets."""
    C = build_pair_cost(np.concatenate(X, axis=1), np.concatenate(Y, axis=1), R)
    m = float(np.median(C))
    if m <= 0:
        # degenerate data (all points coincide); any positive scale works
        m = 1.0
    return GAMMA1_SCALE * m, GAMMA2_SCALE * m


def subproblem_solve(X_i, Y_j, P_ij, R_consensus, Lambda_ij, config, gamma2=None,
                     R_start=None, Q_init=None, warm_potentials=None):
    """Alternating minimization over one pair's transform and coupling.

    Starting from ``Q`` uniform (or ``Q_init``), alternates

    * ``R_ij = stiefel_align(2 P_ij Y_j Q^T X_i^T + mu (R - Lambda_ij))``
    * ``Q = sinkhorn(cost(X_i, Y_j, R_ij), gamma2 / P_ij)``

    until ``R_ij`` moves less than ``config.inner_tol`` (Frobenius) or
    ``config.inner_max_iters`` sweeps are done.  ``P_ij`` is floored at
    ``config.p_floor``.  ``R_start`` is only the reference for the first
    change measurement.  ``warm_potentials`` seeds the first Sinkhorn solve
    (later ones are seeded from their predecessor); this speeds convergence
    without changing the solutions.

    Returns
    -------
    SubproblemResult
    """
    X_i = np.asarray(X_i, dtype=float)
    Y_j = np.asarray(Y_j, dtype=float)
    if P_ij < 0:
        raise InputError("P_ij must be nonnegative, got %r" % (P_ij,))
    if gamma2 is None:
        gamma2 = config.gamma2
    if gamma2 is None:
        raise InputError("gamma2 must be given either directly or in the config")
    p = max(float(P_ij), config.p_floor)
    params = SinkhornParams(gamma2 / p, config.sinkhorn_max_iters, config.sinkhorn_tol)
    n_x = X_i.shape[1]
    n_y = Y_j.shape[1]
    if Q_init is None:
        Q = Coupling(
            plan=np.full((n_x, n_y), 1.0 / (n_x * n_y)),
            row_marginal=np.full(n_x, 1.0 / n_x),
            col_marginal=np.full(n_y, 1.0 / n_y),
        )
    else:
        Q = Q_init
    anchor = config.mu * (np.asarray(R_consensus) - np.asarray(Lambda_ij))
    R_prev = R_consensus if R_start is None else R_start
    sinkhorn_ok = True
    degenerate = False
    cost = None
    potentials = warm_potentials
    it = 0
    for it in range(1, config.inner_max_iters + 1):
        target = 2.0 * p * (Y_j @ Q.plan.T @ X_i.T) + anchor
        R, deg = stiefel_align(target, return_degenerate=True)
        cost = build_pair_cost(X_i, Y_j, R)
        Q = sinkhorn(cost, params, init=potentials)
        potentials = Q.potentials
        sinkhorn_ok = sinkhorn_ok and Q.converged
        degenerate = degenerate or deg
        change = np.linalg.norm(R - R_prev)
        R_prev = R
        if change < config.inner_tol:
            break
    return SubproblemResult(
        R=R_prev,
        Q=Q,
        cost_value=transport_cost(Q, cost),
        inner_iters=it,
        sinkhorn_converged=sinkhorn_ok,
        degenerate=degenerate,
    )


def update_P(cost_values, gamma1, max_iters=1000, tol=1e-9):
    """Cluster coupling: Sinkhorn on the pair costs with uniform marginals."""
    C = np.asarray(cost_values, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionError("cost_values must be square, got shape %s" % (C.shape,))
    return sinkhorn(C, SinkhornParams(gamma1, max_iters, tol))


def objective(state, config, gamma1=None, gamma2=None):
    """``sum_ij (P_ij C_ij + H_gamma2(Q_ij)) + H_gamma1(P)``."""
    gamma1 = config.gamma1 if gamma1 is None else gamma1
    gamma2 = config.gamma2 if gamma2 is None else gamma2
    P = state.P.plan if isinstance(state.P, Coupling) else np.asarray(state.P)
    total = 0.0
    for i, row in enumerate(state.pairs):
        for j, pair in enumerate(row):
            total += P[i, j] * pair.cost_value + neg_entropy(pair.Q, gamma2)
    return total + neg_entropy(P, gamma1)


def aggregate_coupling(Q, sizes_x, sizes_y):
    """Sum a point coupling over cluster blocks, giving an ``S_x x S_y`` matrix."""
    Q = Q.plan if isinstance(Q, Coupling) else np.asarray(Q)
    rows = np.add.reduceat(Q, np.concatenate([[0], np.cumsum(sizes_x)[:-1]]), axis=0)
    return np.add.reduceat(rows, np.concatenate([[0], np.cumsum(sizes_y)[:-1]]), axis=1)


def _resolve_threads(threads):
    if threads:
        return threads
    return os.cpu_count() or 1


def solve(X, Y, config=None, observer=None):
    """Align clustered dataset ``X`` onto ``Y``.

    Parameters
    ----------
    X, Y : list of (D, n_i) arrays
        Source and target clusters.  Both must have the same number of
        clusters in hierarchical mode.
    config : SolverConfig, optional
    observer : callable, optional
        Called as ``observer(event, iteration, payload)`` with events
        ``"pair"`` (payload ``(i, j)``, from worker threads), ``"P"``, ``"R"``
        and ``"dual"``.  Meant for instrumentation and tests.

    Returns
    -------
    AlignmentResult

    Raises
    ------
    InputError
        On empty clusters, non-finite data or mismatched dimensions.
    """
    config = config or SolverConfig()
    start = time.perf_counter()
    X = _validate_dataset(X, "X")
    Y = _validate_dataset(Y, "Y")
    D = X[0].shape[0]
    if Y[0].shape[0] != D:
        raise InputError("X and Y embedding dimensions differ: %d vs %d" % (D, Y[0].shape[0]))
    sizes_x = [c.shape[1] for c in X]
    sizes_y = [c.shape[1] for c in Y]
    if config.mode == "flat":
        X = [np.concatenate(X, axis=1)]
        Y = [np.concatenate(Y, axis=1)]
    S = len(X)
    if len(Y) != S:
        raise InputError("X has %d clusters but Y has %d" % (S, len(Y)))
    if config.p_floor > 1.0 / S ** 2:
        raise ValueError("p_floor must be <= 1/S^2 = %r" % (1.0 / S ** 2,))

    R = random_orthogonal(D, config.seed)
    g1_default, g2_default = default_gammas(X, Y, R)
    gamma1 = config.gamma1 if config.gamma1 is not None else g1_default
    gamma2 = config.gamma2 if config.gamma2 is not None else g2_default

    P = Coupling(
        plan=np.full((S, S), 1.0 / S ** 2),
        row_marginal=np.full(S, 1.0 / S),
        col_marginal=np.full(S, 1.0 / S),
    )
    pair_index = [(i, j) for i in range(S) for j in range(S)]
    R_pairs = {ij: R.copy() for ij in pair_index}
    Lambdas = {ij: np.zeros((D, D)) for ij in pair_index}
    warm = {}

    objective_trace = []
    residual_trace = []
    p_marg_trace = []
    q_marg_trace = []
    sinkhorn_failures = 0
    degenerate = False
    best = None
    converged = False
    it = 0

    def run_pair(ij):
        i, j = ij
        res = subproblem_solve(
            X[i], Y[j], P.plan[i, j], R, Lambdas[ij], config, gamma2,
            R_start=R_pairs[ij], warm_potentials=warm.get(ij),
        )
        if observer is not None:
            observer("pair", it, ij)
        return res

    n_threads = min(_resolve_threads(config.threads), len(pair_index))
    with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=n_threads) as pool:
        for it in range(1, config.outer_max_iters + 1):
            if n_threads > 1:
                results = list(pool.map(run_pair, pair_index))
            else:
                results = [run_pair(ij) for ij in pair_index]

            costs = np.empty((S, S))
            for (i, j), res in zip(pair_index, results):
                costs[i, j] = res.cost_value
                R_pairs[(i, j)] = res.R
                warm[(i, j)] = res.Q.potentials
                sinkhorn_failures += not res.sinkhorn_converged
                degenerate = degenerate or res.degenerate

            P = update_P(costs, gamma1, config.sinkhorn_max_iters, config.sinkhorn_tol)
            sinkhorn_failures += not P.converged
            if observer is not None:
                observer("P", it, None)

            R_old = R
            R = consensus_align([R_pairs[ij] + Lambdas[ij] for ij in pair_index])
            if observer is not None:
                observer("R", it, None)

            for ij in pair_index:
                Lambdas[ij] = Lambdas[ij] + R_pairs[ij] - R
            if observer is not None:
                observer("dual", it, None)

            state = SolverState(
                R=R,
                P=P,
                pairs=[[PairState(R_pairs[(i, j)], results[i * S + j].Q, Lambdas[(i, j)],
                                  results[i * S + j].cost_value)
                        for j in range(S)] for i in range(S)],
            )
            objective_trace.append(objective(state, config, gamma1, gamma2))
            residual = max(float(np.linalg.norm(R_pairs[ij] - R)) for ij in pair_index)
            residual_trace.append(residual)
            p_marg_trace.append(marginal_violation(P, P.row_marginal, P.col_marginal))
            q_marg_trace.append(max(res.Q.violation for res in results))

            if best is None or residual < best[0]:
                best = (residual, R, P, results, costs)

            step = float(np.linalg.norm(R - R_old))
            logger.debug("iter %d: objective %.6g, residual %.3g, step %.3g",
                         it, objective_trace[-1], residual, step)
            if step <= config.outer_tol and residual <= config.outer_tol:
                converged = True
                break

    if converged:
        final_R, final_P, final_results, final_costs = R, P, results, costs
    else:
        _, final_R, final_P, final_results, final_costs = best

    couplings = [[final_results[i * S + j].Q.plan for j in range(S)] for i in range(S)]
    if config.mode == "flat":
        P_out = aggregate_coupling(couplings[0][0], sizes_x, sizes_y)
    else:
        P_out = final_P.plan

    return AlignmentResult(
        R=final_R,
        P=P_out,
        objective_trace=objective_trace,
        primal_residual_trace=residual_trace,
        iterations=it,
        converged=converged,
        det_R=int(np.sign(np.linalg.det(final_R))),
        wall_time=time.perf_counter() - start,
        gamma1=gamma1,
        gamma2=gamma2,
        mode=config.mode,
        couplings=couplings,
        pair_costs=final_costs,
        P_marginal_trace=p_marg_trace,
        Q_marginal_trace=q_marg_trace,
        sinkhorn_failures=sinkhorn_failures,
        degenerate_svd=degenerate,
    )
