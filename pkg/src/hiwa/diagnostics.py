"""Error metrics and evaluable theory quantities for cluster-based alignment."""
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, InputError
from .manifold import random_orthogonal
from .solver import SolverConfig, default_gammas, subproblem_solve
from .transport import SinkhornParams, build_pair_cost, sinkhorn

__all__ = [
    "MetricReport",
    "DisambiguityReport",
    "PerturbationReport",
    "alignment_error",
    "correspondence_error",
    "metric_report",
    "disambiguity_constant",
    "finite_sample_margin",
    "disambiguity_check",
    "estimate_pairwise_costs",
    "perturbation_report",
]

# leading constant of the finite-sample Wasserstein concentration term
_CONCENTRATION_BASE = 1458.0


@dataclass
class MetricReport:
    alignment_error: float
    correspondence_error: float

    def to_dict(self):
        return {"alignment_error": self.alignment_error,
                "correspondence_error": self.correspondence_error}


@dataclass
class DisambiguityReport:
    margins: np.ndarray
    thresholds: np.ndarray
    satisfied: bool
    delta: float
    applicable: bool = True

    def to_dict(self):
        return {
            "margins": self.margins.tolist(),
            "thresholds": None if self.thresholds is None else self.thresholds.tolist(),
            "satisfied": self.satisfied,
            "delta": self.delta,
            "applicable": self.applicable,
        }


@dataclass
class PerturbationReport:
    epsilon: float
    bound: float  # None when X-bar is not full row rank
    condition_ok: bool
    data_constant: float
    blockwise_eps: np.ndarray
    op_norm: float
    pinv_norm: float
    full_row_rank: bool

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "bound": self.bound,
            "condition_ok": self.condition_ok,
            "data_constant": self.data_constant,
            "blockwise_eps": self.blockwise_eps.tolist(),
            "op_norm": self.op_norm,
            "pinv_norm": self.pinv_norm,
            "full_row_rank": self.full_row_rank,
        }


def _pooled(X):
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return X
    return np.concatenate([np.asarray(c, dtype=float) for c in X], axis=1)


def alignment_error(R_hat, R_star, X):
    """``||R_hat X - R_star X||_F^2 / ||R_star X||_F^2``.

    ``X`` is a ``D x N`` matrix or a list of clusters, which is pooled.
    """
    X = _pooled(X)
    R_hat = np.asarray(R_hat, dtype=float)
    R_star = np.asarray(R_star, dtype=float)
    if R_hat.shape != R_star.shape or R_star.shape[1] != X.shape[0]:
        raise DimensionError("shapes do not agree: R_hat %s, R_star %s, X %s"
                             % (R_hat.shape, R_star.shape, X.shape))
    ref = R_star @ X
    denom = float(np.sum(ref * ref))
    if denom == 0:
        raise InputError("R_star X is zero; alignment error is undefined")
    diff = R_hat @ X - ref
    return float(np.sum(diff * diff)) / denom


def correspondence_error(P_hat, P_star):
    """Entrywise L1 distance between two cluster couplings."""
    P_hat = np.asarray(P_hat, dtype=float)
    P_star = np.asarray(P_star, dtype=float)
    if P_hat.shape != P_star.shape:
        raise DimensionError("P_hat and P_star shapes differ: %s vs %s" % (P_hat.shape, P_star.shape))
    return float(np.abs(P_hat - P_star).sum())


def metric_report(R_hat, P_hat, truth, X):
    return MetricReport(
        alignment_error=alignment_error(R_hat, truth.R_star, X),
        correspondence_error=correspondence_error(P_hat, truth.P_star),
    )


def disambiguity_constant(d):
    """``1458 (2 + 1 / (3^(d/2 - 2) - 1))``; defined for ``d > 4``."""
    if d <= 4:
        raise ValueError("the constant is only defined for intrinsic dimension > 4, got %r" % (d,))
    return _CONCENTRATION_BASE * (2.0 + 1.0 / (3.0 ** (d / 2.0 - 2.0) - 1.0))


def finite_sample_margin(n, d, delta):
    """``c(d) n^(-2/d) + sqrt(log(1/delta) / (2n))``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1), got %r" % (delta,))
    return disambiguity_constant(d) * n ** (-2.0 / d) + math.sqrt(math.log(1.0 / delta) / (2.0 * n))


def disambiguity_check(X, Y, pairwise_costs, intrinsic_dims_x, intrinsic_dims_y, delta=0.05):
    """Check whether matched clusters beat mismatched ones by the sampling margin.

    ``pairwise_costs[i, j]`` is the (approximate) minimal transport cost
    between ``X[i]`` and ``Y[j]`` over transforms and couplings, see
    :func:`estimate_pairwise_costs`.  The criterion holds when for all
    ``i != j``::

        C[i, j] + C[j, i] - C[i, i] - C[j, j] > B_x,i + B_y,i + B_x,j + B_y,j

    with ``B_z,k = finite_sample_margin(n, d_z,k, delta)``.  When some
    intrinsic dimension is ``<= 4`` the margins are still returned but the
    report is flagged inapplicable and ``satisfied`` is False.
    """
    C = np.asarray(pairwise_costs, dtype=float)
    S = len(X)
    if len(Y) != S or C.shape != (S, S):
        raise DimensionError("need S clusters in X and Y and an S x S cost matrix")
    if len(intrinsic_dims_x) != S or len(intrinsic_dims_y) != S:
        raise DimensionError("need one intrinsic dimension per cluster")
    sizes = {np.asarray(c).shape[1] for c in X} | {np.asarray(c).shape[1] for c in Y}
    if len(sizes) != 1:
        raise InputError("the criterion assumes equally sized clusters, got sizes %s" % sorted(sizes))
    n = sizes.pop()

    diag = np.diag(C)
    margins = C + C.T - diag[:, None] - diag[None, :]
    np.fill_diagonal(margins, 0.0)

    dims = list(intrinsic_dims_x) + list(intrinsic_dims_y)
    if min(dims) <= 4:
        return DisambiguityReport(margins=margins, thresholds=None, satisfied=False,
                                  delta=delta, applicable=False)

    B_x = np.array([finite_sample_margin(n, d, delta) for d in intrinsic_dims_x])
    B_y = np.array([finite_sample_margin(n, d, delta) for d in intrinsic_dims_y])
    per_cluster = B_x + B_y
    thresholds = per_cluster[:, None] + per_cluster[None, :]
    np.fill_diagonal(thresholds, 0.0)
    off = ~np.eye(S, dtype=bool)
    satisfied = bool(np.all(margins[off] > thresholds[off])) if S > 1 else True
    return DisambiguityReport(margins=margins, thresholds=thresholds, satisfied=satisfied,
                              delta=delta)


def estimate_pairwise_costs(X, Y, config=None, restarts=5, seed=0):
    """Approximate ``min_{R, Q} C_ij(R, Q)`` for every cluster pair.

    Each pair is fitted on its own (cluster weight 1, no consensus pull)
    from ``restarts`` random orthogonal starts; the coupling for a start is
    the Sinkhorn plan under that transform.  The smallest transport cost
    over the restarts is kept.
    """
    config = config or SolverConfig()
    X = [np.asarray(c, dtype=float) for c in X]
    Y = [np.asarray(c, dtype=float) for c in Y]
    D = X[0].shape[0]
    gamma2 = config.gamma2
    if gamma2 is None:
        gamma2 = default_gammas(X, Y, np.eye(D))[1]
    zero = np.zeros((D, D))
    local = SolverConfig(
        gamma2=gamma2, mu=config.mu, inner_max_iters=max(config.inner_max_iters, 100),
        inner_tol=config.inner_tol, p_floor=config.p_floor,
        sinkhorn_max_iters=config.sinkhorn_max_iters, sinkhorn_tol=config.sinkhorn_tol,
    )
    starts = [random_orthogonal(D, np.random.default_rng([seed, r])) for r in range(restarts)]
    params = SinkhornParams(gamma2, config.sinkhorn_max_iters, config.sinkhorn_tol)
    S = len(X)
    out = np.empty((S, len(Y)))
    for i in range(S):
        for j in range(len(Y)):
            best = np.inf
            for R0 in starts:
                Q0 = sinkhorn(build_pair_cost(X[i], Y[j], R0), params)
                # consensus weight removed: R - Lambda = 0 zeroes the mu term
                res = subproblem_solve(X[i], Y[j], 1.0, zero, zero, local, gamma2,
                                       R_start=R0, Q_init=Q0)
                best = min(best, res.cost_value)
            out[i, j] = best
    return out


def _gram_gap(A, B):
    """``A^T A - B^T B`` with entries below the rounding-error bound set to 0.

    A dot product of length ``D`` carries an absolute error of roughly
    ``D * eps * |a| |b|``; differences under a small multiple of that are
    not resolvable and would otherwise be amplified by the square root in
    epsilon.
    """
    gap = A.T @ A - B.T @ B
    na = np.linalg.norm(A, axis=0)
    nb = np.linalg.norm(B, axis=0)
    floor = 8 * A.shape[0] * np.finfo(float).eps * (np.outer(na, na) + np.outer(nb, nb))
    gap[np.abs(gap) <= floor] = 0.0
    return gap


def _cross_gap(Yi, Yj, Xi, Xj):
    gap = Yi.T @ Yj - Xi.T @ Xj
    floor = 8 * Yi.shape[0] * np.finfo(float).eps * (
        np.outer(np.linalg.norm(Yi, axis=0), np.linalg.norm(Yj, axis=0))
        + np.outer(np.linalg.norm(Xi, axis=0), np.linalg.norm(Xj, axis=0)))
    gap[np.abs(gap) <= floor] = 0.0
    return gap


def perturbation_report(X, Y, Q_blocks, rank_tol=1e-10):
    """Global structure distortion and the alignment-cost bound built on it.

    Forms ``Xb = [X_1 Q_11, ..., X_c Q_cc]`` and ``Yb = [Y_1, ..., Y_c]``.
    The couplings are point correspondences with unit row and column sums
    (a permutation matrix for exact correspondences), so ``Y = R X`` with
    identity couplings gives ``epsilon = 0``.

    Returns
    -------
    PerturbationReport
        ``epsilon = sqrt(||Yb^T Yb - Xb^T Xb||_F)``; ``bound`` is None when
        ``Xb`` is not full row rank.
    """
    X = [np.asarray(c, dtype=float) for c in X]
    Y = [np.asarray(c, dtype=float) for c in Y]
    Q_blocks = [np.asarray(q, dtype=float) for q in Q_blocks]
    c = len(X)
    if len(Y) != c or len(Q_blocks) != c:
        raise DimensionError("X, Y and Q_blocks must have the same number of clusters")
    for i in range(c):
        if Q_blocks[i].shape != (X[i].shape[1], Y[i].shape[1]):
            raise DimensionError("Q_blocks[%d] must be %d x %d, got %s"
                                 % (i, X[i].shape[1], Y[i].shape[1], Q_blocks[i].shape))
        if X[i].shape[0] != Y[i].shape[0]:
            raise DimensionError("cluster %d: X and Y embedding dimensions differ" % i)

    XQ = [X[i] @ Q_blocks[i] for i in range(c)]
    Xb = np.concatenate(XQ, axis=1)
    Yb = np.concatenate(Y, axis=1)
    gram_gap = _gram_gap(Yb, Xb)
    epsilon = math.sqrt(float(np.linalg.norm(gram_gap)))

    s = np.linalg.svd(Xb, compute_uv=False)
    op_norm = float(s[0]) if s.size else 0.0
    nonzero = s[s > rank_tol * max(op_norm, 1e-300)]
    pinv_norm = float(1.0 / nonzero[-1]) if nonzero.size else math.inf
    full_row_rank = nonzero.size == Xb.shape[0]

    data_constant = 0.0
    for i in range(c):
        n = X[i].shape[1]
        inner = np.eye(n) / n - Q_blocks[i] @ Q_blocks[i].T
        data_constant += float(np.trace(X[i] @ inner @ X[i].T)
                               + (1.0 / n - 1.0) * np.trace(Y[i] @ Y[i].T))

    if full_row_rank:
        kappa = op_norm * pinv_norm
        condition_ok = bool(epsilon * pinv_norm <= kappa ** -0.5 / math.sqrt(2.0))
        bound = (kappa + 2.0) ** 2 * pinv_norm ** 2 * epsilon ** 4 + data_constant
    else:
        condition_ok = False
        bound = None

    blockwise = np.empty((c, c))
    for i in range(c):
        for j in range(c):
            blockwise[i, j] = np.linalg.norm(_cross_gap(Y[i], Y[j], XQ[i], XQ[j]))

    return PerturbationReport(
        epsilon=epsilon,
        bound=bound,
        condition_ok=condition_ok,
        data_constant=data_constant,
        blockwise_eps=blockwise,
        op_norm=op_norm,
        pinv_norm=pinv_norm,
        full_row_rank=bool(full_row_rank),
    )
