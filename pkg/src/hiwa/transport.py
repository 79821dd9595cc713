"""Entropic optimal transport between two point clouds.

Cost construction, Sinkhorn matrix scaling (plain and log-domain) and the
two scalar functionals that appear in the alignment objective.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .exceptions import DimensionError, InputError

__all__ = [
    "Coupling",
    "SinkhornParams",
    "build_pair_cost",
    "sinkhorn",
    "transport_cost",
    "neg_entropy",
    "marginal_violation",
]

# -C/gamma below this switches to the log-domain iteration.  exp() of values
# below ~-708 underflows to subnormals; the margin keeps the scaling vectors
# (which grow like exp(+C/gamma)) away from overflow as well.
_LOG_DOMAIN_THRESHOLD = float(np.log(np.finfo(float).tiny)) / 2.0

# marginal violation is measured every this many iterations
_CHECK_EVERY = 10

# scaling iterations tried before switching to Newton steps on the dual
_NEWTON_AFTER = 200

# scalings are folded into the log potentials once they leave [1/_ABSORB, _ABSORB]
_ABSORB = np.exp(50.0)


@dataclass(frozen=True)
class SinkhornParams:
    gamma: float
    max_iters: int = 1000
    tol: float = 1e-9

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive, got %r" % (self.gamma,))
        if not self.tol > 0:
            raise ValueError("tol must be positive, got %r" % (self.tol,))
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1, got %r" % (self.max_iters,))


@dataclass
class Coupling:
    """A transport plan together with the marginals it was solved for.

    ``converged`` is False when the solver hit its iteration cap; the plan is
    then the last iterate and ``violation`` tells how far off it is.
    """

    plan: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    converged: bool = True
    n_iter: int = 0
    violation: float = 0.0
    log_domain: bool = False
    potentials: tuple = None

    @property
    def shape(self):
        return self.plan.shape


def _as_plan(plan):
    if isinstance(plan, Coupling):
        return plan.plan
    return np.asarray(plan, dtype=float)


def marginal_violation(plan, row_marginal, col_marginal):
    """L-infinity distance between the plan's marginals and the targets."""
    P = _as_plan(plan)
    return max(
        float(np.max(np.abs(P.sum(axis=1) - row_marginal))),
        float(np.max(np.abs(P.sum(axis=0) - col_marginal))),
    )


def build_pair_cost(X, Y, R=None):
    """Squared-distance cost between transformed source and target points.

    Parameters
    ----------
    X : (D, n_x) array
        Source points as columns.
    Y : (D, n_y) array
        Target points as columns.
    R : (D, D) array, optional
        Orthogonal transform applied to ``X``; identity when omitted.

    Returns
    -------
    C : (n_x, n_y) array
        ``C[k, l] = ||R X[:, k] - Y[:, l]||^2 / D``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2:
        raise DimensionError("X and Y must be 2-d, got %d-d and %d-d" % (X.ndim, Y.ndim))
    D = X.shape[0]
    if Y.shape[0] != D:
        raise DimensionError(
            "X and Y must share the row (embedding) dimension, got %d and %d" % (D, Y.shape[0])
        )
    if R is not None:
        R = np.asarray(R, dtype=float)
        if R.shape != (D, D):
            raise DimensionError("R must be %dx%d, got %s" % (D, D, R.shape))
        X = R @ X
    sq_x = np.einsum("ij,ij->j", X, X)
    sq_y = np.einsum("ij,ij->j", Y, Y)
    C = sq_x[:, None] + sq_y[None, :] - 2.0 * (X.T @ Y)
    # cancellation in the expansion can leave tiny negatives
    np.maximum(C, 0.0, out=C)
    C /= D
    return C


def _check_marginal(m, size, name):
    if m is None:
        return np.full(size, 1.0 / size)
    m = np.asarray(m, dtype=float)
    if m.shape != (size,):
        raise DimensionError("%s must have shape (%d,), got %s" % (name, size, m.shape))
    if np.any(m <= 0) or not np.isfinite(m).all():
        raise InputError("%s must be strictly positive and finite" % name)
    if abs(m.sum() - 1.0) > 1e-8:
        raise InputError("%s must sum to 1, sums to %r" % (name, float(m.sum())))
    return m


def _sinkhorn_plain(C, gamma, a, b, max_iters, tol):
    K = np.exp(-C / gamma)
    Kt = K.T
    u = np.ones_like(a)
    v = np.ones_like(b)
    err = np.inf
    it = 0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        while it < max_iters:
            for _ in range(min(_CHECK_EVERY, max_iters - it)):
                u = a / (K @ v)
                v = b / (Kt @ u)
                it += 1
            # columns are exact right after the v update
            err = float(np.max(np.abs(u * (K @ v) - a)))
            if err <= tol or not np.isfinite(err):
                break
        return np.log(u), np.log(v), it, err


def _lse(A, axis):
    # scipy.special.logsumexp carries ~0.2 ms of argument handling per call,
    # which dominates on the small matrices swept here thousands of times
    top = A.max(axis=axis, keepdims=True)
    top[~np.isfinite(top)] = 0.0
    return np.log(np.exp(A - top).sum(axis=axis)) + np.squeeze(top, axis=axis)


def _log_sweep(M, f, g, log_a, log_b):
    f = log_a - _lse(M + g[None, :], axis=1)
    g = log_b - _lse(M + f[:, None], axis=0)
    return f, g


def _sinkhorn_log(M, f, g, a, b, max_iters, tol):
    """Scaling iteration on log potentials ``(f, g)``, plan ``exp(M + f + g)``.

    The scalings run against the kernel re-based on the current potentials
    and are folded back into them whenever they leave ``[e^-50, e^50]``, so
    most sweeps cost two mat-vecs instead of two log-sum-exps.  Falls back to
    pure log-sum-exp sweeps if a re-based kernel row still underflows.
    """
    log_a = np.log(a)
    log_b = np.log(b)
    f, g = _log_sweep(M, f, g, log_a, log_b)
    err = np.inf
    it = 1
    pure_log = False
    while it < max_iters and not pure_log:
        K = np.exp(M + f[:, None] + g[None, :])
        Kt = K.T
        u = np.ones_like(a)
        v = np.ones_like(b)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            while it < max_iters:
                for _ in range(min(_CHECK_EVERY, max_iters - it)):
                    u = a / (K @ v)
                    v = b / (Kt @ u)
                    it += 1
                if not (np.isfinite(u).all() and np.isfinite(v).all()) or v.min() == 0:
                    pure_log = True
                    break
                err = float(np.max(np.abs(u * (K @ v) - a)))
                if err <= tol:
                    break
                if max(u.max(), v.max()) > _ABSORB or min(u.min(), v.min()) < 1.0 / _ABSORB:
                    break
        if pure_log:
            break
        f = f + np.log(u)
        g = g + np.log(v)
        if err <= tol:
            return f, g, it, err

    # pure log-sum-exp sweeps from the last finite potentials
    while it < max_iters:
        it += 1
        f, g = _log_sweep(M, f, g, log_a, log_b)
        if it % _CHECK_EVERY == 0 or it == max_iters:
            rows = np.exp(_lse(M + f[:, None] + g[None, :], axis=1))
            err = float(np.max(np.abs(rows - a)))
            if err <= tol:
                break
    return f, g, it, err


def _dual_value(M, f, g, a, b):
    with np.errstate(over="ignore"):
        return float(a @ f + b @ g - np.exp(M + f[:, None] + g[None, :]).sum())


def _sinkhorn_newton(M, f, g, a, b, max_iters, tol):
    """Damped Newton ascent on the entropic dual, interleaved with scaling sweeps.

    Shares its fixed point with the scaling iteration but converges
    quadratically where plain scaling crawls (tiny gamma relative to the cost
    range).  The last column potential is pinned to remove the gauge freedom
    ``(f + c, g - c)``.
    """
    m, n = M.shape
    log_a = np.log(a)
    log_b = np.log(b)
    eye = np.eye(m + n - 1)
    err = np.inf
    it = 0
    while it < max_iters:
        it += 1
        f, g = _log_sweep(M, f, g, log_a, log_b)
        P = np.exp(M + f[:, None] + g[None, :])
        row_sum = P.sum(axis=1)
        col_sum = P.sum(axis=0)
        r_row = a - row_sum
        r_col = b - col_sum
        err = max(float(np.max(np.abs(r_row))), float(np.max(np.abs(r_col))))
        if err <= tol:
            break
        J = np.block([
            [np.diag(row_sum), P[:, :-1]],
            [P[:, :-1].T, np.diag(col_sum[:-1])],
        ])
        # Levenberg-style damping; the Jacobian is near-singular when the
        # plan is close to a sparse LP vertex
        damping = min(err, 1e-3) / (m + n)
        try:
            step = np.linalg.solve(J + damping * eye, np.concatenate([r_row, r_col[:-1]]))
        except np.linalg.LinAlgError:
            continue
        df = step[:m]
        dg = np.concatenate([step[m:], [0.0]])
        base = _dual_value(M, f, g, a, b)
        slope = r_row @ df + r_col @ dg
        t = 1.0
        while t > 1e-12:
            trial = _dual_value(M, f + t * df, g + t * dg, a, b)
            if np.isfinite(trial) and trial >= base + 1e-4 * t * slope:
                f = f + t * df
                g = g + t * dg
                break
            t *= 0.5
    return f, g, it, err


def sinkhorn(cost, params, row_marginal=None, col_marginal=None, log_domain=None, init=None):
    """Entropically regularized transport plan by Sinkhorn scaling.

    Minimizes ``<Q, C> + gamma * sum(Q log Q)`` over plans with the given
    marginals.  The iteration alternates ``u <- a / (K v)`` and
    ``v <- b / (K^T u)`` with ``K = exp(-C / gamma)`` and returns
    ``diag(u) K diag(v)``.

    Parameters
    ----------
    cost : (m, n) array
    params : SinkhornParams
    row_marginal, col_marginal : arrays, optional
        Default to uniform ``1/m`` and ``1/n``.
    log_domain : bool, optional
        Force (True) or forbid (False) the log-sum-exp iteration.  By default
        it is used only when ``exp(-C / gamma)`` would underflow.
    init : tuple of arrays, optional
        Starting dual potentials ``(alpha, beta)`` in cost units, typically
        ``Coupling.potentials`` of a nearby problem.  Only the starting point
        changes, not the solution; implies the log-domain iteration.

    Returns
    -------
    Coupling
        Non-convergence within ``params.max_iters`` is reported through
        ``Coupling.converged`` rather than raised.
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2:
        raise DimensionError("cost must be 2-d, got %d-d" % C.ndim)
    if not np.isfinite(C).all():
        raise InputError("cost matrix contains non-finite entries")
    m, n = C.shape
    a = _check_marginal(row_marginal, m, "row_marginal")
    b = _check_marginal(col_marginal, n, "col_marginal")
    gamma = float(params.gamma)

    # a constant shift of C only rescales K; it leaves the plan unchanged
    C = C - C.min()
    if log_domain is None:
        log_domain = bool(-C.max() / gamma < _LOG_DOMAIN_THRESHOLD)

    budget = min(params.max_iters, _NEWTON_AFTER)
    f = np.zeros(m)
    g = np.zeros(n)
    if init is not None:
        alpha, beta = init
        f = np.asarray(alpha, dtype=float) / gamma
        g = np.asarray(beta, dtype=float) / gamma
        if f.shape != (m,) or g.shape != (n,):
            raise DimensionError("init potentials must have shapes (%d,) and (%d,)" % (m, n))
        log_domain = True
    if not log_domain:
        f, g, it, err = _sinkhorn_plain(C, gamma, a, b, budget, params.tol)
        if not (np.isfinite(f).all() and np.isfinite(g).all()):
            # K v underflowed after all; restart in the log domain
            log_domain = True
            f = np.zeros(m)
            g = np.zeros(n)
    M = -C / gamma
    if log_domain:
        f, g, it, err = _sinkhorn_log(M, f, g, a, b, budget, params.tol)
    if not err <= params.tol and it < params.max_iters:
        f, g, extra, err = _sinkhorn_newton(M, f, g, a, b, params.max_iters - it, params.tol)
        it += extra
        log_domain = True
    plan = np.exp(M + f[:, None] + g[None, :])

    violation = marginal_violation(plan, a, b)
    return Coupling(
        plan=plan,
        row_marginal=a,
        col_marginal=b,
        converged=violation <= params.tol,
        n_iter=it,
        violation=violation,
        log_domain=log_domain,
        potentials=(gamma * f, gamma * g),
    )


def transport_cost(plan, cost):
    """``sum_kl Q[k, l] * C[k, l]``."""
    P = _as_plan(plan)
    C = np.asarray(cost, dtype=float)
    if P.shape != C.shape:
        raise DimensionError("plan and cost shapes differ: %s vs %s" % (P.shape, C.shape))
    return float(np.sum(P * C))


def neg_entropy(plan, gamma):
    """``gamma * sum(P log P)`` with ``0 log 0 = 0``."""
    P = _as_plan(plan)
    if gamma == 0:
        return 0.0
    return float(gamma * np.sum(xlogy(P, P)))
