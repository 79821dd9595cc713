"""Orthogonal Procrustes projections and random orthogonal matrices."""
import numpy as np

from .exceptions import DimensionError, InputError, NumericalError

__all__ = [
    "stiefel_align",
    "random_orthogonal",
    "consensus_align",
    "orthogonality_defect",
    "is_rank_deficient",
]

# relative size below which a singular value counts as vanished
RANK_TOL = 1e-12


def _as_square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError("%s must be a square matrix, got shape %s" % (name, A.shape))
    return A


def _svd(A):
    if not np.isfinite(A).all():
        raise NumericalError("cannot take the SVD of a matrix with non-finite entries")
    try:
        U, s, Vt = np.linalg.svd(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("SVD did not converge: %s" % exc) from exc
    # make the factorization sign-deterministic: the largest-magnitude entry
    # of every left singular vector is positive
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, s, Vt * signs[:, None]


def stiefel_align(A, return_degenerate=False):
    """Orthogonal matrix maximizing ``tr(A R^T)``.

    With ``A = U S V^T`` the maximizer is ``U V^T``.  Reflections are not
    excluded.

    Parameters
    ----------
    A : (D, D) array
    return_degenerate : bool
        Also return whether ``A`` is numerically rank deficient, in which
        case the maximizer is not unique and the returned one is just the
        representative picked by the sign convention.
    """
    A = _as_square(A)
    U, s, Vt = _svd(A)
    R = U @ Vt
    if return_degenerate:
        return R, _degenerate(s)
    return R


def _degenerate(s):
    return bool(s.size and s[-1] < RANK_TOL * s[0]) or bool(s.size and s[0] == 0)


def is_rank_deficient(A):
    """True when the smallest singular value of ``A`` is below 1e-12 of the largest."""
    return _degenerate(np.linalg.svd(_as_square(A), compute_uv=False))


def random_orthogonal(D, seed=None):
    """Haar-distributed orthogonal ``D x D`` matrix.

    QR of a standard Gaussian matrix with the signs of ``diag(R)`` folded
    into ``Q``.  ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if D < 1:
        raise ValueError("D must be >= 1, got %r" % (D,))
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((D, D))
    Q, R = np.linalg.qr(G)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


def consensus_align(summands):
    """``stiefel_align`` of a sum, accumulated in list order.

    The fixed order keeps the result bit-identical however the summands were
    produced.
    """
    summands = list(summands)
    if not summands:
        raise InputError("consensus_align needs at least one summand")
    total = np.array(_as_square(summands[0], "summand"), dtype=float, copy=True)
    for A in summands[1:]:
        A = _as_square(A, "summand")
        if A.shape != total.shape:
            raise DimensionError("summands differ in shape: %s vs %s" % (A.shape, total.shape))
        total += A
    return stiefel_align(total)


def orthogonality_defect(R):
    """``||R^T R - I||_F``."""
    R = np.asarray(R, dtype=float)
    return float(np.linalg.norm(R.T @ R - np.eye(R.shape[1])))
