"""Synthetic clustered datasets: mixtures of low-rank Gaussians on subspaces.

Every cluster is a Gaussian in ``d`` dimensions pushed into a ``D``-dimensional
embedding by an orthonormal basis.  The target dataset is a rotated, resampled
(and optionally cluster-permuted, noisy) copy of the source, so the true
transform and cluster correspondences are known.
"""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import UnsupportedConfigurationError
from .manifold import random_orthogonal

__all__ = [
    "GenSpec",
    "GroundTruth",
    "generate",
    "random_subspaces",
    "equally_spaced_subspaces",
    "pool",
]

SUBSPACE_MODES = ("random", "equally_spaced")


@dataclass(frozen=True)
class GenSpec:
    """Parameters of a synthetic dataset pair.

    ``shared_samples`` makes ``Y`` a transformed copy of ``X``'s exact points
    instead of a fresh draw; ``identity_transform`` forces ``R_star = I``.
    Both exist for oracle tests.
    """

    S: int
    d: int
    D: int
    n: int
    subspace_mode: str = "random"
    noise_sigma: float = 0.0
    permute_clusters: bool = False
    seed: int = 0
    shared_samples: bool = False
    identity_transform: bool = False

    def __post_init__(self):
        if self.S < 1:
            raise ValueError("S must be >= 1, got %r" % (self.S,))
        if self.n < 1:
            raise ValueError("n must be >= 1, got %r" % (self.n,))
        if not 1 <= self.d <= self.D:
            raise ValueError("need 1 <= d <= D, got d=%r, D=%r" % (self.d, self.D))
        if self.subspace_mode not in SUBSPACE_MODES:
            raise ValueError(
                "subspace_mode must be one of %s, got %r" % (SUBSPACE_MODES, self.subspace_mode)
            )
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0, got %r" % (self.noise_sigma,))


@dataclass
class GroundTruth:
    R_star: np.ndarray
    P_star: np.ndarray
    subspace_bases: list
    permutation: list = field(default_factory=list)

    def to_dict(self):
        return {
            "R_star": self.R_star.tolist(),
            "P_star": self.P_star.tolist(),
            "subspace_bases": [V.tolist() for V in self.subspace_bases],
            "permutation": [int(p) for p in self.permutation],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            R_star=np.asarray(data["R_star"], dtype=float),
            P_star=np.asarray(data["P_star"], dtype=float),
            subspace_bases=[np.asarray(V, dtype=float) for V in data.get("subspace_bases", [])],
            permutation=list(data.get("permutation", [])),
        )


def random_subspaces(S, d, D, seed=None):
    """``S`` orthonormal ``D x d`` bases, each the Q factor of a Gaussian matrix."""
    if not 1 <= d <= D:
        raise ValueError("need 1 <= d <= D, got d=%r, D=%r" % (d, D))
    rng = np.random.default_rng(seed)
    return [np.linalg.qr(rng.standard_normal((D, d)))[0] for _ in range(S)]


def equally_spaced_subspaces(S, d, D, seed=None):
    """``S`` planes sharing one direction and fanned out evenly around it.

    Basis ``k`` is ``[e, cos(k pi / S) a + sin(k pi / S) b]`` for an orthonormal
    triple ``(e, a, b)`` drawn at random, so ``||V_i^T V_j|| = 1`` for every
    pair and neighbouring planes are ``pi / S`` apart.  Only ``d = 2`` is
    supported.
    """
    if d != 2 or D < 3:
        raise UnsupportedConfigurationError(
            "equally spaced subspaces are only constructed for d = 2 and D >= 3 "
            "(got d=%d, D=%d)" % (d, D)
        )
    rng = np.random.default_rng(seed)
    frame = np.linalg.qr(rng.standard_normal((D, 3)))[0]
    e, a, b = frame.T
    bases = []
    for k in range(S):
        theta = k * np.pi / S
        bases.append(np.column_stack([e, np.cos(theta) * a + np.sin(theta) * b]))
    return bases


def _sample_cluster(rng, mean, factor, n):
    # N(mean, A A^T) drawn as mean + A w
    return mean[:, None] + factor @ rng.standard_normal((factor.shape[1], n))


def generate(spec):
    """Draw ``(X, Y, truth)`` for a :class:`GenSpec`.

    ``Y[j]`` is drawn from the law of ``X[perm[j]]`` and then mapped by
    ``R_star``; ``truth.P_star[perm[j], j] = 1 / S``.
    """
    (sub_seq, param_seq, x_seq, y_seq, rot_seq, perm_seq,
     noise_seq) = np.random.SeedSequence(spec.seed).spawn(7)
    S, d, D, n = spec.S, spec.d, spec.D, spec.n

    if spec.subspace_mode == "random":
        bases = random_subspaces(S, d, D, np.random.default_rng(sub_seq))
    else:
        bases = equally_spaced_subspaces(S, d, D, np.random.default_rng(sub_seq))

    param_rng = np.random.default_rng(param_seq)
    means = []
    factors = []
    for _ in range(S):
        means.append(param_rng.standard_normal(d))
        factors.append(param_rng.standard_normal((d, d)))

    x_rng = np.random.default_rng(x_seq)
    latent_x = [_sample_cluster(x_rng, means[i], factors[i], n) for i in range(S)]
    X = [bases[i] @ latent_x[i] for i in range(S)]

    if spec.identity_transform:
        R_star = np.eye(D)
    else:
        R_star = random_orthogonal(D, np.random.default_rng(rot_seq))

    if spec.permute_clusters:
        perm = np.random.default_rng(perm_seq).permutation(S)
    else:
        perm = np.arange(S)

    y_rng = np.random.default_rng(y_seq)
    noise_rng = np.random.default_rng(noise_seq)
    Y = []
    for j in range(S):
        i = perm[j]
        if spec.shared_samples:
            latent = latent_x[i]
        else:
            latent = _sample_cluster(y_rng, means[i], factors[i], n)
        Yj = R_star @ (bases[i] @ latent)
        if spec.noise_sigma > 0:
            Yj = Yj + spec.noise_sigma * noise_rng.standard_normal(Yj.shape)
        Y.append(Yj)

    P_star = np.zeros((S, S))
    P_star[perm, np.arange(S)] = 1.0 / S
    truth = GroundTruth(R_star=R_star, P_star=P_star, subspace_bases=bases,
                        permutation=[int(p) for p in perm])
    return X, Y, truth


def pool(clusters):
    """Concatenate a list of ``D x n_i`` clusters into one ``D x N`` matrix."""
    return np.concatenate([np.asarray(c, dtype=float) for c in clusters], axis=1)
