import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiwa.exceptions import DimensionError, InputError, NumericalError
from hiwa.manifold import (
    consensus_align,
    is_rank_deficient,
    orthogonality_defect,
    random_orthogonal,
    stiefel_align,
)


def o2_grid(steps):
    """Rotations and reflections of the plane on a uniform angle grid."""
    theta = np.linspace(0.0, 2 * np.pi, steps, endpoint=False)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    ref = np.stack([np.stack([c, s], -1), np.stack([s, -c], -1)], -2)
    return np.concatenate([rot, ref])


def grid_best_trace(A, grid):
    return float(np.max(np.einsum("ij,kij->k", A, grid)))


def test_identity_maps_to_identity():
    np.testing.assert_allclose(stiefel_align(np.eye(4)), np.eye(4), atol=1e-14)


def test_orthogonal_input_is_fixed_point():
    R0 = random_orthogonal(5, 3)
    np.testing.assert_allclose(stiefel_align(R0), R0, atol=1e-12)


def test_diag_example_against_fine_grid():
    A = np.array([[2.0, 0.0], [0.0, -3.0]])
    R = stiefel_align(A)
    # 1e-6 rad resolution on both components near the analytic optimum
    best = grid_best_trace(A, o2_grid(int(2 * np.pi / 1e-6) // 1000 * 1000))
    assert np.trace(A @ R.T) >= best - 1e-6
    np.testing.assert_allclose(R, np.diag([1.0, -1.0]), atol=1e-12)


def test_random_2x2_against_grid(rng):
    grid = o2_grid(int(2 * np.pi / 1e-4))
    for _ in range(20):
        A = rng.standard_normal((2, 2))
        R = stiefel_align(A)
        assert abs(np.trace(A @ R.T) - grid_best_trace(A, grid)) <= 1e-6


@pytest.mark.parametrize("D", [2, 3])
def test_optimality_against_random_orthogonals(rng, D):
    Qs = np.stack([random_orthogonal(D, rng) for _ in range(10_000)])
    for _ in range(100):
        A = rng.standard_normal((D, D))
        best = np.trace(A @ stiefel_align(A).T)
        assert best >= np.einsum("ij,kij->k", A, Qs).max() - 1e-8


def test_reflection_is_allowed():
    A = np.diag([1.0, 1.0, -1.0])
    R = stiefel_align(A)
    assert np.linalg.det(R) == pytest.approx(-1.0)


def test_sign_convention_is_deterministic(rng):
    A = rng.standard_normal((6, 6))
    first = stiefel_align(A)
    for _ in range(3):
        assert np.array_equal(stiefel_align(A.copy()), first)


def test_rank_deficiency_flagged():
    A = np.diag([1.0, 0.0, 2.0])
    R, degenerate = stiefel_align(A, return_degenerate=True)
    assert degenerate
    assert is_rank_deficient(A)
    assert orthogonality_defect(R) <= 1e-10
    _, degenerate = stiefel_align(np.eye(3), return_degenerate=True)
    assert not degenerate


def test_zero_matrix_gives_orthogonal_representative():
    R = stiefel_align(np.zeros((3, 3)))
    assert orthogonality_defect(R) <= 1e-10


def test_non_finite_raises():
    A = np.eye(3)
    A[0, 1] = np.nan
    with pytest.raises(NumericalError):
        stiefel_align(A)
    A[0, 1] = np.inf
    with pytest.raises(NumericalError):
        stiefel_align(A)


def test_non_square_raises():
    with pytest.raises(DimensionError):
        stiefel_align(np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(D=st.integers(1, 8), seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_orthogonal_and_scale_invariant(D, seed, scale):
    A = np.random.default_rng(seed).standard_normal((D, D))
    R = stiefel_align(A)
    assert orthogonality_defect(R) <= 1e-10
    np.testing.assert_allclose(stiefel_align(scale * A), R, atol=1e-10)


# -- random_orthogonal ------------------------------------------------------

def test_random_orthogonal_d1():
    R = random_orthogonal(1, 0)
    assert R.shape == (1, 1) and abs(R[0, 0]) == 1.0


def test_random_orthogonal_deterministic():
    assert np.array_equal(random_orthogonal(6, 42), random_orthogonal(6, 42))
    assert not np.array_equal(random_orthogonal(6, 42), random_orthogonal(6, 43))


def test_random_orthogonal_is_orthogonal():
    for seed in range(20):
        assert orthogonality_defect(random_orthogonal(7, seed)) <= 1e-10


def test_random_orthogonal_entries_centered():
    samples = np.stack([random_orthogonal(6, s) for s in range(1000)])
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
    assert np.all(np.abs(mean) <= 3 * se)


def test_random_orthogonal_rejects_bad_dimension():
    with pytest.raises(ValueError):
        random_orthogonal(0, 1)


# -- consensus_align --------------------------------------------------------

def test_consensus_single_summand(rng):
    A = rng.standard_normal((4, 4))
    assert np.array_equal(consensus_align([A]), stiefel_align(A))


def test_consensus_repeated_orthogonal():
    R0 = random_orthogonal(5, 9)
    np.testing.assert_allclose(consensus_align([R0, R0, R0]), R0, atol=1e-12)


def test_consensus_matches_explicit_sum(rng):
    A, B = rng.standard_normal((2, 5, 5))
    np.testing.assert_allclose(consensus_align([A, B]), stiefel_align(A + B), atol=1e-12)


def test_consensus_errors():
    with pytest.raises(InputError):
        consensus_align([])
    with pytest.raises(DimensionError):
        consensus_align([np.eye(2), np.eye(3)])
