from dataclasses import replace

import numpy as np
import pytest

from hiwa.datagen import GenSpec, generate, pool
from hiwa.diagnostics import alignment_error, correspondence_error
from hiwa.exceptions import DimensionError, InputError
from hiwa.manifold import orthogonality_defect, random_orthogonal, stiefel_align
from hiwa.solver import (
    PairState,
    SolverConfig,
    SolverState,
    aggregate_coupling,
    default_gammas,
    objective,
    solve,
    subproblem_solve,
    update_P,
)
from hiwa.transport import Coupling, neg_entropy, sinkhorn, SinkhornParams

SMALL = SolverConfig(gamma1=0.05, gamma2=0.02, outer_max_iters=40)


def _uniform(m, n):
    return Coupling(np.full((m, n), 1 / (m * n)), np.full(m, 1 / m), np.full(n, 1 / n))


def _grid_2x2(C, gamma, steps=200_001):
    t = np.linspace(0, 0.5, steps)
    s = 0.5 - t
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(t > 0, 2 * t * np.log(t), 0) + np.where(s > 0, 2 * s * np.log(s), 0)
    obj = (C[0, 0] + C[1, 1]) * t + (C[0, 1] + C[1, 0]) * s + gamma * ent
    b = t[np.argmin(obj)]
    return np.array([[b, 0.5 - b], [0.5 - b, b]])


# -- config -----------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    dict(gamma1=0.0), dict(gamma2=-1.0), dict(mu=0.0), dict(outer_tol=0.0),
    dict(outer_max_iters=0), dict(threads=-1), dict(mode="tree"),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_config_defaults_round_trip():
    cfg = SolverConfig()
    assert SolverConfig(**cfg.to_dict()) == cfg


# -- update_P ---------------------------------------------------------------

def test_update_p_grid_oracle():
    C = np.array([[0.0, 10.0], [10.0, 0.0]])
    P = update_P(C, 1e-2)
    np.testing.assert_allclose(P.plan, _grid_2x2(C, 1e-2), atol=1e-4)
    np.testing.assert_allclose(P.plan, [[0.5, 0], [0, 0.5]], atol=1e-4)


def test_update_p_equal_costs_uniform():
    P = update_P(np.full((4, 4), 3.0), 0.1)
    np.testing.assert_allclose(P.plan, 1 / 16, atol=1e-12)


def test_update_p_large_gamma_uniform(rng):
    P = update_P(rng.random((5, 5)), 1e8)
    np.testing.assert_allclose(P.plan, 1 / 25, atol=1e-8)


def test_update_p_requires_square():
    with pytest.raises(DimensionError):
        update_P(np.zeros((2, 3)), 1.0)


# -- subproblem_solve -------------------------------------------------------

def test_subproblem_zero_weight_follows_consensus(rng):
    X = rng.standard_normal((4, 8))
    Y = rng.standard_normal((4, 8))
    R = random_orthogonal(4, 1)
    cfg = SolverConfig(mu=1.0, p_floor=1e-12)
    res = subproblem_solve(X, Y, 0.0, R, np.zeros((4, 4)), cfg, gamma2=0.1)
    np.testing.assert_allclose(res.R, R, atol=1e-9)


def test_subproblem_self_alignment_cost_small():
    X, _, _ = generate(GenSpec(1, 2, 4, 20, seed=3))
    cfg = SolverConfig(gamma2=1e-3, inner_max_iters=100)
    res = subproblem_solve(X[0], X[0], 1.0, np.eye(4), np.zeros((4, 4)), cfg)
    assert res.cost_value <= 1e-3


def test_subproblem_single_inner_step_by_hand(rng):
    X = rng.standard_normal((3, 5))
    Y = rng.standard_normal((3, 4))
    R = random_orthogonal(3, 2)
    Lam = 0.1 * rng.standard_normal((3, 3))
    cfg = SolverConfig(mu=0.3, inner_max_iters=1)
    P_ij = 0.2
    res = subproblem_solve(X, Y, P_ij, R, Lam, cfg, gamma2=0.5)
    Q = np.full((5, 4), 1 / 20)
    expected = stiefel_align(2 * P_ij * Y @ Q.T @ X.T + 0.3 * (R - Lam))
    np.testing.assert_allclose(res.R, expected, atol=1e-12)
    assert res.inner_iters == 1
    assert res.Q.shape == (5, 4)


def test_subproblem_output_feasible(rng):
    X = rng.standard_normal((3, 6))
    Y = rng.standard_normal((3, 7))
    res = subproblem_solve(X, Y, 0.1, np.eye(3), np.zeros((3, 3)), SolverConfig(), gamma2=0.05)
    assert orthogonality_defect(res.R) <= 1e-8
    np.testing.assert_allclose(res.Q.plan.sum(1), 1 / 6, atol=1e-8)
    np.testing.assert_allclose(res.Q.plan.sum(0), 1 / 7, atol=1e-8)
    assert res.cost_value >= 0


def test_subproblem_errors(rng):
    X = rng.standard_normal((3, 4))
    with pytest.raises(InputError):
        subproblem_solve(X, X, -0.1, np.eye(3), np.zeros((3, 3)), SolverConfig(), gamma2=0.1)
    with pytest.raises(InputError):
        subproblem_solve(X, X, 0.1, np.eye(3), np.zeros((3, 3)), SolverConfig())


# -- objective --------------------------------------------------------------

def _state(S, m, n, P, costs):
    pairs = [[PairState(np.eye(2), _uniform(m, n), np.zeros((2, 2)), costs[i][j]) for j in range(S)]
             for i in range(S)]
    return SolverState(R=np.eye(2), P=P, pairs=pairs)


def test_objective_zero_costs_naive_loop():
    S, m, n, g1, g2 = 3, 4, 5, 0.3, 0.7
    P = np.full((S, S), 1 / S**2)
    state = _state(S, m, n, P, np.zeros((S, S)))
    naive = 0.0
    for _ in range(S * S):
        for _ in range(m * n):
            q = 1 / (m * n)
            naive += g2 * q * np.log(q)
    for _ in range(S * S):
        naive += g1 * P[0, 0] * np.log(P[0, 0])
    got = objective(state, SolverConfig(gamma1=g1, gamma2=g2))
    assert got == pytest.approx(naive, rel=1e-12)
    closed = -S**2 * g2 * np.log(m * n) - g1 * np.log(S**2)
    assert got == pytest.approx(closed, rel=1e-12)


def test_objective_linear_term_when_entropies_vanish(rng):
    S = 3
    P = rng.random((S, S))
    costs = rng.random((S, S))
    state = _state(S, 2, 2, P, costs)
    # SolverConfig forbids zero gammas, so the entropy weights are passed directly
    value = objective(state, SolverConfig(), gamma1=0.0, gamma2=0.0)
    assert value == pytest.approx(float(np.sum(P * costs)), abs=1e-14)
    doubled = objective(_state(S, 2, 2, 2 * P, costs), SolverConfig(), gamma1=0.0, gamma2=0.0)
    assert doubled == pytest.approx(2 * value, rel=1e-14)


# -- helpers ----------------------------------------------------------------

def test_aggregate_coupling():
    Q = np.arange(20, dtype=float).reshape(4, 5)
    agg = aggregate_coupling(Q, [1, 3], [2, 3])
    np.testing.assert_array_equal(agg, [[Q[0, :2].sum(), Q[0, 2:].sum()],
                                        [Q[1:, :2].sum(), Q[1:, 2:].sum()]])


def test_default_gammas_scale_with_data(rng):
    X = [rng.standard_normal((3, 10))]
    Y = [rng.standard_normal((3, 10))]
    g1, g2 = default_gammas(X, Y, np.eye(3))
    h1, h2 = default_gammas([2 * X[0]], [2 * Y[0]], np.eye(3))
    assert h1 == pytest.approx(4 * g1) and h2 == pytest.approx(4 * g2)
    assert g1 > g2 > 0


# -- solve ------------------------------------------------------------------

def test_solve_input_errors(rng):
    X = [rng.standard_normal((3, 4))]
    with pytest.raises(InputError):
        solve([np.zeros((3, 0))], X)
    with pytest.raises(InputError):
        solve(X, [rng.standard_normal((4, 4))])
    bad = X[0].copy()
    bad[0, 0] = np.nan
    with pytest.raises(InputError):
        solve([bad], X)
    with pytest.raises(InputError):
        solve([], X)


def test_solve_result_structure():
    X, Y, _ = generate(GenSpec(3, 2, 4, 15, permute_clusters=True, seed=0))
    res = solve(X, Y, replace(SMALL, threads=1))
    assert res.R.shape == (4, 4) and res.P.shape == (3, 3)
    assert orthogonality_defect(res.R) <= 1e-10
    assert res.det_R in (1, -1)
    assert len(res.objective_trace) == res.iterations == len(res.primal_residual_trace)
    assert np.all(np.isfinite(res.objective_trace))
    assert max(res.P_marginal_trace) <= 1e-6
    assert max(res.Q_marginal_trace) <= 1e-6
    assert res.mode == "hierarchical"


def test_update_order_is_pairs_then_p_then_r_then_dual():
    X, Y, _ = generate(GenSpec(2, 2, 4, 10, seed=1))
    events = []
    solve(X, Y, replace(SMALL, outer_max_iters=3, threads=2),
          observer=lambda ev, it, payload: events.append((it, ev)))
    for it in range(1, 4):
        kinds = [ev for i, ev in events if i == it]
        assert kinds[:4].count("pair") == 4
        assert kinds[4:] == ["P", "R", "dual"]


def test_solve_deterministic_across_threads():
    X, Y, _ = generate(GenSpec(3, 2, 4, 12, permute_clusters=True, seed=4))
    runs = [solve(X, Y, replace(SMALL, outer_max_iters=15, threads=t)) for t in (1, 3, 8)]
    for r in runs[1:]:
        assert np.array_equal(r.R, runs[0].R)
        assert np.array_equal(r.P, runs[0].P)
        assert r.objective_trace == runs[0].objective_trace


def test_flat_mode_equals_single_cluster_hierarchical():
    X, Y, _ = generate(GenSpec(3, 2, 4, 10, permute_clusters=True, seed=2))
    cfg = replace(SMALL, outer_max_iters=10, threads=1)
    flat = solve(X, Y, replace(cfg, mode="flat"))
    single = solve([pool(X)], [pool(Y)], cfg)
    assert np.array_equal(flat.R, single.R)
    assert flat.objective_trace == single.objective_trace
    assert flat.P.shape == (3, 3)
    assert flat.P.sum() == pytest.approx(1.0)


def test_flat_mode_symmetric_cluster_converges():
    rng = np.random.default_rng(0)
    X = [rng.standard_normal((3, 40))]
    Y = [random_orthogonal(3, 5) @ rng.standard_normal((3, 40))]
    res = solve(X, Y, SolverConfig(mode="flat", threads=1))
    assert res.converged
    assert res.primal_residual_trace[-1] <= res_tol(res)


def res_tol(res):
    return SolverConfig().outer_tol


def test_identical_datasets_recovered():
    hits = 0
    for seed in range(20):
        X, Y, truth = generate(GenSpec(3, 2, 4, 20, shared_samples=True, identity_transform=True,
                                       seed=seed))
        res = solve(X, Y, SolverConfig(seed=seed, threads=1, outer_max_iters=100))
        Xp = pool(X)
        rel = np.linalg.norm(res.R @ Xp - Xp) / np.linalg.norm(Xp)
        hits += correspondence_error(res.P, truth.P_star) <= 0.05 and rel <= 1e-2
    assert hits >= 18


def test_small_permuted_problem_recovered():
    X, Y, truth = generate(GenSpec(3, 2, 5, 40, permute_clusters=True, seed=6))
    res = solve(X, Y, SolverConfig(seed=1, threads=1))
    assert alignment_error(res.R, truth.R_star, X) < 0.05
    assert correspondence_error(res.P, truth.P_star) < 0.1
