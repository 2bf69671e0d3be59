import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftc import evaluation
from ftc.clairvoyant import (
    clairvoyant_cost,
    clairvoyant_kernel,
    coincides,
    constrained_h2,
    mil_identity_residual,
    stationarity_residual,
    unconstrained_optimal,
)
from ftc.errors import IllConditionedError, InfeasibleError
from ftc.lifted import CostWeights, LtvSystem, build_lifted, lower_block_mask
from ftc.properties import random_causal, random_system, random_weights
from ftc.safety import SafetySpec


@pytest.fixture
def scalar_ops():
    return build_lifted(LtvSystem.time_invariant([[0.5]], [[1.0]], 2))


def test_scalar_closed_form(scalar_ops):
    cw = CostWeights.identity(1, 1, 2)
    star = unconstrained_optimal(scalar_ops, cw)
    np.testing.assert_allclose(star.Psi_u, [[-0.25, -0.5], [0.0, 0.0]], atol=1e-15)
    star.check(scalar_ops)


def test_scalar_normal_equations_oracle(scalar_ops):
    # column-wise least squares: min_u |Q^.5 (F u + G e_k)|^2 + |R^.5 u|^2
    F, G = scalar_ops.F, scalar_ops.G
    A = np.vstack([F, np.eye(2)])
    for k in range(2):
        b = -np.concatenate([G[:, k], np.zeros(2)])
        u, *_ = np.linalg.lstsq(A, b, rcond=None)
        star = unconstrained_optimal(scalar_ops, CostWeights.identity(1, 1, 2))
        np.testing.assert_allclose(star.Psi_u[:, k], u, atol=1e-14)


def test_horizon_one_is_zero():
    ops = build_lifted(LtvSystem(2, 3, 1))
    star = unconstrained_optimal(ops, CostWeights.identity(2, 3, 1))
    assert np.all(star.Psi_u == 0)


def test_zero_state_weight():
    rng = np.random.default_rng(0)
    sys = random_system(rng, 2, 2, 5)
    ops = build_lifted(sys)
    cw = CostWeights(np.zeros((10, 10)), np.eye(10))
    star = unconstrained_optimal(ops, cw)
    assert np.all(star.Psi_u == 0)
    assert clairvoyant_cost(ops, cw, rng.standard_normal(10)) == 0.0
    assert mil_identity_residual(ops, cw) == 0.0


def test_cost_of_zero_disturbance(scalar_ops):
    assert clairvoyant_cost(scalar_ops, CostWeights.identity(1, 1, 2), [0.0, 0.0]) == 0.0


def test_scalar_cost_matches_simulation(scalar_ops):
    cw = CostWeights.identity(1, 1, 2)
    star = unconstrained_optimal(scalar_ops, cw)
    w = np.array([1.0, 0.0])
    x, u = star.Psi_x @ w, star.Psi_u @ w
    direct = x @ x + u @ u
    # x = (1, 0.25), u = (-0.25, 0): 1 + 0.0625 + 0.0625
    assert direct == pytest.approx(1.125, abs=1e-15)
    assert clairvoyant_cost(scalar_ops, cw, w) == pytest.approx(direct, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_kernel_matches_trajectory_cost(seed):
    rng = np.random.default_rng(seed)
    sys = random_system(rng)
    ops = build_lifted(sys)
    cw = random_weights(rng, sys.n, sys.m, sys.T)
    star = unconstrained_optimal(ops, cw)
    assert stationarity_residual(ops, cw, star.Psi_u) <= 1e-8
    assert mil_identity_residual(ops, cw) <= 1e-9
    w = rng.standard_normal(ops.nT)
    tr = evaluation.simulate(star, w, cw, sys.T)
    assert clairvoyant_cost(ops, cw, w) == pytest.approx(tr.cost, rel=1e-8, abs=1e-12)


def test_lower_bound_random_causal():
    rng = np.random.default_rng(4)
    for _ in range(10):
        sys = random_system(rng)
        ops = build_lifted(sys)
        cw = random_weights(rng, sys.n, sys.m, sys.T)
        K = clairvoyant_kernel(ops, cw)
        for _ in range(5):
            resp = random_causal(rng, ops)
            for _ in range(5):
                w = rng.standard_normal(ops.nT)
                assert w @ K @ w <= evaluation.simulate(resp, w, cw, sys.T).cost + 1e-9


def test_ill_conditioned():
    ops = build_lifted(LtvSystem.time_invariant([[1.0]], [[1e7]], 3))
    with pytest.raises(IllConditionedError, match="rescale"):
        unconstrained_optimal(ops, CostWeights(np.eye(3), 1e-6 * np.eye(3)))


def small_problem(T=4):
    A = np.array([[0.9, 0.3], [0.0, 0.8]])
    B = np.array([[0.0], [1.0]])
    sys = LtvSystem.time_invariant(A, B, T)
    return sys, build_lifted(sys), CostWeights.identity(2, 1, T)


def test_constrained_without_safety_is_global_optimum():
    sys, ops, cw = small_problem()
    bench = constrained_h2(ops, cw)
    assert coincides(bench, unconstrained_optimal(ops, cw)) <= 1e-6
    bench.check(ops)


def test_inactive_safety_coincides():
    sys, ops, cw = small_problem()
    safety = SafetySpec.box(2, 1, sys.T, x_max=1e3, u_max=1e3)
    bench = constrained_h2(ops, cw, safety)
    assert coincides(bench, unconstrained_optimal(ops, cw)) <= 1e-6


def test_preview_zero_is_causal():
    sys, ops, cw = small_problem()
    bench = constrained_h2(ops, cw, preview=0)
    assert np.all(bench.Psi_u[~lower_block_mask(sys.T, 1, 2)] == 0)
    bench.check(ops)


def test_preview_band_and_active_safety():
    sys, ops, cw = small_problem(6)
    star = unconstrained_optimal(ops, cw)
    u_star = float(np.max(np.abs(star.Psi_u).sum(axis=1)))
    safety = SafetySpec.box(2, 1, sys.T, u_max=0.7 * u_star)
    bench = constrained_h2(ops, cw, safety, preview=2)
    bench.check(ops)
    assert np.all(bench.Psi_u[~lower_block_mask(sys.T, 1, 2, 2)] == 0)
    assert bench.stats["kkt_residual"] <= 1e-6
    rows = np.abs(bench.Psi_u).sum(axis=1)
    assert rows.max() <= 0.7 * u_star + 1e-6
    # tighter bounds cost more
    loose = constrained_h2(ops, cw, None, preview=2)
    obj = lambda r: np.linalg.norm(cw.Csqrt @ r.stacked) ** 2
    assert obj(bench) >= obj(loose) - 1e-8


def test_infeasible_safety_certificate():
    # x_0 = w_0 ranges over [-1, 1] but must stay within 0.5; later states
    # can be cancelled exactly by a clairvoyant input
    ops = build_lifted(LtvSystem.time_invariant([[0.5]], [[1.0]], 4))
    cw = CostWeights.identity(1, 1, 4)
    safety = SafetySpec.box(1, 1, 4, x_max=0.5)
    with pytest.raises(InfeasibleError) as err:
        constrained_h2(ops, cw, safety)
    assert err.value.certificate["min_uniform_relaxation"] == pytest.approx(0.5, abs=1e-6)
