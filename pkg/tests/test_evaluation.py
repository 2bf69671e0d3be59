import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftc import evaluation as ev
from ftc.clairvoyant import unconstrained_optimal
from ftc.lifted import CostWeights, LtvSystem, build_lifted
from ftc.properties import random_causal, random_system, random_weights
from ftc.safety import SafetySpec


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(10)
    sys = random_system(rng, 3, 2, 6)
    ops = build_lifted(sys)
    cw = random_weights(rng, 3, 2, 6)
    star = unconstrained_optimal(ops, cw)
    resp = random_causal(rng, ops)
    return sys, ops, cw, star, resp


def test_zero_disturbance(setup):
    sys, ops, cw, star, resp = setup
    tr = ev.simulate(resp, np.zeros(ops.nT), cw, sys.T)
    assert tr.cost == 0.0 and np.all(tr.x == 0) and np.all(tr.u == 0)


def test_trace_consistency(setup):
    sys, ops, cw, star, resp = setup
    w = np.random.default_rng(0).standard_normal(ops.nT)
    tr = ev.simulate(resp, w, cw, sys.T)
    np.testing.assert_allclose(tr.x.reshape(-1), resp.Phi_x @ w, atol=1e-12)
    assert tr.stage_costs.sum() == pytest.approx(tr.cost, rel=1e-10)
    assert ev.lqr_cost(tr, cw) == pytest.approx(tr.cost, rel=1e-12)


def test_self_imitation_is_zero(setup):
    sys, ops, cw, star, resp = setup
    w = np.random.default_rng(1).standard_normal(ops.nT)
    tr = ev.simulate(star, w, cw, sys.T)
    assert ev.imitation_loss(tr, star, cw) == 0.0
    assert ev.regret(tr, star, cw) == pytest.approx(0.0, abs=1e-12)


def test_identity_weight_loss_definition():
    sys = LtvSystem.time_invariant(np.eye(2), np.eye(2), 3)
    ops = build_lifted(sys)
    cw = CostWeights.identity(2, 2, 3)
    rng = np.random.default_rng(2)
    a, b = random_causal(rng, ops), random_causal(rng, ops)
    w = rng.standard_normal(ops.nT)
    tr = ev.simulate(a, w, cw, 3)
    dx = (a.Phi_x - b.Phi_x) @ w
    du = (a.Phi_u - b.Phi_u) @ w
    assert ev.imitation_loss(tr, b, cw) == pytest.approx(dx @ dx + du @ du, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_regret_equals_imitation_property(seed):
    rng = np.random.default_rng(seed)
    sys = random_system(rng)
    ops = build_lifted(sys)
    cw = random_weights(rng, sys.n, sys.m, sys.T)
    star = unconstrained_optimal(ops, cw)
    resp = random_causal(rng, ops)
    for _ in range(20):
        tr = ev.simulate(resp, rng.standard_normal(ops.nT), cw, sys.T)
        r, e = ev.regret(tr, star, cw), ev.imitation_loss(tr, star, cw)
        assert e >= 0
        assert abs(r - e) <= 1e-8 * max(1.0, abs(r))


def test_worst_case_matches_eigensolver():
    rng = np.random.default_rng(3)
    sys = LtvSystem.time_invariant([[0.3]], [[1.0]], 5)
    ops = build_lifted(sys)
    cw = CostWeights.identity(1, 1, 5)
    resp, star = random_causal(rng, ops), unconstrained_optimal(ops, cw)
    for metric in ("regret", "imitation", "cost"):
        w, val = ev.worst_case_disturbance(resp, star, cw, metric)
        M = ev.quadratic_form(resp, star, cw, metric)
        assert val == pytest.approx(np.linalg.eigvalsh(M)[-1], rel=1e-12)
        assert np.linalg.norm(w) == pytest.approx(1.0)
        assert w @ M @ w == pytest.approx(val, rel=1e-10)
        V = rng.standard_normal((1000, 5))
        V /= np.linalg.norm(V, axis=1, keepdims=True)
        assert np.max(np.einsum("ij,jk,ik->i", V, M, V)) <= val + 1e-12


def test_worst_case_of_identical_policies(setup):
    sys, ops, cw, star, resp = setup
    _, val = ev.worst_case_disturbance(star, star, cw, "imitation")
    assert abs(val) <= 1e-12


def test_profile_shapes_and_values():
    n, T = 3, 30
    one = ev.generate(ev.DisturbanceProfile("constant_one"), n, T)
    assert one.shape == (90,) and np.all(one == 1)
    step = ev.generate(ev.DisturbanceProfile("step"), n, T).reshape(T, n)
    assert np.all(step[:15] == 0) and np.all(step[15:] == 1)
    stairs = ev.generate(ev.DisturbanceProfile("stairs"), n, T).reshape(T, n)[:, 0]
    assert stairs[0] == 0 and stairs[-1] == 1 and np.all(np.diff(stairs) >= 0)
    saw = ev.generate(ev.DisturbanceProfile("sawtooth"), n, T).reshape(T, n)[:, 0]
    np.testing.assert_allclose(saw[:6], [-1, -0.6, -0.2, 0.2, 0.6, -1])
    sin = ev.generate(ev.DisturbanceProfile("sin", scale=2.0), n, T).reshape(T, n)[:, 0]
    assert sin[0] == 0 and np.max(np.abs(sin)) <= 2.0
    u = ev.generate(ev.DisturbanceProfile("uniform", seed=1, lo=0.5, hi=1.0), n, T)
    assert u.min() >= 0.5 and u.max() < 1.0


def test_unknown_and_controller_dependent_profiles():
    with pytest.raises(ValueError):
        ev.DisturbanceProfile("pink")
    with pytest.raises(ValueError, match="controller dependent"):
        ev.generate(ev.DisturbanceProfile("worst"), 2, 3)


@pytest.mark.parametrize("tag", ["gauss01", "uniform", "constant_one", "sin", "sawtooth", "step", "stairs"])
def test_profiles_are_reproducible(tag):
    p = ev.DisturbanceProfile(tag, seed=2**63 + 5)
    a = ev.generate(p, 4, 7, index=11)
    b = ev.generate(p, 4, 7, index=11)
    assert a.tobytes() == b.tobytes()


def test_realizations_differ_by_index():
    p = ev.DisturbanceProfile("gauss01", seed=3)
    assert not np.array_equal(ev.generate(p, 2, 4, 0), ev.generate(p, 2, 4, 1))


def test_gaussian_statistics():
    p = ev.DisturbanceProfile("gauss01", seed=42)
    W = np.concatenate([ev.generate(p, 2, 5, i) for i in range(1000)])  # 10^4 draws
    k = W.size
    assert abs(W.mean()) <= 3 / np.sqrt(k)
    # var of the sample variance of N(0,1) is 2/(k-1)
    assert abs(W.var(ddof=1) - 1) <= 3 * np.sqrt(2 / (k - 1))


@pytest.fixture(scope="module")
def vertex_setup():
    sys = LtvSystem.time_invariant([[0.9, 0.2], [0.0, 0.7]], [[0.0], [1.0]], 5)
    ops = build_lifted(sys)
    cw = CostWeights.identity(2, 1, 5)
    star = unconstrained_optimal(ops, cw)
    umax = float(np.max(np.abs(star.Psi_u).sum(axis=1)))
    safety = SafetySpec.box(2, 1, 5, u_max=umax)
    return star, safety


def test_vertex_sampling(vertex_setup):
    star, safety = vertex_setup
    W = ev.sample_near_active_vertices(star, safety, 50, threshold=0.9, seed=1)
    assert W.shape == (50, 10)
    assert np.all(np.abs(W) == 1)
    assert np.all(ev.activation_ratios(star, safety, W) >= 0.9)
    again = ev.sample_near_active_vertices(star, safety, 50, threshold=0.9, seed=1)
    assert W.tobytes() == again.tobytes()


def test_vertex_sampling_threshold_zero(vertex_setup):
    star, safety = vertex_setup
    W = ev.sample_near_active_vertices(star, safety, 20, threshold=0.0, seed=0)
    assert W.shape == (20, 10)


def test_vertex_sampling_cap(vertex_setup):
    star, safety = vertex_setup
    with pytest.raises(RuntimeError, match="lower the threshold"):
        ev.sample_near_active_vertices(star, safety, 5, threshold=1.5, max_draws=5000)
    with pytest.raises(ValueError):
        ev.sample_near_active_vertices(star, safety, 0)


def test_cumulative_series(setup):
    sys, ops, cw, star, resp = setup
    W = np.random.default_rng(4).standard_normal((7, ops.nT))
    E, J = ev.cumulative_series(resp, star, W, sys.n, sys.m)
    assert E.shape == J.shape == (7, sys.T)
    assert np.all(np.diff(E, axis=1) >= 0) and np.all(np.diff(J, axis=1) >= 0)
    # final values are the identity-weighted totals
    d = np.vstack([resp.Phi_x - star.Psi_x, resp.Phi_u - star.Psi_u]) @ W[0]
    assert E[0, -1] == pytest.approx(d @ d)
    Ew, Jw = ev.cumulative_series(resp, star, W, sys.n, sys.m, weights=cw)
    assert Ew[0, -1] == pytest.approx(ev.imitation_loss(ev.simulate(resp, W[0], cw, sys.T), star, cw))


def test_aggregate_identical_and_single(setup):
    sys, ops, cw, star, resp = setup
    W = np.random.default_rng(5).standard_normal((4, ops.nT))
    E, J = ev.cumulative_series(resp, star, W, sys.n, sys.m)
    ms = ev.aggregate_metrics(E, J, E, J)
    assert np.all(ms.dE == 0) and np.all(ms.dJ == 0)
    one = ev.aggregate_metrics(E[:1], J[:1], 2 * E[:1], 2 * J[:1])
    np.testing.assert_allclose(one.E_bar, E[0])
    np.testing.assert_allclose(one.dE, -0.5)
    np.testing.assert_allclose(one.dE_min, one.dE_max)
    assert np.all(one.dE_std == 0)
    with pytest.raises(ValueError):
        ev.aggregate_metrics(E[:0], J[:0], E[:0], J[:0])


def test_csv_writers(tmp_path):
    ev.write_series_csv(tmp_path / "s.csv", [0.1, 0.2], [0, 0], [0, 0], [1, 1])
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["t", "mean", "std", "min", "max"]
    assert rows[2][:2] == ["1", "0.2"]
    ev.write_table_csv(tmp_path / "t.csv", [("gauss01", "h2", 1.5, 0.0)])
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows == [["profile", "policy", "avg_cost", "pct_vs_best"], ["gauss01", "h2", "1.5", "0.0"]]


def test_average_costs_match_simulation(setup):
    sys, ops, cw, star, resp = setup
    W = np.random.default_rng(6).standard_normal((5, ops.nT))
    avg = ev.average_costs({"p": resp}, W, cw)["p"]
    direct = np.mean([ev.simulate(resp, w, cw, sys.T).cost for w in W])
    assert avg == pytest.approx(direct, rel=1e-10)
