"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

The two experiment fixtures run the full T = 30 pipelines from ``configs/``
(about an hour together on one core). Determinism is checked on two T = 8
runs of each experiment; set ``FTC_ACCEPT_FULL_DETERMINISM=1`` to rerun the
full experiments and compare against the fixture outputs instead.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from ftc import clairvoyant, evaluation, experiments, synthesis
from ftc.clairvoyant import unconstrained_optimal
from ftc.experiments import ExperimentConfig
from ftc.lifted import CostWeights, LtvSystem, build_lifted
from ftc.properties import random_causal, random_system, random_weights

from oracles import bisection_spectral_min

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# best policy per row in the reference table; "ftc" is the follow-the-clairvoyant policy
REFERENCE_BEST = {
    "gauss01": "h2",
    "uniform[0.5,1]": "ftc",
    "uniform[0,1]": "ftc",
    "constant_one": "ftc",
    "sin": "ftc",
    "sawtooth": "ftc",
    "step": "hinf",
    "stairs": "ftc",
    "worst": "hinf",
}


def _instance(rng):
    sys = random_system(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 13)))
    ops = build_lifted(sys)
    return sys, ops, random_weights(rng, sys.n, sys.m, sys.T)


@pytest.fixture(scope="module")
def exp1(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp1")
    report = experiments.run_experiment_one(ExperimentConfig.load(CONFIGS / "exp1.json"), out)
    return report, out


@pytest.fixture(scope="module")
def exp2(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp2")
    report = experiments.run_experiment_two(ExperimentConfig.load(CONFIGS / "exp2.json"), out)
    return report, out


def test_c1_regret_equals_imitation(record):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        sys, ops, cw = _instance(rng)
        star = unconstrained_optimal(ops, cw)
        resp = random_causal(rng, ops)
        for _ in range(20):
            tr = evaluation.simulate(resp, rng.standard_normal(ops.nT), cw, sys.T)
            r, e = evaluation.regret(tr, star, cw), evaluation.imitation_loss(tr, star, cw)
            worst = max(worst, abs(r - e) / max(1.0, abs(r)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 10
    record(1, "regret = imitation loss", ok, f"max rel err {worst:.2e} (<= 1e-8), {elapsed:.2f}s (< 10s)")
    assert ok


def test_c2_matrix_inversion_identity(record):
    rng = np.random.default_rng(102)
    worst = max(clairvoyant.mil_identity_residual(ops, cw) for _, ops, cw in (_instance(rng) for _ in range(20)))
    ok = worst <= 1e-9
    record(2, "matrix-inversion identity", ok, f"max Frobenius residual {worst:.2e} (<= 1e-9)")
    assert ok


def test_c3_clairvoyant_optimality(record):
    rng = np.random.default_rng(103)
    stat, gap = 0.0, -np.inf
    for _ in range(50):
        sys, ops, cw = _instance(rng)
        star = unconstrained_optimal(ops, cw)
        stat = max(stat, clairvoyant.stationarity_residual(ops, cw, star.Psi_u))
        pi = random_causal(rng, ops)
        for _ in range(20):
            w = rng.standard_normal(ops.nT)
            gap = max(gap, evaluation.simulate(star, w, cw, sys.T).cost - evaluation.simulate(pi, w, cw, sys.T).cost)
    ok = stat <= 1e-8 and gap <= 1e-9
    record(3, "clairvoyant optimality", ok,
           f"stationarity {stat:.2e} (<= 1e-8), max J(psi*)-J(pi) {gap:.2e} (<= 1e-9)")
    assert ok


def test_c4_experiment_one_regret(exp1, record):
    report, _ = exp1
    wc, coin = report["ftc_worst_case_regret"], report["benchmark_coincidence"]
    ok = abs(wc / 7.98 - 1) <= 0.01 and coin <= 1e-4
    record(4, "exp1 worst-case regret", ok, f"{wc:.4f} vs 7.98 (1%), benchmark coincidence {coin:.2e} (<= 1e-4)")
    assert ok


def test_c5_table_one_ordering(exp1, record):
    report, _ = exp1
    best, pct = {}, {}
    for row in report["table"]:
        pct[(row["profile"], row["policy"])] = row["pct_vs_best"]
        if row["pct_vs_best"] == 0.0:
            best[row["profile"]] = row["policy"]
    wrong = {p: (best.get(p), want) for p, want in REFERENCE_BEST.items() if best.get(p) != want}
    gauss = pct[("gauss01", "ftc")] - pct[("gauss01", "h2")]
    soft = abs(gauss - 52.33) <= 5
    detail = "all rows match" if not wrong else "mismatched rows (ours, reference): " + ", ".join(
        f"{p} {a}/{b}" for p, (a, b) in wrong.items())
    record(5, "table 1 best policy per row", not wrong, detail)
    record(5, "table 1 N(0,1) FTC vs H2 (soft)", soft, f"{gauss:+.2f}% vs +52.33% (5 pp)")
    assert not wrong


def test_c6_experiment_two(exp2, record):
    report, _ = exp2
    dE, dJ = report["delta_E_final"], report["delta_J_final"]
    ok = report["N"] == 1000 and 0.10 <= dE <= 0.30 and 0.03 <= dJ <= 0.20
    record(6, "exp2 regret policy vs FTC", ok,
           f"dE_T {100 * dE:+.2f}% in [10, 30], dJ_T {100 * dJ:+.2f}% in [3, 20], N={report['N']}")
    assert ok


def test_c7_safety_certification(exp1, exp2, record):
    slack = {
        f"{name}.{c}": s["min_slack"]
        for name, (rep, _) in (("exp1", exp1), ("exp2", exp2))
        for c, s in rep["controllers"].items()
    }
    ok = all(v >= -1e-6 for v in slack.values())
    record(7, "closed-form safety slack", ok,
           "min " + ", ".join(f"{k} {v:.3g}" for k, v in slack.items()) + " (>= -1e-6)")
    assert ok


def test_c8_sdp_cross_check(record):
    ops = build_lifted(LtvSystem.time_invariant([[0.5]], [[1.0]], 5))
    cw = CostWeights.identity(1, 1, 5)
    star = unconstrained_optimal(ops, cw)
    lam = synthesis.synthesize_ftc(ops, cw, star).objective_value
    coef, offset = ops.response_map(cw.Csqrt, star.stacked)
    oracle = bisection_spectral_min(ops, coef, offset)
    rel = abs(lam - oracle) / oracle
    ok = rel <= 1e-4
    record(8, "SDP vs bisection oracle", ok, f"lambda {lam:.8f}, oracle {oracle:.8f}, rel {rel:.2e} (<= 1e-4)")
    assert ok


def test_c9_feedback_reconstruction(record):
    rng = np.random.default_rng(109)
    worst = 0.0
    for _ in range(20):
        sys, ops, _ = _instance(rng)
        resp = random_causal(rng, ops)
        K = synthesis.reconstruct_feedback(resp)
        w = rng.standard_normal(ops.nT)
        x, _ = evaluation.closed_loop_rollout(sys, K, w)
        xr = resp.Phi_x @ w
        worst = max(worst, np.linalg.norm(x - xr) / max(1.0, np.linalg.norm(xr)))
    ok = worst <= 1e-8
    record(9, "feedback rollout vs Phi_x w", ok, f"max rel err {worst:.2e} (<= 1e-8)")
    assert ok


def test_c10_determinism(exp1, exp2, tmp_path, record):
    full = bool(os.environ.get("FTC_ACCEPT_FULL_DETERMINISM"))
    same = {}
    for name, run, ref, files in (
        ("exp1.json", experiments.run_experiment_one, exp1[1], ["table1.csv"]),
        ("exp2.json", experiments.run_experiment_two, exp2[1], ["delta_E.csv", "delta_J.csv"]),
    ):
        cfg = ExperimentConfig.load(CONFIGS / name)
        if not full:
            cfg.system = experiments.example_system(T=8)
            cfg.N = 200
        a = tmp_path / name / "a"
        run(cfg, a)
        if full:
            b = ref
        else:
            b = tmp_path / name / "b"
            run(cfg, b)
        for f in files:
            same[f] = (a / f).read_bytes() == (b / f).read_bytes()
    ok = all(same.values())
    scope = "full T=30 reruns" if full else "T=8 reruns"
    record(10, "bit-identical CSVs", ok,
           ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()) + f" ({scope})")
    assert ok
