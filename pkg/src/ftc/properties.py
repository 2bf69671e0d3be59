"""Randomized invariant checks shared by the ``props`` subcommand and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ftc import clairvoyant, evaluation, synthesis
from ftc.lifted import CostWeights, LtvSystem, build_lifted, lower_block_mask, rollout


@dataclass
class Check:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def to_dict(self) -> dict:
        return {"value": self.value, "tol": self.tol, "passed": self.passed}


def random_system(rng, n=None, m=None, T=None, scale=0.8) -> LtvSystem:
    n = n or int(rng.integers(1, 5))
    m = m or int(rng.integers(1, 5))
    T = T or int(rng.integers(1, 13))
    A = [scale * rng.standard_normal((n, n)) / np.sqrt(n) for _ in range(T - 1)]
    B = [rng.standard_normal((n, m)) for _ in range(T - 1)]
    return LtvSystem(n, m, T, tuple(A), tuple(B))


def random_weights(rng, n, m, T) -> CostWeights:
    """Block-diagonal per-step weights with ``Q >= 0`` and ``R > 0``."""
    Qs, Rs = [], []
    for _ in range(T):
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((m, m))
        Qs.append(a @ a.T / n)
        Rs.append(b @ b.T / m + 0.5 * np.eye(m))
    from scipy.linalg import block_diag

    return CostWeights(block_diag(*Qs), block_diag(*Rs))


def random_causal(rng, ops, scale=0.5) -> synthesis.CausalResponse:
    """Random achievable causal pair: lower block-triangular ``Phi_u``, ``Phi_x = F Phi_u + G``."""
    Phi_u = scale * rng.standard_normal((ops.mT, ops.nT))
    Phi_u[~lower_block_mask(ops.T, ops.m, ops.n)] = 0.0
    return synthesis.CausalResponse(ops.F @ Phi_u + ops.G, Phi_u, ops.T)


def regret_identity_error(ops, cw, star, resp, rng, draws=20) -> float:
    """Max relative gap between regret and imitation loss against ``star``."""
    worst = 0.0
    for _ in range(draws):
        w = rng.standard_normal(ops.nT)
        tr = evaluation.simulate(resp, w, cw, ops.T)
        r = evaluation.regret(tr, star, cw)
        e = evaluation.imitation_loss(tr, star, cw)
        worst = max(worst, abs(r - e) / max(1.0, abs(r)))
    return worst


def run_suite(seed: int = 0, tolerance: float | None = None, benchmark_fn=None, trials: int = 20) -> dict:
    """Run every invariant on random instances; returns ``{name: Check}``.

    ``tolerance`` overrides every per-check tolerance. ``benchmark_fn(ops, cw)``
    replaces the clairvoyant optimum (used to inject faults).
    """
    rng = np.random.default_rng(seed)
    bench_fn = benchmark_fn or clairvoyant.unconstrained_optimal
    acc = {k: 0.0 for k in (
        "rollout", "structure", "mil_identity", "stationarity", "regret_identity",
        "lower_bound", "cost_split", "feedback", "h2_imitation_argmin", "worst_case", "determinism",
    )}
    for _ in range(trials):
        sys = random_system(rng)
        ops = build_lifted(sys)
        cw = random_weights(rng, sys.n, sys.m, sys.T)
        w = rng.standard_normal(ops.nT)
        u = rng.standard_normal(ops.mT)
        x = rollout(sys, w, u)
        ref = ops.F @ u + ops.G @ w
        acc["rollout"] = max(acc["rollout"], np.linalg.norm(x - ref) / max(1.0, np.linalg.norm(x)))

        acc["structure"] = max(
            acc["structure"],
            float(np.max(np.abs(ops.F[lower_block_mask(ops.T, ops.n, ops.m, -1) == 0]), initial=0.0)),
            float(np.max(np.abs(ops.G[~lower_block_mask(ops.T, ops.n, ops.n)]), initial=0.0)),
        )
        acc["mil_identity"] = max(acc["mil_identity"], clairvoyant.mil_identity_residual(ops, cw))
        star = bench_fn(ops, cw)
        acc["stationarity"] = max(acc["stationarity"], clairvoyant.stationarity_residual(ops, cw, star.Psi_u))

        K_star = clairvoyant.clairvoyant_kernel(ops, cw)
        P = cw.R + ops.F.T @ cw.Q @ ops.F
        for _ in range(3):
            resp = random_causal(rng, ops)
            err = regret_identity_error(ops, cw, star, resp, rng, draws=5)
            acc["regret_identity"] = max(acc["regret_identity"], err)
            wv = rng.standard_normal(ops.nT)
            tr = evaluation.simulate(resp, wv, cw, ops.T)
            acc["lower_bound"] = max(acc["lower_bound"], wv @ K_star @ wv - tr.cost)
            uu = rng.standard_normal(ops.mT)
            xx = ops.F @ uu + ops.G @ wv
            g = P @ uu + ops.F.T @ cw.Q @ ops.G @ wv
            split = g @ np.linalg.solve(P, g) + wv @ K_star @ wv
            direct = cw.quad(xx, uu)
            acc["cost_split"] = max(acc["cost_split"], abs(split - direct) / max(1.0, abs(direct)))

            K = synthesis.reconstruct_feedback(resp)
            xs, _ = evaluation.closed_loop_rollout(sys, K, wv)
            xr = resp.Phi_x @ wv
            acc["feedback"] = max(acc["feedback"], np.linalg.norm(xs - xr) / max(1.0, np.linalg.norm(xr)))

        h2 = synthesis.h2_unconstrained(ops, cw)
        imit = synthesis.h2_unconstrained(ops, cw, target=star)
        acc["h2_imitation_argmin"] = max(
            acc["h2_imitation_argmin"],
            np.linalg.norm(h2.Phi_u - imit.Phi_u) / max(1.0, np.linalg.norm(h2.Phi_u)),
        )

        wc, val = evaluation.worst_case_disturbance(resp, star, cw, "regret")
        M = evaluation.quadratic_form(resp, star, cw, "regret")
        V = rng.standard_normal((1000, ops.nT))
        V /= np.linalg.norm(V, axis=1, keepdims=True)
        acc["worst_case"] = max(
            acc["worst_case"],
            float(np.max(np.einsum("ij,jk,ik->i", V, M, V)) - val),
            abs(wc @ M @ wc - val) / max(1.0, abs(val)),
        )

        for tag in ("gauss01", "uniform"):
            prof = evaluation.DisturbanceProfile(tag, seed=int(rng.integers(2**32)))
            a = evaluation.generate(prof, sys.n, sys.T, 3)
            b = evaluation.generate(prof, sys.n, sys.T, 3)
            acc["determinism"] = max(acc["determinism"], float(np.max(np.abs(a - b))))

    tols = {
        "rollout": 1e-10, "structure": 0.0, "mil_identity": 1e-9, "stationarity": 1e-8,
        "regret_identity": 1e-8, "lower_bound": 1e-9, "cost_split": 1e-8, "feedback": 1e-8,
        "h2_imitation_argmin": 1e-5, "worst_case": 1e-8, "determinism": 0.0,
    }
    if tolerance is not None:
        tols = {k: tolerance for k in tols}
    return {k: Check(k, float(v), tols[k]) for k, v in acc.items()}
