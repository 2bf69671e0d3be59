"""Noncausal (clairvoyant) benchmark policies.

A benchmark is a pair of noncausal maps ``(Psi_x, Psi_u)`` with ``x = Psi_x w``
and ``u = Psi_u w``. Any achievable pair satisfies ``Psi_x = F Psi_u + G``, so
only ``Psi_u`` is ever optimized over.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
import scipy.linalg as sla

from ftc import conic
from ftc.errors import IllConditionedError
from ftc.lifted import CostWeights, LiftedOperators, check_stacked, lower_block_mask
from ftc.safety import RobustSafety, SafetySpec, check_feasible

COND_LIMIT = 1e12


@dataclass(frozen=True)
class NoncausalResponse:
    Psi_x: np.ndarray
    Psi_u: np.ndarray
    preview: int | str = "full"
    kind: str = "unconstrained"
    stats: dict = field(default_factory=dict, compare=False, repr=False)

    def check(self, ops: LiftedOperators, tol: float = 1e-8) -> None:
        res = ops.achievability_residual(self.Psi_x, self.Psi_u)
        if res > tol:
            raise AssertionError(f"benchmark not achievable: residual {res:.2e}")
        if self.preview != "full":
            mask_u = lower_block_mask(ops.T, ops.m, ops.n, int(self.preview))
            if np.any(self.Psi_u[~mask_u] != 0):
                raise AssertionError("benchmark violates its preview band")

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.Psi_x, self.Psi_u])


def _P(ops: LiftedOperators, cw: CostWeights) -> np.ndarray:
    return cw.R + ops.F.T @ cw.Q @ ops.F


def unconstrained_optimal(ops: LiftedOperators, cw: CostWeights) -> NoncausalResponse:
    """Global clairvoyant optimum ``Psi_u = -(R + F'QF)^{-1} F'QG``, ``Psi_x = F Psi_u + G``."""
    P = _P(ops, cw)
    cond = np.linalg.cond(P)
    if cond > COND_LIMIT:
        raise IllConditionedError(
            f"R + F'QF has condition number {cond:.3g}; rescale R (or Q) to improve conditioning"
        )
    Psi_u = -sla.cho_solve(sla.cho_factor(P), ops.F.T @ cw.Q @ ops.G)
    Psi_x = ops.F @ Psi_u + ops.G
    return NoncausalResponse(Psi_x, Psi_u, "full", "unconstrained")


def stationarity_residual(ops: LiftedOperators, cw: CostWeights, Psi_u: np.ndarray) -> float:
    return float(np.linalg.norm(_P(ops, cw) @ Psi_u + ops.F.T @ cw.Q @ ops.G))


def clairvoyant_kernel(ops: LiftedOperators, cw: CostWeights) -> np.ndarray:
    """``G'Q(I + F R^{-1} F'Q)^{-1} G``: the clairvoyant cost is ``w' K w``."""
    nT = ops.nT
    RinvFt = np.linalg.solve(cw.R, ops.F.T)
    inner = np.linalg.solve(np.eye(nT) + ops.F @ RinvFt @ cw.Q, ops.G)
    K = ops.G.T @ cw.Q @ inner
    return (K + K.T) / 2


def clairvoyant_cost(ops: LiftedOperators, cw: CostWeights, w) -> float:
    w = check_stacked(w, ops.n, ops.T)
    return max(float(w @ clairvoyant_kernel(ops, cw) @ w), 0.0)


def mil_identity_residual(ops: LiftedOperators, cw: CostWeights) -> float:
    """Frobenius residual of ``QFP^{-1}F'Q + Q(I + FR^{-1}F'Q)^{-1} - Q``."""
    Q, F, R = cw.Q, ops.F, cw.R
    P = _P(ops, cw)
    lhs = Q @ F @ np.linalg.solve(P, F.T @ Q)
    lhs = lhs + Q @ np.linalg.inv(np.eye(ops.nT) + F @ np.linalg.solve(R, F.T) @ Q)
    return float(np.linalg.norm(lhs - Q))


def constrained_h2(
    ops: LiftedOperators,
    cw: CostWeights,
    safety: SafetySpec | None = None,
    preview: int | str = "full",
    tol: conic.Tolerances = conic.DEFAULT_TOL,
    check_feasibility: bool = True,
) -> NoncausalResponse:
    """Clairvoyant H2 policy: minimise ``||C^{1/2} [Psi_x; Psi_u]||_F^2``.

    Constraints are achievability, robust safety over ``W`` and, for an integer
    ``preview`` p, ``Psi_u[t, k] = 0`` whenever ``k > t + p``.
    """
    T, n, m = ops.T, ops.n, ops.m
    if preview == "full":
        mask = np.ones((ops.mT, ops.nT), dtype=bool)
    else:
        preview = int(preview)
        if preview < 0:
            raise ValueError("preview must be >= 0")
        mask = lower_block_mask(T, m, n, preview)
    Psi_u, theta, expand = conic.masked_variable(mask, "Psi_u")
    if safety is not None and safety.q > 0 and check_feasibility:
        check_feasible(safety, ops, Psi_u, mask, tol, "clairvoyant benchmark")

    coef, offset = ops.response_map(cw.Csqrt)
    objective = cp.sum_squares(coef @ Psi_u + offset)
    robust = None
    if safety is not None and safety.q > 0:
        robust = RobustSafety(safety, ops, Psi_u, mask)
    prob = cp.Problem(cp.Minimize(objective), [] if robust is None else robust.constraints)
    stats = conic.solve(prob, tol, "clairvoyant H2")

    Pu = expand(theta.value)
    Px = ops.F @ Pu + ops.G
    # stationarity over the free entries, including the safety multipliers
    grad = 2 * (_P(ops, cw) @ Pu + ops.F.T @ cw.Q @ ops.G)
    if robust is not None:
        D = robust.multiplier_matrix()
        grad = grad + (safety.H_x @ ops.F + safety.H_u).T @ D
    stats["kkt_residual"] = float(np.max(np.abs(grad[mask]))) / max(1.0, float(np.max(np.abs(Pu))))
    stats["dual_Y"] = None if robust is None else robust.Y_value()
    resp = NoncausalResponse(Px, Pu, preview, "h2_safe", stats)
    return resp


def coincides(a: NoncausalResponse, b: NoncausalResponse) -> float:
    """``||Psi_u^a - Psi_u^b||_F / max(1, ||Psi_u^b||_F)``."""
    return float(np.linalg.norm(a.Psi_u - b.Psi_u) / max(1.0, np.linalg.norm(b.Psi_u)))
