"""Causal controller synthesis in system-level form.

All four criteria share one parametrization: ``Phi_u`` is lower
block-triangular (only those entries are decision variables) and
``Phi_x = F Phi_u + G``, which satisfies the achievability equation
``(I - ZA) Phi_x - ZB Phi_u = I`` identically and inherits causal structure.
Robust safety uses the LP-dual certificate ``Y``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
import scipy.linalg as sla

from ftc import conic
from ftc.clairvoyant import NoncausalResponse
from ftc.errors import SolverError
from ftc.lifted import CostWeights, LiftedOperators, lower_block_mask
from ftc.safety import RobustSafety, SafetySpec, check_feasible, slacks

log = logging.getLogger(__name__)

CRITERIA = ("ftc", "regret", "h2", "hinf")


@dataclass(frozen=True)
class CausalResponse:
    Phi_x: np.ndarray
    Phi_u: np.ndarray
    T: int

    def check(self, ops: LiftedOperators, tol: float = 1e-6) -> None:
        res = ops.achievability_residual(self.Phi_x, self.Phi_u)
        if res > tol:
            raise AssertionError(f"response not achievable: residual {res:.2e}")
        mx = lower_block_mask(ops.T, ops.n, ops.n)
        mu = lower_block_mask(ops.T, ops.m, ops.n)
        if np.any(self.Phi_x[~mx] != 0) or np.any(self.Phi_u[~mu] != 0):
            raise AssertionError("response is not causal")
        for t in range(ops.T):
            d = self.Phi_x[t * ops.n:(t + 1) * ops.n, t * ops.n:(t + 1) * ops.n]
            if not np.allclose(d, np.eye(ops.n), atol=1e-8):
                raise AssertionError(f"Phi_x diagonal block {t} is not the identity")

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.Phi_x, self.Phi_u])

    @classmethod
    def from_feedback(cls, ops: LiftedOperators, K: np.ndarray) -> "CausalResponse":
        """Closed-loop maps of ``u = K x`` for a lower block-triangular ``K``."""
        Phi_x = np.linalg.solve(np.eye(ops.nT) - ops.Z @ (ops.Ablk + ops.Bblk @ K), np.eye(ops.nT))
        Phi_x[~lower_block_mask(ops.T, ops.n, ops.n)] = 0.0
        for t in range(ops.T):
            Phi_x[t * ops.n:(t + 1) * ops.n, t * ops.n:(t + 1) * ops.n] = np.eye(ops.n)
        Phi_u = K @ Phi_x
        Phi_u[~lower_block_mask(ops.T, ops.m, ops.n)] = 0.0
        return cls(Phi_x, Phi_u, ops.T)


@dataclass(frozen=True)
class SynthesisResult:
    response: CausalResponse
    objective_value: float
    criterion: str
    dual_Y: np.ndarray | None = None
    solver_stats: dict = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self, ops: LiftedOperators, tol: conic.Tolerances = conic.DEFAULT_TOL) -> dict:
        return {
            "criterion": self.criterion,
            "lambda": self.objective_value,
            "Phi_x": self.response.Phi_x.tolist(),
            "Phi_u": self.response.Phi_u.tolist(),
            "Y": None if self.dual_Y is None else self.dual_Y.tolist(),
            "dims": {"n": ops.n, "m": ops.m, "T": ops.T},
            "tolerances": tol.to_dict(),
        }


def causal_variables(ops: LiftedOperators):
    """``(Phi_u, extract)``; ``extract()`` returns the solved CausalResponse.

    ``Phi_x = F Phi_u + G`` is implied and never materialized as a variable.
    """
    mask = lower_block_mask(ops.T, ops.m, ops.n)
    Phi_u, theta, expand = conic.masked_variable(mask, "Phi_u")

    def extract():
        Pu = expand(theta.value)
        return CausalResponse(ops.F @ Pu + ops.G, Pu, ops.T)

    return Phi_u, extract


def _safety_block(ops, safety, Phi_u, tol, check_feasibility, what, rows=None):
    if safety is None or safety.q == 0:
        return [], None
    mask = lower_block_mask(ops.T, ops.m, ops.n)
    if check_feasibility:
        check_feasible(safety, ops, Phi_u, mask, tol, what)
    robust = RobustSafety(safety, ops, Phi_u, mask, rows=rows)
    return robust.constraints, robust


def _finish(ops, safety, extract, robust, criterion, value, stats) -> SynthesisResult:
    resp = extract()
    resp.check(ops)
    Yv = None
    if robust is not None:
        Yv = robust.Y_value(resp.stacked)
        stats["dual_bound_violation"] = float(np.max(Yv.T @ safety.h_w - safety.h))
        stats["dual_equality_residual"] = float(
            np.max(np.abs(safety.H @ resp.stacked - Yv.T @ safety.H_w))
        )
        stats["min_slack"] = float(np.min(slacks(safety, resp.Phi_x, resp.Phi_u)))
    return SynthesisResult(resp, max(float(value), 0.0), criterion, Yv, stats)


def compress(coef: np.ndarray, offset: np.ndarray):
    """Orthogonal compression of ``M(Phi_u) = coef @ Phi_u + offset``.

    With ``coef = U R`` (thin QR) and ``offset = U O1 + O2`` (``O2`` orthogonal
    to ``range(U)``), ``M'M = N'N + O2'O2`` where ``N = R Phi_u + O1`` has only
    ``rank(coef)`` rows. This shrinks the Schur-complement LMI from
    ``rows(coef) + nT`` to ``mT + nT`` without changing its feasible set.
    """
    U, Rf = np.linalg.qr(coef)
    O1 = U.T @ offset
    O2 = offset - U @ O1
    const = O2.T @ O2
    return Rf, O1, (const + const.T) / 2


def _lmi_min(ops, cw, safety, tol, check_feasibility, criterion, coef, offset, shift):
    """``min lam`` s.t. ``lam I + shift - M'M >= 0`` with ``M = coef Phi_u + offset``.

    Posed through the Schur complement
    ``[[lam I + shift - O2'O2, N'], [N, I]] >= 0``.
    """
    Rf, O1, const = compress(coef, offset)
    if safety is None or safety.q == 0 or safety.box_bounds() is None:
        return _lmi_solve(ops, safety, tol, check_feasibility, criterion, coef, offset, shift, Rf, O1, const)
    # Row generation: the interior-point Schur complement is dense in the
    # variables, so the dual multipliers of all rows at once do not fit.
    # Rows are added until the closed-form check passes on all of them.
    scale = np.maximum(1.0, np.abs(safety.h))
    rows = np.zeros(0, dtype=int)
    check = check_feasibility
    for rounds in range(1, _MAX_ROUNDS + 1):
        res = _lmi_solve(ops, safety, tol, check, criterion, coef, offset, shift, Rf, O1, const, rows)
        check = False
        sl = slacks(safety, res.response.Phi_x, res.response.Phi_u)
        if np.all(sl >= -_ROW_TOL * scale):
            res.solver_stats["row_generation"] = {"rounds": rounds, "rows": int(rows.size), "q": safety.q}
            _verify(res, res.solver_stats["lambda_eval"], tol)
            return res
        near = np.flatnonzero(sl < _ROW_MARGIN * scale)
        rows = np.union1d(rows, near)
        log.info("%s: round %d violates %d rows (min slack %.3g); %d of %d rows now in dual form",
                 criterion, rounds, int(np.sum(sl < -_ROW_TOL * scale)), float(sl.min()), rows.size, safety.q)
    raise SolverError(f"{criterion} SDP: row generation did not converge in {_MAX_ROUNDS} rounds", res.solver_stats)


_MAX_ROUNDS = 12
_ROW_TOL = 1e-7  # violation that triggers another round
_ROW_MARGIN = 0.05  # rows this close to active are added with the violated ones


def _lmi_solve(ops, safety, tol, check_feasibility, criterion, coef, offset, shift, Rf, O1, const, rows=None):
    nT, r = ops.nT, Rf.shape[0]
    Phi_u, extract = causal_variables(ops)
    cons, robust = _safety_block(ops, safety, Phi_u, tol, check_feasibility, criterion, rows)
    lam = cp.Variable(name="lambda")
    N = Rf @ Phi_u + O1
    lmi = cp.bmat([[lam * np.eye(nT) + (shift - const), N.T], [N, np.eye(r)]])
    cons = cons + [lam >= 0, lmi >> 0]
    prob = cp.Problem(cp.Minimize(lam), cons)
    stats = conic.solve(prob, tol, f"{criterion} SDP", sdp=True)
    res = _finish(ops, safety, extract, robust, criterion, lam.value, stats)
    M = coef @ res.response.Phi_u + offset
    lam_eval = float(np.linalg.eigvalsh(M.T @ M - shift)[-1])
    res.solver_stats["lambda_eval"] = lam_eval
    # with a row subset the certificate of the remaining rows is checked by the caller
    _verify(res, lam_eval, tol, certificate=rows is None)
    return res


def _verify(res: SynthesisResult, lam_eval: float, tol, certificate: bool = True) -> None:
    """Reject solver points whose Schur complement or safety certificate is off."""
    st = res.solver_stats
    problems = []
    if abs(res.objective_value - max(lam_eval, 0.0)) > 1e-5 * max(1.0, abs(lam_eval)):
        problems.append(f"lambda {res.objective_value:.8g} vs evaluated {lam_eval:.8g}")
    if certificate and st.get("dual_bound_violation", -1.0) > 1e-6:
        problems.append(f"dual bound violation {st['dual_bound_violation']:.2e}")
    if certificate and st.get("dual_equality_residual", 0.0) > 1e-6:
        problems.append(f"dual equality residual {st['dual_equality_residual']:.2e}")
    if problems:
        raise SolverError(f"{res.criterion} SDP: solution failed verification: " + "; ".join(problems), st)


def synthesize_ftc(
    ops: LiftedOperators,
    cw: CostWeights,
    bench: NoncausalResponse,
    safety: SafetySpec | None = None,
    tol: conic.Tolerances = conic.DEFAULT_TOL,
    check_feasibility: bool = True,
    imitation_weights: CostWeights | None = None,
) -> SynthesisResult:
    """Minimise the worst-case imitation loss ``max_{|w|<=1} |C^{1/2}(Phi - Psi) w|^2``.

    ``imitation_weights`` replaces ``C`` in the loss when the tracking weights
    should differ from the cost weights.
    """
    weights = imitation_weights or cw
    coef, offset = ops.response_map(weights.Csqrt, bench.stacked)
    shift = np.zeros((ops.nT, ops.nT))
    return _lmi_min(ops, cw, safety, tol, check_feasibility, "ftc", coef, offset, shift)


def synthesize_hinf(
    ops: LiftedOperators,
    cw: CostWeights,
    safety: SafetySpec | None = None,
    tol: conic.Tolerances = conic.DEFAULT_TOL,
    check_feasibility: bool = True,
) -> SynthesisResult:
    """Minimise the worst-case cost ``sigma_max(C^{1/2} Phi)^2``."""
    coef, offset = ops.response_map(cw.Csqrt)
    shift = np.zeros((ops.nT, ops.nT))
    return _lmi_min(ops, cw, safety, tol, check_feasibility, "hinf", coef, offset, shift)


def synthesize_regret(
    ops: LiftedOperators,
    cw: CostWeights,
    bench: NoncausalResponse,
    safety: SafetySpec | None = None,
    tol: conic.Tolerances = conic.DEFAULT_TOL,
    check_feasibility: bool = True,
) -> SynthesisResult:
    """Minimise the worst-case regret ``lambda_max(Phi'C Phi - Psi'C Psi)``.

    Same LMI as the imitation problem with the constant ``Psi'C Psi`` added to
    the ``lam I`` block.
    """
    shift = bench.stacked.T @ cw.C @ bench.stacked
    coef, offset = ops.response_map(cw.Csqrt)
    return _lmi_min(ops, cw, safety, tol, check_feasibility, "regret", coef, offset, (shift + shift.T) / 2)


def synthesize_h2(
    ops: LiftedOperators,
    cw: CostWeights,
    safety: SafetySpec | None = None,
    tol: conic.Tolerances = conic.DEFAULT_TOL,
    check_feasibility: bool = True,
) -> SynthesisResult:
    """Minimise the expected cost under unit-covariance ``w``: ``||C^{1/2} Phi||_F^2``."""
    Phi_u, extract = causal_variables(ops)
    cons, robust = _safety_block(ops, safety, Phi_u, tol, check_feasibility, "h2")
    coef, offset = ops.response_map(cw.Csqrt)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(coef @ Phi_u + offset)), cons)
    stats = conic.solve(prob, tol, "h2 program")
    return _finish(ops, safety, extract, robust, "h2", prob.value, stats)


def h2_unconstrained(ops: LiftedOperators, cw: CostWeights, target: NoncausalResponse | None = None):
    """Closed-form causal least squares ``min ||C^{1/2}(Phi - Psi)||_F``.

    With ``target=None`` this is the unconstrained H2 controller. Columns
    decouple: column ``j`` of ``Phi_u`` may be nonzero from block row ``j // n``.
    """
    n, m, T = ops.n, ops.m, ops.T
    Psi_x = np.zeros((ops.nT, ops.nT)) if target is None else target.Psi_x
    Psi_u = np.zeros((ops.mT, ops.nT)) if target is None else target.Psi_u
    Phi_u = np.zeros((ops.mT, ops.nT))
    for j in range(ops.nT):
        k = j // n
        if k >= T:
            continue
        S = slice(k * m, ops.mT)
        Fs = ops.F[:, S]
        P = cw.R[S, S] + Fs.T @ cw.Q @ Fs
        rhs = Fs.T @ cw.Q @ (Psi_x[:, j] - ops.G[:, j]) + cw.R[S, :] @ Psi_u[:, j]
        Phi_u[S, j] = np.linalg.solve(P, rhs)
    return CausalResponse(ops.F @ Phi_u + ops.G, Phi_u, T)


def reconstruct_feedback(resp: CausalResponse) -> np.ndarray:
    """``K = Phi_u Phi_x^{-1}``; ``Phi_x`` is unit lower triangular."""
    K = sla.solve_triangular(resp.Phi_x.T, resp.Phi_u.T, lower=False, unit_diagonal=True).T
    T = resp.T
    K[~lower_block_mask(T, K.shape[0] // T, K.shape[1] // T)] = 0.0
    return K


def certify_safety(resp: CausalResponse, safety: SafetySpec) -> np.ndarray:
    """Per-row worst-case slack ``h_i - max_{w in W} (H Phi)_i w``."""
    return slacks(safety, resp.Phi_x, resp.Phi_u)
