"""Polytopic safe sets and their robust (all ``w`` in ``W``) enforcement."""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from ftc.errors import DimensionError, InfeasibleError


@dataclass(frozen=True)
class SafetySpec:
    """Safe set ``H_x x + H_u u <= h`` required for all ``H_w w <= h_w``."""

    H_x: np.ndarray
    H_u: np.ndarray
    h: np.ndarray
    H_w: np.ndarray
    h_w: np.ndarray

    def __post_init__(self):
        H_x = np.array(self.H_x, dtype=float, ndmin=2)
        H_u = np.array(self.H_u, dtype=float, ndmin=2)
        h = np.array(self.h, dtype=float).reshape(-1)
        H_w = np.array(self.H_w, dtype=float, ndmin=2)
        h_w = np.array(self.h_w, dtype=float).reshape(-1)
        if not (H_x.shape[0] == H_u.shape[0] == h.size):
            raise DimensionError("H_x, H_u and h must have the same number of rows")
        if H_w.shape[0] != h_w.size or H_w.shape[1] != H_x.shape[1]:
            raise DimensionError("H_w must be r x nT with h_w of length r")
        for M in (H_x, H_u, h, H_w, h_w):
            M.setflags(write=False)
        object.__setattr__(self, "H_x", H_x)
        object.__setattr__(self, "H_u", H_u)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "H_w", H_w)
        object.__setattr__(self, "h_w", h_w)
        lo, hi = self.w_bounds()
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
            raise ValueError("disturbance polytope is unbounded")
        if np.any(lo > hi + 1e-12):
            raise ValueError("disturbance polytope is empty")

    @property
    def H(self) -> np.ndarray:
        return np.hstack([self.H_x, self.H_u])

    @property
    def q(self) -> int:
        return self.h.size

    @property
    def r(self) -> int:
        return self.h_w.size

    @classmethod
    def box(cls, n, m, T, x_max=np.inf, u_max=np.inf, w_max=1.0) -> "SafetySpec":
        """``|x_t| <= x_max``, ``|u_t| <= u_max``, ``|w| <= w_max`` entrywise.

        Infinite bounds drop the corresponding rows.
        """
        nT, mT = n * T, m * T
        Hx_rows, Hu_rows, h = [], [], []
        if np.isfinite(x_max):
            Hx_rows += [np.eye(nT), -np.eye(nT)]
            Hu_rows += [np.zeros((2 * nT, mT))]
            h += [np.full(2 * nT, float(x_max))]
        if np.isfinite(u_max):
            Hx_rows += [np.zeros((2 * mT, nT))]
            Hu_rows += [np.eye(mT), -np.eye(mT)]
            h += [np.full(2 * mT, float(u_max))]
        if h:
            H_x = np.vstack(Hx_rows)
            H_u = np.vstack(Hu_rows)
            h = np.concatenate(h)
        else:
            H_x, H_u, h = np.zeros((0, nT)), np.zeros((0, mT)), np.zeros(0)
        H_w = np.vstack([np.eye(nT), -np.eye(nT)])
        h_w = np.full(2 * nT, float(w_max))
        return cls(H_x, H_u, h, H_w, h_w)

    @classmethod
    def from_dict(cls, d: dict, n: int, m: int, T: int) -> "SafetySpec":
        if d.get("kind", "box") == "box":
            return cls.box(
                n, m, T,
                x_max=float(d.get("x_max", np.inf)),
                u_max=float(d.get("u_max", np.inf)),
                w_max=float(d.get("w_max", 1.0)),
            )
        return cls(d["H_x"], d["H_u"], d["h"], d["H_w"], d["h_w"])

    def box_bounds(self):
        """``(lo, hi)`` if ``W`` is an axis-aligned box, else ``None``."""
        H_w = self.H_w
        nz = H_w != 0
        if not np.all(nz.sum(axis=1) == 1):
            return None
        nT = H_w.shape[1]
        lo, hi = np.full(nT, -np.inf), np.full(nT, np.inf)
        for row, b in zip(H_w, self.h_w):
            j = int(np.flatnonzero(row)[0])
            if row[j] > 0:
                hi[j] = min(hi[j], b / row[j])
            else:
                lo[j] = max(lo[j], b / row[j])
        return lo, hi

    def w_bounds(self):
        """Coordinate-wise extent of ``W``; an LP per coordinate unless ``W`` is a box."""
        bb = self.box_bounds()
        if bb is not None:
            return bb
        nT = self.H_w.shape[1]
        lo, hi = np.empty(nT), np.empty(nT)
        for j in range(nT):
            for sign, out in ((1.0, lo), (-1.0, hi)):
                c = np.zeros(nT)
                c[j] = sign
                res = linprog(c, A_ub=self.H_w, b_ub=self.h_w, bounds=(None, None), method="highs")
                if res.status == 2:
                    raise ValueError("disturbance polytope is empty")
                out[j] = -sign * np.inf if res.status == 3 else sign * res.fun
        return lo, hi

    def tightened(self, factor: float) -> "SafetySpec":
        return SafetySpec(self.H_x, self.H_u, factor * self.h, self.H_w, self.h_w)


class RobustSafety:
    """Dual (LP-duality) form of ``H [Phi_x; Phi_u] w <= h`` for all ``w`` in ``W``.

    Row ``i`` holds iff some ``y_i >= 0`` has ``H_w' y_i = (H Phi)_i'`` and
    ``h_w' y_i <= h_i``; stacking the ``y_i`` gives ``Y``. ``Phi_x = F Phi_u + G``
    is implied. ``mask`` marks the free entries of ``Phi_u``.

    For a box ``W`` only the multipliers of structurally nonzero entries of
    ``H Phi`` are kept: entry ``(i, j)`` gets one multiplier on the upper and
    one on the lower face of coordinate ``j``. The lower one is eliminated as
    ``N = P - (H Phi)_ij >= 0``, which halves the variable count. The full
    ``Y`` is rebuilt from them by :meth:`Y_value`.

    ``rows`` (box ``W`` only) restricts the dual form to a subset of safety
    rows; the others get their certificate in closed form from the response
    passed to :meth:`Y_value`, and the caller must check them.
    """

    def __init__(self, safety: SafetySpec, ops, Phi_u, mask=None, slack=None, rows=None):
        self.safety = safety
        coef, offset = ops.response_map(safety.H)
        M = coef @ Phi_u + offset
        rhs = safety.h if slack is None else safety.h + slack
        self.box = safety.box_bounds()
        if self.box is None:
            self.Y = cp.Variable((safety.r, safety.q), nonneg=True, name="Y")
            self.constraints = [self.Y.T @ safety.h_w <= rhs, M == self.Y.T @ safety.H_w]
            return
        lo, hi = self.box
        if mask is None:
            mask = np.ones((ops.mT, ops.nT), dtype=bool)
        support = ((np.abs(coef) > 0).astype(float) @ mask.astype(float) > 0) | (offset != 0)
        if rows is not None:
            keep = np.zeros(safety.q, dtype=bool)
            keep[np.asarray(rows, dtype=int)] = True
            support &= keep[:, None]
        self.subset = None if rows is None else np.flatnonzero(keep)
        rows, cols = np.nonzero(support)
        self.rows, self.cols, self.shape = rows, cols, support.shape
        k = rows.size
        if k == 0:
            self.P = None
            self.constraints = []
            return
        self.P = cp.Variable(k, nonneg=True, name="Y_upper")
        self.M = M[rows, cols]
        self._lo = lo[cols]
        S = sp.csr_matrix((np.ones(k), (rows, np.arange(k))), shape=(safety.q, k))
        self.constraints = [
            self.M <= self.P,
            S @ (cp.multiply(hi[cols] - lo[cols], self.P) + cp.multiply(lo[cols], self.M)) <= rhs,
        ]

    def multiplier_matrix(self) -> np.ndarray:
        """Solver multipliers of the equality ``H Phi = Y' H_w`` as a q x nT matrix."""
        if self.box is None:
            return self.constraints[1].dual_value
        D = np.zeros(self.shape)
        if self.constraints:
            # H Phi enters through P - N >= 0 and through the lower faces of the budget
            budget = self.constraints[1].dual_value
            D[self.rows, self.cols] = self.constraints[0].dual_value + self._lo * budget[self.rows]
        return D

    def Y_value(self, stacked: np.ndarray | None = None) -> np.ndarray:
        """Full ``Y``; rows outside the dual subset need the response ``stacked``."""
        if self.box is None:
            return np.maximum(self.Y.value, 0.0)
        H_w, h_w = self.safety.H_w, self.safety.h_w
        nT = H_w.shape[1]
        # tightest face of W per coordinate and direction
        upper, lower = np.full(nT, -1), np.full(nT, -1)
        for rho, row in enumerate(H_w):
            j = int(np.flatnonzero(row)[0])
            face = upper if row[j] > 0 else lower
            if face[j] < 0 or h_w[rho] / abs(row[j]) < h_w[face[j]] / abs(H_w[face[j], j]):
                face[j] = rho
        Y = np.zeros((self.safety.r, self.safety.q))
        if self.P is not None:
            P = np.maximum(self.P.value, 0.0)
            N = np.maximum(self.P.value - self.M.value, 0.0)
            np.add.at(Y, (upper[self.cols], self.rows), P / np.abs(H_w[upper[self.cols], self.cols]))
            np.add.at(Y, (lower[self.cols], self.rows), N / np.abs(H_w[lower[self.cols], self.cols]))
        if self.subset is not None:
            others = np.setdiff1d(np.arange(self.safety.q), self.subset)
            if others.size:
                if stacked is None:
                    raise ValueError("rows outside the dual subset need the response")
                Mo = self.safety.H[others] @ stacked
                # optimal row-LP duals of a box: the positive part on the upper face
                ju = np.broadcast_to(upper, Mo.shape)
                jl = np.broadcast_to(lower, Mo.shape)
                cols = np.broadcast_to(np.arange(nT), Mo.shape)
                rr = np.broadcast_to(others[:, None], Mo.shape)
                np.add.at(Y, (ju, rr), np.maximum(Mo, 0) / np.abs(H_w[ju, cols]))
                np.add.at(Y, (jl, rr), np.maximum(-Mo, 0) / np.abs(H_w[jl, cols]))
        return Y


def row_maxima(safety: SafetySpec, Phi_x: np.ndarray, Phi_u: np.ndarray) -> np.ndarray:
    """``max_{w in W} (H [Phi_x; Phi_u])_i w`` for every row ``i``.

    Closed form for a box ``W``; one LP per row otherwise.
    """
    M = safety.H_x @ Phi_x + safety.H_u @ Phi_u
    bb = safety.box_bounds()
    if bb is not None:
        lo, hi = bb
        return np.sum(np.maximum(M * lo, M * hi), axis=1)
    out = np.empty(M.shape[0])
    for i, row in enumerate(M):
        res = linprog(-row, A_ub=safety.H_w, b_ub=safety.h_w, bounds=(None, None), method="highs")
        if res.status == 3:
            raise ValueError("disturbance polytope is unbounded")
        out[i] = -res.fun
    return out


def slacks(safety: SafetySpec, Phi_x, Phi_u) -> np.ndarray:
    return safety.h - row_maxima(safety, Phi_x, Phi_u)


def check_feasible(safety: SafetySpec, ops, Phi_u, mask, tol, what, threshold=1e-8, floor=-1.0):
    """Minimise a uniform relaxation ``s >= floor`` of the bounds; raise if ``s* > threshold``.

    ``Phi_u`` is the caller's (structured) decision expression. The floor keeps
    the LP bounded and well scaled; only the sign of ``s*`` matters. An
    inaccurate solver status is accepted when the returned point re-checks as
    feasible through the closed-form slacks.
    """
    from ftc import conic

    s = cp.Variable(name="s")
    robust = RobustSafety(safety, ops, Phi_u, mask, slack=s)
    prob = cp.Problem(cp.Minimize(s), robust.constraints + [s >= floor])
    stats = conic.solve(prob, tol, f"{what} feasibility LP", accept_inaccurate=True)
    value = float(s.value)
    if stats["status"] != cp.OPTIMAL and value <= threshold:
        Pu = np.asarray(Phi_u.value)
        worst = float(np.max(row_maxima(safety, ops.F @ Pu + ops.G, Pu) - safety.h))
        stats["recheck"] = worst
        value = max(value, worst)
    if value > threshold:
        raise InfeasibleError(
            f"{what}: safety constraints infeasible; bounds must be relaxed by at least {value:.3g}",
            certificate={"min_uniform_relaxation": value, **stats},
        )
    return value
