"""Stacked finite-horizon representation of an LTV plant.

The plant is ``x_{t+1} = A_t x_t + B_t u_t + w_t`` over ``t = 0..T-1``. The
trajectory is stacked as ``x = (x_0..x_{T-1})``, ``u = (u_0..u_{T-1})`` and the
exogenous signal as ``w = (x_0, w_0..w_{T-2})`` so that ``x = F u + G w``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ftc.errors import DimensionError

EIG_FLOOR = 0.0


def block(M: np.ndarray, i: int, j: int, rows: int, cols: int) -> np.ndarray:
    return M[i * rows:(i + 1) * rows, j * cols:(j + 1) * cols]


def lower_block_mask(T: int, rows: int, cols: int, band: int = 0) -> np.ndarray:
    """Boolean mask allowing block ``(t, k)`` iff ``k <= t + band``."""
    t = np.arange(T)
    allowed = t[None, :] <= t[:, None] + band
    return np.kron(allowed, np.ones((rows, cols), dtype=bool))


@dataclass(frozen=True)
class LtvSystem:
    n: int
    m: int
    T: int
    A_seq: tuple = ()
    B_seq: tuple = ()

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.T < 1:
            raise DimensionError(f"need n, m, T >= 1, got n={self.n} m={self.m} T={self.T}")
        A_seq = tuple(np.array(A, dtype=float, ndmin=2) for A in self.A_seq)
        B_seq = tuple(np.array(B, dtype=float, ndmin=2) for B in self.B_seq)
        if len(A_seq) != self.T - 1 or len(B_seq) != self.T - 1:
            raise DimensionError(
                f"expected {self.T - 1} A and B matrices, got {len(A_seq)} and {len(B_seq)}"
            )
        for t, (A, B) in enumerate(zip(A_seq, B_seq)):
            if A.shape != (self.n, self.n):
                raise DimensionError(f"A[{t}] has shape {A.shape}, expected {(self.n, self.n)}")
            if B.shape != (self.n, self.m):
                raise DimensionError(f"B[{t}] has shape {B.shape}, expected {(self.n, self.m)}")
            A.setflags(write=False)
            B.setflags(write=False)
        object.__setattr__(self, "A_seq", A_seq)
        object.__setattr__(self, "B_seq", B_seq)

    @classmethod
    def time_invariant(cls, A, B, T: int) -> "LtvSystem":
        A = np.array(A, dtype=float, ndmin=2)
        B = np.array(B, dtype=float, ndmin=2)
        return cls(A.shape[0], B.shape[1], T, (A,) * (T - 1), (B,) * (T - 1))

    @classmethod
    def from_dict(cls, d: dict) -> "LtvSystem":
        n, m, T = int(d["n"]), int(d["m"]), int(d["T"])
        if d.get("time_invariant", False):
            A = np.reshape(np.asarray(d["A"], dtype=float), (n, n))
            B = np.reshape(np.asarray(d["B"], dtype=float), (n, m))
            return cls(n, m, T, (A,) * (T - 1), (B,) * (T - 1))
        A_seq = [np.reshape(np.asarray(A, dtype=float), (n, n)) for A in d["A"]]
        B_seq = [np.reshape(np.asarray(B, dtype=float), (n, m)) for B in d["B"]]
        return cls(n, m, T, tuple(A_seq), tuple(B_seq))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "T": self.T,
            "time_invariant": False,
            "A": [A.tolist() for A in self.A_seq],
            "B": [B.tolist() for B in self.B_seq],
        }


def load_system(path) -> LtvSystem:
    return LtvSystem.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LiftedOperators:
    n: int
    m: int
    T: int
    Z: np.ndarray
    Ablk: np.ndarray
    Bblk: np.ndarray
    F: np.ndarray
    G: np.ndarray

    @property
    def nT(self) -> int:
        return self.n * self.T

    @property
    def mT(self) -> int:
        return self.m * self.T

    def response_map(self, L: np.ndarray, Psi: np.ndarray | None = None):
        """``(L [F; I], L ([G; 0] - Psi))``.

        For an achievable pair ``Phi_x = F Phi_u + G`` this gives
        ``L ([Phi_x; Phi_u] - Psi) = coef @ Phi_u + offset`` with both constants
        folded ahead of time.
        """
        nT = self.nT
        coef = L[:, :nT] @ self.F + L[:, nT:]
        offset = L[:, :nT] @ self.G
        if Psi is not None:
            offset = offset - L @ Psi
        return coef, offset

    def achievability_residual(self, Phi_x, Phi_u) -> float:
        """Max-abs residual of ``(I - Z A) Phi_x - Z B Phi_u - I``."""
        I = np.eye(self.nT)
        lhs = (I - self.Z @ self.Ablk) @ Phi_x - self.Z @ self.Bblk @ Phi_u
        return float(np.max(np.abs(lhs - I)))


def _block_diag_padded(mats, rows: int, cols: int, T: int) -> np.ndarray:
    out = np.zeros((rows * T, cols * T))
    for t, M in enumerate(mats):
        out[t * rows:(t + 1) * rows, t * cols:(t + 1) * cols] = M
    return out


def build_lifted(sys: LtvSystem) -> LiftedOperators:
    """Build ``Z``, ``blkdiag(A_t, 0)``, ``blkdiag(B_t, 0)``, ``F`` and ``G``.

    ``G = (I - Z A)^{-1}`` is filled block by block using ``G[t, k] =
    A_{t-1} G[t-1, k]`` (unit lower block-triangular inverse), and ``F = G Z B``
    reduces to ``F[:, k] = G[:, k+1] B_k``.
    """
    n, m, T = sys.n, sys.m, sys.T
    nT, mT = n * T, m * T
    Z = np.kron(np.eye(T, k=-1), np.eye(n))
    Ablk = _block_diag_padded(sys.A_seq, n, n, T)
    Bblk = _block_diag_padded(sys.B_seq, n, m, T)

    G = np.zeros((nT, nT))
    for k in range(T):
        G[k * n:(k + 1) * n, k * n:(k + 1) * n] = np.eye(n)
        for t in range(k + 1, T):
            G[t * n:(t + 1) * n, k * n:(k + 1) * n] = (
                sys.A_seq[t - 1] @ G[(t - 1) * n:t * n, k * n:(k + 1) * n]
            )
    F = np.zeros((nT, mT))
    for k in range(T - 1):
        F[:, k * m:(k + 1) * m] = G[:, (k + 1) * n:(k + 2) * n] @ sys.B_seq[k]

    for M in (Z, Ablk, Bblk, F, G):
        M.setflags(write=False)
    return LiftedOperators(n, m, T, Z, Ablk, Bblk, F, G)


def check_stacked(v, dim: int, T: int, name: str = "w") -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != dim * T:
        raise DimensionError(f"{name} has length {v.size}, expected {dim * T}")
    return v


def rollout(sys: LtvSystem, w, u) -> np.ndarray:
    """Step the plant recursion and return the stacked state trajectory."""
    n, m, T = sys.n, sys.m, sys.T
    w = check_stacked(w, n, T, "w").reshape(T, n)
    u = check_stacked(u, m, T, "u").reshape(T, m)
    x = np.zeros((T, n))
    x[0] = w[0]
    for t in range(T - 1):
        x[t + 1] = sys.A_seq[t] @ x[t] + sys.B_seq[t] @ u[t] + w[t + 1]
    return x.reshape(-1)


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((M + M.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def project_psd(M: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    vals, vecs = np.linalg.eigh((M + M.T) / 2)
    return (vecs * np.clip(vals, floor, None)) @ vecs.T


@dataclass(frozen=True)
class CostWeights:
    """Stacked weights ``Q`` (nT x nT, PSD) and ``R`` (mT x mT, PD).

    ``Q`` is projected onto the PSD cone on construction so round-off in user
    data cannot make it indefinite.
    """

    Q: np.ndarray
    R: np.ndarray
    C: np.ndarray = field(init=False, repr=False)
    Csqrt: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float, ndmin=2)
        R = np.array(self.R, dtype=float, ndmin=2)
        if Q.shape[0] != Q.shape[1] or R.shape[0] != R.shape[1]:
            raise DimensionError("Q and R must be square")
        if not np.allclose(Q, Q.T, atol=1e-10) or not np.allclose(R, R.T, atol=1e-10):
            raise ValueError("Q and R must be symmetric")
        Q = project_psd(Q)
        R = (R + R.T) / 2
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        nq, nr = Q.shape[0], R.shape[0]
        C = np.zeros((nq + nr, nq + nr))
        C[:nq, :nq] = Q
        C[nq:, nq:] = R
        Csqrt = np.zeros_like(C)
        Csqrt[:nq, :nq] = psd_sqrt(Q)
        Csqrt[nq:, nq:] = psd_sqrt(R)
        for M in (Q, R, C, Csqrt):
            M.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Csqrt", Csqrt)

    @classmethod
    def identity(cls, n: int, m: int, T: int) -> "CostWeights":
        return cls(np.eye(n * T), np.eye(m * T))

    @classmethod
    def from_dict(cls, d: dict, n: int, m: int, T: int) -> "CostWeights":
        """Accepts per-step ``Q_diag``/``R_diag`` or full stacked ``Q``/``R``."""
        if "Q" in d:
            Q = np.asarray(d["Q"], dtype=float)
        else:
            Q = np.kron(np.eye(T), np.diag(np.broadcast_to(np.asarray(d.get("Q_diag", 1.0), float), (n,))))
        if "R" in d:
            R = np.asarray(d["R"], dtype=float)
        else:
            R = np.kron(np.eye(T), np.diag(np.broadcast_to(np.asarray(d.get("R_diag", 1.0), float), (m,))))
        if Q.shape != (n * T, n * T) or R.shape != (m * T, m * T):
            raise DimensionError(f"Q {Q.shape} / R {R.shape} do not match n={n} m={m} T={T}")
        return cls(Q, R)

    def quad(self, x, u) -> float:
        return float(x @ self.Q @ x + u @ self.R @ u)
