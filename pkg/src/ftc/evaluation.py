"""Closed-loop simulation, disturbance profiles and competitive metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ftc.errors import DimensionError
from ftc.lifted import CostWeights, LtvSystem, check_stacked

PROFILES = (
    "gauss01",
    "uniform",
    "constant_one",
    "sin",
    "sawtooth",
    "step",
    "stairs",
    "worst",
    "vertex_near_active",
)
STOCHASTIC = ("gauss01", "uniform")


def maps(resp):
    """``(X, U)`` state and input maps of a causal or noncausal response."""
    if hasattr(resp, "Phi_x"):
        return resp.Phi_x, resp.Phi_u
    return resp.Psi_x, resp.Psi_u


@dataclass(frozen=True)
class SimulationTrace:
    x: np.ndarray  # (T, n)
    u: np.ndarray  # (T, m)
    w: np.ndarray  # (nT,)
    stage_costs: np.ndarray  # (T,), diagonal blocks of Q and R
    cost: float  # full quadratic form, equals stage_costs.sum() for block-diagonal weights


def simulate(resp, w, cw: CostWeights, T: int) -> SimulationTrace:
    X, U = maps(resp)
    nT, mT = X.shape[0], U.shape[0]
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size != nT:
        raise DimensionError(f"w has length {w.size}, expected {nT}")
    xs, us = X @ w, U @ w
    n, m = nT // T, mT // T
    x, u = xs.reshape(T, n), us.reshape(T, m)
    stage = np.array([
        x[t] @ cw.Q[t * n:(t + 1) * n, t * n:(t + 1) * n] @ x[t]
        + u[t] @ cw.R[t * m:(t + 1) * m, t * m:(t + 1) * m] @ u[t]
        for t in range(T)
    ])
    return SimulationTrace(x, u, w, stage, cw.quad(xs, us))


def closed_loop_rollout(sys: LtvSystem, K: np.ndarray, w) -> tuple[np.ndarray, np.ndarray]:
    """Step the plant with ``u_t = sum_{k<=t} K[t, k] x_k``; returns stacked ``(x, u)``."""
    n, m, T = sys.n, sys.m, sys.T
    w = check_stacked(w, n, T).reshape(T, n)
    x = np.zeros((T, n))
    u = np.zeros((T, m))
    x[0] = w[0]
    for t in range(T):
        u[t] = K[t * m:(t + 1) * m, :(t + 1) * n] @ x[:t + 1].reshape(-1)
        if t < T - 1:
            x[t + 1] = sys.A_seq[t] @ x[t] + sys.B_seq[t] @ u[t] + w[t + 1]
    return x.reshape(-1), u.reshape(-1)


def lqr_cost(trace: SimulationTrace, cw: CostWeights) -> float:
    return cw.quad(trace.x.reshape(-1), trace.u.reshape(-1))


def imitation_loss(trace: SimulationTrace, bench, cw: CostWeights) -> float:
    X, U = maps(bench)
    dx = trace.x.reshape(-1) - X @ trace.w
    du = trace.u.reshape(-1) - U @ trace.w
    return max(cw.quad(dx, du), 0.0)


def regret(trace: SimulationTrace, bench, cw: CostWeights) -> float:
    """``J(pi, w) - J(psi, w)``; may be negative for constrained benchmarks."""
    X, U = maps(bench)
    return lqr_cost(trace, cw) - cw.quad(X @ trace.w, U @ trace.w)


def quadratic_form(resp, bench, cw: CostWeights, metric: str) -> np.ndarray:
    """Matrix ``M`` with ``metric(w) = w' M w``."""
    Phi = np.vstack(maps(resp))
    if metric == "cost":
        M = Phi.T @ cw.C @ Phi
    elif metric == "imitation":
        D = Phi - np.vstack(maps(bench))
        M = D.T @ cw.C @ D
    elif metric == "regret":
        Psi = np.vstack(maps(bench))
        M = Phi.T @ cw.C @ Phi - Psi.T @ cw.C @ Psi
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return (M + M.T) / 2


def worst_case_disturbance(resp, bench, cw: CostWeights, metric: str = "regret"):
    """Unit-norm maximiser of the metric over ``|w|_2 <= 1`` and the attained value."""
    vals, vecs = np.linalg.eigh(quadratic_form(resp, bench, cw, metric))
    w = vecs[:, -1]
    # fix the sign so results are reproducible across LAPACK builds
    if w[np.argmax(np.abs(w))] < 0:
        w = -w
    return w, float(vals[-1])


@dataclass(frozen=True)
class DisturbanceProfile:
    tag: str
    seed: int = 0
    scale: float = 1.0
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.tag not in PROFILES:
            raise ValueError(f"unknown disturbance profile {self.tag!r}")

    @property
    def label(self) -> str:
        if self.tag == "uniform":
            return f"uniform[{self.lo:g},{self.hi:g}]"
        return self.tag


def realization_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate(profile: DisturbanceProfile, n: int, T: int, index: int = 0) -> np.ndarray:
    """Stacked ``w`` of length ``nT`` for time-indexed profiles.

    ``index`` selects the realization for stochastic profiles. ``worst`` and
    ``vertex_near_active`` depend on a controller or benchmark and are produced
    by :func:`worst_case_disturbance` and :func:`sample_near_active_vertices`.
    """
    t = np.repeat(np.arange(T, dtype=float), n)
    tag = profile.tag
    if tag == "gauss01":
        w = realization_rng(profile.seed, index).standard_normal(n * T)
    elif tag == "uniform":
        w = realization_rng(profile.seed, index).uniform(profile.lo, profile.hi, n * T)
    elif tag == "constant_one":
        w = np.ones(n * T)
    elif tag == "sin":
        w = np.sin(2 * np.pi * t / T)
    elif tag == "sawtooth":
        w = 2 * np.mod(t / 5, 1.0) - 1
    elif tag == "step":
        w = (t >= T / 2).astype(float)
    elif tag == "stairs":
        w = np.floor(t / 5) / max(1.0, np.floor((T - 1) / 5))
    else:
        raise ValueError(f"profile {tag!r} is controller dependent; see worst_case_disturbance")
    return profile.scale * w


def activation_ratios(bench, safety, W: np.ndarray) -> np.ndarray:
    """``max_i (H Psi w)_i / h_i`` over rows with ``h_i > 0``, for each row of ``W``."""
    X, U = maps(bench)
    HPsi = safety.H_x @ X + safety.H_u @ U
    rows = safety.h > 0
    vals = (W @ HPsi[rows].T) / safety.h[rows]
    return vals.max(axis=1)


def sample_near_active_vertices(
    bench,
    safety,
    N: int,
    threshold: float = 0.95,
    seed: int = 0,
    max_draws: int = 1_000_000,
    batch: int = 20_000,
) -> np.ndarray:
    """Rejection-sample ``N`` vertices of a box ``W`` that nearly activate the safe set.

    Vertices are drawn uniformly; one is accepted when its benchmark trajectory
    reaches at least ``threshold`` of some constraint bound, so the result is a
    uniform sample of the near-active vertices. Only rows whose largest value
    over ``W`` reaches ``threshold`` are evaluated; the others can never accept.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    bb = safety.box_bounds()
    if bb is None:
        raise ValueError("vertex sampling needs a box disturbance set")
    lo, hi = bb
    X, U = maps(bench)
    pos = safety.h > 0
    A = (safety.H_x @ X + safety.H_u @ U)[pos] / safety.h[pos][:, None]
    A = A[np.maximum(A * hi, A * lo).sum(axis=1) >= threshold]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF7C]))
    accepted, drawn = [], 0
    n_acc = 0
    while n_acc < N:
        if drawn >= max_draws or A.shape[0] == 0:
            raise RuntimeError(
                f"only {n_acc} of {N} vertices reached activation {threshold} after {drawn} draws; "
                "lower the threshold"
            )
        k = min(batch, max_draws - drawn)
        signs = rng.integers(0, 2, size=(k, lo.size)).astype(bool)
        W = np.where(signs, hi, lo)
        drawn += k
        keep = W[(W @ A.T).max(axis=1) >= threshold]
        accepted.append(keep)
        n_acc += keep.shape[0]
    return np.vstack(accepted)[:N]


@dataclass(frozen=True)
class MetricSeries:
    """Cumulative tracking error and cost of a policy against a reference policy.

    ``E``/``J`` are per-realization cumulative series (N x T) for the policy and
    ``E_ref``/``J_ref`` for the reference. ``dE``/``dJ`` hold the mean relative
    difference; ``dE_std``, ``dE_min``, ``dE_max`` (and the J analogues) describe
    the per-realization differences normalized by the reference averages.
    """

    E: np.ndarray
    J: np.ndarray
    E_ref: np.ndarray
    J_ref: np.ndarray
    dE: np.ndarray
    dJ: np.ndarray
    dE_std: np.ndarray
    dJ_std: np.ndarray
    dE_min: np.ndarray
    dE_max: np.ndarray
    dJ_min: np.ndarray
    dJ_max: np.ndarray

    @property
    def E_bar(self):
        return self.E.mean(axis=0)

    @property
    def J_bar(self):
        return self.J.mean(axis=0)


def cumulative_series(resp, bench, W: np.ndarray, n: int, m: int, weights: CostWeights | None = None):
    """Per-realization cumulative tracking error ``E_t`` and cost ``J_t`` (each N x T).

    Identity weights unless ``weights`` is given (block-diagonal assumed).
    """
    X, U = maps(resp)
    Xb, Ub = maps(bench)
    T = X.shape[0] // n
    xs, us = W @ X.T, W @ U.T
    dx, du = xs - W @ Xb.T, us - W @ Ub.T
    if weights is not None:
        Qh, Rh = _sqrt_blocks(weights)
        xs, us, dx, du = xs @ Qh.T, us @ Rh.T, dx @ Qh.T, du @ Rh.T
    N = W.shape[0]
    stage_e = (dx ** 2).reshape(N, T, n).sum(-1) + (du ** 2).reshape(N, T, m).sum(-1)
    stage_j = (xs ** 2).reshape(N, T, n).sum(-1) + (us ** 2).reshape(N, T, m).sum(-1)
    return np.cumsum(stage_e, axis=1), np.cumsum(stage_j, axis=1)


def _sqrt_blocks(cw: CostWeights):
    nq = cw.Q.shape[0]
    return cw.Csqrt[:nq, :nq], cw.Csqrt[nq:, nq:]


def aggregate_metrics(E, J, E_ref, J_ref) -> MetricSeries:
    """Relative differences of a policy's averaged series against a reference's."""
    if E.shape[0] == 0:
        raise ValueError("no realizations to aggregate")
    if E.shape != E_ref.shape or J.shape != J_ref.shape:
        raise DimensionError("policy and reference series must have equal shape")
    Eb, Jb = E_ref.mean(axis=0), J_ref.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rE = np.where(Eb > 0, (E - E_ref) / Eb, np.nan)
        rJ = np.where(Jb > 0, (J - J_ref) / Jb, np.nan)
    return MetricSeries(
        E, J, E_ref, J_ref,
        dE=rE.mean(axis=0), dJ=rJ.mean(axis=0),
        dE_std=rE.std(axis=0), dJ_std=rJ.std(axis=0),
        dE_min=rE.min(axis=0), dE_max=rE.max(axis=0),
        dJ_min=rJ.min(axis=0), dJ_max=rJ.max(axis=0),
    )


def write_series_csv(path, mean, std, lo, hi) -> None:
    with open(Path(path), "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["t", "mean", "std", "min", "max"])
        for t in range(len(mean)):
            wr.writerow([t, repr(float(mean[t])), repr(float(std[t])), repr(float(lo[t])), repr(float(hi[t]))])


def average_costs(policies: dict, W: np.ndarray, cw: CostWeights) -> dict:
    """Mean quadratic cost of each policy over the rows of ``W``."""
    out = {}
    for name, resp in policies.items():
        Phi = np.vstack(maps(resp))
        Z = W @ (cw.Csqrt @ Phi).T
        out[name] = float(np.mean(np.sum(Z ** 2, axis=1)))
    return out


def write_table_csv(path, rows) -> None:
    """``rows``: iterable of ``(profile, policy, avg_cost, pct_vs_best)``."""
    with open(Path(path), "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["profile", "policy", "avg_cost", "pct_vs_best"])
        for profile, policy, cost, pct in rows:
            wr.writerow([profile, policy, repr(float(cost)), repr(float(pct))])
