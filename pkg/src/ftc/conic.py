"""Boundary to the conic solver.

Every program in the package is a mix of zero, nonnegative, second-order and
PSD cones. They are modelled with cvxpy and handed to interior-point solvers (Clarabel for
LPs and QPs, CVXOPT for SDPs) with the tolerances held in :class:`Tolerances`.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from cvxpy.reductions.solvers.conic_solvers.cvxopt_conif import CVXOPT

from ftc.errors import SolverError

log = logging.getLogger(__name__)

OK_STATUSES = (cp.OPTIMAL,)


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-8
    gap_abs: float = 1e-8
    gap_rel: float = 1e-8
    max_iter: int = 300
    # LPs and QPs
    solver: str = "CLARABEL"
    # programs with a PSD cone. CVXOPT reduces the KKT system to a Schur
    # complement over the decision variables; Clarabel keeps a dense
    # (d(d+1)/2)^2 block per PSD cone and runs out of memory for d >= 150.
    sdp_solver: str = "CVXOPT"
    sdp_fallback: str | None = "CLARABEL"
    direct_solve_method: str = "faer"
    # acceptance threshold for an iterate that stopped short of ``gap_rel``
    accept: float = 1e-6

    def solver_kwargs(self, solver: str | None = None) -> dict:
        solver = solver or self.solver
        if solver == "CLARABEL":
            return dict(
                direct_solve_method=self.direct_solve_method,
                tol_feas=self.feas,
                tol_gap_abs=self.gap_abs,
                tol_gap_rel=self.gap_rel,
                max_iter=self.max_iter,
            )
        if solver == "CVXOPT":
            return dict(
                feastol=self.feas,
                abstol=self.gap_abs,
                reltol=self.gap_rel,
                max_iters=self.max_iter,
                kktsolver=structured_kkt,
            )
        if solver == "SCS":
            return dict(eps_abs=self.feas, eps_rel=self.gap_rel, max_iters=100_000)
        return {}

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_TOL = Tolerances()


class GuardedCvxopt(CVXOPT):
    """CVXOPT that keeps a near-optimal iterate when the KKT system turns singular.

    Degenerate multiplier pairs in the safety block can make the Cholesky KKT
    solve fail in the last iterations. CVXOPT then reports status ``unknown``
    together with its last iterate; that iterate is kept (as
    ``optimal_inaccurate``) only if its own gap and residuals are below
    ``accept``. The reported figures are stored in ``last_info``.
    """

    def __init__(self, accept: float = 1e-6):
        super().__init__()
        self.accept = accept
        self.last_info = {}

    def name(self):
        return "CVXOPT_GUARDED"

    def solve_via_data(self, data, warm_start, verbose, solver_opts, solver_cache=None):
        import cvxopt.solvers

        conelp = cvxopt.solvers.conelp
        keys = ("status", "iterations", "gap", "relative gap", "primal infeasibility", "dual infeasibility")

        def recording(*args, **kwargs):
            res = conelp(*args, **kwargs)
            self.last_info = {k: res.get(k) for k in keys}
            if res["status"] == "unknown" and res.get("x") is not None and self._near_optimal(res):
                res = dict(res, status="feasible")
            return res

        cvxopt.solvers.conelp = recording
        try:
            return super().solve_via_data(data, warm_start, verbose, solver_opts, solver_cache)
        finally:
            cvxopt.solvers.conelp = conelp

    def _near_optimal(self, res) -> bool:
        vals = [res.get("relative gap"), res.get("primal infeasibility"), res.get("dual infeasibility")]
        if any(v is None for v in vals[1:]):
            return False
        gap = vals[0] if vals[0] is not None else res.get("gap")
        return gap is not None and all(abs(v) <= self.accept for v in [gap] + vals[1:])


def structured_kkt(c, G, h, dims, A, b):
    """CVXOPT KKT solver that keeps the linear-cone rows sparse.

    Same reduction as ``cvxopt.misc.kkt_chol`` (QR elimination of ``A``, dense
    Cholesky of ``Q2' G' W^{-1} W^{-T} G Q2``), but the dense scaling and rank-k
    update run only over the columns of ``G`` that touch the second-order and
    PSD cones. Columns that live in the nonnegative orthant alone (the safety
    multipliers) enter through a sparse ``G_l' D G_l`` product.
    """
    from cvxopt import blas, lapack, matrix
    from cvxopt.misc import pack, pack2, scale, symm, unpack

    p, n = A.size
    nl = dims["l"]
    cdim = nl + sum(dims["q"]) + sum(k * k for k in dims["s"])
    cdim_pckd = nl + sum(dims["q"]) + sum(k * (k + 1) // 2 for k in dims["s"])
    Gsp = sp.csc_matrix((np.array(G.V).ravel(), (np.array(G.I).ravel(), np.array(G.J).ravel())), shape=G.size)
    Gl = Gsp[:nl].tocsr()
    cone = Gsp[nl:].tocsc()
    J = np.flatnonzero(np.diff(cone.indptr))
    base = np.zeros((cdim, J.size))
    base[nl:] = cone[:, J].toarray()
    base = matrix(base)
    Gs = matrix(0.0, (cdim, J.size))
    Gs_packed = np.asarray(Gs)[:cdim_pckd]  # view; pack2 compacts the rows in place
    # cvxpy presolves redundant equalities only for its own "chol" option
    full_rank = not p or np.linalg.matrix_rank(np.array(matrix(A))) == p
    QA = matrix(A.T) if p else None
    tauA = matrix(0.0, (p, 1))
    if p:
        lapack.geqrf(QA, tauA)
    K = matrix(0.0, (n, n))
    bzp = matrix(0.0, (cdim_pckd, 1))
    yy = matrix(0.0, (p, 1))

    def factor(W, H=None, Df=None):
        if not full_rank:
            raise ValueError("rank-deficient equality constraints")  # reported as status "unknown"
        blas.copy(base, Gs)
        scale(Gs, W, trans="T", inverse="I")
        pack2(Gs, dims, 0)
        Ks = matrix(0.0, (J.size, J.size))
        blas.syrk(Gs, Ks, k=cdim_pckd, trans="T")
        symm(Ks, J.size)
        di = np.array(W["di"]).ravel()
        Knp = (Gl.T @ sp.diags(di**2) @ Gl).toarray()
        Knp[np.ix_(J, J)] += np.array(Ks)
        K[:, :] = matrix(Knp)
        if p:
            lapack.ormqr(QA, tauA, K, side="L", trans="T")
            lapack.ormqr(QA, tauA, K, side="R")
        lapack.potrf(K, n=n - p, offsetA=p * (n + 1))

        def solve(x, y, z):
            # bzp := W^{-T} bz (packed); x += Gs' bzp
            scale(z, W, trans="T", inverse="I")
            pack(z, bzp, dims, 0)
            bz = np.asarray(bzp)[:, 0].copy()
            xs = np.asarray(x)[:, 0]
            xs += Gl.T @ (di * bz[:nl])
            xs[J] += Gs_packed.T @ bz
            if p:
                lapack.ormqr(QA, tauA, x, side="L", trans="T")
                blas.copy(y, yy)
                blas.copy(x, y, n=p)
                blas.copy(yy, x)
                lapack.trtrs(QA, x, uplo="U", trans="T", n=p)
                blas.gemv(K, x, x, alpha=-1.0, beta=1.0, m=n - p, n=p, offsetA=p, offsety=p)
            lapack.potrs(K, x, n=n - p, offsetA=p * (n + 1), offsetB=p)
            if p:
                blas.gemv(K, x, y, alpha=-1.0, beta=1.0, m=p, n=n)
                lapack.trtrs(QA, y, uplo="U", n=p)
                lapack.ormqr(QA, tauA, x, side="L")
            # z := W^{-T} (G ux - bz), unpacked
            xs = np.asarray(x)[:, 0]
            out = Gs_packed @ xs[J]
            out[:nl] += di * (Gl @ xs)
            out -= bz
            np.asarray(bzp)[:, 0] = out
            unpack(bzp, z, dims, 0)

        return solve

    return factor


def _attempt(problem, solver, tol, what):
    kwargs = tol.solver_kwargs(solver)
    backend = GuardedCvxopt(tol.accept) if solver == "CVXOPT" else solver
    try:
        with warnings.catch_warnings():
            # inaccurate points are reported through the status and checked by the caller
            warnings.filterwarnings("ignore", message="Solution may be inaccurate")
            problem.solve(solver=backend, **kwargs)
    except cp.SolverError as exc:
        return f"{solver} failed ({exc})"
    if solver == "CVXOPT":
        problem._ftc_info = backend.last_info
    return None


def solve(
    problem: cp.Problem,
    tol: Tolerances = DEFAULT_TOL,
    what: str = "program",
    accept_inaccurate: bool = False,
    sdp: bool = False,
) -> dict:
    """Solve ``problem`` and return solver statistics; raise on failure.

    ``sdp`` routes the program to ``tol.sdp_solver`` and, if that fails, to
    ``tol.sdp_fallback``. ``accept_inaccurate`` lets callers that verify the
    point themselves take an ``optimal_inaccurate`` status.
    """
    ok = OK_STATUSES + ((cp.OPTIMAL_INACCURATE,) if accept_inaccurate or sdp else ())
    chain = [tol.sdp_solver] + ([tol.sdp_fallback] if tol.sdp_fallback else []) if sdp else [tol.solver]
    errors = []
    for solver in chain:
        err = _attempt(problem, solver, tol, what)
        if err is None and problem.status in ok:
            break
        errors.append(err or f"{solver} returned status {problem.status!r}")
        log.warning("%s: %s", what, errors[-1])
    stats = {
        "solver": solver,
        "status": problem.status,
        "iterations": problem.solver_stats.num_iters if problem.solver_stats else None,
        "solve_time": problem.solver_stats.solve_time if problem.solver_stats else None,
        "objective": problem.value,
    }
    info = getattr(problem, "_ftc_info", None)
    if solver == "CVXOPT" and info:
        stats["solver_report"] = {k: v for k, v in info.items() if k != "status"}
    log.debug("%s: %s", what, stats)
    if problem.status not in ok:
        raise SolverError(f"{what}: " + "; ".join(errors), stats)
    return stats


def masked_variable(mask: np.ndarray, name: str | None = None):
    """Matrix expression whose only free entries are where ``mask`` is True.

    Entries outside the mask are structural zeros, not variables.
    Returns ``(expr, theta, expand)`` where ``expand(theta_value)`` rebuilds the
    dense matrix with exact zeros.
    """
    rows, cols = mask.shape
    flat = np.flatnonzero(mask.reshape(-1, order="F"))
    theta = cp.Variable(flat.size, name=name)
    S = sp.csc_matrix(
        (np.ones(flat.size), (flat, np.arange(flat.size))), shape=(rows * cols, flat.size)
    )
    expr = cp.reshape(S @ theta, (rows, cols), order="F")

    def expand(value):
        out = np.zeros(rows * cols)
        out[flat] = value
        return out.reshape((rows, cols), order="F")

    return expr, theta, expand
