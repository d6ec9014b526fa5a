"""Thin adapter from :class:`~sosalloc.sos.SosProgram` to a conic solver.

Program construction never imports a solver; everything solver specific
lives here. The backend is Clarabel (interior point with zero,
nonnegative, second-order and PSD triangle cones).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import linalg, sparse

from .errors import InfeasibleProgramError, SolverError

FEAS_TOL = 1e-9
GAP_TOL = 1e-9


class SolverStatus(str, enum.Enum):
    OPTIMAL = "OPTIMAL"
    NEAR_OPTIMAL = "NEAR_OPTIMAL"
    INFEASIBLE = "INFEASIBLE"
    NUMERICAL_FAILURE = "NUMERICAL_FAILURE"


_STATUS = {
    "Solved": SolverStatus.OPTIMAL,
    "AlmostSolved": SolverStatus.NEAR_OPTIMAL,
    "PrimalInfeasible": SolverStatus.INFEASIBLE,
    "AlmostPrimalInfeasible": SolverStatus.INFEASIBLE,
}


@dataclass
class ConicSolution:
    status: SolverStatus
    z: np.ndarray | None
    blocks: list = field(default_factory=list)
    objective: float = float("nan")
    min_eigenvalue: float = float("nan")
    equality_residual: float = float("nan")
    iterations: int = 0
    raw_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (SolverStatus.OPTIMAL, SolverStatus.NEAR_OPTIMAL)

    def raise_for_status(self):
        if self.status is SolverStatus.INFEASIBLE:
            raise InfeasibleProgramError(f"program infeasible ({self.raw_status})", self.status)
        if not self.ok:
            raise SolverError(f"conic solve failed ({self.raw_status})", self.status)
        return self


def triu_indices(dim: int) -> list[tuple[int, int]]:
    """Upper-triangle index pairs, column major (the storage order of Gram blocks)."""
    return [(i, j) for j in range(dim) for i in range(j + 1)]


def unpack_block(values: np.ndarray, dim: int) -> np.ndarray:
    Q = np.zeros((dim, dim))
    for v, (i, j) in zip(values, triu_indices(dim)):
        Q[i, j] = Q[j, i] = v
    return Q


def _svec_scaling(dim: int) -> np.ndarray:
    return np.array([1.0 if i == j else np.sqrt(2.0) for i, j in triu_indices(dim)])


def solve_conic(program, feas_tol: float = FEAS_TOL, gap_tol: float = GAP_TOL, max_iter: int = 200) -> ConicSolution:
    """Solve ``program``; never raises on solver failure, inspect ``status``.

    The least-squares objective ``||F z - g||^2`` is minimized through its
    square root: with a thin QR factor ``F = Q R`` the solver minimizes
    ``r`` subject to ``||R z - Q^T g|| <= r`` (a second-order cone), which
    keeps the solver tolerance on the residual norm rather than its square.
    """
    n = program.decision_dim
    F, g = program.objective_matrix, program.objective_target
    k = F.shape[0]
    if k:
        Qf, R = linalg.qr(F, mode="economic")
        qg = Qf.T @ g
        m = R.shape[0]
        nx = n + 1
    else:
        m = 0
        nx = n

    rows, rhs, cones = [], [], []

    eqA, eqb = program.eq_matrix, program.eq_rhs
    if eqA.shape[0]:
        rows.append(np.hstack([eqA, np.zeros((eqA.shape[0], nx - n))]))
        rhs.append(eqb)
        cones.append(clarabel.ZeroConeT(eqA.shape[0]))

    G, h = program.ineq_matrix, program.ineq_rhs
    if G is not None and G.shape[0]:
        # G z >= h  <=>  -G z + s = -h, s >= 0
        rows.append(np.hstack([-G, np.zeros((G.shape[0], nx - n))]))
        rhs.append(-h)
        cones.append(clarabel.NonnegativeConeT(G.shape[0]))

    if m:
        # (r, R z - Q^T g) in SOC
        C = np.zeros((m + 1, nx))
        C[0, n] = -1.0
        C[1:, :n] = -R
        rows.append(C)
        rhs.append(np.concatenate([[0.0], -qg]))
        cones.append(clarabel.SecondOrderConeT(m + 1))

    for blk in program.blocks:
        sz = blk.dim * (blk.dim + 1) // 2
        S = np.zeros((sz, nx))
        S[np.arange(sz), blk.offset + np.arange(sz)] = -_svec_scaling(blk.dim)
        rows.append(S)
        rhs.append(np.zeros(sz))
        cones.append(clarabel.PSDTriangleConeT(blk.dim))

    A = sparse.csc_matrix(np.vstack(rows))
    b = np.concatenate(rhs)
    P = sparse.csc_matrix((nx, nx))
    q = np.zeros(nx)
    if m:
        q[n] = 1.0

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_feas = feas_tol
    settings.tol_gap_abs = gap_tol
    settings.tol_gap_rel = gap_tol
    settings.tol_infeas_abs = 1e-10
    settings.tol_infeas_rel = 1e-10
    try:
        sol = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
    except Exception as exc:  # solver-side panics surface as generic errors
        return ConicSolution(SolverStatus.NUMERICAL_FAILURE, None, raw_status=str(exc))

    raw = str(sol.status)
    status = _STATUS.get(raw, SolverStatus.NUMERICAL_FAILURE)
    if status is SolverStatus.INFEASIBLE or status is SolverStatus.NUMERICAL_FAILURE:
        return ConicSolution(status, None, raw_status=raw, iterations=sol.iterations)

    x = np.asarray(sol.x)
    z = x[:n].copy()
    blocks = [unpack_block(z[blk.offset : blk.offset + blk.dim * (blk.dim + 1) // 2], blk.dim) for blk in program.blocks]
    lam = min((float(np.linalg.eigvalsh(Q)[0]) for Q in blocks), default=0.0)
    eq_res = float(np.max(np.abs(eqA @ z - eqb))) if eqA.shape[0] else 0.0
    obj = float(np.sum((F @ z - g) ** 2)) if k else 0.0
    if status is SolverStatus.OPTIMAL and (lam < -feas_tol or eq_res > feas_tol * (1.0 + np.max(np.abs(eqb), initial=0.0))):
        status = SolverStatus.NEAR_OPTIMAL
    return ConicSolution(status, z, blocks, obj, lam, eq_res, sol.iterations, raw)
