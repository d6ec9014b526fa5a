"""Shape-constrained polynomial least squares through sum-of-squares certificates.

A fit of degree ``d`` is positive at the origin and increasing on
``[0, inf)`` when its derivative admits the decomposition::

    p'(x) - eps = t(x) + x * s(x),        t, s sums of squares

Each of ``t`` and ``s`` is represented by a PSD Gram matrix, which turns the
fit into a small semidefinite program. Fits are assembled in the shifted
Chebyshev basis on the normalized data interval (monomials on ``[0, 1]`` make
the degree-10 program too ill-conditioned for the solver to reach the
optimum); the reported Gram blocks are converted back to monomials.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .conic import FEAS_TOL, GAP_TOL, SolverStatus, solve_conic, triu_indices
from .errors import DegenerateDataError, DegreeCapError
from .polynomial import Polynomial, compose_affine, exact_monotone_check

MAX_DEGREE = 12
DEFAULT_EPSILON = 1e-3


class BlockRole(str, enum.Enum):
    T_BLOCK = "T_BLOCK"
    S_BLOCK = "S_BLOCK"


class Basis(str, enum.Enum):
    MONOMIAL = "monomial"
    CHEBYSHEV = "chebyshev"


class MarginMode(str, enum.Enum):
    """Where the strict-positivity margin ``eps`` enters the certificate.

    ``UNIFORM`` certifies ``p' - eps = t + x s`` so ``p' >= eps`` on all of
    ``[0, inf)``. ``MULTIPLIER`` certifies ``s - eps`` sos instead, which only
    gives ``p'(x) >= eps * x`` (zero slope allowed at the origin).
    """

    UNIFORM = "uniform"
    MULTIPLIER = "multiplier"


@dataclass(frozen=True)
class FitDataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape != y.shape:
            raise DegenerateDataError("x and y differ in length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DegenerateDataError("non-finite samples")
        if np.any(x < 0):
            raise DegenerateDataError("torque samples must be nonnegative")
        ux, inv = np.unique(x, return_inverse=True)
        if ux.size < 2:
            raise DegenerateDataError("need at least 2 distinct x values")
        if ux.size != x.size:
            y = np.bincount(inv, weights=y) / np.bincount(inv)
            x = ux
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.size

    @classmethod
    def from_samples(cls, samples):
        arr = np.asarray(list(samples), dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])


@dataclass
class GramBlock:
    role: BlockRole
    dim: int
    offset: int
    entries: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.dim * (self.dim + 1) // 2


@dataclass
class SosProgram:
    """Assembled SDP over the stacked decision vector ``z``.

    ``z`` holds the polynomial coefficients (if any) followed by the
    upper-triangle entries of each Gram block, all with respect to
    ``basis``. Units are the internal normalized ones; ``x_scale`` and
    ``y_scale`` map back. Inequalities read ``ineq_matrix @ z >= ineq_rhs``.
    """

    decision_dim: int
    objective_matrix: np.ndarray
    objective_target: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    blocks: list[GramBlock]
    ineq_matrix: np.ndarray | None = None
    ineq_rhs: np.ndarray | None = None
    degree: int = 0
    epsilon: float = 0.0
    pos_tol: float = 0.0
    x_scale: float = 1.0
    y_scale: float = 1.0
    margin: MarginMode = MarginMode.UNIFORM
    basis: Basis = Basis.MONOMIAL

    @property
    def n_equalities(self) -> int:
        return self.eq_matrix.shape[0]

    @property
    def n_coeffs(self) -> int:
        return self.degree + 1 if self.degree else 0

    def quadratic_form(self):
        """``(P, q, r)`` with objective ``z^T P z + q^T z + r``."""
        F, g = self.objective_matrix, self.objective_target
        return F.T @ F, -2.0 * F.T @ g, float(g @ g)

    def block(self, role: BlockRole) -> GramBlock:
        return next(b for b in self.blocks if b.role is role)


def gram_dims(degree: int) -> tuple[int, int]:
    """Gram block sizes ``(T, S)`` certifying a derivative of degree ``degree - 1``."""
    dd = degree - 1
    k = dd // 2
    if dd % 2 == 0:
        return k + 1, max(k, 1)
    return k + 1, k + 1


def gram_coefficient_rows(dim: int, n_powers: int) -> np.ndarray:
    """Matrix mapping stored upper-triangle entries to polynomial coefficients."""
    M = np.zeros((n_powers, dim * (dim + 1) // 2))
    for col, (i, j) in enumerate(triu_indices(dim)):
        M[i + j, col] = 1.0 if i == j else 2.0
    return M


def gram_polynomial(Q: np.ndarray) -> Polynomial:
    """``m(x)^T Q m(x)`` for the monomial vector ``m = (1, x, ..., x^{dim-1})``."""
    dim = Q.shape[0]
    c = np.zeros(2 * dim - 1)
    for a in range(dim):
        for b in range(dim):
            c[a + b] += Q[a, b]
    return Polynomial(c)


def _check_degree(degree: int):
    if degree > MAX_DEGREE:
        raise DegreeCapError(f"degree {degree} exceeds the supported maximum of {MAX_DEGREE}")
    if degree < 1:
        raise ValueError("degree must be >= 1")


def default_pos_tol(y: np.ndarray) -> float:
    med = float(np.median(y))
    if med > 0:
        return 1e-6 * med
    return 1e-6 * max(float(np.max(np.abs(y))), 1e-300)


def _cheb_unit(k: int) -> np.ndarray:
    e = np.zeros(k + 1)
    e[k] = 1.0
    return e


def _times_x(c: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients of ``x * q`` where ``x = (u + 1) / 2``."""
    out = np.zeros(c.size + 1)
    for k, ck in enumerate(c):
        out[k] += 0.5 * ck
        out[k + 1] += 0.25 * ck
        out[abs(k - 1)] += 0.25 * ck
    return out


def cheb_gram_rows(dim: int, n_powers: int, times_x: bool = False) -> np.ndarray:
    """Like :func:`gram_coefficient_rows` for ``phi(u)^T Q phi(u)`` with ``phi_k = T_k``.

    Uses ``T_i T_j = (T_{i+j} + T_{|i-j|}) / 2``.
    """
    M = np.zeros((n_powers, dim * (dim + 1) // 2))
    for col, (i, j) in enumerate(triu_indices(dim)):
        v = np.zeros(2 * dim - 1)
        w = 1.0 if i == j else 2.0
        v[i + j] += 0.5 * w
        v[abs(i - j)] += 0.5 * w
        if times_x:
            v = _times_x(v)
        M[: v.size, col] = v[:n_powers]
    return M


def cheb_to_monomial_x(a: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients in ``u = 2x - 1`` to monomial coefficients in ``x``."""
    return compose_affine(cheb.cheb2poly(a), -1.0, 2.0)


def cheb_basis_matrix(dim: int) -> np.ndarray:
    """``P`` with ``phi(u(x)) = P m(x)``; rows are basis functions."""
    P = np.zeros((dim, dim))
    for k in range(dim):
        P[k, : k + 1] = cheb_to_monomial_x(_cheb_unit(k))[: k + 1]
    return P


def _derivative_rows(nc: int, n_powers: int) -> np.ndarray:
    """Chebyshev coefficients of ``dp/dx`` from those of ``p`` (``d/dx = 2 d/du``)."""
    D = np.zeros((n_powers, nc))
    for i in range(1, nc):
        d = 2.0 * cheb.chebder(_cheb_unit(i))
        D[: d.size, i] = d[:n_powers]
    return D


def build_sos_program(
    data: FitDataset,
    degree: int,
    epsilon: float = DEFAULT_EPSILON,
    pos_tol: float | None = None,
    margin: MarginMode = MarginMode.UNIFORM,
    basis: Basis = Basis.CHEBYSHEV,
) -> SosProgram:
    _check_degree(degree)
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    margin = MarginMode(margin)
    basis = Basis(basis)
    if pos_tol is None:
        pos_tol = default_pos_tol(data.y)

    xs = float(np.max(data.x))
    ys = float(np.max(np.abs(data.y))) or 1.0
    xt, yt = data.x / xs, data.y / ys
    eps_t = epsilon * xs / ys

    dim_t, dim_s = gram_dims(degree)
    nc = degree + 1
    t_off = nc
    s_off = t_off + dim_t * (dim_t + 1) // 2
    n = s_off + dim_s * (dim_s + 1) // 2
    blocks = [GramBlock(BlockRole.T_BLOCK, dim_t, t_off), GramBlock(BlockRole.S_BLOCK, dim_s, s_off)]

    # one row per basis element of p'(x) - t(x) - x s(x)
    n_pow = max(degree - 1, 2 * (dim_t - 1), 2 * dim_s - 1) + 1
    A = np.zeros((n_pow, n))
    b = np.zeros(n_pow)
    G = np.zeros((1, n))
    if basis is Basis.MONOMIAL:
        for j in range(min(n_pow, degree)):
            A[j, j + 1] = j + 1.0
        A[:, t_off:s_off] -= gram_coefficient_rows(dim_t, n_pow)
        A[1:, s_off:n] -= gram_coefficient_rows(dim_s, n_pow - 1)
        b[0 if margin is MarginMode.UNIFORM else 1] = eps_t
        F = np.zeros((data.n, n))
        F[:, :nc] = np.vander(xt, nc, increasing=True)
        G[0, 0] = 1.0
    else:
        A[:, :nc] = _derivative_rows(nc, n_pow)
        A[:, t_off:s_off] -= cheb_gram_rows(dim_t, n_pow)
        A[:, s_off:n] -= cheb_gram_rows(dim_s, n_pow, times_x=True)
        if margin is MarginMode.UNIFORM:
            b[0] = eps_t
        else:
            b[:2] = 0.5 * eps_t  # eps * x
        F = np.zeros((data.n, n))
        F[:, :nc] = cheb.chebvander(2.0 * xt - 1.0, degree)
        G[0, :nc] = (-1.0) ** np.arange(nc)  # p at x = 0, i.e. u = -1

    return SosProgram(
        decision_dim=n,
        objective_matrix=F,
        objective_target=yt,
        eq_matrix=A,
        eq_rhs=b,
        blocks=blocks,
        ineq_matrix=G,
        ineq_rhs=np.array([pos_tol / ys]),
        degree=degree,
        epsilon=epsilon,
        pos_tol=pos_tol,
        x_scale=xs,
        y_scale=ys,
        margin=margin,
        basis=basis,
    )


def sos_feasibility_program(p: Polynomial) -> SosProgram:
    """Is ``p`` a sum of squares over the whole real line? Single Gram block, no objective."""
    d = p.degree
    if d < 0:
        d = 0
    scale = float(np.max(np.abs(p.coeffs))) or 1.0
    c = np.zeros(d + 1)
    c[: d + 1] = p.coeffs[: d + 1] / scale
    dim = d // 2 + 1
    n_pow = max(d + 1, 2 * dim - 1)
    A = gram_coefficient_rows(dim, n_pow)
    rhs = np.zeros(n_pow)
    rhs[: d + 1] = c
    n = A.shape[1]
    return SosProgram(
        decision_dim=n,
        objective_matrix=np.zeros((0, n)),
        objective_target=np.zeros(0),
        eq_matrix=A,
        eq_rhs=rhs,
        blocks=[GramBlock(BlockRole.T_BLOCK, dim, 0)],
        degree=0,
        y_scale=scale,
    )


def is_sos(p: Polynomial, feas_tol: float = FEAS_TOL) -> bool:
    if p.degree % 2 == 1:
        return False
    sol = solve_conic(sos_feasibility_program(p), feas_tol=feas_tol)
    if sol.status is SolverStatus.INFEASIBLE:
        return False
    sol.raise_for_status()
    return True


@dataclass
class FitReport:
    polynomial: Polynomial
    rmse: float
    solver_status: SolverStatus
    min_derivative_on_range: float
    constrained: bool
    degree: int
    epsilon: float = 0.0
    x_scale: float = 1.0
    y_scale: float = 1.0
    fit_range: tuple[float, float] = (0.0, 1.0)
    gram_blocks: list[GramBlock] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        lo, hi = self.fit_range
        return exact_monotone_check(self.polynomial, lo, hi).monotone_nondecreasing

    def certificate_polynomials(self) -> tuple[Polynomial, Polynomial]:
        """``(t, s)`` in original units with ``p' = eps + t + x s`` (uniform margin)."""
        xs, ys = self.x_scale, self.y_scale
        T = next(b for b in self.gram_blocks if b.role is BlockRole.T_BLOCK).entries
        S = next(b for b in self.gram_blocks if b.role is BlockRole.S_BLOCK).entries
        t = gram_polynomial(T).coeffs
        s = gram_polynomial(S).coeffs
        t = t * (ys / xs) / xs ** np.arange(t.size)
        s = s * (ys / xs**2) / xs ** np.arange(s.size)
        return Polynomial(t), Polynomial(s)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "coeffs": [float(c) for c in _padded(self.polynomial, self.degree)],
            "rmse": float(self.rmse),
            "min_derivative": float(self.min_derivative_on_range),
            "status": self.solver_status.value,
            "epsilon": float(self.epsilon),
            "x_scale": float(self.x_scale),
            "y_scale": float(self.y_scale),
            "constrained": bool(self.constrained),
        }


def _padded(p: Polynomial, degree: int) -> np.ndarray:
    out = np.zeros(degree + 1)
    c = p.coeffs[: degree + 1]
    out[: c.size] = c
    return out


def _descale(ct: np.ndarray, xs: float, ys: float) -> np.ndarray:
    return ys * ct / xs ** np.arange(ct.size)


def _rmse(p: Polynomial, data: FitDataset) -> float:
    return float(np.sqrt(np.mean((p(data.x) - data.y) ** 2)))


def fit_unconstrained(data: FitDataset, degree: int) -> FitReport:
    """Ordinary least squares (orthogonal decomposition on normalized data)."""
    _check_degree(degree)
    if data.n < degree + 1:
        warnings.warn(f"{data.n} samples for degree {degree}: fit is underdetermined", stacklevel=2)
    xs = float(np.max(data.x))
    ys = float(np.max(np.abs(data.y))) or 1.0
    V = np.vander(data.x / xs, degree + 1, increasing=True)
    ct, *_ = np.linalg.lstsq(V, data.y / ys, rcond=None)
    p = Polynomial(_descale(ct, xs, ys))
    chk = exact_monotone_check(p, 0.0, xs)
    return FitReport(
        polynomial=p,
        rmse=_rmse(p, data),
        solver_status=SolverStatus.OPTIMAL,
        min_derivative_on_range=chk.min_derivative,
        constrained=False,
        degree=degree,
        x_scale=xs,
        y_scale=ys,
        fit_range=(0.0, xs),
    )


def _psd_clip(Q: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(0.5 * (Q + Q.T))
    return (V * np.maximum(lam, 0.0)) @ V.T


def certified_coefficients(program: SosProgram, z: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Rebuild normalized monomial coefficients from PSD-clipped Gram blocks.

    The derivative is reassembled from the matching identity, so the result
    carries a valid certificate even when the solver stopped a hair outside
    the PSD cone. Returned Gram blocks are in the monomial basis.
    """
    from .conic import unpack_block

    mats = [_psd_clip(unpack_block(z[b.offset : b.offset + b.size], b.dim)) for b in program.blocks]
    deg = program.degree
    nc = deg + 1
    A = program.eq_matrix
    rows_t = -A[:, program.blocks[0].offset : program.blocks[0].offset + program.blocks[0].size]
    rows_s = -A[:, program.blocks[1].offset : program.blocks[1].offset + program.blocks[1].size]
    svec = lambda Q: np.array([Q[i, j] for i, j in triu_indices(Q.shape[0])])
    dp = rows_t @ svec(mats[0]) + rows_s @ svec(mats[1]) + program.eq_rhs
    p0_floor = float(program.ineq_rhs[0])
    p0 = max(float(program.ineq_matrix[0] @ z), p0_floor)

    if program.basis is Basis.MONOMIAL:
        c = np.empty(nc)
        c[0] = p0
        c[1:] = dp[:deg] / np.arange(1, nc)
        return c, mats

    # integrate in u (dp/du = dp/dx / 2), then fix the constant so p(0) = p0
    a = cheb.chebint(0.5 * dp)[:nc]
    a = np.pad(a, (0, nc - a.size))
    a[0] += p0 - cheb.chebval(-1.0, a)
    c = cheb_to_monomial_x(a)
    c[0] = max(c[0], p0_floor)
    mono = []
    for Q in mats:
        P = cheb_basis_matrix(Q.shape[0])
        mono.append(P.T @ Q @ P)
    return c, mono


def fit_pseudoconvex(
    data: FitDataset,
    degree: int,
    epsilon: float = DEFAULT_EPSILON,
    pos_tol: float | None = None,
    margin: MarginMode = MarginMode.UNIFORM,
    feas_tol: float = FEAS_TOL,
    gap_tol: float = GAP_TOL,
    basis: Basis = Basis.CHEBYSHEV,
) -> FitReport:
    """Least-squares fit that is positive at 0 and increasing on ``[0, inf)``.

    Raises :class:`~sosalloc.errors.SolverError` (or its infeasible subclass)
    when the conic solve fails.
    """
    prog = build_sos_program(data, degree, epsilon, pos_tol, margin, basis)
    sol = solve_conic(prog, feas_tol=feas_tol, gap_tol=gap_tol).raise_for_status()
    ct, mats = certified_coefficients(prog, sol.z)
    p = Polynomial(_descale(ct, prog.x_scale, prog.y_scale))
    blocks = [GramBlock(b.role, b.dim, b.offset, M) for b, M in zip(prog.blocks, mats)]
    chk = exact_monotone_check(p, 0.0, prog.x_scale)
    return FitReport(
        polynomial=p,
        rmse=_rmse(p, data),
        solver_status=sol.status,
        min_derivative_on_range=chk.min_derivative,
        constrained=True,
        degree=degree,
        epsilon=epsilon,
        x_scale=prog.x_scale,
        y_scale=prog.y_scale,
        fit_range=(0.0, prog.x_scale),
        gram_blocks=blocks,
    )
