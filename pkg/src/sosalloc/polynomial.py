"""Dense univariate polynomials, real-root isolation and monotonicity checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import WrongDegreeError, ZeroPolynomialError

#: relative magnitude below which leading/trailing coefficients are deflated
DEFLATION_TOL = 1e-12
CLUSTER_TOL = 1e-8


class Polynomial:
    """Real polynomial stored lowest degree first (``coeffs[j]`` multiplies ``x**j``).

    The stored length is only a degree bound; :attr:`degree` is always
    recomputed from the coefficients.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Iterable[float]):
        c = np.array(coeffs, dtype=float).ravel()
        if c.size == 0:
            c = np.zeros(1)
        if not np.all(np.isfinite(c)):
            raise ValueError("polynomial coefficients must be finite")
        c.flags.writeable = False
        self.coeffs = c

    @classmethod
    def from_roots(cls, roots: Sequence[float], scale: float = 1.0) -> "Polynomial":
        return cls(scale * npoly.polyfromroots(roots))

    @property
    def degree(self) -> int:
        """Effective degree; -1 for the zero polynomial."""
        nz = np.flatnonzero(self.coeffs)
        return int(nz[-1]) if nz.size else -1

    @property
    def degree_bound(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, x):
        # Horner; npoly.polyval is slower for scalars.
        c = self.coeffs
        if np.ndim(x) == 0:
            x = float(x)
            acc = 0.0
            for cj in c[::-1]:
                acc = acc * x + cj
            return acc
        return npoly.polyval(np.asarray(x, dtype=float), c)

    def deriv(self, m: int = 1) -> "Polynomial":
        if self.coeffs.size <= m:
            return Polynomial([0.0])
        return Polynomial(npoly.polyder(self.coeffs, m))

    def compose_affine(self, a: float, b: float) -> "Polynomial":
        """Return ``q(s) = p(a + b*s)``."""
        return Polynomial(compose_affine(self.coeffs, a, b))

    def trimmed(self, rel_tol: float = 0.0) -> "Polynomial":
        c = self.coeffs
        if rel_tol > 0 and c.size:
            thresh = rel_tol * np.max(np.abs(c))
            c = np.where(np.abs(c) <= thresh, 0.0, c)
        d = Polynomial(c).degree
        return Polynomial(c[: max(d, 0) + 1])

    def __add__(self, other):
        if isinstance(other, Polynomial):
            return Polynomial(npoly.polyadd(self.coeffs, other.coeffs))
        return Polynomial(npoly.polyadd(self.coeffs, [float(other)]))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Polynomial):
            return Polynomial(npoly.polysub(self.coeffs, other.coeffs))
        return Polynomial(npoly.polysub(self.coeffs, [float(other)]))

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return Polynomial(npoly.polymul(self.coeffs, other.coeffs))
        return Polynomial(self.coeffs * float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Polynomial(-self.coeffs)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        a, b = self.coeffs, other.coeffs
        n = max(a.size, b.size)
        return bool(np.array_equal(np.pad(a, (0, n - a.size)), np.pad(b, (0, n - b.size))))

    __hash__ = None

    def __repr__(self):
        return f"Polynomial({self.coeffs.tolist()!r})"


def compose_affine(coeffs: np.ndarray, a: float, b: float) -> np.ndarray:
    """Coefficients of ``p(a + b*s)`` in powers of ``s``."""
    c = np.asarray(coeffs, dtype=float)
    n = c.size
    out = np.zeros(n)
    # Horner over polynomials: acc <- acc*(a + b s) + c_j
    for cj in c[::-1]:
        out[1:] = out[1:] * a + out[:-1] * b
        out[0] = out[0] * a + cj
    return out


def _deflate(c: np.ndarray) -> tuple[np.ndarray, int]:
    """Drop negligible leading coefficients and factor out zero roots.

    Returns the reduced coefficients and the multiplicity of the root at 0.
    """
    scale = np.max(np.abs(c))
    thresh = DEFLATION_TOL * scale
    hi = c.size - 1
    while hi > 0 and abs(c[hi]) <= thresh:
        hi -= 1
    lo = 0
    while lo < hi and abs(c[lo]) <= thresh:
        lo += 1
    return c[lo : hi + 1], lo


def _polish(c: np.ndarray, dc: np.ndarray, x: float, steps: int = 4) -> float:
    fx = npoly.polyval(x, c)
    for _ in range(steps):
        d = npoly.polyval(x, dc)
        if d == 0.0 or abs(fx) <= _noise_floor(c, x):
            break
        xn = x - fx / d
        fn = npoly.polyval(xn, c)
        if not abs(fn) < abs(fx):
            break
        x, fx = xn, fn
    return x


def _noise_floor(c: np.ndarray, x: float) -> float:
    return 64 * np.finfo(float).eps * float(npoly.polyval(abs(x), np.abs(c)))


def real_roots(
    p: Polynomial | Sequence[float],
    lo: float = -math.inf,
    hi: float = math.inf,
    imag_tol: float | None = None,
    cluster_tol: float = CLUSTER_TOL,
) -> list[float]:
    """Real roots of ``p`` inside ``[lo - cluster_tol, hi + cluster_tol]``.

    Roots come from the eigenvalues of the companion matrix; an eigenvalue is
    treated as real when its imaginary part is at most ``imag_tol`` (default
    ``1e-8 * (1 + max|root|)``). Accepted roots are polished with a few
    Newton steps and coincident ones (multiple roots) are reported once.
    """
    c = p.coeffs if isinstance(p, Polynomial) else np.asarray(p, dtype=float)
    if c.size == 0 or not np.any(np.abs(c) > 0):
        raise ZeroPolynomialError("cannot take roots of the zero polynomial")
    c, zero_mult = _deflate(c)
    if c.size == 1 and zero_mult == 0:
        return []

    if c.size > 1:
        z = npoly.polyroots(c)
    else:
        z = np.zeros(0, dtype=complex)
    z = np.asarray(z, dtype=complex)
    if imag_tol is None:
        imag_tol = 1e-8 * (1.0 + (float(np.max(np.abs(z))) if z.size else 0.0))

    dc = npoly.polyder(c) if c.size > 1 else np.zeros(1)
    found = [0.0] * min(zero_mult, 1)
    for r in z:
        if abs(r.imag) <= imag_tol:
            x = float(r.real)
        elif abs(r.imag) <= 1e-6 * (1.0 + abs(r)) and abs(npoly.polyval(r.real, c)) <= _noise_floor(c, r.real):
            # split image of a multiple real root
            x = float(r.real)
        else:
            continue
        found.append(_polish(c, dc, x))

    lo_x, hi_x = lo - cluster_tol, hi + cluster_tol
    found = sorted(x for x in found if lo_x <= x <= hi_x)

    merged: list[list[float]] = []
    for x in found:
        if merged:
            prev = merged[-1][-1]
            gap = x - prev
            if gap <= cluster_tol:
                merged[-1].append(x)
                continue
            mid = 0.5 * (x + prev)
            if gap <= 1e-6 * (1.0 + abs(prev)) and abs(npoly.polyval(mid, c)) <= _noise_floor(c, mid):
                merged[-1].append(x)
                continue
        merged.append([x])
    return [float(np.mean(g)) for g in merged]


@dataclass(frozen=True)
class MonotoneCheck:
    monotone_nondecreasing: bool
    min_derivative: float
    argmin: float


def exact_monotone_check(p: Polynomial, lo: float, hi: float, check_tol: float = 1e-9) -> MonotoneCheck:
    """Minimum of ``p'`` over ``[lo, hi]`` via the real roots of ``p''``.

    ``check_tol`` is relative to ``max|p'|`` over the evaluated points.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    dp = p.deriv()
    pts = [lo, hi]
    ddp = dp.deriv()
    if ddp.degree >= 1:
        pts.extend(x for x in real_roots(ddp, lo, hi) if lo <= x <= hi)
    pts = np.asarray(pts)
    vals = dp(pts)
    k = int(np.argmin(vals))
    vmin = float(vals[k])
    tol = check_tol * max(float(np.max(np.abs(vals))), np.finfo(float).tiny)
    return MonotoneCheck(vmin >= -tol, vmin, float(pts[k]))


@dataclass(frozen=True)
class CubicConditions:
    holds: bool
    margin: float


def cubic_monotone_conditions(p: Polynomial) -> CubicConditions:
    """Closed-form monotonicity test for ``a x^3 + b x^2 + c x + d``.

    ``holds`` iff ``a > 0``, ``c > 0`` and ``b^2 < 3ac``, which is equivalent
    to ``p'`` being a sum of squares, i.e. ``p`` increasing on all of the real
    line. Increase on ``[0, inf)`` alone is a weaker requirement: e.g.
    ``x^3 + 3x^2 + x`` fails here but has ``p' >= 0`` for ``x >= 0``.
    """
    if p.degree != 3:
        raise WrongDegreeError(f"expected a cubic, got effective degree {p.degree}")
    d, c, b, a = p.coeffs[:4]
    margin = 3.0 * a * c - b * b
    return CubicConditions(bool(a > 0 and c > 0 and margin > 0), float(margin))
