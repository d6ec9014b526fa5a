"""Front/rear torque split minimizing total motor losses for one vehicle side.

The decision variable is the front-to-total ratio ``sigma``; the front wheel
takes ``sigma * tau_ref`` and the rear ``(1 - sigma) * tau_ref``.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleDemandError, OutOfRangeError, SosAllocError
from .polynomial import Polynomial, compose_affine, real_roots
from .powertrain import LossModel, MotorSpec, interpolate_loss

TIE_TOL = 1e-9
GRID_STEP = 1e-3
GRID_TIE_TOL = 1e-12


class Config(str, enum.Enum):
    EQUAL = "EQUAL"
    UNEQUAL = "UNEQUAL"


class Method(str, enum.Enum):
    GRADIENT = "GRADIENT"
    KKT = "KKT"
    GRID = "GRID"


@dataclass(frozen=True)
class AllocationQuery:
    omega_w: float
    tau_ref: float
    config: Config
    front: MotorSpec
    rear: MotorSpec
    front_model: LossModel | None = None
    rear_model: LossModel | None = None

    def __post_init__(self):
        if not self.omega_w >= 0:
            raise ValueError("wheel speed must be >= 0")
        object.__setattr__(self, "config", Config(self.config))
        if self.config is Config.EQUAL and not _same_drive(self):
            raise ValueError("EQUAL configuration needs identical front and rear motors")


def _same_map(a, b) -> bool:
    if a is b:
        return True
    if a is None or b is None:
        return False
    return all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("speeds", "torques", "losses"))


def _same_model(a, b) -> bool:
    if a is b:
        return True
    if a is None or b is None:
        return False
    return np.array_equal(a.speeds, b.speeds) and np.array_equal(a.coeffs, b.coeffs) and a.mode == b.mode


def same_motor(f: MotorSpec, r: MotorSpec) -> bool:
    """Same gear ratio, torque curve and loss map (labels may differ)."""
    if f is r:
        return True
    return f.gear_ratio == r.gear_ratio and f.max_torque_curve == r.max_torque_curve and _same_map(f.loss_map, r.loss_map)


def _same_drive(q: "AllocationQuery") -> bool:
    return same_motor(q.front, q.rear) and _same_model(q.front_model, q.rear_model)


@dataclass(frozen=True)
class AllocationResult:
    sigma: float
    loss_total: float
    method: Method
    candidates_evaluated: int
    solve_time: float
    front_motor_torque: float
    rear_motor_torque: float
    converged: bool = True
    box: tuple[float, float] = (0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "loss_w": self.loss_total,
            "method": self.method.value,
            "candidates_evaluated": self.candidates_evaluated,
            "solve_time_s": self.solve_time,
            "front_motor_torque_nm": self.front_motor_torque,
            "rear_motor_torque_nm": self.rear_motor_torque,
            "converged": self.converged,
            "sigma_box": list(self.box),
        }


def base_box(config: Config) -> tuple[float, float]:
    return (0.5, 1.0) if Config(config) is Config.EQUAL else (0.0, 1.0)


def _torque_limit(spec: MotorSpec, omega_m: float, range_max: float) -> float:
    return min(spec.max_torque(omega_m), range_max)


def feasible_sigma_box(query: AllocationQuery, use_maps: bool = False) -> tuple[float, float]:
    """Shrink the base box so both motors stay within their torque limits.

    Limits come from the max-torque curves and from the torque range covered
    by the loss models (or maps when ``use_maps``).
    """
    lo, hi = base_box(query.config)
    T = abs(query.tau_ref)
    if T == 0.0:
        return lo, hi
    f, r = query.front, query.rear
    if use_maps:
        rf = f.loss_map.torque_max if f.loss_map is not None else math.inf
        rr = r.loss_map.torque_max if r.loss_map is not None else math.inf
    else:
        rf = query.front_model.torque_max if query.front_model is not None else math.inf
        rr = query.rear_model.torque_max if query.rear_model is not None else math.inf
    lim_f = _torque_limit(f, f.gear_ratio * query.omega_w, rf) * f.gear_ratio
    lim_r = _torque_limit(r, r.gear_ratio * query.omega_w, rr) * r.gear_ratio
    hi = min(hi, lim_f / T)
    lo = max(lo, 1.0 - lim_r / T)
    if lo > hi + 1e-12:
        raise InfeasibleDemandError(
            f"demand {T:.6g} N*m exceeds front {lim_f:.6g} + rear {lim_r:.6g} N*m wheel-torque capability"
        )
    return lo, max(lo, hi)


def capability(query: AllocationQuery, use_maps: bool = False) -> float:
    """Largest per-side wheel torque that keeps the box nonempty."""
    f, r = query.front, query.rear
    if use_maps:
        rf, rr = f.loss_map.torque_max, r.loss_map.torque_max
    else:
        rf, rr = query.front_model.torque_max, query.rear_model.torque_max
    lim_f = _torque_limit(f, f.gear_ratio * query.omega_w, rf) * f.gear_ratio
    lim_r = _torque_limit(r, r.gear_ratio * query.omega_w, rr) * r.gear_ratio
    if Config(query.config) is Config.EQUAL:
        return min(lim_f + lim_r, 2.0 * lim_f)
    return lim_f + lim_r


def objective_polynomial(query: AllocationQuery) -> tuple[Polynomial, tuple[float, float]]:
    """Total loss as an explicit polynomial in ``sigma`` plus the feasible box."""
    fm, rm = query.front_model, query.rear_model
    if fm is None or rm is None:
        raise SosAllocError("polynomial methods need fitted loss models")
    try:
        box = feasible_sigma_box(query)
    except InfeasibleDemandError as exc:
        raise OutOfRangeError(str(exc)) from exc
    T = abs(query.tau_ref)
    hf, hr = query.front.gear_ratio, query.rear.gear_ratio
    cf = fm.blended_coeffs(hf * query.omega_w)
    cr = rm.blended_coeffs(hr * query.omega_w)
    a = T / hf
    front = cf * a ** np.arange(cf.size)
    rear = compose_affine(cr, T / hr, -T / hr)
    n = max(front.size, rear.size)
    L = np.zeros(n)
    L[: front.size] += front
    L[: rear.size] += rear
    return Polynomial(L), box


def objective_scale(L: Polynomial, box: tuple[float, float]) -> float:
    lo, hi = box
    return max(abs(L(lo)), abs(L(hi)), abs(L(0.5 * (lo + hi))), 1.0)


def _pick(sigmas, losses, scale: float) -> int:
    """Index of the minimum; near-ties prefer 0.5, then the smaller sigma."""
    losses = np.asarray(losses)
    sigmas = np.asarray(sigmas)
    best = float(np.min(losses))
    tied = np.flatnonzero(losses <= best + TIE_TOL * scale)
    half = tied[np.abs(sigmas[tied] - 0.5) <= 1e-12]
    if half.size:
        return int(half[0])
    return int(tied[np.argmin(sigmas[tied])])


def _result(query, sigma, loss, method, n, t0, converged=True, box=(0.0, 1.0)):
    return AllocationResult(
        sigma=float(sigma),
        loss_total=float(loss),
        method=method,
        candidates_evaluated=int(n),
        solve_time=time.perf_counter() - t0,
        front_motor_torque=float(sigma * query.tau_ref / query.front.gear_ratio),
        rear_motor_torque=float((1.0 - sigma) * query.tau_ref / query.rear.gear_ratio),
        converged=converged,
        box=(float(box[0]), float(box[1])),
    )


def solve_kkt(query: AllocationQuery) -> AllocationResult:
    """Global minimum over the box: roots of ``L'`` plus the box endpoints."""
    t0 = time.perf_counter()
    L, box = objective_polynomial(query)
    lo, hi = box
    if query.tau_ref == 0.0:
        s = min(max(0.5, lo), hi)
        return _result(query, s, L(s), Method.KKT, 1, t0, box=box)
    scale = objective_scale(L, box)
    cands = [lo, hi]
    dL = L.deriv().trimmed(1e-15)
    if dL.degree >= 1:
        cands.extend(min(max(x, lo), hi) for x in real_roots(dL, lo, hi))
    elif dL.degree <= 0 and lo <= 0.5 <= hi:
        cands.append(0.5)
    vals = [L(s) for s in cands]
    k = _pick(cands, vals, scale)
    return _result(query, cands[k], vals[k], Method.KKT, len(cands), t0, box=box)


def solve_gradient(
    query: AllocationQuery,
    init: float | None = None,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
    max_iter: int = 100,
    tol: float | None = None,
) -> AllocationResult:
    """Projected Newton on the box, projected gradient with backtracking when ``L'' <= 0``.

    A missing ``init`` draws a uniform start from the box (``rng`` or
    ``seed``). On hitting ``max_iter`` the best iterate is returned with
    ``converged=False``.
    """
    t0 = time.perf_counter()
    L, box = objective_polynomial(query)
    lo, hi = box
    if query.tau_ref == 0.0:
        s = min(max(0.5, lo), hi)
        return _result(query, s, L(s), Method.GRADIENT, 1, t0, box=box)
    scale = objective_scale(L, box)
    if tol is None:
        tol = 1e-8 * scale
    dL = L.deriv()
    d2L = dL.deriv()
    if init is None:
        rng = rng if rng is not None else np.random.default_rng(seed)
        s = float(rng.uniform(lo, hi))
    else:
        s = min(max(float(init), lo), hi)
    f = L(s)
    converged = False
    width = hi - lo
    for _ in range(max_iter):
        g = dL(s)
        if (s <= lo and g >= 0.0) or (s >= hi and g <= 0.0) or abs(g) <= tol or width == 0.0:
            converged = True
            break
        h = d2L(s)
        step = -g / h if h > 0.0 else -math.copysign(width, g)
        t = 1.0
        while True:
            s_new = min(max(s + t * step, lo), hi)
            f_new = L(s_new)
            # Armijo on the projected step
            if f_new <= f + 1e-4 * g * (s_new - s) or abs(s_new - s) <= 1e-15 * (1.0 + abs(s)):
                break
            t *= 0.5
        if abs(s_new - s) <= 1e-15 * (1.0 + abs(s)):
            converged = abs(g) <= max(tol, 1e-6 * scale)
            if f_new <= f:
                s, f = s_new, f_new
            break
        s, f = s_new, f_new
    return _result(query, s, f, Method.GRADIENT, 1, t0, converged=converged, box=box)


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    k0 = math.ceil(lo / step - 1e-9)
    k1 = math.floor(hi / step + 1e-9)
    pts = np.arange(k0, k1 + 1) * step
    pts = pts[(pts >= lo - 1e-12) & (pts <= hi + 1e-12)]
    return np.unique(np.clip(np.concatenate([[lo], pts, [hi]]), lo, hi))


def map_objective(query: AllocationQuery, sigmas):
    """Total loss from the raw maps (bilinear interpolation) at each ``sigma``."""
    f, r = query.front, query.rear
    sig = np.asarray(sigmas, dtype=float)
    T = abs(query.tau_ref)
    lf = interpolate_loss(f.loss_map, f.gear_ratio * query.omega_w, sig * T / f.gear_ratio)
    lr = interpolate_loss(r.loss_map, r.gear_ratio * query.omega_w, (1.0 - sig) * T / r.gear_ratio)
    return lf + lr


def solve_gridsearch(query: AllocationQuery, grid_step: float = GRID_STEP) -> AllocationResult:
    """Exhaustive search over a sigma grid using only the raw loss maps.

    Grid points are the multiples of ``grid_step`` inside the box plus the
    two box endpoints; ties (to rounding) go to the smallest sigma.
    """
    t0 = time.perf_counter()
    if query.front.loss_map is None or query.rear.loss_map is None:
        raise SosAllocError("grid search needs raw loss maps")
    try:
        lo, hi = feasible_sigma_box(query, use_maps=True)
    except InfeasibleDemandError as exc:
        raise OutOfRangeError(str(exc)) from exc
    if query.tau_ref == 0.0:
        s = min(max(0.5, lo), hi)
        return _result(query, s, float(map_objective(query, s)), Method.GRID, 1, t0, box=(lo, hi))
    sig = _grid(lo, hi, grid_step)
    vals = np.atleast_1d(map_objective(query, sig))
    # the interpolated objective is often flat across a cell; treat
    # rounding-level differences as ties so the smallest sigma wins
    tied = np.flatnonzero(vals <= vals.min() + GRID_TIE_TOL * max(float(np.max(np.abs(vals))), 1.0))
    k = int(tied[0])
    return _result(query, sig[k], vals[k], Method.GRID, sig.size, t0, box=(lo, hi))


def allocate(query: AllocationQuery, method: Method | str, **kw) -> AllocationResult:
    method = Method(method)
    if method is Method.KKT:
        return solve_kkt(query)
    if method is Method.GRADIENT:
        return solve_gradient(query, **kw)
    return solve_gridsearch(query, **kw)
