"""Vehicle longitudinal dynamics, motor loss maps and fitted loss models.

Units throughout: m/s, rad/s, N*m, W, s, kWh.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import OutOfRangeError, SliceFitError, SolverError
from .polynomial import Polynomial, exact_monotone_check
from .sos import DEFAULT_EPSILON, FitDataset, fit_pseudoconvex, fit_unconstrained

TORQUE_OVERSHOOT = 0.01
J_PER_KWH = 3.6e6


@dataclass(frozen=True)
class VehicleParams:
    m: float = 2200.0
    R: float = 0.317
    R_r: float = 0.008
    C_d: float = 0.275
    A_f: float = 2.22
    rho_air: float = 1.225
    g: float = 9.81
    h1: float = 4.4863
    h2: float = 7.425

    def __post_init__(self):
        for name in ("m", "R", "C_d", "A_f", "rho_air", "g", "h1", "h2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"vehicle parameter {name} must be > 0")
        if self.R_r < 0:
            raise ValueError("vehicle parameter R_r must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def resistive_force(params: VehicleParams, v):
    """Rolling plus aerodynamic resistance [N] at speed ``v`` [m/s]."""
    v = np.asarray(v, dtype=float)
    f = params.R_r * params.m * params.g + 0.5 * params.rho_air * params.C_d * params.A_f * v * v
    return float(f) if f.ndim == 0 else f


@dataclass(frozen=True)
class DriveCycle:
    name: str
    speeds: np.ndarray
    sample_time: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.speeds, dtype=float).ravel()
        if not self.sample_time > 0:
            raise ValueError("sample time must be > 0")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("cycle speeds must be finite and >= 0")
        object.__setattr__(self, "speeds", v)

    def __len__(self):
        return self.speeds.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.speeds.size) * self.sample_time


@dataclass(frozen=True)
class TorqueDemand:
    """Per-step demand for one vehicle side."""

    t: np.ndarray
    v: np.ndarray
    v_mean: np.ndarray
    accel: np.ndarray
    force: np.ndarray
    omega_w: np.ndarray
    tau_ref: np.ndarray


def cycle_torque_demand(params: VehicleParams, cycle: DriveCycle) -> TorqueDemand:
    """Discretized longitudinal dynamics.

    Acceleration is the forward difference over each step (zero on the last
    sample), resistance is taken at the start of the step and the wheel
    speed is the mean speed over the step, so ``F * v_mean * T_s`` is exactly
    the mechanical work of the step. A step with the vehicle at rest at both
    ends demands no torque.
    """
    v = cycle.speeds
    ts = cycle.sample_time
    v_next = np.append(v[1:], v[-1:]) if v.size else v
    a = (v_next - v) / ts
    v_mean = 0.5 * (v + v_next)
    force = params.m * a + resistive_force(params, v)
    force = np.where(v_mean > 0, force, 0.0)
    return TorqueDemand(
        t=cycle.times,
        v=v,
        v_mean=v_mean,
        accel=a,
        force=force,
        omega_w=v_mean / params.R,
        tau_ref=force * params.R / 2.0,
    )


def _strictly_ascending(a: np.ndarray) -> bool:
    return a.size < 2 or bool(np.all(np.diff(a) > 0))


@dataclass(frozen=True)
class LossMap:
    speeds: np.ndarray
    torques: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.speeds, dtype=float).ravel()
        t = np.asarray(self.torques, dtype=float).ravel()
        L = np.asarray(self.losses, dtype=float)
        if L.shape != (s.size, t.size):
            raise ValueError(f"loss matrix shape {L.shape} does not match grids ({s.size}, {t.size})")
        if s.size < 1 or t.size < 2:
            raise ValueError("loss map needs >= 1 speed and >= 2 torque points")
        if not (_strictly_ascending(s) and _strictly_ascending(t)):
            raise ValueError("loss map grids must be strictly ascending")
        if np.any(t < 0):
            raise ValueError("loss map torques must be >= 0")
        if not np.all(np.isfinite(L)) or np.any(L < 0):
            raise ValueError("losses must be finite and >= 0")
        object.__setattr__(self, "speeds", s)
        object.__setattr__(self, "torques", t)
        object.__setattr__(self, "losses", L)

    @property
    def torque_max(self) -> float:
        return float(self.torques[-1])


def _speed_weights(speeds: np.ndarray, omega: float, nearest: bool = False) -> tuple[int, float]:
    """Lower bracketing index and blend weight for ``omega``; clamps with a warning."""
    if speeds.size == 1:
        return 0, 0.0
    if omega < speeds[0] or omega > speeds[-1]:
        warnings.warn("speed outside the map grid; clamped to the nearest grid edge", RuntimeWarning, stacklevel=3)
        omega = min(max(omega, speeds[0]), speeds[-1])
    i = int(np.searchsorted(speeds, omega, side="right")) - 1
    i = min(max(i, 0), speeds.size - 2)
    w = (omega - speeds[i]) / (speeds[i + 1] - speeds[i])
    if nearest:
        w = 1.0 if w > 0.5 else 0.0
    return i, w


def _check_torque(tau_abs, tau_max: float):
    if np.any(tau_abs > tau_max * (1.0 + TORQUE_OVERSHOOT)):
        worst = float(np.max(tau_abs))
        raise OutOfRangeError(f"|torque| {worst:.6g} N*m exceeds range {tau_max:.6g} N*m by more than 1%")


def interpolate_loss(loss_map: LossMap, omega_m: float, tau_m):
    """Bilinear interpolation of the map at ``(omega_m, |tau_m|)``.

    ``tau_m`` may be an array. Torques up to 1% past the grid are linearly
    extrapolated from the last cell.
    """
    tau = np.abs(np.asarray(tau_m, dtype=float))
    _check_torque(tau, loss_map.torque_max)
    i, w = _speed_weights(loss_map.speeds, float(omega_m))
    row = loss_map.losses[i] if w == 0.0 else (1 - w) * loss_map.losses[i] + w * loss_map.losses[i + 1]
    tq = loss_map.torques
    j = np.clip(np.searchsorted(tq, tau, side="right") - 1, 0, tq.size - 2)
    u = (tau - tq[j]) / (tq[j + 1] - tq[j])
    out = (1 - u) * row[j] + u * row[j + 1]
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MotorSpec:
    """Motor behind a fixed reduction. ``max_torque_curve`` rows are ``(omega_m, tau_max)``."""

    gear_ratio: float
    loss_map: LossMap | None = None
    max_torque_curve: tuple | None = None
    label: str = ""

    def __post_init__(self):
        if not self.gear_ratio > 0:
            raise ValueError("gear ratio must be > 0")
        if self.max_torque_curve is not None:
            curve = np.asarray(self.max_torque_curve, dtype=float).reshape(-1, 2)
            if np.any(curve[:, 1] < 0):
                raise ValueError("max torque must be >= 0")
            order = np.argsort(curve[:, 0], kind="stable")
            object.__setattr__(self, "max_torque_curve", tuple(map(tuple, curve[order])))

    def max_torque(self, omega_m: float) -> float:
        if self.max_torque_curve is None:
            return float("inf")
        curve = np.asarray(self.max_torque_curve)
        return float(np.interp(omega_m, curve[:, 0], curve[:, 1]))


class EvalMode(str, enum.Enum):
    BLEND = "blend"
    NEAREST = "nearest"


@dataclass(frozen=True)
class LossModel:
    """One polynomial in torque per speed slice.

    ``coeffs[i]`` holds the coefficients (lowest first) for ``speeds[i]``.
    """

    speeds: np.ndarray
    coeffs: np.ndarray
    torque_range: tuple[float, float]
    constrained: bool = True
    degree: int = 0
    epsilon: float = 0.0
    fit_meta: list = field(default_factory=list)
    mode: EvalMode = EvalMode.BLEND

    def __post_init__(self):
        s = np.asarray(self.speeds, dtype=float).ravel()
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.shape[0] != s.size:
            raise ValueError("one coefficient row per speed slice required")
        if not _strictly_ascending(s):
            raise ValueError("model speeds must be strictly ascending")
        object.__setattr__(self, "speeds", s)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "torque_range", (float(self.torque_range[0]), float(self.torque_range[1])))
        object.__setattr__(self, "mode", EvalMode(self.mode))
        if not self.degree:
            object.__setattr__(self, "degree", c.shape[1] - 1)

    @classmethod
    def from_polynomials(cls, speeds, polys: Sequence[Polynomial], torque_max: float, **kw) -> "LossModel":
        n = max(p.coeffs.size for p in polys)
        C = np.zeros((len(polys), n))
        for i, p in enumerate(polys):
            C[i, : p.coeffs.size] = p.coeffs
        return cls(speeds, C, (0.0, torque_max), **kw)

    @property
    def torque_max(self) -> float:
        return self.torque_range[1]

    def slice(self, i: int) -> Polynomial:
        return Polynomial(self.coeffs[i])

    def with_mode(self, mode) -> "LossModel":
        return replace(self, mode=EvalMode(mode))

    def blended_coeffs(self, omega_m: float) -> np.ndarray:
        """Coefficients of the torque polynomial at ``omega_m`` (blend of two slices)."""
        i, w = _speed_weights(self.speeds, float(omega_m), self.mode is EvalMode.NEAREST)
        if w == 0.0:
            return self.coeffs[i]
        if w == 1.0:
            return self.coeffs[i + 1]
        return (1.0 - w) * self.coeffs[i] + w * self.coeffs[i + 1]

    def polynomial_at(self, omega_m: float) -> Polynomial:
        return Polynomial(self.blended_coeffs(omega_m))

    def to_map(self, torques) -> LossMap:
        torques = np.asarray(torques, dtype=float)
        L = np.array([np.polynomial.polynomial.polyval(torques, c) for c in self.coeffs])
        return LossMap(self.speeds, torques, L)


def model_loss(model: LossModel, omega_m: float, tau_m):
    tau = np.abs(np.asarray(tau_m, dtype=float))
    _check_torque(tau, model.torque_max)
    out = np.polynomial.polynomial.polyval(tau, model.blended_coeffs(omega_m))
    return float(out) if np.ndim(out) == 0 else out


def motor_electric_power(source, omega_m: float, tau_m):
    """Electric power [W] of one motor; negative under net regeneration."""
    if isinstance(source, LossModel):
        loss = model_loss(source, omega_m, tau_m)
    elif isinstance(source, LossMap):
        loss = interpolate_loss(source, omega_m, tau_m)
    else:
        loss = source(omega_m, tau_m)
    return omega_m * tau_m + loss


def total_energy(powers, sample_time: float) -> float:
    """Left-rectangle integral of a power trace [W], in kWh."""
    if not sample_time > 0:
        raise ValueError("sample time must be > 0")
    return float(np.sum(np.asarray(powers, dtype=float)) * sample_time / J_PER_KWH)


class MapKind(str, enum.Enum):
    PMSM_LIKE = "PMSM_LIKE"
    CUBIC_LIKE = "CUBIC_LIKE"
    SATURATING = "SATURATING"


@dataclass(frozen=True)
class SyntheticMapParams:
    """Coefficients of the synthetic loss surfaces.

    ``PMSM_LIKE``: ``c0 + c_copper*tau^2 + c_iron*w + c_windage*w^3``.
    ``CUBIC_LIKE`` adds ``c_linear*tau - c_quad*tau^2 + c_cubic*tau^3`` to the
    speed terms (single inflection; increasing iff ``c_quad^2 < 3*c_linear*c_cubic``).
    ``SATURATING`` is ``PMSM_LIKE`` plus ``c_sat*tau_sat*(1 - exp(-tau/tau_sat))``.
    """

    c0: float = 0.0
    c_copper: float = 0.0
    c_iron: float = 0.0
    c_windage: float = 0.0
    c_linear: float = 0.0
    c_quad: float = 0.0
    c_cubic: float = 0.0
    c_sat: float = 0.0
    tau_sat: float = 1.0
    speeds: tuple = tuple(np.linspace(0.0, 1000.0, 101))
    torques: tuple = tuple(np.linspace(0.0, 300.0, 61))


def synthetic_loss(kind: MapKind, p: SyntheticMapParams, omega, tau):
    omega = np.asarray(omega, dtype=float)
    tau = np.abs(np.asarray(tau, dtype=float))
    base = p.c0 + p.c_iron * omega + p.c_windage * omega**3
    if kind is MapKind.PMSM_LIKE:
        return base + p.c_copper * tau**2
    if kind is MapKind.CUBIC_LIKE:
        return base + p.c_linear * tau - p.c_quad * tau**2 + p.c_cubic * tau**3
    return base + p.c_copper * tau**2 + p.c_sat * p.tau_sat * -np.expm1(-tau / p.tau_sat)


def generate_synthetic_map(
    kind: MapKind | str,
    params: SyntheticMapParams,
    noise: float = 0.0,
    seed: int | None = 0,
) -> LossMap:
    """Evaluate a synthetic loss surface on the parameter grids.

    ``noise`` is a relative uniform perturbation (e.g. 0.05 for +-5%); the
    result is clipped at zero to stay a valid map.
    """
    kind = MapKind(kind)
    coeffs = [params.c0, params.c_copper, params.c_iron, params.c_windage, params.c_linear, params.c_cubic, params.c_sat]
    if any(c < 0 for c in coeffs) or params.c_quad < 0:
        raise ValueError("synthetic map coefficients must be >= 0")
    W, T = np.meshgrid(np.asarray(params.speeds, float), np.asarray(params.torques, float), indexing="ij")
    L = synthetic_loss(kind, params, W, T)
    if noise:
        rng = np.random.default_rng(seed)
        L = L * (1.0 + noise * rng.uniform(-1.0, 1.0, L.shape))
    return LossMap(params.speeds, params.torques, np.maximum(L, 0.0))


def fit_loss_model(
    loss_map: LossMap,
    degree: int,
    epsilon: float = DEFAULT_EPSILON,
    constrained: bool = True,
    mode: EvalMode = EvalMode.BLEND,
) -> LossModel:
    """Fit one polynomial per speed row; any failed slice rejects the model."""
    C = np.zeros((loss_map.speeds.size, degree + 1))
    meta = []
    failures = []
    for i, row in enumerate(loss_map.losses):
        data = FitDataset(loss_map.torques, row)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = fit_pseudoconvex(data, degree, epsilon) if constrained else fit_unconstrained(data, degree)
        except SolverError as exc:
            failures.append((i, exc))
            meta.append({"status": getattr(exc, "code", "ERROR")})
            continue
        C[i] = rep.polynomial.coeffs[: degree + 1]
        meta.append(rep.to_dict())
    if failures:
        i, exc = failures[0]
        raise SliceFitError(
            f"{len(failures)} slice(s) failed; first at index {i} (omega={loss_map.speeds[i]:.6g}): {exc}", i
        )
    return LossModel(
        loss_map.speeds,
        C,
        (0.0, loss_map.torque_max),
        constrained=constrained,
        degree=degree,
        epsilon=epsilon if constrained else 0.0,
        fit_meta=meta,
        mode=mode,
    )


def check_model_slices(model: LossModel, check_tol: float = 1e-9) -> list[dict]:
    """Re-verify positivity at 0 and monotonicity of every slice over the torque range."""
    lo, hi = model.torque_range
    out = []
    for i in range(model.speeds.size):
        p = model.slice(i)
        chk = exact_monotone_check(p, lo, hi, check_tol)
        p0 = float(p(0.0))
        out.append(
            {
                "index": i,
                "omega": float(model.speeds[i]),
                "p0": p0,
                "min_derivative": chk.min_derivative,
                "argmin": chk.argmin,
                "monotone": chk.monotone_nondecreasing,
                "positive": p0 > 0,
            }
        )
    return out
