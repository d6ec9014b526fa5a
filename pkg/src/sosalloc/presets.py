"""Reference motors, drivetrain scenarios and the two built-in drive cycles.

All maps are synthetic. The cubic-like motors have an inflection in torque,
which is what produces single-axle optima at low demand.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .allocator import Config
from .powertrain import DriveCycle, LossMap, MapKind, MotorSpec, SyntheticMapParams, VehicleParams, generate_synthetic_map

_SPEED_TERMS = dict(c0=100.0, c_iron=0.2, c_windage=1e-7)

MOTORS: dict[str, tuple[MapKind, SyntheticMapParams]] = {
    "pmsm-weak": (MapKind.PMSM_LIKE, SyntheticMapParams(c_copper=0.05, **_SPEED_TERMS)),
    "pmsm-strong": (MapKind.PMSM_LIKE, SyntheticMapParams(c_copper=0.10, **_SPEED_TERMS)),
    # p'(tau) >= 1 and >= 0.77 respectively
    "cubic-a": (MapKind.CUBIC_LIKE, SyntheticMapParams(c_linear=4.0, c_quad=0.03, c_cubic=1e-4, **_SPEED_TERMS)),
    "cubic-b": (MapKind.CUBIC_LIKE, SyntheticMapParams(c_linear=3.0, c_quad=0.02, c_cubic=6e-5, **_SPEED_TERMS)),
    "saturating": (MapKind.SATURATING, SyntheticMapParams(c0=50.0, c_copper=0.01, c_sat=20.0, tau_sat=30.0, c_iron=0.2)),
}

# (config, front motor, rear motor, rear uses the second gear ratio)
SCENARIOS = {
    "equal-pmsm": (Config.EQUAL, "pmsm-weak", "pmsm-weak", False),
    "unequal-pmsm": (Config.UNEQUAL, "pmsm-weak", "pmsm-strong", True),
    "equal-cubic": (Config.EQUAL, "cubic-a", "cubic-a", False),
    "unequal-cubic": (Config.UNEQUAL, "cubic-a", "cubic-b", True),
}


def motor_params(name: str, speeds=None, torques=None) -> tuple[MapKind, SyntheticMapParams]:
    try:
        kind, p = MOTORS[name]
    except KeyError:
        raise KeyError(f"unknown motor preset {name!r}; choose from {sorted(MOTORS)}") from None
    if speeds is not None:
        p = replace(p, speeds=tuple(np.asarray(speeds, float)))
    if torques is not None:
        p = replace(p, torques=tuple(np.asarray(torques, float)))
    return kind, p


def preset_map(name: str, noise: float = 0.0, seed: int = 0, speeds=None, torques=None) -> LossMap:
    kind, p = motor_params(name, speeds, torques)
    return generate_synthetic_map(kind, p, noise=noise, seed=seed)


def scenario(
    name: str,
    vehicle: VehicleParams | None = None,
    noise: float = 0.0,
    seed: int = 0,
    speeds=None,
    torques=None,
) -> tuple[Config, MotorSpec, MotorSpec]:
    """Build ``(config, front, rear)``; EQUAL scenarios share one motor object."""
    vehicle = vehicle or VehicleParams()
    config, fname, rname, second_gear = SCENARIOS[name]
    fmap = preset_map(fname, noise, seed, speeds, torques)
    front = MotorSpec(vehicle.h1, fmap, label=fname)
    if config is Config.EQUAL:
        return config, front, front
    rmap = preset_map(rname, noise, seed + 1, speeds, torques)
    rear = MotorSpec(vehicle.h2 if second_gear else vehicle.h1, rmap, label=rname)
    return config, front, rear


def _smooth(v0: float, v1: float, n: int) -> np.ndarray:
    """``n`` samples easing from ``v0`` towards ``v1`` (``v1`` reached on the last)."""
    s = np.arange(1, n + 1) / n
    return v0 + (v1 - v0) * 0.5 * (1.0 - np.cos(np.pi * s))


# (target speed m/s, transition steps, hold steps)
_SYNTHETIC_SEGMENTS = [
    (0.0, 0, 5), (8.0, 10, 20), (0.0, 8, 6),
    (14.0, 14, 30), (6.0, 8, 20), (0.0, 8, 6),
    (25.0, 25, 60), (31.0, 10, 40), (18.0, 12, 30), (22.0, 8, 40),
    (10.0, 14, 20), (16.0, 10, 25), (0.0, 16, 8),
    (12.0, 12, 35), (5.0, 10, 15), (0.0, 8, 0),
]


def synthetic_cycle(n_steps: int = 600, sample_time: float = 1.0) -> DriveCycle:
    """Mixed urban/extra-urban profile, padded with standstill to ``n_steps``."""
    v = [0.0]
    for target, ramp, hold in _SYNTHETIC_SEGMENTS:
        if ramp:
            v.extend(_smooth(v[-1], target, ramp))
        v.extend([target] * hold)
    v = np.asarray(v)
    if n_steps < v.size:
        raise ValueError(f"synthetic cycle needs at least {v.size} steps")
    v = np.concatenate([v, np.zeros(n_steps - v.size)])
    return DriveCycle("synthetic", v, sample_time)


def ramp_cycle(v_max: float = 20.0, ramp_steps: int = 40, hold_steps: int = 20) -> DriveCycle:
    up = np.linspace(0.0, v_max, ramp_steps + 1)
    v = np.concatenate([up, np.full(hold_steps, v_max), up[::-1]])
    return DriveCycle("ramp", v, 1.0)


BUILTIN_CYCLES = {"synthetic": synthetic_cycle, "ramp": ramp_cycle}


def dip_map(depth: float = 15.0, center: float = 30.0, width: float = 8.0, speeds=None, torques=None) -> LossMap:
    """Convex losses with a local dip at low torque, so the raw data decrease locally."""
    speeds = np.linspace(0.0, 1000.0, 11) if speeds is None else np.asarray(speeds, float)
    torques = np.linspace(0.0, 300.0, 61) if torques is None else np.asarray(torques, float)
    W, T = np.meshgrid(speeds, torques, indexing="ij")
    L = 100.0 + 0.2 * W + 0.02 * T**2 - depth * np.exp(-(((T - center) / width) ** 2))
    return LossMap(speeds, torques, L)
