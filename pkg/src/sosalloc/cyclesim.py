"""Drive-cycle energy simulation and method comparison.

Every method decides the split from its own loss information (raw maps for
GS, fitted models otherwise) but energy is always accounted on the raw maps.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocator import AllocationQuery, Config, capability, same_motor, solve_gradient, solve_gridsearch, solve_kkt
from .errors import SosAllocError
from .io import atomic_write_text, rows_to_csv
from .powertrain import (
    DriveCycle,
    EvalMode,
    LossModel,
    MotorSpec,
    VehicleParams,
    cycle_torque_demand,
    fit_loss_model,
    interpolate_loss,
    total_energy,
)
from .sos import DEFAULT_EPSILON


class SimMethod(str, enum.Enum):
    GS = "GS"
    UP = "UP"
    PP = "PP"
    UP_KKT = "UP_KKT"
    PP_KKT = "PP_KKT"

    @property
    def family(self) -> str | None:
        """Model family the method decides with (None for the raw-map oracle)."""
        return None if self is SimMethod.GS else self.value.split("_")[0]

    @property
    def kkt(self) -> bool:
        return self.value.endswith("_KKT")


METHOD_ORDER = list(SimMethod)
TRACE_HEADER = ["t_s", "v_mps", "omega_w", "tau_ref", "sigma", "p_el_w"]


@dataclass(frozen=True)
class ModelPair:
    front: LossModel
    rear: LossModel


@dataclass(frozen=True)
class SimConfig:
    vehicle: VehicleParams
    config: Config
    front: MotorSpec
    rear: MotorSpec
    methods: tuple
    cycle: DriveCycle
    degree: int = 10
    epsilon: float = DEFAULT_EPSILON
    grid_step: float = 1e-3
    seed: int = 0
    eval_mode: EvalMode = EvalMode.BLEND

    def __post_init__(self):
        methods = tuple(SimMethod(m) for m in self.methods)
        if not methods:
            raise ValueError("at least one method required")
        if len(set(methods)) != len(methods):
            raise ValueError("duplicate methods")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "config", Config(self.config))
        object.__setattr__(self, "eval_mode", EvalMode(self.eval_mode))
        if self.front.loss_map is None or self.rear.loss_map is None:
            raise ValueError("both motors need raw loss maps for accounting")
        if self.config is Config.EQUAL and not same_motor(self.front, self.rear):
            raise ValueError("EQUAL configuration requires identical front and rear motors")


@dataclass
class MethodResult:
    method: SimMethod
    energy_kwh: float
    delta_pct: float | None
    t: np.ndarray
    v: np.ndarray
    omega_w: np.ndarray
    tau_ref: np.ndarray
    sigma: np.ndarray
    p_el: np.ndarray
    solve_times: np.ndarray
    infeasible_steps: int = 0
    nonconverged_steps: int = 0

    @property
    def mean_solve_time(self) -> float:
        return float(np.mean(self.solve_times)) if self.solve_times.size else 0.0

    @property
    def max_solve_time(self) -> float:
        return float(np.max(self.solve_times)) if self.solve_times.size else 0.0

    def trace_csv(self) -> str:
        cols = (self.t, self.v, self.omega_w, self.tau_ref, self.sigma, self.p_el)
        return rows_to_csv(TRACE_HEADER, zip(*(c.tolist() for c in cols)))

    def summary(self) -> dict:
        return {
            "energy_kwh": self.energy_kwh,
            "delta_pct": self.delta_pct,
            "mean_solve_time_s": self.mean_solve_time,
            "max_solve_time_s": self.max_solve_time,
            "infeasible_steps": self.infeasible_steps,
            "nonconverged_steps": self.nonconverged_steps,
            "steps": int(self.t.size),
        }


@dataclass
class SimReport:
    cycle: str
    config: Config
    results: dict = field(default_factory=dict)

    def energy(self, method) -> float:
        return self.results[SimMethod(method)].energy_kwh

    def to_dict(self) -> dict:
        return {
            "cycle": self.cycle,
            "config": self.config.value,
            "methods": {m.value: r.summary() for m, r in self.results.items()},
        }

    @property
    def infeasible_steps(self) -> int:
        return max((r.infeasible_steps for r in self.results.values()), default=0)


def fit_models(config: SimConfig) -> dict[str, ModelPair]:
    """Fit the UP and/or PP model pairs the configured methods need."""
    out = {}
    for fam in sorted({m.family for m in config.methods if m.family}):
        constrained = fam == "PP"
        cache = {}

        def fit(spec: MotorSpec):
            key = id(spec.loss_map)
            if key not in cache:
                cache[key] = fit_loss_model(spec.loss_map, config.degree, config.epsilon, constrained, config.eval_mode)
            return cache[key]

        out[fam] = ModelPair(fit(config.front), fit(config.rear))
    return out


def _standstill(omega_w: float, tau_ref: float) -> bool:
    return omega_w == 0.0 and tau_ref == 0.0


def _side_power(front: MotorSpec, rear: MotorSpec, omega_w: float, tau_ref: float, sigma: float) -> float:
    """Electric power of one side's two motors accounted on the raw maps."""
    wf, wr = front.gear_ratio * omega_w, rear.gear_ratio * omega_w
    tf = sigma * tau_ref / front.gear_ratio
    tr = (1.0 - sigma) * tau_ref / rear.gear_ratio
    return wf * tf + interpolate_loss(front.loss_map, wf, tf) + wr * tr + interpolate_loss(rear.loss_map, wr, tr)


def run_method(
    config: SimConfig,
    method: SimMethod,
    models: dict[str, ModelPair] | None = None,
    demand=None,
) -> MethodResult:
    method = SimMethod(method)
    demand = demand if demand is not None else cycle_torque_demand(config.vehicle, config.cycle)
    pair = None
    if method.family:
        if models is None or method.family not in models:
            raise SosAllocError(f"method {method.value} needs fitted {method.family} models")
        pair = models[method.family]
    rng = np.random.default_rng([config.seed, METHOD_ORDER.index(method)])
    n = demand.t.size
    sigma = np.empty(n)
    p_el = np.empty(n)
    tau_used = np.empty(n)
    times = []
    infeasible = nonconv = 0
    front, rear = config.front, config.rear
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k in range(n):
            w, T = float(demand.omega_w[k]), float(demand.tau_ref[k])
            if _standstill(w, T):
                sigma[k], p_el[k], tau_used[k] = 0.5, 0.0, 0.0
                continue
            q = AllocationQuery(
                w, T, config.config, front, rear, pair.front if pair else None, pair.rear if pair else None
            )
            cap = capability(q, use_maps=pair is None)
            if abs(T) > cap:
                infeasible += 1
                T = math.copysign(cap * (1.0 - 1e-12), T)
                q = AllocationQuery(w, T, q.config, front, rear, q.front_model, q.rear_model)
            if method is SimMethod.GS:
                res = solve_gridsearch(q, config.grid_step)
            elif method.kkt:
                res = solve_kkt(q)
            else:
                res = solve_gradient(q, rng=rng)
                nonconv += not res.converged
            times.append(res.solve_time)
            sigma[k] = res.sigma
            tau_used[k] = T
            p_el[k] = 2.0 * _side_power(front, rear, w, T, res.sigma)
    return MethodResult(
        method=method,
        energy_kwh=total_energy(p_el, config.cycle.sample_time),
        delta_pct=None,
        t=demand.t,
        v=demand.v,
        omega_w=demand.omega_w,
        tau_ref=tau_used,
        sigma=sigma,
        p_el=p_el,
        solve_times=np.asarray(times),
        infeasible_steps=infeasible,
        nonconverged_steps=nonconv,
    )


def run_cycle(config: SimConfig, models: dict[str, ModelPair] | None = None) -> SimReport:
    """Simulate every configured method; fits models on demand when not supplied."""
    if models is None and any(m.family for m in config.methods):
        models = fit_models(config)
    demand = cycle_torque_demand(config.vehicle, config.cycle)
    report = SimReport(config.cycle.name, config.config)
    for m in config.methods:
        report.results[m] = run_method(config, m, models, demand)
    gs = report.results.get(SimMethod.GS)
    for r in report.results.values():
        if gs is not None and gs.energy_kwh != 0.0:
            r.delta_pct = 100.0 * (r.energy_kwh - gs.energy_kwh) / abs(gs.energy_kwh)
        elif gs is not None:
            r.delta_pct = 0.0
    return report


def sigma_map(
    config: SimConfig,
    omega_grid,
    tau_grid,
    method: SimMethod,
    models: dict[str, ModelPair] | None = None,
) -> np.ndarray:
    """Optimal ratio per ``(omega_w, tau_ref)`` cell; NaN where the cell is out of range."""
    method = SimMethod(method)
    pair = models[method.family] if method.family else None
    rng = np.random.default_rng([config.seed, METHOD_ORDER.index(method)])
    omega_grid = np.asarray(omega_grid, float)
    tau_grid = np.asarray(tau_grid, float)
    out = np.full((omega_grid.size, tau_grid.size), np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for i, w in enumerate(omega_grid):
            for j, T in enumerate(tau_grid):
                q = AllocationQuery(
                    float(w), float(T), config.config, config.front, config.rear,
                    pair.front if pair else None, pair.rear if pair else None,
                )
                try:
                    if method is SimMethod.GS:
                        res = solve_gridsearch(q, config.grid_step)
                    elif method.kkt:
                        res = solve_kkt(q)
                    else:
                        res = solve_gradient(q, rng=rng)
                except SosAllocError:
                    continue
                out[i, j] = res.sigma
    return out


def sigma_map_csv(omega_grid, tau_grid, sig: np.ndarray, method) -> str:
    rows = []
    for i, w in enumerate(omega_grid):
        for j, T in enumerate(tau_grid):
            s = sig[i, j]
            rows.append([float(w), float(T), "" if np.isnan(s) else float(s), SimMethod(method).value])
    return rows_to_csv(["omega_w", "tau_ref", "sigma", "method"], rows)


def comparison_rows(reports: list[SimReport]) -> list[dict]:
    rows = []
    for rep in reports:
        for m, r in rep.results.items():
            rows.append({"method": m.value, "cycle": rep.cycle, "energy_kwh": r.energy_kwh, "delta_pct": r.delta_pct})
    return rows


def comparison_csv(reports: list[SimReport]) -> str:
    rows = comparison_rows(reports)
    return rows_to_csv(
        ["method", "cycle", "energy_kwh", "delta_pct"],
        ([r["method"], r["cycle"], r["energy_kwh"], "" if r["delta_pct"] is None else r["delta_pct"]] for r in rows),
    )


def comparison_table(reports: list[SimReport]) -> str:
    """Aligned text: one row per method, one column per cycle, ``kWh (+x.xx%)``."""
    cycles = [r.cycle for r in reports]
    methods = [m for m in METHOD_ORDER if any(m in r.results for r in reports)]
    cells = [["Method", *cycles]]
    for m in methods:
        row = [m.value]
        for rep in reports:
            r = rep.results.get(m)
            if r is None:
                row.append("-")
            elif r.delta_pct is None:
                row.append(f"{r.energy_kwh:.4f}")
            else:
                row.append(f"{r.energy_kwh:.4f} ({r.delta_pct:+.2f}%)")
        cells.append(row)
    widths = [max(len(row[c]) for row in cells) for c in range(len(cells[0]))]
    lines = ["  ".join(c.ljust(wd) if i == 0 else c.rjust(wd) for i, (c, wd) in enumerate(zip(row, widths))) for row in cells]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    return "\n".join(lines) + "\n"


def write_report(report: SimReport, out_dir, prefix: str | None = None) -> list:
    """Write ``<prefix>_report.json`` and one trace CSV per method; returns the paths."""
    out_dir = Path(out_dir)
    prefix = prefix or report.cycle
    paths = []
    for m, r in report.results.items():
        p = out_dir / f"{prefix}_trace_{m.value}.csv"
        atomic_write_text(p, r.trace_csv())
        paths.append(p)
    p = out_dir / f"{prefix}_report.json"
    atomic_write_text(p, json.dumps(report.to_dict(), indent=2) + "\n")
    paths.append(p)
    return paths


__all__ = [
    "SimMethod", "SimConfig", "SimReport", "MethodResult", "ModelPair", "fit_models", "run_cycle",
    "run_method", "sigma_map", "sigma_map_csv", "comparison_csv", "comparison_table", "write_report",
]
