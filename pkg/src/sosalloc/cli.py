"""``sosalloc`` command-line entry point.

Exit codes: 0 ok, 2 bad input or I/O, 3 fit failure, 4 degree cap,
5 too many infeasible-demand steps, 6 model validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .allocator import AllocationQuery, Config, Method, allocate
from .cyclesim import (
    ModelPair,
    SimConfig,
    SimMethod,
    comparison_csv,
    comparison_table,
    fit_models,
    run_cycle,
    sigma_map,
    sigma_map_csv,
    write_report,
)
from .errors import DataFormatError, DegreeCapError, SliceFitError, SolverError, SosAllocError
from .io import (
    atomic_write_text,
    loss_map_csv,
    read_allocation_batch,
    read_cycle,
    read_loss_map,
    read_model,
    read_vehicle,
    rows_to_csv,
    vehicle_from_dict,
    write_model,
)
from .powertrain import (
    EvalMode,
    MapKind,
    MotorSpec,
    SyntheticMapParams,
    VehicleParams,
    check_model_slices,
    fit_loss_model,
    generate_synthetic_map,
)
from .presets import BUILTIN_CYCLES, MOTORS, preset_map
from .sos import DEFAULT_EPSILON, MAX_DEGREE
from .validate import validate_model

EXIT_OK, EXIT_INPUT, EXIT_FIT, EXIT_DEGREE, EXIT_INFEASIBLE, EXIT_INVALID = 0, 2, 3, 4, 5, 6


class MotorConfig(BaseModel):
    """One motor: a loss map (CSV path or preset name) behind a gear ratio."""

    model_config = ConfigDict(extra="forbid")
    map: str | None = Field(None, description="loss map CSV (wide or long form), relative to the config file")
    preset: str | None = Field(None, description=f"synthetic preset: {', '.join(sorted(MOTORS))}")
    noise: float = Field(0.0, ge=0.0, description="relative uniform noise added to a preset map")
    gear_ratio: float | None = Field(None, gt=0.0, description="defaults to h1 (front) or h2 (rear) of the vehicle")
    max_torque_curve: list[tuple[float, float]] | None = Field(None, description="(omega_m rad/s, tau_max N*m) rows")
    label: str = ""
    model_up: str | None = Field(None, description="pre-fitted unconstrained model JSON")
    model_pp: str | None = Field(None, description="pre-fitted pseudoconvex model JSON")


class SimFileConfig(BaseModel):
    """Input of ``sosalloc simulate`` and ``sosalloc sweep``."""

    model_config = ConfigDict(extra="forbid")
    vehicle: str | dict | None = Field(None, description="vehicle JSON path or inline object; default Table-1 values")
    config: Literal["EQUAL", "UNEQUAL"]
    front: MotorConfig
    rear: MotorConfig | None = Field(None, description="omit for EQUAL (same motor front and rear)")
    methods: list[Literal["GS", "UP", "PP", "UP_KKT", "PP_KKT"]] = Field(min_length=1)
    cycles: list[str] = Field(["synthetic"], min_length=1, description="built-in name (synthetic, ramp) or t_s,v_mps CSV path")
    degree: int = Field(10, ge=1)
    epsilon: float = Field(DEFAULT_EPSILON, ge=0.0)
    grid_step: float = Field(1e-3, gt=0.0, le=0.5)
    seed: int = 0
    eval_mode: Literal["blend", "nearest"] = "blend"
    output_dir: str = Field(".", description="relative to the config file")


class LossModelFile(BaseModel):
    """JSON written by ``sosalloc fit``."""

    format: Literal["sosalloc.loss-model/1"]
    degree: int
    constrained: bool
    epsilon: float
    mode: Literal["blend", "nearest"]
    torque_range: tuple[float, float]
    speeds: list[float]
    coeffs: list[list[float]]
    fit_meta: list[dict]


def schemas() -> dict:
    return {"model": LossModelFile.model_json_schema(), "config": SimFileConfig.model_json_schema()}


class _InputError(Exception):
    pass


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def _load_vehicle(spec, base: Path) -> VehicleParams:
    if spec is None:
        return VehicleParams()
    if isinstance(spec, dict):
        return vehicle_from_dict(spec)
    return read_vehicle(_resolve(base, spec))


def _motor(mc: MotorConfig, gear: float, base: Path, seed: int) -> MotorSpec:
    if (mc.map is None) == (mc.preset is None):
        raise _InputError("each motor needs exactly one of 'map' or 'preset'")
    if mc.preset is not None:
        if mc.preset not in MOTORS:
            raise _InputError(f"unknown preset {mc.preset!r}")
        lmap = preset_map(mc.preset, mc.noise, seed)
    else:
        lmap = read_loss_map(_resolve(base, mc.map))
    return MotorSpec(mc.gear_ratio or gear, lmap, mc.max_torque_curve, mc.label or (mc.preset or Path(mc.map).stem))


def _load_cycle(name: str, base: Path):
    if name in BUILTIN_CYCLES:
        return BUILTIN_CYCLES[name]()
    return read_cycle(_resolve(base, name))


def _load_config(path: str, seed: int | None):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    try:
        cfg = SimFileConfig.model_validate(raw)
    except ValidationError as exc:
        raise _InputError(f"{path}: {exc}") from None
    if cfg.degree > MAX_DEGREE:
        raise DegreeCapError(f"degree {cfg.degree} exceeds the cap of {MAX_DEGREE}")
    base = path.parent
    seed = cfg.seed if seed is None else seed
    vehicle = _load_vehicle(cfg.vehicle, base)
    front = _motor(cfg.front, vehicle.h1, base, seed)
    if cfg.rear is None:
        if cfg.config != "EQUAL":
            raise _InputError("UNEQUAL configuration needs a 'rear' motor")
        rear, rear_cfg = front, cfg.front
    else:
        rear, rear_cfg = _motor(cfg.rear, vehicle.h2, base, seed + 1), cfg.rear
    return cfg, base, seed, vehicle, front, rear, rear_cfg


def _models(cfg: SimFileConfig, sim: SimConfig, base: Path, rear_cfg: MotorConfig) -> dict:
    """Load pre-fitted models named in the config, fit whatever is missing."""
    out = {}
    fitted = None
    for fam in sorted({SimMethod(m).family for m in cfg.methods if SimMethod(m).family}):
        key = "model_up" if fam == "UP" else "model_pp"
        fp, rp = getattr(cfg.front, key), getattr(rear_cfg, key)
        if fp and rp:
            out[fam] = ModelPair(read_model(_resolve(base, fp)), read_model(_resolve(base, rp)))
            continue
        if fitted is None:
            fitted = fit_models(sim)
        out[fam] = fitted[fam]
    return out


def _parse_grid(text: str) -> np.ndarray:
    try:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(n))
    except ValueError:
        raise _InputError(f"grid must be start:stop:count, got {text!r}") from None


def cmd_fit(args) -> int:
    if not 1 <= args.degree <= MAX_DEGREE:
        if args.degree > MAX_DEGREE:
            raise DegreeCapError(f"degree {args.degree} exceeds the cap of {MAX_DEGREE}")
        raise _InputError("degree must be >= 1")
    lmap = read_loss_map(args.map)
    model = fit_loss_model(lmap, args.degree, args.epsilon, args.constrained, EvalMode(args.mode))
    write_model(args.output, model)
    if args.report:
        rows = [
            [c["index"], c["omega"], meta.get("rmse", float("nan")), c["min_derivative"], c["p0"], int(c["monotone"])]
            for c, meta in zip(check_model_slices(model), model.fit_meta)
        ]
        atomic_write_text(args.report, rows_to_csv(["slice", "omega_radps", "rmse_w", "min_derivative", "p0_w", "monotone"], rows))
    print(f"fitted {model.speeds.size} slices, degree {model.degree}, constrained={model.constrained} -> {args.output}")
    return EXIT_OK


def _motor_from_args(gear, map_path, model_path, curve_path):
    lmap = read_loss_map(map_path) if map_path else None
    model = read_model(model_path) if model_path else None
    curve = None
    if curve_path:
        curve = json.loads(Path(curve_path).read_text())
    return MotorSpec(gear, lmap, curve), model


def cmd_allocate(args) -> int:
    vehicle = read_vehicle(args.vehicle) if args.vehicle else VehicleParams()
    config = Config(args.config)
    fgear = args.front_gear or vehicle.h1
    front, fmodel = _motor_from_args(fgear, args.front_map, args.front_model, args.front_curve)
    if config is Config.EQUAL and not (args.rear_map or args.rear_model):
        rear, rmodel = front, fmodel
    else:
        rgear = args.rear_gear or (fgear if config is Config.EQUAL else vehicle.h2)
        rear, rmodel = _motor_from_args(rgear, args.rear_map, args.rear_model, args.rear_curve)
    method = Method(args.method)
    kw = {"grid_step": args.grid_step} if method is Method.GRID else {}
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    if method is Method.GRADIENT:
        kw["rng"] = rng

    def solve(w, T):
        q = AllocationQuery(w, T, config, front, rear, fmodel, rmodel)
        return allocate(q, method, **kw)

    if args.batch:
        out = []
        for n, w, T in read_allocation_batch(args.batch):
            try:
                res = solve(w, T)
                out.append([res.sigma, res.loss_total, res.method.value, res.solve_time])
            except SosAllocError as exc:
                print(f"line {n}: {exc}", file=sys.stderr)
                out.append(["", "", method.value, ""])
        text = rows_to_csv(["sigma", "loss_w", "method", "solve_time_s"], out)
        if args.output:
            atomic_write_text(args.output, text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    if args.omega_w is None or args.tau_ref is None:
        raise _InputError("--omega-w and --tau-ref are required without --batch")
    res = solve(args.omega_w, args.tau_ref)
    text = json.dumps(res.to_dict(), indent=2) + "\n"
    if args.output:
        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _sim_config(cfg, vehicle, front, rear, cycle, seed):
    return SimConfig(
        vehicle, Config(cfg.config), front, rear, tuple(cfg.methods), cycle,
        degree=cfg.degree, epsilon=cfg.epsilon, grid_step=cfg.grid_step, seed=seed, eval_mode=EvalMode(cfg.eval_mode),
    )


def cmd_simulate(args) -> int:
    cfg, base, seed, vehicle, front, rear, rear_cfg = _load_config(args.config, args.seed)
    out_dir = Path(args.out_dir) if args.out_dir else _resolve(base, cfg.output_dir)
    if not out_dir.is_dir():
        raise _InputError(f"output directory {out_dir} does not exist")
    cycles = [_load_cycle(c, base) for c in cfg.cycles]
    models = None
    reports = []
    for cycle in cycles:
        sim = _sim_config(cfg, vehicle, front, rear, cycle, seed)
        if models is None:
            models = _models(cfg, sim, base, rear_cfg)
        rep = run_cycle(sim, models)
        write_report(rep, out_dir)
        reports.append(rep)
    table = comparison_table(reports)
    atomic_write_text(out_dir / "comparison.csv", comparison_csv(reports))
    atomic_write_text(out_dir / "comparison.txt", table)
    sys.stdout.write(table)
    worst = max(r.infeasible_steps for r in reports)
    if worst > args.max_infeasible:
        print(f"{worst} infeasible-demand step(s) clamped (limit {args.max_infeasible})", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, base, seed, vehicle, front, rear, rear_cfg = _load_config(args.config, args.seed)
    method = SimMethod(args.method)
    cfg.methods = [method.value]
    sim = _sim_config(cfg, vehicle, front, rear, BUILTIN_CYCLES["ramp"](), seed)
    models = _models(cfg, sim, base, rear_cfg) if method.family else None
    wg, tg = _parse_grid(args.omega_grid), _parse_grid(args.tau_grid)
    sig = sigma_map(sim, wg, tg, method, models)
    atomic_write_text(args.output, sigma_map_csv(wg, tg, sig, method))
    missing = int(np.isnan(sig).sum())
    print(f"{sig.size} cells, {missing} out of range -> {args.output}")
    return EXIT_OK


def cmd_genmap(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.preset:
        if args.preset not in MOTORS:
            raise _InputError(f"unknown preset {args.preset!r}; choose from {sorted(MOTORS)}")
        lmap = preset_map(args.preset, args.noise, seed)
    else:
        fields = {k: getattr(args, k) for k in ("c0", "c_copper", "c_iron", "c_windage", "c_linear", "c_quad", "c_cubic", "c_sat", "tau_sat")}
        params = SyntheticMapParams(
            **fields, speeds=tuple(_parse_grid(args.speeds)), torques=tuple(_parse_grid(args.torques))
        )
        try:
            lmap = generate_synthetic_map(MapKind(args.kind), params, args.noise, seed)
        except ValueError as exc:
            raise _InputError(str(exc)) from None
    if args.long:
        rows = [[float(w), float(t), float(l)] for w, row in zip(lmap.speeds, lmap.losses) for t, l in zip(lmap.torques, row)]
        text = rows_to_csv(["omega_radps", "torque_nm", "loss_w"], rows)
    else:
        text = loss_map_csv(lmap)
    atomic_write_text(args.output, text)
    print(f"{lmap.speeds.size} x {lmap.torques.size} map -> {args.output}")
    return EXIT_OK


def cmd_validate(args) -> int:
    model = read_model(args.model)
    lmap = read_loss_map(args.map) if args.map else None
    report = validate_model(model, lmap)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sosalloc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="store_true", help="print version as JSON and exit")
    p.add_argument("--schema", action="store_true", help="print JSON schemas of model and config files and exit")
    p.add_argument("--seed", type=int, default=None, help="seed for every stochastic step (overrides config)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every stochastic step")
    sub = p.add_subparsers(dest="command")

    f = sub.add_parser("fit", parents=[common], help="fit a per-speed polynomial loss model to a loss map")
    f.add_argument("map", help="loss map CSV")
    f.add_argument("--degree", type=int, default=10)
    f.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="derivative margin, W per N*m")
    g = f.add_mutually_exclusive_group()
    g.add_argument("--constrained", dest="constrained", action="store_true", default=True, help="positive and monotone fit (default)")
    g.add_argument("--unconstrained", dest="constrained", action="store_false", help="plain least squares")
    f.add_argument("--mode", choices=[m.value for m in EvalMode], default="blend", help="between-slice evaluation")
    f.add_argument("-o", "--output", required=True, help="model JSON")
    f.add_argument("--report", help="per-slice rmse / min-derivative CSV")
    f.set_defaults(func=cmd_fit)

    a = sub.add_parser("allocate", parents=[common], help="optimal front/rear split for one query or a batch CSV")
    a.add_argument("--omega-w", type=float, help="wheel speed, rad/s")
    a.add_argument("--tau-ref", type=float, help="per-side wheel torque demand, N*m")
    a.add_argument("--batch", help="CSV with header omega_w,tau_ref")
    a.add_argument("--method", choices=[m.value for m in Method], default="KKT")
    a.add_argument("--config", choices=[c.value for c in Config], default="UNEQUAL")
    a.add_argument("--vehicle", help="vehicle JSON (gear ratio defaults)")
    for side in ("front", "rear"):
        a.add_argument(f"--{side}-model", help=f"{side} loss model JSON (GRADIENT, KKT)")
        a.add_argument(f"--{side}-map", help=f"{side} loss map CSV (GRID)")
        a.add_argument(f"--{side}-gear", type=float, help=f"{side} gear ratio")
        a.add_argument(f"--{side}-curve", help=f"{side} max-torque curve JSON [[omega_m, tau_max], ...]")
    a.add_argument("--grid-step", type=float, default=1e-3)
    a.add_argument("-o", "--output", help="write result here instead of stdout")
    a.set_defaults(func=cmd_allocate)

    s = sub.add_parser("sweep", parents=[common], help="sigma map over an (omega_w, tau_ref) grid")
    s.add_argument("config", help="simulation config JSON")
    s.add_argument("--method", choices=[m.value for m in SimMethod], default="PP_KKT")
    s.add_argument("--omega-grid", default="1:100:50", help="start:stop:count, rad/s")
    s.add_argument("--tau-grid", default="10:1000:50", help="start:stop:count, N*m")
    s.add_argument("-o", "--output", required=True, help="long-form CSV omega_w,tau_ref,sigma,method")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("simulate", parents=[common], help="run drive cycles with every configured method")
    m.add_argument("config", help="simulation config JSON")
    m.add_argument("--out-dir", help="override output_dir of the config")
    m.add_argument("--max-infeasible", type=int, default=0, help="tolerated clamped-demand steps per method")
    m.set_defaults(func=cmd_simulate)

    gm = sub.add_parser("genmap", parents=[common], help="write a synthetic loss map CSV")
    gm.add_argument("--preset", help=f"one of {', '.join(sorted(MOTORS))}")
    gm.add_argument("--kind", choices=[k.value for k in MapKind], default="PMSM_LIKE")
    for name, default in (("c0", 0.0), ("c_copper", 0.0), ("c_iron", 0.0), ("c_windage", 0.0), ("c_linear", 0.0),
                          ("c_quad", 0.0), ("c_cubic", 0.0), ("c_sat", 0.0), ("tau_sat", 1.0)):
        gm.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float, default=default)
    gm.add_argument("--speeds", default="0:1000:101", help="start:stop:count, rad/s")
    gm.add_argument("--torques", default="0:300:61", help="start:stop:count, N*m")
    gm.add_argument("--noise", type=float, default=0.0, help="relative uniform noise, e.g. 0.05")
    gm.add_argument("--long", action="store_true", help="long-form CSV instead of wide")
    gm.add_argument("-o", "--output", required=True)
    gm.set_defaults(func=cmd_genmap)

    v = sub.add_parser("validate", parents=[common], help="re-check positivity and monotonicity of a model")
    v.add_argument("model", help="model JSON")
    v.add_argument("map", nargs="?", help="loss map CSV the model was fitted to")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(json.dumps({"name": "sosalloc", "version": __version__}))
        return EXIT_OK
    if args.schema:
        print(json.dumps(schemas(), indent=2))
        return EXIT_OK
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_INPUT
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except DegreeCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGREE
    except (SliceFitError, SolverError) as exc:
        print(f"error: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (DataFormatError, _InputError, OSError, SosAllocError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
