"""CSV/JSON readers and writers for datasets, maps, vehicles, cycles and models.

Writers go through a temporary file in the target directory followed by a
rename, so readers never observe a half-written file.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .powertrain import DriveCycle, EvalMode, LossMap, LossModel, VehicleParams
from .sos import FitDataset

MODEL_FORMAT = "sosalloc.loss-model/1"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x: float) -> str:
    """Shortest repr that round-trips the float exactly."""
    return repr(float(x))


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _read_rows(path) -> list[tuple[int, list[str]]]:
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    out = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        out.append((lineno, [c.strip() for c in row]))
    if not out:
        raise DataFormatError(f"{path}: empty file")
    return out


def _floats(lineno: int, cells: list[str], n: int | None = None) -> list[float]:
    if n is not None and len(cells) != n:
        raise DataFormatError(f"expected {n} fields, got {len(cells)}", lineno)
    try:
        vals = [float(c) for c in cells]
    except ValueError as exc:
        raise DataFormatError(f"non-numeric field ({exc})", lineno) from None
    if not all(np.isfinite(vals)):
        raise DataFormatError("non-finite value", lineno)
    return vals


def _expect_header(rows, expected: list[str], path) -> None:
    lineno, header = rows[0]
    if [h.lower() for h in header] != expected:
        raise DataFormatError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}", lineno)


def read_dataset(path) -> FitDataset:
    rows = _read_rows(path)
    _expect_header(rows, ["torque_nm", "loss_w"], path)
    data = [_floats(n, r, 2) for n, r in rows[1:]]
    if not data:
        raise DataFormatError(f"{path}: no samples")
    a = np.array(data)
    try:
        return FitDataset(a[:, 0], a[:, 1])
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def write_dataset(path, data: FitDataset) -> None:
    atomic_write_text(path, rows_to_csv(["torque_nm", "loss_w"], zip(data.x.tolist(), data.y.tolist())))


def read_loss_map(path) -> LossMap:
    """Wide form (``omega_radps,<torques...>``) or long form (``omega_radps,torque_nm,loss_w``)."""
    rows = _read_rows(path)
    lineno, header = rows[0]
    if not header or header[0].lower() != "omega_radps":
        raise DataFormatError(f"{path}: first header field must be omega_radps", lineno)
    if [h.lower() for h in header] == ["omega_radps", "torque_nm", "loss_w"]:
        return _read_long_map(rows, path)
    torques = _floats(lineno, header[1:])
    speeds, losses = [], []
    for n, r in rows[1:]:
        vals = _floats(n, r, len(header))
        speeds.append(vals[0])
        losses.append(vals[1:])
    try:
        return LossMap(speeds, torques, np.array(losses).reshape(len(speeds), len(torques)))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def _read_long_map(rows, path) -> LossMap:
    pts = {}
    for n, r in rows[1:]:
        w, t, l = _floats(n, r, 3)
        if (w, t) in pts:
            raise DataFormatError(f"duplicate point ({w}, {t})", n)
        pts[(w, t)] = l
    speeds = sorted({k[0] for k in pts})
    torques = sorted({k[1] for k in pts})
    if len(pts) != len(speeds) * len(torques):
        raise DataFormatError(f"{path}: long-form map is not a full grid")
    L = np.array([[pts[(w, t)] for t in torques] for w in speeds])
    try:
        return LossMap(speeds, torques, L)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def loss_map_csv(m: LossMap) -> str:
    rows = ([float(w), *map(float, row)] for w, row in zip(m.speeds, m.losses))
    return rows_to_csv(["omega_radps", *map(fmt, m.torques)], rows)


def write_loss_map(path, m: LossMap) -> None:
    atomic_write_text(path, loss_map_csv(m))


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def vehicle_from_dict(d: dict) -> VehicleParams:
    known = set(VehicleParams.__dataclass_fields__)
    extra = set(d) - known
    if extra:
        raise DataFormatError(f"unknown vehicle fields: {sorted(extra)}")
    try:
        return VehicleParams(**{k: float(v) for k, v in d.items()})
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"vehicle parameters: {exc}") from exc


def read_vehicle(path) -> VehicleParams:
    return vehicle_from_dict(_read_json(path))


def read_cycle(path, name: str | None = None) -> DriveCycle:
    rows = _read_rows(path)
    _expect_header(rows, ["t_s", "v_mps"], path)
    data = np.array([_floats(n, r, 2) for n, r in rows[1:]]).reshape(-1, 2)
    if data.shape[0] < 1:
        raise DataFormatError(f"{path}: no samples")
    t, v = data[:, 0], data[:, 1]
    ts = 1.0
    if t.size > 1:
        dt = np.diff(t)
        ts = float(dt[0])
        bad = np.flatnonzero(np.abs(dt - ts) > 1e-9 * max(1.0, abs(ts)))
        if not ts > 0 or bad.size:
            lineno = rows[int(bad[0]) + 2][0] if bad.size else rows[1][0]
            raise DataFormatError("time column must be uniform and increasing", lineno)
    try:
        return DriveCycle(name or Path(path).stem, v, ts)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def cycle_csv(c: DriveCycle) -> str:
    return rows_to_csv(["t_s", "v_mps"], zip(c.times.tolist(), c.speeds.tolist()))


def model_to_dict(m: LossModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "degree": int(m.degree),
        "constrained": bool(m.constrained),
        "epsilon": float(m.epsilon),
        "mode": m.mode.value,
        "torque_range": [float(m.torque_range[0]), float(m.torque_range[1])],
        "speeds": [float(s) for s in m.speeds],
        "coeffs": [[float(c) for c in row] for row in m.coeffs],
        "fit_meta": m.fit_meta,
    }


def model_from_dict(d: dict) -> LossModel:
    if d.get("format") != MODEL_FORMAT:
        raise DataFormatError(f"not a loss model file (format {d.get('format')!r})")
    try:
        return LossModel(
            np.array(d["speeds"], dtype=float),
            np.array(d["coeffs"], dtype=float),
            tuple(d["torque_range"]),
            constrained=bool(d["constrained"]),
            degree=int(d["degree"]),
            epsilon=float(d["epsilon"]),
            fit_meta=list(d.get("fit_meta", [])),
            mode=EvalMode(d.get("mode", "blend")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed loss model: {exc!r}") from exc


def write_model(path, m: LossModel) -> None:
    write_json(path, model_to_dict(m))


def read_model(path) -> LossModel:
    return model_from_dict(_read_json(path))


def read_allocation_batch(path) -> list[tuple[int, float, float]]:
    """Rows ``(line, omega_w, tau_ref)`` of a batch allocation CSV."""
    rows = _read_rows(path)
    _expect_header(rows, ["omega_w", "tau_ref"], path)
    return [(n, *_floats(n, r, 2)) for n, r in rows[1:]]
