"""Re-verification of stored loss models against their certificates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .powertrain import LossMap, LossModel, check_model_slices

#: absolute slack on the certified derivative margin
MARGIN_TOL = 1e-6


@dataclass
class ValidationReport:
    slices: list
    problems: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def lines(self) -> list[str]:
        out = []
        if self.slices:
            worst_d = min(self.slices, key=lambda c: c["min_derivative"])
            worst_p = min(self.slices, key=lambda c: c["p0"])
            out.append(
                f"worst min-derivative: slice {worst_d['index']} (omega={worst_d['omega']:.6g}) "
                f"{worst_d['min_derivative']:.6g} at tau={worst_d['argmin']:.6g}"
            )
            out.append(f"worst p(0): slice {worst_p['index']} (omega={worst_p['omega']:.6g}) {worst_p['p0']:.6g}")
        out.extend(f"VIOLATION {p}" for p in self.problems)
        out.append("OK" if self.ok else f"FAILED: {len(self.problems)} violation(s)")
        return out


def validate_model(model: LossModel, loss_map: LossMap | None = None) -> ValidationReport:
    """Check ``p(0) > 0`` and ``p' >= eps`` (``>= 0`` for unconstrained models) on every slice.

    With ``loss_map`` the speed grid and torque range must also match the
    map the model claims to be fitted to.
    """
    checks = check_model_slices(model)
    rep = ValidationReport(checks)
    if loss_map is not None:
        if loss_map.speeds.shape != model.speeds.shape or not np.array_equal(loss_map.speeds, model.speeds):
            rep.problems.append("speed grid differs from the loss map")
        if model.torque_range[1] != loss_map.torque_max:
            rep.problems.append(
                f"torque range {model.torque_range[1]:.6g} differs from map maximum {loss_map.torque_max:.6g}"
            )
    floor = model.epsilon - MARGIN_TOL if model.constrained else None
    for c in checks:
        tag = f"slice {c['index']} (omega={c['omega']:.6g})"
        if not c["positive"]:
            rep.problems.append(f"{tag}: p(0) = {c['p0']:.6g} <= 0")
        if not c["monotone"]:
            rep.problems.append(f"{tag}: decreasing, min p' = {c['min_derivative']:.6g} at tau={c['argmin']:.6g}")
        elif floor is not None and c["min_derivative"] < floor:
            rep.problems.append(f"{tag}: min p' = {c['min_derivative']:.6g} below margin {model.epsilon:.6g}")
    return rep
