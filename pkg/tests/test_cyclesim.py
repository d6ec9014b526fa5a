import math

import numpy as np
import pytest

from sosalloc.allocator import AllocationQuery, Config, objective_polynomial, objective_scale
from sosalloc.powertrain import (
    DriveCycle,
    LossMap,
    MotorSpec,
    VehicleParams,
    cycle_torque_demand,
    interpolate_loss,
    resistive_force,
)
from sosalloc.presets import ramp_cycle, scenario, synthetic_cycle
from sosalloc.cyclesim import (
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

V = VehicleParams()
ALL = tuple(SimMethod)


@pytest.fixture(scope="module")
def unequal():
    config, f, r = scenario("unequal-cubic", speeds=np.linspace(0, 1000, 11))
    cfg = SimConfig(V, config, f, r, ALL, synthetic_cycle(), degree=5, seed=7)
    models = fit_models(cfg)
    return cfg, models, run_cycle(cfg, models)


def _side(cfg, w, T, s):
    f, r = cfg.front, cfg.rear
    wf, wr = f.gear_ratio * w, r.gear_ratio * w
    tf, tr = s * T / f.gear_ratio, (1 - s) * T / r.gear_ratio
    return wf * tf + interpolate_loss(f.loss_map, wf, tf) + wr * tr + interpolate_loss(r.loss_map, wr, tr)


def test_traces_cover_cycle(unequal):
    cfg, _, rep = unequal
    for r in rep.results.values():
        assert r.sigma.size == r.p_el.size == len(cfg.cycle)
    assert rep.results[SimMethod.GS].delta_pct == 0.0


def test_gs_beats_others_at_neighbouring_grid_points(unequal):
    # GS is exhaustive on its grid, so it can only lose to another method
    # by the grid resolution; compare against the grid points around each sigma
    cfg, _, rep = unequal
    gs = rep.results[SimMethod.GS]
    step = cfg.grid_step
    for m, r in rep.results.items():
        for k in np.flatnonzero(r.tau_ref != 0):
            w, T, s = gs.omega_w[k], r.tau_ref[k], r.sigma[k]
            lo, hi = math.floor(s / step) * step, math.ceil(s / step) * step
            best_neighbour = min(2 * _side(cfg, w, T, x) for x in {lo, hi} if 0 <= x <= 1)
            assert gs.p_el[k] <= best_neighbour + 1e-9 * max(1.0, abs(best_neighbour))


def test_kkt_beats_gradient_on_model_objective(unequal):
    cfg, models, rep = unequal
    for fam in ("UP", "PP"):
        pair = models[fam]
        g, k = rep.results[SimMethod(fam)], rep.results[SimMethod(fam + "_KKT")]
        for i in np.flatnonzero(g.tau_ref != 0):
            q = AllocationQuery(g.omega_w[i], g.tau_ref[i], cfg.config, cfg.front, cfg.rear, pair.front, pair.rear)
            L, box = objective_polynomial(q)
            assert L(k.sigma[i]) <= L(g.sigma[i]) + 1e-9 * objective_scale(L, box)


def test_power_identity(unequal):
    cfg, _, rep = unequal
    f, r = cfg.front, cfg.rear
    for res in rep.results.values():
        for k in range(0, len(cfg.cycle), 7):
            w, T, s = res.omega_w[k], res.tau_ref[k], res.sigma[k]
            if w == 0 and T == 0:
                assert res.p_el[k] == 0
                continue
            wf, wr = f.gear_ratio * w, r.gear_ratio * w
            tf, tr = s * T / f.gear_ratio, (1 - s) * T / r.gear_ratio
            mech = wf * tf + wr * tr
            loss = interpolate_loss(f.loss_map, wf, tf) + interpolate_loss(r.loss_map, wr, tr)
            assert res.p_el[k] == pytest.approx(2 * (mech + loss), rel=1e-12, abs=1e-9)
            # motor mechanical power equals wheel power through the gears
            assert mech == pytest.approx(w * T, rel=1e-12, abs=1e-9)


def test_energy_ordering_on_cycle(unequal):
    _, _, rep = unequal
    e = {m: rep.energy(m) for m in ALL}
    assert e[SimMethod.GS] <= min(e.values()) + 1e-9
    assert e[SimMethod.PP_KKT] <= e[SimMethod.PP] + 1e-9
    assert e[SimMethod.UP_KKT] <= e[SimMethod.UP] + 1e-9


def test_deterministic(unequal):
    cfg, models, rep = unequal
    again = run_cycle(cfg, models)
    for m in ALL:
        assert again.results[m].trace_csv() == rep.results[m].trace_csv()


def test_seed_changes_gradient_only(unequal):
    cfg, models, rep = unequal
    other = run_cycle(SimConfig(V, cfg.config, cfg.front, cfg.rear, ALL, cfg.cycle, degree=5, seed=8), models)
    for m in (SimMethod.GS, SimMethod.UP_KKT, SimMethod.PP_KKT):
        assert np.array_equal(other.results[m].sigma, rep.results[m].sigma)


def test_zero_cycle():
    config, f, r = scenario("unequal-pmsm", speeds=np.linspace(0, 1000, 11))
    cfg = SimConfig(V, config, f, r, ALL, DriveCycle("zero", np.zeros(20)), degree=3)
    rep = run_cycle(cfg)
    for m in ALL:
        assert rep.energy(m) == 0.0
        assert np.all(rep.results[m].sigma == 0.5)


def test_constant_speed_closed_form():
    config, f, r = scenario("unequal-pmsm", speeds=np.linspace(0, 1000, 11))
    n, v = 100, 20.0
    cfg = SimConfig(V, config, f, r, (SimMethod.GS,), DriveCycle("const", np.full(n, v)))
    res = run_cycle(cfg).results[SimMethod.GS]
    w = v / V.R
    T = resistive_force(V, v) * V.R / 2
    s = res.sigma[0]
    assert np.all(res.sigma == s)
    idle = 2 * (
        interpolate_loss(f.loss_map, f.gear_ratio * w, s * T / f.gear_ratio)
        + interpolate_loss(r.loss_map, r.gear_ratio * w, (1 - s) * T / r.gear_ratio)
    )
    expected = (resistive_force(V, v) * v + idle) * n / 3.6e6
    assert res.energy_kwh == pytest.approx(expected, rel=1e-6)


def test_equal_convex_all_methods_identical():
    config, f, _ = scenario("equal-pmsm", speeds=np.linspace(0, 1000, 11))
    cfg = SimConfig(V, config, f, f, ALL, ramp_cycle(), degree=4)
    rep = run_cycle(cfg)
    ref = rep.results[SimMethod.GS]
    moving = ref.tau_ref != 0
    for m in ALL:
        r = rep.results[m]
        assert np.allclose(r.sigma[moving], 0.5, atol=1e-9)
        assert r.energy_kwh == pytest.approx(ref.energy_kwh, rel=1e-12)


def test_equal_config_rejects_different_motors():
    _, f, r = scenario("unequal-pmsm", speeds=np.linspace(0, 1000, 3))
    with pytest.raises(ValueError):
        SimConfig(V, Config.EQUAL, f, r, ALL, ramp_cycle())


def test_infeasible_steps_are_clamped_and_counted():
    config, f, r = scenario("unequal-pmsm", speeds=np.linspace(0, 1000, 11))
    small = LossMap(f.loss_map.speeds, np.linspace(0, 5, 11), f.loss_map.losses[:, :11])
    f2, r2 = MotorSpec(f.gear_ratio, small), MotorSpec(r.gear_ratio, small)
    cfg = SimConfig(V, config, f2, r2, (SimMethod.GS, SimMethod.PP_KKT), ramp_cycle(), degree=3)
    rep = run_cycle(cfg)
    assert rep.infeasible_steps > 0
    d = cycle_torque_demand(V, cfg.cycle)
    gs = rep.results[SimMethod.GS]
    assert np.all(np.abs(gs.tau_ref) <= np.abs(d.tau_ref) + 1e-9)
    assert np.all(np.isfinite(gs.p_el))


# sigma maps


def test_equal_high_demand_map_constant_half():
    config, f, _ = scenario("equal-cubic", speeds=np.linspace(0, 1000, 11))
    cfg = SimConfig(V, config, f, f, (SimMethod.PP_KKT,), ramp_cycle(), degree=3)
    models = fit_models(cfg)
    taus = np.linspace(1800, 2400, 5)
    sig = sigma_map(cfg, np.linspace(5, 100, 5), taus, SimMethod.PP_KKT, models)
    assert np.all(sig == 0.5)


def test_unequal_quadratic_map_matches_closed_form():
    speeds = np.array([0.0, 1000.0])
    tq = np.linspace(0, 400, 401)
    fmap = LossMap(speeds, tq, np.vstack([0.05 * tq**2] * 2))
    rmap = LossMap(speeds, tq, np.vstack([0.10 * tq**2] * 2))
    f, r = MotorSpec(V.h1, fmap), MotorSpec(V.h2, rmap)
    # unconstrained fits reproduce the quadratics exactly (the eps slope
    # bound would bend them near zero torque)
    cfg = SimConfig(V, Config.UNEQUAL, f, r, (SimMethod.UP_KKT,), ramp_cycle(), degree=2)
    models = fit_models(cfg)
    taus = np.linspace(50, 1500, 6)
    sig = sigma_map(cfg, np.linspace(1, 100, 4), taus, SimMethod.UP_KKT, models)
    # minimize a (sT/hf)^2 + b ((1-s)T/hr)^2
    a, b = 0.05 / V.h1**2, 0.10 / V.h2**2
    assert np.allclose(sig, b / (a + b), atol=1e-4)


def test_map_out_of_range_cells_are_nan():
    config, f, r = scenario("unequal-pmsm", speeds=np.linspace(0, 1000, 3))
    cfg = SimConfig(V, config, f, r, (SimMethod.GS,), ramp_cycle())
    sig = sigma_map(cfg, [10.0], [100.0, 1e6], SimMethod.GS)
    assert np.isfinite(sig[0, 0]) and np.isnan(sig[0, 1])
    text = sigma_map_csv([10.0], [100.0, 1e6], sig, SimMethod.GS)
    lines = text.strip().splitlines()
    assert lines[0] == "omega_w,tau_ref,sigma,method"
    assert lines[2].split(",")[2] == ""


# reports


def test_reports(unequal, tmp_path):
    cfg, _, rep = unequal
    table = comparison_table([rep])
    assert "GS" in table and "(+0.00%)" in table
    csv = comparison_csv([rep]).splitlines()
    assert csv[0] == "method,cycle,energy_kwh,delta_pct" and len(csv) == 1 + len(ALL)
    paths = write_report(rep, tmp_path)
    assert len(paths) == len(ALL) + 1
    head = (tmp_path / "synthetic_trace_GS.csv").read_text().splitlines()[0]
    assert head == "t_s,v_mps,omega_w,tau_ref,sigma,p_el_w"
    assert rep.to_dict()["methods"]["GS"]["delta_pct"] == 0.0
