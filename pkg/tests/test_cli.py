import json
import subprocess
import sys

import numpy as np
import pytest

from sosalloc.cli import main
from sosalloc.io import read_loss_map, read_model, write_loss_map, write_model
from sosalloc.powertrain import LossMap, fit_loss_model, model_loss
from sosalloc.presets import dip_map


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def maps(tmp_path_factory):
    d = tmp_path_factory.mktemp("maps")
    for name in ("cubic-a", "cubic-b", "pmsm-weak"):
        assert main(["genmap", "--preset", name, "-o", str(d / f"{name}.csv")]) == 0
    return d


def _slim(maps, name):
    # fewer speed slices keep the fits quick
    full = read_loss_map(maps / f"{name}.csv")
    return LossMap(full.speeds[::10], full.torques, full.losses[::10])


@pytest.fixture(scope="module")
def slim(maps):
    for name in ("cubic-a", "cubic-b", "pmsm-weak"):
        write_loss_map(maps / f"{name}-slim.csv", _slim(maps, name))
    return maps


def _config(slim, tmp_path, **kw):
    cfg = {
        "config": "UNEQUAL",
        "front": {"map": str(slim / "cubic-a-slim.csv")},
        "rear": {"map": str(slim / "cubic-b-slim.csv")},
        "methods": ["GS", "UP", "PP", "UP_KKT", "PP_KKT"],
        "cycles": ["ramp"],
        "degree": 5,
        "seed": 3,
    }
    cfg.update(kw)
    p = tmp_path / "sim.json"
    p.write_text(json.dumps(cfg))
    return p


def test_version_and_schema(capsys):
    code, out, _ = run(capsys, "--version")
    assert code == 0 and json.loads(out)["name"] == "sosalloc"
    code, out, _ = run(capsys, "--schema")
    assert code == 0 and set(json.loads(out)) == {"model", "config"}


def test_no_command(capsys):
    assert run(capsys)[0] == 2


def test_fit_degree10_constrained(capsys, slim, tmp_path):
    out = tmp_path / "m.json"
    rep = tmp_path / "r.csv"
    code, *_ = run(capsys, "fit", slim / "pmsm-weak-slim.csv", "--degree", 10, "-o", out, "--report", rep)
    assert code == 0
    model = read_model(out)
    assert model.coeffs.shape[1] == 11
    rows = rep.read_text().splitlines()
    assert rows[0] == "slice,omega_radps,rmse_w,min_derivative,p0_w,monotone"
    assert all(r.endswith(",1") for r in rows[1:])
    assert run(capsys, "validate", out, slim / "pmsm-weak-slim.csv")[0] == 0


def test_fit_round_trip_matches_memory(capsys, slim, tmp_path):
    out = tmp_path / "m.json"
    assert run(capsys, "fit", slim / "cubic-a-slim.csv", "--degree", 6, "-o", out)[0] == 0
    mem = fit_loss_model(read_loss_map(slim / "cubic-a-slim.csv"), 6)
    disk = read_model(out)
    tau = np.linspace(0, 300, 50)
    for w in (0.0, 333.0, 1000.0):
        assert np.array_equal(model_loss(mem, w, tau), model_loss(disk, w, tau))


def test_degree_cap_exit_4(capsys, slim, tmp_path):
    code, _, err = run(capsys, "fit", slim / "pmsm-weak-slim.csv", "--degree", 13, "-o", tmp_path / "x.json")
    assert code == 4 and "degree" in err


def test_malformed_csv_exit_2(capsys, tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("omega_radps,0,10\n0,1\n")
    code, _, err = run(capsys, "fit", p, "-o", tmp_path / "x.json")
    assert code == 2 and "line 2" in err


def test_fit_failure_exit_3(capsys, tmp_path, monkeypatch):
    from sosalloc import powertrain
    from sosalloc.errors import SolverError

    def boom(*a, **k):
        raise SolverError("numerical failure", "NUMERICAL_FAILURE")

    monkeypatch.setattr(powertrain, "fit_pseudoconvex", boom)
    p = tmp_path / "m.csv"
    write_loss_map(p, dip_map(speeds=[0.0, 10.0]))
    code, _, err = run(capsys, "fit", p, "-o", tmp_path / "x.json")
    assert code == 3 and "index 0" in err


def test_validate_flipped_sign_exit_6(capsys, slim, tmp_path):
    out = tmp_path / "m.json"
    run(capsys, "fit", slim / "pmsm-weak-slim.csv", "--degree", 4, "-o", out)
    d = json.loads(out.read_text())
    d["coeffs"][7][1] = -abs(d["coeffs"][7][1]) - 50.0
    out.write_text(json.dumps(d))
    code, text, _ = run(capsys, "validate", out)
    assert code == 6 and "VIOLATION slice 7" in text


def test_validate_unconstrained_dip_exit_6(capsys, tmp_path):
    p = tmp_path / "dip.csv"
    write_loss_map(p, dip_map())
    out = tmp_path / "u.json"
    assert run(capsys, "fit", p, "--degree", 10, "--unconstrained", "-o", out)[0] == 0
    assert run(capsys, "validate", out, p)[0] == 6
    pp = tmp_path / "p.json"
    assert run(capsys, "fit", p, "--degree", 10, "-o", pp)[0] == 0
    assert run(capsys, "validate", pp, p)[0] == 0


def test_validate_mismatched_map(capsys, slim, tmp_path):
    out = tmp_path / "m.json"
    run(capsys, "fit", slim / "pmsm-weak-slim.csv", "--degree", 3, "-o", out)
    code, text, _ = run(capsys, "validate", out, slim / "pmsm-weak.csv")
    assert code == 6 and "speed grid" in text


def test_allocate_single_and_batch(capsys, slim, tmp_path):
    fm, rm = tmp_path / "f.json", tmp_path / "r.json"
    write_model(fm, fit_loss_model(read_loss_map(slim / "cubic-a-slim.csv"), 3))
    write_model(rm, fit_loss_model(read_loss_map(slim / "cubic-b-slim.csv"), 3))
    code, out, _ = run(capsys, "allocate", "--omega-w", 30, "--tau-ref", 400, "--front-model", fm, "--rear-model", rm)
    res = json.loads(out)
    assert code == 0 and res["method"] == "KKT" and 0 <= res["sigma"] <= 1
    code, out, _ = run(
        capsys, "allocate", "--method", "GRID", "--omega-w", 30, "--tau-ref", 400,
        "--front-map", slim / "cubic-a-slim.csv", "--rear-map", slim / "cubic-b-slim.csv",
    )
    assert code == 0 and abs(json.loads(out)["sigma"] - res["sigma"]) < 0.05
    batch = tmp_path / "b.csv"
    batch.write_text("omega_w,tau_ref\n30,400\n30,1e7\n")
    code, out, err = run(capsys, "allocate", "--batch", batch, "--front-model", fm, "--rear-model", rm)
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "sigma,loss_w,method,solve_time_s" and len(lines) == 3
    assert lines[2].startswith(",,KKT") and "line 3" in err


def test_allocate_gradient_seeded(capsys, slim, tmp_path):
    fm, rm = tmp_path / "f.json", tmp_path / "r.json"
    write_model(fm, fit_loss_model(read_loss_map(slim / "cubic-a-slim.csv"), 3))
    write_model(rm, fit_loss_model(read_loss_map(slim / "cubic-b-slim.csv"), 3))
    args = ["allocate", "--method", "GRADIENT", "--omega-w", 30, "--tau-ref", 200, "--front-model", fm, "--rear-model", rm, "--seed", 5]
    a = json.loads(run(capsys, *args)[1])
    b = json.loads(run(capsys, *args)[1])
    assert a["sigma"] == b["sigma"]


def test_simulate_table_and_determinism(capsys, slim, tmp_path):
    cfg = _config(slim, tmp_path)
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        d.mkdir()
        code, text, _ = run(capsys, "simulate", cfg, "--out-dir", d)
        assert code == 0
        outs.append(d)
    assert "(+0.00%)" in text.splitlines()[2]
    for f in sorted(outs[0].glob("*_trace_*.csv")):
        assert f.read_bytes() == (outs[1] / f.name).read_bytes()
    rep = json.loads((outs[0] / "ramp_report.json").read_text())["methods"]
    assert rep["GS"]["delta_pct"] == 0.0
    assert rep["PP_KKT"]["energy_kwh"] <= rep["PP"]["energy_kwh"] + 1e-12


def test_simulate_equal_fixture(capsys, slim, tmp_path):
    cfg = _config(slim, tmp_path, config="EQUAL", rear=None, front={"map": str(slim / "pmsm-weak-slim.csv")},
                  methods=["GS", "PP", "PP_KKT"])
    code, text, _ = run(capsys, "simulate", cfg, "--out-dir", tmp_path)
    assert code == 0 and "GS" in text and "+0.00%" in text


def test_simulate_infeasible_exit_5(capsys, slim, tmp_path):
    curve = [[0.0, 5.0], [2000.0, 5.0]]
    cfg = _config(
        slim, tmp_path, methods=["GS"],
        front={"map": str(slim / "cubic-a-slim.csv"), "max_torque_curve": curve},
        rear={"map": str(slim / "cubic-b-slim.csv"), "max_torque_curve": curve},
    )
    code, _, err = run(capsys, "simulate", cfg, "--out-dir", tmp_path)
    assert code == 5 and "infeasible" in err
    assert run(capsys, "simulate", cfg, "--out-dir", tmp_path, "--max-infeasible", 10_000)[0] == 0


def test_simulate_bad_config_exit_2(capsys, tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"config": "SIDEWAYS", "front": {}, "methods": ["GS"]}))
    assert run(capsys, "simulate", p)[0] == 2
    p.write_text("{")
    assert run(capsys, "simulate", p)[0] == 2


def test_sweep(capsys, slim, tmp_path):
    cfg = _config(slim, tmp_path)
    out = tmp_path / "s.csv"
    code, *_ = run(capsys, "sweep", cfg, "--method", "PP_KKT", "--omega-grid", "1:50:3", "--tau-grid", "10:500:4", "-o", out)
    lines = out.read_text().splitlines()
    assert code == 0 and lines[0] == "omega_w,tau_ref,sigma,method" and len(lines) == 13


def test_genmap_kinds(capsys, tmp_path):
    out = tmp_path / "g.csv"
    code, *_ = run(capsys, "genmap", "--c0", 100, "--c-copper", 0.05, "--speeds", "0:10:2", "--torques", "0:100:2", "-o", out)
    assert code == 0
    assert np.allclose(read_loss_map(out).losses[:, 1], 600.0)
    code, *_ = run(capsys, "genmap", "--preset", "cubic-a", "--long", "-o", out)
    assert code == 0 and out.read_text().startswith("omega_radps,torque_nm,loss_w")
    assert run(capsys, "genmap", "--c-copper", -1, "-o", out)[0] == 2


def test_seed_after_subcommand(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, "genmap", "--preset", "pmsm-weak", "--noise", 0.05, "--seed", 9, "-o", a)[0] == 0
    assert run(capsys, "--seed", 9, "genmap", "--preset", "pmsm-weak", "--noise", 0.05, "-o", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "sosalloc.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("fit", "allocate", "sweep", "simulate", "genmap", "validate"):
        assert cmd in r.stdout
