import json
import re
from pathlib import Path

import numpy as np
import pytest

from plap_lab.cli import emit_plot_data, main, validate_config
from plap_lab.errors import ConfigError

DISK_VERIFY = {
    "command": "verify",
    "domain": {"variant": "disk", "radius": 1.0},
    "metric": {"kind": "flat"},
    "p": [2.0],
    "h": [0.1],
    "seed": 7,
}


def _write(tmp_path: Path, obj: dict, name="config.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


def _strip_timestamps(text: str) -> str:
    return re.sub(r'"timestamp": "[^"]*"', '"timestamp": null', text)


# ------------------------------------------------------------- validation

def test_validate_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        validate_config({**DISK_VERIFY, "bogus": 1}, "verify")
    with pytest.raises(ConfigError):
        validate_config({**DISK_VERIFY, "solver": {"warp": 9}}, "verify")


def test_validate_rejects_bad_rho():
    with pytest.raises(ConfigError):
        validate_config({**DISK_VERIFY, "solver": {"rho": 1.5}}, "verify")


def test_validate_rejects_command_mismatch():
    with pytest.raises(ConfigError):
        validate_config(DISK_VERIFY, "sweep")


def test_validate_requires_domain_for_verify():
    with pytest.raises(ConfigError):
        validate_config({"p": [2.0], "h": [0.1]}, "verify")


def test_bad_rho_exits_2(tmp_path):
    cfg = _write(tmp_path, {**DISK_VERIFY, "solver": {"rho": 1.5}})
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2
    err = json.loads((tmp_path / "out" / "error.json").read_text())
    assert err["error"]["type"] == "config"


def test_unreadable_config_exits_2(tmp_path):
    assert main(["verify", "--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "out")]) == 2


def test_solver_failure_exits_3(tmp_path):
    cfg = _write(tmp_path, {
        "command": "verify",
        "domain": {"variant": "ellipse", "a": 2.0, "b": 1.0},
        "p": [4.0], "h": [0.14],
        "solver": {"max_newton_iter": 1},
    })
    out = tmp_path / "out"
    assert main(["verify", "--config", str(cfg), "--out", str(out)]) == 3
    err = json.loads((out / "error.json").read_text())
    assert err["error"]["type"] == "solver"
    assert len(err["error"]["history"]) >= 1


# ----------------------------------------------------------------- verify

def test_verify_disk_passes_and_reports(tmp_path):
    cfg = _write(tmp_path, DISK_VERIFY)
    out = tmp_path / "out"
    assert main(["verify", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "report_p2_h0.1.json").read_text())
    for section in ("fundamental", "hk", "sbt", "serrin", "flux", "eq_curvature",
                    "subharmonicity", "flags", "constants", "solver"):
        assert section in rep
    assert {"lhs_volume", "lhs_boundary", "rhs"} <= set(rep["fundamental"])
    assert {"t1", "t2", "t3"} <= set(rep["hk"])
    assert {"lhs1", "lhs2", "rhs"} <= set(rep["sbt"])
    assert "deficit" in rep["serrin"]
    # ball case: tiny overdetermined deficit
    assert rep["serrin"]["deficit"] <= 1e-3 * rep["constants"]["perimeter"]
    assert json.loads((out / "summary.json").read_text())["pass"] is True


def test_verify_determinism(tmp_path):
    cfg = _write(tmp_path, DISK_VERIFY)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["verify", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["verify", "--config", str(cfg), "--out", str(out2)]) == 0
    for name in ("report_p2_h0.1.json", "summary.json"):
        a = _strip_timestamps((out1 / name).read_text())
        b = _strip_timestamps((out2 / name).read_text())
        assert a == b
    assert (out1 / "boundary_profile_p2_h0.1.csv").read_text() == \
        (out2 / "boundary_profile_p2_h0.1.csv").read_text()


def test_report_matches_published_schema(tmp_path):
    import plap_lab

    schema = json.loads(
        (Path(plap_lab.__file__).parent / "schemas" / "report.schema.json").read_text())
    cfg = _write(tmp_path, DISK_VERIFY)
    out = tmp_path / "out"
    main(["verify", "--config", str(cfg), "--out", str(out)])
    rep = json.loads((out / "report_p2_h0.1.json").read_text())
    for key in schema["required"]:
        assert key in rep
    for section, spec in schema["properties"].items():
        if section in rep and "required" in spec and isinstance(rep[section], dict):
            for key in spec["required"]:
                assert key in rep[section], f"{section}.{key} missing"


# ------------------------------------------------------------------ sweep

def test_sweep_row_count(tmp_path):
    cfg = _write(tmp_path, {
        "command": "sweep",
        "domain": {"variant": "disk", "radius": 1.0},
        "p": [1.5, 2.0, 3.0, 4.0],
        "h": [0.2, 0.1],
    })
    out = tmp_path / "out"
    # coarse grids may fail the default tolerances (exit 1); the CSV contract
    # is the row count over the p x h grid
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) in (0, 1)
    lines = (out / "sweep.csv").read_text().strip().split("\n")
    assert len(lines) == 1 + 8  # header + |p| * |h|
    header = lines[0].split(",")
    assert header[0] == "p" and header[1] == "h"
    assert "fundamental.lhs_volume" in header
    assert "serrin.deficit" in header


# --------------------------------------------------------------- matcheck

def test_matcheck_cli(tmp_path):
    cfg = _write(tmp_path, {"command": "matcheck", "matcheck": {"samples": 30000}, "seed": 5})
    out = tmp_path / "out"
    assert main(["matcheck", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "matcheck.json").read_text())
    assert rep["min_gap"] >= -1e-12
    assert rep["samples"] == 30000
    shard_lines = (out / "matcheck_shards.csv").read_text().strip().split("\n")
    assert shard_lines[0].startswith("n,p,gap")
    assert len(shard_lines) >= 4


def test_matcheck_seed_override(tmp_path):
    cfg = _write(tmp_path, {"command": "matcheck", "matcheck": {"samples": 10000}, "seed": 5})
    outs = []
    for seed, name in ((9, "s9"), (9, "s9b"), (10, "s10")):
        out = tmp_path / name
        main(["matcheck", "--config", str(cfg), "--out", str(out), "--seed", str(seed)])
        outs.append(json.loads((out / "matcheck.json").read_text())["min_gap"])
    assert outs[0] == outs[1]
    assert outs[0] != outs[2]


# ----------------------------------------------------------------- radial

def test_radial_cli(tmp_path):
    cfg = _write(tmp_path, {
        "command": "radial",
        "p": [1.5, 2.0, 3.0],
        "radial": {"n_values": [2, 3], "grid": 5000},
    })
    out = tmp_path / "out"
    assert main(["radial", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "radial.json").read_text())
    assert len(rep["profiles"]) == 6
    assert all(e["pass"] for e in rep["profiles"])


# ------------------------------------------------------------------ solve

def test_solve_cli_outputs(tmp_path):
    cfg = _write(tmp_path, {
        "command": "solve",
        "domain": {"variant": "disk", "radius": 1.0},
        "p": [2.0], "h": [0.1],
    })
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "solution_p2_h0.1.csv").read_text().strip().split("\n")
    assert lines[0] == "x,y,u"
    assert len(lines) > 100
    diag = json.loads((out / "diagnostics_p2_h0.1.json").read_text())
    assert diag["solver"]["diagnostics"]["positive_interior"] is True


# -------------------------------------------------------------- plot data

def test_emit_plot_data_empty(tmp_path, capsys):
    written = emit_plot_data([], tmp_path / "plots")
    assert written == []
    assert "no reports" in capsys.readouterr().err


def test_boundary_profile_columns(tmp_path, lab):
    case = lab.case("disk", 2.0, h=0.1)
    written = emit_plot_data([case], tmp_path)
    prof = next(p for p in written if "boundary_profile" in p.name)
    lines = prof.read_text().strip().split("\n")
    header = lines[0].split(",")
    assert header == ["s", "x", "y", "H", "u_nu", "u_nunu", "eq64_residual",
                      "overdetermined_residual"]
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    # disk at p=2: H = 1 and u_nu = -1/2 along the whole boundary
    assert np.abs(data[:, 3] - 1.0).max() <= 1e-9
    assert np.abs(data[:, 4] + 0.5).max() <= 0.02
    slice_file = next(p for p in written if "slice" in p.name)
    assert slice_file.read_text().startswith("x,u,P")


def test_ellipse_boundary_profile_curvature_range(tmp_path, lab):
    case = lab.case("ellipse", 2.0)
    written = emit_plot_data([case], tmp_path)
    prof = next(p for p in written if "boundary_profile" in p.name)
    lines = prof.read_text().strip().split("\n")
    H = np.array([float(ln.split(",")[3]) for ln in lines[1:]])
    assert H.min() == pytest.approx(0.25, rel=1e-2)
    assert H.max() == pytest.approx(2.0, rel=1e-6)
