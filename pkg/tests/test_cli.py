import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

from mfeqg.cli import main
from mfeqg.riccati import RiccatiSolution
from conftest import config_path

REF = config_path("reference.yaml")


def variant(tmp_path, name="scenario.yaml", **sections):
    with open(REF) as fh:
        data = yaml.safe_load(fh)
    for sec, updates in sections.items():
        if updates is None:
            data.pop(sec, None)
        else:
            data.setdefault(sec, {}).update(updates)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# mfeqg ")
    rows = list(csv.reader(lines[1:]))
    return rows[0], np.array(rows[1:], dtype=float)


def run(*args):
    return main([str(a) for a in args])


def test_zeta_command(tmp_path):
    assert run("zeta", "--config", REF, "--out", tmp_path) == 0
    header, body = read_csv(tmp_path / "zeta.csv")
    assert header == ["t", "zeta", "residual"]
    assert len(body) == 101
    assert body[-1, 0] == 1.0 and body[-1, 1] == 0.0
    assert np.max(np.abs(body[:, 2])) < 1e-8


def test_solve_riccati_command(tmp_path):
    assert run("solve-riccati", "--config", REF, "--out", tmp_path) == 0
    sol = RiccatiSolution.from_csv(str(tmp_path / "riccati.csv"))
    assert len(sol.grid) == 101 and sol.d0 == 2 and sol.d == 2


def test_simulate_command(tmp_path):
    cfg = variant(tmp_path, run={"N": 3, "steps": 20})
    assert run("simulate", "--config", cfg, "--out", tmp_path, "--strict") == 0
    header, body = read_csv(tmp_path / "agents.csv")
    assert header == ["t", "agent", "wealth", "consumption", "habit", "Y", "F",
                      "p[0]", "p[1]", "pi[0]"]
    assert body.shape == (3 * 21, 10)
    header, theta = read_csv(tmp_path / "theta.csv")
    assert header[:3] == ["t", "theta[0]", "theta[1]"]
    assert not theta[:, 2].any()


def test_simulate_is_byte_identical(tmp_path):
    cfg = variant(tmp_path, run={"N": 5, "steps": 40})
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert run("simulate", "--config", cfg, "--out", out, "--strict", "--seed", 9) == 0
        outs.append([(out / f).read_bytes() for f in ("agents.csv", "theta.csv")])
    assert outs[0] == outs[1]
    out = tmp_path / "c"
    assert run("simulate", "--config", cfg, "--out", out, "--strict", "--seed", 10) == 0
    assert (out / "agents.csv").read_bytes() != outs[0][0]


def test_timestamp_only_without_strict(tmp_path):
    run("zeta", "--config", REF, "--out", tmp_path / "loose")
    run("zeta", "--config", REF, "--out", tmp_path / "strict", "--strict")
    loose = (tmp_path / "loose" / "zeta.csv").read_text().splitlines()[0]
    strict = (tmp_path / "strict" / "zeta.csv").read_text().splitlines()[0]
    assert "generated=" in loose and "generated=" not in strict
    assert "config_sha256=" in strict


def test_env_overrides_out(tmp_path, monkeypatch):
    monkeypatch.setenv("MFG_EQG_OUT", str(tmp_path / "env"))
    assert run("zeta", "--config", REF, "--out", tmp_path / "flag") == 0
    assert (tmp_path / "env" / "zeta.csv").exists()
    assert not (tmp_path / "flag").exists()


def test_clearing_sweep_command(tmp_path):
    cfg = variant(tmp_path, run={"Ns": [4, 8], "pathsPerN": 3, "steps": 20})
    assert run("clearing-sweep", "--config", cfg, "--out", tmp_path) == 0
    data = json.loads((tmp_path / "clearing.json").read_text())
    assert data["Ns"] == [4, 8] and set(data["checks"]) == {
        "slopeInBand", "dropAtLeast50", "pStarMeanWithin4SE"}
    assert not data["checks"]["dropAtLeast50"]
    assert run("clearing-sweep", "--config", cfg, "--out", tmp_path, "--strict") == 4


def test_residual_command(tmp_path):
    cfg = variant(tmp_path, run={"paths": 50, "meshSizes": [0.04, 0.02, 0.01]})
    assert run("residual", "--config", cfg, "--out", tmp_path) == 0
    data = json.loads((tmp_path / "residual.json").read_text())
    assert data["meshSizes"] == [0.04, 0.02, 0.01]
    assert data["checks"]["terminalExact"]
    header, body = read_csv(tmp_path / "residual.csv")
    assert header == ["dt", "rms"] and body.shape == (3, 2)


def test_check_smallness_command(tmp_path):
    assert run("check-smallness", "--config", REF, "--out", tmp_path) == 0
    data = json.loads((tmp_path / "smallness.json").read_text())
    assert data["applicableToEQG"] is False
    assert "contractionFactor" in data["smallness"]
    assert data["varianceBound"]["holds"] is True


def test_blowup_exit_code(tmp_path, capsys):
    assert run("solve-riccati", "--config", config_path("blowup.yaml"), "--out", tmp_path) == 3
    assert "blew up" in capsys.readouterr().err


def test_config_errors_carry_line_numbers(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    text = open(REF).read().replace("  kappa: 1.0\n", "  kappa: 1.0\n  kapa: 2.0\n")
    bad.write_text(text)
    assert run("zeta", "--config", bad, "--out", tmp_path) == 2
    err = capsys.readouterr().err
    line = text.splitlines().index("  kapa: 2.0") + 1
    assert f"bad.yaml:{line}:" in err and "kapa" in err

    bad.write_text(text.replace("  kapa: 2.0\n", "").replace("gamma: 1.0", "gamma: -1.0"))
    assert run("zeta", "--config", bad, "--out", tmp_path) == 2

    bad.write_text("model: [1, 2\n")
    assert run("zeta", "--config", bad, "--out", tmp_path) == 2
    assert run("zeta", "--config", tmp_path / "missing.yaml", "--out", tmp_path) == 2


def test_shape_error_and_missing_market(tmp_path, capsys):
    cfg = variant(tmp_path, factors={"m0": [0.1, 0.2, 0.3]})
    assert run("zeta", "--config", cfg, "--out", tmp_path) == 2
    assert "m0" in capsys.readouterr().err
    cfg = variant(tmp_path, "nomarket.yaml", market=None)
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 2


def test_grid_side_car(tmp_path):
    assert run("solve-riccati", "--config", config_path("zero_noise.yaml"), "--out", tmp_path) == 0


def test_version_and_entry_point(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("mfeqg ")


def test_pure_python_fallback_env():
    env = dict(os.environ, MFG_EQG_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from mfeqg import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
