import csv
import json

import numpy as np
import pytest

from singular_toda import cli

from conftest import EQUILATERAL

TODA = {"points": EQUILATERAL.tolist(), "weights": [[0.6] * 3, [0.6] * 3]}
COARSE = {"n_radial": 16, "n_angular": 24, "patch_angular": 12, "patch_panels": 4}


def run(tmp_path, mode, cfg, name="cfg.json", raw=None):
    p = tmp_path / name
    p.write_text(raw if raw is not None else json.dumps(cfg))
    out = tmp_path / f"out_{mode}"
    return cli.main([mode, "--config", str(p), "--out", str(out)]), out


@pytest.mark.parametrize("raw, msg", [
    ('{"schema_version": 1,', "line 1"),
    ('[1]', "JSON object"),
    ('{"schema_version": 2}', "schema_version"),
    ('{"schema_version": 1, "extra": 0}', "unknown key 'extra'"),
    ('{"schema_version": 1, "problem": {"pts": []}}', "problem: unknown key 'pts'"),
    ('{"schema_version": 1, "problem": 3}', "expected an object"),
])
def test_parse_config_errors(raw, msg):
    with pytest.raises(cli.ConfigError, match=msg):
        cli.parse_config(raw)


@pytest.mark.parametrize("cfg", [
    {"schema_version": 1, "problem": {"points": [[0, 0]], "weights": [[1.2]]}},
    {"schema_version": 1, "problem": {"family": "nope"}},
    {"schema_version": 1},
    {"schema_version": 1, "mode": "solve", "problem": TODA},
    {"schema_version": 1, "problem": TODA, "grid": {"bogus": 1}},
])
def test_config_errors_exit_2(tmp_path, cfg):
    code, _ = run(tmp_path, "check", cfg)
    assert code == cli.EXIT_CONFIG


def test_missing_config_and_malformed_json_exit_2(tmp_path):
    assert cli.main(["check", "--config", str(tmp_path / "none.json")]) == cli.EXIT_CONFIG
    code, _ = run(tmp_path, "check", None, raw="{")
    assert code == cli.EXIT_CONFIG


def test_grid_failure_exits_3(tmp_path):
    cfg = {"schema_version": 1, "problem": {"points": [[2.0, 0.0]], "weights": [[0.3]]},
           "grid": {"split_radius": 1.0}}
    code, _ = run(tmp_path, "solve", cfg)
    assert code == cli.EXIT_NUMERIC


def test_check_mode(tmp_path, capsys):
    cfg = {"schema_version": 1, "problem": {"family": "epsilon", "epsilon": 0.1}}
    code, out = run(tmp_path, "check", cfg)
    assert code == 0
    rep = json.loads((out / "condition_report.json").read_text())
    assert rep["toda_existence"]["holds"] is False
    assert rep["beta_like"]["holds"] is True
    flags = json.loads(capsys.readouterr().out)
    assert all(flags[f"A.A{k}"] for k in range(1, 7))


def test_solve_mode_outputs(tmp_path):
    cfg = {"schema_version": 1, "problem": TODA, "grid": COARSE}
    code, out = run(tmp_path, "solve", cfg)
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "Converged"
    diag = json.loads((out / "diagnostics.json").read_text())
    assert max(diag["mass_residual"]) < 1e-10
    with open(out / "field.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["x1", "x2", "chart", "u1", "u2"]
    assert len(rows) == summary["nodes"] + 1
    first = (out / "history.csv").read_bytes()
    run(tmp_path, "solve", cfg)
    assert (out / "history.csv").read_bytes() == first


def test_single_family_3d(tmp_path):
    cfg = {"schema_version": 1, "problem": {"family": "single", "alpha": 0.0, "dimension": 3}}
    code, out = run(tmp_path, "solve", cfg)
    assert code == 0
    assert json.loads((out / "summary.json").read_text())["status"] == "Converged"


def test_sweep_mode(tmp_path):
    cfg = {"schema_version": 1, "problem": TODA,
           "sweep": {"entries": [[0, 0]], "values": [0.2, 0.6, 0.95]}}
    code, out = run(tmp_path, "sweep", cfg)
    assert code == 0
    with open(out / "sweep.csv") as f:
        rows = list(csv.DictReader(f))
    assert [r["w1_1"] for r in rows] == ["0.20000000000000001", "0.59999999999999998",
                                         "0.94999999999999996"]
    # 0.2: 2(1.4) + 1.8 - 3(1.6) < 0 at entry (1, 2); 0.95: sum of row 1 exceeds 2
    assert [r["toda_existence"] for r in rows] == ["False", "True", "False"]
    assert all(r["status"] == "skipped" for r in rows)


def test_sweep_random_samples_are_seeded(tmp_path):
    cfg = {"schema_version": 1, "seed": 7, "problem": TODA,
           "sweep": {"entries": "all", "samples": 5}}
    _, out = run(tmp_path, "sweep", cfg)
    a = (out / "sweep.csv").read_text()
    _, out = run(tmp_path, "sweep", cfg)
    assert (out / "sweep.csv").read_text() == a
    bad = dict(cfg, sweep={"entries": [[5, 0]], "values": [0.1]})
    assert run(tmp_path, "sweep", bad)[0] == cli.EXIT_CONFIG


def test_probe_mode(tmp_path):
    cfg = {"schema_version": 1, "grid": COARSE,
           "probe": {"kind": "scalar", "weights": [0.6, 0.55, 0.55, 0.15], "scales": [5],
                     "sanity": True}}
    code, out = run(tmp_path, "probe", cfg)
    assert code == 0
    rep = json.loads((out / "probe.json").read_text())
    assert rep["verdict"] == "converged" and "trajectories" not in rep
    assert (out / "trajectory.csv").read_text().startswith("scale,iteration")
    assert (out / "sigma.csv").read_text().startswith("point,radius")
    bad = dict(cfg, probe={"kind": "scalar", "weights": [0.5]})
    assert run(tmp_path, "probe", bad)[0] == cli.EXIT_CONFIG


def test_jsonable_and_fmt():
    obj = {"a": np.float64(np.nan), "b": [np.int64(3), np.inf], "c": np.array([1.5])}
    assert cli.jsonable(obj) == {"a": None, "b": [3, None], "c": [1.5]}
    assert cli.fmt(0.1) == "0.10000000000000001"


def test_thread_override(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    cli._apply_thread_override()
    import os
    assert os.environ["OMP_NUM_THREADS"] == "2"
