import csv
import json
import math

import numpy as np
import pytest

from blochlab import cli, config, hierarchy
from blochlab.errors import ConfigError

FREE = {"layers": [{"period": [1], "cell": [0.0]}], "resolution": 64}


def _write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def _run(tmp_path, command, data, sub="out", extra=()):
    out = tmp_path / sub
    code = cli.run([command, "--config", _write(tmp_path, data, f"{sub}.json"), "--out", str(out), *extra])
    return code, out


def test_schema_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        config.parse({**FREE, "colour": "blue"})
    with pytest.raises(ConfigError):
        config.parse({"layers": [{"period": [2], "cell": [0, 0], "extra": 1}]})


def test_parse_defaults_and_checks():
    cfg = config.parse(FREE)
    assert cfg.get("eta") == 0.2 and cfg.get("bins") == 256 and cfg.d == 1
    assert cfg.tolerances == {"residual": 1e-8, "measure_slack": 1e-6}
    with pytest.raises(ConfigError):
        config.parse({**FREE, "dimension": 2})
    with pytest.raises(ConfigError):
        config.parse({"layers": [{"period": [3], "cell": [0, 0, 0]}], "torus_points": 100})
    with pytest.raises(ConfigError):
        config.parse({"layers": [{"period": [2], "cell": [0, 0]}, {"period": [3], "cell": [0, 0, 0]}]})
    with pytest.raises(ConfigError):
        config.parse({**FREE, "eta": 1.0})


def test_shipped_configs_parse():
    for name in ("demo_two_stage", "demo_three_stage", "free_1d", "free_p2", "alternating_p2"):
        assert config.shipped_path(name).exists()
        config.shipped(name)


def test_bad_config_exit_code(tmp_path):
    assert cli.run(["bands", "--config", _write(tmp_path, {"layers": []})]) == cli.EXIT_CONFIG
    assert cli.run(["bands", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.run(["bands", "--config", str(bad)]) == cli.EXIT_CONFIG
    code, _ = _run(tmp_path, "bands", FREE, extra=("--threads", "0"))
    assert code == cli.EXIT_CONFIG


def test_free_bands_csv(tmp_path):
    code, out = _run(tmp_path, "bands", FREE)
    assert code == 0
    with open(out / "bands.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 64
    for r in rows:
        assert float(r["E"]) == pytest.approx(2 * math.cos(2 * math.pi * float(r["x_1"])), abs=1e-12)
    summary = json.loads((out / "bands_summary.json").read_text())
    assert summary["max_speed"]["speed"] == pytest.approx(4 * math.pi, rel=1e-12)


def test_alternating_summary(tmp_path):
    code, out = _run(tmp_path, "bands", {"layers": [{"period": [2], "cell": [0.5, -0.5]}], "resolution": 64})
    assert code == 0
    gap = json.loads((out / "bands_summary.json").read_text())["global_min_gap"]
    assert gap["gap"] == pytest.approx(1.0, abs=1e-12)
    assert gap["x"] == [0.25] and gap["bands"] == [1, 2]


def test_reruns_byte_identical(tmp_path):
    data = {"layers": [{"period": [2], "cell": [0.3, -0.3]}], "resolution": 128}
    _, a = _run(tmp_path, "bands", data, "a")
    _, b = _run(tmp_path, "bands", data, "b", extra=("--threads", "3"))
    for name in ("bands.csv", "bands_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_certify_free_p2(tmp_path):
    code = cli.run(["certify", "--config", str(config.shipped_path("free_p2")), "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "certificate.json").read_text())
    assert rep["accepted"] and rep["measure_good"] >= 0.8
    assert rep["delta"] == pytest.approx(0.6257, abs=2e-3)
    for key in ("samples", "bands", "gap_bad_fraction", "velocity_bad_fraction", "grid_max_gap", "sampled"):
        assert key in rep["audit"]
    assert "delta" in rep["theory"] and "audit" in rep["theory"]
    good = json.loads((tmp_path / "good_set.json").read_text())
    assert sum(good["runs"]) == rep["audit"]["samples"] * 2


def test_certify_eta_half_rejected(tmp_path):
    code, _ = _run(tmp_path, "certify", {**FREE, "eta": 0.5})
    assert code == cli.EXIT_CONFIG


def test_cartan_command(tmp_path):
    code, out = _run(tmp_path, "cartan", {"layers": [{"period": [2], "cell": [0.0, 0.0]}], "cartan_points": 4096})
    assert code == 0
    rep = json.loads((out / "cartan.json").read_text())
    assert rep["points_per_axis"] == 4096 and len(rep["runs"]) == 2


def test_construct_demo(tmp_path):
    code = cli.run(["construct", "--config", str(config.shipped_path("demo_two_stage")), "--out", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "stages.jsonl").read_text().splitlines()
    assert len(lines) == 2
    assert all(json.loads(line)["pass"] for line in lines)
    assert json.loads((tmp_path / "state.json").read_text())


def test_eigfun_demo(tmp_path):
    code = cli.run(["eigfun", "--config", str(config.shipped_path("demo_two_stage")), "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "eigfun.json").read_text())
    assert all(s["pass"] for s in rep["stages"]) and rep["cauchy"]["pass"]
    with open(tmp_path / "eigenfunction.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 101


def test_eigfun_chain_broken(tmp_path):
    cfg = config.shipped("demo_two_stage")
    state = hierarchy.construct(cfg.layers, cfg.get("torus_points"), cfg.get("eta_schedule"))
    bad = np.argwhere(~hierarchy.good_chain(state, 1))[0]
    x = state.stage(1).grid.points()[bad[0]]
    data = {**cfg.raw, "chain_point": {"x": [float(v) for v in x], "band": int(bad[1]) + 1}}
    code, _ = _run(tmp_path, "eigfun", data)
    assert code == cli.EXIT_CHAIN


def test_measure_free(tmp_path):
    code = cli.run(["measure", "--config", str(config.shipped_path("free_1d")), "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "measure.json").read_text())
    assert rep["total"] == pytest.approx(1.0, abs=1e-8)
    assert rep["free_dos_l1_error"] <= 1e-2
    with open(tmp_path / "histogram.csv") as fh:
        assert next(csv.reader(fh)) == ["bin_lo", "bin_hi", "mass", "density", "bound", "pass"]


def test_measure_chain(tmp_path):
    code = cli.run(["measure", "--config", str(config.shipped_path("demo_two_stage")), "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "measure.json").read_text())
    assert rep["set"] == "chain" and rep["monotone"]
    assert (tmp_path / "histogram_j1.csv").exists() and (tmp_path / "histogram_j2.csv").exists()


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("BLOCHLAB_THREADS", "2")
    code, _ = _run(tmp_path, "bands", FREE)
    assert code == 0
