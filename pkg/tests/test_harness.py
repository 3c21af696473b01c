import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from greenqueue.harness.cli import main, oracle_check
from greenqueue.harness.config import (ConfigError, build_network, config_hash, emit_config, load_config,
                                       parse_config)
from greenqueue.harness.experiment import run_scheme, run_sweep

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

TINY = {"run": {"frames": 4000, "pilot_frames": 1000, "decimate": 100},
        "sweep": {"axis": "p0", "values": [500.0, 1100.0], "schemes": ["pomdp", "greedy"], "seeds": [0, 1]}}


def tiny(**changes):
    return parse_config(TINY).updated(changes)


def tree(directory: Path) -> dict:
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


# --- configuration ---------------------------------------------------------------

def test_empty_config_gives_desk_defaults():
    cfg = parse_config({})
    assert cfg == parse_config(None)
    net = build_network(cfg)
    assert net.K == 2 and net.grid.n_actions == 36
    assert int(net.queue_cap[0]) == 1000 and int(net.energy.capacity_units[0]) == 5760


@pytest.mark.parametrize("name", ["desk", "sweep_p0", "sweep_levels", "sweep_battery", "quick"])
def test_shipped_configs_load_and_round_trip(name):
    cfg = load_config(CONFIGS / f"{name}.yaml")
    assert parse_config(yaml.safe_load(emit_config(cfg))) == cfg


def test_round_trip_after_change():
    cfg = tiny(**{"run.p0": [600.0, 700.0], "energy.battery_ah": 30.0})
    assert parse_config(yaml.safe_load(emit_config(cfg))) == cfg


def test_hash_tracks_content():
    a, b = tiny(), tiny()
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(a.updated({"run.seed": 1}))


@pytest.mark.parametrize("data,path", [
    ({"run": {"p0": 2000.0}}, "run.p0"),
    ({"run": {"p0": [500.0]}}, "run.p0"),
    ({"sweep": {"axis": "p0", "values": [500.0, -1.0]}}, "sweep.values.1"),
    ({"system": {"xi": 1.5}}, "system.xi"),
    ({"system": {"colour": 1}}, "system.colour"),
    ({"schema_version": 9}, "schema_version"),
])
def test_config_errors_name_the_field(data, path):
    with pytest.raises(ConfigError) as err:
        parse_config(data)
    assert err.value.path == path


def test_bad_yaml_and_missing_file(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("run: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_power_level_sweep_point():
    cfg = tiny(**{"sweep.axis": "power_levels", "sweep.values": [4]})
    point = cfg.at_sweep_point(4)
    assert point.grid.ac_levels == [0.0, 500.0, 1000.0, 1500.0]
    with pytest.raises(ConfigError):
        cfg.at_sweep_point(1)


# --- experiments -------------------------------------------------------------------

def test_unknown_scheme():
    with pytest.raises(ValueError):
        run_scheme(tiny(), "nope")


def test_empty_sweep_has_header_only(tmp_path):
    cfg = tiny(**{"sweep.values": []})
    sweep = run_sweep(cfg)
    header, rows = sweep.table()
    assert header == ["p0", "pomdp", "posg", "baseline1", "baseline2", "baseline3"]
    assert rows == []


def test_sweep_table_columns():
    cfg = tiny(**{"sweep.values": [800.0], "sweep.seeds": [0],
                  "sweep.schemes": ["pomdp", "posg", "orthogonal-tdma", "csi-eqsi-only", "greedy"],
                  "run.frames": 2000})
    header, rows = run_sweep(cfg).table()
    assert len(rows) == 1 and rows[0][0] == 800.0
    assert all(np.isfinite(x) for x in rows[0][1:])


def test_submission_order_does_not_matter(tmp_path):
    from greenqueue.harness.outputs import emit_outputs
    cfg = tiny()
    n = 2 * 2 * 2
    a = run_sweep(cfg)
    b = run_sweep(cfg, order=list(reversed(range(n))))
    emit_outputs(a, cfg, tmp_path / "a")
    emit_outputs(b, cfg, tmp_path / "b")
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    with pytest.raises(ValueError):
        run_sweep(cfg, order=[0, 0, 1, 2, 3, 4, 5, 6])


def test_parallel_sweep_matches_serial(tmp_path):
    from greenqueue.harness.outputs import emit_outputs
    cfg = tiny(**{"sweep.seeds": [0]})
    emit_outputs(run_sweep(cfg), cfg, tmp_path / "a")
    emit_outputs(run_sweep(cfg, workers=2), cfg, tmp_path / "b")
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_battery_sweep_changes_capacity():
    cfg = tiny(**{"sweep.axis": "battery_ah", "sweep.values": [10.0, 40.0], "sweep.seeds": [0]})
    caps = [int(build_network(cfg.at_sweep_point(v)).energy.capacity_units[0]) for v in (10.0, 40.0)]
    assert caps == [2880, 11520]
    sweep = run_sweep(cfg)
    assert len(sweep.runs) == 4 and {r.value for r in sweep.runs} == {10.0, 40.0}


# --- command line ----------------------------------------------------------------

def write_cfg(tmp_path, cfg) -> Path:
    path = tmp_path / "cfg.yaml"
    path.write_text(emit_config(cfg))
    return path


def error_of(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_cli_run_is_byte_identical(tmp_path, capsys):
    path = write_cfg(tmp_path, tiny())
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
    first = tree(tmp_path / "a")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
    assert tree(tmp_path / "a") == first
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config_hash"] == config_hash(load_config(tmp_path / "a" / "config.yaml"))
    assert set(manifest["files"]) >= {"config.yaml", "traces/pomdp_seed0.csv", "runs/pomdp_seed0.json"}


def test_cli_sweep_and_baseline(tmp_path, capsys):
    path = write_cfg(tmp_path, tiny(**{"sweep.seeds": [0]}))
    assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "s")]) == 0
    table = (tmp_path / "s" / "sweep_table.csv").read_text().splitlines()
    assert table[0] == "p0,pomdp,posg,baseline1,baseline2,baseline3"
    assert len(table) == 3
    assert main(["baseline", "--kind", "greedy", "--config", str(path), "--out", str(tmp_path / "g")]) == 0
    assert (tmp_path / "g" / "runs" / "greedy_seed0.json").exists()


def test_cli_usage_error(capsys):
    assert main(["fly"]) == 2
    assert error_of(capsys)["error"] == "usage"
    assert main(["run", "--workers", "0"]) == 2


def test_cli_config_error(tmp_path, capsys):
    path = tmp_path / "cfg.yaml"
    path.write_text("run:\n  p0: 5000\n")
    assert main(["run", "--config", str(path)]) == 3
    err = error_of(capsys)
    assert err["error"] == "config" and "run.p0" in err["message"]
    assert main(["run", "--seed", "-1"]) == 3


def test_cli_io_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    path = write_cfg(tmp_path, tiny())
    assert main(["run", "--config", str(path), "--out", str(blocker / "sub")]) == 4
    assert error_of(capsys)["error"] == "io"


def test_cli_oracle_check(tmp_path, capsys):
    assert main(["oracle-check", "--instances", "3", "--out", str(tmp_path)]) == 0
    line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert line["passed"] is True
    report = json.loads((tmp_path / "oracle_check.json").read_text())
    assert len(report["instances"]) == 3


def test_cli_certification_failure(tmp_path, capsys, monkeypatch):
    import greenqueue.harness.cli as cli
    monkeypatch.setattr(cli, "FD_TOL", 0.0)
    assert main(["oracle-check", "--instances", "1", "--out", str(tmp_path)]) == 5
    assert error_of(capsys)["error"] == "certification"


def test_oracle_check_is_seeded():
    a, b = oracle_check(2, seed=3), oracle_check(2, seed=3)
    assert a == b
