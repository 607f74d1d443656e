"""Tests for the command-line interface: configs, schemas, exit codes."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from bayesfilt import cli
from bayesfilt.eval import ExperimentConfig, MethodSpec, run_experiment


def write_config(path, **overrides):
    cfg = {
        "experiment": "piecewise_gaussian",
        "seeds": [0, 1],
        "T": 40,
        "warmup": 5,
        "methods": [
            {"name": "static", "filter": "ekf"},
            {"name": "bank", "filter": "rl_pr", "params": {"K": 3, "hazard": 0.05}},
        ],
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return cfg


# ---------------------------------------------------------------------------
# Formatting, atomic writes, config parsing


def test_format_cell_round_trips_floats():
    for v in (0.1, 1.0 / 3.0, -2.5e-17, 1e300, 123.0):
        assert float(cli.format_cell(v)) == v
    assert cli.format_cell(7) == "7"
    assert cli.format_cell(np.int64(-3)) == "-3"
    assert cli.format_cell(True) == "1"
    assert cli.format_cell(np.bool_(False)) == "0"


def test_atomic_write_creates_dirs_and_leaves_no_temps(tmp_path):
    target = tmp_path / "nested" / "deep" / "file.txt"
    cli.atomic_write_text(str(target), "hello")
    assert target.read_text() == "hello"
    cli.atomic_write_text(str(target), "replaced")
    assert target.read_text() == "replaced"
    assert os.listdir(target.parent) == ["file.txt"]


def test_load_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "cfg.json"
    write_config(p, typo_key=1)
    with pytest.raises(ValueError, match="typo_key"):
        cli.load_config(str(p))
    write_config(p, methods=[{"name": "a", "filter": "ekf", "extra": 1}])
    with pytest.raises(ValueError, match="extra"):
        cli.load_config(str(p))
    write_config(p, seeds=[0, "one"])
    with pytest.raises(ValueError, match="seeds"):
        cli.load_config(str(p))
    p.write_text("{not json")
    with pytest.raises(ValueError, match="invalid JSON"):
        cli.load_config(str(p))
    write_config(p, sweep={"method": "bank"})
    with pytest.raises(ValueError, match="sweep"):
        cli.load_config(str(p))
    write_config(p, sweep={"method": "bank", "grid": {"K": []}})
    with pytest.raises(ValueError, match="grid"):
        cli.load_config(str(p))


def test_resolve_out_dir_precedence(monkeypatch):
    monkeypatch.delenv(cli.OUT_DIR_ENV, raising=False)
    assert cli.resolve_out_dir(None, None) == "out"
    assert cli.resolve_out_dir(None, "from_cfg") == "from_cfg"
    monkeypatch.setenv(cli.OUT_DIR_ENV, "from_env")
    assert cli.resolve_out_dir(None, "from_cfg") == "from_env"
    assert cli.resolve_out_dir("from_flag", "from_cfg") == "from_flag"


# ---------------------------------------------------------------------------
# gen


def test_gen_is_deterministic_and_round_trips(tmp_path):
    cfg = tmp_path / "cfg.json"
    write_config(cfg)
    out = tmp_path / "o"
    assert cli.main(["gen", "--config", str(cfg), "--seed", "3",
                     "--out", str(out)]) == 0
    path = out / "piecewise_gaussian_seed3.csv"
    first = path.read_bytes()
    assert cli.main(["gen", "--config", str(cfg), "--seed", "3",
                     "--out", str(out)]) == 0
    assert path.read_bytes() == first

    from bayesfilt.datagen import gen_piecewise_linreg

    stream = gen_piecewise_linreg("gaussian", T=40, seed=3)
    parsed = cli.read_stream_csv(str(path))
    np.testing.assert_array_equal(parsed.t, stream.t)
    np.testing.assert_array_equal(parsed.x, stream.x)
    np.testing.assert_array_equal(parsed.y, stream.y)
    np.testing.assert_array_equal(parsed.theta, stream.theta)
    np.testing.assert_array_equal(parsed.changepoints, stream.changepoints)


def test_gen_empty_stream_writes_header_only(tmp_path):
    cfg = tmp_path / "cfg.json"
    write_config(cfg, T=0)
    out = tmp_path / "o"
    assert cli.main(["gen", "--config", str(cfg), "--out", str(out)]) == 0
    text = (out / "piecewise_gaussian_seed0.csv").read_text()
    assert text == "t,x_0,y_0,theta_0,theta_1,theta_2,changepoint\n"


def test_gen_schema_without_optional_channels(tmp_path):
    cfg = tmp_path / "cfg.json"
    write_config(cfg, experiment="moons", T=8, methods=[])
    out = tmp_path / "o"
    assert cli.main(["gen", "--config", str(cfg), "--out", str(out)]) == 0
    header = (out / "moons_seed0.csv").read_text().splitlines()[0]
    assert header == "t,x_0,x_1,y_0"


# ---------------------------------------------------------------------------
# run


def test_run_outputs_match_inprocess_results(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    raw = write_config(cfg_path)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0

    config = ExperimentConfig(
        experiment="piecewise_gaussian",
        seeds=(0, 1),
        methods=(
            MethodSpec("static", "ekf"),
            MethodSpec("bank", "rl_pr", {"K": 3, "hazard": 0.05}),
        ),
        T=40,
        warmup=5,
    )
    trials = run_experiment(config)

    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "method,seed,t,y,pred,sq_err,rolling_rmse_10"
    assert len(lines) == 1 + 4 * 35
    row0 = lines[1].split(",")
    assert row0[:3] == ["static", "0", "5"]
    assert float(row0[4]) == trials[0].table["pred"][0]

    summary = json.loads((out / "summary.json").read_text())
    assert summary["experiment"] == "piecewise_gaussian"
    assert summary["methods"]["bank"]["params"] == {"K": 3, "hazard": 0.05}
    per_seed = summary["methods"]["static"]["per_seed"]["rmse"]
    expected = {
        str(t.seed): t.summary["rmse"] for t in trials if t.method == "static"
    }
    assert per_seed == expected
    agg = summary["methods"]["static"]["aggregates"]["rmse"]
    vals = np.array(list(expected.values()))
    assert agg["mean"] == pytest.approx(vals.mean())
    assert agg["median"] == pytest.approx(np.median(vals))
    assert agg["iqr"] == pytest.approx(
        np.percentile(vals, 75) - np.percentile(vals, 25)
    )

    rl = (out / "runlength.csv").read_text().splitlines()
    assert rl[0] == "method,seed,t,r,log_post"
    assert all(line.split(",")[0] == "bank" for line in rl[1:])


def test_run_is_deterministic_across_reruns_and_jobs(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path)
    out1, out2, out3 = (tmp_path / n for n in ("a", "b", "c"))
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out1)]) == 0
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out2)]) == 0
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out3),
                     "--jobs", "3"]) == 0
    for name in ("metrics.csv", "summary.json", "runlength.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        assert (out1 / name).read_bytes() == (out3 / name).read_bytes()


def test_run_honors_env_out_dir(tmp_path, monkeypatch):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path, seeds=[0], T=20, warmup=0,
                 methods=[{"name": "static", "filter": "ekf"}])
    env_dir = tmp_path / "env_out"
    monkeypatch.setenv(cli.OUT_DIR_ENV, str(env_dir))
    assert cli.main(["run", "--config", str(cfg_path)]) == 0
    assert (env_dir / "metrics.csv").exists()


def test_run_metrics_subset_and_unknown_metric(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path, metrics=["pred"], seeds=[0],
                 methods=[{"name": "static", "filter": "ekf"}])
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "metrics.csv").read_text().splitlines()[0] == "method,seed,t,pred"

    write_config(cfg_path, metrics=["no_such_metric"], seeds=[0],
                 methods=[{"name": "static", "filter": "ekf"}])
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 2
    assert "no_such_metric" in capsys.readouterr().err


def test_run_json_metrics_format(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path, seeds=[0], T=12, warmup=0,
                 methods=[{"name": "static", "filter": "ekf"}])
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out),
                     "--format", "json"]) == 0
    payload = json.loads((out / "metrics.json").read_text())
    assert payload["columns"][:3] == ["method", "seed", "t"]
    assert len(payload["rows"]) == 12
    assert payload["rows"][0][0] == "static"


def test_run_reports_config_errors(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path, typo_key=True)
    assert cli.main(["run", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 2
    assert "typo_key" in capsys.readouterr().err
    write_config(cfg_path, methods=[])
    assert cli.main(["run", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 2
    assert "method" in capsys.readouterr().err


def test_run_partial_failure_exits_nonzero(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(
        cfg_path,
        experiment="bandit",
        seeds=[0],
        T=30,
        warmup=0,
        methods=[
            {"name": "ok", "filter": "beta_static"},
            {"name": "broken", "filter": "beta_discount",
             "params": {"discount": 0.0}},
        ],
    )
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 1
    err = capsys.readouterr().err
    assert "broken" in err
    lines = (out / "metrics.csv").read_text().splitlines()
    assert len(lines) == 1 + 30  # completed method still written
    assert all(line.startswith("ok,") for line in lines[1:])


# ---------------------------------------------------------------------------
# sweep


def test_sweep_grid_of_one_matches_run(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    write_config(
        cfg_path,
        seeds=[0],
        methods=[{"name": "bank", "filter": "rl_pr",
                  "params": {"K": 3, "hazard": 0.05}}],
        sweep={"method": "bank", "grid": {"K": [3]}},
    )
    out = tmp_path / "o"
    assert cli.main(["sweep", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert cli.main(["run", "--config", str(cfg_path),
                     "--out", str(tmp_path / "r")]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "K,method,seed,rmse,rmedse"
    assert len(lines) == 2
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    cells = lines[1].split(",")
    assert float(cells[3]) == summary["methods"]["bank"]["per_seed"]["rmse"]["0"]


def test_sweep_row_count_and_determinism(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    write_config(
        cfg_path,
        seeds=[0],
        methods=[{"name": "bank", "filter": "rl_pr",
                  "params": {"K": 3, "hazard": 0.05}}],
        sweep={"method": "bank", "grid": {"K": [1, 2], "hazard": [0.1]}},
    )
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sweep", "--config", str(cfg_path), "--out", str(out1)]) == 0
    assert cli.main(["sweep", "--config", str(cfg_path), "--out", str(out2)]) == 0
    lines = (out1 / "sweep.csv").read_text().splitlines()
    assert lines[0] == "K,hazard,method,seed,rmse,rmedse"
    assert len(lines) == 3
    assert (out1 / "sweep.csv").read_bytes() == (out2 / "sweep.csv").read_bytes()


def test_sweep_requires_section_and_known_method(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path)
    assert cli.main(["sweep", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 2
    write_config(cfg_path, sweep={"method": "ghost", "grid": {"K": [1]}})
    assert cli.main(["sweep", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 2
    assert "ghost" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# bench and the module entry point


def test_bench_writes_timings(tmp_path, capsys):
    assert cli.main(["bench", "--out", str(tmp_path), "--reps", "2"]) == 0
    payload = json.loads((tmp_path / "bench.json").read_text())
    assert payload["reps"] == 2
    assert "kf_update_d50" in payload["median_seconds"]
    assert all(v >= 0.0 for v in payload["median_seconds"].values())


def test_module_entry_point(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path, seeds=[0], T=10, warmup=0,
                 methods=[{"name": "static", "filter": "ekf"}])
    proc = subprocess.run(
        [sys.executable, "-m", "bayesfilt.cli", "run", "--config",
         str(cfg_path), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "summary.json").exists()
    usage = subprocess.run(
        [sys.executable, "-m", "bayesfilt.cli"], capture_output=True, text=True
    )
    assert usage.returncode == 2
