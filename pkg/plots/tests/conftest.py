"""Shared fixtures: golden benchmark outputs produced by the real CLI.

The figure package only ever sees files the benchmark CLI wrote, so the
fixtures generate them the same way a user would — by invoking
``python -m bayesfilt.cli`` on small fixed-seed configs.
"""

import json
import subprocess
import sys
from pathlib import Path

import pytest

_CONFIGS = {
    "piecewise": {
        "experiment": "piecewise_gaussian",
        "seeds": [0, 1],
        "T": 60,
        "methods": [
            {"name": "static", "filter": "ekf"},
            {
                "name": "bank",
                "filter": "rl_pr",
                "params": {"K": 3, "hazard": 0.05},
            },
        ],
    },
    "bandit": {
        "experiment": "bandit",
        "seeds": [0, 1],
        "T": 80,
        "methods": [
            {"name": "static", "filter": "beta_static"},
            {
                "name": "discount",
                "filter": "beta_discount",
                "params": {"discount": 0.95},
            },
        ],
    },
    "ewma": {
        "experiment": "dji_returns",
        "seeds": [0],
        "T": 60,
        "generator": {
            "outlier_times": [20],
            "outlier_magnitudes": [0.3],
        },
        "methods": [
            {"name": "plain", "filter": "ewma", "params": {"beta": 0.095}},
            {
                "name": "robust",
                "filter": "wolf_ewma",
                "params": {"q": 0.01, "r": 1.0, "c": 0.05},
            },
        ],
    },
    "moons": {
        "experiment": "moons",
        "seeds": [0],
        "T": 80,
        "methods": [{"name": "static", "filter": "ekf"}],
    },
}


def run_benchmark_cli(*args: str) -> subprocess.CompletedProcess:
    proc = subprocess.run(
        [sys.executable, "-m", "bayesfilt.cli", *args],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, f"cli failed: {proc.stderr}"
    return proc


@pytest.fixture(scope="session")
def golden(tmp_path_factory) -> dict:
    """Benchmark outputs for every figure: run/gen once per session."""
    root = tmp_path_factory.mktemp("golden")
    paths = {"root": root}
    for name, config in _CONFIGS.items():
        config_path = root / f"{name}_config.json"
        config_path.write_text(json.dumps(config), encoding="utf-8")
        out_dir = root / name
        run_benchmark_cli(
            "run", "--config", str(config_path), "--out", str(out_dir)
        )
        paths[name] = out_dir
        paths[f"{name}_config"] = config_path
    stream_dir = root / "streams"
    run_benchmark_cli(
        "gen",
        "--config",
        str(paths["moons_config"]),
        "--seed",
        "0",
        "--out",
        str(stream_dir),
    )
    paths["moons_stream"] = stream_dir / "moons_seed0.csv"
    assert paths["moons_stream"].exists()
    assert (paths["piecewise"] / "runlength.csv").exists()
    return paths
