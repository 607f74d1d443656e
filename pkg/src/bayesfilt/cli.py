"""Command-line front end: data generation, benchmark runs, sweeps, timing.

Subcommands
-----------
``gen``
    Draw one experiment stream and write it as CSV.
``run``
    Execute every configured method over every seed and write ``metrics.csv``
    (or ``metrics.json``), ``summary.json``, and — when any method tracks
    runlength hypotheses — ``runlength.csv``.
``sweep``
    Re-run the experiment over a hyperparameter grid for one method and
    tabulate (grid point, method, seed, summary metrics).
``bench``
    Time the core filter primitives and write ``bench.json``.

Conventions
-----------
* Configs are JSON; unknown keys are rejected.
* CSV uses a header row, ``,`` separators, ``.`` decimals, and floats with
  17 significant digits so values survive a parse round trip bit-exactly.
* Every output file is written atomically (temp file + rename) into the
  output directory, resolved as ``--out`` > ``BAYESFILT_OUT_DIR`` > the
  config's ``out_dir`` > ``./out``.
* Exit status: 0 only if everything completed; 1 if any trial failed;
  2 for configuration or usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from types import SimpleNamespace
from typing import Optional

import numpy as np

from .datagen import Stream, substream
from .eval import (
    EXPERIMENT_FAMILIES,
    ExperimentConfig,
    MethodSpec,
    make_stream,
    run_trial,
)

OUT_DIR_ENV = "BAYESFILT_OUT_DIR"
FLOAT_DIGITS = ".17g"


# ---------------------------------------------------------------------------
# Formatting and atomic IO


def format_cell(value) -> str:
    """Render one CSV cell: ints exactly, floats with 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), FLOAT_DIGITS)
    return str(value)


def atomic_write_text(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename (never append)."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def render_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def resolve_out_dir(cli_value: Optional[str], config_value: Optional[str]) -> str:
    if cli_value:
        return cli_value
    env_value = os.environ.get(OUT_DIR_ENV)
    if env_value:
        return env_value
    if config_value:
        return config_value
    return "out"


# ---------------------------------------------------------------------------
# Config parsing

_TOP_KEYS = {
    "experiment", "seeds", "methods", "T", "warmup", "generator", "metrics",
    "out_dir", "sweep",
}
_METHOD_KEYS = {"name", "filter", "params"}
_SWEEP_KEYS = {"method", "grid"}


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ValueError(f"unknown {where} keys: {', '.join(unknown)}")


def load_config(path: str) -> dict:
    """Read and structurally validate a JSON experiment config."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    _reject_unknown(raw, _TOP_KEYS, "config")
    if "experiment" not in raw:
        raise ValueError("config needs an 'experiment' entry")
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not all(
        isinstance(s, int) and not isinstance(s, bool) for s in seeds
    ):
        raise ValueError("'seeds' must be a list of integers")
    methods = raw.get("methods", [])
    if not isinstance(methods, list):
        raise ValueError("'methods' must be a list")
    for m in methods:
        if not isinstance(m, dict):
            raise ValueError("each method must be an object")
        _reject_unknown(m, _METHOD_KEYS, "method")
        if "name" not in m or "filter" not in m:
            raise ValueError("each method needs 'name' and 'filter'")
        if not isinstance(m.get("params", {}), dict):
            raise ValueError("method 'params' must be an object")
    if "generator" in raw and not isinstance(raw["generator"], dict):
        raise ValueError("'generator' must be an object")
    if "metrics" in raw and not (
        isinstance(raw["metrics"], list)
        and all(isinstance(c, str) for c in raw["metrics"])
    ):
        raise ValueError("'metrics' must be a list of column names")
    if "sweep" in raw:
        sweep = raw["sweep"]
        if not isinstance(sweep, dict):
            raise ValueError("'sweep' must be an object")
        _reject_unknown(sweep, _SWEEP_KEYS, "sweep")
        if "method" not in sweep or "grid" not in sweep:
            raise ValueError("'sweep' needs 'method' and 'grid'")
        grid = sweep["grid"]
        if not isinstance(grid, dict) or not grid or not all(
            isinstance(v, list) and v for v in grid.values()
        ):
            raise ValueError("sweep 'grid' must map parameters to nonempty lists")
    return raw


def experiment_config(raw: dict) -> ExperimentConfig:
    """Build the validated runtime config from a parsed JSON tree."""
    methods = tuple(
        MethodSpec(name=m["name"], filter=m["filter"], params=m.get("params", {}))
        for m in raw.get("methods", [])
    )
    return ExperimentConfig(
        experiment=raw["experiment"],
        seeds=tuple(raw.get("seeds", [0])),
        methods=methods,
        T=raw.get("T"),
        warmup=raw.get("warmup", 0),
        generator=raw.get("generator", {}),
    )


def generator_config(raw: dict) -> SimpleNamespace:
    """The subset of the config that ``gen`` needs (no methods required)."""
    if raw["experiment"] not in EXPERIMENT_FAMILIES:
        raise ValueError(f"unknown experiment {raw['experiment']!r}")
    return SimpleNamespace(
        experiment=raw["experiment"],
        T=raw.get("T"),
        generator=raw.get("generator", {}),
    )


# ---------------------------------------------------------------------------
# Stream CSV schema


def stream_columns(stream: Stream) -> list:
    cols = ["t"]
    if stream.x is not None:
        cols += [f"x_{i}" for i in range(stream.x.shape[1])]
    cols += [f"y_{i}" for i in range(stream.y.shape[1])]
    if stream.theta is not None:
        cols += [f"theta_{i}" for i in range(stream.theta.shape[1])]
    if stream.changepoints is not None:
        cols.append("changepoint")
    return cols


def render_stream_csv(stream: Stream) -> str:
    header = stream_columns(stream)
    blocks = [np.asarray(stream.t, dtype=object).reshape(-1, 1)]
    if stream.x is not None:
        blocks.append(stream.x)
    blocks.append(stream.y)
    if stream.theta is not None:
        blocks.append(stream.theta)
    if stream.changepoints is not None:
        blocks.append(stream.changepoints.reshape(-1, 1))
    rows = (
        np.concatenate([np.asarray(b, dtype=object) for b in blocks], axis=1)
        if len(stream)
        else []
    )
    return render_csv(header, rows)


def read_stream_csv(path: str) -> Stream:
    """Parse a stream CSV back into the in-memory representation."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        raw_rows = [row for row in reader if row]
    groups = {}
    for idx, col in enumerate(header):
        key = col.rsplit("_", 1)[0] if "_" in col else col
        groups.setdefault(key, []).append(idx)

    def block(key, cast=float):
        if key not in groups:
            return None
        idxs = groups[key]
        return np.array(
            [[cast(row[i]) for i in idxs] for row in raw_rows], dtype=float
        ).reshape(len(raw_rows), len(idxs))

    t = np.array([int(row[header.index("t")]) for row in raw_rows], dtype=int)
    changepoints = None
    if "changepoint" in header:
        cp_idx = header.index("changepoint")
        changepoints = np.array(
            [row[cp_idx] == "1" for row in raw_rows], dtype=bool
        )
    y = block("y")
    if y is None:
        raise ValueError("stream CSV must contain y columns")
    return Stream(
        t=t,
        y=y,
        x=block("x"),
        theta=block("theta"),
        changepoints=changepoints,
    )


# ---------------------------------------------------------------------------
# Trial execution


def execute_trials(config: ExperimentConfig, jobs: int):
    """Run methods x seeds, optionally in a process pool.

    Returns ``(trials, failures)`` in deterministic (method, seed) order;
    failures are ``(method, seed, message)`` tuples.
    """
    tasks = [(spec, seed) for spec in config.methods for seed in config.seeds]
    trials, failures = [], []
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(run_trial, config, spec, seed)
                for spec, seed in tasks
            ]
            for (spec, seed), future in zip(tasks, futures):
                try:
                    trials.append(future.result())
                except Exception as exc:
                    failures.append((spec.name, seed, str(exc)))
    else:
        for spec, seed in tasks:
            try:
                trials.append(run_trial(config, spec, seed))
            except Exception as exc:
                failures.append((spec.name, seed, str(exc)))
    return trials, failures


def metric_columns(trials, requested: Optional[list]) -> list:
    """Column order for metrics output; validates any requested subset."""
    available: list = []
    for trial in trials:
        for key in trial.table:
            if key != "t" and key not in available:
                available.append(key)
    if requested is None:
        return available
    missing = [c for c in requested if c not in available]
    if missing:
        raise ValueError(
            f"unknown metrics {', '.join(missing)}; available: "
            f"{', '.join(available)}"
        )
    return list(requested)


def metrics_rows(trials, columns):
    for trial in trials:
        T = len(trial.table["t"])
        for i in range(T):
            yield [trial.method, trial.seed, trial.table["t"][i]] + [
                trial.table[c][i] if c in trial.table else "" for c in columns
            ]


def runlength_rows(trials):
    for trial in trials:
        if trial.runlengths:
            for t, r, log_post in trial.runlengths:
                yield [trial.method, trial.seed, t, r, log_post]


def _aggregate(values: list) -> dict:
    arr = np.asarray(values, dtype=float)
    return {
        "mean": float(np.mean(arr)),
        "median": float(np.median(arr)),
        "iqr": float(np.percentile(arr, 75) - np.percentile(arr, 25)),
    }


def summary_payload(config: ExperimentConfig, trials) -> dict:
    """Summary tree: config echo plus per-method seed values and aggregates."""
    methods = {}
    for spec in config.methods:
        own = [t for t in trials if t.method == spec.name]
        per_seed: dict = {}
        for trial in own:
            for key, value in trial.summary.items():
                per_seed.setdefault(key, {})[str(trial.seed)] = float(value)
        aggregates = {
            key: _aggregate(list(by_seed.values()))
            for key, by_seed in per_seed.items()
        }
        methods[spec.name] = {
            "filter": spec.filter,
            "params": spec.params,
            "per_seed": per_seed,
            "aggregates": aggregates,
        }
    return {
        "experiment": config.experiment,
        "family": config.family,
        "T": config.T,
        "warmup": config.warmup,
        "seeds": list(config.seeds),
        "generator": config.generator,
        "methods": methods,
    }


def _report_failures(failures) -> None:
    for method, seed, message in failures:
        print(f"error: {method} seed {seed}: {message}", file=sys.stderr)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen(args) -> int:
    raw = load_config(args.config)
    cfg = generator_config(raw)
    seed = args.seed if args.seed is not None else raw.get("seeds", [0])[0]
    out_dir = resolve_out_dir(args.out, raw.get("out_dir"))
    stream = make_stream(cfg, seed)
    path = os.path.join(out_dir, f"{cfg.experiment}_seed{seed}.csv")
    atomic_write_text(path, render_stream_csv(stream))
    print(path)
    return 0


def _write_run_outputs(config, trials, out_dir, fmt, requested_metrics) -> None:
    columns = metric_columns(trials, requested_metrics)
    if fmt == "json":
        payload = {
            "columns": ["method", "seed", "t"] + columns,
            "rows": [
                [row[0], int(row[1]), int(row[2])]
                + [float(v) for v in row[3:]]
                for row in metrics_rows(trials, columns)
            ],
        }
        atomic_write_text(
            os.path.join(out_dir, "metrics.json"), render_json(payload)
        )
    else:
        atomic_write_text(
            os.path.join(out_dir, "metrics.csv"),
            render_csv(
                ["method", "seed", "t"] + columns, metrics_rows(trials, columns)
            ),
        )
    atomic_write_text(
        os.path.join(out_dir, "summary.json"),
        render_json(summary_payload(config, trials)),
    )
    rl = list(runlength_rows(trials))
    if rl:
        atomic_write_text(
            os.path.join(out_dir, "runlength.csv"),
            render_csv(["method", "seed", "t", "r", "log_post"], rl),
        )


def cmd_run(args) -> int:
    raw = load_config(args.config)
    config = experiment_config(raw)
    out_dir = resolve_out_dir(args.out, raw.get("out_dir"))
    trials, failures = execute_trials(config, args.jobs)
    _write_run_outputs(config, trials, out_dir, args.format, raw.get("metrics"))
    _report_failures(failures)
    return 1 if failures else 0


def sweep_points(grid: dict) -> list:
    """Cartesian product of the grid in declaration order."""
    names = list(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*grid.values())]


def cmd_sweep(args) -> int:
    raw = load_config(args.config)
    if "sweep" not in raw:
        raise ValueError("sweep requires a 'sweep' section in the config")
    base = experiment_config(raw)
    target = raw["sweep"]["method"]
    if target not in [m.name for m in base.methods]:
        raise ValueError(f"sweep method {target!r} is not in the method list")
    grid = raw["sweep"]["grid"]
    out_dir = resolve_out_dir(args.out, raw.get("out_dir"))

    param_names = list(grid)
    rows = []
    summary_keys: list = []
    all_failures = []
    for point in sweep_points(grid):
        methods = tuple(
            replace(m, params={**m.params, **point}) if m.name == target else m
            for m in base.methods
        )
        config = replace(base, methods=methods)
        trials, failures = execute_trials(config, args.jobs)
        all_failures.extend(
            (f"{method}@{point}", seed, msg) for method, seed, msg in failures
        )
        for trial in trials:
            for key in trial.summary:
                if key not in summary_keys:
                    summary_keys.append(key)
            rows.append((point, trial))

    header = param_names + ["method", "seed"] + summary_keys
    table = [
        [point[n] for n in param_names]
        + [trial.method, trial.seed]
        + [trial.summary.get(k, "") for k in summary_keys]
        for point, trial in rows
    ]
    if args.format == "json":
        payload = {
            "columns": header,
            "rows": [
                [format_cell(v) if isinstance(v, str) else v for v in row]
                for row in table
            ],
        }
        atomic_write_text(os.path.join(out_dir, "sweep.json"), render_json(payload))
    else:
        atomic_write_text(
            os.path.join(out_dir, "sweep.csv"), render_csv(header, table)
        )
    _report_failures(all_failures)
    return 1 if all_failures else 0


def _bench_cases():
    from .filters import ekf_step, kf_update, kf_update_precision
    from .gauss import GaussianBelief, PrecisionBelief
    from .models import TransitionModel, fixed_matrix_gaussian_model, logistic_model
    from .scalable import DlrPrecisionBelief, lofi_predict, lofi_update

    rng = substream(0, "bench/inputs")
    d = 50
    H = rng.normal(size=(5, d))
    R5 = np.eye(5)
    trans = TransitionModel()
    belief = GaussianBelief(np.zeros(d), np.eye(d))
    prec = PrecisionBelief(np.zeros(d), np.eye(d))
    y5 = rng.normal(size=5)

    logistic = logistic_model()
    x20 = rng.normal(size=20)
    bel20 = GaussianBelief(np.zeros(20), np.eye(20))

    cases = {
        "kf_update_d50": lambda: kf_update(belief, H, R5, y5),
        "kf_update_precision_d50": lambda: kf_update_precision(prec, H, R5, y5),
        "ekf_logistic_d20": lambda: ekf_step(bel20, trans, logistic, x20, 1.0),
    }
    for D in (100, 300, 1000):
        HD = rng.normal(size=(1, D))
        modelD = fixed_matrix_gaussian_model(HD, np.eye(1))
        dlr = DlrPrecisionBelief(
            mean=np.zeros(D), ups=np.ones(D), W=np.zeros((D, 10))
        )
        yD = rng.normal(size=1)

        def case(dlr=dlr, modelD=modelD, yD=yD):
            return lofi_update(lofi_predict(dlr, 0.01), modelD, None, yD)

        cases[f"lofi_D{D}_width10"] = case
    return cases


def cmd_bench(args) -> int:
    out_dir = resolve_out_dir(args.out, None)
    results = {}
    for name, fn in _bench_cases().items():
        fn()  # warm up caches and lazy imports before timing
        samples = []
        for _ in range(args.reps):
            start = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - start)
        results[name] = float(np.median(samples))
        print(f"{name}: {results[name]:.6f}s")
    atomic_write_text(
        os.path.join(out_dir, "bench.json"),
        render_json({"median_seconds": results, "reps": args.reps}),
    )
    return 0


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayesfilt",
        description="Online Bayesian filtering benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate one experiment stream as CSV")
    gen.add_argument("--config", required=True, help="JSON experiment config")
    gen.add_argument("--seed", type=int, default=None,
                     help="override the config's first seed")
    gen.add_argument("--out", default=None, help="output directory")
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="run all methods over all seeds")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    run.add_argument("--format", choices=("csv", "json"), default="csv",
                     help="metrics table format")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="hyperparameter grid sweep")
    sweep.add_argument("--config", required=True, help="JSON config with sweep")
    sweep.add_argument("--out", default=None, help="output directory")
    sweep.add_argument("--jobs", type=int, default=1, help="worker processes")
    sweep.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="sweep table format")
    sweep.set_defaults(func=cmd_sweep)

    bench = sub.add_parser("bench", help="time the core filter primitives")
    bench.add_argument("--out", default=None, help="output directory")
    bench.add_argument("--reps", type=int, default=5, help="timing repetitions")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
