"""Command-line front end: render one figure from a JSON description.

``plots render --spec figure.json`` reads a JSON object mirroring
``FigureSpec`` — required keys ``figure``, ``inputs``, ``output``; optional
``method``, ``seed``, ``metric``, ``title`` — renders the figure, and prints
the output path.  Unknown keys are rejected.  Exit status: 0 on success,
2 for configuration or usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .figures import FigureSpec, render

_SPEC_KEYS = {
    "figure",
    "inputs",
    "output",
    "method",
    "seed",
    "metric",
    "title",
}
_STRING_KEYS = ("figure", "output", "method", "metric", "title")


def load_spec(path) -> FigureSpec:
    """Parse and validate a figure-spec JSON file."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ValueError(f"{path}: figure spec must be a JSON object")
    unknown = sorted(set(payload) - _SPEC_KEYS)
    if unknown:
        raise ValueError(f"{path}: unknown spec key(s) {unknown}")
    for key in ("figure", "inputs", "output"):
        if key not in payload:
            raise ValueError(f"{path}: missing required spec key {key!r}")
    for key in _STRING_KEYS:
        if key in payload and not isinstance(payload[key], str):
            raise ValueError(f"{path}: {key!r} must be a string")
    if not isinstance(payload["inputs"], dict):
        raise ValueError(f"{path}: 'inputs' must map roles to file paths")
    seed = payload.get("seed")
    if seed is not None and (
        isinstance(seed, bool) or not isinstance(seed, int)
    ):
        raise ValueError(f"{path}: 'seed' must be an integer")
    return FigureSpec(**payload)


def cmd_render(args) -> int:
    result = render(load_spec(args.spec))
    print(result.path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots",
        description="Render figures from bayesfilt benchmark outputs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    render_p = sub.add_parser(
        "render", help="render one figure from a JSON spec"
    )
    render_p.add_argument(
        "--spec", required=True, help="path to the figure-spec JSON file"
    )
    render_p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
