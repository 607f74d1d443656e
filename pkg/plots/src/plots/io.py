"""Readers for the benchmark CLI's output files.

Each reader checks for the columns the caller needs and fails with an error
naming the file and what is missing.  Values are returned exactly as stored;
the figure layer plots them verbatim and never recomputes metrics.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import pandas as pd


def read_table(path, required: Sequence[str]) -> pd.DataFrame:
    """Load a long-format table (metrics, runlength, or stream file).

    Accepts the CLI's CSV layout or its JSON alternative
    (``{"columns": [...], "rows": [...]}``).
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        payload = json.loads(path.read_text(encoding="utf-8"))
        if (
            not isinstance(payload, dict)
            or "columns" not in payload
            or "rows" not in payload
        ):
            raise ValueError(
                f"{path}: expected a table object with 'columns' and 'rows'"
            )
        frame = pd.DataFrame(payload["rows"], columns=payload["columns"])
    else:
        try:
            frame = pd.read_csv(path)
        except pd.errors.EmptyDataError:
            raise ValueError(f"{path}: file has no header row") from None
    missing = sorted(set(required) - set(frame.columns))
    if missing:
        raise ValueError(
            f"{path}: missing required column(s) {missing}; "
            f"file has {list(frame.columns)}"
        )
    return frame


def read_summary(path) -> dict:
    """Load a run summary (``summary.json``) and check its top-level shape."""
    path = Path(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(payload, dict) or not isinstance(
        payload.get("methods"), dict
    ):
        raise ValueError(
            f"{path}: expected a summary object with a 'methods' mapping"
        )
    return payload
