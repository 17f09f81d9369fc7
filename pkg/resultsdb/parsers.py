"""Parsers converting experiment CSV/JSON outputs to ORM model instances."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Any

from resultsdb.models import ExperimentRun, SeriesPoint

SE_SUFFIX = "_se"


def _finite(val: str | None) -> float | None:
    """Return None for empty cells and non-finite values (nan, inf)."""
    if val is None or val == "":
        return None
    try:
        number = float(val)
    except ValueError:
        return None
    return number if math.isfinite(number) else None


def parse_series_csv(text: str) -> tuple[str, dict[str, list[tuple[float, float | None, float | None]]]]:
    """Split an experiment CSV into ``(x_name, {series: [(x, value, se), ...]})``."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    x_name, columns = header[0], header[1:]
    names = [c for c in columns if not c.endswith(SE_SUFFIX) or c[: -len(SE_SUFFIX)] not in columns]
    index = {name: i + 1 for i, name in enumerate(columns)}

    series: dict[str, list[tuple[float, float | None, float | None]]] = {n: [] for n in names}
    for row in reader:
        if not row:
            continue
        x = _finite(row[0])
        if x is None:
            continue
        for name in names:
            se_col = index.get(f"{name}{SE_SUFFIX}")
            series[name].append(
                (x, _finite(row[index[name]]), None if se_col is None else _finite(row[se_col]))
            )
    return x_name, series


def parse_experiment_result(sidecar: dict[str, Any], csv_text: str) -> ExperimentRun:
    """Parse a JSON sidecar plus its CSV table into an ExperimentRun with points."""
    x_name, series = parse_series_csv(csv_text)
    metadata = dict(sidecar.get("metadata") or {})
    config = metadata.pop("config", None)

    run = ExperimentRun(
        experiment=sidecar["experiment"],
        x_name=sidecar.get("x_name", x_name),
        config_hash=sidecar["config_hash"],
        seed=int(sidecar["seed"]),
        digest=sidecar["digest"],
        csv_name=sidecar.get("csv"),
        config_json=None if config is None else json.dumps(config, sort_keys=True),
        metadata_json=json.dumps(metadata, sort_keys=True),
    )
    run.points = [
        SeriesPoint(series=name, x=x, value=value, std_error=se)
        for name, points in series.items()
        for x, value, se in points
    ]
    return run
