"""Trace CSV, summary JSON and long-format table emission."""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Mapping
from pathlib import Path

import numpy as np

from ..core import InvalidArgumentError, RunTrace

TRACE_HEADER = ("t", "r", "s", "e_true", "e_obs", "z", "set_size", "in_range", "is_training")


class OutputError(OSError):
    """An output file could not be written or read."""


def _ensure_parent(path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"{path.parent}: cannot create directory ({exc.strerror})") from exc


def write_trace(trace: RunTrace, path: str | Path) -> Path:
    """One row per round; floats are written with ``repr`` so they round-trip exactly."""
    path = Path(path)
    _ensure_parent(path)
    cols = [trace.r.tolist(), trace.s.tolist(), trace.e_true.tolist(), trace.e_obs.tolist(), trace.z.tolist(),
            trace.set_size.tolist(), trace.in_range.tolist(), trace.is_training.tolist()]
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for t, row in enumerate(zip(*cols), start=1):
                r, s, e, eo, z, size, inr, tr = row
                w.writerow((t, repr(r), repr(s), e, eo, z, repr(float(size)), inr, tr))
    except OSError as exc:
        raise OutputError(f"{path}: cannot write trace ({exc.strerror})") from exc
    return path


def read_trace_columns(path: str | Path) -> dict[str, np.ndarray]:
    """Read a trace CSV back into columns."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OutputError(f"{path}: cannot read trace ({exc.strerror})") from exc
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise InvalidArgumentError(f"{path}: not a trace file (header {rows[0] if rows else None})")
    body = rows[1:]
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(TRACE_HEADER):
        try:
            vals = [row[j] for row in body]
        except IndexError:
            raise InvalidArgumentError(f"{path}: short row") from None
        if name in ("r", "s", "set_size"):
            out[name] = np.array(vals, dtype=float)
        else:
            out[name] = np.array(vals, dtype=np.int64)
    if not np.array_equal(out["t"], np.arange(1, len(body) + 1)):
        raise InvalidArgumentError(f"{path}: rounds are not numbered 1..T")
    return out


def _jsonable(x):
    if isinstance(x, Mapping):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer, bool, np.bool_)):
        return x.item() if isinstance(x, np.generic) else x
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def summary_json(summary: Mapping) -> str:
    return json.dumps(_jsonable(summary), sort_keys=True, allow_nan=False, indent=1) + "\n"


def write_summary(summary: Mapping, path: str | Path) -> Path:
    path = Path(path)
    _ensure_parent(path)
    try:
        path.write_text(summary_json(summary))
    except OSError as exc:
        raise OutputError(f"{path}: cannot write summary ({exc.strerror})") from exc
    return path


TABLE_HEADER = ("experiment", "sweep_key", "sweep_value", "algorithm", "predictor", "metric", "statistic", "value")


def table_rows(summary: Mapping, sweep_key: str = "", sweep_value: object = "") -> list[tuple]:
    """Long-format rows for the final metrics and bound statistics of one experiment."""
    cfg = summary.get("config", {})
    base = (cfg.get("name", ""), sweep_key, sweep_value, cfg.get("algorithm", ""), cfg.get("predictor.kind", ""))
    rows = []
    for metric, stats in sorted(summary.get("final", {}).items()):
        for stat, v in sorted(stats.items()):
            rows.append((*base, metric, stat, v))
    for name, stats in sorted(summary.get("bounds", {}).items()):
        for stat, v in sorted(stats.items()):
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                rows.append((*base, f"bound.{name}", stat, v))
    return rows


def write_table(rows: Iterable[tuple], path: str | Path) -> Path:
    path = Path(path)
    _ensure_parent(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TABLE_HEADER)
            for row in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    except OSError as exc:
        raise OutputError(f"{path}: cannot write table ({exc.strerror})") from exc
    return path


def write_per_step_table(summary: Mapping, path: str | Path) -> Path:
    """Plot-ready per-step means/stds: ``t,metric,mean,std``."""
    path = Path(path)
    _ensure_parent(path)
    per_step = summary.get("per_step", {})
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "metric", "mean", "std"))
            for metric in sorted(per_step):
                m, s = per_step[metric]["mean"], per_step[metric]["std"]
                for t, (a, b) in enumerate(zip(np.asarray(m).tolist(), np.asarray(s).tolist()), start=1):
                    w.writerow((t, metric, repr(a), repr(b)))
    except OSError as exc:
        raise OutputError(f"{path}: cannot write table ({exc.strerror})") from exc
    return path
