"""Deterministic on-disk results: run dump, summary, Pareto slice and resolved config."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..config import SimConfig
from .episode import RunRecord
from .sweep import latency_key

PARETO_LATENCY_MS = 50.0
PARETO_FIELDS = ("method", "median_throughput_bps", "median_mse_m2")


class OutputError(OSError):
    pass


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def runs_csv_text(records: list[RunRecord]) -> str:
    """RFC-4180 CSV (CRLF line ends, minimal quoting) with one row per record."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(RunRecord.FIELDS)
    for r in records:
        w.writerow([_fmt(getattr(r, f)) for f in RunRecord.FIELDS])
    return buf.getvalue()


def read_runs_csv(path) -> list[dict]:
    """Rows of a ``runs.csv`` with numeric and boolean fields converted."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in ("latency_ms", "sum_rate", "mse", "total_power", "reward"):
            row[k] = float(row[k])
        row["seed"] = int(row["seed"])
        row["step"] = int(row["step"])
        row["violation"] = row["violation"] == "true"
    return rows


def summary_json_text(summary: dict) -> str:
    return json.dumps(summary, indent=2, allow_nan=False) + "\n"


def pareto_rows(summary: dict, latency_ms: float = PARETO_LATENCY_MS) -> list[tuple]:
    key = latency_key(latency_ms)
    return [(m, cells[key]["median_sum_rate_bps"], cells[key]["median_mse_m2"])
            for m, cells in summary.items() if key in cells]


def pareto_csv_text(summary: dict, latency_ms: float = PARETO_LATENCY_MS) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(PARETO_FIELDS)
    for row in pareto_rows(summary, latency_ms):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def config_resolved_text(cfg: SimConfig) -> str:
    doc = {"config": cfg.to_dict(), "content_hash": cfg.content_hash()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def emit_outputs(records: list[RunRecord], summary: dict, cfg: SimConfig, out_dir) -> dict[str, Path]:
    """Write the four result files; identical inputs give identical bytes."""
    out = Path(out_dir)
    return {
        "runs": _write(out / "runs.csv", runs_csv_text(records)),
        "summary": _write(out / "summary.json", summary_json_text(summary)),
        "pareto": _write(out / "pareto_50ms.csv", pareto_csv_text(summary)),
        "config": _write(out / "config_resolved.json", config_resolved_text(cfg)),
    }
