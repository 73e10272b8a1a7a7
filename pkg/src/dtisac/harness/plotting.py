"""Report generation: summary table text, plot-ready CSVs and PNG figures."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .outputs import PARETO_LATENCY_MS, pareto_rows  # noqa: E402
from .sweep import latency_key  # noqa: E402

TABLE_COLUMNS = (
    ("median_sum_rate_bps", "TP_Mbps", 1e-6),
    ("median_mse_m2", "MSE_m2", 1.0),
    ("median_power_ratio", "P_ratio", 1.0),
    ("violation_prob", "P_viol", 1.0),
    ("median_violation_prob", "med_P_viol", 1.0),
    ("median_reward", "reward", 1.0),
    ("throughput_retention", "retention", 1.0),
    ("normalized_sensing_error", "norm_MSE", 1.0),
)

# metric -> (file stem, axis label)
CURVES = {
    "throughput_retention": ("retention_vs_latency", "Throughput retention"),
    "median_violation_prob": ("violation_vs_latency", "Median violation probability"),
    "median_sum_rate_bps": ("throughput_vs_latency", "Median sum rate (bps)"),
    "median_mse_m2": ("mse_vs_latency", "Median sensing MSE (m^2)"),
    "normalized_sensing_error": ("sensing_error_vs_latency", "Normalized sensing error"),
    "median_reward": ("objective_vs_latency", "Median reward"),
}


def load_summary(in_dir) -> dict:
    path = Path(in_dir) / "summary.json"
    if not path.is_file():
        raise FileNotFoundError(f"no summary.json in {in_dir}")
    return json.loads(path.read_text())


def latencies_of(summary: dict) -> list[float]:
    return sorted({cell["latency_ms"] for cells in summary.values() for cell in cells.values()})


def format_table(summary: dict) -> str:
    """Fixed-width text rendering of the summary, one row per (method, latency)."""
    head = ["method", "latency_ms"] + [label for _, label, _ in TABLE_COLUMNS]
    rows = []
    for method, cells in summary.items():
        for cell in sorted(cells.values(), key=lambda c: c["latency_ms"]):
            row = [method, format(cell["latency_ms"], "g")]
            for key, _, scale in TABLE_COLUMNS:
                v = cell.get(key)
                row.append("-" if v is None else f"{v * scale:.4g}")
            rows.append(row)
    widths = [max(len(str(r[i])) for r in [head] + rows) for i in range(len(head))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in [head] + rows]
    return "\n".join(lines)


def _csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_curve_csv(summary: dict, metric: str, path: Path) -> Path:
    """Wide table: one row per latency, one column per method (blank when absent)."""
    lats = latencies_of(summary)
    methods = list(summary)
    rows = []
    for lat in lats:
        row = [format(lat, "g")]
        for m in methods:
            v = summary[m].get(latency_key(lat), {}).get(metric)
            row.append("" if v is None else repr(float(v)))
        rows.append(row)
    return _csv(path, ["latency_ms", *methods], rows)


def _plot_curve(summary: dict, metric: str, label: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m, cells in summary.items():
        pts = sorted((c["latency_ms"], c[metric]) for c in cells.values() if c.get(metric) is not None)
        if pts:
            x, y = zip(*pts)
            ax.plot(x, y, marker="o", label=m)
    ax.set_xlabel("Telemetry latency (ms)")
    ax.set_ylabel(label)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def _plot_pareto(rows, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m, tp, mse in rows:
        ax.scatter(mse, tp * 1e-6, label=m)
    ax.set_xlabel("Median sensing MSE (m^2)")
    ax.set_ylabel("Median sum rate (Mbps)")
    ax.set_title(f"Trade-off at {format(PARETO_LATENCY_MS, 'g')} ms")
    ax.grid(alpha=0.3)
    if rows:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def _plot_training(in_dir: Path, out: Path) -> list[Path]:
    paths = []
    for curve in sorted(in_dir.glob("*_episodes.csv")):
        with curve.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([int(r["episode"]) for r in rows], [float(r["mean_reward"]) for r in rows], lw=0.8)
        ax.set_xlabel("Episode")
        ax.set_ylabel("Mean reward per step")
        ax.set_title(curve.stem.removesuffix("_episodes"))
        ax.grid(alpha=0.3)
        fig.tight_layout()
        p = out / f"{curve.stem.removesuffix('_episodes')}_training.png"
        fig.savefig(p, dpi=120, metadata={"Software": None})
        plt.close(fig)
        paths.append(p)
    return paths


def write_report(in_dir, out_dir=None) -> list[Path]:
    """Write plot-ready CSVs and PNGs for a sweep directory; returns the paths."""
    in_dir = Path(in_dir)
    out = Path(out_dir) if out_dir is not None else in_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    summary = load_summary(in_dir)
    paths = []
    for metric, (stem, label) in CURVES.items():
        paths.append(write_curve_csv(summary, metric, out / f"{stem}.csv"))
        paths.append(_plot_curve(summary, metric, label, out / f"{stem}.png"))
    rows = pareto_rows(summary)
    paths.append(_csv(out / "pareto_50ms.csv", ["method", "median_throughput_bps", "median_mse_m2"],
                      [(m, repr(tp), repr(mse)) for m, tp, mse in rows]))
    paths.append(_plot_pareto(rows, out / "pareto_50ms.png"))
    paths.extend(_plot_training(in_dir, out))
    return paths
