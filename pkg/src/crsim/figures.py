"""Figures and CSV exports for a task report."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .clock import MINUTE  # noqa: E402

COMPONENTS = ("vds", "prs", "sas", "bdl")
COLORS = {"vds": "#4C72B0", "prs": "#55A868", "sas": "#C44E52", "bdl": "#8172B2"}


def write_timeline_csv(report: dict, path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "t_min", "event", "detail"])
        for row in report["timeline"]:
            detail = {k: v for k, v in row.items() if k not in ("t", "event")}
            w.writerow([row["t"], f"{row['t'] / MINUTE:.3f}", row["event"], json.dumps(detail, sort_keys=True)])
    return path


def plot_score(report: dict, path: Path) -> Path:
    """One stacked bar per vulnerability, split into the four components."""
    vulns = report["score"]["vulnerabilities"]
    labels = list(vulns) or ["(none)"]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(labels) + 2), 4.0))
    bottom = [0.0] * len(labels)
    for comp in COMPONENTS:
        vals = [vulns[k][comp] if k in vulns else 0.0 for k in labels]
        ax.bar(labels, vals, bottom=bottom, label=comp.upper(), color=COLORS[comp])
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_ylabel("points before the accuracy multiplier")
    ax.set_title(f"{report['task']['task_id']}: total {report['score']['total']:.3f} "
                 f"(AM {report['score']['am']:.4f})")
    ax.legend(loc="upper right", fontsize="small")
    ax.tick_params(axis="x", labelrotation=15, labelsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_timeline(report: dict, path: Path) -> Path:
    """Events against task time, with the half-time mark and deadline."""
    window = report["task"]["time_window"]
    events = report["timeline"]
    kinds = sorted({e["event"] for e in events})
    fig, ax = plt.subplots(figsize=(8.0, 0.45 * len(kinds) + 1.8))
    for y, kind in enumerate(kinds):
        xs = [e["t"] / MINUTE for e in events if e["event"] == kind]
        ax.scatter(xs, [y] * len(xs), s=24, zorder=3)
    ax.axvline(window / 2 / MINUTE, color="grey", linestyle="--", linewidth=1, label="half-time")
    ax.axvline(window / MINUTE, color="black", linewidth=1, label="deadline")
    ax.set_yticks(range(len(kinds)), kinds, fontsize="small")
    ax.set_xlabel("minutes since the task arrived")
    ax.set_xlim(-window / MINUTE * 0.02, window / MINUTE * 1.02)
    ax.grid(axis="x", alpha=0.3)
    ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def render_figures(report: dict, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [
        plot_score(report, out / "score.png"),
        plot_timeline(report, out / "timeline.png"),
        write_timeline_csv(report, out / "timeline.csv"),
    ]
