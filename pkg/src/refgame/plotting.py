"""Training-curve figures rendered from metrics logs."""

from __future__ import annotations

import json
import warnings
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

# metric key -> (filename stem, y-axis label)
_CURVES = {
    "game_loss": ("loss", "game loss"),
    "comm_rate": ("comm_rate", "communication rate"),
    "mean_msg_len": ("msg_len", "mean message length"),
    "rotation_accuracy": ("rotation_acc", "rotation accuracy"),
}


def load_metrics_log(path: str | Path) -> tuple[dict, list[dict]]:
    """Split a line-delimited metrics log into (header, epoch records)."""
    header: dict = {}
    records: list[dict] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        if row.get("type") == "header":
            header = row
        else:
            records.append(row)
    return header, records


def _run_label(path: Path) -> str:
    return path.parent.name or path.stem


def emit_plots(
    log_paths: Sequence[str | Path],
    out_dir: str | Path,
    prefix: str = "curves",
) -> list[Path]:
    """Render one figure per metric, overlaying all given runs.

    Empty logs produce a warning and no files. Each figure's footer carries
    the config hashes of the plotted runs.
    """
    runs = []
    for p in log_paths:
        p = Path(p)
        header, records = load_metrics_log(p)
        if not records:
            warnings.warn(f"metrics log {p} has no epoch records, skipping")
            continue
        runs.append((_run_label(p), header, records))
    if not runs:
        return []

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = ", ".join(
        h.get("config_hash", "?") for _, h, _ in runs
    )
    written = []
    for key, (stem, ylabel) in _CURVES.items():
        series = [
            (label, [r["epoch"] for r in recs if key in r],
             [r[key] for r in recs if key in r])
            for label, _, recs in runs
        ]
        series = [(label, xs, ys) for label, xs, ys in series if xs]
        if not series:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, xs, ys in series:
            ax.plot(xs, ys, label=label)
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        if len(series) > 1:
            ax.legend(fontsize=8)
        fig.text(0.01, 0.01, f"config: {hashes}", fontsize=6, color="gray")
        fig.tight_layout(rect=(0, 0.03, 1, 1))
        path = out_dir / f"{prefix}_{stem}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def plot_comparison_bars(
    names: Sequence[str],
    values: Sequence[float],
    ylabel: str,
    out_path: str | Path,
    config_hashes: Optional[Sequence[str]] = None,
) -> Path:
    """Bar chart across experiment rows (used by the matrix runner)."""
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names)), 4))
    ax.bar(range(len(names)), values)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    if config_hashes:
        fig.text(0.01, 0.01, f"config: {', '.join(config_hashes)}",
                 fontsize=6, color="gray")
    fig.tight_layout(rect=(0, 0.03, 1, 1))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
