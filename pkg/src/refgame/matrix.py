"""Named experiment matrices: declarative configs for a set of runs, plus
the runner that executes them independently and assembles the combined
comparison table and figures.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import yaml

from refgame.config import ExperimentConfig
from refgame.data import load_cifar10
from refgame.errors import ConfigError
from refgame.metrics import EvaluationReport
from refgame.plotting import emit_plots, plot_comparison_bars
from refgame.training import Trainer


@dataclass
class MatrixRow:
    name: str
    config: ExperimentConfig


@dataclass
class RowResult:
    name: str
    report: Optional[EvaluationReport] = None
    error: Optional[str] = None
    skipped: bool = False


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_matrix(path: str | Path) -> list[MatrixRow]:
    """Parse a matrix file: a ``base`` override block plus named ``rows``.

    Row entries are config overrides deep-merged onto base and defaults;
    every row must carry a unique ``name``.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"matrix file not found: {path}")
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict) or "rows" not in raw:
        raise ConfigError(f"matrix file {path} must define a 'rows' list")
    base = raw.get("base") or {}
    defaults = ExperimentConfig().to_dict()
    rows = []
    seen = set()
    for entry in raw["rows"]:
        entry = dict(entry)
        name = entry.pop("name", None)
        if not name:
            raise ConfigError("every matrix row needs a 'name'")
        if name in seen:
            raise ConfigError(f"duplicate matrix row name {name!r}")
        seen.add(name)
        merged = _deep_merge(_deep_merge(defaults, base), entry)
        config = ExperimentConfig.from_dict(merged).validate()
        rows.append(MatrixRow(name=name, config=config))
    return rows


def _latest_epoch_checkpoint(run_dir: Path) -> Optional[Path]:
    candidates = sorted(run_dir.glob("ckpt-epoch*.pt"))
    return candidates[-1] if candidates else None


def _run_row(name: str, config_dict: dict) -> dict:
    """Execute one row to completion; never raises (errors are recorded)."""
    try:
        config = ExperimentConfig.from_dict(config_dict)
        data = load_cifar10(config.resolved_data_path())
        run_dir = Path(config.output_dir)
        resume_from = _latest_epoch_checkpoint(run_dir)
        if resume_from is not None:
            trainer = Trainer.load_checkpoint(resume_from, data, config=config)
        else:
            trainer = Trainer(config, data)
        trainer.train()
        report = trainer.evaluate()
        report.save(run_dir / "report.json")
        return {"name": name, "report": report.to_dict(), "error": None}
    except Exception as exc:  # noqa: BLE001  (row isolation is the contract)
        return {"name": name, "report": None, "error": f"{type(exc).__name__}: {exc}"}


def run_matrix(
    rows: list[MatrixRow],
    out_dir: str | Path,
    parallelism: int = 1,
    force: bool = False,
) -> list[RowResult]:
    """Run every row, skipping ones with an existing report unless forced.

    Rows are isolated: a failure is recorded in its result and in the
    combined table, the remaining rows still run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results: dict[str, RowResult] = {}
    pending: list[MatrixRow] = []
    for row in rows:
        row = MatrixRow(row.name, dataclasses.replace(row.config))
        row.config.output_dir = str(out_dir / row.name)
        report_path = Path(row.config.output_dir) / "report.json"
        if report_path.exists() and not force:
            results[row.name] = RowResult(
                name=row.name,
                report=EvaluationReport.load(report_path),
                skipped=True,
            )
        else:
            pending.append(row)

    if parallelism > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = [
                pool.submit(_run_row, row.name, row.config.to_dict()) for row in pending
            ]
            raw_results = [f.result() for f in futures]
    else:
        raw_results = [_run_row(row.name, row.config.to_dict()) for row in pending]

    for raw in raw_results:
        report = EvaluationReport.from_dict(raw["report"]) if raw["report"] else None
        results[raw["name"]] = RowResult(
            name=raw["name"], report=report, error=raw["error"]
        )

    ordered = [results[row.name] for row in rows]
    write_tables(ordered, out_dir)
    _emit_matrix_plots(rows, ordered, out_dir)
    return ordered


_TABLE_COLUMNS = (
    "name", "comm_rate", "comm_rate_sd", "top5_comm_rate", "mean_msg_len",
    "msg_len_sd", "target_class_top5", "target_class_avg_rank",
    "rotation_accuracy", "games", "config_hash", "error",
)


def _row_cells(result: RowResult) -> dict:
    cells = {c: "" for c in _TABLE_COLUMNS}
    cells["name"] = result.name
    if result.error:
        cells["error"] = result.error
    if result.report is None:
        return cells
    r = result.report

    def fmt(x: Optional[float]) -> str:
        return "" if x is None else f"{x:.4f}"

    cells.update(
        comm_rate=fmt(r.comm_rate),
        comm_rate_sd=fmt(r.comm_rate_sd),
        top5_comm_rate=fmt(r.top5_comm_rate),
        mean_msg_len=fmt(r.mean_msg_len),
        msg_len_sd=fmt(r.msg_len_sd),
        target_class_top5=fmt(r.target_class_top5_mean),
        target_class_avg_rank=fmt(r.target_class_avg_rank),
        rotation_accuracy=fmt(r.rotation_accuracy),
        games=str(r.games),
        config_hash=str(r.meta.get("config_hash", "")),
    )
    return cells


def write_tables(results: list[RowResult], out_dir: str | Path) -> tuple[Path, Path]:
    """Emit the combined table as CSV and as aligned plain text."""
    out_dir = Path(out_dir)
    rows = [_row_cells(res) for res in results]

    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_TABLE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    widths = {
        c: max(len(c), *(len(r[c]) for r in rows)) if rows else len(c)
        for c in _TABLE_COLUMNS
    }
    lines = [
        "  ".join(c.ljust(widths[c]) for c in _TABLE_COLUMNS).rstrip(),
        "  ".join("-" * widths[c] for c in _TABLE_COLUMNS).rstrip(),
    ]
    for r in rows:
        lines.append("  ".join(r[c].ljust(widths[c]) for c in _TABLE_COLUMNS).rstrip())
    txt_path = out_dir / "results.txt"
    txt_path.write_text("\n".join(lines) + "\n")
    return csv_path, txt_path


def _emit_matrix_plots(
    rows: list[MatrixRow], results: list[RowResult], out_dir: Path
) -> None:
    logs = [
        out_dir / row.name / "metrics.jsonl"
        for row in rows
        if (out_dir / row.name / "metrics.jsonl").exists()
    ]
    if logs:
        emit_plots(logs, out_dir)
    done = [(res.name, res.report) for res in results if res.report is not None]
    if done:
        plot_comparison_bars(
            [n for n, _ in done],
            [r.comm_rate for _, r in done],
            "communication rate",
            out_dir / "comm_rate_by_row.png",
            config_hashes=[str(r.meta.get("config_hash", "")) for _, r in done],
        )
