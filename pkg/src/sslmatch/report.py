"""Summaries over the results store: accuracy grids, wall-time totals, plots.

The table, csv and plot views all read the same aggregation: per
(method, n_l) cell, the best test accuracy over every completed run,
with the contributing run hashes kept for provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .config import parse_flat_config
from .errors import ConfigError
from .metrics import read_metrics_csv


def format_duration(seconds: float) -> str:
    """Compact d/h/m rendering: '1d 16h 5m', '9h 12m', '1d 40m'; minutes floored."""
    if seconds < 0:
        raise ValueError(f"duration must be >= 0, got {seconds}")
    minutes = int(seconds // 60)
    days, rem = divmod(minutes, 24 * 60)
    hours, mins = divmod(rem, 60)
    parts = []
    if days:
        parts.append(f"{days}d")
    if hours:
        parts.append(f"{hours}h")
    if mins or not parts:
        parts.append(f"{mins}m")
    return " ".join(parts)


@dataclass
class RunRecord:
    run_dir: Path
    run_hash: str
    sweep: str
    method: str
    n_l: int | None
    config: dict
    test_acc: float | None
    best_val_loss: float | None
    wall_seconds: float


@dataclass
class AccuracyGrid:
    methods: list[str]
    n_l_values: list            # ints ascending, None (all labels) last
    cells: dict = field(default_factory=dict)        # (method, n_l) -> accuracy
    provenance: dict = field(default_factory=dict)   # (method, n_l) -> [run hashes]
    wall_totals: dict = field(default_factory=dict)  # method -> summed seconds


def collect_runs(runs_dir) -> list[RunRecord]:
    """Every completed run under <runs_dir>/<sweep>/<hash>/."""
    root = Path(runs_dir)
    records: list[RunRecord] = []
    if not root.is_dir():
        return records
    for status_file in sorted(root.glob("*/*/status")):
        if not status_file.read_text().startswith("complete"):
            continue
        run_dir = status_file.parent
        config = parse_flat_config((run_dir / "config.resolved").read_text())
        rows = read_metrics_csv(run_dir / "metrics.csv")
        final = rows[-1] if rows else {}
        records.append(RunRecord(
            run_dir=run_dir, run_hash=run_dir.name, sweep=run_dir.parent.name,
            method=str(config.get("method", "unknown")), n_l=config.get("n_l"),
            config=config, test_acc=final.get("test_acc"),
            best_val_loss=final.get("val_loss"),
            wall_seconds=final.get("wall_seconds") or 0.0))
    return records


def accuracy_grid(records: list[RunRecord]) -> AccuracyGrid:
    """Best test accuracy per (method, n_l), max-aggregated over runs."""
    scored = [r for r in records if r.test_acc is not None]
    if not scored:
        raise ConfigError("no completed runs with a test accuracy to report")
    methods = sorted({r.method for r in scored})
    numeric = sorted({r.n_l for r in scored if r.n_l is not None})
    n_l_values = list(numeric) + ([None] if any(r.n_l is None for r in scored) else [])
    grid = AccuracyGrid(methods=methods, n_l_values=n_l_values)
    for rec in scored:
        key = (rec.method, rec.n_l)
        grid.provenance.setdefault(key, []).append(rec.run_hash)
        if key not in grid.cells or rec.test_acc > grid.cells[key]:
            grid.cells[key] = rec.test_acc
        grid.wall_totals[rec.method] = grid.wall_totals.get(rec.method, 0.0) + rec.wall_seconds
    return grid


def _cell_text(value: float | None) -> str:
    return "---" if value is None else f"{100.0 * value:.2f}"


def _column_labels(n_l_values) -> list[str]:
    return ["all" if v is None else str(v) for v in n_l_values]


def render_table(grid: AccuracyGrid) -> str:
    """Method x n_l grid of best test accuracy (percent), plus wall-time totals."""
    headers = ["method"] + [f"n_l={lab}" for lab in _column_labels(grid.n_l_values)] + ["wall time"]
    rows = []
    for method in grid.methods:
        row = [method]
        row += [_cell_text(grid.cells.get((method, n_l))) for n_l in grid.n_l_values]
        row.append(format_duration(grid.wall_totals.get(method, 0.0)))
        rows.append(row)
    widths = [max(len(line[i]) for line in [headers] + rows) for i in range(len(headers))]
    def fmt(line):
        return "  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip()
    sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([fmt(headers), sep] + [fmt(row) for row in rows]) + "\n"


def write_csv(grid: AccuracyGrid, path) -> None:
    """Same numbers as the table, comma-separated."""
    lines = ["method," + ",".join(_column_labels(grid.n_l_values)) + ",wall_seconds"]
    for method in grid.methods:
        cells = [_cell_text(grid.cells.get((method, n_l))) for n_l in grid.n_l_values]
        lines.append(",".join([method] + cells + [str(int(grid.wall_totals.get(method, 0.0)))]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_plot(grid: AccuracyGrid, path) -> None:
    """Accuracy-versus-labels line chart, one line per method."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    numeric = [v for v in grid.n_l_values if v is not None]
    if not numeric:
        raise ConfigError("plot needs at least one numeric n_l value")
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in grid.methods:
        points = [(n_l, grid.cells[(method, n_l)]) for n_l in numeric
                  if (method, n_l) in grid.cells]
        if not points:
            continue
        xs, ys = zip(*points)
        ax.plot(xs, [100.0 * y for y in ys], marker="o", label=method)
    ax.set_xscale("log")
    ax.set_xticks(numeric)
    ax.get_xaxis().set_major_formatter("{x:.0f}")
    ax.set_xlabel("labeled examples")
    ax.set_ylabel("test accuracy (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ema_table(report) -> str:
    """Mean-teacher comparison: methods x (n_l, beta) cells, best accuracy."""
    betas = list(report.betas)
    header_nl = ["n_l".rjust(18)]
    header_beta = ["beta".rjust(18)]
    for n_l in report.n_l_values:
        for beta in betas:
            header_nl.append(str(n_l).center(8))
            header_beta.append(f"{beta:g}".center(8))
    lines = ["  ".join(header_nl).rstrip(), "  ".join(header_beta).rstrip()]
    lines.append("-" * len(lines[0]))
    for method in report.methods:
        row = [method.ljust(18)]
        for n_l in report.n_l_values:
            for beta in betas:
                row.append(_cell_text(report.cells.get((method, n_l, beta))).center(8))
        lines.append("  ".join(row).rstrip())
    return "\n".join(lines) + "\n"
