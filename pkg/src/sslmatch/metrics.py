"""Per-epoch metrics records and their CSV serialization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

CSV_COLUMNS = [
    "epoch", "step", "train_total", "train_sup", "train_unsup",
    "lambda_u", "mask_rate", "val_loss", "val_acc", "wall_seconds", "test_acc",
]


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    train_total: float
    train_sup: float
    train_unsup: float = 0.0
    lambda_u: float = 0.0
    mask_rate: float | None = None
    val_loss: float | None = None
    val_acc: float | None = None
    test_acc: float | None = None  # filled once, after checkpoint selection
    wall_seconds: float = 0.0


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_metrics_csv(history: list[MetricsRecord], path,
                      final_record: MetricsRecord | None = None) -> None:
    """Write per-epoch rows; the final line carries the test accuracy."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in history:
            writer.writerow([_cell(getattr(rec, col)) for col in CSV_COLUMNS])
        if final_record is not None:
            writer.writerow([_cell(getattr(final_record, col)) for col in CSV_COLUMNS])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {}
            for key, value in raw.items():
                if value == "" or value is None:
                    row[key] = None
                elif key in ("epoch", "step"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


def record_fields() -> list[str]:
    return [f.name for f in fields(MetricsRecord)]
