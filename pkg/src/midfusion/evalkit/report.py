"""CSV curve export and the plain-text summary table."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .metrics import Evaluation, MetricCurve

CURVES_FILE = "curves.csv"
SUMMARY_FILE = "summary.txt"
SUMMARY_COLUMNS = ("PR@20", "NPR@0.2", "SR-AUC", "MPR@20", "MSR-AUC")
_COLUMN_CURVE = {"PR@20": "PR", "NPR@0.2": "NPR", "SR-AUC": "SR", "MPR@20": "MPR", "MSR-AUC": "MSR"}


def curves_csv(curves: dict[str, MetricCurve], group: str = "ALL") -> list[list[str]]:
    rows = []
    for name in sorted(curves):
        c = curves[name]
        for t, v in zip(c.thresholds, c.values):
            rows.append([group, name, repr(float(t)), repr(float(v)), str(c.frames)])
    return rows


def summary_row(label: str, ev: Evaluation | None) -> str:
    if ev is None:
        cells = ["absent"] * len(SUMMARY_COLUMNS)
        frames = "-"
    else:
        cells = [f"{ev.curves[_COLUMN_CURVE[k]].representative:.3f}" if _COLUMN_CURVE[k] in ev.curves else "-"
                 for k in SUMMARY_COLUMNS]
        frames = str(ev.curves["PR"].frames)
    return f"{label:<8} {frames:>7} " + " ".join(f"{c:>8}" for c in cells)


def summary_text(ev: Evaluation, breakdown: dict[str, Evaluation | None] | None = None) -> str:
    header = f"{'group':<8} {'frames':>7} " + " ".join(f"{c:>8}" for c in SUMMARY_COLUMNS)
    lines = [header, summary_row("ALL", ev)]
    for attr, sub in (breakdown or {}).items():
        lines.append(summary_row(attr, sub))
    lines += [f"warning: {w}" for w in ev.warnings]
    return "\n".join(lines) + "\n"


def export_report(ev: Evaluation, path: str | Path, breakdown: dict[str, Evaluation | None] | None = None) -> None:
    """Write ``curves.csv`` and ``summary.txt`` into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    rows = curves_csv(ev.curves)
    for attr, sub in (breakdown or {}).items():
        if sub is not None:
            rows += curves_csv(sub.curves, attr)
    with open(out / CURVES_FILE, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "metric", "threshold", "value", "frames"])
        w.writerows(rows)
    (out / SUMMARY_FILE).write_text(summary_text(ev, breakdown), encoding="utf-8")


def read_curves(path: str | Path) -> dict[tuple[str, str], tuple[np.ndarray, np.ndarray, int]]:
    """Parse ``curves.csv`` back into ``{(group, metric): (thresholds, values, frames)}``."""
    data: dict[tuple[str, str], tuple[list, list, int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row["group"], row["metric"])
            ts, vs, _ = data.setdefault(key, ([], [], int(row["frames"])))
            ts.append(float(row["threshold"]))
            vs.append(float(row["value"]))
    return {k: (np.array(t), np.array(v), n) for k, (t, v, n) in data.items()}
