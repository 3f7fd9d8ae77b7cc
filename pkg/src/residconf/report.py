"""Rendering of simulation tables: CSV, aligned text, and JSON truth files."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from ._io import atomic_write_text, fmt_float, write_json


def _cell(v) -> str:
    if isinstance(v, float):
        return fmt_float(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(rows[0]))
    for r in rows:
        w.writerow([_cell(r[k]) for k in rows[0]])
    return buf.getvalue()


_TEXT_COLUMNS = (
    ("scenario", "scenario", None),
    ("omitted", "omitted", None),
    ("true_beta1", "beta1", 4),
    ("median_bias_uncorrected", "med.bias(d1)", 5),
    ("se_uncorrected", "SE(d1)", 5),
    ("mse_uncorrected", "MSE(d1)", 7),
    ("median_bias_extended", "med.bias(b1)", 5),
    ("se_extended", "SE(b1)", 5),
    ("mse_extended", "MSE(b1)", 7),
    ("theoretical_B1", "B1", 5),
    ("theoretical_B2", "B2", 5),
    ("limit_B1", "lim B1", 5),
    ("limit_B2", "lim B2", 5),
    ("detection_rejection_rate", "reject", 3),
    ("n_failed", "failed", None),
)


def _fmt(v, digits):
    if digits is None:
        return str(v)
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    s = f"{v:.{digits}f}"
    return s.lstrip("-") if float(s) == 0 else s


def rows_to_text(rows: list[dict]) -> str:
    """Fixed-width table; full-precision values live in the CSV."""
    table = [[h for _, h, _ in _TEXT_COLUMNS]]
    for r in rows:
        table.append([_fmt(r.get(k), d) for k, _, d in _TEXT_COLUMNS])
    widths = [max(len(row[j]) for row in table) for j in range(len(_TEXT_COLUMNS))]
    lines = ["  ".join(c.rjust(w) if j > 1 else c.ljust(w) for j, (c, w) in enumerate(zip(row, widths))).rstrip() for row in table]
    lines.insert(1, "-" * len(lines[0]))
    notes = [f"{r['scenario']}: {r['error']}" for r in rows if r.get("error")]
    if notes:
        lines += ["", "errors:"] + [f"  {n}" for n in notes]
    return "\n".join(lines) + "\n"


def write_suite(report, out_dir) -> list[Path]:
    """Write report.csv, report.txt and truth/<scenario>.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [atomic_write_text(out / "report.csv", report.to_csv()), atomic_write_text(out / "report.txt", report.to_text())]
    truth_dir = out / "truth"
    truth_dir.mkdir(exist_ok=True)
    for res in report.results:
        written.append(write_json(truth_dir / f"{res.config.name}.json", res.truth()))
    return written
