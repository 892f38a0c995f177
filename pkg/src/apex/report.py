"""Result tables.

Renders a results document (see harness.run_all) as aligned text tables and
as one CSV per table: a cross-baseline comparison, a full-width breakdown of
the policy baseline, and a compact per-baseline detail for all three modes.
CSV cells keep full float precision so a parse round-trips to the same
values; the text view rounds for reading.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .harness import BASELINES, SCENARIO_ORDER

__all__ = ["render_report", "write_csvs", "table_rows"]

_BASELINE_COLUMNS = (
    "baseline",
    "success_rate",
    "blocked",
    "avg_latency_ms",
    "p95_latency_ms",
    "total_spend",
    "latency_std_ms",
)
_SCENARIO_COLUMNS = (
    "scenario",
    "success_rate",
    "blocked",
    "avg_latency_ms",
    "ci95_ms",
    "p95_latency_ms",
    "total_spend",
)
_DETAIL_COLUMNS = (
    "scenario",
    "success_rate",
    "blocked",
    "avg_latency_ms",
    "total_spend",
)


def _baselines_in(doc: dict) -> list[str]:
    return [b for b in BASELINES if b in doc.get("results", {})]


def _scenarios_in(doc: dict, baseline: str) -> list[str]:
    cells = doc["results"][baseline]
    return [s for s in SCENARIO_ORDER if s in cells]


def table_rows(doc: dict) -> dict[str, tuple[tuple[str, ...], list[list]]]:
    """All tables as (header, rows) keyed by table name, raw values."""
    tables: dict[str, tuple[tuple[str, ...], list[list]]] = {}

    rows = []
    for baseline in _baselines_in(doc):
        agg = doc["aggregates"][baseline]
        rows.append([baseline] + [agg[c] for c in _BASELINE_COLUMNS[1:]])
    tables["baseline_comparison"] = (_BASELINE_COLUMNS, rows)

    if "payment_with_policy" in doc.get("results", {}):
        rows = []
        for name in _scenarios_in(doc, "payment_with_policy"):
            cell = doc["results"]["payment_with_policy"][name]
            rows.append([name] + [cell[c] for c in _SCENARIO_COLUMNS[1:]])
        tables["policy_scenarios"] = (_SCENARIO_COLUMNS, rows)

    for baseline in _baselines_in(doc):
        rows = []
        for name in _scenarios_in(doc, baseline):
            cell = doc["results"][baseline][name]
            rows.append([name] + [cell[c] for c in _DETAIL_COLUMNS[1:]])
        tables[f"detail_{baseline}"] = (_DETAIL_COLUMNS, rows)

    return tables


def _display(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.3f}" if 0 <= value <= 1 else f"{value:.1f}"
    return str(value)


def _render_table(title: str, header: tuple[str, ...], rows: list[list]) -> str:
    cells = [[_display(v) for v in row] for row in rows]
    widths = [
        max(len(header[i]), *(len(row[i]) for row in cells)) if cells else len(header[i])
        for i in range(len(header))
    ]
    def line(parts: list[str]) -> str:
        return "  ".join(p.ljust(widths[i]) for i, p in enumerate(parts)).rstrip()
    out = [f"## {title}", line(list(header)), line(["-" * w for w in widths])]
    out.extend(line(row) for row in cells)
    return "\n".join(out)


def render_report(doc: dict) -> str:
    """Aligned text rendering of every table."""
    parts = []
    for name, (header, rows) in table_rows(doc).items():
        parts.append(_render_table(name, header, rows))
    return "\n\n".join(parts) + "\n"


def write_csvs(doc: dict, out_dir: str) -> list[str]:
    """One CSV per table; returns the written paths."""
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    for name, (header, rows) in table_rows(doc).items():
        path = directory / f"{name}.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        written.append(str(path))
    return written
