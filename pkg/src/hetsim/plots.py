"""Plot-data emission: plain CSV grids a charting tool renders directly."""

from __future__ import annotations

import csv
import io
from typing import Sequence

from .engine import Trajectory, delay_by_link_interval
from .study import CaseResult, StudyGrid


def delay_series_csv(traj: Trajectory) -> str:
    """Per-interval network delay; one row per coarse interval."""
    per_link = delay_by_link_interval(traj)
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["interval", "delay_s"])
    for k in range(traj.horizon):
        w.writerow([k + 1, float(sum(series[k] for series in per_link.values()))])
    return out.getvalue()


def queue_heatmap_csv(g: StudyGrid, case: CaseResult) -> str:
    """Grid-coordinate rows of mean waiting vehicles, one per intersection."""
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["row", "col", "node", "waiting"])
    for r in range(g.rows):
        for c in range(g.cols):
            nid = g.node(r, c)
            w.writerow([r, c, nid, case.node_wait.get(nid, 0.0)])
    return out.getvalue()


def study_bars_csv(rows: Sequence[dict]) -> str:
    """The comparison table (one row per case) as CSV."""
    out = io.StringIO()
    w = csv.writer(out)
    header = ["case", "pattern", "level", "runs", "vehicles",
              "total_delay_s", "avg_delay_s", "plan_source"]
    w.writerow(header)
    for row in rows:
        w.writerow([row.get(h, "") for h in header])
    return out.getvalue()


def emit_plots(obj, kind: str, grid: StudyGrid | None = None) -> str:
    """Dispatch on the requested kind; returns the CSV text."""
    if kind == "delay_series":
        return delay_series_csv(obj)
    if kind == "queue_heatmap":
        return queue_heatmap_csv(grid or StudyGrid(), obj)
    if kind == "study_bars":
        return study_bars_csv(obj)
    raise ValueError(f"unknown plot kind {kind!r}")
