"""Grid study: delay versus how many intersections carry signals.

Builds one-way rows-by-cols grids (horizontal links run east, vertical links
run south), signalizes all, a subset, or none of the intersections, draws
seeded demand at three levels, and compares network-wise delay across the
cases. Demand levels are pinned to the stop-line discharge rate of the
uncontrolled intersection model:

    low     eastbound only, well under discharge, and with straight-through
            turning so columns never meet; the uncontrolled grid serves it
            at free flow (delay exactly 0)
    medium  low eastbound plus saturating southbound feeds on two columns,
            with turning mixed in
    high    eastbound and southbound feeds everywhere at or above discharge

Signalized intersections run the fixed two-stage cyclic plan unless a
controller config is supplied; by default only the fully-signalized grid
under high demand is optimized (the study's expensive case). Cases run
concurrently and every draw is reproducible from (grid, seed) alone.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .control import ControllerConfig, make_cyclic_plan, receding_horizon_control
from .engine import Trajectory, run_scenario, total_delay
from .network import parse_scenario

PATTERNS = ("none", "subset", "all")
LEVELS = ("low", "medium", "high")


@dataclass
class StudyGrid:
    rows: int = 4
    cols: int = 4
    delta_s: float = 15.0
    lambda_s: float = 1.5
    horizon: int = 12
    link_m: float = 150.0
    free_speed: float = 10.0
    vehicle_length: float = 5.0
    min_separation: float = 1.0
    subset_rows: int = 3
    subset_cols: int = 3

    def node(self, r: int, c: int) -> str:
        return f"n{r}{c}"

    def nodes(self) -> list[str]:
        return [self.node(r, c) for r in range(self.rows)
                for c in range(self.cols)]

    def subset_nodes(self) -> list[str]:
        """Signalized block anchored at the origin corner."""
        return [self.node(r, c) for r in range(min(self.subset_rows, self.rows))
                for c in range(min(self.subset_cols, self.cols))]


def _east_link(g: StudyGrid, r: int, c: int) -> str:
    # link entering node (r, c) from the west; c == 0 is the entry stub
    return f"e{r}{c}"


def _south_link(g: StudyGrid, r: int, c: int) -> str:
    return f"s{r}{c}"


def build_grid_scenario(g: StudyGrid, pattern, level: str, seed: int) -> dict:
    """Scenario document for one study case.

    pattern is "all", "none", or an explicit list of node ids to signalize.
    Demand and turning follow the level; all randomness comes from
    (level, seed) so the identical draw can be rerun under a different
    pattern.
    """
    if isinstance(pattern, str):
        if pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {pattern!r}")
        signal_ids = (g.nodes() if pattern == "all"
                      else g.subset_nodes() if pattern == "subset" else [])
    else:
        signal_ids = list(pattern)
        unknown = set(signal_ids) - set(g.nodes())
        if unknown:
            raise ValueError(f"pattern names unknown nodes {sorted(unknown)}")
    if level not in LEVELS:
        raise ValueError(f"unknown demand level {level!r}")

    links = []
    for r in range(g.rows):
        for c in range(g.cols):
            for lid in (_east_link(g, r, c), _south_link(g, r, c)):
                links.append({"id": lid, "length_m": g.link_m,
                              "free_speed": g.free_speed,
                              "vehicle_length": g.vehicle_length,
                              "min_separation": g.min_separation})

    turning: dict[str, object] = {}
    straight_only = level == "low"
    for r in range(g.rows):
        for c in range(g.cols):
            e_in, s_in = _east_link(g, r, c), _south_link(g, r, c)
            e_out = _east_link(g, r, c + 1) if c + 1 < g.cols else "@out"
            s_out = _south_link(g, r + 1, c) if r + 1 < g.rows else "@out"
            if straight_only:
                shares = [(f"{e_in}->{e_out}", 1), (f"{s_in}->{s_out}", 1)]
            else:
                shares = [(f"{e_in}->{e_out}", 0.75), (f"{e_in}->{s_out}", 0.25),
                          (f"{s_in}->{s_out}", 0.75), (f"{s_in}->{e_out}", 0.25)]
            for key, frac in shares:
                # both directions exit at the far corner; shares merge there
                turning[key] = turning.get(key, 0) + frac

    signalized, nonsignalized = [], []
    sset = set(signal_ids)
    for r in range(g.rows):
        for c in range(g.cols):
            nid = g.node(r, c)
            e_in, s_in = _east_link(g, r, c), _south_link(g, r, c)
            if nid in sset:
                signalized.append({
                    "id": nid,
                    "stages": {"w1": _streams_of(e_in, turning),
                               "w2": _streams_of(s_in, turning)},
                })
            else:
                nonsignalized.append({
                    "id": nid, "links": [e_in, s_in],
                    "order": {e_in: 1, s_in: 2},
                })

    demand = _draw_demand(g, level, seed)
    return {
        "horizon": g.horizon,
        "delta_s": g.delta_s,
        "lambda_s": g.lambda_s,
        "links": links,
        "signalized": signalized,
        "nonsignalized": nonsignalized,
        "speed_levels": {"default": [1, 0.75, 0.5]},
        "turning_ratios": turning,
        "demand": demand,
    }


def _streams_of(src: str, turning: dict) -> list[str]:
    return [key for key in turning if key.startswith(f"{src}->")]


def _draw_demand(g: StudyGrid, level: str, seed: int) -> dict[str, list[int]]:
    rng = np.random.default_rng([seed, LEVELS.index(level)])
    east_entries = [_east_link(g, r, 0) for r in range(g.rows)]
    south_entries = [_south_link(g, 0, c) for c in range(g.cols)]
    demand: dict[str, list[int]] = {}
    if level == "low":
        for lid in east_entries:
            demand[lid] = rng.integers(0, 9, g.horizon).tolist()
    elif level == "medium":
        for lid in east_entries:
            demand[lid] = rng.integers(0, 9, g.horizon).tolist()
        for c in (1, 2):
            if c < g.cols:
                demand[_south_link(g, 0, c)] = rng.integers(18, 25, g.horizon).tolist()
    else:
        # just past the sole-occupancy stop-line discharge (20 per interval
        # here), so the uncontrolled grid saturates while signals can still
        # absorb the feed
        for lid in east_entries + south_entries:
            demand[lid] = rng.integers(21, 26, g.horizon).tolist()
    return demand


@dataclass
class CaseResult:
    pattern: str
    level: str
    seed: int
    vehicles: int
    total_delay_s: float
    avg_delay_s: float
    plan_source: str                       # cyclic | optimized | uncontrolled
    node_wait: dict[str, float] = field(default_factory=dict)


def run_case(g: StudyGrid, pattern, level: str, seed: int,
             controller: Optional[ControllerConfig] = None) -> CaseResult:
    doc = build_grid_scenario(g, pattern, level, seed)
    model, cfg = parse_scenario(doc)
    if controller is not None and doc["signalized"]:
        res = receding_horizon_control(model, controller)
        traj, source = res.trajectory, "optimized"
    elif doc["signalized"]:
        plan = make_cyclic_plan(model, g.horizon)
        traj, source = run_scenario(model, plan=plan), "cyclic"
    else:
        traj, source = run_scenario(model), "uncontrolled"

    delay = total_delay(traj)
    vehicles = traj.injected_total
    avg = float(delay / vehicles) if vehicles else 0.0
    label = pattern if isinstance(pattern, str) else "subset"
    return CaseResult(pattern=label, level=level, seed=seed,
                      vehicles=vehicles, total_delay_s=float(delay),
                      avg_delay_s=avg, plan_source=source,
                      node_wait=_node_wait(g, traj))


def _node_wait(g: StudyGrid, traj: Trajectory) -> dict[str, float]:
    """Mean vehicles present on each node's approach links, per interval."""
    model = traj.model
    acc = {nid: 0.0 for nid in g.nodes()}
    n = max(1, len(traj.steps))
    for step in traj.steps:
        for r in range(g.rows):
            for c in range(g.cols):
                tot = 0
                for lid in (_east_link(g, r, c), _south_link(g, r, c)):
                    if lid in step.pre_fine:
                        tot += sum(step.pre_fine[lid])
                    else:
                        tot += step.pre_coarse.get(lid, 0)
                acc[g.node(r, c)] += tot
    return {nid: v / n for nid, v in acc.items()}


def run_study(g: StudyGrid, seeds: Sequence[int],
              patterns: Sequence = PATTERNS,
              levels: Sequence[str] = LEVELS,
              controller: Optional[ControllerConfig] = None,
              optimize_cases: Sequence[tuple[str, str]] = (("all", "high"),),
              max_workers: int = 8) -> list[CaseResult]:
    """All (pattern, level, seed) cases, concurrently; order is fixed.

    `optimize_cases` names the (pattern, level) pairs handed to the
    receding-horizon controller (with `controller`, or a horizon-1 default);
    everything else signalized runs the cyclic plan.
    """
    ctrl = controller or ControllerConfig(horizon_N=1)
    jobs = [(p, lvl, s) for p in patterns for lvl in levels for s in seeds]

    def _one(job):
        p, lvl, s = job
        label = p if isinstance(p, str) else "subset"
        use = ctrl if (label, lvl) in set(optimize_cases) else None
        return run_case(g, p, lvl, s, controller=use)

    with ThreadPoolExecutor(max_workers=min(max_workers, len(jobs) or 1)) as ex:
        return list(ex.map(_one, jobs))


def study_table(cases: Sequence[CaseResult]) -> list[dict]:
    """Per (pattern, level) means over seeds, table-shaped."""
    rows = []
    for p in PATTERNS:
        for lvl in LEVELS:
            grp = [c for c in cases if c.pattern == p and c.level == lvl]
            if not grp:
                continue
            rows.append({
                "case": f"{p}/{lvl}",
                "pattern": p,
                "level": lvl,
                "runs": len(grp),
                "vehicles": float(np.mean([c.vehicles for c in grp])),
                "total_delay_s": float(np.mean([c.total_delay_s for c in grp])),
                "avg_delay_s": float(np.mean([c.avg_delay_s for c in grp])),
                "plan_source": grp[0].plan_source,
            })
    return rows
