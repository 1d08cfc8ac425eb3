"""Discrete-time network simulator mixing coarse and fine sampling.

One coarse step runs in a fixed order:

1. snapshot all volumes;
2. compute every signalized flow from the snapshot, sweeping destination
   links sink-first so a destination's same-interval exits are known, and
   clamping merging streams in ascending priority order as part of the sweep;
3. run the m fine sub-steps of the all-way-stop world (virtual greens,
   segment chains, stop-line boundary flows, arrival indicators);
4. apply conservation, deposit cross-rate arrivals, inject boundary demand.

Volume conservation is checked at every step, never assumed; violations name
the link and the interval.

Delay is the time vehicles spend in the network beyond free-flow traversal:
each link-interval contributes volume * period minus (length / free speed)
per exiting vehicle, evaluated at the link's native sampling period (coarse
links at delta, fine links per segment at lambda). A vehicle that always
moves at free speed scores exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import groupby
from typing import Mapping, Optional, Sequence

import numpy as np

from . import fcfs, signaldyn
from ._kernels import chain_flows
from .network import NetworkModel, ScenarioError, Stream, SINK, _frac


class SimulationError(RuntimeError):
    """Internal-consistency failure (conservation, capacity, ordering)."""


@dataclass
class SignalPlan:
    """Stage choice per non-virtual signalized intersection per interval."""
    stages: Mapping[str, Sequence[str]]

    def stage_at(self, node: str, k: int) -> str:
        seq = self.stages[node]
        return seq[min(k, len(seq)) - 1]

    def expected_next(self, node: str, k: int) -> str:
        """Stage the drivers anticipate for interval k+1: the planned one,
        holding the final interval's stage past the end of the plan."""
        seq = self.stages[node]
        return seq[min(k + 1, len(seq)) - 1]

    def validate(self, model: NetworkModel, horizon: int):
        controlled = [j.id for j in model.signalized.values() if not j.virtual]
        missing = set(controlled) - set(self.stages)
        if missing:
            raise ScenarioError(f"plan missing intersections {sorted(missing)}")
        for node in controlled:
            seq = self.stages[node]
            if len(seq) < horizon:
                raise ScenarioError(f"plan for {node} covers {len(seq)} < {horizon} intervals")
            valid = set(model.signalized[node].stage_ids)
            bad = [w for w in seq if w not in valid]
            if bad:
                raise ScenarioError(f"plan for {node} uses unknown stages {sorted(set(bad))}")


@dataclass
class FineRecord:
    t: int                                   # absolute fine step, 0-based
    pre_vol: dict[str, tuple[int, ...]]
    T_pre: dict[str, int]
    green: dict[str, tuple[str, ...]]
    seg_flows: dict[tuple[str, int], int]    # (link, j): segment j -> j-1
    boundary: dict[Stream, int]
    injected: dict[str, int]


@dataclass
class StepRecord:
    k: int                                   # coarse interval, 1-based
    stage: dict[str, str]
    pre_coarse: dict[str, int]
    pre_fine: dict[str, tuple[int, ...]]
    flows: dict[Stream, int]                 # coarse streams this interval
    levels: dict[Stream, Fraction]
    fine_steps: list[FineRecord]
    injected: dict[str, int]
    exited: int


@dataclass
class Trajectory:
    model: NetworkModel
    steps: list[StepRecord] = field(default_factory=list)
    injected_total: int = 0
    exited_total: int = 0
    final_queues: dict[str, int] = field(default_factory=dict)
    applied_plan: dict[str, list[str]] = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.steps)


def total_delay(traj: Trajectory) -> Fraction:
    """Network-wise delay in seconds, recomputed from the recorded volumes
    and flows (not from engine-side accumulators)."""
    total = Fraction(0)
    for per_link in delay_by_link_interval(traj).values():
        total += sum(per_link, Fraction(0))
    return total


def delay_by_link_interval(traj: Trajectory) -> dict[str, list[Fraction]]:
    """Per link, the delay contributed during each coarse interval."""
    model = traj.model
    cfg = model.config
    delta = _frac(cfg.delta_s)
    lam = _frac(cfg.lambda_s)
    out: dict[str, list[Fraction]] = {lid: [] for lid in model.links}

    for rec in traj.steps:
        coarse_exits: dict[str, int] = {lid: 0 for lid in model.links}
        for (src, dst), f in rec.flows.items():
            coarse_exits[src] += f
        for lid in model.links:
            if model.is_fine(lid):
                continue
            link = model.links[lid]
            credit = _frac(link.length_m) / _frac(link.free_speed)
            out[lid].append(delta * rec.pre_coarse[lid] - credit * coarse_exits[lid])
        # fine links: per-segment terms at the fine rate, summed over the
        # interval's sub-steps
        fine_totals: dict[str, Fraction] = {}
        for frec in rec.fine_steps:
            for lid in model.fine_links:
                n, seg_len, _ = model.segments[lid]
                link = model.links[lid]
                credit = _frac(seg_len) / _frac(link.free_speed)
                vols = frec.pre_vol[lid]
                acc = fine_totals.get(lid, Fraction(0))
                for j in range(n):
                    exits = frec.seg_flows.get((lid, j), 0)
                    acc += lam * vols[j] - credit * exits
                fine_totals[lid] = acc
        for lid, val in fine_totals.items():
            out[lid].append(val)
    return out


class Simulator:
    """Stateful stepper; `run_scenario` is the one-shot convenience wrapper."""

    def __init__(self, model: NetworkModel, merge_mode: str = "inequality"):
        model.require_valid()
        if merge_mode not in ("inequality", "strict"):
            raise ScenarioError(f"unknown merge mode {merge_mode!r}")
        self.model = model
        self.cfg = model.config
        self.merge_mode = merge_mode
        self.m = self.cfg.steps_per_interval
        self.sentinel = fcfs.sentinel_for(self.cfg.horizon, self.m)

        self.coarse_links = [lid for lid in model.links if not model.is_fine(lid)]
        self.fine_links = sorted(model.fine_links)
        self.coarse_streams = [s for s in model.streams if not model.is_fine(s[0])]
        self.fine_boundary_streams = [s for s in model.streams if model.is_fine(s[0])]

        # per-link floored fine shift and per-stream coarse shift, exact
        self.fine_shift: dict[str, int] = {
            lid: int(model.max_shift(lid, self.cfg.lambda_s)) for lid in self.fine_links}
        self.coarse_shift: dict[str, Fraction] = {
            lid: model.max_shift(lid, self.cfg.delta_s) for lid in self.coarse_links}

        # stage membership of each staged stream, and history depth needed
        self.stream_stage: dict[Stream, Optional[str]] = {}
        self.hist_len: dict[str, int] = {}
        for j in model.signalized.values():
            depth = 2
            for s in j.all_streams():
                w = j.stage_of(s)
                self.stream_stage[s] = w
                if w is not None and not j.virtual:
                    depth = max(depth, model.speed_table(s).memory_depth + 2)
            self.hist_len[j.id] = depth

        self.reset()

    # -- state ------------------------------------------------------------

    def reset(self, coarse: Optional[Mapping[str, int]] = None,
              fine: Optional[Mapping[str, Sequence[int]]] = None):
        model = self.model
        self.k = 0
        self.coarse_vol: dict[str, int] = {lid: 0 for lid in self.coarse_links}
        self.fine_vol: dict[str, np.ndarray] = {
            lid: np.zeros(model.segments[lid][0], dtype=np.int64) for lid in self.fine_links}
        if coarse:
            for lid, v in coarse.items():
                self.coarse_vol[lid] = int(v)
        if fine:
            for lid, vols in fine.items():
                self.fine_vol[lid][:] = vols
        self.T: dict[str, int] = {lid: self.sentinel for lid in self.fine_links}
        # columns present at t=0 carry arrival interval 0
        for lid in self.fine_links:
            if self.fine_vol[lid][0] > 0:
                self.T[lid] = 0
        self.prev_level: dict[Stream, Fraction] = {
            s: Fraction(0) for s, w in self.stream_stage.items() if w is not None}
        self.stage_hist: dict[str, list[Optional[str]]] = {
            jid: [None] * self.hist_len[jid] for jid in self.hist_len}
        self.queues: dict[str, int] = {lid: 0 for lid in model.links}
        self.injected_total = 0
        self.exited_total = 0
        self.fine_t = 0  # absolute fine step counter

    def clone_state(self) -> dict:
        return {
            "k": self.k,
            "coarse_vol": dict(self.coarse_vol),
            "fine_vol": {lid: v.copy() for lid, v in self.fine_vol.items()},
            "T": dict(self.T),
            "prev_level": dict(self.prev_level),
            "stage_hist": {j: list(h) for j, h in self.stage_hist.items()},
            "queues": dict(self.queues),
            "injected_total": self.injected_total,
            "exited_total": self.exited_total,
            "fine_t": self.fine_t,
        }

    def restore_state(self, snap: dict):
        self.k = snap["k"]
        self.coarse_vol = dict(snap["coarse_vol"])
        self.fine_vol = {lid: v.copy() for lid, v in snap["fine_vol"].items()}
        self.T = dict(snap["T"])
        self.prev_level = dict(snap["prev_level"])
        self.stage_hist = {j: list(h) for j, h in snap["stage_hist"].items()}
        self.queues = dict(snap["queues"])
        self.injected_total = snap["injected_total"]
        self.exited_total = snap["exited_total"]
        self.fine_t = snap["fine_t"]

    def link_volume(self, lid: str) -> int:
        if self.model.is_fine(lid):
            return int(self.fine_vol[lid].sum())
        return self.coarse_vol[lid]

    # -- speed levels -----------------------------------------------------

    def _level_for(self, stream: Stream, node_id: str, stage_now: Optional[str],
                   stage_next: Optional[str]) -> Fraction:
        model = self.model
        j = model.signalized[node_id]
        w = self.stream_stage.get(stream)
        if j.virtual or w is None:
            # always-green: saturated top level
            try:
                return model.speed_table(stream).levels[0]
            except ScenarioError:
                return Fraction(1)
        table = model.speed_table(stream)
        r = table.memory_depth
        hist = self.stage_hist[node_id][-(r + 1):] + [stage_now]
        theta_hist = [1 if h == w else 0 for h in hist]
        theta_next = 1 if stage_next == w else 0
        return signaldyn.speed_level(theta_hist, theta_next, self.prev_level[stream], table)

    def _exit_level(self, stream: Stream) -> Fraction:
        try:
            return self.model.speed_table(stream).levels[0]
        except ScenarioError:
            return Fraction(1)

    # -- one coarse step --------------------------------------------------

    def step(self, stage_choice: Mapping[str, str],
             expected_next: Mapping[str, str]) -> StepRecord:
        model, cfg = self.model, self.cfg
        k = self.k + 1
        if k > cfg.horizon:
            raise SimulationError(f"stepping past configured horizon {cfg.horizon}")

        pre_coarse = dict(self.coarse_vol)
        pre_fine = {lid: tuple(int(x) for x in self.fine_vol[lid]) for lid in self.fine_links}
        pre_total = sum(pre_coarse.values()) + sum(sum(v) for v in pre_fine.values())

        # levels for every coarse stream
        levels: dict[Stream, Fraction] = {}
        for s in self.coarse_streams:
            node = model.stream_node[s]
            if node == "__exit__":
                levels[s] = self._exit_level(s)
            else:
                levels[s] = self._level_for(s, node, stage_choice.get(node),
                                            expected_next.get(node))

        flows = self._coarse_flows(k, pre_coarse, pre_fine, levels, stage_choice)

        # coarse outflow per link, available to the fine world as s_p(k)
        coarse_exits = {lid: 0 for lid in self.coarse_links}
        for (src, dst), f in flows.items():
            coarse_exits[src] += f

        fine_records, fine_to_coarse, fine_exited = self._run_fine_steps(
            k, pre_coarse, coarse_exits)

        # apply coarse conservation
        injected: dict[str, int] = {}
        exited = fine_exited
        arrivals: dict[str, int] = {lid: 0 for lid in model.links}
        for (src, dst), f in flows.items():
            if dst is SINK:
                exited += f
            else:
                arrivals[dst] += f
        for lid, f in fine_to_coarse.items():
            arrivals[lid] += f

        for lid in self.coarse_links:
            cap = model.links[lid].capacity
            new = self.coarse_vol[lid] - coarse_exits[lid] + arrivals[lid]
            if new < 0:
                raise SimulationError(f"negative volume on link {lid} at interval {k}")
            if new > cap:
                raise SimulationError(
                    f"capacity exceeded on link {lid} at interval {k}: {new} > {cap}")
            self.coarse_vol[lid] = new
        for lid in self.fine_links:
            if arrivals[lid]:
                # cross-rate deposit into the entrance segment
                n, _, seg_cap = model.segments[lid]
                vol = self.fine_vol[lid]
                if vol[n - 1] + arrivals[lid] > seg_cap:
                    raise SimulationError(
                        f"entrance overflow on link {lid} at interval {k}")
                vol[n - 1] += arrivals[lid]
                if n == 1 and vol[0] > 0 and self.T[lid] == self.sentinel:
                    self.T[lid] = self.fine_t

        # boundary demand: coarse entry links fill spare room at interval end
        for lid in self.coarse_links:
            due = cfg.demand_at(lid, k) + self.queues.get(lid, 0)
            if lid in cfg.demand or self.queues.get(lid, 0):
                spare = model.links[lid].capacity - self.coarse_vol[lid]
                take = min(due, max(0, spare))
                self.coarse_vol[lid] += take
                self.queues[lid] = due - take
                injected[lid] = take
                self.injected_total += take

        # fine-link injections happened inside the sub-steps
        for frec in fine_records:
            for lid, n_inj in frec.injected.items():
                injected[lid] = injected.get(lid, 0) + n_inj
                self.injected_total += n_inj

        post_total = (sum(self.coarse_vol.values())
                      + sum(int(v.sum()) for v in self.fine_vol.values()))
        inj_total = sum(injected.values())
        if post_total != pre_total + inj_total - exited:
            raise SimulationError(
                f"conservation violated at interval {k}: {pre_total} + {inj_total} "
                f"- {exited} != {post_total}")
        self.exited_total += exited

        # advance signal memory
        for jid, hist in self.stage_hist.items():
            hist.append(stage_choice.get(jid))
            del hist[0]
        for s, lvl in levels.items():
            if self.stream_stage.get(s) is not None:
                self.prev_level[s] = lvl

        self.k = k
        return StepRecord(
            k=k, stage={j: stage_choice[j] for j in stage_choice},
            pre_coarse=pre_coarse, pre_fine=pre_fine, flows=flows, levels=levels,
            fine_steps=fine_records, injected=injected, exited=exited)

    # -- coarse flow sweep ------------------------------------------------

    def _coarse_flows(self, k: int, pre_coarse, pre_fine, levels, stage_choice):
        model, cfg = self.model, self.cfg
        flows: dict[Stream, int] = {}

        def gate_open(stream: Stream) -> bool:
            node = model.stream_node[stream]
            if node == "__exit__":
                return True
            j = model.signalized[node]
            if j.virtual:
                return True
            w = j.stage_of(stream)
            if w is None:
                return True  # free stream
            return stage_choice.get(node) == w

        def nominal(stream: Stream, space) -> int:
            src = stream[0]
            gamma = cfg.turning_ratio(stream, k)
            return signaldyn.signalized_flow(pre_coarse[src], gamma, space,
                                             levels[stream], self.coarse_shift[src])

        # pass 1: sink streams (unbounded downstream)
        for s in self.coarse_streams:
            if s[1] is SINK:
                flows[s] = nominal(s, None) if gate_open(s) else 0

        # pass 2: sink-first sweep over destination links
        for dst in model.sweep_order:
            inflows = [s for s in model.incoming[dst]
                       if s in model.stream_node and not model.is_fine(s[0])]
            if not inflows:
                continue
            node = model.upstream_node[dst]
            prio = model.signalized[node].priority if node in model.signalized else {}
            inflows.sort(key=lambda s: (prio.get(s, 0), s[0]))
            if model.is_fine(dst):
                n, _, seg_cap = model.segments[dst]
                room = seg_cap - pre_fine[dst][n - 1]
            elif dst in self.model.cyclic_links:
                room = model.links[dst].capacity - pre_coarse[dst]
            else:
                s_dst = sum(flows[s2] for s2 in model.outgoing[dst])
                room = model.links[dst].capacity - pre_coarse[dst] + s_dst
            committed = 0
            for _, group in groupby(inflows, key=lambda s: prio.get(s, 0)):
                # strict mode: any flow by a strictly higher-priority stream
                # blocks this whole priority class
                blocked = self.merge_mode == "strict" and not \
                    signaldyn.merge_strict_allows(committed)
                for s in group:
                    if blocked or not gate_open(s):
                        flows[s] = 0
                        continue
                    f = nominal(s, room - committed)
                    flows[s] = f
                    committed += f
        return flows

    # -- fine sub-steps ---------------------------------------------------

    def _run_fine_steps(self, k: int, pre_coarse, coarse_exits):
        model, cfg = self.model, self.cfg
        records: list[FineRecord] = []
        fine_to_coarse: dict[str, int] = {}
        coarse_budget_used: dict[str, int] = {lid: 0 for lid in self.coarse_links}
        exited = 0

        # deterministic spread of this interval's demand over the sub-steps
        fine_inject_plan: dict[str, list[int]] = {}
        for lid in self.fine_links:
            due = cfg.demand_at(lid, k)
            if due or self.queues.get(lid, 0):
                base, extra = divmod(due, self.m)
                fine_inject_plan[lid] = [base + (1 if i < extra else 0)
                                        for i in range(self.m)]

        for i in range(self.m):
            t = self.fine_t
            pre_vol = {lid: tuple(int(x) for x in self.fine_vol[lid])
                       for lid in self.fine_links}
            T_pre = dict(self.T)

            # virtual greens from the current indicators
            green: dict[str, tuple[str, ...]] = {}
            green_links: set[str] = set()
            for jid, j in model.nonsignalized.items():
                served = fcfs.assign_virtual_green(
                    {l: self.T[l] for l in j.links},
                    j.order, j.groups)
                green[jid] = served
                green_links.update(served)

            # sweep fine links sink-first: each link's boundary flow first
            # (destinations' chains are already done), then its chain
            boundary: dict[Stream, int] = {}
            seg_flows: dict[tuple[str, int], int] = {}
            chain_out: dict[str, np.ndarray] = {}
            sent: dict[str, int] = {}   # per-destination total this sub-step
            for lid in (l for l in model.sweep_order if l in model.fine_links):
                vol = self.fine_vol[lid]
                n, _, seg_cap = model.segments[lid]
                is_green = lid in green_links
                out0 = 0
                if is_green and vol[0] > 0:
                    for s in model.outgoing[lid]:
                        dst = s[1]
                        gamma = cfg.turning_ratio(s, k)
                        share = int(gamma * int(vol[0]))  # exact floor of the turning share
                        if dst is SINK:
                            space = None
                        elif model.is_fine(dst):
                            dn, _, dcap = model.segments[dst]
                            dflows = chain_out.get(dst)
                            d_exit = int(dflows[dn - 1]) if dflows is not None else 0
                            d_vol = pre_vol[dst][dn - 1]
                            space = dcap - d_vol + d_exit - sent.get(dst, 0)
                        else:
                            # coarse destination: snapshot room plus this
                            # interval's signalized exits, minus what earlier
                            # sub-steps (and this one) already sent
                            space = (model.links[dst].capacity - pre_coarse[dst]
                                     + coarse_exits[dst]
                                     - coarse_budget_used[dst] - sent.get(dst, 0))
                        f = fcfs.boundary_flow(True, share, space, self.fine_shift[lid])
                        boundary[s] = f
                        out0 += f
                        if dst is not SINK:
                            sent[dst] = sent.get(dst, 0) + f
                else:
                    for s in model.outgoing[lid]:
                        boundary[s] = 0
                flows_arr = np.zeros(n, dtype=np.int64)
                cap_arr = np.full(n, seg_cap, dtype=np.int64)
                chain_flows(vol, cap_arr, self.fine_shift[lid], out0, flows_arr)
                chain_out[lid] = flows_arr
                for j in range(n):
                    seg_flows[(lid, j)] = int(flows_arr[j])

            # apply flows
            for lid in self.fine_links:
                vol = self.fine_vol[lid]
                fl = chain_out[lid]
                vol -= fl
                vol[:-1] += fl[1:]
            for s, f in boundary.items():
                if f == 0:
                    continue
                src, dst = s
                if dst is SINK:
                    exited += f
                elif model.is_fine(dst):
                    dn = model.segments[dst][0]
                    self.fine_vol[dst][dn - 1] += f
                else:
                    fine_to_coarse[dst] = fine_to_coarse.get(dst, 0) + f
                    coarse_budget_used[dst] += f

            # per-step capacity safety
            for lid in self.fine_links:
                n, _, seg_cap = model.segments[lid]
                vol = self.fine_vol[lid]
                if (vol < 0).any():
                    raise SimulationError(
                        f"negative segment volume on {lid} at fine step {t}")
                if (vol > seg_cap).any():
                    raise SimulationError(
                        f"segment capacity exceeded on {lid} at fine step {t}")

            # injections for this sub-step
            injected: dict[str, int] = {}
            for lid, plan in fine_inject_plan.items():
                due = plan[i] + self.queues.get(lid, 0)
                if due <= 0:
                    self.queues[lid] = 0
                    continue
                n, _, seg_cap = model.segments[lid]
                spare = seg_cap - int(self.fine_vol[lid][n - 1])
                take = min(due, max(0, spare))
                if take:
                    self.fine_vol[lid][n - 1] += take
                    injected[lid] = take
                self.queues[lid] = due - take

            # arrival indicators for snapshot t+1
            for lid in self.fine_links:
                self.T[lid] = fcfs.update_indicator(
                    self.T[lid], int(self.fine_vol[lid][0]), t, self.sentinel)

            records.append(FineRecord(
                t=t, pre_vol=pre_vol, T_pre=T_pre, green=green,
                seg_flows=seg_flows, boundary=boundary, injected=injected))
            self.fine_t += 1

        return records, fine_to_coarse, exited


def run_scenario(model: NetworkModel, plan: Optional[SignalPlan] = None,
                 merge_mode: str = "inequality",
                 horizon: Optional[int] = None) -> Trajectory:
    """Simulate under a fixed plan; deterministic, so reruns are bit-identical."""
    cfg = model.config
    N = horizon if horizon is not None else cfg.horizon
    controlled = [j.id for j in model.signalized.values() if not j.virtual]
    if controlled:
        if plan is None:
            raise ScenarioError("network has signalized intersections but no plan was given")
        plan.validate(model, N)
    sim = Simulator(model, merge_mode=merge_mode)
    traj = Trajectory(model=model)
    virtual_stage = {j.id: j.stage_ids[0] for j in model.signalized.values() if j.virtual}
    for k in range(1, N + 1):
        choice = dict(virtual_stage)
        nxt = dict(virtual_stage)
        if plan is not None:
            for jid in controlled:
                choice[jid] = plan.stage_at(jid, k)
                nxt[jid] = plan.expected_next(jid, k)
        rec = sim.step(choice, nxt)
        traj.steps.append(rec)
    traj.injected_total = sim.injected_total
    traj.exited_total = sim.exited_total
    traj.final_queues = {lid: q for lid, q in sim.queues.items() if q}
    if plan is not None:
        traj.applied_plan = {jid: [plan.stage_at(jid, k) for k in range(1, N + 1)]
                             for jid in controlled}
    return traj
