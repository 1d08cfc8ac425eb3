"""Cross-checks between the row transcription and the step dynamics.

`check_equivalence` enumerates every one-hot stage sequence on a small
instance and checks, per sequence: the simulated trajectory satisfies every
row; the objective row evaluates to the trajectory's total delay; the level
rows pin each discharge level to exactly the value the level table produces
for that stage window; and integer points pulled out of the solver map back
to trajectories that honor the logic the rows encode (gating, space,
conservation, indicator recursion, virtual-green selection). Solver points
may move fewer vehicles than the stepper would, so they are validated
against the logic-level constraints rather than replayed step for step.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from fractions import Fraction

from .. import fcfs, signaldyn
from ..engine import SignalPlan, run_scenario, total_delay
from ..network import SINK, NetworkModel
from .bnb import solve_bnb
from .build import (BuildOptions, Transcription, _staged_of, _stream_tag,
                    _theta_term, build_milp, fix_plan,
                    trajectory_to_assignment)
from .model import ModelError

RESIDUAL_TOL = 1e-6
SEQUENCE_BOUND = 1 << 20


@dataclass
class EquivalenceReport:
    sequences: int = 0
    points_checked: int = 0
    window_checks: int = 0
    exact_matches: int = 0
    divergences: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.divergences

    def summary(self) -> str:
        head = (f"{self.sequences} sequences, {self.points_checked} integer "
                f"points ({self.exact_matches} optima match the stepper "
                f"exactly), {self.window_checks} level windows")
        if self.ok:
            return f"equivalence OK: {head}"
        lines = "\n  ".join(self.divergences[:20])
        more = "" if len(self.divergences) <= 20 else \
            f"\n  ... {len(self.divergences) - 20} more"
        return f"equivalence FAILED ({head}):\n  {lines}{more}"


def check_equivalence(network: NetworkModel, N: int, *,
                      merge_mode: str = "inequality",
                      extra_objectives: int = 1,
                      node_limit: int = 50000,
                      seed: int = 0) -> EquivalenceReport:
    """Exhaustive small-instance audit of the transcription.

    Raises if the stage-sequence space is too large to enumerate; otherwise
    returns a report listing every divergence found (empty list = clean).
    """
    network.require_valid()
    controlled = sorted(j.id for j in network.signalized.values() if not j.virtual)
    stage_sets = [network.signalized[jid].stage_ids for jid in controlled]
    count = 1
    for ids in stage_sets:
        count *= len(ids) ** N
    if count > SEQUENCE_BOUND:
        raise ModelError(
            f"{count} stage sequences exceed the enumeration bound "
            f"{SEQUENCE_BOUND}; shrink the instance or the lookahead")

    rep = EquivalenceReport()
    per_node = [itertools.product(ids, repeat=N) for ids in stage_sets]
    for idx, combo in enumerate(itertools.product(*per_node)):
        plan_map = {jid: list(seq) for jid, seq in zip(controlled, combo)}
        label = ";".join(f"{jid}:{'-'.join(seq)}"
                         for jid, seq in plan_map.items()) or "uncontrolled"
        plan = SignalPlan(plan_map) if controlled else None
        traj = run_scenario(network, plan, merge_mode=merge_mode, horizon=N)
        delay = total_delay(traj)

        tr = build_milp(network, N=N, options=BuildOptions(merge_mode=merge_mode))
        if plan is not None:
            fix_plan(tr, plan)
        rep.sequences += 1
        vals = trajectory_to_assignment(tr, traj)
        viol = tr.model.max_violation(vals)
        if viol > RESIDUAL_TOL:
            worst = max(tr.model.residuals(vals), key=lambda rv: rv[1])
            rep.divergences.append(
                f"[{label}] simulated point violates {worst[0]} by {worst[1]:.3e}")
            continue
        obj = sum(c * vals[v] for v, c in tr.model.objective.items())
        if abs(obj - float(delay)) > RESIDUAL_TOL:
            rep.divergences.append(
                f"[{label}] objective {obj} != simulated delay {float(delay)}")

        _check_level_windows(tr, vals, rep, label)

        res = solve_bnb(tr.model, node_limit=node_limit)
        if res.status != "optimal":
            rep.divergences.append(
                f"[{label}] solver returned {res.status} on the fixed-plan model")
        else:
            if res.objective > obj + RESIDUAL_TOL:
                rep.divergences.append(
                    f"[{label}] optimum {res.objective} worse than the "
                    f"simulated point {obj}")
            rep.points_checked += 1
            rep.divergences.extend(
                _validate_point(tr, res.values, merge_mode, f"{label}|opt"))
            if all(abs(res.values[n] - vals[n]) <= RESIDUAL_TOL
                   for n in tr.model.variables
                   # which side of the injection min bound is an encoding
                   # detail, degenerate when backlog equals spare room
                   if tr.atlas.describe.get(n, ("",))[0] != "inj_side"):
                rep.exact_matches += 1

        rng = random.Random((seed, idx))
        for j in range(extra_objectives):
            tr_j = build_milp(network, N=N,
                              options=BuildOptions(merge_mode=merge_mode))
            if plan is not None:
                fix_plan(tr_j, plan)
            tr_j.model.set_objective(
                {name: rng.randint(-2, 2) for name in tr_j.model.variables})
            res_j = solve_bnb(tr_j.model, node_limit=node_limit)
            if res_j.status == "optimal":
                rep.points_checked += 1
                rep.divergences.extend(
                    _validate_point(tr_j, res_j.values, merge_mode,
                                    f"{label}|rnd{j}"))
            elif res_j.status == "infeasible":
                rep.divergences.append(
                    f"[{label}|rnd{j}] probe objective made the model "
                    f"infeasible")

        if idx == 0 and network.fine_links:
            _check_selection_determinism(network, N, merge_mode, plan, vals,
                                         node_limit, rep, label)
    return rep


def _check_level_windows(tr: Transcription, vals, rep: EquivalenceReport,
                         label: str) -> None:
    """The four level rows plus the green gate must pin each level variable
    to exactly the value the table operation yields for its stage window."""
    atlas, net = tr.atlas, tr.network
    rows = {r.name: r for r in tr.model.rows}
    for (s, jid, w) in _staged_of(tr):
        table = net.speed_table(s)
        r = table.memory_depth
        for k in range(1, tr.N + 1):
            lv = atlas.level(s, k)

            def theta_at(k2: int) -> int:
                var, const = _theta_term(tr, jid, w, k2)
                return int(round(vals[var])) if var is not None else const

            window = [theta_at(k2) for k2 in range(k - r - 1, k + 1)]
            expected = signaldyn.speed_level(
                window, theta_at(k + 1),
                _prev_level(tr, s, k, vals), table)

            tag = _stream_tag(s)
            ub, lb = 1.0, 0.0
            for name in (f"lup__{tag}__k{k}", f"lhup__{tag}__k{k}",
                         f"lgate__{tag}__k{k}"):
                bound = _bound_from_row(rows[name], lv, vals, upper=True)
                ub = min(ub, bound)
            for name in (f"llo__{tag}__k{k}", f"lhlo__{tag}__k{k}"):
                bound = _bound_from_row(rows[name], lv, vals, upper=False)
                lb = max(lb, bound)
            rep.window_checks += 1
            if ub - lb > 1e-9 or abs(lb - float(expected)) > 1e-9:
                rep.divergences.append(
                    f"[{label}] level rows for {lv} leave [{lb}, {ub}], "
                    f"table says {float(expected)}")


def _bound_from_row(row, var: str, vals, upper: bool) -> float:
    """Bound the named variable using every other variable's value."""
    rest = sum(c * vals[v] for v, c in row.coeffs.items() if v != var)
    coeff = row.coeffs[var]
    limit = (row.rhs - rest) / coeff
    want_upper = (row.sense == "<=") == (coeff > 0)
    if row.sense == "=":
        return limit
    if want_upper != upper:
        raise ModelError(f"row {row.name} bounds the wrong side of {var}")
    return limit


def _prev_level(tr: Transcription, stream, k: int, vals) -> Fraction:
    if k == 1:
        return tr.init_prev_level.get(stream, Fraction(0))
    return Fraction(vals[tr.atlas.level(stream, k - 1)])


def _check_selection_determinism(network: NetworkModel, N: int,
                                 merge_mode: str, plan, sim_vals,
                                 node_limit: int, rep: EquivalenceReport,
                                 label: str) -> None:
    """With every volume and flow pinned to the simulated values, the
    indicator, selection, and green variables must complete uniquely to the
    simulated ones."""
    tr = build_milp(network, N=N, options=BuildOptions(merge_mode=merge_mode))
    if plan is not None:
        fix_plan(tr, plan)
    pinned = {"coarse_volume", "coarse_flow", "segment_volume", "segment_flow",
              "boundary_flow", "level", "run_class"}
    compared = {"arrival_indicator", "virtual_green", "pair_select",
                "psi1", "psi2", "psi3", "psi5", "psi4"}
    atlas = tr.atlas
    for name, desc in atlas.describe.items():
        if desc[0] in pinned and name in tr.model.variables:
            tr.model.fix_variable(name, sim_vals[name])
    res = solve_bnb(tr.model, node_limit=node_limit)
    if res.status != "optimal":
        rep.divergences.append(
            f"[{label}] pinned-trajectory model returned {res.status}")
        return
    rep.points_checked += 1
    for name, desc in atlas.describe.items():
        if desc[0] not in compared or name not in tr.model.variables:
            continue
        a = res.values.get(name, 0.0)
        b = sim_vals[name]
        if abs(a - b) > 1e-6:
            rep.divergences.append(
                f"[{label}] {name}: rows complete to {a}, stepper made {b}")


# ---- logic-level point validation --------------------------------------


def _validate_point(tr: Transcription, raw_vals, merge_mode: str,
                    label: str) -> list[str]:
    """Check an integer point against the dynamics' logic directly.

    Everything is re-derived from the network and the step primitives, not
    from the rows: gating, turning shares, space, conservation, the
    indicator recursion, and the virtual-green selection law. Flows below
    their caps are accepted; flows above any cap, broken conservation, or a
    green handed to the wrong link are divergences.
    """
    net, atlas, cfg = tr.network, tr.atlas, tr.network.config
    m, N = atlas.m, tr.N
    S = fcfs.sentinel_for(cfg.horizon, m)
    div: list[str] = []

    vals: dict[str, float] = {}
    for name, var in tr.model.variables.items():
        v = raw_vals.get(name, 0.0)
        if var.kind in ("integer", "binary"):
            if abs(v - round(v)) > 1e-6:
                div.append(f"[{label}] {name} not integral: {v}")
                continue
            v = int(round(v))
        if v < var.lo - 1e-6 or v > var.hi + 1e-6:
            div.append(f"[{label}] {name}={v} outside [{var.lo}, {var.hi}]")
        vals[name] = v
    if div:
        return div

    def err(msg: str) -> None:
        div.append(f"[{label}] {msg}")

    coarse_links = sorted(l for l in net.links if not net.is_fine(l))
    fine_links = sorted(net.fine_links)

    # stage choices and speed levels
    stage_at: dict[tuple[str, int], str] = {}
    for jid in tr.controlled_nodes:
        j = net.signalized[jid]
        for k in range(1, N + 1):
            on = [w for w in j.stage_ids
                  if vals[atlas.theta(jid, w, k)] == 1]
            if len(on) != 1:
                err(f"{jid} interval {k}: {len(on)} stages active")
                return div
            stage_at[(jid, k)] = on[0]

    for (s, jid, w) in _staged_of(tr):
        table = net.speed_table(s)
        r = table.memory_depth

        def theta_at(k2: int) -> int:
            var, const = _theta_term(tr, jid, w, k2)
            return vals[var] if var is not None else const

        for k in range(1, N + 1):
            window = [theta_at(k2) for k2 in range(k - r - 1, k + 1)]
            expected = signaldyn.speed_level(window, theta_at(k + 1),
                                             _prev_level(tr, s, k, vals), table)
            got = vals[atlas.level(s, k)]
            # solver points carry simplex roundoff on the continuous levels
            if abs(got - float(expected)) > 1e-9:
                err(f"level {atlas.level(s, k)} = {got}, "
                    f"window law says {float(expected)}")

    # coarse flows: gating, supply, shift, merge space
    for k in range(1, N + 1):
        for s in (s2 for s2 in net.streams if not net.is_fine(s2[0])):
            src = s[0]
            f = vals[atlas.flow(s, k)]
            node = net.stream_node[s]
            gamma = cfg.turning_ratio(s, tr.k_offset + k)
            if f > gamma * vals[atlas.C(src, k)]:
                err(f"flow {atlas.flow(s, k)}={f} over turning share "
                    f"{float(gamma)}*{vals[atlas.C(src, k)]}")
            staged = (node in net.signalized
                      and not net.signalized[node].virtual
                      and net.signalized[node].stage_of(s) is not None)
            if staged:
                w = net.signalized[node].stage_of(s)
                if stage_at[(node, k)] != w and f != 0:
                    err(f"flow {atlas.flow(s, k)}={f} through a red stage")
                lvl = vals[atlas.level(s, k)]
                if f > lvl * float(net.max_shift(src, cfg.delta_s)) + 1e-6:
                    err(f"flow {atlas.flow(s, k)}={f} over level shift")
            else:
                try:
                    top = net.speed_table(s).levels[0]
                except Exception:
                    top = Fraction(1)
                if f > top * net.max_shift(src, cfg.delta_s):
                    err(f"flow {atlas.flow(s, k)}={f} over free shift")

        for dst in sorted(net.links):
            inflows = [s for s in net.incoming[dst]
                       if s in net.stream_node and not net.is_fine(s[0])]
            if not inflows:
                continue
            node = net.upstream_node[dst]
            prio = net.signalized[node].priority if node in net.signalized else {}
            inflows.sort(key=lambda s: (prio.get(s, 0), s[0]))
            if net.is_fine(dst):
                n, _, seg_cap = net.segments[dst]
                room = seg_cap - vals[atlas.seg(dst, n - 1, (k - 1) * m)]
            elif dst in net.cyclic_links:
                room = net.links[dst].capacity - vals[atlas.C(dst, k)]
            else:
                room = (net.links[dst].capacity - vals[atlas.C(dst, k)]
                        + sum(vals[atlas.flow(s2, k)]
                              for s2 in net.outgoing[dst]))
            committed = 0
            for cls, group in itertools.groupby(
                    inflows, key=lambda s: prio.get(s, 0)):
                blocked = merge_mode == "strict" and committed > 0
                for s in group:
                    f = vals[atlas.flow(s, k)]
                    if blocked and f != 0:
                        err(f"strict merge: {atlas.flow(s, k)}={f} behind "
                            f"a served higher class")
                    committed += f
            if committed > room:
                err(f"merge into {dst} interval {k}: {committed} > room {room}")

    # coarse conservation, with the boundary take re-derived from the
    # stepper's min(backlog, spare room) law on demand-carrying links
    for lid in coarse_links:
        backlog = tr.init_queues.get(lid, 0)
        has_inj = lid in tr.inj_links
        for k in range(1, N + 1):
            outf = sum(vals[atlas.flow(s, k)] for s in net.outgoing[lid])
            inf_c = sum(vals[atlas.flow(s, k)] for s in net.incoming[lid]
                        if not net.is_fine(s[0]))
            inf_f = sum(vals[atlas.bflow(s, t)] for s in net.incoming[lid]
                        if net.is_fine(s[0])
                        for t in range((k - 1) * m, k * m))
            after = vals[atlas.C(lid, k)] - outf + inf_c + inf_f
            dem = 0
            if has_inj:
                due = backlog + cfg.demand_at(lid, tr.k_offset + k)
                spare = net.links[lid].capacity - after
                take = min(due, max(0, spare))
                if vals[atlas.inj(lid, k)] != take:
                    err(f"injection on {lid} interval {k}: "
                        f"{vals[atlas.inj(lid, k)]} != min({due}, {spare})")
                if vals[atlas.queue(lid, k)] != due - take:
                    err(f"backlog on {lid} interval {k}: "
                        f"{vals[atlas.queue(lid, k)]} != {due - take}")
                backlog = due - take
                dem = take
            want = after + dem
            if vals[atlas.C(lid, k + 1)] != want:
                err(f"conservation on {lid} interval {k}: "
                    f"{vals[atlas.C(lid, k + 1)]} != {want}")
            # interval budget for cross-rate arrivals
            if inf_f and vals[atlas.C(lid, k)] - outf + inf_f > \
                    net.links[lid].capacity:
                err(f"fine arrivals into {lid} interval {k} exceed room")

    # fine world
    for t in range(N * m):
        t_abs = tr.t_offset + t
        for jid, j in net.nonsignalized.items():
            served = fcfs.assign_virtual_green(
                {l: vals[atlas.T(l, t)] for l in j.links}, j.order, j.groups)
            for lid in j.links:
                g = vals[atlas.green(lid, t)]
                if g != (1 if lid in served else 0):
                    err(f"green {atlas.green(lid, t)}={g}, selection law "
                        f"serves {served}")
            members = sorted(j.links, key=lambda l: j.order[l])
            for a in range(len(members)):
                for b in range(a + 1, len(members)):
                    p, q = members[a], members[b]
                    want = 1 if vals[atlas.T(p, t)] <= vals[atlas.T(q, t)] else 0
                    if vals[atlas.pair(p, q, t)] != want:
                        err(f"pair {atlas.pair(p, q, t)} != {want}")

        for lid in fine_links:
            n, _, seg_cap = net.segments[lid]
            shift = int(net.max_shift(lid, cfg.lambda_s))
            out0 = sum(vals[atlas.bflow(s, t)] for s in net.outgoing[lid])
            for s in net.outgoing[lid]:
                f = vals[atlas.bflow(s, t)]
                if f and vals[atlas.green(lid, t)] == 0:
                    err(f"{atlas.bflow(s, t)}={f} without the green")
                gamma = cfg.turning_ratio(s, tr.k_offset + t // m + 1)
                if f > gamma * vals[atlas.seg(lid, 0, t)]:
                    err(f"{atlas.bflow(s, t)}={f} over stop-line share")
                dst = s[1]
                if dst is not SINK and net.is_fine(dst):
                    dn, _, dcap = net.segments[dst]
                    d_exit = (vals[atlas.chain(dst, dn - 1, t)] if dn > 1 else
                              sum(vals[atlas.bflow(s2, t)]
                                  for s2 in net.outgoing[dst]))
                    if f > dcap - vals[atlas.seg(dst, dn - 1, t)] + d_exit:
                        err(f"{atlas.bflow(s, t)}={f} over destination room")
            if out0 > shift:
                err(f"boundary out of {lid} at {t}: {out0} > shift {shift}")

            flows = [out0] + [vals[atlas.chain(lid, jseg, t)]
                              for jseg in range(1, n)]
            for jseg in range(1, n):
                f = flows[jseg]
                if f > vals[atlas.seg(lid, jseg, t)] or f > shift:
                    err(f"chain {atlas.chain(lid, jseg, t)}={f} over supply")
                if f > seg_cap - vals[atlas.seg(lid, jseg - 1, t)] + flows[jseg - 1]:
                    err(f"chain {atlas.chain(lid, jseg, t)}={f} over space")

            k = t // m + 1
            due = cfg.demand_at(lid, tr.k_offset + k)
            base, extra = divmod(due, m)
            inject = base + (1 if t % m < extra else 0)
            if t == 0:
                inject += tr.init_queues.get(lid, 0)
            for jseg in range(n):
                want = vals[atlas.seg(lid, jseg, t)] - flows[jseg]
                if jseg == n - 1:
                    want += inject
                    for s in net.incoming[lid]:
                        if net.is_fine(s[0]):
                            want += vals[atlas.bflow(s, t)]
                        elif (t + 1) % m == 0:
                            want += vals[atlas.flow(s, (t + 1) // m)]
                else:
                    want += flows[jseg + 1]
                if vals[atlas.seg(lid, jseg, t + 1)] != want:
                    err(f"segment conservation {atlas.seg(lid, jseg, t + 1)}: "
                        f"{vals[atlas.seg(lid, jseg, t + 1)]} != {want}")

    # indicator recursion, against the update primitive
    for lid in fine_links:
        for t in range(1, N * m + 1):
            want = fcfs.update_indicator(
                vals[atlas.T(lid, t - 1)], vals[atlas.seg(lid, 0, t)],
                tr.t_offset + t - 1, S)
            if vals[atlas.T(lid, t)] != want:
                err(f"indicator {atlas.T(lid, t)} = {vals[atlas.T(lid, t)]}, "
                    f"recursion says {want}")
    return div
