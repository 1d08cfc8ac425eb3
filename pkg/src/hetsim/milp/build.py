"""Exact mixed-integer transcription of the two-rate network dynamics.

The builder turns a validated network plus an initial state into a
`MilpModel` whose integer points are, variable for variable, the simulator's
reachable trajectories: volumes, flows, discharge levels, stage one-hots,
arrival indicators, and virtual greens all appear as named variables, so a
simulated trajectory can be injected back as an assignment and checked
against every row. Flow floors need no extra machinery; flow variables are
integers with the same upper bounds the simulator floors against, and the
delay objective pushes them onto the floor.

Coarse boundary demand goes through an exact-min injection gadget (the
take each interval equals min(backlog, spare room), with the backlog
carried in queue variables), so over-capacity demand queues at the gate
exactly as the stepper queues it. Demand on stop-controlled entry links is
still transcribed as per-substep constants and assumes the entrance
segment does not saturate over the lookahead. Arrival indicators carry
absolute fine-step times, so a model built mid-run for receding-horizon
control ranks resident columns against new arrivals correctly.

Two network shapes are rejected here rather than transcribed wrongly:
grouped all-way stops (joint service breaks the single-server selection
rows), and signalized streams feeding a single-segment stop link (the
cross-rate deposit would land on the stop line between indicator updates,
so the arrival time of a fresh column is not expressible in the rows).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .. import fcfs
from ..network import SINK, NetworkModel, ScenarioError, Stream, _frac
from .model import (BINARY, CONTINUOUS, INTEGER, MilpModel, ModelError,
                    linearize_product)


def _san(raw: str) -> str:
    return re.sub(r"[^A-Za-z0-9]", "_", raw)


def _stream_tag(stream: Stream) -> str:
    src, dst = stream
    return f"{_san(src)}__{_san(dst) if dst is not SINK else 'out'}"


@dataclass
class BuildOptions:
    merge_mode: str = "inequality"
    include_redundant_occupancy_row: bool = False


class VariableAtlas:
    """Name algebra for the transcription.

    Every physical quantity maps to exactly one variable name and back; the
    mapping is pure string construction, so the atlas doubles as the
    reader's index into an exported LP file. `describe` records
    (family, indices) per name for audits.
    """

    def __init__(self, network: NetworkModel, N: int):
        self.network = network
        self.N = N
        self.m = network.config.steps_per_interval
        self.describe: dict[str, tuple] = {}

    def _reg(self, name: str, family: str, *idx) -> str:
        if name not in self.describe:
            self.describe[name] = (family, *idx)
        return name

    # coarse world
    def C(self, lid: str, k: int) -> str:
        return self._reg(f"C__{_san(lid)}__k{k}", "coarse_volume", lid, k)

    def flow(self, stream: Stream, k: int) -> str:
        return self._reg(f"f__{_stream_tag(stream)}__k{k}", "coarse_flow", stream, k)

    def theta(self, node: str, stage: str, k: int) -> str:
        return self._reg(f"th__{_san(node)}__{_san(stage)}__k{k}", "stage",
                         node, stage, k)

    def delta(self, stream: Stream, k: int, p: int) -> str:
        return self._reg(f"dl{p}__{_stream_tag(stream)}__k{k}", "run_class",
                         stream, k, p)

    def level(self, stream: Stream, k: int) -> str:
        return self._reg(f"lv__{_stream_tag(stream)}__k{k}", "level", stream, k)

    def gamma_ind(self, stream: Stream, k: int) -> str:
        return self._reg(f"G__{_stream_tag(stream)}__k{k}", "merge_indicator",
                         stream, k)

    def inj(self, lid: str, k: int) -> str:
        return self._reg(f"inj__{_san(lid)}__k{k}", "injection", lid, k)

    def queue(self, lid: str, k: int) -> str:
        return self._reg(f"q__{_san(lid)}__k{k}", "entry_queue", lid, k)

    def inj_side(self, lid: str, k: int) -> str:
        return self._reg(f"y__{_san(lid)}__k{k}", "inj_side", lid, k)

    # fine world
    def seg(self, lid: str, j: int, t: int) -> str:
        return self._reg(f"Cs__{_san(lid)}__s{j}__t{t}", "segment_volume", lid, j, t)

    def chain(self, lid: str, j: int, t: int) -> str:
        return self._reg(f"fs__{_san(lid)}__s{j}__t{t}", "segment_flow", lid, j, t)

    def bflow(self, stream: Stream, t: int) -> str:
        return self._reg(f"f0__{_stream_tag(stream)}__t{t}", "boundary_flow",
                         stream, t)

    def T(self, lid: str, t: int) -> str:
        return self._reg(f"T__{_san(lid)}__t{t}", "arrival_indicator", lid, t)

    def psi(self, n: int, lid: str, t: int) -> str:
        return self._reg(f"p{n}__{_san(lid)}__t{t}", f"psi{n}", lid, t)

    def pair(self, p: str, q: str, t: int) -> str:
        return self._reg(f"w__{_san(p)}__{_san(q)}__t{t}", "pair_select", p, q, t)

    def green(self, lid: str, t: int) -> str:
        return self._reg(f"g__{_san(lid)}__t{t}", "virtual_green", lid, t)


@dataclass
class Transcription:
    """A built model plus everything needed to read solutions back."""
    model: MilpModel
    atlas: VariableAtlas
    network: NetworkModel
    N: int
    k_offset: int = 0
    t_offset: int = 0
    init_hist: dict[str, list[Optional[str]]] = field(default_factory=dict)
    init_prev_level: dict[Stream, Fraction] = field(default_factory=dict)
    init_queues: dict[str, int] = field(default_factory=dict)
    controlled_nodes: list[str] = field(default_factory=list)
    inj_links: list[str] = field(default_factory=list)


def _fresh_state(network: NetworkModel) -> dict:
    m = network.config.steps_per_interval
    sent = fcfs.sentinel_for(network.config.horizon, m)
    return {
        "k": 0,
        "coarse_vol": {lid: 0 for lid in network.links if not network.is_fine(lid)},
        "fine_vol": {lid: [0] * network.segments[lid][0]
                     for lid in network.fine_links},
        "T": {lid: sent for lid in network.fine_links},
        "prev_level": {},
        "stage_hist": {},
        "queues": {},
        "fine_t": 0,
    }


def build_milp(network: NetworkModel, N: Optional[int] = None,
               state: Optional[Mapping] = None,
               options: Optional[BuildOptions] = None) -> Transcription:
    """Transcribe N coarse intervals starting from `state`.

    `state` is a simulator snapshot (`Simulator.clone_state()`) or None for
    an empty network at time zero. The returned transcription carries the
    model with the delay objective already attached.
    """
    network.require_valid()
    opts = options or BuildOptions()
    if opts.merge_mode not in ("inequality", "strict"):
        raise ModelError(f"unknown merge mode {opts.merge_mode!r}")
    cfg = network.config
    if N is None:
        N = cfg.horizon
    if N < 1:
        raise ModelError("need at least one interval")
    for jid, j in network.nonsignalized.items():
        if j.groups:
            raise ModelError(
                f"all-way stop {jid} uses grouped service; the transcription "
                f"covers single-link service only")
    for s in network.streams:
        src, dst = s
        if (not network.is_fine(src) and dst is not SINK and network.is_fine(dst)
                and network.segments[dst][0] == 1):
            raise ModelError(
                f"stream {src}->{dst} deposits onto a single-segment stop "
                f"link; its arrival indicator is not expressible in rows")

    st = dict(state) if state is not None else _fresh_state(network)
    m = cfg.steps_per_interval
    k_off = int(st.get("k", 0))
    t_off = int(st.get("fine_t", k_off * m))
    if N + k_off > cfg.horizon:
        raise ModelError(
            f"lookahead {N} from interval {k_off} runs past horizon {cfg.horizon}")

    atlas = VariableAtlas(network, N)
    mdl = MilpModel("delay_horizon")
    tr = Transcription(model=mdl, atlas=atlas, network=network, N=N,
                       k_offset=k_off, t_offset=t_off)
    tr.controlled_nodes = sorted(
        jid for jid, j in network.signalized.items() if not j.virtual)
    tr.init_queues = {lid: int(q) for lid, q in st.get("queues", {}).items() if q}

    sentinel = fcfs.sentinel_for(cfg.horizon, m)
    coarse_links = sorted(lid for lid in network.links if not network.is_fine(lid))
    fine_links = sorted(network.fine_links)
    coarse_streams = [s for s in network.streams if not network.is_fine(s[0])]
    fine_streams = [s for s in network.streams if network.is_fine(s[0])]

    init_coarse = {lid: int(st["coarse_vol"].get(lid, 0)) for lid in coarse_links}
    init_fine = {lid: [int(x) for x in st["fine_vol"][lid]] for lid in fine_links}
    init_T = {lid: int(st["T"].get(lid, sentinel)) for lid in fine_links}

    for jid in tr.controlled_nodes:
        tr.init_hist[jid] = list(st.get("stage_hist", {}).get(jid, [])) or [None]
    for s, lvl in st.get("prev_level", {}).items():
        tr.init_prev_level[s] = _frac(lvl)

    def demand_const(lid: str, k: int) -> int:
        d = cfg.demand_at(lid, k_off + k)
        if k == 1:
            d += tr.init_queues.get(lid, 0)
        return d

    def gamma_of(stream: Stream, k: int) -> Fraction:
        return cfg.turning_ratio(stream, k_off + k)

    # ---- variables ------------------------------------------------------

    for lid in coarse_links:
        cap = network.links[lid].capacity
        for k in range(1, N + 2):
            mdl.add_variable(atlas.C(lid, k), INTEGER, 0, cap)
        mdl.fix_variable(atlas.C(lid, 1), init_coarse[lid])
    for s in coarse_streams:
        cap = network.links[s[0]].capacity
        for k in range(1, N + 1):
            mdl.add_variable(atlas.flow(s, k), INTEGER, 0, cap)
    for jid in tr.controlled_nodes:
        for w in network.signalized[jid].stage_ids:
            for k in range(1, N + 1):
                mdl.add_variable(atlas.theta(jid, w, k), BINARY)

    # boundary demand on coarse links is injected through an exact-min
    # gadget (take = min(backlog, spare room)), so over-capacity demand
    # queues instead of making the model infeasible
    for lid in coarse_links:
        total_due = tr.init_queues.get(lid, 0) + sum(
            cfg.demand_at(lid, k_off + k) for k in range(1, N + 1))
        if total_due <= 0:
            continue
        tr.inj_links.append(lid)
        cap = network.links[lid].capacity
        mdl.add_variable(atlas.queue(lid, 0), INTEGER, 0, total_due)
        mdl.fix_variable(atlas.queue(lid, 0), tr.init_queues.get(lid, 0))
        for k in range(1, N + 1):
            mdl.add_variable(atlas.inj(lid, k), INTEGER, 0, min(cap, total_due))
            mdl.add_variable(atlas.queue(lid, k), INTEGER, 0, total_due)
            mdl.add_variable(atlas.inj_side(lid, k), BINARY)

    staged_streams: list[tuple[Stream, str, str]] = []
    for jid in tr.controlled_nodes:
        j = network.signalized[jid]
        for s in j.all_streams():
            w = j.stage_of(s)
            if w is None:
                continue
            staged_streams.append((s, jid, w))
            r = network.speed_table(s).memory_depth
            for k in range(1, N + 1):
                mdl.add_variable(atlas.level(s, k), CONTINUOUS, 0, 1)
                for p in range(r + 1):
                    mdl.add_variable(atlas.delta(s, k, p), BINARY)

    for lid in fine_links:
        n, _, seg_cap = network.segments[lid]
        shift = int(network.max_shift(lid, cfg.lambda_s))
        for j in range(n):
            for t in range(N * m + 1):
                mdl.add_variable(atlas.seg(lid, j, t), INTEGER, 0, seg_cap)
            mdl.fix_variable(atlas.seg(lid, j, 0), init_fine[lid][j])
        for j in range(1, n):
            for t in range(N * m):
                mdl.add_variable(atlas.chain(lid, j, t), INTEGER, 0,
                                 min(seg_cap, shift))
        for t in range(N * m + 1):
            mdl.add_variable(atlas.T(lid, t), INTEGER, 0, sentinel)
        mdl.fix_variable(atlas.T(lid, 0), init_T[lid])
        for t in range(N * m):
            mdl.add_variable(atlas.green(lid, t), BINARY)
        for t in range(1, N * m + 1):
            mdl.add_variable(atlas.psi(1, lid, t), BINARY)
            mdl.add_variable(atlas.psi(2, lid, t), BINARY)
            mdl.add_variable(atlas.psi(3, lid, t), BINARY)
            mdl.add_variable(atlas.psi(5, lid, t), INTEGER, 0, sentinel)
    for s in fine_streams:
        _, _, seg_cap = network.segments[s[0]]
        shift = int(network.max_shift(s[0], cfg.lambda_s))
        for t in range(N * m):
            mdl.add_variable(atlas.bflow(s, t), INTEGER, 0, min(seg_cap, shift))
    for jid, j in network.nonsignalized.items():
        members = sorted(j.links, key=lambda l: j.order[l])
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                for t in range(N * m):
                    mdl.add_variable(atlas.pair(members[a], members[b], t), BINARY)

    # ---- rows -----------------------------------------------------------

    for jid in tr.controlled_nodes:
        for k in range(1, N + 1):
            emit_stage_constraints(tr, jid, k)
    for s, jid, w in staged_streams:
        table = network.speed_table(s)
        for k in range(1, N + 1):
            emit_speed_constraints(tr, s, k, table)
    for s in coarse_streams:
        for k in range(1, N + 1):
            emit_flow_constraints(tr, s, k, gamma_of)
    for k in range(1, N + 1):
        for dst in sorted(network.links):
            streams = _merge_order(network, dst)
            if streams:
                emit_merge_constraints(tr, streams, k, opts.merge_mode)
    for jid in sorted(network.nonsignalized):
        for t in range(N * m + 1):
            emit_fcfs_constraints(tr, jid, t, opts)
    emit_dynamics_constraints(tr, demand_const, gamma_of)

    build_objective(atlas, network, N, mdl)
    return tr


# ---- emitters ----------------------------------------------------------


def emit_stage_constraints(tr: Transcription, jid: str, k: int):
    """One-hot stage choice and the green gates on staged flows."""
    net, atlas, mdl = tr.network, tr.atlas, tr.model
    j = net.signalized[jid]
    mdl.add_row({atlas.theta(jid, w, k): 1 for w in j.stage_ids}, "=", 1,
                name=f"onehot__{_san(jid)}__k{k}")
    big_m = max(net.links[lid].capacity for lid in net.links) + 1
    for w in j.stage_ids:
        for s in j.stages[w]:
            if big_m <= net.links[s[0]].capacity:
                raise ModelError(f"gate big-M {big_m} not above capacity of {s[0]}")
            mdl.add_row({atlas.flow(s, k): 1, atlas.theta(jid, w, k): -big_m},
                        "<=", 0, name=f"gate__{_stream_tag(s)}__k{k}", big_m=big_m)


def _theta_term(tr: Transcription, node: str, stage: str, k: int):
    """(variable name, None) inside the horizon, (None, constant) before it.

    Past the horizon the anticipated activation holds the final interval's
    choice, mirroring the simulator's expected-next convention.
    """
    if k < 1:
        hist = tr.init_hist[node]
        idx = len(hist) - 1 + k
        if idx < 0:
            return None, 0
        return None, (1 if hist[idx] == stage else 0)
    return tr.atlas.theta(node, stage, min(k, tr.N)), None


def emit_speed_constraints(tr: Transcription, stream: Stream, k: int, table):
    """Run-length classes and the discharge level they select.

    The class binaries say how many consecutive green intervals precede this
    one (saturating at the memory depth); the level rows then pin the level
    to the table entry when the next interval stays green, to half the
    previous level when it does not, and to zero on red.
    """
    atlas, mdl = tr.atlas, tr.model
    node = tr.network.stream_node[stream]
    w = tr.network.signalized[node].stage_of(stream)
    r = table.memory_depth
    tag = _stream_tag(stream)
    lv = atlas.level(stream, k)
    cur = atlas.theta(node, w, k)

    def th(k2):
        return _theta_term(tr, node, w, k2)

    # class upper rows: class p needs greens at k, k-1, ..., k-p and, below
    # the saturation class, a red at k-p-1
    for p in range(r + 1):
        dv = atlas.delta(stream, k, p)
        for back in range(p + 1):
            var, const = th(k - back)
            if var is None:
                if const == 0:
                    mdl.add_row({dv: 1}, "<=", 0,
                                name=f"dup__{tag}__k{k}__p{p}__h{back}")
                continue
            mdl.add_row({dv: 1, var: -1}, "<=", 0,
                        name=f"dup__{tag}__k{k}__p{p}__h{back}")
        if p < r:
            var, const = th(k - p - 1)
            if var is None:
                if const == 1:
                    mdl.add_row({dv: 1}, "<=", 0,
                                name=f"dup__{tag}__k{k}__p{p}__red")
            else:
                mdl.add_row({dv: 1, var: 1}, "<=", 1,
                            name=f"dup__{tag}__k{k}__p{p}__red")
    # exactly one class when green, none when red
    coeffs = {atlas.delta(stream, k, p): 1 for p in range(r + 1)}
    coeffs[cur] = -1
    mdl.add_row(coeffs, "=", 0, name=f"dsum__{tag}__k{k}")

    # level selection against the anticipated next activation
    nxt_var, nxt_const = th(k + 1)
    lvals = {atlas.delta(stream, k, p): float(table.levels[r - p])
             for p in range(r + 1)}

    def with_theta(coeffs: dict, var_coeff: float, const_coeff: float,
                   rhs: float) -> tuple[dict, float]:
        """Fold the anticipated activation in as a variable or constant."""
        if nxt_var is None:
            return coeffs, rhs - const_coeff * nxt_const
        coeffs[nxt_var] = coeffs.get(nxt_var, 0.0) + var_coeff
        return coeffs, rhs

    up = {lv: 1.0}
    for dv, c in lvals.items():
        up[dv] = -c
    up, rhs_up = with_theta(up, 1.0, 1.0, 1.0)
    mdl.add_row(up, "<=", rhs_up, name=f"lup__{tag}__k{k}")

    lo = {lv: 1.0, cur: -1.0}
    for dv, c in lvals.items():
        lo[dv] = -c
    lo, rhs_lo = with_theta(lo, -1.0, -1.0, -2.0)
    mdl.add_row(lo, ">=", rhs_lo, name=f"llo__{tag}__k{k}")

    # halving rows toward an anticipated red
    if k == 1:
        prev = float(tr.init_prev_level.get(stream, Fraction(0)))
        half_up = {lv: 1.0, cur: 1.0}
        half_up, rhs_hup = with_theta(half_up, -1.0, -1.0, 1.0 + prev / 2.0)
        mdl.add_row(half_up, "<=", rhs_hup, name=f"lhup__{tag}__k{k}")
        half_lo = {lv: 1.0, cur: -1.0}
        half_lo, rhs_hlo = with_theta(half_lo, 1.0, 1.0, prev / 2.0 - 1.0)
        mdl.add_row(half_lo, ">=", rhs_hlo, name=f"lhlo__{tag}__k{k}")
    else:
        pv = atlas.level(stream, k - 1)
        half_up = {lv: 1.0, pv: -0.5, cur: 1.0}
        half_up, rhs_hup = with_theta(half_up, -1.0, -1.0, 1.0)
        mdl.add_row(half_up, "<=", rhs_hup, name=f"lhup__{tag}__k{k}")
        half_lo = {lv: 1.0, pv: -0.5, cur: -1.0}
        half_lo, rhs_hlo = with_theta(half_lo, 1.0, 1.0, -1.0)
        mdl.add_row(half_lo, ">=", rhs_hlo, name=f"lhlo__{tag}__k{k}")

    mdl.add_row({lv: 1, cur: -1}, "<=", 0, name=f"lgate__{tag}__k{k}")


def emit_flow_constraints(tr: Transcription, stream: Stream, k: int, gamma_of):
    """Supply and free-shift bounds on one signalized flow."""
    net, atlas, mdl = tr.network, tr.atlas, tr.model
    src = stream[0]
    f = atlas.flow(stream, k)
    tag = _stream_tag(stream)
    mdl.add_row({f: 1, atlas.C(src, k): -float(gamma_of(stream, k))}, "<=", 0,
                name=f"fsup__{tag}__k{k}")
    shift = net.max_shift(src, net.config.delta_s)
    node = net.stream_node[stream]
    staged = (node in net.signalized and not net.signalized[node].virtual
              and net.signalized[node].stage_of(stream) is not None)
    if staged:
        mdl.add_row({f: 1, atlas.level(stream, k): -float(shift)}, "<=", 0,
                    name=f"fshift__{tag}__k{k}")
    else:
        # ungated stream: saturated top level, constant bound
        try:
            top = net.speed_table(stream).levels[0]
        except ScenarioError:
            top = Fraction(1)
        mdl.add_row({f: 1}, "<=", float(top * shift), name=f"fshift__{tag}__k{k}")


def _merge_order(net: NetworkModel, dst: str) -> list[Stream]:
    """Inflow streams of one link in the simulator's allocation order."""
    inflows = [s for s in net.incoming[dst]
               if s in net.stream_node and not net.is_fine(s[0])]
    node = net.upstream_node.get(dst)
    prio = net.signalized[node].priority if node in net.signalized else {}
    inflows.sort(key=lambda s: (prio.get(s, 0), s[0]))
    return inflows


def emit_merge_constraints(tr: Transcription, streams: Sequence[Stream], k: int,
                           mode: str):
    """Shared destination space, allocated in priority order.

    Each stream's row charges the space already taken by every earlier
    stream in the allocation order, which is exactly the simulator's
    cumulative sweep. Strict mode adds activity indicators so any
    higher-priority flow closes the gap entirely.
    """
    net, atlas, mdl = tr.network, tr.atlas, tr.model
    dst = streams[0][1]
    node = net.upstream_node[dst]
    prio = net.signalized[node].priority if node in net.signalized else {}
    if mode == "strict" and len(streams) > 1:
        pr = [prio.get(s, 0) for s in streams]
        if len(set(pr)) != len(pr):
            raise ModelError(
                f"strict merge into {dst} needs a total priority order, "
                f"got classes {sorted(pr)}")

    if net.is_fine(dst):
        n, _, seg_cap = net.segments[dst]
        base = {atlas.seg(dst, n - 1, (k - 1) * atlas.m): 1.0}
        rhs = seg_cap
    elif dst in net.cyclic_links:
        base = {atlas.C(dst, k): 1.0}
        rhs = net.links[dst].capacity
    else:
        base = {atlas.C(dst, k): 1.0}
        for s2 in net.outgoing[dst]:
            base[atlas.flow(s2, k)] = -1.0
        rhs = net.links[dst].capacity

    for idx, s in enumerate(streams):
        coeffs = dict(base)
        for y in streams[:idx + 1]:
            fy = atlas.flow(y, k)
            coeffs[fy] = coeffs.get(fy, 0.0) + 1.0
        mdl.add_row(coeffs, "<=", rhs, name=f"space__{_stream_tag(s)}__k{k}")

    if mode == "strict":
        big_m = max(net.links[lid].capacity for lid in net.links) + 1
        for s in streams[:-1]:
            gv = atlas.gamma_ind(s, k)
            if gv not in mdl.variables:
                mdl.add_variable(gv, BINARY)
                f = atlas.flow(s, k)
                mdl.add_row({f: 1, gv: -big_m}, "<=", 0,
                            name=f"gind1__{_stream_tag(s)}__k{k}", big_m=big_m)
                mdl.add_row({gv: 1, f: -1}, "<=", 0,
                            name=f"gind0__{_stream_tag(s)}__k{k}")
        for idx, s in enumerate(streams):
            w = net.signalized[node].stage_of(s) if node in net.signalized else None
            gated = (w is not None and node in net.signalized
                     and not net.signalized[node].virtual)
            for y in streams[:idx]:
                gv = atlas.gamma_ind(y, k)
                coeffs = {atlas.flow(s, k): 1.0, gv: float(big_m)}
                rhs_b = float(big_m)
                if gated:
                    coeffs[atlas.theta(node, w, k)] = float(big_m)
                    rhs_b = 2.0 * big_m
                mdl.add_row(coeffs, "<=", rhs_b,
                            name=f"gblock__{_stream_tag(s)}__{_san(y[0])}__k{k}",
                            big_m=big_m)


def emit_fcfs_constraints(tr: Transcription, jid: str, t: int,
                          opts: Optional[BuildOptions] = None):
    """Arrival-indicator dynamics and virtual-green selection at one stop.

    Snapshot t gets the selection rows (who holds the green during sub-step
    t); transition rows into t track each column's arrival: an occupied stop
    line keeps min(previous indicator, current absolute step), an empty one
    resets to the sentinel.
    """
    opts = opts or BuildOptions()
    net, atlas, mdl = tr.network, tr.atlas, tr.model
    j = net.nonsignalized[jid]
    m = atlas.m
    S = fcfs.sentinel_for(net.config.horizon, m)
    if S <= net.config.horizon * m:
        raise ModelError(f"sentinel {S} does not clear the horizon steps")
    members = sorted(j.links, key=lambda l: j.order[l])

    if t < tr.N * m:
        # pairwise earlier-arrival binaries and the single-server one-hot
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                p, q = members[a], members[b]
                w = atlas.pair(p, q, t)
                mdl.add_row({atlas.T(p, t): 1, atlas.T(q, t): -1, w: S}, "<=", S,
                            name=f"sel1__{_san(p)}__{_san(q)}__t{t}", big_m=S)
                mdl.add_row({atlas.T(p, t): 1, atlas.T(q, t): -1, w: S + 1},
                            ">=", 1,
                            name=f"sel2__{_san(p)}__{_san(q)}__t{t}", big_m=S + 1)
                mdl.add_row({atlas.green(p, t): 1, w: -1}, "<=", 0,
                            name=f"gsel__{_san(p)}__{_san(q)}__t{t}")
                mdl.add_row({atlas.green(q, t): 1, w: 1}, "<=", 1,
                            name=f"gsel__{_san(q)}__{_san(p)}__t{t}")
        mdl.add_row({atlas.green(l, t): 1 for l in members}, "=", 1,
                    name=f"gsum__{_san(jid)}__t{t}")
        # stop-line gates
        for lid in members:
            for s in net.outgoing[lid]:
                fv = atlas.bflow(s, t)
                cap_b = mdl.variables[fv].hi
                mdl.add_row({fv: 1, atlas.green(lid, t): -cap_b}, "<=", 0,
                            name=f"bgate__{_stream_tag(s)}__t{t}", big_m=cap_b)

    if t >= 1:
        t_abs = tr.t_offset + t
        for lid in members:
            _, _, seg_cap = net.segments[lid]
            c0 = atlas.seg(lid, 0, t)
            p1 = atlas.psi(1, lid, t)
            p2 = atlas.psi(2, lid, t)
            p3 = atlas.psi(3, lid, t)
            p5 = atlas.psi(5, lid, t)
            T0 = atlas.T(lid, t - 1)
            T1 = atlas.T(lid, t)
            tg = f"{_san(lid)}__t{t}"
            mdl.add_row({c0: 1, p1: -seg_cap}, "<=", 0,
                        name=f"occ1__{tg}", big_m=seg_cap)
            mdl.add_row({p1: 1, c0: -1}, "<=", 0, name=f"occ2__{tg}")
            if opts.include_redundant_occupancy_row:
                mdl.add_row({c0: 1, p1: -seg_cap}, ">=", 1 - seg_cap,
                            name=f"occa__{tg}", big_m=seg_cap)
            p4 = linearize_product(mdl, p1, T0, name=atlas.psi(4, lid, t))
            mdl.add_row({p5: 1, p1: -t_abs}, "=", 0, name=f"p5def__{tg}")
            # T(t) = min(previous, now) when occupied, sentinel when empty
            mdl.add_row({T1: 1, p1: S, p4: -1}, "<=", S,
                        name=f"tmin1__{tg}", big_m=S)
            mdl.add_row({T1: 1, p1: S, p5: -1}, "<=", S,
                        name=f"tmin2__{tg}", big_m=S)
            mdl.add_row({T1: 1, p1: S, p4: -1, p2: -S}, ">=", 0,
                        name=f"p2lo__{tg}", big_m=S)
            mdl.add_row({T1: -1, p1: -S, p4: 1, p2: S + 1}, ">=", 1 - S,
                        name=f"p2hi__{tg}", big_m=S + 1)
            mdl.add_row({T1: 1, p1: S, p5: -1, p3: -S}, ">=", 0,
                        name=f"p3lo__{tg}", big_m=S)
            mdl.add_row({T1: -1, p1: -S, p5: 1, p3: S + 1}, ">=", 1 - S,
                        name=f"p3hi__{tg}", big_m=S + 1)
            mdl.add_row({p2: 1, p3: 1}, ">=", 1, name=f"pmin__{tg}")


def emit_dynamics_constraints(tr: Transcription, demand_const, gamma_of):
    """Conservation on every link and segment, plus the fine flow bounds."""
    net, atlas, mdl = tr.network, tr.atlas, tr.model
    cfg = net.config
    m = atlas.m
    N = tr.N
    coarse_links = sorted(lid for lid in net.links if not net.is_fine(lid))
    fine_links = sorted(net.fine_links)

    def _balance(lid: str, k: int) -> dict:
        # C(k) - outflows + inflows, the pre-injection end state
        coeffs = {atlas.C(lid, k): 1.0}
        for s in net.outgoing[lid]:
            fv = atlas.flow(s, k)
            coeffs[fv] = coeffs.get(fv, 0.0) - 1.0
        for s in net.incoming[lid]:
            if net.is_fine(s[0]):
                for t in range((k - 1) * m, k * m):
                    coeffs[atlas.bflow(s, t)] = 1.0
            else:
                fv = atlas.flow(s, k)
                coeffs[fv] = coeffs.get(fv, 0.0) + 1.0
        return coeffs

    for lid in coarse_links:
        with_inj = lid in tr.inj_links
        cap = net.links[lid].capacity
        if with_inj:
            big_m = cap + mdl.variables[atlas.queue(lid, 0)].hi + 1
        for k in range(1, N + 1):
            coeffs = {v: -c for v, c in _balance(lid, k).items()}
            coeffs[atlas.C(lid, k + 1)] = 1.0
            if with_inj:
                coeffs[atlas.inj(lid, k)] = -1.0
                mdl.add_row(coeffs, "=", 0, name=f"consv__{_san(lid)}__k{k}")
                d = cfg.demand_at(lid, tr.k_offset + k)
                iv, qv, qp = (atlas.inj(lid, k), atlas.queue(lid, k),
                              atlas.queue(lid, k - 1))
                yv = atlas.inj_side(lid, k)
                # take <= backlog, and equal unless the room side binds
                mdl.add_row({iv: 1, qp: -1}, "<=", d,
                            name=f"injd__{_san(lid)}__k{k}")
                mdl.add_row({iv: 1, qp: -1, yv: big_m}, ">=", d,
                            name=f"injdlo__{_san(lid)}__k{k}", big_m=big_m)
                # take <= spare room, and equal when it does bind
                room = _balance(lid, k)
                room[iv] = room.get(iv, 0.0) + 1.0
                mdl.add_row(dict(room), "<=", cap,
                            name=f"injr__{_san(lid)}__k{k}")
                room[yv] = room.get(yv, 0.0) - big_m
                mdl.add_row(room, ">=", cap - big_m,
                            name=f"injrlo__{_san(lid)}__k{k}", big_m=big_m)
                mdl.add_row({qv: 1, qp: -1, iv: 1}, "=", d,
                            name=f"qdef__{_san(lid)}__k{k}")
            else:
                mdl.add_row(coeffs, "=", demand_const(lid, k),
                            name=f"consv__{_san(lid)}__k{k}")

    for lid in fine_links:
        n, _, seg_cap = net.segments[lid]

        def out_of(jseg: int, t: int) -> dict:
            if jseg == 0:
                return {atlas.bflow(s, t): 1.0 for s in net.outgoing[lid]}
            return {atlas.chain(lid, jseg, t): 1.0}

        for t in range(N * m):
            k = t // m + 1
            i = t % m
            due = cfg.demand_at(lid, tr.k_offset + k)
            base, extra = divmod(due, m)
            inject = base + (1 if i < extra else 0)
            if t == 0:
                inject += tr.init_queues.get(lid, 0)
            for jseg in range(n):
                coeffs = {atlas.seg(lid, jseg, t + 1): 1.0,
                          atlas.seg(lid, jseg, t): -1.0}
                for nm, c in out_of(jseg, t).items():
                    coeffs[nm] = coeffs.get(nm, 0.0) + c
                rhs = 0
                if jseg == n - 1:
                    rhs += inject
                    for s in net.incoming[lid]:
                        if net.is_fine(s[0]):
                            coeffs[atlas.bflow(s, t)] = coeffs.get(
                                atlas.bflow(s, t), 0.0) - 1.0
                        elif (t + 1) % m == 0:
                            # cross-rate deposit lands at the interval edge
                            fv = atlas.flow(s, (t + 1) // m)
                            coeffs[fv] = coeffs.get(fv, 0.0) - 1.0
                else:
                    coeffs[atlas.chain(lid, jseg + 1, t)] = coeffs.get(
                        atlas.chain(lid, jseg + 1, t), 0.0) - 1.0
                mdl.add_row(coeffs, "=", rhs,
                            name=f"fconsv__{_san(lid)}__s{jseg}__t{t}")

        for jseg in range(1, n):
            for t in range(N * m):
                fv = atlas.chain(lid, jseg, t)
                mdl.add_row({fv: 1, atlas.seg(lid, jseg, t): -1}, "<=", 0,
                            name=f"csup__{_san(lid)}__s{jseg}__t{t}")
                coeffs = {fv: 1.0, atlas.seg(lid, jseg - 1, t): 1.0}
                for nm, c in out_of(jseg - 1, t).items():
                    coeffs[nm] = coeffs.get(nm, 0.0) - c
                mdl.add_row(coeffs, "<=", seg_cap,
                            name=f"cspace__{_san(lid)}__s{jseg}__t{t}")

    # boundary bounds (stop-line gates live with the selection rows)
    for s in (s2 for s2 in net.streams if net.is_fine(s2[0])):
        src, dst = s
        for t in range(N * m):
            k = t // m + 1
            fv = atlas.bflow(s, t)
            mdl.add_row({fv: 1, atlas.seg(src, 0, t): -float(gamma_of(s, k))},
                        "<=", 0, name=f"bsup__{_stream_tag(s)}__t{t}")
            if dst is SINK or not net.is_fine(dst):
                continue
            dn, _, dcap = net.segments[dst]
            coeffs = {fv: 1.0, atlas.seg(dst, dn - 1, t): 1.0}
            if dn > 1:
                coeffs[atlas.chain(dst, dn - 1, t)] = -1.0
            else:
                for s2 in net.outgoing[dst]:
                    coeffs[atlas.bflow(s2, t)] = coeffs.get(
                        atlas.bflow(s2, t), 0.0) - 1.0
            mdl.add_row(coeffs, "<=", dcap,
                        name=f"bspace__{_stream_tag(s)}__t{t}")

    # fine-to-coarse interval budgets: room at the coarse snapshot plus that
    # interval's signalized exits, shared by the whole interval's sub-steps
    seen_budget: set[tuple[str, int]] = set()
    for s in (s2 for s2 in net.streams if net.is_fine(s2[0])):
        dst = s[1]
        if dst is SINK or net.is_fine(dst):
            continue
        for k in range(1, N + 1):
            if (dst, k) in seen_budget:
                continue
            seen_budget.add((dst, k))
            coeffs = {atlas.C(dst, k): 1.0}
            for s2 in net.outgoing[dst]:
                coeffs[atlas.flow(s2, k)] = -1.0
            for s3 in net.incoming[dst]:
                if net.is_fine(s3[0]):
                    for t in range((k - 1) * m, k * m):
                        coeffs[atlas.bflow(s3, t)] = coeffs.get(
                            atlas.bflow(s3, t), 0.0) + 1.0
            mdl.add_row(coeffs, "<=", net.links[dst].capacity,
                        name=f"budget__{_san(dst)}__k{k}")


def build_objective(atlas: VariableAtlas, network: NetworkModel, N: int,
                    mdl: Optional[MilpModel] = None) -> dict[str, float]:
    """Total delay: presence at the native period minus free-flow credit per
    exiting vehicle. Returns the coefficient map (and installs it when a
    model is given)."""
    cfg = network.config
    m = cfg.steps_per_interval
    delta = float(_frac(cfg.delta_s))
    lam = float(_frac(cfg.lambda_s))
    coeffs: dict[str, float] = {}

    for lid in network.links:
        if network.is_fine(lid):
            n, seg_len, _ = network.segments[lid]
            credit = float(_frac(seg_len) / _frac(network.links[lid].free_speed))
            for j in range(n):
                for t in range(N * m):
                    coeffs[atlas.seg(lid, j, t)] = lam
            for j in range(1, n):
                for t in range(N * m):
                    coeffs[atlas.chain(lid, j, t)] = -credit
            for s in network.outgoing[lid]:
                for t in range(N * m):
                    coeffs[atlas.bflow(s, t)] = -credit
        else:
            credit = float(_frac(network.links[lid].length_m)
                           / _frac(network.links[lid].free_speed))
            for k in range(1, N + 1):
                coeffs[atlas.C(lid, k)] = delta
            for s in network.outgoing[lid]:
                for k in range(1, N + 1):
                    coeffs[atlas.flow(s, k)] = -credit
    if mdl is not None:
        mdl.set_objective(coeffs)
    return coeffs


# ---- solutions back and forth ------------------------------------------


def fix_plan(tr: Transcription, plan) -> None:
    """Pin the stage one-hots to a signal plan (a `SignalPlan` or a mapping
    of node id to stage sequence covering the lookahead)."""
    for jid in tr.controlled_nodes:
        j = tr.network.signalized[jid]
        for k in range(1, tr.N + 1):
            if hasattr(plan, "stage_at"):
                chosen = plan.stage_at(jid, tr.k_offset + k)
            else:
                chosen = plan[jid][k - 1]
            if chosen not in j.stages:
                raise ModelError(f"plan stage {chosen!r} unknown at {jid}")
            for w in j.stage_ids:
                tr.model.fix_variable(tr.atlas.theta(jid, w, k),
                                      1 if w == chosen else 0)


def plan_from_values(tr: Transcription, values: Mapping[str, float]) -> dict[str, list[str]]:
    """Read the chosen stage sequence out of a solution's variable values."""
    out: dict[str, list[str]] = {}
    for jid in tr.controlled_nodes:
        j = tr.network.signalized[jid]
        seq = []
        for k in range(1, tr.N + 1):
            picked = None
            for w in j.stage_ids:
                if values.get(tr.atlas.theta(jid, w, k), 0) > 0.5:
                    picked = w
                    break
            if picked is None:
                raise ModelError(f"no stage active at {jid} interval {k}")
            seq.append(picked)
        out[jid] = seq
    return out


def trajectory_to_assignment(tr: Transcription, traj) -> dict[str, float]:
    """Map a simulated trajectory onto the model's variables.

    The trajectory must start from the state the model was built from and
    cover at least N intervals. Every variable the model declares gets a
    value; feeding the result to `MilpModel.residuals` then checks the
    transcription row by row.
    """
    net, atlas = tr.network, tr.atlas
    cfg = net.config
    m = atlas.m
    N = tr.N
    S = fcfs.sentinel_for(cfg.horizon, m)
    steps = traj.steps[:N]
    if len(steps) < N:
        raise ModelError(f"trajectory covers {len(steps)} intervals, "
                         f"model needs {N}")
    vals: dict[str, float] = {}
    coarse_links = [lid for lid in net.links if not net.is_fine(lid)]
    staged = _staged_of(tr)

    backlog = {lid: tr.init_queues.get(lid, 0) for lid in tr.inj_links}
    for lid in tr.inj_links:
        vals[atlas.queue(lid, 0)] = backlog[lid]

    for k, rec in enumerate(steps, start=1):
        for lid in coarse_links:
            vals[atlas.C(lid, k)] = rec.pre_coarse[lid]
        for s, f in rec.flows.items():
            vals[atlas.flow(s, k)] = f
        for lid in tr.inj_links:
            due = backlog[lid] + cfg.demand_at(lid, tr.k_offset + k)
            take = rec.injected.get(lid, 0)
            vals[atlas.inj(lid, k)] = take
            backlog[lid] = due - take
            vals[atlas.queue(lid, k)] = backlog[lid]
            vals[atlas.inj_side(lid, k)] = 0 if take == due else 1
        for jid in tr.controlled_nodes:
            for w in net.signalized[jid].stage_ids:
                vals[atlas.theta(jid, w, k)] = 1 if rec.stage.get(jid) == w else 0
        for (s, jid, w) in staged:
            r = net.speed_table(s).memory_depth
            vals[atlas.level(s, k)] = float(rec.levels[s])
            q = _run_class(tr, steps, jid, w, k, r)
            for p in range(r + 1):
                vals[atlas.delta(s, k, p)] = 1 if q == p else 0
        for frec in rec.fine_steps:
            t = frec.t - tr.t_offset
            for lid in net.fine_links:
                n, _, _ = net.segments[lid]
                for jseg in range(n):
                    vals[atlas.seg(lid, jseg, t)] = frec.pre_vol[lid][jseg]
                vals[atlas.T(lid, t)] = frec.T_pre[lid]
                for jseg in range(1, n):
                    vals[atlas.chain(lid, jseg, t)] = frec.seg_flows.get(
                        (lid, jseg), 0)
                vals[atlas.green(lid, t)] = 1 if any(
                    lid in g for g in frec.green.values()) else 0
            for s, f in frec.boundary.items():
                vals[atlas.bflow(s, t)] = f
            for j2 in net.nonsignalized.values():
                members = sorted(j2.links, key=lambda l: j2.order[l])
                for a in range(len(members)):
                    for b in range(a + 1, len(members)):
                        Tp = frec.T_pre[members[a]]
                        Tq = frec.T_pre[members[b]]
                        vals[atlas.pair(members[a], members[b], t)] = \
                            1 if Tp <= Tq else 0

    final = _final_state(tr, steps)
    for lid in coarse_links:
        vals[atlas.C(lid, N + 1)] = final["coarse"][lid]
    for lid in net.fine_links:
        n, _, _ = net.segments[lid]
        for jseg in range(n):
            vals[atlas.seg(lid, jseg, N * m)] = final["fine"][lid][jseg]
        vals[atlas.T(lid, N * m)] = final["T"][lid]

    # indicator companion binaries, recomputed from the mapped snapshots
    for lid in net.fine_links:
        for t in range(1, N * m + 1):
            c0 = vals[atlas.seg(lid, 0, t)]
            T0 = vals[atlas.T(lid, t - 1)]
            t_abs = tr.t_offset + t
            p1 = 1 if c0 > 0 else 0
            vals[atlas.psi(1, lid, t)] = p1
            vals[atlas.psi(4, lid, t)] = p1 * T0
            vals[atlas.psi(5, lid, t)] = p1 * t_abs
            e = S * (1 - p1) + p1 * T0
            g = S * (1 - p1) + p1 * t_abs
            T1 = vals[atlas.T(lid, t)]
            vals[atlas.psi(2, lid, t)] = 1 if T1 >= e else 0
            vals[atlas.psi(3, lid, t)] = 1 if T1 >= g else 0

    # strict-mode activity indicators
    for name in tr.model.variables:
        if name not in vals:
            fam = atlas.describe.get(name)
            if fam and fam[0] == "merge_indicator":
                _, s, k = fam
                vals[name] = 1 if vals.get(atlas.flow(s, k), 0) > 0 else 0
    return vals


def _staged_of(tr: Transcription) -> list[tuple[Stream, str, str]]:
    out = []
    for jid in tr.controlled_nodes:
        j = tr.network.signalized[jid]
        for s in j.all_streams():
            w = j.stage_of(s)
            if w is not None:
                out.append((s, jid, w))
    return out


def _run_class(tr: Transcription, steps, node: str, stage: str, k: int,
               r: int) -> Optional[int]:
    """Green-run class at interval k (None when red), from recorded stages
    with the pre-horizon history filled from the build state."""
    if steps[k - 1].stage.get(node) != stage:
        return None
    q = 0
    while q < r:
        k2 = k - q - 1
        if k2 >= 1:
            on = steps[k2 - 1].stage.get(node) == stage
        else:
            hist = tr.init_hist[node]
            idx = len(hist) - 1 + k2
            on = idx >= 0 and hist[idx] == stage
        if not on:
            break
        q += 1
    return q


def _final_state(tr: Transcription, steps) -> dict:
    """Post-horizon snapshot reconstructed from the last recorded step."""
    net = tr.network
    m = tr.atlas.m
    rec = steps[-1]
    coarse = {}
    for lid in (l for l in net.links if not net.is_fine(l)):
        out = sum(f for (s, d), f in rec.flows.items() if s == lid)
        inn = sum(f for (s, d), f in rec.flows.items()
                  if d == lid and not net.is_fine(s))
        fine_in = sum(f for frec in rec.fine_steps
                      for (s, d), f in frec.boundary.items() if d == lid)
        coarse[lid] = (rec.pre_coarse[lid] - out + inn + fine_in
                       + rec.injected.get(lid, 0))
    fine = {}
    T = {}
    S = fcfs.sentinel_for(net.config.horizon, m)
    last = rec.fine_steps[-1]
    for lid in net.fine_links:
        n, _, _ = net.segments[lid]
        fl = [last.seg_flows.get((lid, jseg), 0) for jseg in range(n)]
        vols = [last.pre_vol[lid][jseg] - fl[jseg]
                + (fl[jseg + 1] if jseg + 1 < n else 0)
                for jseg in range(n)]
        for (s, d), f in last.boundary.items():
            if d == lid:
                vols[n - 1] += f
        vols[n - 1] += last.injected.get(lid, 0)
        # the indicator update ran before the cross-rate deposit
        if vols[0] > 0:
            T[lid] = min(last.T_pre[lid], last.t + 1)
        else:
            T[lid] = S
        dep = sum(f for (s, d), f in rec.flows.items() if d == lid)
        vols[n - 1] += dep
        if n == 1 and dep and vols[0] > 0 and T[lid] == S:
            T[lid] = last.t + 1
        fine[lid] = vols
    return {"coarse": coarse, "fine": fine, "T": T}
