"""Receding-horizon signal control on top of the exact transcription.

Each decision epoch snapshots the simulator, transcribes a lookahead of
horizon_N intervals from that state, solves, applies the first
reoptimize_every stage choices, and advances the simulator. Epochs where
the solver hits its node or time budget fall back to the fixed cyclic
plan (phase-aligned to the absolute interval index) so the applied plan
is always one-hot; a budget-limited incumbent is still applied when one
exists, since it is a feasible plan with a known objective.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field
from typing import Optional

from .engine import Simulator, SignalPlan, StepRecord, Trajectory
from .network import NetworkModel, ScenarioError
from .milp import (BuildOptions, build_milp, export_model, plan_from_values,
                   solve_bnb)


@dataclass
class ControllerConfig:
    horizon_N: int
    reoptimize_every: int = 1
    gap_tol: float = 0.0
    node_limit: int = 200000
    time_limit: Optional[float] = None
    cyclic_order: Optional[dict[str, list[str]]] = None
    merge_mode: str = "inequality"

    def validate(self, model: NetworkModel):
        if not (self.horizon_N >= self.reoptimize_every >= 1):
            raise ScenarioError(
                f"need horizon_N >= reoptimize_every >= 1, got "
                f"{self.horizon_N} / {self.reoptimize_every}")
        if self.cyclic_order is not None:
            for jid, seq in self.cyclic_order.items():
                j = model.signalized.get(jid)
                if j is None:
                    raise ScenarioError(f"cyclic order names unknown node {jid!r}")
                bad = [w for w in seq if w not in j.stages]
                if bad or not seq:
                    raise ScenarioError(
                        f"cyclic order for {jid} uses unknown stages {bad}")


@dataclass
class EpochLog:
    k_first: int                 # first coarse interval this epoch covers
    status: str
    objective: Optional[float]
    nodes: int
    fallback: bool


@dataclass
class ControlResult:
    trajectory: Trajectory
    plan: SignalPlan
    epochs: list[EpochLog] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        """True when every epoch solved to proven optimality."""
        return all(e.status == "optimal" for e in self.epochs)


def make_cyclic_plan(model: NetworkModel, horizon: int,
                     order: Optional[dict[str, list[str]]] = None) -> SignalPlan:
    """Fixed plan repeating each node's stage order for `horizon` intervals.

    Defaults to the declared stage order of every controlled node.
    """
    stages = {}
    for jid, j in model.signalized.items():
        if j.virtual:
            continue
        seq = (order or {}).get(jid) or list(j.stage_ids)
        stages[jid] = [seq[(k - 1) % len(seq)] for k in range(1, horizon + 1)]
    return SignalPlan(stages)


def receding_horizon_control(model: NetworkModel, config: ControllerConfig,
                             horizon: Optional[int] = None) -> ControlResult:
    """Closed-loop run over the scenario's horizon; returns the realized
    trajectory, the applied plan, and one log entry per epoch."""
    config.validate(model)
    cfg = model.config
    N = horizon if horizon is not None else cfg.horizon
    if N > cfg.horizon:
        raise ScenarioError(
            f"run horizon {N} exceeds the scenario's {cfg.horizon}")
    controlled = [jid for jid, j in model.signalized.items() if not j.virtual]
    if not controlled:
        raise ScenarioError("receding-horizon control needs a signalized node")

    fallback = make_cyclic_plan(model, N + config.horizon_N, config.cyclic_order)
    sim = Simulator(model, merge_mode=config.merge_mode)
    traj = Trajectory(model=model)
    epochs: list[EpochLog] = []
    applied: dict[str, list[str]] = {jid: [] for jid in controlled}
    virtual_stage = {j.id: j.stage_ids[0]
                     for j in model.signalized.values() if j.virtual}

    k = 0
    while k < N:
        span = min(config.reoptimize_every, N - k)
        # the lookahead shrinks near the end of the run: demand past the
        # scenario horizon is undefined, not zero
        n_look = min(config.horizon_N, cfg.horizon - k)
        tr = build_milp(model, N=n_look, state=sim.clone_state(),
                        options=BuildOptions(merge_mode=config.merge_mode))
        res = solve_bnb(tr.model, gap_tol=config.gap_tol,
                        node_limit=config.node_limit,
                        time_limit=config.time_limit)
        if res.status == "infeasible":
            path = _dump_model(tr.model)
            raise RuntimeError(
                f"lookahead model infeasible at interval {k + 1} "
                f"(always-feasible by construction); dumped to {path}")
        use_fallback = res.status == "limit"
        if use_fallback:
            seq = {jid: [fallback.stage_at(jid, k + i + 1)
                         for i in range(n_look)]
                   for jid in controlled}
        else:
            seq = plan_from_values(tr, res.values)
        epochs.append(EpochLog(k_first=k + 1, status=res.status,
                               objective=res.objective, nodes=res.nodes,
                               fallback=use_fallback))

        for i in range(span):
            choice = dict(virtual_stage)
            nxt = dict(virtual_stage)
            for jid in controlled:
                choice[jid] = seq[jid][i]
                nxt[jid] = seq[jid][min(i + 1, len(seq[jid]) - 1)]
                applied[jid].append(seq[jid][i])
            rec: StepRecord = sim.step(choice, nxt)
            traj.steps.append(rec)
        k += span

    traj.injected_total = sim.injected_total
    traj.exited_total = sim.exited_total
    traj.final_queues = {lid: q for lid, q in sim.queues.items() if q}
    traj.applied_plan = {jid: list(s) for jid, s in applied.items()}
    return ControlResult(trajectory=traj, plan=SignalPlan(applied),
                         epochs=epochs)


def _dump_model(mdl) -> str:
    fd, path = tempfile.mkstemp(prefix="infeasible_", suffix=".lp")
    with open(fd, "w") as fh:
        fh.write(export_model(mdl, fmt="lp"))
    return path
