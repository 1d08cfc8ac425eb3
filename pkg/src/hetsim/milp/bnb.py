"""Best-first branch and bound over the internal simplex.

Branches on the most fractional integer variable, preferring binaries (ties
to the smaller variable index), and explores nodes in lowest-LP-bound order.
Equal bounds pop newest-first, so fresh children are followed depth-first
until their bounds separate, which finds an incumbent early. The search is
deterministic; bounds are tightened per node, no cuts, no presolve beyond
the variable bounds.
"""

from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import MilpModel
from .simplex import LpResult, SolverError, solve_lp

INT_TOL = 1e-6


@dataclass
class Solution:
    status: str                  # optimal | feasible | infeasible | limit
    objective: float
    values: dict[str, float] = field(default_factory=dict)
    nodes: int = 0
    wall_time: float = 0.0
    gap: float = math.inf

    def to_json(self) -> str:
        doc = {
            "status": self.status,
            "objective": None if math.isnan(self.objective) or math.isinf(self.objective)
                         else self.objective,
            "nodes": self.nodes,
            "wall_time": round(self.wall_time, 6),
            "values": {k: (int(v) if float(v).is_integer() else v)
                       for k, v in sorted(self.values.items())},
        }
        return json.dumps(doc, indent=2, sort_keys=False)


def solve_bnb(model: MilpModel, gap_tol: float = 0.0,
              node_limit: int = 200000,
              time_limit: Optional[float] = None) -> Solution:
    """Solve the model to integer optimality (within gap_tol, a fraction)."""
    t0 = time.perf_counter()
    c, A, senses, b, lo, hi, is_int, names = model.to_dense()
    int_idx = np.nonzero(is_int)[0]
    for j in int_idx:
        if not (math.isfinite(lo[j]) and math.isfinite(hi[j])):
            raise SolverError(f"integer variable {names[j]} needs finite bounds")
    is_bin = is_int & (lo >= 0.0) & (hi <= 1.0)

    best_x: Optional[np.ndarray] = None
    best_obj = math.inf
    nodes = 0
    seq = 0
    # heap entries: (bound, -seq, lo_overrides, hi_overrides); newest first
    # on equal bounds so the search dives before it broadens
    heap: list[tuple[float, int, dict, dict]] = [(-math.inf, 0, {}, {})]
    best_bound_left = -math.inf
    hit_limit = False

    def out_of_budget() -> bool:
        if nodes >= node_limit:
            return True
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            return True
        return False

    while heap:
        bound, _, lo_over, hi_over = heapq.heappop(heap)
        best_bound_left = bound
        if best_x is not None:
            if bound >= best_obj - _gap_margin(gap_tol, best_obj):
                break  # every remaining node is at least as bad
        if out_of_budget():
            hit_limit = True
            break

        node_lo = lo.copy()
        node_hi = hi.copy()
        for j, v in lo_over.items():
            node_lo[j] = v
        for j, v in hi_over.items():
            node_hi[j] = v
        nodes += 1
        try:
            res = solve_lp(c, A, senses, b, node_lo, node_hi)
        except Exception as exc:
            raise SolverError(f"LP failure at node {nodes} "
                              f"(branches: {sorted(lo_over)} {sorted(hi_over)}): {exc}")
        if res.status == "infeasible":
            continue
        if res.status == "unbounded":
            raise SolverError(f"LP relaxation unbounded at node {nodes}")
        if res.status == "limit":
            raise SolverError(f"simplex iteration limit at node {nodes}")
        if best_x is not None and res.objective >= best_obj - _gap_margin(gap_tol, best_obj):
            continue

        # most fractional, binaries first: the binaries carry the logic and
        # fixing them usually snaps the flow variables integral on their own
        frac_j = -1
        frac_best = INT_TOL
        for j in int_idx:
            if not is_bin[j]:
                continue
            d_near = abs(res.x[j] - round(res.x[j]))
            if d_near > frac_best:
                frac_best = d_near
                frac_j = j
        if frac_j < 0:
            for j in int_idx:
                if is_bin[j]:
                    continue
                d_near = abs(res.x[j] - round(res.x[j]))
                if d_near > frac_best:
                    frac_best = d_near
                    frac_j = j

        if frac_j < 0:
            cand = res.x.copy()
            cand[int_idx] = np.round(cand[int_idx])
            viol = _max_violation(A, senses, b, node_lo, node_hi, cand)
            if viol > 1e-6 * (1.0 + abs(b).max(initial=0.0)):
                raise SolverError(
                    f"integral LP point fails verification at node {nodes} "
                    f"(violation {viol:.3e})")
            obj = float(c @ cand)
            if obj < best_obj - 1e-9:
                best_obj = obj
                best_x = cand
            continue

        # children inherit the parent bound; among equal bounds the heap pops
        # the newest entry, so the rounding-preferred child (pushed second)
        # is explored first and the search dives toward an incumbent
        x_val = res.x[frac_j]
        down = ({**lo_over}, {**hi_over, frac_j: math.floor(x_val)})
        up = ({**lo_over, frac_j: math.ceil(x_val)}, {**hi_over})
        first, second = (down, up) if x_val - math.floor(x_val) > 0.5 else (up, down)
        seq += 1
        heapq.heappush(heap, (res.objective, -seq, *first))
        seq += 1
        heapq.heappush(heap, (res.objective, -seq, *second))

    wall = time.perf_counter() - t0
    if best_x is None:
        status = "limit" if hit_limit else "infeasible"
        return Solution(status, math.inf, {}, nodes, wall)
    if hit_limit and heap:
        status = "feasible"
        gap = best_obj - best_bound_left
    else:
        status = "optimal"
        gap = 0.0
    values = {nm: float(v) for nm, v in zip(names, best_x)}
    return Solution(status, best_obj, values, nodes, wall, gap)


def _gap_margin(gap_tol: float, incumbent: float) -> float:
    if gap_tol <= 0:
        return 1e-9
    return gap_tol * max(1.0, abs(incumbent))


def _max_violation(A, senses, b, lo, hi, x) -> float:
    worst = 0.0
    if A.size:
        lhs = A @ x
        for i in range(len(b)):
            if senses[i] < 0:
                worst = max(worst, lhs[i] - b[i])
            elif senses[i] > 0:
                worst = max(worst, b[i] - lhs[i])
            else:
                worst = max(worst, abs(lhs[i] - b[i]))
    worst = max(worst, float(np.max(lo - x, initial=0.0)))
    worst = max(worst, float(np.max(x - hi, initial=0.0)))
    return worst
