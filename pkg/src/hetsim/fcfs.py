"""First-come-first-served dynamics at all-way stops.

Each member link tracks the arrival interval of the vehicle column currently
waiting at its stop line. The intersection grants a virtual green to the
column that arrived first (ties: the link with the smaller configured order
number), one link per fine interval, so service is by column rather than by
vehicle. Links are chains of segments advanced at the fine rate.

"Infinity" for the arrival indicator is a finite sentinel strictly greater
than any reachable fine step; callers obtain it from `sentinel_for`.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Mapping, Optional, Sequence


def sentinel_for(horizon: int, steps_per_interval: int) -> int:
    """Arrival-indicator value standing for plus infinity.

    Strictly greater than any fine step the run (or a controller lookahead of
    equal length) can reach.
    """
    return 2 * horizon * steps_per_interval + 1


def update_indicator(T_prev: int, exit_volume_next: int, t: int, sentinel: int) -> int:
    """Arrival indicator for snapshot t+1.

    An occupied stop-line segment keeps the column's original arrival interval
    min(T_prev, t+1); an empty one resets to the sentinel. By induction the
    indicator equals the fine interval in which the current column's head
    first reached the stop line.
    """
    if exit_volume_next > 0:
        return min(T_prev, t + 1)
    return sentinel


def assign_virtual_green(T: Mapping[str, int], order: Mapping[str, int],
                         groups: Sequence[Sequence[str]] = ()) -> tuple[str, ...]:
    """Links served during this fine interval.

    Ungrouped: the single link with the smallest arrival indicator, ties by
    smallest order number; with every indicator at the sentinel the smallest
    order number wins (it will move nothing). Grouped: the winning group's
    links are served together; a group inherits the minimum indicator and
    order of its members.
    """
    if not T:
        raise ValueError("no links to serve")
    if groups:
        units: list[tuple[int, int, tuple[str, ...]]] = []
        for g in groups:
            gT = min(T[l] for l in g)
            gorder = min(order[l] for l in g)
            units.append((gT, gorder, tuple(g)))
        units.sort(key=lambda u: (u[0], u[1]))
        return units[0][2]
    best = min(T.keys(), key=lambda l: (T[l], order[l]))
    return (best,)


def segment_flow(upstream_volume: int, downstream_volume: int,
                 downstream_capacity: int, downstream_exits: int,
                 max_shift) -> int:
    """Vehicles advancing between adjacent segments of one link in one fine
    interval: floor(min(supply, space plus same-interval exits, free shift))."""
    candidates = [
        Fraction(upstream_volume),
        Fraction(downstream_capacity - downstream_volume + downstream_exits),
        Fraction(max_shift),
    ]
    best = min(candidates)
    if best <= 0:
        return 0
    return int(best)


def boundary_flow(green: bool, source_share, space, max_shift) -> int:
    """Vehicles crossing the stop line toward one destination in one fine
    interval.

    Zero without the virtual green. Otherwise the floor of min(turning share
    of the stop-line volume, destination space, free shift). `space` is
    None for a network exit; for a fine destination it is the entrance
    segment's room counting same-interval exits; for a coarse destination the
    caller passes the remaining coarse-interval budget (room at the coarse
    snapshot minus vehicles already sent this interval).
    """
    if not green:
        return 0
    candidates = [Fraction(source_share)]
    if space is not None:
        candidates.append(Fraction(space))
    candidates.append(Fraction(max_shift))
    best = min(candidates)
    if best <= 0:
        return 0
    return int(best)
