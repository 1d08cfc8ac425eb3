"""Discharge dynamics at stage-controlled intersections.

A stream's discharge speed is a discrete level that climbs with consecutive
green intervals and halves when the light is about to turn red, mimicking
drivers easing off ahead of a signal change. Flows are whole vehicles: the
floor of a three-way minimum of upstream supply, downstream space, and the
level-scaled free-flow shift.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Optional, Sequence

from .network import SpeedLevelTable


def green_run_index(theta_history: Sequence[int], memory_depth: int) -> Optional[int]:
    """Length class q of the green run ending at the newest history entry.

    theta_history lists this stream's stage activation for the last
    memory_depth + 2 intervals, oldest first; the final entry is the current
    interval. Returns None if the current interval is red, else
    q = min(run length - 1, memory_depth): runs longer than the memory
    saturate instead of losing their level.
    """
    r = memory_depth
    if len(theta_history) < r + 2:
        raise ValueError(f"need {r + 2} history entries, got {len(theta_history)}")
    hist = list(theta_history)[-(r + 2):]
    if hist[-1] == 0:
        return None
    q = 0
    while q < r and hist[-(q + 2)] == 1:
        q += 1
    return q


def speed_level(theta_history: Sequence[int], theta_next: int,
                prev_level: Fraction, table: SpeedLevelTable) -> Fraction:
    """Discharge speed level for the current interval.

    Red now gives 0. Green now and green next picks the table entry for the
    current run length (longer runs are faster, capped at the top level).
    Green now but red next halves the previous interval's level: drivers are
    already braking for the change, so a one-interval green that follows a
    red moves nothing.
    """
    q = green_run_index(theta_history, table.memory_depth)
    if q is None:
        return Fraction(0)
    if theta_next == 1:
        return table.levels[table.memory_depth - q]
    return Fraction(prev_level) / 2


def downstream_space(volume: int, capacity: int, exits: int, committed: int = 0) -> int:
    """Room in a destination link counting same-interval exits, minus vehicles
    already committed by higher-priority streams: C_hat - C_j + s_j - f_prio."""
    return capacity - volume + exits - committed


def signalized_flow(source_volume: int, turning_ratio, space, level, max_shift) -> int:
    """Vehicles one stream moves in one interval.

    floor of min(turning share of the source volume, downstream space,
    level-scaled free-flow shift). space=None means an unbounded exit.
    All arithmetic is exact (Fractions), so the floor is reproducible.
    """
    candidates = [Fraction(turning_ratio) * source_volume]
    if space is not None:
        candidates.append(Fraction(space))
    candidates.append(Fraction(level) * Fraction(max_shift))
    best = min(candidates)
    if best <= 0:
        return 0
    return int(best)  # Fraction truncation == floor for nonnegative values


def merge_strict_allows(committed: int) -> bool:
    """Conservative gap rule: a give-way stream may move only if every
    higher-priority stream into the same link stayed at zero."""
    return committed == 0
