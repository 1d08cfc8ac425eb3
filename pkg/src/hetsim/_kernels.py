"""Hot numeric kernels, jitted when numba is available.

Set HETSIM_DISABLE_NUMBA=1 (or NUMBA_DISABLE_JIT=1) to force the pure-numpy
fallback; the fallback is the same source, just undecorated. Every kernel
keeps to arrays and scalars so one definition serves both paths.
`benchmarks/bench_kernels.py` times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_wanted() -> bool:
    if os.environ.get("HETSIM_DISABLE_NUMBA"):
        return False
    if os.environ.get("NUMBA_DISABLE_JIT") == "1":
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _numba_wanted()


def _jit(fn):
    if NUMBA_ENABLED:
        from numba import njit
        return njit(cache=True)(fn)
    return fn


def _chain_flows_impl(vol, cap, fshift, out0, flows):
    """Within-link segment advances for one fine interval.

    Segment 0 is the stop line; `out0` is its already-decided outflow.
    flows[j] (j >= 1) is the move from segment j to j-1, capped by supply,
    by the receiving segment's space counting its same-interval exit, and by
    the floored free-flow shift. Fills `flows` in place.
    """
    n = vol.shape[0]
    flows[0] = out0
    for j in range(1, n):
        space = cap[j - 1] - vol[j - 1] + flows[j - 1]
        f = vol[j]
        if space < f:
            f = space
        if fshift < f:
            f = fshift
        if f < 0:
            f = 0
        flows[j] = f


chain_flows = _jit(_chain_flows_impl)
# un-jitted twin for direct equality tests against the jitted path
chain_flows_py = _chain_flows_impl


def _simplex_loop_impl(tab, xb, lo, hi, vstat, basis, nbval,
                       bland_after, max_iter, tol):
    """Bounded-variable primal simplex iterations on a dense tableau.

    tab: (m+1) x n array; rows 0..m-1 hold B^-1 A, row m holds reduced costs.
    xb: current basic variable values (length m).
    vstat: 0 nonbasic at lower bound, 1 nonbasic at upper, 2 basic,
           3 nonbasic free (value 0).
    nbval: the value a nonbasic variable currently sits at (kept in sync
           with vstat; used so callers can reconstruct the full point).
    Returns 0 optimal, 1 unbounded, 2 iteration limit. Pricing is Dantzig,
    falling back to Bland's rule for anti-cycling after `bland_after`
    consecutive degenerate pivots.
    """
    m = tab.shape[0] - 1
    n = tab.shape[1]
    INF = np.inf
    degenerate = 0
    for _ in range(max_iter):
        use_bland = degenerate >= bland_after
        enter = -1
        best = tol
        for j in range(n):
            s = vstat[j]
            if s == 2:
                continue
            if hi[j] - lo[j] <= 0.0:
                continue  # fixed variable can never move
            d = tab[m, j]
            attractive = 0.0
            if s == 0 and d < -tol:
                attractive = -d
            elif s == 1 and d > tol:
                attractive = d
            elif s == 3 and (d < -tol or d > tol):
                attractive = abs(d)
            if attractive > 0.0:
                if use_bland:
                    enter = j
                    break
                if attractive > best:
                    best = attractive
                    enter = j
        if enter == -1:
            return 0
        j = enter
        d = tab[m, j]
        if vstat[j] == 0:
            tdir = 1.0
        elif vstat[j] == 1:
            tdir = -1.0
        else:
            tdir = 1.0 if d < 0 else -1.0

        # ratio test: how far can the entering variable move. Ties between
        # rows break to the smaller basic-variable index (Bland-compatible);
        # a tie with the bound-flip limit keeps the cheaper flip.
        step = INF
        if vstat[j] != 3 and lo[j] > -INF and hi[j] < INF:
            step = hi[j] - lo[j]
        leave_row = -1
        leave_to_upper = False
        for i in range(m):
            rate = -tab[i, j] * tdir  # d x_B[i] / d step
            bi = basis[i]
            if rate < -tol and lo[bi] > -INF:
                lim = (xb[i] - lo[bi]) / (-rate)
                up = False
            elif rate > tol and hi[bi] < INF:
                lim = (hi[bi] - xb[i]) / rate
                up = True
            else:
                continue
            if lim < 0.0:
                lim = 0.0
            if lim < step or (lim == step and leave_row != -1
                              and bi < basis[leave_row]):
                step = lim
                leave_row = i
                leave_to_upper = up
        if step == INF:
            return 1

        if leave_row == -1:
            # bound flip: entering moves across to its other bound
            for i in range(m):
                xb[i] += (-tab[i, j] * tdir) * step
            if vstat[j] == 0:
                vstat[j] = 1
                nbval[j] = hi[j]
            else:
                vstat[j] = 0
                nbval[j] = lo[j]
            if step > tol:
                degenerate = 0
            else:
                degenerate += 1
            continue

        r = leave_row
        leave = basis[r]
        # update values
        for i in range(m):
            if i != r:
                xb[i] += (-tab[i, j] * tdir) * step
        enter_val = nbval[j] + tdir * step
        vstat[leave] = 1 if leave_to_upper else 0
        nbval[leave] = hi[leave] if leave_to_upper else lo[leave]
        vstat[j] = 2
        basis[r] = j
        xb[r] = enter_val

        # pivot the tableau
        piv = tab[r, j]
        inv = 1.0 / piv
        for col in range(n):
            tab[r, col] *= inv
        for i in range(m + 1):
            if i == r:
                continue
            factor = tab[i, j]
            if factor != 0.0:
                for col in range(n):
                    tab[i, col] -= factor * tab[r, col]
        if step > tol:
            degenerate = 0
        else:
            degenerate += 1
    return 2


simplex_loop = _jit(_simplex_loop_impl)
simplex_loop_py = _simplex_loop_impl
