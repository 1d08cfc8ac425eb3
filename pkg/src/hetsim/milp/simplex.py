"""Two-phase bounded-variable primal simplex on a dense tableau.

Inequalities get slack columns, every row gets an artificial column, and
phase 1 minimizes the artificial sum from the all-artificial basis. The pivot
loop lives in `hetsim._kernels.simplex_loop` (jitted when numba is enabled);
this module owns problem setup, the phase switch, and solution extraction.
Dantzig pricing with a Bland's-rule fallback keeps the loop finite on
degenerate models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._kernels import simplex_loop
from .model import MilpModel

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
BLAND_AFTER = 60


class SolverError(RuntimeError):
    pass


@dataclass
class LpResult:
    status: str              # optimal | infeasible | unbounded | limit
    x: np.ndarray
    objective: float


def solve_lp(c, A, senses, b, lo, hi, max_iter: int = 0) -> LpResult:
    """Minimize c·x subject to A x (senses) b and lo <= x <= hi.

    senses per row: -1 for <=, 0 for =, +1 for >=. Bounds may be +-inf.
    """
    c = np.asarray(c, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    senses = np.asarray(senses)
    lo = np.asarray(lo, dtype=np.float64).copy()
    hi = np.asarray(hi, dtype=np.float64).copy()
    m, n = A.shape if A.size else (len(b), len(c))
    if m == 0:
        # pure bounds problem: each variable sits at whichever bound helps
        x = np.where(c >= 0, lo, hi)
        x = np.where(np.isfinite(x), x, np.where(np.isfinite(lo), lo, 0.0))
        if np.any((c > 0) & ~np.isfinite(lo)) or np.any((c < 0) & ~np.isfinite(hi)):
            return LpResult("unbounded", x, -math.inf)
        return LpResult("optimal", x, float(c @ x))

    slack_rows = np.nonzero(senses != 0)[0]
    n_slack = len(slack_rows)
    n_art = m
    n_tot = n + n_slack + n_art

    Af = np.zeros((m, n + n_slack))
    Af[:, :n] = A
    for s_idx, i in enumerate(slack_rows):
        Af[i, n + s_idx] = 1.0 if senses[i] < 0 else -1.0

    lo_f = np.concatenate([lo, np.zeros(n_slack), np.zeros(n_art)])
    hi_f = np.concatenate([hi, np.full(n_slack, np.inf), np.full(n_art, np.inf)])

    # nonbasic starting point for structurals and slacks
    vstat = np.zeros(n_tot, dtype=np.int64)
    nbval = np.zeros(n_tot)
    for j in range(n + n_slack):
        if math.isfinite(lo_f[j]):
            vstat[j] = 0
            nbval[j] = lo_f[j]
        elif math.isfinite(hi_f[j]):
            vstat[j] = 1
            nbval[j] = hi_f[j]
        else:
            vstat[j] = 3
            nbval[j] = 0.0

    resid = b - Af @ nbval[:n + n_slack]
    signs = np.where(resid >= 0, 1.0, -1.0)

    tab = np.zeros((m + 1, n_tot))
    tab[:m, :n + n_slack] = Af * signs[:, None]
    tab[:m, n + n_slack:] = np.eye(m)
    xb = np.abs(resid)
    basis = np.arange(n + n_slack, n_tot, dtype=np.int64)
    vstat[n + n_slack:] = 2

    if max_iter <= 0:
        max_iter = 2000 + 60 * (m + n_tot)

    # phase 1: minimize the artificial sum; reduced costs of the artificial
    # basis are c1 - column sums
    c1 = np.zeros(n_tot)
    c1[n + n_slack:] = 1.0
    tab[m, :] = c1 - tab[:m, :].sum(axis=0)
    code = simplex_loop(tab, xb, lo_f, hi_f, vstat, basis, nbval,
                        BLAND_AFTER, max_iter, PIVOT_TOL)
    if code == 2:
        return LpResult("limit", _extract(n, basis, vstat, nbval, xb), math.nan)
    infeas = sum(xb[i] for i in range(m) if basis[i] >= n + n_slack)
    if infeas > FEAS_TOL * (1.0 + abs(b).max(initial=0.0)):
        return LpResult("infeasible", _extract(n, basis, vstat, nbval, xb), math.inf)

    # drive leftover zero-valued artificials out of the basis where possible
    for r in range(m):
        if basis[r] < n + n_slack:
            continue
        piv_col = -1
        for j in range(n + n_slack):
            if vstat[j] != 2 and hi_f[j] - lo_f[j] > 0 and abs(tab[r, j]) > 1e-7:
                piv_col = j
                break
        if piv_col >= 0:
            _pivot_in(tab, xb, basis, vstat, nbval, r, piv_col)
    # artificials may never re-enter
    lo_f[n + n_slack:] = 0.0
    hi_f[n + n_slack:] = 0.0
    nbval[n + n_slack:] = 0.0

    # phase 2: real costs
    c2 = np.zeros(n_tot)
    c2[:n] = c
    tab[m, :] = c2 - c2[basis] @ tab[:m, :]
    code = simplex_loop(tab, xb, lo_f, hi_f, vstat, basis, nbval,
                        BLAND_AFTER, max_iter, PIVOT_TOL)
    x = _extract(n, basis, vstat, nbval, xb)
    if code == 1:
        return LpResult("unbounded", x, -math.inf)
    if code == 2:
        return LpResult("limit", x, float(c @ x))
    return LpResult("optimal", x, float(c @ x))


def _extract(n, basis, vstat, nbval, xb) -> np.ndarray:
    x = np.zeros(n)
    for j in range(n):
        if vstat[j] == 2:
            rows = np.nonzero(basis == j)[0]
            x[j] = xb[rows[0]] if len(rows) else 0.0
        else:
            x[j] = nbval[j]
    return x


def _pivot_in(tab, xb, basis, vstat, nbval, r, j):
    """Degenerate pivot bringing nonbasic j into the basis at row r."""
    m = tab.shape[0] - 1
    leave = basis[r]
    piv = tab[r, j]
    tab[r, :] /= piv
    for i in range(m + 1):
        if i != r and tab[i, j] != 0.0:
            tab[i, :] -= tab[i, j] * tab[r, :]
    vstat[leave] = 0
    nbval[leave] = 0.0
    vstat[j] = 2
    basis[r] = j
    xb[r] = nbval[j]


def solve_model_lp(model: MilpModel, lo_over=None, hi_over=None) -> LpResult:
    """LP relaxation of a MilpModel, with optional bound overrides
    (dicts name -> value) used by branch and bound."""
    c, A, senses, b, lo, hi, _, names = model.to_dense()
    if lo_over or hi_over:
        idx = {nm: j for j, nm in enumerate(names)}
        for nm, v in (lo_over or {}).items():
            lo[idx[nm]] = max(lo[idx[nm]], v)
        for nm, v in (hi_over or {}).items():
            hi[idx[nm]] = min(hi[idx[nm]], v)
    return solve_lp(c, A, senses, b, lo, hi)
