"""Container for mixed-integer linear programs plus text-format round trips.

Variables and rows keep full structured names (symbol plus indices, e.g.
``C_a_k3`` or ``th_J1_EW_k2``) so exported files can be audited line by line.
The LP writer emits CPLEX-style text with those names; the MPS writer emits
fixed-column MPS, where names are capped at 8 characters, so it mangles them
to ``x0000001``/``c0000001`` and prepends a comment block mapping mangled
names back to the audit names. Both formats parse back via parse_lp /
parse_mps; round trips preserve rows, bounds, kinds, and coefficients.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

CONTINUOUS = "continuous"
INTEGER = "integer"
BINARY = "binary"

_SENSES = ("<=", "=", ">=")


class ModelError(ValueError):
    """Malformed model: bad bounds, duplicate names, undeclared variables."""


@dataclass
class Variable:
    name: str
    kind: str = CONTINUOUS
    lo: float = 0.0
    hi: float = math.inf

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, INTEGER, BINARY):
            raise ModelError(f"variable {self.name}: unknown kind {self.kind!r}")
        if self.kind == BINARY:
            if not (0 <= self.lo and self.hi <= 1):
                raise ModelError(f"binary {self.name}: bounds must sit inside [0, 1]")
        if self.lo > self.hi:
            raise ModelError(f"variable {self.name}: lower bound exceeds upper")


@dataclass
class Row:
    name: str
    coeffs: dict[str, float]
    sense: str
    rhs: float
    big_m: Optional[float] = None   # recorded for audit when the row uses one

    def __post_init__(self):
        if self.sense not in _SENSES:
            raise ModelError(f"row {self.name}: unknown sense {self.sense!r}")


class MilpModel:
    def __init__(self, name: str = "hetsim"):
        self.name = name
        self.variables: dict[str, Variable] = {}
        self.rows: list[Row] = []
        self._row_names: set[str] = set()
        self.objective: dict[str, float] = {}
        self._auto_row = 0

    # -- construction -----------------------------------------------------

    def add_variable(self, name: str, kind: str = CONTINUOUS,
                     lo: float = 0.0, hi: float = math.inf) -> str:
        if name in self.variables:
            raise ModelError(f"duplicate variable name {name}")
        if kind == BINARY and hi is math.inf:
            hi = 1.0
        self.variables[name] = Variable(name, kind, float(lo), float(hi))
        return name

    def add_row(self, coeffs: Mapping[str, float], sense: str, rhs: float,
                name: Optional[str] = None, big_m: Optional[float] = None) -> Row:
        if name is None:
            self._auto_row += 1
            name = f"r{self._auto_row:06d}"
        if name in self._row_names:
            raise ModelError(f"duplicate row name {name}")
        clean = {}
        for var, c in coeffs.items():
            if var not in self.variables:
                raise ModelError(f"row {name}: undeclared variable {var}")
            c = float(c)
            if c != 0.0:
                clean[var] = clean.get(var, 0.0) + c
        row = Row(name, clean, sense, float(rhs), big_m)
        self.rows.append(row)
        self._row_names.add(name)
        return row

    def set_objective(self, coeffs: Mapping[str, float]):
        for var in coeffs:
            if var not in self.variables:
                raise ModelError(f"objective: undeclared variable {var}")
        self.objective = {v: float(c) for v, c in coeffs.items() if float(c) != 0.0}

    def add_objective_term(self, var: str, coeff: float):
        if var not in self.variables:
            raise ModelError(f"objective: undeclared variable {var}")
        c = self.objective.get(var, 0.0) + float(coeff)
        if c == 0.0:
            self.objective.pop(var, None)
        else:
            self.objective[var] = c

    def fix_variable(self, name: str, value: float):
        v = self.variables[name]
        v.lo = v.hi = float(value)

    # -- views ------------------------------------------------------------

    @property
    def integer_names(self) -> list[str]:
        return [v.name for v in self.variables.values() if v.kind != CONTINUOUS]

    def to_dense(self):
        """Numeric views for the solver: (c, A, senses, b, lo, hi, is_int, names).

        senses: -1 for <=, 0 for =, +1 for >=.
        """
        names = list(self.variables)
        index = {n: j for j, n in enumerate(names)}
        n, m = len(names), len(self.rows)
        c = np.zeros(n)
        for v, coef in self.objective.items():
            c[index[v]] = coef
        A = np.zeros((m, n))
        b = np.zeros(m)
        senses = np.zeros(m, dtype=np.int8)
        for i, row in enumerate(self.rows):
            for v, coef in row.coeffs.items():
                A[i, index[v]] = coef
            b[i] = row.rhs
            senses[i] = {"<=": -1, "=": 0, ">=": 1}[row.sense]
        lo = np.array([self.variables[v].lo for v in names])
        hi = np.array([self.variables[v].hi for v in names])
        is_int = np.array([self.variables[v].kind != CONTINUOUS for v in names])
        return c, A, senses, b, lo, hi, is_int, names

    def residuals(self, values: Mapping[str, float]) -> list[tuple[str, float]]:
        """Signed violation of every row and bound at the given point;
        positive means violated."""
        out = []
        for row in self.rows:
            lhs = sum(c * values[v] for v, c in row.coeffs.items())
            if row.sense == "<=":
                out.append((row.name, lhs - row.rhs))
            elif row.sense == ">=":
                out.append((row.name, row.rhs - lhs))
            else:
                out.append((row.name, abs(lhs - row.rhs)))
        for v in self.variables.values():
            x = values[v.name]
            out.append((f"lb:{v.name}", v.lo - x))
            out.append((f"ub:{v.name}", x - v.hi))
        return out

    def max_violation(self, values: Mapping[str, float]) -> float:
        return max((r for _, r in self.residuals(values)), default=0.0)


def linearize_product(model: MilpModel, binary: str, bounded: str,
                      name: str) -> str:
    """Add variable ``name`` equal to binary * bounded in every feasible
    integer point, via the four standard envelope rows.

    The bounded variable must have finite bounds [lo, hi].
    """
    bv = model.variables[binary]
    xv = model.variables[bounded]
    if bv.kind != BINARY:
        raise ModelError(f"linearize_product: {binary} is not binary")
    if not (math.isfinite(xv.lo) and math.isfinite(xv.hi)):
        raise ModelError(f"linearize_product: {bounded} must have finite bounds")
    lo, hi = xv.lo, xv.hi
    z = model.add_variable(name, xv.kind, min(lo, 0.0), max(hi, 0.0))
    # z >= lo*b ; z <= hi*b ; z >= x - hi*(1-b) ; z <= x - lo*(1-b)
    model.add_row({binary: lo, name: -1.0}, "<=", 0.0, name=f"{name}_a")
    model.add_row({name: 1.0, binary: -hi}, "<=", 0.0, name=f"{name}_b")
    model.add_row({bounded: 1.0, binary: hi, name: -1.0}, "<=", hi, name=f"{name}_c")
    model.add_row({name: 1.0, bounded: -1.0, binary: -lo}, "<=", -lo, name=f"{name}_d")
    return z


# -- number formatting ----------------------------------------------------

def _fmt(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def _fmt_mps(x: float) -> str:
    if x == int(x) and abs(x) < 1e10:
        return str(int(x))
    s = f"{x:.9g}"
    return s


# -- LP text format -------------------------------------------------------

def write_lp(model: MilpModel) -> str:
    lines = [f"\\ {model.name}: exported model", "Minimize"]
    lines.append(" obj: " + _terms(model.objective))
    lines.append("Subject To")
    for row in model.rows:
        rel = {"<=": "<=", "=": "=", ">=": ">="}[row.sense]
        lines.append(f" {row.name}: {_terms(row.coeffs)} {rel} {_fmt(row.rhs)}")
    bound_lines = []
    for v in model.variables.values():
        default_lo = 0.0
        if v.lo == v.hi:
            bound_lines.append(f" {v.name} = {_fmt(v.lo)}")
        elif v.kind == BINARY and v.lo == 0.0 and v.hi == 1.0:
            continue
        elif v.lo == -math.inf and v.hi == math.inf:
            bound_lines.append(f" {v.name} free")
        elif v.hi == math.inf:
            if v.lo != default_lo:
                bound_lines.append(f" {_fmt(v.lo)} <= {v.name}")
        else:
            bound_lines.append(f" {_fmt(v.lo)} <= {v.name} <= {_fmt(v.hi)}")
    if bound_lines:
        lines.append("Bounds")
        lines.extend(bound_lines)
    generals = [v.name for v in model.variables.values() if v.kind == INTEGER]
    binaries = [v.name for v in model.variables.values() if v.kind == BINARY]
    if generals:
        lines.append("Generals")
        lines.extend(f" {n}" for n in generals)
    if binaries:
        lines.append("Binaries")
        lines.extend(f" {n}" for n in binaries)
    lines.append("End")
    return "\n".join(lines) + "\n"


def _terms(coeffs: Mapping[str, float]) -> str:
    if not coeffs:
        return "0"
    parts = []
    for i, (v, c) in enumerate(coeffs.items()):
        mag = _fmt(abs(c))
        if i == 0:
            sign = "-" if c < 0 else ""
            parts.append(f"{sign} {mag} {v}".strip())
        else:
            sign = "-" if c < 0 else "+"
            parts.append(f"{sign} {mag} {v}")
    return " ".join(parts)


def parse_lp(text: str) -> MilpModel:
    """Parse the subset of CPLEX LP text produced by write_lp."""
    model = MilpModel()
    section = None
    rows: list[tuple[str, str]] = []
    obj_text = ""
    bounds: list[str] = []
    generals: list[str] = []
    binaries: list[str] = []
    for raw in text.splitlines():
        line = raw.split("\\")[0].rstrip()
        if not line.strip():
            continue
        low = line.strip().lower()
        if low in ("minimize", "maximise", "minimise", "maximize"):
            section = "obj"
            continue
        if low in ("subject to", "st", "s.t."):
            section = "rows"
            continue
        if low == "bounds":
            section = "bounds"
            continue
        if low in ("generals", "general"):
            section = "generals"
            continue
        if low in ("binaries", "binary"):
            section = "binaries"
            continue
        if low == "end":
            break
        body = line.strip()
        if section == "obj":
            obj_text += " " + body
        elif section == "rows":
            if ":" in body:
                name, rest = body.split(":", 1)
                rows.append((name.strip(), rest.strip()))
            else:
                name, rest = rows[-1]
                rows[-1] = (name, rest + " " + body)
        elif section == "bounds":
            bounds.append(body)
        elif section == "generals":
            generals.extend(body.split())
        elif section == "binaries":
            binaries.extend(body.split())

    if ":" in obj_text:
        obj_text = obj_text.split(":", 1)[1]

    token_re = re.compile(
        r"[A-Za-z_][A-Za-z0-9_.\[\]]*"          # variable name
        r"|\d+\.?\d*(?:[eE][+-]?\d+)?"          # number (keeps its exponent)
        r"|\.\d+(?:[eE][+-]?\d+)?"
        r"|[+-]")

    def scan_terms(s: str) -> dict[str, float]:
        coeffs: dict[str, float] = {}
        sign = 1.0
        pending: Optional[float] = None
        for tok in token_re.findall(s):
            if tok == "+":
                sign = 1.0
            elif tok == "-":
                sign = -sign
            elif tok[0].isdigit() or tok[0] == ".":
                pending = (pending if pending is not None else 1.0) * float(tok)
            else:
                coef = sign * (pending if pending is not None else 1.0)
                coeffs[tok] = coeffs.get(tok, 0.0) + coef
                sign, pending = 1.0, None
        return coeffs

    var_kinds = {n: INTEGER for n in generals}
    var_kinds.update({n: BINARY for n in binaries})

    parsed_rows = []
    seen_vars: dict[str, None] = {}
    for name, body in rows:
        sense = None
        for rel in ("<=", ">=", "="):
            if rel in body:
                sense = rel
                lhs, rhs = body.split(rel, 1)
                break
        if sense is None:
            raise ModelError(f"row {name}: no relation found")
        coeffs = scan_terms(lhs)
        parsed_rows.append((name, coeffs, sense, float(rhs)))
        for v in coeffs:
            seen_vars[v] = None
    for v in scan_terms(obj_text):
        seen_vars[v] = None

    bound_map: dict[str, tuple[float, float]] = {}
    for body in bounds:
        toks = body.split()
        if len(toks) == 2 and toks[1].lower() == "free":
            bound_map[toks[0]] = (-math.inf, math.inf)
            seen_vars[toks[0]] = None
        elif len(toks) == 3 and toks[1] == "=":
            v = float(toks[2])
            bound_map[toks[0]] = (v, v)
            seen_vars[toks[0]] = None
        elif len(toks) == 3 and toks[1] == "<=":
            name = toks[0]
            try:
                lo = float(name)
                # "lo <= x" form
                var = toks[2]
                prev = bound_map.get(var, (0.0, math.inf))
                bound_map[var] = (lo, prev[1])
                seen_vars[var] = None
            except ValueError:
                prev = bound_map.get(name, (0.0, math.inf))
                bound_map[name] = (prev[0], float(toks[2]))
                seen_vars[name] = None
        elif len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
            var = toks[2]
            bound_map[var] = (float(toks[0]), float(toks[4]))
            seen_vars[var] = None
        else:
            raise ModelError(f"cannot parse bound line {body!r}")

    for v in seen_vars:
        kind = var_kinds.get(v, CONTINUOUS)
        lo, hi = bound_map.get(v, (0.0, 1.0 if kind == BINARY else math.inf))
        model.add_variable(v, kind, lo, hi)
    for name, coeffs, sense, rhs in parsed_rows:
        model.add_row(coeffs, sense, rhs, name=name)
    model.set_objective(scan_terms(obj_text))
    return model


# -- fixed-column MPS -----------------------------------------------------

def write_mps(model: MilpModel) -> str:
    """Fixed-column MPS with 8-character mangled names.

    A leading comment block maps every mangled name back to its audit name,
    one per line: ``* X x0000001 = <name>`` (columns) / ``* C`` (rows).
    """
    vnames = list(model.variables)
    rnames = [r.name for r in model.rows]
    vmap = {n: f"x{i + 1:07d}" for i, n in enumerate(vnames)}
    rmap = {n: f"c{i + 1:07d}" for i, n in enumerate(rnames)}

    def card(f1: str, f2: str = "", f3: str = "", f4: str = "",
             f5: str = "", f6: str = "") -> str:
        line = f" {f1:<2} {f2:<8}  {f3:<8}  {f4:<12}   {f5:<8}  {f6:<12}"
        return line.rstrip()

    out = [f"* {model.name}: fixed-column MPS export", "* name map:"]
    for n in vnames:
        out.append(f"* X {vmap[n]} = {n}")
    for n in rnames:
        out.append(f"* C {rmap[n]} = {n}")
    out.append(f"NAME          {model.name.upper()[:8]}")
    out.append("ROWS")
    out.append(card("N", "COST"))
    for row in model.rows:
        tag = {"<=": "L", "=": "E", ">=": "G"}[row.sense]
        out.append(card(tag, rmap[row.name]))
    out.append("COLUMNS")
    in_int = False
    marker = 0
    for n in vnames:
        v = model.variables[n]
        wants_int = v.kind != CONTINUOUS
        if wants_int != in_int:
            marker += 1
            tag = "'INTORG'" if wants_int else "'INTEND'"
            out.append(f"    MARK{marker:04d}    'MARKER'                 {tag}")
            in_int = wants_int
        entries = []
        if n in model.objective:
            entries.append(("COST", model.objective[n]))
        for row in model.rows:
            if n in row.coeffs:
                entries.append((rmap[row.name], row.coeffs[n]))
        if not entries:
            entries.append(("COST", 0.0))
        for i in range(0, len(entries), 2):
            pair = entries[i:i + 2]
            if len(pair) == 2:
                (r1, c1), (r2, c2) = pair
                out.append(card("", vmap[n], r1, _fmt_mps(c1), r2, _fmt_mps(c2)))
            else:
                (r1, c1), = pair
                out.append(card("", vmap[n], r1, _fmt_mps(c1)))
    if in_int:
        marker += 1
        out.append(f"    MARK{marker:04d}    'MARKER'                 'INTEND'")
    out.append("RHS")
    for row in model.rows:
        if row.rhs != 0.0:
            out.append(card("", "RHS", rmap[row.name], _fmt_mps(row.rhs)))
    out.append("BOUNDS")
    for n in vnames:
        v = model.variables[n]
        mn = vmap[n]
        if v.lo == v.hi:
            out.append(card("FX", "BND", mn, _fmt_mps(v.lo)))
            continue
        if v.kind == BINARY and v.lo == 0.0 and v.hi == 1.0:
            out.append(card("BV", "BND", mn))
            continue
        if v.lo == -math.inf:
            out.append(card("MI", "BND", mn))
        elif v.lo != 0.0:
            out.append(card("LO", "BND", mn, _fmt_mps(v.lo)))
        if v.hi != math.inf:
            out.append(card("UP", "BND", mn, _fmt_mps(v.hi)))
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def parse_mps(text: str) -> MilpModel:
    """Parse fixed-column MPS as produced by write_mps (free token spacing
    tolerated). Mangled names are restored through the comment name map when
    present."""
    name_map: dict[str, str] = {}
    section = None
    rows_spec: list[tuple[str, str]] = []
    col_entries: dict[str, list[tuple[str, float]]] = {}
    col_order: list[str] = []
    int_cols: set[str] = set()
    rhs_map: dict[str, float] = {}
    bounds_spec: list[tuple[str, str, Optional[float]]] = []
    obj_row = None
    in_int = False

    for raw in text.splitlines():
        if raw.startswith("*"):
            toks = raw[1:].split()
            if len(toks) == 4 and toks[0] in ("X", "C") and toks[2] == "=":
                name_map[toks[1]] = toks[3]
            continue
        if not raw.strip():
            continue
        head = raw.split()
        if raw[0] not in (" ", "\t"):
            section = head[0].upper()
            continue
        toks = head
        if section == "ROWS":
            tag, rname = toks[0].upper(), toks[1]
            if tag == "N":
                if obj_row is None:
                    obj_row = rname
            else:
                rows_spec.append((tag, rname))
        elif section == "COLUMNS":
            if len(toks) >= 3 and toks[1] == "'MARKER'":
                in_int = toks[2] == "'INTORG'"
                continue
            col = toks[0]
            if col not in col_entries:
                col_entries[col] = []
                col_order.append(col)
                if in_int:
                    int_cols.add(col)
            pairs = toks[1:]
            for i in range(0, len(pairs), 2):
                col_entries[col].append((pairs[i], float(pairs[i + 1])))
        elif section == "RHS":
            pairs = toks[1:]
            for i in range(0, len(pairs), 2):
                rhs_map[pairs[i]] = float(pairs[i + 1])
        elif section == "BOUNDS":
            tag = toks[0].upper()
            col = toks[2]
            val = float(toks[3]) if len(toks) > 3 else None
            bounds_spec.append((tag, col, val))

    model = MilpModel()
    restore = lambda n: name_map.get(n, n)
    lo: dict[str, float] = {}
    hi: dict[str, float] = {}
    fixed: dict[str, float] = {}
    explicit_bv: set[str] = set()
    for tag, col, val in bounds_spec:
        if tag == "FX":
            fixed[col] = val
        elif tag == "UP":
            hi[col] = val
        elif tag == "LO":
            lo[col] = val
        elif tag == "MI":
            lo[col] = -math.inf
        elif tag == "BV":
            explicit_bv.add(col)
        else:
            raise ModelError(f"unknown bound tag {tag}")
    for col in col_order:
        name = restore(col)
        if col in explicit_bv:
            kind, l, h = BINARY, 0.0, 1.0
        else:
            kind = INTEGER if col in int_cols else CONTINUOUS
            l = lo.get(col, 0.0)
            h = hi.get(col, math.inf)
            if col in fixed:
                l = h = fixed[col]
            if kind == INTEGER and l >= 0.0 and h <= 1.0 and not (l == h):
                kind = BINARY
        model.add_variable(name, kind, l, h)
    sense_of = {"L": "<=", "E": "=", "G": ">="}
    row_coeffs: dict[str, dict[str, float]] = {r: {} for _, r in rows_spec}
    objective: dict[str, float] = {}
    for col in col_order:
        for rname, coef in col_entries[col]:
            if rname == obj_row:
                if coef != 0.0:
                    objective[restore(col)] = coef
            else:
                row_coeffs[rname][restore(col)] = coef
    for tag, rname in rows_spec:
        model.add_row(row_coeffs[rname], sense_of[tag], rhs_map.get(rname, 0.0),
                      name=restore(rname))
    model.set_objective(objective)
    return model


def export_model(model: MilpModel, fmt: str) -> str:
    """Render the model as LP or MPS text."""
    fmt = fmt.upper()
    if fmt == "LP":
        return write_lp(model)
    if fmt == "MPS":
        return write_mps(model)
    raise ModelError(f"unknown export format {fmt!r} (expected LP or MPS)")
