"""CPLEX-style LP text export and import.

Only the subset needed for round trips is supported: a minimization
objective with an optional ``[ ... ] / 2`` quadratic part and a constant,
linear ``<=``/``>=``/``=`` rows, and explicit bounds for every variable.
Variable names must match ``[A-Za-z_][A-Za-z0-9_.]*`` and must not start
with ``e``/``E`` (ambiguous with exponents in some readers).
"""

from __future__ import annotations

import re

import numpy as np
import scipy.sparse as sp

from .solver import ProgramDescription, ProgramError

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_TOKEN_RE = re.compile(
    r"\s*(<=|>=|=<|=>|=|\[|\]|\^|\*|/|:|[+-]|"
    r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[A-Za-z_][A-Za-z0-9_.]*)"
)
_WRAP = 8  # terms per output line


def _fmt(v: float) -> str:
    return repr(float(v))


def _safe_names(program: ProgramDescription) -> list[str]:
    names = program.var_names or [f"x{i}" for i in range(program.n)]
    out = []
    seen = set()
    for i, nm in enumerate(names):
        if not _NAME_RE.match(nm) or nm[0] in "eE" or nm.lower() in ("inf", "infinity", "free"):
            nm = f"x_{i}_{nm}" if _NAME_RE.match(f"x_{nm}") else f"x{i}"
        if nm in seen:
            nm = f"{nm}__{i}"
        seen.add(nm)
        out.append(nm)
    return out


def _terms(coefs, names, first: bool = True) -> list[str]:
    parts = []
    for k, (c, nm) in enumerate(zip(coefs, names)):
        sign = "-" if c < 0 else "+"
        if first and k == 0:
            parts.append(f"{'-' if c < 0 else ''}{_fmt(abs(c))} {nm}")
        else:
            parts.append(f"{sign} {_fmt(abs(c))} {nm}")
    return parts


def _wrap(parts: list[str]) -> str:
    lines = [" ".join(parts[i:i + _WRAP]) for i in range(0, len(parts), _WRAP)]
    return "\n   ".join(lines) if lines else "0"


def write_lp(program: ProgramDescription) -> str:
    names = _safe_names(program)
    out = [f"\\ {program.name}", "Minimize"]
    nz = np.flatnonzero(program.q)
    parts = _terms(program.q[nz], [names[i] for i in nz])
    if program.P is not None:
        P = sp.triu(program.P, format="coo")
        quad = []
        for i, j, v in zip(P.row, P.col, P.data):
            if v == 0:
                continue
            if i == j:
                quad.append((v, f"{names[i]} ^ 2"))
            else:
                quad.append((2.0 * v, f"{names[i]} * {names[j]}"))
        if quad:
            q_parts = _terms([c for c, _ in quad], [t for _, t in quad])
            parts.append("+ [ " + _wrap(q_parts) + " ] / 2")
    if program.constant:
        parts.append(("- " if program.constant < 0 else "+ ") + _fmt(abs(program.constant)))
    out.append(" obj: " + (_wrap(parts) if parts else "0 " + names[0] if names else "0"))

    out.append("Subject To")
    for prefix, mat, rhs, sense in (("e", program.A_eq, program.b_eq, "="),
                                    ("c", program.A_ub, program.b_ub, "<=")):
        mat = sp.csr_matrix(mat)
        for r in range(mat.shape[0]):
            lo, hi = mat.indptr[r], mat.indptr[r + 1]
            cols, vals = mat.indices[lo:hi], mat.data[lo:hi]
            keep = vals != 0
            cols, vals = cols[keep], vals[keep]
            body = _wrap(_terms(vals, [names[c] for c in cols])) if cols.size else f"0 {names[0]}"
            label = "r" + prefix + str(r)
            out.append(f" {label}: {body} {sense} {_fmt(rhs[r])}")

    out.append("Bounds")
    for nm, lo, hi in zip(names, program.lb, program.ub):
        if np.isinf(lo) and np.isinf(hi):
            out.append(f" {nm} free")
        else:
            lo_s = "-inf" if np.isinf(lo) else _fmt(lo)
            hi_s = "+inf" if np.isinf(hi) else _fmt(hi)
            out.append(f" {lo_s} <= {nm} <= {hi_s}")
    out.append("End")
    return "\n".join(out) + "\n"


def _tokens(text: str) -> list[str]:
    toks = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            raise ProgramError(f"cannot tokenize LP text near {text[pos:pos + 20]!r}")
        toks.append(m.group(1))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return toks


def _is_number(tok: str) -> bool:
    return bool(re.match(r"^(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$", tok))


class _Expr:
    def __init__(self):
        self.lin: dict[str, float] = {}
        self.quad: dict[tuple[str, str], float] = {}
        self.const = 0.0


def _parse_expr(toks: list[str], i: int, stop: set[str]) -> tuple[_Expr, int]:
    expr = _Expr()
    sign, coef = 1.0, None
    while i < len(toks) and toks[i] not in stop:
        t = toks[i]
        if t in "+-":
            sign = sign * (-1.0 if t == "-" else 1.0)
            i += 1
        elif _is_number(t):
            nxt = toks[i + 1] if i + 1 < len(toks) else None
            if nxt is not None and not _is_number(nxt) and nxt not in "+-[]" and nxt not in stop and nxt != ":":
                coef = float(t)
                i += 1
            else:
                expr.const += sign * float(t)
                sign, coef = 1.0, None
                i += 1
        elif t == "[":
            i += 1
            qsign, qcoef = 1.0, None
            while toks[i] != "]":
                u = toks[i]
                if u in "+-":
                    qsign *= -1.0 if u == "-" else 1.0
                    i += 1
                elif _is_number(u):
                    qcoef = float(u)
                    i += 1
                else:
                    c = qsign * (1.0 if qcoef is None else qcoef)
                    if toks[i + 1] == "^":
                        key = (u, u)
                        i += 3
                    elif toks[i + 1] == "*":
                        key = tuple(sorted((u, toks[i + 2])))
                        i += 3
                    else:
                        raise ProgramError("linear term inside quadratic bracket")
                    expr.quad[key] = expr.quad.get(key, 0.0) + sign * c
                    qsign, qcoef = 1.0, None
            i += 1
            if i + 1 < len(toks) and toks[i] == "/":
                div = float(toks[i + 1])
                expr.quad = {k: v / div for k, v in expr.quad.items()}
                i += 2
            sign, coef = 1.0, None
        else:
            c = sign * (1.0 if coef is None else coef)
            expr.lin[t] = expr.lin.get(t, 0.0) + c
            sign, coef = 1.0, None
            i += 1
    return expr, i


def read_lp(text: str) -> ProgramDescription:
    """Parse LP text written by :func:`write_lp` (or the same subset)."""
    lines = [ln.split("\\", 1)[0] for ln in text.splitlines()]
    sections: dict[str, list[str]] = {}
    current = None
    for ln in lines:
        key = ln.strip().lower()
        if key in ("minimize", "minimise", "min", "maximize", "maximise", "max"):
            if key.startswith("max"):
                raise ProgramError("maximization is not supported")
            current = "obj"
        elif key in ("subject to", "such that", "st", "s.t."):
            current = "st"
        elif key in ("bounds", "bound"):
            current = "bounds"
        elif key == "end":
            current = None
        elif current is not None:
            sections.setdefault(current, []).append(ln)

    names: list[str] = []
    index: dict[str, int] = {}

    def col(nm: str) -> int:
        if nm not in index:
            index[nm] = len(names)
            names.append(nm)
        return index[nm]

    # register columns in Bounds order first so a round trip keeps indices
    for ln in sections.get("bounds", []):
        for tok in ln.replace("<=", " ").replace(">=", " ").split():
            if _NAME_RE.match(tok) and tok.lower() not in ("free", "inf", "infinity"):
                col(tok)
                break

    otoks = _tokens(" ".join(sections.get("obj", [])))
    if len(otoks) >= 2 and otoks[1] == ":":
        otoks = otoks[2:]
    obj, _ = _parse_expr(otoks, 0, set())
    for nm in obj.lin:
        col(nm)
    for a, b in obj.quad:
        col(a)
        col(b)

    rows = []  # (sense, {name: coef}, rhs)
    stoks = _tokens(" ".join(sections.get("st", []))) if sections.get("st") else []
    i = 0
    while i < len(stoks):
        if i + 1 < len(stoks) and stoks[i + 1] == ":":
            i += 2
        expr, i = _parse_expr(stoks, i, {"<=", ">=", "=<", "=>", "="})
        sense = stoks[i]
        i += 1
        rsign = 1.0
        while stoks[i] in "+-":
            rsign *= -1.0 if stoks[i] == "-" else 1.0
            i += 1
        rhs = rsign * float(stoks[i]) - expr.const
        i += 1
        for nm in expr.lin:
            col(nm)
        rows.append(({"=<": "<=", "=>": ">="}.get(sense, sense), expr.lin, rhs))

    bounds: dict[str, tuple[float, float]] = {}
    for ln in sections.get("bounds", []):
        t = ln.replace("<=", " <= ").replace(">=", " >= ").split()
        if not t:
            continue
        val = lambda s: float(s.replace("infinity", "inf").replace("+inf", "inf"))  # noqa: E731
        if len(t) == 2 and t[1].lower() == "free":
            bounds[t[0]] = (-np.inf, np.inf)
            col(t[0])
        elif len(t) == 5 and t[1] == "<=" and t[3] == "<=":
            bounds[t[2]] = (val(t[0]), val(t[4]))
            col(t[2])
        elif len(t) == 3 and t[1] in ("<=", ">="):
            nm, v = t[0], val(t[2])
            lo, hi = bounds.get(nm, (0.0, np.inf))
            bounds[nm] = (v, hi) if t[1] == ">=" else (lo, v)
            col(nm)
        else:
            raise ProgramError(f"unsupported bound line: {ln.strip()!r}")

    n = len(names)
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    for nm, (lo, hi) in bounds.items():
        lb[index[nm]], ub[index[nm]] = lo, hi

    def mat(selected):
        r, c, d = [], [], []
        for k, (_, lin, _) in enumerate(selected):
            for nm, v in lin.items():
                r.append(k)
                c.append(index[nm])
                d.append(v)
        return sp.csr_matrix((d, (r, c)), shape=(len(selected), n))

    eq = [row for row in rows if row[0] == "="]
    ub_rows = [row if row[0] == "<=" else ("<=", {k: -v for k, v in row[1].items()}, -row[2])
               for row in rows if row[0] != "="]
    q = np.zeros(n)
    for nm, v in obj.lin.items():
        q[index[nm]] = v
    P = None
    if obj.quad:
        # objective term v x_a x_b maps to 0.5 x'Px with P_ab = P_ba = v, P_aa = 2v
        r, c, d = [], [], []
        for (a, b), v in obj.quad.items():
            ia, ib = index[a], index[b]
            if ia == ib:
                r.append(ia), c.append(ia), d.append(2.0 * v)
            else:
                r.extend([ia, ib]), c.extend([ib, ia]), d.extend([v, v])
        P = sp.csc_matrix((d, (r, c)), shape=(n, n))
    return ProgramDescription(
        n=n, lb=lb, ub=ub,
        A_eq=mat(eq), b_eq=np.array([row[2] for row in eq]),
        A_ub=mat(ub_rows), b_ub=np.array([row[2] for row in ub_rows]),
        P=P, q=q, constant=obj.const, var_names=names,
    )
