"""Backend-agnostic description and solution of sparse LPs / convex QPs.

Programs have the form::

    minimize    0.5 x'Px + q'x + constant
    subject to  A_eq x  = b_eq
                A_ub x <= b_ub
                lb <= x <= ub

Two backends are provided: ``"clarabel"`` (interior point, LP and QP) and
``"highs"`` (scipy's HiGHS wrapper, LP only).  Everything that builds an
optimization problem in this package goes through :func:`solve`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DEFAULT_TOL = 1e-8
RESIDUAL_LIMIT = 1e-7
PSD_FLOOR = -1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"


class ProgramError(ValueError):
    """Raised when a program description is malformed."""


def _as_csr(mat, n: int) -> sp.csr_matrix:
    if mat is None:
        return sp.csr_matrix((0, n))
    return sp.csr_matrix(mat, dtype=float)


@dataclass
class ProgramDescription:
    n: int
    lb: np.ndarray
    ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    P: sp.csc_matrix | None = None
    q: np.ndarray | None = None
    constant: float = 0.0
    var_names: list[str] | None = None
    name: str = "program"

    def __post_init__(self):
        n = int(self.n)
        self.n = n
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).copy()
        self.A_eq = _as_csr(self.A_eq, n)
        self.A_ub = _as_csr(self.A_ub, n)
        self.b_eq = np.asarray(self.b_eq if self.b_eq is not None else [], float).ravel()
        self.b_ub = np.asarray(self.b_ub if self.b_ub is not None else [], float).ravel()
        self.q = np.zeros(n) if self.q is None else np.asarray(self.q, float).ravel()
        if self.P is not None:
            self.P = sp.csc_matrix(self.P, dtype=float)
            if self.P.nnz == 0:
                self.P = None
        self.validate()

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_ub(self) -> int:
        return self.A_ub.shape[0]

    @property
    def is_lp(self) -> bool:
        return self.P is None

    def validate(self) -> None:
        n = self.n
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ProgramError("bounds must have length n")
        if np.any(self.lb > self.ub):
            raise ProgramError("lower bound exceeds upper bound")
        if self.A_eq.shape[1] != n or self.A_ub.shape[1] != n:
            raise ProgramError("constraint matrices must have n columns")
        if self.A_eq.shape[0] != self.b_eq.size or self.A_ub.shape[0] != self.b_ub.size:
            raise ProgramError("right-hand side length mismatch")
        if self.q.shape != (n,):
            raise ProgramError("linear objective must have length n")
        if not (np.all(np.isfinite(self.b_eq)) and np.all(np.isfinite(self.b_ub))):
            raise ProgramError("right-hand sides must be finite")
        if self.var_names is not None and len(self.var_names) != n:
            raise ProgramError("var_names must have length n")
        if self.P is not None:
            if self.P.shape != (n, n):
                raise ProgramError("quadratic term must be n x n")
            if abs(self.P - self.P.T).max() > 1e-9 * max(1.0, abs(self.P).max()):
                raise ProgramError("quadratic term must be symmetric")
            # only the coupled sub-block needs an eigenvalue check
            idx = np.unique(self.P.nonzero()[0])
            sub = self.P[idx][:, idx].toarray()
            scale = max(1.0, np.abs(sub).max())
            if np.linalg.eigvalsh(sub).min() < PSD_FLOOR * scale:
                raise ProgramError("quadratic term is not positive semidefinite")

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, float)
        val = float(self.q @ x) + self.constant
        if self.P is not None:
            val += 0.5 * float(x @ (self.P @ x))
        return val

    def residual(self, x: np.ndarray) -> float:
        """Largest relative violation of equalities, inequalities and bounds."""
        x = np.asarray(x, float)
        worst = 0.0
        if self.n_eq:
            r = np.abs(self.A_eq @ x - self.b_eq)
            worst = max(worst, float(np.max(r / (1.0 + np.abs(self.b_eq)))))
        if self.n_ub:
            r = np.maximum(self.A_ub @ x - self.b_ub, 0.0)
            worst = max(worst, float(np.max(r / (1.0 + np.abs(self.b_ub)))))
        if self.n:
            lb_ok = np.isfinite(self.lb)
            ub_ok = np.isfinite(self.ub)
            lo = np.where(lb_ok, self.lb - x, 0.0) / (1.0 + np.abs(np.where(lb_ok, self.lb, 0.0)))
            hi = np.where(ub_ok, x - self.ub, 0.0) / (1.0 + np.abs(np.where(ub_ok, self.ub, 0.0)))
            worst = max(worst, float(np.max(lo)), float(np.max(hi)))
        return worst


@dataclass
class Solution:
    status: str
    x: np.ndarray | None
    objective: float
    solve_time: float
    residual: float = np.nan
    backend: str = ""
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class ProgramBuilder:
    """Incrementally collect variables and sparse constraint rows.

    Constraint rows are added as a list of ``(columns, coefficients)``
    terms, where ``coefficients`` has one column per entry of ``columns``.
    """

    def __init__(self, name: str = "program"):
        self.name = name
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._names: list[str] = []
        self.n = 0
        self._rows = {"eq": [], "ub": []}
        self._rhs = {"eq": [], "ub": []}
        self._m = {"eq": 0, "ub": 0}
        self._q: list[tuple[np.ndarray, np.ndarray]] = []
        self._P: list[tuple[np.ndarray, np.ndarray]] = []
        self.constant = 0.0

    def add_variables(self, name: str, n: int, lb=-np.inf, ub=np.inf) -> np.ndarray:
        idx = np.arange(self.n, self.n + n)
        self._lb.append(np.broadcast_to(np.asarray(lb, float), (n,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, float), (n,)).copy())
        self._names.extend(f"{name}_{i}" for i in range(n))
        self.n += n
        return idx

    def add_rows(self, terms, sense: str, rhs) -> np.ndarray:
        rhs = np.atleast_1d(np.asarray(rhs, float))
        m = rhs.size
        start = self._m[sense]
        for cols, coef in terms:
            cols = np.asarray(cols)
            block = sp.coo_matrix(coef if sp.issparse(coef) else np.atleast_2d(np.asarray(coef, float)))
            if block.shape != (m, cols.size):
                raise ProgramError(f"term shape {block.shape} does not match ({m}, {cols.size})")
            self._rows[sense].append((block.row + start, cols[block.col], block.data))
        self._rhs[sense].append(rhs)
        self._m[sense] += m
        return np.arange(start, start + m)

    def add_linear_cost(self, cols, coef) -> None:
        self._q.append((np.asarray(cols), np.asarray(coef, float)))

    def add_quadratic_cost(self, cols, mat) -> None:
        """Add ``0.5 * x[cols]' mat x[cols]`` to the objective."""
        self._P.append((np.asarray(cols), np.asarray(mat, float)))

    def _matrix(self, sense: str) -> tuple[sp.csr_matrix, np.ndarray]:
        parts = self._rows[sense]
        m = self._m[sense]
        if not parts:
            return sp.csr_matrix((m, self.n)), np.zeros(m)
        r = np.concatenate([p[0] for p in parts])
        c = np.concatenate([p[1] for p in parts])
        d = np.concatenate([p[2] for p in parts])
        mat = sp.csr_matrix((d, (r, c)), shape=(m, self.n))
        return mat, np.concatenate(self._rhs[sense])

    def build(self) -> ProgramDescription:
        A_eq, b_eq = self._matrix("eq")
        A_ub, b_ub = self._matrix("ub")
        q = np.zeros(self.n)
        for cols, coef in self._q:
            np.add.at(q, cols, coef)
        P = None
        if self._P:
            rows, cols, data = [], [], []
            for idx, mat in self._P:
                rr, cc = np.meshgrid(idx, idx, indexing="ij")
                rows.append(rr.ravel())
                cols.append(cc.ravel())
                data.append(mat.ravel())
            P = sp.csc_matrix(
                (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.n, self.n),
            )
            P = 0.5 * (P + P.T)
        return ProgramDescription(
            n=self.n,
            lb=np.concatenate(self._lb) if self._lb else np.zeros(0),
            ub=np.concatenate(self._ub) if self._ub else np.zeros(0),
            A_eq=A_eq,
            b_eq=b_eq,
            A_ub=A_ub,
            b_ub=b_ub,
            P=P,
            q=q,
            constant=self.constant,
            var_names=list(self._names),
            name=self.name,
        )


def _solve_clarabel(prog: ProgramDescription, tol: float, max_iter: int):
    import clarabel

    n = prog.n
    fin_lb = np.flatnonzero(np.isfinite(prog.lb))
    fin_ub = np.flatnonzero(np.isfinite(prog.ub))
    eye = sp.identity(n, format="csr")
    A = sp.vstack(
        [prog.A_eq, prog.A_ub, -eye[fin_lb], eye[fin_ub]], format="csc"
    )
    b = np.concatenate([prog.b_eq, prog.b_ub, -prog.lb[fin_lb], prog.ub[fin_ub]])
    cones = []
    if prog.n_eq:
        cones.append(clarabel.ZeroConeT(prog.n_eq))
    n_nonneg = prog.n_ub + fin_lb.size + fin_ub.size
    if n_nonneg:
        cones.append(clarabel.NonnegativeConeT(n_nonneg))
    P = prog.P if prog.P is not None else sp.csc_matrix((n, n))
    P = sp.triu(P, format="csc")

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_ktratio = min(1e-6, tol * 1e2)
    settings.max_iter = max_iter
    settings.presolve_enable = True
    solver = clarabel.DefaultSolver(P, prog.q, A, b, cones, settings)
    res = solver.solve()
    status = str(res.status)
    x = np.asarray(res.x, float)
    if status in ("Solved", "AlmostSolved"):
        return OPTIMAL, x, status
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return INFEASIBLE, None, status
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        return UNBOUNDED, None, status
    return NUMERICAL_FAILURE, x, status


def _solve_highs(prog: ProgramDescription, tol: float, max_iter: int):
    from scipy.optimize import linprog

    if not prog.is_lp:
        raise ProgramError("the highs backend only accepts linear programs")
    res = linprog(
        prog.q,
        A_ub=prog.A_ub if prog.n_ub else None,
        b_ub=prog.b_ub if prog.n_ub else None,
        A_eq=prog.A_eq if prog.n_eq else None,
        b_eq=prog.b_eq if prog.n_eq else None,
        bounds=np.column_stack([prog.lb, prog.ub]),
        method="highs",
        options={
            "primal_feasibility_tolerance": max(tol, 1e-10),
            "dual_feasibility_tolerance": max(tol, 1e-10),
        },
    )
    if res.status == 0:
        return OPTIMAL, np.asarray(res.x, float), res.message
    if res.status == 2:
        return INFEASIBLE, None, res.message
    if res.status == 3:
        return UNBOUNDED, None, res.message
    return NUMERICAL_FAILURE, None, res.message


BACKENDS = {"clarabel": _solve_clarabel, "highs": _solve_highs}


def solve(
    program: ProgramDescription,
    backend: str = "clarabel",
    tol: float = DEFAULT_TOL,
    max_iter: int = 200,
) -> Solution:
    """Solve ``program`` and certify the returned point.

    A point reported optimal by the backend is downgraded to
    ``numerical-failure`` when its relative primal residual exceeds
    ``RESIDUAL_LIMIT``.  Backend exceptions are caught and reported the
    same way; the call never raises for numerical reasons.
    """
    if backend not in BACKENDS:
        raise ProgramError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}")
    t0 = time.perf_counter()
    try:
        status, x, msg = BACKENDS[backend](program, tol, max_iter)
    except ProgramError:
        raise
    except Exception as exc:  # backend crash: report, never abort
        return Solution(NUMERICAL_FAILURE, None, np.nan, time.perf_counter() - t0,
                        backend=backend, message=f"{type(exc).__name__}: {exc}")
    elapsed = time.perf_counter() - t0
    if status == OPTIMAL:
        resid = program.residual(x)
        obj = program.objective(x)
        if resid > RESIDUAL_LIMIT or not np.isfinite(obj):
            return Solution(NUMERICAL_FAILURE, x, obj, elapsed, resid, backend,
                            f"{msg}; residual {resid:.3e} exceeds {RESIDUAL_LIMIT:g}")
        return Solution(OPTIMAL, x, obj, elapsed, resid, backend, str(msg))
    return Solution(status, x, np.nan, elapsed, backend=backend, message=str(msg))
