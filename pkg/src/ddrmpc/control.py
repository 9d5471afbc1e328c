"""Irrigation controllers behind one ``decide`` interface.

Every controller maps the current soil moisture and the forecast vectors
``(e_hat, p_hat)`` to a single irrigation amount in ``[0, u_max]``.  The
MPC variants solve a finite-horizon program each call and apply its first
input only.
"""

from __future__ import annotations

import logging
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import ConstraintSet, StackedDynamics, WaterBalanceParams, build_stacked
from .lpformat import write_lp
from .reform import (
    LIFTED_ORDER,
    SLACK_PENALTY,
    Channel,
    CostSpec,
    RobustProgram,
    _add_cost,
    assemble_adf_program,
    assemble_gadf_program,
    tril_selector,
    uncertain_rows,
)
from .solver import DEFAULT_TOL, ProgramBuilder, ProgramDescription, Solution, solve
from .uncertainty import GuaranteeBudget, LearnedSets

log = logging.getLogger(__name__)

OPEN_LOOP_PERIOD = 28
U_TOL = 1e-6


class ControllerError(RuntimeError):
    """Raised when an MPC program stays unsolved after the soft fallback."""

    def __init__(self, message: str, dump_path: str | None = None):
        self.dump_path = dump_path
        super().__init__(message if dump_path is None else f"{message} (program: {dump_path})")


# ---------------------------------------------------------------- configs

@dataclass(frozen=True)
class OpenLoopConfig:
    a: float = 0.07
    b: float = 6.4
    kind: str = field(default="open_loop", init=False)

    def __post_init__(self):
        _nonneg(self, "a", "b")


@dataclass(frozen=True)
class RuleBasedConfig:
    threshold: float = 33.0
    dose: float = 3.0
    kind: str = field(default="rule_based", init=False)

    def __post_init__(self):
        _nonneg(self, "threshold", "dose")


@dataclass(frozen=True)
class CempcConfig:
    cost: CostSpec = CostSpec("nominal")
    kind: str = field(default="cempc", init=False)


@dataclass(frozen=True)
class NormRmpcConfig:
    omega: float = 2.0
    cost: CostSpec = CostSpec("nominal")
    kind: str = field(default="norm_rmpc", init=False)

    def __post_init__(self):
        _nonneg(self, "omega")


@dataclass(frozen=True)
class SpTrackingConfig:
    setpoint: float = 33.0
    kind: str = field(default="sp_tracking", init=False)

    def __post_init__(self):
        _nonneg(self, "setpoint")


@dataclass(frozen=True)
class DdrmpcConfig:
    budget: GuaranteeBudget = GuaranteeBudget()
    policy: str = "gadf"
    cost: CostSpec = CostSpec("expected")
    kind: str = field(default="ddrmpc", init=False)

    def __post_init__(self):
        if self.policy not in ("gadf", "adf"):
            raise ValueError(f"policy must be 'gadf' or 'adf', got {self.policy!r}")


ControllerConfig = (OpenLoopConfig | RuleBasedConfig | CempcConfig | NormRmpcConfig
                    | SpTrackingConfig | DdrmpcConfig)

CONFIG_TYPES = {c.__dataclass_fields__["kind"].default: c for c in
                (OpenLoopConfig, RuleBasedConfig, CempcConfig, NormRmpcConfig,
                 SpTrackingConfig, DdrmpcConfig)}


def _nonneg(obj, *names):
    for name in names:
        val = getattr(obj, name)
        if not (math.isfinite(val) and val >= 0):
            raise ValueError(f"{type(obj).__name__}.{name} must be finite and >= 0, got {val}")


def config_from_dict(d: dict) -> ControllerConfig:
    """Build a controller config from ``{"kind": ..., **params}``."""
    d = dict(d)
    kind = d.pop("kind")
    if kind not in CONFIG_TYPES:
        raise ValueError(f"unknown controller kind {kind!r}; choose from {sorted(CONFIG_TYPES)}")
    if "cost" in d:
        d["cost"] = CostSpec(**d["cost"])
    if "budget" in d:
        d["budget"] = GuaranteeBudget(**d["budget"])
    return CONFIG_TYPES[kind](**d)


# ------------------------------------------------------- nominal programs

@dataclass
class NominalProgram:
    """A deterministic program whose first ``H`` policy variables are the offsets."""

    program: ProgramDescription
    H: int
    z_cols: np.ndarray
    Gh: np.ndarray
    slack_cols: np.ndarray

    @property
    def n_variables(self) -> int:
        return self.program.n

    @property
    def n_constraints(self) -> int:
        return self.program.n_eq + self.program.n_ub

    def solve(self, backend: str = "clarabel", tol: float = DEFAULT_TOL) -> Solution:
        return solve(self.program, backend=backend, tol=tol)

    def inputs(self, x: np.ndarray) -> np.ndarray:
        return self.Gh @ np.asarray(x)[self.z_cols]

    def first_input(self, x: np.ndarray) -> float:
        return float(self.inputs(x)[0])

    def slack_used(self, x: np.ndarray) -> float:
        return float(np.sum(np.asarray(x)[self.slack_cols])) if self.slack_cols.size else 0.0


def _check_forecast(dyn: StackedDynamics, x0: float, v) -> np.ndarray:
    v = np.asarray(v, float).ravel()
    if v.size != dyn.H:
        raise ValueError(f"forecast input has length {v.size}, expected {dyn.H}")
    if not (np.all(np.isfinite(v)) and math.isfinite(x0)):
        raise ValueError("state and forecasts must be finite")
    return v


def _emit_rows(b: ProgramBuilder, rows, z_cols, soft: bool, extra=None):
    """Add ``d'z (+ extra) <= rhs - d0`` for every row; returns slack columns."""
    soft_rows = [r for r in rows if soft and r.soft]
    slack = b.add_variables("slack", len(soft_rows), lb=0.0) if soft_rows else np.zeros(0, int)
    slack_of = {r.label: slack[i] for i, r in enumerate(soft_rows)}
    for r in rows:
        terms = [(z_cols, r.dz[None, :])]
        if extra is not None:
            terms += extra(r)
        if r.label in slack_of:
            terms.append(([slack_of[r.label]], [[-1.0]]))
        b.add_rows(terms, "ub", [r.rhs - r.d0])
    if slack.size:
        b.add_linear_cost(slack, np.full(slack.size, SLACK_PENALTY))
    return slack


def build_cempc_program(dyn: StackedDynamics, cons: ConstraintSet, x0: float, v_forecast,
                        cost: CostSpec = CostSpec("nominal"), soft: bool = False) -> NominalProgram:
    """Certainty-equivalent program: the nominal trajectory must respect the bounds."""
    v = _check_forecast(dyn, x0, v_forecast)
    H = dyn.H
    b = ProgramBuilder("cempc")
    z = b.add_variables("u", H)
    Gh = np.eye(H)
    rows = uncertain_rows(dyn, cons, x0, v, Gh, [])
    slack = _emit_rows(b, rows, z, soft)
    _add_cost(b, z, Gh, [], dyn, x0, v, CostSpec("nominal", cost.terminal_weight), None, H,
              LIFTED_ORDER)
    return NominalProgram(b.build(), H, z, Gh, slack)


def build_norm_rmpc_program(dyn: StackedDynamics, cons: ConstraintSet, x0: float, v_forecast,
                            omega: float, cost: CostSpec = CostSpec("nominal"),
                            soft: bool = False) -> NominalProgram:
    """Affine feedback on ``w`` robust against the 1-norm ball ``||w||_1 <= omega``.

    The worst case of ``a'w`` over the ball is ``omega ||a||_inf``, modelled
    with one bound variable per row.  The cost is evaluated at ``w = 0``.
    """
    if not (math.isfinite(omega) and omega >= 0):
        raise ValueError("omega must be finite and >= 0")
    v = _check_forecast(dyn, x0, v_forecast)
    H = dyn.H
    T = tril_selector(H)
    nt = T.shape[2]
    gains = np.concatenate([np.zeros((H, H, H)), T], axis=2)
    Gh = np.hstack([np.eye(H), np.zeros((H, nt))])
    ch = Channel("w", gains, np.eye(H))
    rows = uncertain_rows(dyn, cons, x0, v, Gh, [ch])
    b = ProgramBuilder("norm_rmpc")
    z = b.add_variables("pol", H + nt)
    unc = [r for r in rows if r.has("w")]
    tau = b.add_variables("tau", len(unc), lb=0.0) if unc else np.zeros(0, int)
    tau_of = {}
    for i, r in enumerate(unc):
        G, g = r.coefs["w"]
        one = -np.ones((H, 1))
        b.add_rows([(z, G), ([tau[i]], one)], "ub", -g)
        b.add_rows([(z, -G), ([tau[i]], one)], "ub", g)
        tau_of[r.label] = tau[i]
    slack = _emit_rows(b, rows, z, soft,
                       lambda r: [([tau_of[r.label]], [[omega]])] if r.label in tau_of else [])
    _add_cost(b, z, Gh, [], dyn, x0, v, CostSpec("nominal", cost.terminal_weight), None, H,
              LIFTED_ORDER)
    return NominalProgram(b.build(), H, z, Gh, slack)


def build_sp_tracking_program(dyn: StackedDynamics, x0: float, v_forecast, setpoint: float,
                              u_max: float = 10.0) -> NominalProgram:
    """Least-squares tracking of ``setpoint`` by the nominal states ``x[1..H]``."""
    v = _check_forecast(dyn, x0, v_forecast)
    H = dyn.H
    b = ProgramBuilder("sp_tracking")
    z = b.add_variables("u", H, 0.0, u_max)
    Bu = dyn.Bu_stack[1:]
    resid0 = dyn.A_stack[1:, 0] * x0 + dyn.Bv_stack[1:] @ v - setpoint
    b.add_quadratic_cost(z, 2.0 * Bu.T @ Bu)
    b.add_linear_cost(z, 2.0 * Bu.T @ resid0)
    b.constant += float(resid0 @ resid0)
    return NominalProgram(b.build(), H, z, np.eye(H), np.zeros(0, int))


# ------------------------------------------------------------ controllers

@dataclass
class Decision:
    u: float
    status: str = "ok"
    solve_time: float = 0.0
    slack: float = 0.0
    n_variables: int = 0
    n_constraints: int = 0


def _leading_finite(e_hat, p_hat) -> int:
    ok = np.isfinite(e_hat) & np.isfinite(p_hat)
    return int(np.argmin(ok)) if not ok.all() else ok.size


class Controller:
    """Base class: validates inputs and enforces ``0 <= u <= u_max`` on output."""

    name = "controller"

    def __init__(self, params: WaterBalanceParams, cons: ConstraintSet):
        self.params = params
        self.cons = cons

    def reset(self) -> None:
        pass

    def decide(self, x_now: float, e_hat, p_hat, period_index: int) -> Decision:
        e_hat = np.asarray(e_hat, float).ravel()
        p_hat = np.asarray(p_hat, float).ravel()
        if not math.isfinite(x_now):
            raise ValueError("current soil moisture must be finite")
        if np.any(e_hat < 0) or np.any(p_hat < 0):
            raise ValueError("forecasts must be >= 0")
        dec = self._decide(float(x_now), e_hat, p_hat, int(period_index))
        u = dec.u
        assert -U_TOL <= u <= self.cons.u_max + U_TOL, f"{self.name} returned u={u}"
        dec.u = float(min(max(u, 0.0), self.cons.u_max))
        return dec

    def _decide(self, x, e_hat, p_hat, k) -> Decision:
        raise NotImplementedError


class OpenLoop(Controller):
    """Weekly dose ``max(b - a x, 0)`` fixed at the start of every 28-period block."""

    name = "open_loop"

    def __init__(self, cfg: OpenLoopConfig, params, cons):
        super().__init__(params, cons)
        self.cfg = cfg
        self._dose: float | None = None

    def reset(self) -> None:
        self._dose = None

    def dose_for(self, x: float) -> float:
        return min(max(self.cfg.b - self.cfg.a * x, 0.0), self.cons.u_max)

    def _decide(self, x, e_hat, p_hat, k):
        if self._dose is None or k % OPEN_LOOP_PERIOD == 0:
            self._dose = self.dose_for(x)
        return Decision(self._dose)


class RuleBased(Controller):
    """Irrigate ``dose`` whenever moisture is at or below ``threshold``."""

    name = "rule_based"

    def __init__(self, cfg: RuleBasedConfig, params, cons):
        super().__init__(params, cons)
        self.cfg = cfg

    def _decide(self, x, e_hat, p_hat, k):
        return Decision(min(self.cfg.dose, self.cons.u_max) if x <= self.cfg.threshold else 0.0)


class _MpcController(Controller):
    """Shared receding-horizon logic: build, solve, soft fallback, first input."""

    def __init__(self, params, cons, tol: float = DEFAULT_TOL, backend: str = "clarabel", dump_dir: str | None = None):
        super().__init__(params, cons)
        self.tol = tol
        self.backend = backend
        self.dump_dir = dump_dir
        self._dyn_cache: dict[int, StackedDynamics] = {}

    def dyn(self, H: int) -> StackedDynamics:
        if H not in self._dyn_cache:
            self._dyn_cache[H] = build_stacked(self.params, H)
        return self._dyn_cache[H]

    def _prepare(self, e_hat, p_hat):
        """Truncate to the leading finite forecast steps; returns ``(e, p, n_active)``."""
        H = min(self.params.horizon_steps, _leading_finite(e_hat, p_hat))
        return e_hat[:H], p_hat[:H], H

    def _build(self, x, e_hat, p_hat, n_act: int, soft: bool):
        raise NotImplementedError

    def _dump(self, prog) -> str:
        d = Path(self.dump_dir or tempfile.gettempdir())
        d.mkdir(parents=True, exist_ok=True)
        path = d / f"{self.name}_failed_{time.strftime('%Y%m%d-%H%M%S')}.lp"
        path.write_text(write_lp(prog.program))
        return str(path)

    def _decide(self, x, e_hat, p_hat, k):
        e_hat, p_hat, n_act = self._prepare(e_hat, p_hat)
        if n_act == 0:
            raise ValueError("no finite forecast step available")
        t0 = time.perf_counter()
        prog = self._build(x, e_hat, p_hat, n_act, soft=False)
        sol = prog.solve(self.backend, self.tol)
        status = "ok"
        if not sol.ok:
            log.warning("%s: robust program %s at period %d; retrying with soft state bounds",
                        self.name, sol.status, k)
            prog = self._build(x, e_hat, p_hat, n_act, soft=True)
            sol = prog.solve(self.backend, self.tol)
            status = "soft"
            if not sol.ok:
                raise ControllerError(f"{self.name}: program {sol.status} after soft fallback",
                                      self._dump(prog))
        elapsed = time.perf_counter() - t0
        u = prog.first_input(sol.x)
        if -U_TOL <= u < 0 or self.cons.u_max < u <= self.cons.u_max + U_TOL:
            u = min(max(u, 0.0), self.cons.u_max)
        return Decision(u, status, elapsed, prog.slack_used(sol.x),
                        prog.n_variables, prog.n_constraints)


class Cempc(_MpcController):
    name = "cempc"

    def __init__(self, cfg: CempcConfig, params, cons, **kw):
        super().__init__(params, cons, **kw)
        self.cfg = cfg

    def _build(self, x, e_hat, p_hat, n_act, soft):
        return build_cempc_program(self.dyn(e_hat.size), self.cons, x, p_hat - e_hat,
                                   self.cfg.cost, soft)


class NormRmpc(_MpcController):
    name = "norm_rmpc"

    def __init__(self, cfg: NormRmpcConfig, params, cons, **kw):
        super().__init__(params, cons, **kw)
        self.cfg = cfg

    def _build(self, x, e_hat, p_hat, n_act, soft):
        return build_norm_rmpc_program(self.dyn(e_hat.size), self.cons, x, p_hat - e_hat,
                                       self.cfg.omega, self.cfg.cost, soft)


class SpTracking(_MpcController):
    name = "sp_tracking"

    def __init__(self, cfg: SpTrackingConfig, params, cons, **kw):
        super().__init__(params, cons, **kw)
        self.cfg = cfg

    def _build(self, x, e_hat, p_hat, n_act, soft):
        return build_sp_tracking_program(self.dyn(e_hat.size), x, p_hat - e_hat,
                                         self.cfg.setpoint, self.cons.u_max)


class Ddrmpc(_MpcController):
    """Robust MPC over the learned evapotranspiration and precipitation sets.

    When fewer than H forecast steps are available the program keeps the
    full-dimensional sets but only constrains and costs the leading steps;
    states after them are unconstrained, so the padded forecasts are inert.
    """

    name = "ddrmpc"

    def __init__(self, cfg: DdrmpcConfig, sets: LearnedSets, params, cons, **kw):
        super().__init__(params, cons, **kw)
        if sets.horizon != params.horizon_steps:
            raise ValueError(f"sets have dimension {sets.horizon}, horizon is "
                             f"{params.horizon_steps}")
        self.cfg = cfg
        self.sets = sets
        self.name = f"ddrmpc_{cfg.policy}"

    def _prepare(self, e_hat, p_hat):
        H = self.params.horizon_steps
        n_act = min(H, _leading_finite(e_hat, p_hat))
        e_pad = np.zeros(H)
        p_pad = np.zeros(H)
        e_pad[:n_act] = e_hat[:n_act]
        p_pad[:n_act] = np.minimum(p_hat[:n_act], self.sets.p_max)
        return e_pad, p_pad, n_act

    def _build(self, x, e_hat, p_hat, n_act, soft) -> RobustProgram:
        H = self.params.horizon_steps
        assemble = assemble_gadf_program if self.cfg.policy == "gadf" else assemble_adf_program
        return assemble(self.dyn(H), self.cons, self.sets.eta, self.sets.conditional(p_hat),
                        x, p_hat - e_hat, self.cfg.cost, moments=self.sets.moments, soft=soft,
                        n_active=n_act)


def make_controller(cfg: ControllerConfig, params: WaterBalanceParams, cons: ConstraintSet,
                    sets: LearnedSets | None = None, **kw) -> Controller:
    if isinstance(cfg, OpenLoopConfig):
        return OpenLoop(cfg, params, cons)
    if isinstance(cfg, RuleBasedConfig):
        return RuleBased(cfg, params, cons)
    if isinstance(cfg, CempcConfig):
        return Cempc(cfg, params, cons, **kw)
    if isinstance(cfg, NormRmpcConfig):
        return NormRmpc(cfg, params, cons, **kw)
    if isinstance(cfg, SpTrackingConfig):
        return SpTracking(cfg, params, cons, **kw)
    if isinstance(cfg, DdrmpcConfig):
        if sets is None:
            raise ValueError("DDRMPC needs learned uncertainty sets")
        return Ddrmpc(cfg, sets, params, cons, **kw)
    raise TypeError(f"unsupported controller config {type(cfg).__name__}")
