"""Closed-loop receding-horizon simulation, metrics and grid sweeps."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .control import ControllerConfig, ControllerError, config_from_dict, make_controller
from .dynamics import ConstraintSet, WaterBalanceParams
from .uncertainty import LearnedSets
from .weather import HargreavesParams, WeatherRecord, hargreaves_et

log = logging.getLogger(__name__)

CONSERVATION_TOL = 1e-8


@dataclass
class SimulationPlan:
    records: list[WeatherRecord]
    controllers: dict[str, ControllerConfig]
    params: WaterBalanceParams = WaterBalanceParams()
    cons: ConstraintSet = ConstraintSet()
    hargreaves: HargreavesParams = HargreavesParams()
    sets: LearnedSets | None = None
    x0: float = 40.0
    solver_tol: float = 1e-8

    def __post_init__(self):
        if not self.controllers:
            raise ValueError("a plan needs at least one controller")
        if len(self.records) < self.params.horizon_steps:
            raise ValueError("the weather series must cover at least H periods")
        if not (math.isfinite(self.x0) and self.x0 >= 0):
            raise ValueError("x0 must be finite and >= 0")


@dataclass
class ClosedLoopTrace:
    """Per-period log of one controller; ``x`` has one more entry than ``u``."""

    controller: str
    c: float
    timestamps: list
    x: np.ndarray
    u: np.ndarray
    e: np.ndarray
    p: np.ndarray
    e_hat: np.ndarray
    p_hat: np.ndarray
    clamp: np.ndarray
    status: list[str]
    solve_time: np.ndarray
    slack: np.ndarray
    error: str | None = None

    @property
    def n(self) -> int:
        return self.u.size

    def replay(self) -> np.ndarray:
        """States recomputed from the logged inputs, weather and clamp amounts."""
        x = np.empty(self.n + 1)
        x[0] = self.x[0]
        for t in range(self.n):
            x[t + 1] = (1 - self.c) * x[t] + self.u[t] - self.e[t] + self.p[t] + self.clamp[t]
        return x

    def conservation_gap(self) -> float:
        """``inflow - outflow - decay + clamp - (x_final - x_0)``; zero up to rounding."""
        lhs = (self.u.sum() + self.p.sum() - self.e.sum() - self.c * self.x[:-1].sum()
               + self.clamp.sum())
        return float(lhs - (self.x[-1] - self.x[0]))

    def to_rows(self) -> list[dict]:
        rows = []
        for t in range(self.n):
            rows.append({
                "controller": self.controller,
                "timestamp": self.timestamps[t].isoformat(),
                "x": repr(float(self.x[t])),
                "u": repr(float(self.u[t])),
                "e": repr(float(self.e[t])),
                "p": repr(float(self.p[t])),
                "x_next": repr(float(self.x[t + 1])),
                "clamp": repr(float(self.clamp[t])),
                "status": self.status[t],
                "solve_time": f"{self.solve_time[t]:.6f}",
                "slack": repr(float(self.slack[t])),
            })
        return rows


def realized_et(rec: WeatherRecord, hargreaves: HargreavesParams) -> float:
    if math.isfinite(rec.et_measured):
        return rec.et_measured
    return float(hargreaves_et(rec.t_measured, hargreaves))


def run_controller(plan: SimulationPlan, name: str, cfg: ControllerConfig) -> ClosedLoopTrace:
    P = plan.params
    H = P.horizon_steps
    ctrl = make_controller(cfg, P, plan.cons, plan.sets, tol=plan.solver_tol)
    n = len(plan.records)
    x = np.zeros(n + 1)
    x[0] = plan.x0
    u, e, p, clamp, st, sl = (np.zeros(n) for _ in range(6))
    e_hat = np.full((n, H), np.nan)
    p_hat = np.full((n, H), np.nan)
    status: list[str] = []
    error = None
    steps = n
    for k, rec in enumerate(plan.records):
        eh = np.full(H, np.nan)
        ph = np.full(H, np.nan)
        m = min(H, rec.horizon)
        eh[:m] = hargreaves_et(rec.t_forecast[:m], plan.hargreaves)
        ph[:m] = rec.p_forecast[:m]
        e_hat[k], p_hat[k] = eh, ph
        try:
            dec = ctrl.decide(x[k], eh, ph, k)
        except (ControllerError, ValueError, RuntimeError) as exc:
            error = f"period {k}: {exc}"
            log.error("%s stopped at %s", name, error)
            steps = k
            break
        u[k], st[k], sl[k] = dec.u, dec.solve_time, dec.slack
        status.append(dec.status)
        e[k] = realized_et(rec, plan.hargreaves)
        p[k] = rec.p_measured
        nxt = (1 - P.c) * x[k] + u[k] - e[k] + p[k]
        if nxt < 0:
            clamp[k] = -nxt
            nxt = 0.0
        x[k + 1] = nxt
    cut = slice(0, steps)
    return ClosedLoopTrace(name, P.c, [r.timestamp for r in plan.records[:steps]],
                           x[:steps + 1], u[cut], e[cut], p[cut], e_hat[cut], p_hat[cut],
                           clamp[cut], status, st[cut], sl[cut], error)


def run_closed_loop(plan: SimulationPlan) -> dict[str, ClosedLoopTrace]:
    """Simulate every controller of the plan over the whole weather series."""
    return {name: run_controller(plan, name, cfg) for name, cfg in plan.controllers.items()}


@dataclass
class ControllerMetrics:
    months: list[str]
    irrigation: list[float]
    loss: list[float]
    violation_pct: list[float]
    periods: list[int]
    total_irrigation: float
    total_loss: float
    violation_pct_total: float
    avg_solve_time: float
    max_solve_time: float
    clamp_events: int
    soft_fallbacks: int
    error: str | None = None


@dataclass
class MetricsReport:
    x_min: float
    controllers: dict[str, ControllerMetrics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min,
                "controllers": {k: asdict(v) for k, v in self.controllers.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(float(d["x_min"]),
                   {k: ControllerMetrics(**v) for k, v in d["controllers"].items()})

    def table(self, quantity: str) -> tuple[list[str], list[str], list[list[float]]]:
        """Months-by-controller table of ``irrigation``, ``loss`` or ``violation_pct``."""
        names = list(self.controllers)
        months = sorted({m for c in self.controllers.values() for m in c.months})
        body = []
        for m in months:
            row = []
            for nm in names:
                cm = self.controllers[nm]
                row.append(getattr(cm, quantity)[cm.months.index(m)] if m in cm.months
                           else math.nan)
            body.append(row)
        total_attr = {"irrigation": "total_irrigation", "loss": "total_loss",
                      "violation_pct": "violation_pct_total"}[quantity]
        body.append([getattr(self.controllers[nm], total_attr) for nm in names])
        return names, months + ["Total"], body

    def to_markdown(self) -> str:
        titles = {"irrigation": "Irrigation amount (mm)", "loss": "Runoff and percolation loss (mm)",
                  "violation_pct": "Probability of moisture below x_min (%)"}
        out = []
        for q, title in titles.items():
            names, rows, body = self.table(q)
            out.append(f"### {title}\n")
            out.append("| Month | " + " | ".join(names) + " |")
            out.append("|---" * (len(names) + 1) + "|")
            for r, vals in zip(rows, body):
                out.append(f"| {r} | " + " | ".join(f"{v:.2f}" for v in vals) + " |")
            out.append("")
        names = list(self.controllers)
        out.append("### Solver statistics\n")
        out.append("| Controller | Avg solve (s) | Max solve (s) | Soft fallbacks | Clamp events |")
        out.append("|---|---|---|---|---|")
        for nm in names:
            c = self.controllers[nm]
            out.append(f"| {nm} | {c.avg_solve_time:.3f} | {c.max_solve_time:.3f} | "
                       f"{c.soft_fallbacks} | {c.clamp_events} |")
        return "\n".join(out) + "\n"

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["quantity", "month"] + list(self.controllers))
            for q in ("irrigation", "loss", "violation_pct"):
                _, rows, body = self.table(q)
                for r, vals in zip(rows, body):
                    w.writerow([q, r] + [repr(float(v)) for v in vals])


def compute_metrics(trace: ClosedLoopTrace, x_min: float) -> ControllerMetrics:
    """Monthly irrigation, decay loss ``c x_t`` and share of periods with ``x_t < x_min``.

    A period belongs to the month of its start timestamp and is judged by
    its start-of-period moisture.
    """
    keys = [t.strftime("%Y-%m") for t in trace.timestamps]
    months = sorted(set(keys))
    xs = trace.x[:-1]
    irr, loss, vio, cnt = [], [], [], []
    for m in months:
        sel = np.array([k == m for k in keys])
        irr.append(float(trace.u[sel].sum()))
        loss.append(float(trace.c * xs[sel].sum()))
        vio.append(float(100.0 * np.count_nonzero(xs[sel] < x_min) / sel.sum()))
        cnt.append(int(sel.sum()))
    n = max(trace.n, 1)
    mpc = trace.solve_time[trace.solve_time > 0]
    return ControllerMetrics(
        months=months, irrigation=irr, loss=loss, violation_pct=vio, periods=cnt,
        total_irrigation=float(sum(irr)), total_loss=float(sum(loss)),
        violation_pct_total=float(100.0 * np.count_nonzero(xs < x_min) / n),
        avg_solve_time=float(mpc.mean()) if mpc.size else 0.0,
        max_solve_time=float(mpc.max()) if mpc.size else 0.0,
        clamp_events=int(np.count_nonzero(trace.clamp > 0)),
        soft_fallbacks=sum(s == "soft" for s in trace.status),
        error=trace.error,
    )


def metrics_report(traces: dict[str, ClosedLoopTrace], x_min: float) -> MetricsReport:
    return MetricsReport(x_min, {k: compute_metrics(t, x_min) for k, t in traces.items()})


def write_traces_csv(traces: dict[str, ClosedLoopTrace], path) -> None:
    rows = [r for t in traces.values() for r in t.to_rows()]
    if not rows:
        Path(path).write_text("")
        return
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def expand_grid(grid: dict[str, list]) -> list[dict]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must be nonempty in every parameter")
    keys = list(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def grid_sweep(kind: str, grid: dict[str, list], plan: SimulationPlan) -> list[dict]:
    """One closed-loop run per grid cell; failures are recorded, not raised."""
    out = []
    for cell in expand_grid(grid):
        row = {"kind": kind, **cell}
        try:
            cfg = config_from_dict({"kind": kind, **cell})
            trace = run_controller(plan, kind, cfg)
            m = compute_metrics(trace, plan.cons.x_min)
            row.update(violation_pct=m.violation_pct_total, total_irrigation=m.total_irrigation,
                       error=m.error or "")
        except (ValueError, TypeError) as exc:
            row.update(violation_pct=math.nan, total_irrigation=math.nan, error=str(exc))
        out.append(row)
    return out


def write_sweep_csv(rows: list[dict], path) -> None:
    keys = list(rows[0])
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def with_controllers(plan: SimulationPlan, controllers: dict) -> SimulationPlan:
    return replace(plan, controllers=controllers)
