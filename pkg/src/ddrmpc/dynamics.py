"""Root-zone water balance: one-step update, horizon stacking, constraints.

The soil moisture model is scalar and linear::

    x[t+1] = (1 - c) x[t] + u[t] - e[t] + p[t]

with ``v = p_hat - e_hat`` the known forecast input and ``w = xi - eta`` the
forecast-error disturbance.  States are never clamped here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WaterBalanceParams:
    c: float = 0.025
    horizon_steps: int = 8
    period_hours: float = 6.0

    def __post_init__(self):
        if not (0.0 <= self.c < 1.0):
            raise ValueError(f"decay factor c must lie in [0, 1), got {self.c}")
        if int(self.horizon_steps) != self.horizon_steps or self.horizon_steps < 1:
            raise ValueError("horizon_steps must be a positive integer")
        if not self.period_hours > 0:
            raise ValueError("period_hours must be positive")

    @property
    def a(self) -> float:
        return 1.0 - self.c


def step(x: float, u: float, e: float, p: float, params: WaterBalanceParams) -> float:
    """Advance soil moisture (mm) by one period."""
    vals = (x, u, e, p)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite input to step: {vals}")
    if u < 0 or e < 0 or p < 0:
        raise ValueError("irrigation, evapotranspiration and precipitation must be >= 0")
    return (1.0 - params.c) * x + u - e + p


@dataclass(frozen=True)
class StackedDynamics:
    """Maps ``(x0, u, v, w)`` over a horizon of H steps to ``x[0..H]``.

    ``A_stack`` is ``(H+1, 1)``; the three ``B*_stack`` matrices are
    ``(H+1, H)`` and identical for the water balance (all B's equal 1).
    """

    params: WaterBalanceParams
    A_stack: np.ndarray
    Bu_stack: np.ndarray
    Bv_stack: np.ndarray
    Bw_stack: np.ndarray

    @property
    def H(self) -> int:
        return self.Bu_stack.shape[1]


def build_stacked(params: WaterBalanceParams, horizon: int | None = None) -> StackedDynamics:
    H = params.horizon_steps if horizon is None else int(horizon)
    if H < 1:
        raise ValueError("horizon must be >= 1")
    a = 1.0 - params.c
    t = np.arange(H + 1)
    A = (a ** t).reshape(-1, 1)
    B = np.zeros((H + 1, H))
    for row in range(1, H + 1):
        j = np.arange(row)
        B[row, j] = a ** (row - 1 - j)
    for mat in (A, B):
        mat.setflags(write=False)
    return StackedDynamics(params, A, B, B.copy(), B.copy())


def predict_trajectory(dyn: StackedDynamics, x0: float, u_seq, v_seq, w_seq) -> np.ndarray:
    H = dyn.H
    seqs = [np.asarray(s, float).ravel() for s in (u_seq, v_seq, w_seq)]
    for name, s in zip(("u", "v", "w"), seqs):
        if s.size != H:
            raise ValueError(f"{name}_seq has length {s.size}, expected {H}")
    u, v, w = seqs
    return dyn.A_stack[:, 0] * x0 + dyn.Bu_stack @ u + dyn.Bv_stack @ v + dyn.Bw_stack @ w


@dataclass(frozen=True)
class ConstraintSet:
    """Lower soil-moisture bound and irrigation capacity.

    ``x_max`` is an optional upper moisture bound; the case study leaves it
    unset and the robust programs ignore it when ``None``.
    """

    x_min: float = 30.0
    u_max: float = 10.0
    x_max: float | None = None

    def __post_init__(self):
        if self.x_min < 0:
            raise ValueError("x_min must be >= 0")
        if not self.u_max > 0:
            raise ValueError("u_max must be > 0")
        if self.x_max is not None and self.x_max <= self.x_min:
            raise ValueError("x_max must exceed x_min")

    def stacked(self, H: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(F_x, f_x, F_u, f_u)`` for a horizon of H steps.

        ``F_x`` acts on the full trajectory ``x[0..H]`` and constrains
        ``x[1..H]``; ``F_u`` acts on ``u[0..H-1]`` with rows ``[1, -1]`` per
        period.
        """
        F_x = np.hstack([np.zeros((H, 1)), -np.eye(H)])
        f_x = np.full(H, -self.x_min)
        F_u = np.kron(np.eye(H), np.array([[1.0], [-1.0]]))
        f_u = np.tile([self.u_max, 0.0], H)
        return F_x, f_x, F_u, f_u
