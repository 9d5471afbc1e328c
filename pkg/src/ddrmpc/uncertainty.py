"""Learned uncertainty sets for forecast errors and their calibration.

Evapotranspiration errors ``eta`` live in an SVC polytope.  Precipitation
errors ``xi`` are generated from a normalized primitive ``xibar in [-1, 1]^H``
through forecast-dependent scalings::

    xi = C(p_hat) max(xibar, 0) - D(p_hat) max(-xibar, 0)
    C = diag(p_max - p_hat),  D = diag(p_hat)

so every member satisfies ``-p_hat <= xi <= p_max - p_hat``.  The
disturbance set is the Minkowski sum ``W = D_xi(p_hat) + (-D_eta)``.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .solver import ProgramBuilder, solve
from .svc import SvcModel, SvcTrainConfig, svc_distance, train_svc

log = logging.getLogger(__name__)

BOUND_TOL = 1e-9


def scaling_matrices(phat, p_max: float) -> tuple[np.ndarray, np.ndarray]:
    phat = np.asarray(phat, float).ravel()
    if np.any(phat < -BOUND_TOL) or np.any(phat > p_max + BOUND_TOL):
        bad = np.flatnonzero((phat < 0) | (phat > p_max)).tolist()
        raise ValueError(f"forecasts outside [0, p_max={p_max}] at components {bad}")
    phat = np.clip(phat, 0.0, p_max)
    return np.diag(p_max - phat), np.diag(phat)


def realize_xi(xibar, phat, p_max: float) -> np.ndarray:
    xibar = np.asarray(xibar, float)
    if np.any(np.abs(xibar) > 1.0 + BOUND_TOL):
        raise ValueError("normalized errors must lie in [-1, 1]")
    phat = np.asarray(phat, float)
    return (p_max - phat) * np.maximum(xibar, 0.0) - phat * np.maximum(-xibar, 0.0)


def normalize_xi(xi, phat, p_max: float) -> np.ndarray:
    """Inverse of :func:`realize_xi`; works row-wise on 2-D input."""
    xi = np.asarray(xi, float)
    phat = np.broadcast_to(np.asarray(phat, float), xi.shape)
    upper = p_max - phat
    bad = (xi < -phat - BOUND_TOL * (1 + phat)) | (xi > upper + BOUND_TOL * (1 + upper))
    if np.any(bad):
        where = np.argwhere(bad).tolist()
        raise ValueError(f"precipitation errors outside [-p_hat, p_max - p_hat] at {where}")
    out = np.zeros_like(xi)
    pos = xi >= 0
    up_ok = pos & (upper > 0)
    out[up_ok] = xi[up_ok] / upper[up_ok]
    neg = ~pos
    out[neg] = xi[neg] / phat[neg]
    return np.clip(out, -1.0, 1.0)


def min_calib_size(epsilon: float, beta: float) -> int:
    if not (0 < epsilon < 1 and 0 < beta < 1):
        raise ValueError("epsilon and beta must lie in (0, 1)")
    ratio = math.log(beta) / math.log(1.0 - epsilon)
    # guard ceil against 1-ulp noise on exact integers
    return max(1, math.ceil(ratio - 1e-12))


@dataclass(frozen=True)
class SvcSet:
    model: SvcModel

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def theta(self) -> float:
        return self.model.theta

    def distance(self, w):
        return svc_distance(self.model, w)

    def contains(self, w, tol: float = 1e-9):
        return self.model.contains(w, tol)


def add_svc_constraint(builder: ProgramBuilder, point_cols, model: SvcModel, tag: str,
                       offset_col=None, lifted: bool = False):
    """Add ``sum_i alpha_i ||Q(p - w_i)||_1 <= theta (+ offset)`` with epigraph rows.

    ``point_cols`` are the builder columns holding the point ``p``; with
    ``lifted=True`` they hold ``(xi+, xi-)`` and ``p = xi+ - xi-``.  When
    ``offset_col`` is given, the radius is ``theta + x[offset_col]``.
    """
    H = model.dim
    Q = model.q_matrix
    n_sv = model.n_sv
    rho = builder.add_variables(f"{tag}_rho", n_sv * H, lb=0.0)
    QW = (model.sv_points @ Q.T).ravel()
    eye = np.eye(n_sv * H)
    Qrep = np.tile(np.hstack([Q, -Q]) if lifted else Q, (n_sv, 1))
    builder.add_rows([(point_cols, Qrep), (rho, -eye)], "ub", QW)
    builder.add_rows([(point_cols, -Qrep), (rho, -eye)], "ub", -QW)
    terms = [(rho, np.repeat(model.alphas, H).reshape(1, -1))]
    if offset_col is not None:
        terms.append(([offset_col], [[-1.0]]))
    builder.add_rows(terms, "ub", [model.theta])
    return rho


@dataclass(frozen=True)
class ConditionalSet:
    p_max: float
    phat: np.ndarray
    inner: SvcSet

    def __post_init__(self):
        object.__setattr__(self, "phat", np.asarray(self.phat, float).ravel())
        scaling_matrices(self.phat, self.p_max)
        if self.phat.size != self.inner.dim:
            raise ValueError("forecast length does not match the inner set dimension")

    @property
    def C(self) -> np.ndarray:
        return scaling_matrices(self.phat, self.p_max)[0]

    @property
    def D(self) -> np.ndarray:
        return scaling_matrices(self.phat, self.p_max)[1]

    def contains(self, xi, tol: float = 1e-7) -> bool:
        """Decide membership with an LP over the lifted components."""
        xi = np.asarray(xi, float).ravel()
        H = self.phat.size
        if np.any(xi < -self.phat - tol) or np.any(xi > self.p_max - self.phat + tol):
            return False
        b = ProgramBuilder("xi_membership")
        xp = b.add_variables("xip", H, 0.0, 1.0)
        xm = b.add_variables("xim", H, 0.0, 1.0)
        gap = b.add_variables("gap", 1, 0.0)
        C, D = self.C, self.D
        b.add_rows([(xp, C), (xm, -D)], "eq", xi)
        add_svc_constraint(b, np.concatenate([xp, xm]), self.inner.model, "xb",
                           offset_col=gap[0], lifted=True)
        b.add_linear_cost(gap, [1.0])
        sol = solve(b.build(), tol=1e-10)
        if not sol.ok:
            return False
        return sol.objective <= tol * max(1.0, self.inner.theta)


@dataclass(frozen=True)
class GuaranteeBudget:
    epsilon: float = 0.05
    beta: float = 1e-4
    epsilon1: float | None = None
    epsilon2: float | None = None
    beta1: float | None = None
    beta2: float | None = None

    def __post_init__(self):
        if self.epsilon1 is None and self.epsilon2 is None:
            object.__setattr__(self, "epsilon1", self.epsilon / 2)
            object.__setattr__(self, "epsilon2", self.epsilon / 2)
        elif self.epsilon1 is None:
            object.__setattr__(self, "epsilon1", self.epsilon - self.epsilon2)
        elif self.epsilon2 is None:
            object.__setattr__(self, "epsilon2", self.epsilon - self.epsilon1)
        if self.beta1 is None and self.beta2 is None:
            object.__setattr__(self, "beta1", self.beta / 2)
            object.__setattr__(self, "beta2", self.beta / 2)
        elif self.beta1 is None:
            object.__setattr__(self, "beta1", self.beta - self.beta2)
        elif self.beta2 is None:
            object.__setattr__(self, "beta2", self.beta - self.beta1)
        vals = (self.epsilon, self.beta, self.epsilon1, self.epsilon2, self.beta1, self.beta2)
        if not all(0 < v < 1 for v in vals):
            raise ValueError(f"all guarantee parameters must lie in (0, 1): {vals}")
        if not math.isclose(self.epsilon1 + self.epsilon2, self.epsilon, rel_tol=1e-12):
            raise ValueError("epsilon1 + epsilon2 must equal epsilon")
        if not math.isclose(self.beta1 + self.beta2, self.beta, rel_tol=1e-12):
            raise ValueError("beta1 + beta2 must equal beta")


@dataclass(frozen=True)
class CalibrationResult:
    theta_calibrated: float
    n_calib_used: int
    n_calib_required: int
    guarantee_met: bool
    theta_original: float = math.nan
    epsilon: float = math.nan
    beta: float = math.nan


def calibrate(svc_set: SvcSet | SvcModel, calib_samples, epsilon: float, beta: float
              ) -> CalibrationResult:
    """Reset the radius to the largest calibration-sample distance."""
    model = svc_set.model if isinstance(svc_set, SvcSet) else svc_set
    S = np.asarray(calib_samples, float)
    if S.size == 0:
        raise ValueError("calibration set is empty")
    S = S.reshape(-1, model.dim)
    theta = float(np.max(svc_distance(model, S)))
    n_req = min_calib_size(epsilon, beta)
    return CalibrationResult(theta, S.shape[0], n_req, S.shape[0] >= n_req,
                             model.theta, epsilon, beta)


def membership_w(eta_set: SvcSet, xi_set: ConditionalSet, w, tol: float = 1e-7) -> bool:
    """True iff ``w = xi - eta`` for some ``eta`` in ``eta_set``, ``xi`` in ``xi_set``.

    Solved as an LP that minimizes a common radius relaxation; membership
    holds when the relaxation is zero within ``tol``.
    """
    w = np.asarray(w, float).ravel()
    H = xi_set.phat.size
    if eta_set.dim != H or w.size != H:
        raise ValueError("dimension mismatch between sets and w")
    b = ProgramBuilder("w_membership")
    eta = b.add_variables("eta", H)
    xp = b.add_variables("xip", H, 0.0, 1.0)
    xm = b.add_variables("xim", H, 0.0, 1.0)
    gap = b.add_variables("gap", 1, 0.0)
    b.add_rows([(xp, xi_set.C), (xm, -xi_set.D), (eta, -np.eye(H))], "eq", w)
    add_svc_constraint(b, eta, eta_set.model, "eta", offset_col=gap[0])
    add_svc_constraint(b, np.concatenate([xp, xm]), xi_set.inner.model, "xb",
                       offset_col=gap[0], lifted=True)
    b.add_linear_cost(gap, [1.0])
    sol = solve(b.build(), tol=1e-10)
    if not sol.ok:
        raise RuntimeError(f"membership LP failed: {sol.status} ({sol.message})")
    scale = max(1.0, eta_set.theta, xi_set.inner.theta)
    return sol.objective <= tol * scale


def lifted_components(xibar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xibar = np.asarray(xibar, float)
    return np.maximum(xibar, 0.0), np.maximum(-xibar, 0.0)


def second_moments(eta: np.ndarray, xibar: np.ndarray) -> np.ndarray:
    """Empirical ``E[z z']`` for ``z = [xi+, xi-, eta, 1]`` over paired windows."""
    xp, xm = lifted_components(xibar)
    Z = np.hstack([xp, xm, np.asarray(eta, float), np.ones((xp.shape[0], 1))])
    M = Z.T @ Z / Z.shape[0]
    return 0.5 * (M + M.T)


@dataclass
class LearnedSets:
    eta: SvcSet
    xibar: SvcSet
    p_max: float
    budget: GuaranteeBudget
    moments: np.ndarray
    report: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.eta.dim

    def conditional(self, phat) -> ConditionalSet:
        return ConditionalSet(self.p_max, np.asarray(phat, float), self.xibar)

    def to_dict(self) -> dict:
        return {
            "eta_model": self.eta.model.to_dict(),
            "xibar_model": self.xibar.model.to_dict(),
            "p_max": self.p_max,
            "budget": asdict(self.budget),
            "moments": self.moments.tolist(),
            "report": self.report,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnedSets":
        return cls(
            eta=SvcSet(SvcModel.from_dict(d["eta_model"])),
            xibar=SvcSet(SvcModel.from_dict(d["xibar_model"])),
            p_max=float(d["p_max"]),
            budget=GuaranteeBudget(**d["budget"]),
            moments=np.asarray(d["moments"], float),
            report=d.get("report", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "LearnedSets":
        return cls.from_dict(json.loads(Path(path).read_text()))


def split_windows(n: int, n_calib: int, horizon: int, split: str = "chronological",
                  seed: int = 0, starts=None, period=None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(train_idx, calib_idx)``.

    The chronological split takes the latest ``n_calib`` windows for
    calibration and drops training windows that overlap the first
    calibration window in time.
    """
    if split == "chronological":
        calib = np.arange(n - n_calib, n)
        if starts is not None and period is not None and n_calib > 0:
            first = starts[n - n_calib]
            train = np.array([i for i in range(n - n_calib)
                              if starts[i] + (horizon - 1) * period < first], dtype=int)
        else:
            train = np.arange(max(0, n - n_calib - (horizon - 1)))
        return train, calib
    if split == "random":
        perm = np.random.default_rng(seed).permutation(n)
        return np.sort(perm[n_calib:]), np.sort(perm[:n_calib])
    raise ValueError(f"unknown split {split!r}")


def fit_uncertainty_sets(dataset, p_max: float = 50.0, budget: GuaranteeBudget = GuaranteeBudget(),
                         svc_config: SvcTrainConfig = SvcTrainConfig(),
                         split: str = "chronological", seed: int = 0,
                         min_train: int = 20, period=None) -> LearnedSets:
    """Train both SVC sets on early windows and calibrate on the latest ones."""
    N, H = dataset.eta_windows.shape
    xibar_all = normalize_xi(dataset.xi_windows, dataset.phat_windows, p_max)
    n_req = max(min_calib_size(budget.epsilon1, budget.beta1),
                min_calib_size(budget.epsilon2, budget.beta2))
    gap = H - 1 if split == "chronological" else 0
    n_calib = n_req
    if N - n_req - gap < min_train:
        n_calib = max(1, N - gap - min_train)
        warnings.warn(f"only {N} windows: calibrating on {n_calib} < required {n_req}; "
                      "the coverage guarantee is not met", stacklevel=2)
    train, calib = split_windows(N, n_calib, H, split, seed,
                                 dataset.starts or None, period)
    if train.size < 2:
        raise ValueError("not enough windows left for training")
    eta_model = train_svc(dataset.eta_windows[train], svc_config)
    xib_model = train_svc(xibar_all[train], svc_config)
    cal_eta = calibrate(eta_model, dataset.eta_windows[calib], budget.epsilon1, budget.beta1)
    cal_xib = calibrate(xib_model, xibar_all[calib], budget.epsilon2, budget.beta2)
    report = {
        "n_windows": int(N),
        "n_train": int(train.size),
        "n_calib": int(calib.size),
        "split": split,
        "eta": asdict(cal_eta) | {"n_sv": eta_model.n_sv, "n_bsv": int(eta_model.bsv_index.size)},
        "xibar": asdict(cal_xib) | {"n_sv": xib_model.n_sv, "n_bsv": int(xib_model.bsv_index.size)},
        "guarantee_met": bool(cal_eta.guarantee_met and cal_xib.guarantee_met),
        "budget": asdict(budget),
    }
    log.info("trained sets: %s", report)
    return LearnedSets(
        eta=SvcSet(eta_model.with_theta(cal_eta.theta_calibrated)),
        xibar=SvcSet(xib_model.with_theta(cal_xib.theta_calibrated)),
        p_max=float(p_max),
        budget=budget,
        moments=second_moments(dataset.eta_windows[train], xibar_all[train]),
        report=report,
    )
