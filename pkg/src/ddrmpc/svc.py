"""Support vector clustering with the weighted generalized intersection kernel.

The kernel is ``K(w, v) = delta - ||Q (w - v)||_1`` with ``Q`` the symmetric
inverse square root of the (ridge-regularized) sample covariance.  The
trained model describes the polytope

    { w : sum_{i in SV} alpha_i ||Q (w - w_i)||_1 <= theta }.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .solver import ProgramDescription, solve

log = logging.getLogger(__name__)

DELTA_FACTOR = 10.0
BSV_SPREAD_TOL = 1e-6


@dataclass(frozen=True)
class SvcTrainConfig:
    nu: float = 0.1
    delta: float | None = None
    covariance_ridge: float | None = None
    solver_tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.nu < 1.0:
            raise ValueError(f"nu must lie in (0, 1), got {self.nu}")
        if self.covariance_ridge is not None and self.covariance_ridge < 0:
            raise ValueError("covariance_ridge must be >= 0")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")


@dataclass(frozen=True)
class SvcModel:
    sv_points: np.ndarray
    alphas: np.ndarray
    q_matrix: np.ndarray
    theta: float
    sv_index: np.ndarray
    bsv_index: np.ndarray
    n_train: int
    delta: float
    config: SvcTrainConfig = SvcTrainConfig()

    @property
    def dim(self) -> int:
        return self.q_matrix.shape[0]

    @property
    def n_sv(self) -> int:
        return self.alphas.size

    @property
    def alpha_upper(self) -> float:
        return 1.0 / (self.n_train * self.config.nu)

    def distance(self, w) -> np.ndarray | float:
        return svc_distance(self, w)

    def contains(self, w, tol: float = 1e-9):
        return svc_distance(self, w) <= self.theta + tol

    def with_theta(self, theta: float) -> "SvcModel":
        return replace(self, theta=float(theta))

    def to_dict(self) -> dict:
        return {
            "sv_points": self.sv_points.tolist(),
            "alphas": self.alphas.tolist(),
            "q_matrix": self.q_matrix.tolist(),
            "theta": self.theta,
            "sv_index": self.sv_index.tolist(),
            "bsv_index": self.bsv_index.tolist(),
            "n_train": self.n_train,
            "delta": self.delta,
            "config": asdict(self.config),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvcModel":
        return cls(
            sv_points=np.asarray(d["sv_points"], float).reshape(len(d["alphas"]), -1),
            alphas=np.asarray(d["alphas"], float),
            q_matrix=np.asarray(d["q_matrix"], float),
            theta=float(d["theta"]),
            sv_index=np.asarray(d["sv_index"], int),
            bsv_index=np.asarray(d["bsv_index"], int),
            n_train=int(d["n_train"]),
            delta=float(d["delta"]),
            config=SvcTrainConfig(**d.get("config", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SvcModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def wgik(w, v, q_matrix, delta: float) -> float:
    w = np.asarray(w, float).ravel()
    v = np.asarray(v, float).ravel()
    Q = np.atleast_2d(np.asarray(q_matrix, float))
    if w.shape != v.shape or Q.shape != (w.size, w.size):
        raise ValueError("dimension mismatch in wgik")
    return float(delta - np.abs(Q @ (w - v)).sum())


def svc_distance(model: SvcModel, w, chunk: int = 4096):
    """Weighted 1-norm distance of ``w`` (or each row of ``w``) to the SVs."""
    w = np.asarray(w, float)
    single = w.ndim <= 1
    W = w.reshape(1, -1) if single else w
    if W.shape[1] != model.dim:
        raise ValueError(f"point dimension {W.shape[1]} != model dimension {model.dim}")
    Q = model.q_matrix
    Zs = model.sv_points @ Q.T
    out = np.empty(W.shape[0])
    for lo in range(0, W.shape[0], chunk):
        Z = W[lo:lo + chunk] @ Q.T
        out[lo:lo + chunk] = cdist(Z, Zs, "cityblock") @ model.alphas
    return float(out[0]) if single else out


def weighting_matrix(samples: np.ndarray, ridge: float | None) -> np.ndarray:
    """Symmetric inverse square root of the regularized sample covariance."""
    H = samples.shape[1]
    sigma = np.atleast_2d(np.cov(samples, rowvar=False))
    tr = float(np.trace(sigma))
    if tr == 0.0:
        return np.eye(H)
    if ridge is None:
        ridge = 1e-8 * tr / H
    evals, evecs = np.linalg.eigh(sigma + ridge * np.eye(H))
    if evals.min() <= 1e-12 * evals.max():
        raise ValueError(
            "sample covariance is rank-deficient even after the ridge; "
            "increase covariance_ridge"
        )
    Q = (evecs / np.sqrt(evals)) @ evecs.T
    return 0.5 * (Q + Q.T)


def _kkt_on_free(K, diag, upper, F, U):
    nf = F.size
    kkt = np.zeros((nf + 1, nf + 1))
    kkt[:nf, :nf] = 2.0 * K[np.ix_(F, F)]
    kkt[:nf, nf] = 1.0
    kkt[nf, :nf] = 1.0
    rhs = np.concatenate([diag[F] - 2.0 * upper * K[np.ix_(F, U)].sum(axis=1),
                          [1.0 - upper * U.size]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:nf], sol[nf]


def _polish(alpha: np.ndarray, K: np.ndarray, upper: float,
            max_rounds: int = 100) -> np.ndarray | None:
    """Refine the solver's multipliers to an exact KKT point of the dual QP.

    Starts from the active set suggested by ``alpha`` and runs primal-dual
    active-set rounds: free multipliers leaving the box are fixed at the
    violated bound, bound multipliers with a wrong-signed gradient are freed.
    Returns ``None`` when no consistent active set is found.
    """
    tau = 1e-6 * upper
    diag = np.diag(K)
    scale = max(1.0, np.abs(diag).max())
    gtol = 1e-9 * scale
    state = np.where(alpha < tau, -1, np.where(alpha > upper - tau, 1, 0))
    seen = set()
    for _ in range(max_rounds):
        key = state.tobytes()
        if key in seen:
            return None
        seen.add(key)
        F = np.flatnonzero(state == 0)
        U = np.flatnonzero(state == 1)
        if F.size == 0:
            return None
        vals, gamma = _kkt_on_free(K, diag, upper, F, U)
        lo = vals < -1e-13
        hi = vals > upper + 1e-13
        if lo.any() or hi.any():
            state[F[lo]] = -1
            state[F[hi]] = 1
            continue
        out = np.zeros_like(alpha)
        out[U] = upper
        out[F] = vals
        grad = 2.0 * K @ out - diag + gamma
        bad_lo = (state == -1) & (grad < -gtol)
        bad_up = (state == 1) & (grad > gtol)
        if not (bad_lo.any() or bad_up.any()):
            if np.abs(grad[F]).max(initial=0.0) > 1e-7 * scale:
                return None
            out = np.clip(out, 0.0, upper)
            dust = (out > 0) & (out < 1e-10 * upper)
            if dust.any():
                out[dust] = 0.0
                keep = (out > 0) & (out < upper)
                out[keep] += (1.0 - out.sum()) / max(1, np.count_nonzero(keep))
            return out
        state[bad_lo | bad_up] = 0
    return None


def solve_dual_qp(K: np.ndarray, nu: float, tol: float = 1e-10) -> np.ndarray:
    """Solve ``min a'Ka - diag(K)'a`` over ``0 <= a <= 1/(N nu)``, ``sum a = 1``."""
    N = K.shape[0]
    upper = 1.0 / (N * nu)
    prog = ProgramDescription(
        n=N,
        lb=np.zeros(N),
        ub=np.full(N, upper),
        A_eq=np.ones((1, N)),
        b_eq=np.array([1.0]),
        A_ub=None,
        b_ub=None,
        P=2.0 * K,
        q=-np.diag(K).copy(),
    )
    sol = solve(prog, tol=tol)
    if sol.x is None:
        raise RuntimeError(f"SVC dual QP failed: {sol.status} ({sol.message})")
    alpha = np.clip(sol.x, 0.0, upper)
    polished = _polish(alpha, K, upper)
    if polished is not None:
        return polished
    log.debug("active-set polish rejected; using interior-point multipliers")
    alpha[alpha < 1e-9 * upper] = 0.0
    return alpha / alpha.sum()


def train_svc(samples, config: SvcTrainConfig = SvcTrainConfig()) -> SvcModel:
    X = np.asarray(samples, float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    N, H = X.shape
    if N < 2:
        raise ValueError("train_svc needs at least 2 samples")
    if not np.all(np.isfinite(X)):
        raise ValueError("training samples must be finite")
    Q = weighting_matrix(X, config.covariance_ridge)
    Z = X @ Q.T
    D = cdist(Z, Z, "cityblock")
    dmax = float(D.max())
    upper = 1.0 / (N * config.nu)

    if dmax == 0.0:
        # all samples coincide: any feasible alpha is optimal, the set is the point
        alpha = np.full(N, 1.0 / N)
        delta = config.delta if config.delta is not None else 1.0
    else:
        delta = config.delta if config.delta is not None else DELTA_FACTOR * dmax
        if delta <= dmax:
            raise ValueError(f"delta={delta} must exceed the max pairwise distance {dmax}")
        alpha = solve_dual_qp(delta - D, config.nu, config.solver_tol)

    sv = np.flatnonzero(alpha > 0.0)
    tau = 1e-6 * upper
    bsv = np.flatnonzero((alpha > 0.0) & (alpha < upper - tau))
    dist_train = D[:, sv] @ alpha[sv]
    if bsv.size:
        vals = dist_train[bsv]
        spread = float(vals.max() - vals.min())
        if spread > BSV_SPREAD_TOL * max(1.0, float(vals.mean())):
            warnings.warn(f"BSV distances spread by {spread:.2e}; averaging", stacklevel=2)
        theta = float(vals.mean())
    else:
        warnings.warn("no bounded support vector; theta set to the max training distance",
                      stacklevel=2)
        theta = float(dist_train.max())
    return SvcModel(
        sv_points=X[sv].copy(),
        alphas=alpha[sv].copy(),
        q_matrix=Q,
        theta=theta,
        sv_index=sv,
        bsv_index=bsv,
        n_train=N,
        delta=float(delta),
        config=config,
    )
