"""Random problem instances shared by several test modules."""

from __future__ import annotations

import warnings

import numpy as np

from ddrmpc.svc import SvcModel, SvcTrainConfig, train_svc
from ddrmpc.uncertainty import GuaranteeBudget, LearnedSets, SvcSet, second_moments

import oracles


def random_q(rng, H):
    A = rng.normal(size=(H, H))
    S = A @ A.T + 0.5 * np.eye(H)
    ev, V = np.linalg.eigh(S)
    return (V / np.sqrt(ev)) @ V.T


def random_svc_model(rng, H, n, scale=1.0, unit_box=False) -> SvcModel:
    """A hand-made SVC polytope with a nonempty interior."""
    pts = rng.normal(size=(n, H)) * scale
    if unit_box:
        pts = np.clip(pts, -1.0, 1.0)
    alphas = rng.dirichlet(np.ones(n))
    Q = random_q(rng, H)
    d = np.array([oracles.svc_value(pts, alphas, Q, p) for p in pts])
    theta = float(rng.uniform(d.min(), 1.2 * d.max()))
    return SvcModel(pts, alphas, Q, theta, np.arange(n), np.arange(n), n, 100.0,
                    SvcTrainConfig())


def point_model(H, theta=0.0) -> SvcModel:
    """Single support vector at the origin with identity weighting."""
    return SvcModel(np.zeros((1, H)), np.ones(1), np.eye(H), float(theta), np.zeros(1, int),
                    np.zeros(1, int), 1, 1.0, SvcTrainConfig())


def error_samples(rng, n, H):
    """Correlated evapotranspiration errors and sparse normalized rain errors."""
    L = np.tril(rng.normal(scale=0.08, size=(H, H))) + 0.15 * np.eye(H)
    eta = rng.normal(size=(n, H)) @ L.T
    wet = rng.random((n, H)) < 0.2
    xib = np.where(wet, rng.uniform(-1, 1, (n, H)), rng.normal(scale=0.01, size=(n, H)))
    return eta, np.clip(xib, -1, 1)


def learned_sets(rng, H=4, n=80, nu=0.2, p_max=50.0) -> LearnedSets:
    warnings.simplefilter("ignore", UserWarning)
    eta, xib = error_samples(rng, n, H)
    cfg = SvcTrainConfig(nu=nu)
    me = train_svc(eta, cfg)
    mx = train_svc(xib, cfg)
    return LearnedSets(SvcSet(me), SvcSet(mx), p_max, GuaranteeBudget(),
                       second_moments(eta, xib))


def degenerate_sets(H, p_max=50.0) -> LearnedSets:
    """Zero-size sets: both models reduce to the origin and moments vanish."""
    moments = np.zeros((3 * H + 1, 3 * H + 1))
    moments[-1, -1] = 1.0
    return LearnedSets(SvcSet(point_model(H)), SvcSet(point_model(H)), p_max,
                       GuaranteeBudget(), moments)
