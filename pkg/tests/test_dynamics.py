import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddrmpc.dynamics import (
    ConstraintSet,
    WaterBalanceParams,
    build_stacked,
    predict_trajectory,
    step,
)

import oracles


def test_step_hand_values():
    p = WaterBalanceParams(c=0.025)
    assert step(40, 5, 2, 0, p) == pytest.approx(42.0, abs=1e-12)
    assert step(30, 10, 3, 7, p) == pytest.approx(43.25, abs=1e-12)


@given(st.floats(0, 500))
def test_step_identity_without_decay_or_flows(x):
    assert step(x, 0, 0, 0, WaterBalanceParams(c=0.0)) == x


@pytest.mark.parametrize("bad", [(np.nan, 0, 0, 0), (1, -1, 0, 0), (1, 0, -0.1, 0), (1, 0, 0, -2)])
def test_step_rejects_bad_inputs(bad):
    with pytest.raises(ValueError):
        step(*bad, WaterBalanceParams())


@pytest.mark.parametrize("c", [-0.1, 1.0, 1.5])
def test_params_reject_decay_outside_range(c):
    with pytest.raises(ValueError):
        WaterBalanceParams(c=c)


def test_single_step_stack():
    dyn = build_stacked(WaterBalanceParams(c=0.025, horizon_steps=1))
    np.testing.assert_allclose(dyn.Bu_stack, [[0.0], [1.0]])
    np.testing.assert_allclose(dyn.A_stack, [[1.0], [0.975]])


def test_decay_free_stack_is_a_shift_pattern():
    dyn = build_stacked(WaterBalanceParams(c=0.0, horizon_steps=4))
    expected = np.tril(np.ones((5, 4)), k=-1)
    np.testing.assert_array_equal(dyn.Bu_stack, expected)


def test_free_decay():
    P = WaterBalanceParams(c=0.025, horizon_steps=6)
    dyn = build_stacked(P)
    z = np.zeros(6)
    x = predict_trajectory(dyn, 30.0, z, z, z)
    np.testing.assert_allclose(x, 30 * 0.975 ** np.arange(7), rtol=1e-14)
    np.testing.assert_array_equal(predict_trajectory(dyn, 0.0, z, z, z), np.zeros(7))


def test_stacked_matches_step_with_weather(rng):
    P = WaterBalanceParams(c=0.025, horizon_steps=3)
    dyn = build_stacked(P)
    u = rng.uniform(0, 10, 3)
    e = rng.uniform(0, 3, 3)
    p = rng.uniform(0, 5, 3)
    x = [35.0]
    for t in range(3):
        x.append(step(x[-1], u[t], e[t], p[t], P))
    # forecasts are e_hat, p_hat with errors folded into w
    e_hat, p_hat = e + 0.3, p * 0.5
    v = p_hat - e_hat
    w = (p - p_hat) - (e - e_hat)
    np.testing.assert_allclose(predict_trajectory(dyn, 35.0, u, v, w), x, atol=1e-12)


@given(st.integers(1, 12), st.floats(0.0, 0.5), st.integers(0, 2**32 - 1))
def test_stacked_equals_recursion(H, c, seed):
    r = np.random.default_rng(seed)
    dyn = build_stacked(WaterBalanceParams(c=c, horizon_steps=H))
    x0 = r.uniform(0, 80)
    u, v, w = r.uniform(-5, 10, (3, H))
    np.testing.assert_allclose(predict_trajectory(dyn, x0, u, v, w),
                               oracles.recursive_trajectory(x0, u, v, w, c), atol=1e-10)


@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_causality(H, seed):
    r = np.random.default_rng(seed)
    dyn = build_stacked(WaterBalanceParams(horizon_steps=H))
    u, v, w = r.normal(size=(3, H))
    base = predict_trajectory(dyn, 10.0, u, v, w)
    j = int(r.integers(0, H))
    for seq in range(3):
        args = [u.copy(), v.copy(), w.copy()]
        args[seq][j] += 1.0
        diff = predict_trajectory(dyn, 10.0, *args) - base
        assert np.all(diff[: j + 1] == 0.0)
        assert np.all(diff[j + 1:] > 0.0)


@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_superposition(H, seed):
    r = np.random.default_rng(seed)
    dyn = build_stacked(WaterBalanceParams(horizon_steps=H))
    a = [r.uniform(0, 50)] + list(r.normal(size=(3, H)))
    b = [r.uniform(0, 50)] + list(r.normal(size=(3, H)))
    s, t = r.normal(size=2)
    mix = [s * x + t * y for x, y in zip(a, b)]
    lhs = predict_trajectory(dyn, *mix)
    rhs = s * predict_trajectory(dyn, *a) + t * predict_trajectory(dyn, *b)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


def test_predict_rejects_wrong_lengths():
    dyn = build_stacked(WaterBalanceParams(horizon_steps=3))
    with pytest.raises(ValueError, match="u_seq"):
        predict_trajectory(dyn, 0.0, np.zeros(2), np.zeros(3), np.zeros(3))


def test_constraint_set_stacking():
    F_x, f_x, F_u, f_u = ConstraintSet(x_min=30, u_max=10).stacked(3)
    x = np.array([99.0, 31.0, 30.0, 29.0])
    assert list(F_x @ x <= f_x) == [True, True, False]
    u = np.array([0.0, 10.0, 11.0])
    assert list((F_u @ u <= f_u).reshape(3, 2).all(axis=1)) == [True, True, False]


def test_constraint_set_validation():
    with pytest.raises(ValueError):
        ConstraintSet(u_max=0)
    with pytest.raises(ValueError):
        ConstraintSet(x_min=30, x_max=20)
