import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from ddrmpc.lpformat import read_lp, write_lp
from ddrmpc.solver import (INFEASIBLE, OPTIMAL, UNBOUNDED, ProgramBuilder, ProgramDescription,
                           ProgramError, solve)

import oracles


def box_lp(rng, n, m):
    G = np.vstack([rng.normal(size=(m, n)), np.eye(n), -np.eye(n)])
    h = np.concatenate([rng.uniform(0.5, 2, m), np.full(2 * n, 3.0)])
    return rng.normal(size=n), G, h


@pytest.mark.parametrize("backend", ["clarabel", "highs"])
@pytest.mark.parametrize("seed", range(8))
def test_lp_matches_vertex_enumeration(seed, backend):
    rng = np.random.default_rng(seed)
    c, G, h = box_lp(rng, 3, 4)
    prog = ProgramDescription(3, None, None, None, None, G, h, q=c)
    sol = solve(prog, backend=backend)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(oracles.lp_vertex_enumeration(c, G, h), abs=1e-7)


@pytest.mark.parametrize("seed", range(8))
def test_qp_matches_active_set_enumeration(seed):
    rng = np.random.default_rng(50 + seed)
    n = 3
    A = rng.normal(size=(n, n))
    P = A @ A.T + 0.1 * np.eye(n)
    q = rng.normal(size=n)
    _, G, h = box_lp(rng, n, 3)
    sol = solve(ProgramDescription(n, None, None, None, None, G, h, P=P, q=q), tol=1e-10)
    x_ref, v_ref = oracles.qp_active_set(P, q, G, h)
    assert sol.objective == pytest.approx(v_ref, abs=1e-7)
    np.testing.assert_allclose(sol.x, x_ref, atol=1e-5)


def test_infeasible_and_unbounded_statuses():
    infeas = ProgramDescription(1, [0.0], [1.0], [[1.0]], [2.0], None, None)
    unb = ProgramDescription(1, None, None, None, None, None, None, q=[-1.0])
    for backend in ("clarabel", "highs"):
        assert solve(infeas, backend=backend).status == INFEASIBLE
        assert solve(unb, backend=backend).status == UNBOUNDED
        assert not solve(infeas, backend=backend).ok


def test_bounds_only_program():
    prog = ProgramDescription(2, [1.0, -2.0], [3.0, 5.0], None, None, None, None, q=[1.0, -1.0])
    sol = solve(prog)
    np.testing.assert_allclose(sol.x, [1.0, 5.0], atol=1e-6)
    assert sol.objective == pytest.approx(-4.0, abs=1e-6)


@pytest.mark.parametrize("kw,msg", [
    ({"lb": [1.0], "ub": [0.0]}, "lower bound"),
    ({"A_ub": [[1.0, 2.0]], "b_ub": [1.0]}, "columns"),
    ({"A_eq": [[1.0]], "b_eq": [1.0, 2.0]}, "length mismatch"),
    ({"P": [[1.0]], "q": [0.0]}, None),
    ({"P": [[-1.0]]}, "semidefinite"),
    ({"b_ub": [np.inf], "A_ub": [[1.0]]}, "finite"),
])
def test_malformed_programs_rejected(kw, msg):
    base = {"n": 1, "lb": None, "ub": None, "A_eq": None, "b_eq": None, "A_ub": None,
            "b_ub": None}
    base.update(kw)
    if msg is None:
        ProgramDescription(**base)
        return
    with pytest.raises(ProgramError, match=msg):
        ProgramDescription(**base)


def test_asymmetric_quadratic_rejected():
    with pytest.raises(ProgramError, match="symmetric"):
        ProgramDescription(2, None, None, None, None, None, None, P=[[1.0, 1.0], [0.0, 1.0]])


def test_unknown_backend():
    prog = ProgramDescription(1, [0.0], [1.0], None, None, None, None)
    with pytest.raises(ProgramError):
        solve(prog, backend="nope")


def test_builder_accumulates_and_checks_shapes():
    b = ProgramBuilder("t")
    x = b.add_variables("x", 2, lb=0.0)
    y = b.add_variables("y", 1, ub=4.0)
    b.add_rows([(x, [[1.0, 1.0]]), (y, [[1.0]])], "eq", [3.0])
    b.add_rows([(x, sp.identity(2))], "ub", [2.0, 2.0])
    b.add_linear_cost(x, [1.0, 2.0])
    b.add_linear_cost(x, [1.0, 0.0])
    b.add_quadratic_cost(y, [[2.0]])
    b.constant = 5.0
    prog = b.build()
    assert prog.n == 3 and prog.n_eq == 1 and prog.n_ub == 2
    np.testing.assert_array_equal(prog.q, [2.0, 2.0, 0.0])
    assert prog.var_names == ["x_0", "x_1", "y_0"]
    sol = solve(prog)
    # y = 3 is cheaper than moving mass to x at cost >= 2 per unit ... up to the y^2 term
    assert sol.objective == pytest.approx(prog.objective(sol.x))
    with pytest.raises(ProgramError):
        b.add_rows([(x, [[1.0]])], "ub", [0.0])


def _random_program(rng, quad):
    n, me, mu = 4, 1, 3
    P = None
    if quad:
        A = rng.normal(size=(n, n))
        P = A @ A.T
    return ProgramDescription(
        n, rng.uniform(-2, 0, n), np.where(rng.random(n) < 0.5, rng.uniform(1, 3, n), np.inf),
        rng.normal(size=(me, n)), rng.normal(size=me), rng.normal(size=(mu, n)),
        rng.uniform(1, 2, mu), P=P, q=rng.normal(size=n), constant=float(rng.normal()),
        var_names=["x", "y", "e1", "z.1"], name="rt")


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.booleans())
def test_lp_text_round_trip(seed, quad):
    rng = np.random.default_rng(seed)
    prog = _random_program(rng, quad)
    back = read_lp(write_lp(prog))
    assert back.n == prog.n
    np.testing.assert_array_equal(back.lb, prog.lb)
    np.testing.assert_array_equal(back.ub, prog.ub)
    np.testing.assert_array_equal(back.q, prog.q)
    assert back.constant == prog.constant
    np.testing.assert_array_equal(back.A_eq.toarray(), prog.A_eq.toarray())
    np.testing.assert_array_equal(back.b_ub, prog.b_ub)
    if quad:
        np.testing.assert_allclose(back.P.toarray(), prog.P.toarray(), rtol=1e-15)
    s1, s2 = solve(prog), solve(back)
    assert s1.status == s2.status
    if s1.ok:
        assert s2.objective == pytest.approx(s1.objective, rel=1e-9, abs=1e-9)


def test_lp_text_rejects_garbage():
    with pytest.raises(ProgramError):
        read_lp("Maximize\n obj: x\nEnd\n")
