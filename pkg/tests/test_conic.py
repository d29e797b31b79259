import numpy as np
import pytest

from pfpcmc.conic import (
    ConicProgram,
    ConstraintError,
    SolveSettings,
    bmat,
    check_solution,
    solve,
)


@pytest.fixture(params=["clarabel", "scs"])
def settings(request):
    tol = 1e-8 if request.param == "clarabel" else 1e-7
    return SolveSettings(backend=request.param, feas_tol=tol, gap_tol=tol)


def test_scalar_psd(settings):
    p = ConicProgram()
    x = p.variable("x")
    p.add_psd_block(x.reshape(1, 1))
    p.minimize(x)
    rep = solve(p, settings)
    assert rep.ok
    assert abs(rep.objective) < 1e-6


@pytest.mark.parametrize("sign", [1, -1])
def test_two_by_two_psd(settings, sign):
    p = ConicProgram()
    x = p.variable("x")
    p.add_psd_block(bmat([[np.eye(1), x.reshape(1, 1)], [x.reshape(1, 1), np.eye(1)]]))
    p.minimize(sign * x)
    rep = solve(p, settings)
    assert rep.ok
    assert abs(rep.value(x) + sign) < 1e-5


def test_block_dimension_bookkeeping():
    p = ConicProgram()
    D1 = p.variable("D1", (3, 3), symmetric=True)
    D2 = p.variable("D2", (2, 2), symmetric=True)
    X = p.variable("X", (3, 2))
    h = p.add_psd_block(bmat([[D1, X], [X.T, D2]]))
    assert p.constraint(h).dim == 5


def test_hypotenuse(settings):
    p = ConicProgram()
    t = p.variable("t")
    p.add_soc(t, np.array([3.0, 4.0]))
    p.minimize(t)
    rep = solve(p, settings)
    assert rep.ok and abs(rep.objective - 5) < 1e-5


def test_soc_boundary(settings):
    p = ConicProgram()
    v = p.variable("v", (2,))
    p.add_soc(0.0, v)
    p.minimize(v.sum())
    rep = solve(p, settings)
    assert rep.ok
    np.testing.assert_allclose(rep.value(v), 0, atol=1e-5)


def test_trace_example(settings):
    p = ConicProgram()
    D = p.variable("D")
    one = np.ones((1, 1))
    p.add_psd_block(bmat([[D.reshape(1, 1), one], [one, D.reshape(1, 1)]]))
    p.minimize(D)
    rep = solve(p, settings)
    assert rep.ok and abs(rep.objective - 1) < 1e-5


def test_infeasible(settings):
    p = ConicProgram()
    x = p.variable("x")
    p.add_le(1.0, x)
    p.add_le(x, 0.0)
    p.minimize(x)
    assert solve(p, settings).status == "primal-infeasible"


def test_unbounded(settings):
    p = ConicProgram()
    x = p.variable("x")
    p.add_le(x, 0.0)
    p.minimize(x)
    assert solve(p, settings).status == "dual-infeasible"


def test_asymmetric_block_rejected():
    p = ConicProgram()
    X = p.variable("X", (2, 2))
    with pytest.raises(ConstraintError):
        p.add_psd_block(X)


def test_unknown_variable_reference():
    p = ConicProgram()
    with pytest.raises(KeyError):
        p["nope"]


def test_remove_handle():
    p = ConicProgram()
    x = p.variable("x")
    h = p.add_le(1.0, x)
    p.remove(h)
    p.minimize(x)
    assert h not in p.constraints


def test_round_trip_is_identical():
    p = ConicProgram("rt")
    Y = p.variable("Y", (3, 3), symmetric=True)
    v = p.variable("v", (3,), lb=0.0)
    p.add_psd_block(Y + np.eye(3), name="psd")
    p.add_soc(v[0], v[1:] - 2.0, name="soc")
    p.add_eq(Y.trace(), 1.0)
    p.minimize(v.sum() + 3 * Y[0, 1])
    text = p.dumps()
    q = ConicProgram.loads(text)
    assert q.dumps() == text
    r1 = solve(p, SolveSettings(backend="clarabel"))
    r2 = solve(q, SolveSettings(backend="clarabel"))
    assert abs(r1.objective - r2.objective) < 1e-9


def test_checker_is_independent():
    p = ConicProgram()
    x = p.variable("x", (2,))
    p.add_soc(1.0, x)
    p.minimize(x.sum())
    worst, parts = check_solution(p, np.array([0.6, 0.8]))
    assert worst < 1e-12
    worst, _ = check_solution(p, np.array([1.0, 1.0]))
    assert worst > 0.1


def test_time_limit_is_a_status():
    rng = np.random.default_rng(0)
    p = ConicProgram()
    Y = p.variable("Y", (30, 30), symmetric=True)
    C = rng.normal(size=(30, 30))
    p.add_psd_block(Y)
    p.add_eq(Y.trace(), 1.0)
    p.minimize((Y * (C + C.T)).sum())
    rep = solve(p, SolveSettings(backend="scs", max_iter=5, feas_tol=1e-12, gap_tol=1e-12))
    assert rep.status in ("time-limit", "numerical-failure")
    assert rep.status != "optimal"
