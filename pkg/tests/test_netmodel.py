"""Case parsing, admittance assembly, linear power flow and the AC oracle."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from pfpcmc.netmodel import (
    CaseParseError,
    CaseValidationError,
    PowerFlowDivergence,
    build_admittance,
    build_full_admittance,
    build_linear_model,
    format_case,
    load_case,
    parse_case,
    power_mismatch,
    solve_ac_power_flow,
    synthetic_feeder,
)

from conftest import TWO_BUS


def naive_ybus(case):
    """Element-by-element assembly, written independently of the library."""
    nb = case.n + 1
    Y = np.zeros((nb, nb), dtype=complex)
    for f, t, z, b, tap in zip(case.from_bus, case.to_bus, case.impedance, case.charging, case.tap):
        y = 1 / z
        Y[f, f] += (y + 1j * b / 2) / tap**2
        Y[t, t] += y + 1j * b / 2
        Y[f, t] -= y / tap
        Y[t, f] -= y / tap
    for i in range(nb):
        Y[i, i] += case.shunt[i]
    return Y


# -- parsing ---------------------------------------------------------------


def test_parse_case4(case4):
    assert case4.n == 3
    assert case4.base_mva == 10
    assert case4.bus_ids[0] == 1
    np.testing.assert_allclose(case4.load[1:], np.array([1.5 + 0.8j, 1.0 + 0.5j, 2.0 + 1.0j]) / 10)


def test_parse_case141(case141):
    assert case141.n == 140
    assert len(case141.from_bus) == 140  # radial


def test_two_slack_buses_rejected():
    text = TWO_BUS.format(p=0, q=0).replace("2 1 0 0", "2 3 0 0")
    with pytest.raises(CaseValidationError):
        parse_case(text)


def test_disconnected_rejected():
    text = TWO_BUS.format(p=0, q=0).replace("    2 1 0 0 0 0 1 1 0;", "    2 1 0 0 0 0 1 1 0;\n    3 1 0 0 0 0 1 1 0;")
    with pytest.raises(CaseValidationError, match="connected"):
        parse_case(text)


def test_zero_impedance_rejected():
    with pytest.raises(CaseValidationError):
        parse_case(TWO_BUS.format(p=0, q=0).replace("0 0.1 0", "0 0 0"))


def test_malformed_row_reports_line():
    bad = TWO_BUS.format(p=0, q=0).replace("1 2 0 0.1", "1 2 zero 0.1")
    with pytest.raises(CaseParseError) as err:
        parse_case(bad)
    assert "line" in str(err.value)


def test_format_round_trip(case141):
    again = parse_case(format_case(case141))
    np.testing.assert_allclose(again.load, case141.load, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(again.impedance, case141.impedance, rtol=1e-12)
    np.testing.assert_array_equal(again.from_bus, case141.from_bus)


# -- admittance ------------------------------------------------------------


def test_two_bus_partition():
    part = build_admittance(parse_case(TWO_BUS.format(p=0, q=0)))
    np.testing.assert_allclose(part.YLL.toarray(), [[-10j]])
    np.testing.assert_allclose(part.Y0L, [10j])
    np.testing.assert_allclose(part.Y00, -10j)


@pytest.mark.parametrize("name", ["case4", "case141"])
def test_partition_matches_naive_assembly(name):
    case = load_case(name)
    part = build_admittance(case)
    Y = naive_ybus(case)
    np.testing.assert_allclose(part.full(), Y, atol=1e-12)
    np.testing.assert_allclose(Y, Y.T, atol=1e-12)


def test_141_yll_invertible(case141):
    part = build_admittance(case141)
    x = part.solve(np.ones(case141.n))
    np.testing.assert_allclose(part.YLL @ x, np.ones(case141.n), atol=1e-9)


def test_taps_and_charging_follow_pi_model():
    text = """
    mpc.baseMVA = 1;
    mpc.bus = [1 3 0 0 0 0 1 1 0; 2 1 0 0 0.01 0.02 1 1 0];
    mpc.branch = [1 2 0.01 0.1 0.05 0 0 0 0.95 0 1];
    """
    case = parse_case(text)
    np.testing.assert_allclose(build_full_admittance(case).toarray(), naive_ybus(case), atol=1e-12)


# -- linear model ------------------------------------------------------------


def test_zero_injection_gives_w(case4):
    lpf = build_linear_model(build_admittance(case4), case4.v0)
    np.testing.assert_allclose(lpf.voltage(np.zeros(3)), lpf.w, atol=1e-15)
    ac = solve_ac_power_flow(case4.scaled(0.0))
    np.testing.assert_allclose(ac.v, lpf.w, atol=1e-12)


def test_linear_model_accuracy_4bus_half_load(case4):
    c = case4.scaled(0.5)
    lpf = build_linear_model(build_admittance(c), c.v0)
    ac = solve_ac_power_flow(c)
    assert np.max(np.abs(lpf.voltage(ac.s) - ac.v)) <= 1e-2


def test_linear_magnitude_accuracy_141(case141):
    lpf = build_linear_model(build_admittance(case141), case141.v0)
    ac = solve_ac_power_flow(case141)
    assert np.max(np.abs(lpf.magnitude(ac.s) - np.abs(ac.v))) <= 2e-2


def test_linear_error_grows_with_loading(case4):
    lpf = build_linear_model(build_admittance(case4), case4.v0)
    errs = []
    for t in np.linspace(0, 1, 11):
        ac = solve_ac_power_flow(case4.scaled(t))
        errs.append(np.max(np.abs(lpf.voltage(ac.s) - ac.v)))
    assert np.all(np.diff(errs) >= -1e-14)


def test_magnitude_map_is_first_order(case4):
    # C is the derivative of |v| at s = 0: a tiny injection gives a quadratic-size error
    lpf = build_linear_model(build_admittance(case4), case4.v0)
    s = case4.injection * 1e-4
    ac = solve_ac_power_flow(case4.with_injection(s))
    err = np.max(np.abs(lpf.magnitude(s) - np.abs(ac.v)))
    assert err < 1e-7


# -- AC oracle ---------------------------------------------------------------


def bisect_two_bus(p):
    """Two-bus v conj((v - 1)/(j0.1)) = -p for real p, by 1-D bisection on |v|."""
    # with a lossless line: P = -(|v| sin th)/0.1, Q-balance: |v|^2 - |v| cos th = 0
    def q_residual(m):
        sin_th = -0.1 * p / m
        cos_th = np.sqrt(1 - sin_th**2)
        return m - cos_th, sin_th, cos_th

    lo, hi = 0.5, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if q_residual(mid)[0] > 0:
            hi = mid
        else:
            lo = mid
    m = 0.5 * (lo + hi)
    _, s, c = q_residual(m)
    return m * (c + 1j * s)


def test_two_bus_oracle_matches_bisection():
    case = parse_case(TWO_BUS.format(p=0.1, q=0.0))
    ac = solve_ac_power_flow(case)
    v_ref = bisect_two_bus(0.1)
    assert abs(ac.v[0] - v_ref) < 1e-9
    v = ac.v[0]
    assert abs(v * np.conj((v - 1) / 0.1j) + 0.1) < 1e-10
    assert abs(np.angle(v) + 0.0100) < 1e-4


@pytest.mark.parametrize("name", ["case4", "case141"])
def test_oracle_mismatch(name):
    case = load_case(name)
    ac = solve_ac_power_flow(case)
    assert ac.residual <= 1e-10
    assert np.max(np.abs(power_mismatch(case, ac.v, ac.s0))) <= 1e-8


def test_zero_load_slack_power(case4):
    part = build_admittance(case4)
    ac = solve_ac_power_flow(case4.scaled(0.0), part)
    w = -part.solve(part.YL0 * case4.v0)
    expected = case4.v0 * np.conj(part.Y00 * case4.v0 + part.Y0L @ w)
    assert abs(ac.s0 - expected) < 1e-12


def test_overload_diverges(case4):
    with pytest.raises(PowerFlowDivergence):
        solve_ac_power_flow(case4.scaled(200.0))


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 1.5))
def test_oracle_mismatch_property(scale):
    case = load_case("case4").scaled(scale)
    ac = solve_ac_power_flow(case)
    assert np.max(np.abs(power_mismatch(case, ac.v, ac.s0))) <= 1e-8


def test_synthetic_feeder_shape():
    case = synthetic_feeder(60, seed=3, target_vmin=0.95)
    assert case.n == 59
    v = np.abs(solve_ac_power_flow(case).v)
    assert abs(v.min() - 0.95) < 1e-3
    assert sp.csgraph.connected_components(abs(build_full_admittance(case)))[0] == 1
