"""Estimation models, the sparse PSD rewrite and the exact reformulations."""

import itertools

import numpy as np
import pytest

from pfpcmc.bench import EstimatorConfig, estimate
from pfpcmc.conic import SolveSettings, solve
from pfpcmc.measgen import MeasurementMatrix, NoiseSpec, apply_fad_mask, make_scenario
from pfpcmc.models import (
    ModelError,
    PowerFlowToleranceSet,
    SlackData,
    SubmatrixPlan,
    apply_sparse_psd,
    build_model_mc,
    build_model_mcse,
    build_model_pfpc,
    build_model_projection,
    extract_state,
    mape,
    reduce_rank_one,
    select_submatrices,
    split_w_rows,
)
from pfpcmc.netmodel import load_case, solve_ac_power_flow

TIGHT = SolveSettings(backend="clarabel")
# the backend sees costs normalised to max|c| = 0.1, so optimal values of
# equivalent programs agree to about 1e-5 relative, not to the nominal 1e-8
EQUIV = 1e-5


def meas_from(M, psi=None, noise=None):
    M = np.asarray(M, dtype=float)
    if psi is None:
        psi = np.array([(i, j) for i in range(M.shape[0]) for j in range(5)])
    return MeasurementMatrix(M, psi, M[psi[:, 0], psi[:, 1]].copy(), noise or NoiseSpec.zero())


def run(prog, meas, settings=TIGHT):
    rep = solve(prog, settings)
    assert rep.ok, rep.message
    return rep, extract_state(rep, prog, meas)


def rank_one(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n), rng.normal(size=5)
    return np.outer(a / np.linalg.norm(a), b / np.linalg.norm(b))


# -- model (1) -----------------------------------------------------------------


def test_mc_full_observation_pins_x():
    M = rank_one(8, 0)
    meas = meas_from(M)
    _, res = run(build_model_mc(meas), meas)
    assert np.linalg.norm(res.X - M) / np.linalg.norm(M) <= 1e-6


def test_mc_rank_one_recovery():
    M = rank_one(10, 0)
    meas = meas_from(M, apply_fad_mask(10, 0.6, seed=0))
    _, res = run(build_model_mc(meas), meas)
    assert np.linalg.norm(res.X - M) / np.linalg.norm(M) <= 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_mc_rank_one_certificate(seed):
    """At 60% of a 10 x 5 matrix some masks admit a smaller-norm completion.

    Either X = M, or X is a feasible completion with strictly smaller
    nuclear norm (so M is not the minimiser and recovery cannot be exact).
    """
    M = rank_one(10, seed)
    meas = meas_from(M, apply_fad_mask(10, 0.6, seed=seed))
    _, res = run(build_model_mc(meas), meas)
    nuc = np.linalg.svd(res.X, compute_uv=False).sum()
    assert nuc <= 1.0 + 1e-6
    if nuc >= 1.0 - 1e-6:
        assert np.linalg.norm(res.X - M) <= 1e-4


def test_mc_single_column():
    M = np.random.default_rng(2).normal(size=(6, 5))
    psi = np.array([(i, 0) for i in range(6)])
    meas = meas_from(M, psi)
    rep, res = run(build_model_mc(meas), meas)
    np.testing.assert_allclose(res.X[:, 1:], 0, atol=1e-6)
    assert abs(rep.objective - 2 * np.linalg.norm(M[:, 0])) <= 1e-6 * rep.objective


@pytest.mark.parametrize("seed", range(3))
def test_nuclear_norm_identity(seed):
    M = np.random.default_rng(seed).normal(size=(7, 5))
    meas = meas_from(M)
    rep, _ = run(build_model_mc(meas), meas)
    nuc = np.linalg.svd(M, compute_uv=False).sum()
    assert abs(rep.objective / 2 - nuc) <= 1e-6 * nuc


def test_mc_needs_observations():
    with pytest.raises(ModelError):
        build_model_mc(meas_from(np.ones((3, 5)), np.zeros((0, 2), dtype=int)))


# -- model (2) -----------------------------------------------------------------


def test_mcse_noise_free_full(case4):
    scn = make_scenario(case4, fad=1.0, seed=0, noise=NoiseSpec.zero())
    prog = build_model_mcse(scn.meas, scn.lpf, SlackData.from_scenario(scn), delta=0.0)
    _, res = run(prog, scn.meas)
    np.testing.assert_allclose(res.X, scn.meas.ground_truth, atol=1e-7)
    # each tolerance equals the linearisation error, computed independently
    ac = solve_ac_power_flow(case4)
    lin = scn.lpf.voltage(ac.s) - ac.v
    mag = scn.lpf.magnitude(ac.s) - np.abs(ac.v)
    slack_err = scn.lpf.slack_power(ac.v) - ac.s0
    bound = {
        "tau_re": np.abs(lin.real),
        "tau_im": np.abs(lin.imag),
        "gamma": np.abs(mag),
        "alpha_re": abs(slack_err.real),
        "alpha_im": abs(slack_err.imag),
    }
    for name, val in res.tolerances.items():
        assert np.all(val <= bound[name] + 1e-7), name


def test_mcse_beats_mc_4bus(case4):
    mc, mcse = [], []
    for seed in range(10):
        scn = make_scenario(case4, fad=0.4, seed=seed, noise=NoiseSpec.zero())
        mc.append(estimate(scn, EstimatorConfig.for_method("mc")).mape_vmag)
        mcse.append(estimate(scn, EstimatorConfig.for_method("m1")).mape_vmag)
    assert np.median(mcse) < np.median(mc)


def test_mcse_zero_delta_noisy_is_well_posed(scn4):
    prog = build_model_mcse(scn4.meas, scn4.lpf, SlackData.from_scenario(scn4), delta=0.0)
    rep = solve(prog, TIGHT)
    assert rep.ok


def test_mcse_negative_delta(scn4):
    with pytest.raises(ModelError):
        build_model_mcse(scn4.meas, scn4.lpf, delta=-1.0)


# -- models (3) and (4) -------------------------------------------------------------


def test_projection_aligns_y_with_column_space():
    M = rank_one(8, 3) * 3.0
    meas = meas_from(M)
    prog = build_model_projection(meas, k=1, lam=0.05, fit_scaling=None)
    rep, _ = run(prog, meas)
    Y = rep.value(prog["Y"])
    w, V = np.linalg.eigh(Y)
    u = np.linalg.svd(M)[0][:, 0]
    assert abs(V[:, -1] @ u) >= 0.99
    assert abs(np.trace(Y) - 1) <= 1e-6


def test_projection_k5_at_least_as_tight(scn4):
    obj = {}
    for k in (1, 5):
        prog = build_model_projection(scn4.meas, k=k)
        obj[k] = solve(prog, TIGHT).objective
    assert obj[5] <= obj[1] + 1e-7 * abs(obj[1])


def test_projection_zero_matrix():
    meas = meas_from(np.zeros((5, 5)))
    prog = build_model_projection(meas, k=1)
    rep, res = run(prog, meas)
    assert abs(rep.objective) <= 1e-7
    np.testing.assert_allclose(res.X, 0, atol=1e-7)
    np.testing.assert_allclose(rep.value(prog["Theta"]), 0, atol=1e-7)


@pytest.mark.parametrize("k,lam", [(0, 10), (6, 10), (1, 0.0), (1, -1)])
def test_projection_bad_arguments(scn4, k, lam):
    with pytest.raises(ModelError):
        build_model_projection(scn4.meas, k=k, lam=lam)


@pytest.mark.parametrize("k", [1, 3])
def test_projection_invariants_at_optimum(scn4, k):
    prog = build_model_pfpc(scn4.meas, scn4.lpf, SlackData.from_scenario(scn4), k=k)
    rep = solve(prog, TIGHT)
    assert rep.ok
    Y, U = rep.value(prog["Y"]), rep.value(prog["U"])
    ev = np.linalg.eigvalsh(Y)
    tol = 1e-6
    assert ev[0] >= -tol and ev[-1] <= 1 + tol
    assert np.trace(Y) <= k + tol
    assert np.linalg.eigvalsh(Y - U @ U.T)[0] >= -tol


def test_pfpc_noise_free_full(case4):
    scn = make_scenario(case4, fad=1.0, seed=0, noise=NoiseSpec.zero())
    prog = build_model_pfpc(scn.meas, scn.lpf, SlackData.from_scenario(scn))
    _, res = run(prog, scn.meas)
    ac = solve_ac_power_flow(case4)
    lin_err = np.max(np.abs(scn.lpf.voltage(ac.s) - ac.v))
    assert np.max(np.abs(res.v - scn.v_true)) <= lin_err


def test_pfpc_beats_projection_4bus(case4):
    m2, m4 = [], []
    noise = NoiseSpec(0.01, 0.01, 0.01)
    for seed in range(10):
        scn = make_scenario(case4, fad=0.4, seed=seed, noise=noise)
        m2.append(estimate(scn, EstimatorConfig.for_method("m2")).mape_vmag)
        m4.append(estimate(scn, EstimatorConfig.for_method("full")).mape_vmag)
    assert np.median(m4) <= np.median(m2)


def test_column_three_coupling(scn4):
    prog = build_model_pfpc(scn4.meas, scn4.lpf, SlackData.from_scenario(scn4))
    rep, res = run(prog, scn4.meas)
    lpf, X = scn4.lpf, res.X
    s_hat = X[:, 3] + 1j * X[:, 4]
    t = res.tolerances
    # |X2 - hypot(X0, X1)| <= gamma + |tau| + the magnitude linearisation gap at s_hat
    gap = np.abs(lpf.magnitude(s_hat) - np.abs(lpf.voltage(s_hat)))
    bound = t["gamma"] + t["tau_re"] + t["tau_im"] + gap + 1e-6
    assert np.all(np.abs(X[:, 2] - np.hypot(X[:, 0], X[:, 1])) <= bound)


def test_tolerance_config():
    with pytest.raises(ModelError):
        PowerFlowToleranceSet(loss="huber")
    with pytest.raises(ModelError):
        PowerFlowToleranceSet.uniform(-1.0)


def test_squared_loss_builds_and_solves(scn4):
    prog = build_model_mcse(scn4.meas, scn4.lpf, tol=PowerFlowToleranceSet.uniform(1.0, "squared-ell2"))
    assert solve(prog, TIGHT).ok


# -- sparse PSD -------------------------------------------------------------------


def test_d2_plan():
    plan = select_submatrices(6, None, d=2)
    assert plan.n_d == 30 and plan.complete
    for s in plan.sets:
        assert len(s) == 2 and s[0] < 6 <= s[1]


def test_d2_block_is_determinant_condition(scn4):
    n = scn4.n
    plan = select_submatrices(n, scn4.case.adjacency(), d=2)
    prog = apply_sparse_psd(build_model_projection(scn4.meas), plan)
    rep = solve(prog, TIGHT)
    Y, X, T = (rep.value(prog[v]) for v in ("Y", "X", "Theta"))
    for i, j in itertools.product(range(n), range(5)):
        assert X[i, j] ** 2 <= Y[i, i] * T[j, j] + 1e-6


def test_plan_141_cap_700(case141):
    plan = select_submatrices(140, case141.adjacency(), d=5, n_d_cap=700, seed=0)
    assert plan.n_d == 700 and plan.complete
    assert all(len(s) == 5 for s in plan.sets)


def test_plan_533_cap_2000():
    case = load_case("synthetic533")
    plan = select_submatrices(case.n, case.adjacency(), d=5, n_d_cap=2000, seed=0)
    assert plan.n_d == 2000


def test_small_cap_reports_uncovered():
    plan = select_submatrices(20, None, d=3, n_d_cap=10, seed=0)
    assert plan.n_d == 10 and not plan.complete and plan.uncovered


def test_bad_d():
    with pytest.raises(ModelError):
        select_submatrices(5, None, d=1)
    with pytest.raises(ModelError):
        select_submatrices(5, None, d=11)


def test_plan_is_deterministic(case141):
    a = select_submatrices(140, case141.adjacency(), 5, 700, seed=3)
    b = select_submatrices(140, case141.adjacency(), 5, 700, seed=3)
    assert a.sets == b.sets


def test_blocks_are_relaxations(rng):
    # any PSD W satisfies every principal block of any plan
    plan = select_submatrices(12, None, d=4, seed=1)
    for _ in range(20):
        G = rng.normal(size=(17, 3))
        W = G @ G.T
        for s in plan.sets:
            assert np.linalg.eigvalsh(W[np.ix_(s, s)])[0] >= -1e-10


def test_whole_matrix_plan_is_exact(scn4):
    n = scn4.n
    base = build_model_pfpc(scn4.meas, scn4.lpf, SlackData.from_scenario(scn4))
    whole = SubmatrixPlan(n=n, d=n + 5, sets=[tuple(range(n + 5))])
    a = solve(base, TIGHT).objective
    b = solve(apply_sparse_psd(base, whole), TIGHT).objective
    assert abs(a - b) <= EQUIV * abs(a)


def test_s1_bounds_full_4bus(scn4):
    base = build_model_pfpc(scn4.meas, scn4.lpf, SlackData.from_scenario(scn4))
    plan = select_submatrices(scn4.n, scn4.case.adjacency(), d=3)
    full = solve(base, TIGHT).objective
    s1 = solve(apply_sparse_psd(base, plan), TIGHT).objective
    assert s1 <= full + 1e-7 * abs(full)


def test_nested_plans_141(scn141):
    """d=3 sub-plan <= d=5 plan <= full PSD, with plans nested by construction."""
    slack = SlackData.from_scenario(scn141)
    base = build_model_pfpc(scn141.meas, scn141.lpf, slack)
    p5 = select_submatrices(140, scn141.case.adjacency(), d=5, n_d_cap=700, seed=0)
    # every 3-set lies inside some 5-set, so the 5-plan's feasible set is smaller
    p3 = SubmatrixPlan(n=140, d=3, sets=sorted({(s[0], s[1], s[-1]) for s in p5.sets}))
    obj = {}
    for name, prog in (("d3", apply_sparse_psd(base, p3)), ("d5", apply_sparse_psd(base, p5)), ("full", base)):
        rep = solve(reduce_rank_one(prog))
        assert rep.ok, (name, rep.message)
        obj[name] = rep.objective
    rel = EQUIV * abs(obj["full"])
    assert obj["d3"] <= obj["d5"] + rel <= obj["full"] + 2 * rel


# -- exact reformulations ------------------------------------------------------------


@pytest.mark.parametrize("model", ["mc", "mcse", "projection", "pfpc"])
def test_reduction_and_split_are_exact(scn4, model):
    slack = SlackData.from_scenario(scn4)
    builders = {
        "mc": lambda: build_model_mc(scn4.meas),
        "mcse": lambda: build_model_mcse(scn4.meas, scn4.lpf, slack),
        "projection": lambda: build_model_projection(scn4.meas),
        "pfpc": lambda: build_model_pfpc(scn4.meas, scn4.lpf, slack),
    }
    prog = builders[model]()
    small = split_w_rows(reduce_rank_one(prog))
    assert small.meta.get("split") == "rows"
    a, b = solve(prog, TIGHT), solve(small, TIGHT)
    assert a.ok and b.ok
    assert abs(a.objective - b.objective) <= EQUIV * max(1.0, abs(a.objective))


def test_sparse_reduction_is_exact(scn4):
    base = build_model_pfpc(scn4.meas, scn4.lpf, SlackData.from_scenario(scn4))
    s1 = apply_sparse_psd(base, select_submatrices(scn4.n, scn4.case.adjacency(), d=3))
    a = solve(s1, TIGHT).objective
    for keep_u in (False, True):
        b = solve(reduce_rank_one(s1, keep_u=keep_u), TIGHT).objective
        assert abs(a - b) <= EQUIV * abs(a)


def test_reduction_leaves_k2_alone(scn4):
    prog = build_model_projection(scn4.meas, k=2)
    assert reduce_rank_one(prog) is prog


# -- extraction ---------------------------------------------------------------------


def test_mape_definition():
    truth = np.array([1.0, 0.98, 1.02])
    assert mape(truth, truth) == 0
    assert abs(mape(truth * 1.01, truth) - 1.0) < 1e-12
    with pytest.raises(ValueError):
        mape([1.0], [0.0])


def test_extract_state_nonoptimal_has_no_estimate(scn4):
    prog = build_model_mc(scn4.meas)
    rep = solve(prog, SolveSettings(backend="scs", max_iter=2, feas_tol=1e-12, gap_tol=1e-12))
    res = extract_state(rep, prog, scn4.meas)
    assert not res.ok and res.X is None and np.isnan(res.mape_vmag)


def test_objective_terms_add_up(scn4):
    prog = build_model_pfpc(scn4.meas, scn4.lpf, SlackData.from_scenario(scn4))
    rep, res = run(prog, scn4.meas)
    assert set(res.terms) == {"fit", "trace", "tolerance"}
    assert abs(sum(res.terms.values()) - rep.objective) <= 1e-9 * abs(rep.objective)


@pytest.mark.parametrize("d", [3, 5, 7])
def test_plan_meets_sweep_caps(case141, d):
    # a radial feeder has only 5 x 139 nearest-neighbour 3-sets; padding must go further
    for cap in (500, 700, 900):
        plan = select_submatrices(140, case141.adjacency(), d=d, n_d_cap=cap, seed=0)
        assert plan.n_d == cap and plan.complete
