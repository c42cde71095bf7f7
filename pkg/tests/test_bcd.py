import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctid.bcd import (
    BcdConfig,
    StructureSpec,
    bcd_fit,
    cost_vn,
    initialize_from_unfactored,
    parsimony_excess,
    residual_output,
)
from ctid.errors import EstimationError, StructureError
from ctid.estimators import first_order_optimality, srivc_full
from ctid.harness import case1_truth, case_config, fit_metric, gen_input, perturb_model
from ctid.lti import (
    AdditiveModel,
    TransferFunction,
    additive_to_unfactored,
    is_stable,
    pack_theta,
    simulate_model,
    simulate_zoh,
)

TRUTH = case1_truth()
S22 = StructureSpec(((2, 0), (2, 0)))
H = 0.005


def _case1(seed, noise=1.0, N=10000):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=N)
    x = simulate_model(TRUTH, u, H)
    return rng, u, x, x + noise * rng.normal(size=N)


# --- structure ---------------------------------------------------------------------


def test_structure_spec():
    assert S22.K == 2 and S22.relative_degrees == [2, 2] and S22.n_params == 6
    assert S22.unfactored_degrees == (4, 2)
    for bad in ([], [(1, 2)], [(0, 0)], [(2, 2), (1, 1)]):
        with pytest.raises(StructureError):
            StructureSpec(tuple(bad))


def test_config_validation():
    for kw in ({"epsilon": 0}, {"max_outer": 0}, {"max_inner": 0}):
        with pytest.raises(ValueError):
            BcdConfig(**kw)


# --- cost and residual output -------------------------------------------------------


def test_cost_zero_on_exact_data():
    _, u, x, _ = _case1(0, noise=0.0, N=3000)
    assert cost_vn(TRUTH, x, u, H) < 1e-18


def test_cost_of_pure_noise():
    rng = np.random.default_rng(1)
    y = rng.normal(size=10000)
    assert 0.9 <= cost_vn(TRUTH, y, np.zeros(10000), H) <= 1.1


def test_cost_at_truth_is_noise_variance():
    _, u, _, y = _case1(2)
    assert 0.95 <= cost_vn(TRUTH, y, u, H) <= 1.05


def test_residual_output():
    _, u, x, _ = _case1(3, noise=0.0, N=4000)
    np.testing.assert_array_equal(residual_output(x, u, H, [], []), x)
    np.testing.assert_allclose(residual_output(x, u, H, [], [TRUTH.subs[1]]), simulate_zoh(TRUTH.subs[0], u, H), atol=1e-9)
    assert np.max(np.abs(residual_output(x, u, H, [TRUTH.subs[0]], [TRUTH.subs[1]]))) < 1e-9


# --- bcd_fit -----------------------------------------------------------------------


def test_fixed_point_at_truth_noise_free():
    _, u, x, _ = _case1(4, noise=0.0)
    res = bcd_fit(x, u, H, S22, TRUTH, BcdConfig())
    assert res.converged and res.outer_iters_used == 1
    assert len(res.x_trace) == res.outer_iters_used + 1
    for g, ref in zip(res.model.subs, TRUTH.subs):
        np.testing.assert_allclose(pack_theta(g).values, pack_theta(ref).values, rtol=0, atol=1e-7)
    assert cost_vn(res.model, x, u, H) < 1e-14


@pytest.mark.parametrize("seed", range(3))
def test_improves_on_perturbed_start(seed):
    rng, u, x, y = _case1(seed)
    init = perturb_model(TRUTH, 0.10, rng)
    res = bcd_fit(y, u, H, S22, init, case_config(1).bcd)
    assert fit_metric(simulate_model(res.model, u, H), x) > fit_metric(simulate_model(init, u, H), x)
    assert np.all(np.diff(res.cost_trace) < 0)
    assert res.cost == pytest.approx(cost_vn(res.model, y, u, H), rel=1e-12)
    assert len(res.x_trace) == res.outer_iters_used + 1
    assert len(res.accepted) == res.outer_iters_used and all(len(a) == 2 for a in res.accepted)


@pytest.mark.parametrize("seed", range(3))
def test_stationary_blocks_at_convergence(seed):
    rng, u, _, y = _case1(10 + seed)
    res = bcd_fit(y, u, H, S22, perturb_model(TRUTH, 0.10, rng), case_config(1).bcd)
    assert res.converged
    for i, g in enumerate(res.model.subs):
        others = [s for j, s in enumerate(res.model.subs) if j != i]
        y_tilde = residual_output(y, u, H, others, [])
        assert np.max(np.abs(first_order_optimality(pack_theta(g), y_tilde, u, H))) < 1e-4


def test_block_order_barely_matters():
    rng, u, _, y = _case1(20)
    init = perturb_model(TRUTH, 0.10, rng)
    a = bcd_fit(y, u, H, S22, init, case_config(1).bcd)
    b = bcd_fit(y, u, H, S22, AdditiveModel(init.subs[::-1]), case_config(1).bcd)
    assert abs(a.cost - b.cost) / a.cost < 0.01


def test_minimal_budget():
    rng, u, _, y = _case1(5, N=3000)
    res = bcd_fit(y, u, H, S22, perturb_model(TRUTH, 0.1, rng), BcdConfig(max_outer=1, max_inner=1))
    assert res.outer_iters_used == 1 and len(res.x_trace) == 2
    assert all(k <= 1 for k in res.inner_iters[0])
    assert len(res.cost_trace) == 1 + sum(res.accepted[0])


def test_rejects_mismatched_init_and_short_data():
    _, u, _, y = _case1(6, N=3000)
    with pytest.raises(StructureError):
        bcd_fit(y, u, H, StructureSpec(((2, 1), (2, 0))), TRUTH)
    with pytest.raises(StructureError):
        bcd_fit(y[:6], u[:6], H, S22, TRUTH)


def test_all_blocks_singular_is_fatal():
    y = np.random.default_rng(0).normal(size=500)
    with pytest.raises(EstimationError, match="block"):
        bcd_fit(y, np.zeros(500), H, S22, TRUTH)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.3), st.integers(1, 4), st.integers(1, 5))
def test_descent_property(seed, frac, outer, inner):
    rng = np.random.default_rng(seed)
    N = 2000
    u = rng.normal(size=N)
    y = simulate_model(TRUTH, u, H) + rng.normal(size=N)
    init = perturb_model(TRUTH, frac, rng)
    res = bcd_fit(y, u, H, S22, init, BcdConfig(max_outer=outer, max_inner=inner))
    assert np.all(np.diff(res.cost_trace) < 0)
    assert res.cost_trace[0] == pytest.approx(cost_vn(init, y, u, H), rel=1e-12)
    assert res.cost <= res.cost_trace[0]


# --- parsimony ---------------------------------------------------------------------


def test_parsimony_example():
    rep = parsimony_excess(S22)
    assert (rep.r, rep.excess, rep.additive_params, rep.unfactored_params) == (2, 1, 6, 7)
    assert rep.lacks_parsimony


def test_parsimony_single_block():
    for n in range(1, 5):
        for m in range(n + 1):
            assert parsimony_excess([(n, m)]).excess == 0


def test_parsimony_case2():
    rep = parsimony_excess([(2, 0)] * 8)
    assert (rep.excess, rep.additive_params, rep.unfactored_params) == (7, 24, 31)


def _brute_force(pairs):
    # count coefficients by listing them
    additive = sum(len([f"a{k}" for k in range(1, n + 1)]) + len([f"b{k}" for k in range(m + 1)]) for n, m in pairs)
    n = sum(p[0] for p in pairs)
    m = n - min(a - b for a, b in pairs)
    return additive, len(range(1, n + 1)) + len(range(m + 1))


def test_parsimony_exhaustive():
    single = [(n, m) for n in range(1, 5) for m in range(n + 1)]
    checked = 0
    for K in range(1, 5):
        for pairs in itertools.combinations_with_replacement(single, K):
            if sum(1 for n, m in pairs if n == m) > 1:
                continue
            rep = parsimony_excess(pairs)
            add, unf = _brute_force(pairs)
            assert (rep.additive_params, rep.unfactored_params) == (add, unf)
            assert rep.excess == unf - add
            checked += 1
    assert checked > 1000


# --- initialization ------------------------------------------------------------------


def test_init_from_unfactored_noise_free():
    _, u, x, _ = _case1(7, noise=0.0)
    model = initialize_from_unfactored(x, u, H, S22, lambda_svf=10.0)
    got = sorted(pack_theta(g).values.tolist() for g in model.subs)
    ref = sorted(pack_theta(g).values.tolist() for g in TRUTH.subs)
    for a, b in zip(got, ref):
        np.testing.assert_allclose(a, b, rtol=0.02)


def test_init_single_block_equals_srivc():
    rng = np.random.default_rng(8)
    u = rng.normal(size=4000)
    g = TransferFunction([3.0], [1.0, 0.25, 0.25])
    y = simulate_zoh(g, u, 0.01) + 0.3 * rng.normal(size=4000)
    st1 = StructureSpec(((2, 0),))
    model = initialize_from_unfactored(y, u, 0.01, st1, lambda_svf=10.0)
    tr = srivc_full(y, u, 0.01, 2, 0, BcdConfig().srivc, lambda_svf=10.0)
    assert model.subs[0] == tr.model


def test_init_case2_sections_stable():
    cfg = case_config(2)
    rng = np.random.default_rng(0)
    u = gen_input(cfg.input, cfg.N, cfg.h, rng)
    y = simulate_model(cfg.true_model, u, cfg.h) + rng.normal(0, 1.5, cfg.N)
    model = initialize_from_unfactored(y, u, cfg.h, cfg.structure, cfg.bcd, lambda_svf=cfg.init.lambda_svf)
    assert model.K == 8 and all(g.n == 2 for g in model.subs)
    assert all(is_stable(g) for g in model.subs)


def test_expanded_example_has_extra_parameter():
    tf = additive_to_unfactored(TRUTH)
    assert tf.n + tf.m + 1 == parsimony_excess(S22).unfactored_params
