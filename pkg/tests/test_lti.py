import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctid.errors import RepeatedPolesError, SimulationOverflow, StructureError
from ctid.lti import (
    AdditiveModel,
    Polynomial,
    ThetaVector,
    TransferFunction,
    additive_to_unfactored,
    apply_operator_filter,
    filter_bank,
    impulse_response_zoh,
    is_stable,
    pack_theta,
    partial_fractions,
    poles,
    reflect_unstable,
    simulate_model,
    simulate_zoh,
    unpack_theta,
    zoh_discretize,
)

EQ5 = AdditiveModel(
    (
        TransferFunction([3.0], [1.0, 0.25, 0.25]),
        TransferFunction([1.0], [1.0, 0.01, 0.0025]),
    )
)


# --- polynomials and transfer functions ---------------------------------------


def test_polynomial_trims_and_zero():
    assert Polynomial([1.0, 2.0, 0.0, 0.0]).degree == 1
    z = Polynomial([0.0, 0.0])
    assert z.is_zero and z.degree == 0 and z.coeffs.tolist() == [0.0]


def test_polynomial_algebra_matches_numpy():
    a, b = Polynomial([1, 2, 3]), Polynomial([4, 5])
    np.testing.assert_allclose((a * b).coeffs, np.polynomial.polynomial.polymul(a.coeffs, b.coeffs))
    np.testing.assert_allclose((a + b).coeffs, [5, 7, 3])
    assert (a - a).is_zero
    assert a(2.0) == pytest.approx(1 + 4 + 12)


def test_from_roots_is_antimonic():
    p = Polynomial.from_roots([-2.0, -1 + 1j, -1 - 1j])
    assert p.coeffs[0] == pytest.approx(1.0)
    np.testing.assert_allclose(np.sort_complex(p.roots()), np.sort_complex([-2, -1 - 1j, -1 + 1j]), atol=1e-12)


def test_transfer_function_invariants():
    with pytest.raises(StructureError):
        TransferFunction([1.0], [2.0, 1.0])  # not anti-monic
    with pytest.raises(StructureError):
        TransferFunction([1.0, 1.0, 1.0], [1.0, 1.0])  # improper
    g = TransferFunction.normalized([2.0], [4.0, 2.0])
    assert g.den.coeffs.tolist() == [1.0, 0.5] and g.num.coeffs.tolist() == [0.5]
    with pytest.raises(StructureError):
        TransferFunction.normalized([1.0], [0.0, 1.0])


def test_coprime_check_rejects_common_root():
    # (p+1)/((p+1)(p+2)) anti-monic
    g = TransferFunction([1.0, 1.0], [1.0, 1.5, 0.5])
    with pytest.raises(StructureError):
        g.check_coprime()


def test_additive_model_rules():
    biproper = TransferFunction([1.0, 1.0], [1.0, 2.0])
    with pytest.raises(StructureError):
        AdditiveModel((biproper, biproper))
    with pytest.raises(StructureError):
        AdditiveModel((TransferFunction([1.0], [1.0, 1.0]),), ((2, 0),))
    shared = AdditiveModel((TransferFunction([1.0], [1.0, 1.0]), TransferFunction([2.0], [1.0, 1.0])))
    with pytest.raises(StructureError):
        shared.validate()
    EQ5.validate()


# --- theta packing ---------------------------------------------------------------


def test_pack_first_summand():
    assert pack_theta(EQ5.subs[0]).values.tolist() == [0.25, 0.25, 3.0]


def test_pack_smallest():
    assert pack_theta(TransferFunction([1.0], [1.0, 1.0])).values.tolist() == [1.0, 1.0]


def test_theta_rejects_zero_leading_and_length():
    with pytest.raises(StructureError):
        ThetaVector([1.0, 0.0, 3.0], 2, 0)
    with pytest.raises(StructureError):
        ThetaVector([1.0, 2.0], 2, 0)


def test_pack_pads_numerator():
    th = pack_theta(TransferFunction([2.0], [1.0, 0.3, 0.1]), m=1)
    assert th.values.tolist() == [0.3, 0.1, 2.0, 0.0]
    assert unpack_theta(th) == TransferFunction([2.0], [1.0, 0.3, 0.1])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pack_unpack_roundtrip(seed):
    rng = np.random.default_rng(seed)
    den = Polynomial.from_roots(-rng.uniform(0.2, 5.0, 3))
    num = rng.normal(size=2)
    num[-1] = num[-1] or 1.0
    tf = TransferFunction(num, den.coeffs)
    th = pack_theta(tf)
    assert (th.n, th.m) == (3, 1)
    assert unpack_theta(th) == tf


# --- additive <-> unfactored -------------------------------------------------------


def test_expand_example_model():
    tf = additive_to_unfactored(EQ5)
    np.testing.assert_allclose(tf.num.coeffs, [4, 0.28, 0.2575], atol=1e-12, rtol=0)
    np.testing.assert_allclose(tf.den.coeffs, [1, 0.26, 0.255, 0.003125, 0.000625], atol=1e-12, rtol=0)


def test_expand_single_is_identity():
    g = TransferFunction([1.0, 0.5], [1.0, 0.3, 0.2])
    assert additive_to_unfactored(AdditiveModel((g,))) == g


def _random_model(rng, K=3):
    subs = []
    for _ in range(K):
        wn, z = rng.uniform(0.5, 10), rng.uniform(0.05, 0.9)
        subs.append(TransferFunction([rng.uniform(0.5, 3), rng.uniform(-1, 1) / wn], [1, 2 * z / wn, 1 / wn**2]))
    return AdditiveModel(tuple(subs))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_expand_frequency_response_oracle(seed):
    rng = np.random.default_rng(seed)
    model = _random_model(rng)
    w = rng.uniform(0.01, 50, 20)
    ref = sum(g.freqresp(w) for g in model.subs)
    got = additive_to_unfactored(model).freqresp(w)
    assert np.max(np.abs(got - ref) / np.abs(ref)) < 1e-10


def test_partial_fractions_recovers_example():
    back = partial_fractions(additive_to_unfactored(EQ5), [(2, 0), (2, 0)])
    for g, ref in zip(back.subs, EQ5.subs):
        np.testing.assert_allclose(pack_theta(g).values, pack_theta(ref).values, rtol=1e-8)


def test_partial_fractions_hand_residues():
    # (p+2)/((p+1)(p+3)) = 0.5/(p+1) + 0.5/(p+3)
    tf = TransferFunction.normalized([2.0, 1.0], [3.0, 4.0, 1.0])
    out = partial_fractions(tf, [(1, 0), (1, 0)])
    got = sorted((g.den.coeffs[1], g.num.coeffs[0]) for g in out.subs)
    np.testing.assert_allclose(got, [(1 / 3, 1 / 6), (1.0, 0.5)], rtol=1e-12)


def test_partial_fractions_single_block_identity():
    g = TransferFunction([1.0, 0.5], [1.0, 0.3, 0.2])
    assert partial_fractions(g, [(2, 1)]).subs[0] == g


def test_partial_fractions_direct_term_and_errors():
    # 1 + 1/(p+1) = (p+2)/(p+1) -> biproper slot carries the direct term
    tf = TransferFunction.normalized([2.0, 1.0], [1.0, 1.0])
    out = partial_fractions(tf, [(1, 1)])
    assert out.subs[0] == tf
    rep = TransferFunction([1.0], [1.0, 2.0, 1.0])  # (p+1)^2
    with pytest.raises(RepeatedPolesError):
        partial_fractions(rep, [(1, 0), (1, 0)])
    with pytest.raises(StructureError):
        partial_fractions(additive_to_unfactored(EQ5), [(2, 0), (1, 0)])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_expand_then_split_roundtrip(seed):
    rng = np.random.default_rng(seed)
    model = _random_model(rng)
    ps = np.concatenate([poles(g) for g in model.subs])
    gaps = np.abs(ps[:, None] - ps[None, :]) + np.eye(ps.size) * 1e9
    if gaps.min() < 0.1:
        return
    back = partial_fractions(additive_to_unfactored(model), model.structure)
    # permutation-free comparison via sorted parameter stacks
    key = lambda m: sorted(tuple(pack_theta(g).values) for g in m.subs)
    for a, b in zip(key(back), key(model)):
        np.testing.assert_allclose(a, b, rtol=1e-7)


# --- poles ------------------------------------------------------------------------


def test_poles_quadratic():
    p = np.sort_complex(poles(EQ5.subs[0]))
    np.testing.assert_allclose(p, [-0.5 - 1.9364916731j, -0.5 + 1.9364916731j], atol=1e-6)


def test_reflect():
    g = TransferFunction([1.0], [1.0, 0.25, 0.25])
    assert reflect_unstable(g) == g
    bad = TransferFunction([1.0], [1.0, -0.5])
    fixed = reflect_unstable(bad)
    assert is_stable(fixed) and fixed.den.coeffs.tolist() == pytest.approx([1.0, 0.5])
    assert fixed.dc_gain() == bad.dc_gain()
    w = np.linspace(0.1, 10, 7)
    np.testing.assert_allclose(np.abs(fixed.freqresp(w)), np.abs(bad.freqresp(w)), rtol=1e-12)


# --- discretization and simulation ---------------------------------------------------


def test_zoh_first_order_closed_form():
    sys = zoh_discretize(TransferFunction([1.0], [1.0, 1.0]), 0.1)
    ad, bd = sys.A_d[0, 0], sys.B_d[0] * sys.C_d[0]
    assert abs(ad - np.exp(-0.1)) < 1e-12
    assert abs(bd - (1 - np.exp(-0.1))) < 1e-12
    assert sys.D_d == 0.0


def test_zoh_dc_gain_and_feedthrough():
    for g in (EQ5.subs[0], TransferFunction([2.0, 0.0, 3.0], [1.0, 0.5, 0.5])):
        sys = zoh_discretize(g, 0.05)
        assert abs(sys.freqresp(0.0) - g.dc_gain()) / abs(g.dc_gain()) < 1e-10
    assert zoh_discretize(TransferFunction([2.0, 0.0, 3.0], [1.0, 0.5, 0.5]), 0.05).D_d == pytest.approx(6.0)
    assert zoh_discretize(EQ5.subs[0], 0.05).D_d == 0.0


def test_zoh_matches_continuous_at_low_frequency():
    g = EQ5.subs[0]
    h = 0.001
    w = np.array([0.5, 2.0, 8.0, 10.0])  # w h <= 0.01
    d = zoh_discretize(g, h).freqresp(w)
    c = g.freqresp(w)
    # the hold adds a half-sample delay; beyond it the gap is second order
    assert np.all(np.abs(d - c) / np.abs(c) <= 0.5 * w * h * 1.01)
    assert np.max(np.abs(d - c * np.exp(-0.5j * w * h)) / np.abs(c)) < 1e-3


def test_step_response_closed_form():
    h, N = 0.05, 500
    y = simulate_zoh(TransferFunction([1.0], [1.0, 0.5]), np.ones(N), h)
    k = np.arange(N)
    assert np.max(np.abs(y - (1 - np.exp(-k * h / 0.5)))) < 1e-10


def test_zero_input_and_pure_gain():
    assert not simulate_zoh(EQ5.subs[1], np.zeros(50), 0.01).any()
    u = np.arange(5.0)
    np.testing.assert_array_equal(simulate_zoh(TransferFunction([3.0], [1.0]), u, 0.1), 3 * u)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_simulation_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    u1, u2 = rng.normal(size=(2, 400))
    g = EQ5.subs[0]
    lhs = simulate_zoh(g, a * u1 + b * u2, 0.01)
    rhs = a * simulate_zoh(g, u1, 0.01) + b * simulate_zoh(g, u2, 0.01)
    assert np.max(np.abs(lhs - rhs)) < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 50))
def test_simulation_time_invariant(seed, j):
    u = np.random.default_rng(seed).normal(size=300)
    g = TransferFunction([1.0, 0.2], [1.0, 0.3, 0.4])
    y = simulate_zoh(g, u, 0.02)
    ys = simulate_zoh(g, np.concatenate([np.zeros(j), u[:-j]]), 0.02)
    np.testing.assert_allclose(ys[j:], y[:-j], atol=1e-12)
    assert not ys[:j].any()


def test_overflow_reports_index():
    unstable = TransferFunction([1.0], [1.0, -0.01])  # pole at +100
    with pytest.raises(SimulationOverflow) as exc:
        simulate_zoh(unstable, np.ones(2000), 1.0)
    assert exc.value.index > 0


def test_simulate_model_is_sum():
    u = np.random.default_rng(0).normal(size=500)
    ref = simulate_zoh(EQ5.subs[0], u, 0.01) + simulate_zoh(EQ5.subs[1], u, 0.01)
    np.testing.assert_allclose(simulate_model(EQ5, u, 0.01), ref, atol=1e-12)


def test_operator_filter_cases():
    h, N = 0.05, 200
    den = Polynomial([1.0, 0.5])
    step = np.ones(N)
    k = np.arange(N)
    np.testing.assert_array_equal(apply_operator_filter(0, den, step, h), simulate_zoh(TransferFunction([1.0], den.coeffs), step, h))
    y1 = apply_operator_filter(1, den, step, h)
    assert np.max(np.abs(y1 - 2.0 * np.exp(-k * h / 0.5))) < 1e-9
    den2 = Polynomial([1.0, 0.3, 0.2])
    tail = apply_operator_filter(2, den2, np.ones(4000), h)[-1]
    assert abs(tail) < 1e-9 and abs(apply_operator_filter(1, den2, np.ones(4000), h)[-1]) < 1e-9
    with pytest.raises(StructureError):
        apply_operator_filter(3, den2, step, h)


def test_filter_bank_matches_individual_filters():
    u = np.random.default_rng(2).normal(size=600)
    den = Polynomial([1.0, 0.4, 0.3, 0.05])
    nums = [Polynomial.monomial(j) for j in range(4)]
    bank = filter_bank(nums, den, u, 0.02)
    for j in range(4):
        np.testing.assert_allclose(bank[:, j], apply_operator_filter(j, den, u, 0.02), atol=1e-12)


def test_high_order_realization_is_accurate():
    # 16th-order lightly damped chain: the discrete poles must be exp(h * continuous poles)
    w = np.geomspace(6, 470, 8)
    z = np.linspace(0.001, 0.0017, 8)
    den = Polynomial([1.0])
    for wi, zi in zip(w, z):
        den = den * Polynomial([1.0, 2 * zi / wi, 1 / wi**2])
    sys = zoh_discretize(TransferFunction([1.0], den.coeffs), 0.001)
    want = np.sort_complex(np.exp(0.001 * den.roots()))
    got = np.sort_complex(np.linalg.eigvals(sys.A_d))
    assert np.max(np.abs(got - want)) < 1e-8


def test_impulse_response_is_first_difference_of_step():
    g = EQ5.subs[0]
    h = 0.01
    imp = impulse_response_zoh(g, h, 300)
    u = np.zeros(300)
    u[0] = 1.0
    np.testing.assert_allclose(imp, simulate_zoh(g, u, h), atol=1e-14)
