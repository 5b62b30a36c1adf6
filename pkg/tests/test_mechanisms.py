import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from ldpc.errors import InfeasibleError, NumericalDegeneracyError
from ldpc.mechanisms import (
    EstimatorScales,
    PrivUnitParams,
    SubsetParams,
    as_cap_mechanism,
    calibrate_privunit,
    calibrate_ss,
    one_hot,
    params_from_json,
    params_to_json,
    privunit_estimate,
    privunit_scale,
    sample_privunit,
    sample_ss,
    ss_estimate,
    ss_in_probability,
    ss_scales,
)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def quad_scale(d, gamma, p):
    """E<z, x> from the inner-product density (1 - t^2)^((d-3)/2) by quadrature."""
    w = lambda t: (1 - t * t) ** ((d - 3) / 2)
    mass_in = integrate.quad(w, gamma, 1, epsabs=0, epsrel=1e-13)[0]
    mass_out = integrate.quad(w, -1, gamma, epsabs=0, epsrel=1e-13)[0]
    mom_in = integrate.quad(lambda t: t * w(t), gamma, 1, epsabs=0, epsrel=1e-13)[0]
    mom_out = integrate.quad(lambda t: t * w(t), -1, gamma, epsabs=0, epsrel=1e-13)[0]
    return p * mom_in / mass_in + (1 - p) * mom_out / mass_out


def ss_pmf_oracle(d, s, ee, x):
    """q(z|x) for every s-subset, straight from the two-level definition."""
    norm = math.comb(d - 1, s - 1) * ee + math.comb(d - 1, s)
    out = {}
    for c in itertools.combinations(range(d), s):
        out[c] = (ee if x in c else 1.0) / norm
    return out


# ----------------------------------------------------------- calibration


def test_branch_one_threshold_small_dimension():
    p = calibrate_privunit(2.0, 3, 0.5)
    expected = (math.e - 1) / (math.e + 1) * math.sqrt(math.pi / 4)
    assert p.gamma == pytest.approx(expected, rel=1e-12)
    assert p.gamma == pytest.approx(0.4095, abs=1e-4)
    assert p.branch == 1


def test_mu_one_gives_fair_coin():
    assert calibrate_privunit(3.0, 20, mu=1.0).p0 == 0.5


@pytest.mark.parametrize("eps,d", [(6.0, 500), (6.0, 100), (1.0, 500), (3.0, 10)])
def test_density_ratio_within_budget(eps, d):
    mech = as_cap_mechanism(calibrate_privunit(eps, d))
    assert mech.log_ratio <= eps + 1e-12
    assert mech.c1 >= mech.c2


def test_branch_two_used_when_feasible():
    # small d, large budget on the cap: the second condition allows a larger gamma
    p = calibrate_privunit(16.0, 20, mu=0.5)
    assert p.branch == 2
    assert p.gamma >= math.sqrt(2 / 20)


def test_two_dimensional_case_is_flagged():
    p = calibrate_privunit(1.0, 2)
    assert p.flagged


def test_calibration_rejects_bad_arguments():
    with pytest.raises(ValueError):
        calibrate_privunit(-1.0, 10)
    with pytest.raises(ValueError):
        calibrate_privunit(1.0, 1)
    with pytest.raises(ValueError):
        calibrate_privunit(1.0, 10, mu=1.5)


def test_calibration_infeasible_reported():
    # d=2 with a large cap budget: both conditions fail
    with pytest.raises(InfeasibleError):
        calibrate_privunit(12.0, 2, mu=1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 10.0), st.integers(3, 600), st.floats(0.05, 0.95))
def test_calibration_invariants(eps, d, mu):
    p = calibrate_privunit(eps, d, mu)
    mech = as_cap_mechanism(p)
    assert 0 < p.gamma < 1
    assert p.p0 == pytest.approx(1 / (1 + math.exp(-(1 - mu) * eps)))
    assert mech.log_ratio <= eps + 1e-12
    assert mech.cap_mass >= mech.c2 / (2 * mech.c1)
    assert privunit_scale(p).m > 0


# --------------------------------------------------------------- scales


def test_symmetric_mechanism_has_zero_scale():
    p = PrivUnitParams(eps=1.0, d=3, mu=0.5, gamma=0.0, p0=0.5)
    assert privunit_scale(p).m == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize(
    "d,gamma,p0",
    [(3, 0.40954066747750706, math.e / (1 + math.e)), (10, 0.2653, 0.8), (50, 0.1, 0.9), (200, 0.05, 0.95)],
)
def test_privunit_scale_matches_quadrature(d, gamma, p0):
    p = PrivUnitParams(eps=1.0, d=d, mu=0.5, gamma=gamma, p0=p0)
    assert privunit_scale(p).m == pytest.approx(quad_scale(d, gamma, p0), rel=1e-8)


def test_privunit_scale_closed_form_three_dims():
    # d=3, gamma=0: m = (2 p0 - 1) / 2
    p = PrivUnitParams(eps=1.0, d=3, mu=0.5, gamma=0.0, p0=0.9)
    assert privunit_scale(p).m == pytest.approx(0.4, rel=1e-13)


def test_scale_degenerate_cap_raises():
    p = PrivUnitParams(eps=1.0, d=10, mu=0.5, gamma=1.0, p0=0.9)
    with pytest.raises(NumericalDegeneracyError):
        privunit_scale(p)


def test_privunit_scale_monte_carlo():
    p = calibrate_privunit(4.0, 10)
    x = unit(np.arange(1, 11))
    rng = np.random.default_rng(5)
    t = sample_privunit(np.tile(x, (1_000_000, 1)), p, rng) @ x
    se = t.std() / 1000
    assert abs(t.mean() - privunit_scale(p).m) <= 4 * se


# -------------------------------------------------------------- samplers


def test_certain_cap_choice_always_in_cap():
    p = PrivUnitParams(eps=1.0, d=8, mu=0.5, gamma=0.3, p0=1.0)
    x = unit(np.ones(8))
    z = sample_privunit(np.tile(x, (5000, 1)), p, np.random.default_rng(1))
    assert np.all(z @ x >= 0.3)


def test_in_cap_frequency_three_dims():
    p = calibrate_privunit(2.0, 3)
    x = unit([1.0, -2.0, 0.5])
    z = sample_privunit(np.tile(x, (100_000, 1)), p, np.random.default_rng(2))
    freq = np.mean(z @ x >= p.gamma)
    assert abs(freq - p.p0) <= 4 * math.sqrt(p.p0 * (1 - p.p0) / 100_000)


@pytest.mark.parametrize("d", [3, 10, 60])
def test_conditional_inner_product_law(d):
    p = calibrate_privunit(3.0, d)
    x = unit(np.linspace(-1, 1, d) + 0.1)
    z = sample_privunit(np.tile(x, (20_000, 1)), p, np.random.default_rng(d))
    t = z @ x
    a = (d - 1) / 2
    tau = (1 + p.gamma) / 2
    beta = stats.beta(a, a)
    lo = beta.cdf(tau)

    u_in = (1 + t[t >= p.gamma]) / 2
    res = stats.kstest(u_in, lambda u: (beta.cdf(u) - lo) / (1 - lo))
    assert res.pvalue > 0.01
    u_out = (1 + t[t < p.gamma]) / 2
    res = stats.kstest(u_out, lambda u: beta.cdf(u) / lo)
    assert res.pvalue > 0.01


def test_privunit_outputs_unit_norm():
    p = calibrate_privunit(2.0, 25)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2000, 25))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    z = sample_privunit(x, p, rng)
    assert np.max(np.abs(np.linalg.norm(z, axis=1) - 1)) <= 1e-9
    single = sample_privunit(x[0], p, rng)
    assert single.shape == (25,)


def test_estimate_inverse_scaling_and_norm():
    p = calibrate_privunit(3.0, 10)
    sc = privunit_scale(p)
    x = unit(np.arange(10.0) + 1)
    np.testing.assert_allclose(privunit_estimate(sc.m * x, sc), x, rtol=1e-14)
    z = sample_privunit(x, p, np.random.default_rng(0))
    assert np.linalg.norm(privunit_estimate(z, sc)) == pytest.approx(1 / sc.m, rel=1e-9)
    with pytest.raises(NumericalDegeneracyError):
        privunit_estimate(z, EstimatorScales(m=0.0))


@pytest.mark.parametrize(
    "eps,d,s",
    [(6.0, 500, 2), (1.0, 500, 135), (math.log(2), 3, 1), (0.6931, 3, 1)],
)
def test_subset_size(eps, d, s):
    assert calibrate_ss(eps, d).s == s


def test_subset_sampler_small_instance():
    p = calibrate_ss(math.log(2), 3)
    z = sample_ss(np.zeros(100_000, dtype=int), p, np.random.default_rng(4))
    idx = z.argmax(axis=1)
    for j, prob in enumerate([0.5, 0.25, 0.25]):
        freq = np.mean(idx == j)
        assert abs(freq - prob) <= 4 * math.sqrt(prob * (1 - prob) / 100_000)
    oracle = ss_pmf_oracle(3, 1, 2.0, 0)
    assert [oracle[(j,)] for j in range(3)] == pytest.approx([0.5, 0.25, 0.25])


def test_subset_full_weight():
    p = SubsetParams(eps=1.0, d=5, s=5)
    z = sample_ss(np.arange(5), p, np.random.default_rng(0))
    assert np.all(z == 1)


def test_subset_in_frequency():
    p = calibrate_ss(1.0, 30)
    x = 7
    z = sample_ss(np.full(100_000, x), p, np.random.default_rng(8))
    q = ss_in_probability(p)
    assert abs(z[:, x].mean() - q) <= 4 * math.sqrt(q * (1 - q) / 100_000)
    assert np.all(z.sum(axis=1) == p.s)


def test_subset_empirical_pmf_four_symbols():
    p = calibrate_ss(1.0, 4)
    n = 1_000_000
    z = sample_ss(np.full(n, 2), p, np.random.default_rng(9))
    oracle = ss_pmf_oracle(4, p.s, math.e, 2)
    keys = z @ (1 << np.arange(4))
    counts = np.bincount(keys, minlength=16)
    for combo, prob in oracle.items():
        k = sum(1 << i for i in combo)
        assert abs(counts[k] / n - prob) <= 4 * math.sqrt(prob * (1 - prob) / n)
    assert sum(counts[sum(1 << i for i in c)] for c in oracle) == n


def test_subset_sampler_rejects_bad_symbol():
    with pytest.raises(ValueError):
        sample_ss(5, calibrate_ss(1.0, 5), np.random.default_rng(0))


def test_ss_scales_small_instance():
    sc = ss_scales(calibrate_ss(math.log(2), 3))
    assert sc.m == pytest.approx(0.25, abs=1e-15)
    assert sc.b == pytest.approx(0.25, abs=1e-15)
    # marginal identity q_x = m * 1 + b with q_x = 1/2
    assert sc.m + sc.b == pytest.approx(0.5)


def test_ss_scales_no_budget():
    assert ss_scales(SubsetParams(eps=0.0, d=10, s=5)).m == 0.0


@pytest.mark.parametrize("eps,d", [(6.0, 500), (1.0, 500), (3.0, 17), (0.5, 4)])
def test_ss_scales_marginal_identity(eps, d):
    p = calibrate_ss(eps, d)
    sc = ss_scales(p)
    s, ee = p.s, math.exp(eps)
    assert sc.m + sc.b == pytest.approx(s * ee / (s * ee + d - s), abs=1e-12)


def test_ss_estimate_exact_expectation():
    p = calibrate_ss(math.log(2), 3)
    sc = ss_scales(p)
    oracle = ss_pmf_oracle(3, 1, 2.0, 0)
    total = np.zeros(3)
    for combo, prob in oracle.items():
        z = np.zeros(3)
        z[list(combo)] = 1
        total += prob * ss_estimate(z, sc)
    np.testing.assert_allclose(total, one_hot(0, 3), atol=1e-12)


def test_ss_estimate_offsets():
    sc = EstimatorScales(m=0.3, b=0.2)
    assert ss_estimate(np.array([0.2, 1.0]), sc)[0] == 0.0
    p = calibrate_ss(2.0, 12)
    sc = ss_scales(p)
    z = sample_ss(np.arange(12), p, np.random.default_rng(0))
    sums = ss_estimate(z, sc).sum(axis=1)
    np.testing.assert_allclose(sums, (p.s - 12 * sc.b) / sc.m, rtol=1e-12)
    with pytest.raises(NumericalDegeneracyError):
        ss_estimate(z, EstimatorScales(m=0.0))


@pytest.mark.parametrize("d,eps", [(3, math.log(2)), (4, 1.0), (5, 0.7), (5, 2.0)])
def test_raw_subset_selection_exact_ratio(d, eps):
    p = calibrate_ss(eps, d)
    pmfs = [ss_pmf_oracle(d, p.s, math.exp(eps), x) for x in range(d)]
    worst = max(a[c] / b[c] for a in pmfs for b in pmfs for c in a)
    assert math.log(worst) == pytest.approx(eps, abs=1e-12)
    mech = as_cap_mechanism(p)
    assert mech.log_ratio == pytest.approx(eps, abs=1e-12)
    # the two levels agree with the explicit pmf up to the uniform density
    assert mech.c1 / math.comb(d, p.s) == pytest.approx(pmfs[0][tuple(range(p.s))], rel=1e-12)


@pytest.mark.parametrize("eps", [1.0, 4.0])
def test_native_estimators_unbiased(eps):
    d, n = 10, 1_000_000
    rng = np.random.default_rng(int(eps * 10))
    pu = calibrate_privunit(eps, d)
    x = unit(np.arange(d) - 3.0)
    est = privunit_estimate(sample_privunit(np.tile(x, (n, 1)), pu, rng), privunit_scale(pu))
    se = est.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(est.mean(axis=0) - x) <= 5 * se)

    ss = calibrate_ss(eps, d)
    est = ss_estimate(sample_ss(np.full(n, 4), ss, rng), ss_scales(ss))
    se = est.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(est.mean(axis=0) - one_hot(4, d)) <= 5 * se)


# ------------------------------------------------------------ cap view


def test_cap_view_subset():
    p = calibrate_ss(math.log(2), 3)
    mech = as_cap_mechanism(p)
    assert mech.cap_mass == pytest.approx(1 / 3)
    assert mech.c1 / mech.c2 == pytest.approx(2.0, rel=1e-14)
    assert mech.contains(0, np.array([[1, 0, 0], [0, 1, 0]])).tolist() == [True, False]


def test_cap_view_privunit_three_dims():
    p = calibrate_privunit(2.0, 3)
    mech = as_cap_mechanism(p)
    xx = 1 - p.gamma**2
    assert mech.cap_mass == pytest.approx((1 - math.sqrt(1 - xx)) / 2, rel=1e-12)
    assert mech.cap_mass == pytest.approx(0.2952, abs=1e-4)
    assert mech.p_in() == pytest.approx(p.p0, rel=1e-12)


def test_cap_view_rejects_miscalibrated():
    bad = PrivUnitParams(eps=0.1, d=10, mu=0.5, gamma=0.6, p0=0.9)
    with pytest.raises(InfeasibleError):
        as_cap_mechanism(bad)


def test_region_samplers_respect_cap():
    rng = np.random.default_rng(12)
    pu = as_cap_mechanism(calibrate_privunit(2.0, 15))
    x = unit(np.ones(15))
    inside = rng.random(4000) < 0.5
    z = pu.sample_region(x, inside, rng)
    assert np.array_equal(pu.contains(x, z), inside)
    ss = as_cap_mechanism(calibrate_ss(1.0, 9))
    z = ss.sample_region(3, inside, rng)
    assert np.array_equal(ss.contains(3, z), inside)
    assert np.all(z.sum(axis=1) == ss.s)


def test_reference_samplers():
    rng = np.random.default_rng(0)
    ss = as_cap_mechanism(calibrate_ss(2.0, 20))
    z = ss.sample_reference(rng, 50_000)
    assert np.all(z.sum(axis=1) == ss.s)
    freq = z.mean(axis=0)
    q = ss.s / 20
    assert np.all(np.abs(freq - q) <= 4 * math.sqrt(q * (1 - q) / 50_000))
    pu = as_cap_mechanism(calibrate_privunit(2.0, 7))
    g = pu.sample_reference(rng, 1000)
    assert np.max(np.abs(np.linalg.norm(g, axis=1) - 1)) <= 1e-12


@pytest.mark.parametrize(
    "params",
    [calibrate_privunit(3.0, 40, mu=0.3), calibrate_ss(2.0, 40)],
)
def test_json_round_trip(params):
    back = params_from_json(params_to_json(params))
    assert back.to_dict() == params.to_dict()
    assert set(params.to_dict()) == {"kind", "eps", "d", "mu", "gamma", "p0", "s"}


def test_json_unknown_kind():
    with pytest.raises(ValueError):
        params_from_json('{"kind": "rappor"}')
