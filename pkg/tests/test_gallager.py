import math

import numpy as np
import pytest

from bcexp.channel import HierarchicalEnsemble, RatePair, bsc, make_binary_ensemble, make_degraded_bsc
from bcexp.errors import ZeroChannelPowerError
from bcexp.gallager import (GallagerParams, Mode, check_lambda_dominance, e0, f_abz, gallager74_strong,
                            gallager74_weak, gallager74_weak_direct, log_f, single_user_exponent,
                            strong_exponent_t1, strong_term1, strong_term2, weak_exponent_t1)

CH = make_degraded_bsc(0.05, 0.3)
ENS = make_binary_ensemble(0.1)


def cloud_sum(a, b, v, kernel, beta=0.1):
    """Plain-loop evaluation of sum_u P(u) [sum_x P(x|u) K(v|x)^(a/b)]^b on the binary ensemble."""
    total = 0.0
    for u in (0, 1):
        inner = 0.0
        for x in (0, 1):
            pxu = 1 - beta if x == u else beta
            inner += pxu * kernel[x][v] ** (a / b)
        total += 0.5 * inner ** b
    return total


def test_f_marginalizes_at_unit_parameters():
    for z in (0, 1):
        assert f_abz(1.0, 1.0, z, ENS, CH.p3) == pytest.approx(0.5, abs=1e-15)


def test_f_matches_direct_summation():
    # frozen from an independent loop over (u, x)
    assert f_abz(0.5, 0.8, 0, ENS, CH.p3) == pytest.approx(0.6935670896568538, abs=1e-12)
    assert f_abz(0.5, 0.8, 0, ENS, CH.p3) == pytest.approx(cloud_sum(0.5, 0.8, 0, bsc(0.3)), abs=1e-12)


def test_f_rejects_nonpositive_b():
    with pytest.raises(ValueError):
        f_abz(0.5, 0.0, 0, ENS, CH.p3)


def test_log_f_b_to_zero_limit():
    log_pu, log_pxu, log_w = np.log(ENS.p_u), np.log(ENS.p_x_given_u), np.log(CH.p3)
    lim = log_f(np.array([0.4]), np.array([0.0]), log_pu, log_pxu, log_w)
    near = log_f(np.array([0.4]), np.array([1e-7]), log_pu, log_pxu, log_w)
    np.testing.assert_allclose(lim, near, atol=1e-5)


def test_log_f_negative_power_on_zero_entry():
    noiseless = np.eye(2)
    with np.errstate(divide="ignore"):
        lw = np.log(noiseless)
    with pytest.raises(ZeroChannelPowerError):
        log_f(np.array([-0.5]), np.array([1.0]), np.log(ENS.p_u), np.log(ENS.p_x_given_u), lw)


def test_e0_zero_cases():
    assert e0(GallagerParams(0.0, 0.3, 1.0, 0.5), ENS, CH.p3) == pytest.approx(0.0, abs=1e-15)
    useless = bsc(0.5)
    rng = np.random.default_rng(11)
    for _ in range(20):
        rho, lam = rng.uniform(0, 1, 2)
        mu = rng.uniform(lam, 1)
        alpha = rng.uniform(1 - rho * lam, 1)
        assert e0(GallagerParams(rho, lam, alpha, mu), ENS, useless) == pytest.approx(0.0, abs=1e-14)


def test_e0_matches_direct_summation():
    p = GallagerParams(1.0, 0.5, 0.75, 0.75)
    direct = -math.log(sum(cloud_sum(0.5, 0.75, z, bsc(0.3)) * cloud_sum(0.5, 0.75, z, bsc(0.3)) for z in (0, 1)))
    assert e0(p, ENS, CH.p3) == pytest.approx(0.03734136939965022, abs=1e-12)
    assert e0(p, ENS, CH.p3) == pytest.approx(direct, abs=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        GallagerParams(1.0, 0.5, 0.4, 0.75)  # alpha below 1 - rho*lambda
    with pytest.raises(ValueError):
        GallagerParams(1.0, 0.8, 0.9, 0.7)  # lambda above mu
    with pytest.raises(ValueError):
        GallagerParams(1.5, 0.5, 0.9, 0.9)
    assert GallagerParams(1, 0.5, 0.75, 0.75).as_dict()["lambda"] == 0.5


def test_gallager74_mode_equals_direct_formula():
    rates = RatePair(0.01, 0.02)
    rep = weak_exponent_t1(rates, ENS, CH.p3, Mode.GALLAGER74)
    direct = gallager74_weak_direct(np.array([rep.argmax["rho"]]), rates.r_yz, ENS, CH.p3)[0]
    assert rep.value == pytest.approx(direct, abs=1e-12)
    assert gallager74_weak(rates, ENS, CH.p3).value == rep.value


def test_iid_mode_equals_single_user_weak_exponent():
    rates = RatePair(0.01, 0.02)
    rep = weak_exponent_t1(rates, ENS, CH.p3, Mode.IID)
    su = strong_term2(rates.total, np.array([rep.argmax["rho"]]), ENS.p_x, CH.p3)[0]
    assert rep.value == pytest.approx(su, abs=1e-12)


def test_mode_hierarchy():
    for rates in (RatePair(1e-4, 0.01), RatePair(0.05, 0.01), RatePair(0.02, 0.03)):
        vals = {m: weak_exponent_t1(rates, ENS, CH.p3, m).value for m in Mode}
        assert vals[Mode.FULL] >= vals[Mode.ALPHA_EQ_MU] - 1e-12
        assert vals[Mode.ALPHA_EQ_MU] >= vals[Mode.GALLAGER74] - 1e-12
        assert vals[Mode.ALPHA_EQ_MU] >= vals[Mode.IID] - 1e-12


def test_weak_exponent_vanishes_beyond_weak_capacity():
    # capacity of BSC(0.3) in nats; the common rate alone exceeds it
    cap = math.log(2) + 0.3 * math.log(0.3) + 0.7 * math.log(0.7)
    for r_y in (0.0, 0.1):
        rep = weak_exponent_t1(RatePair(r_y, cap + 0.01), ENS, CH.p3, Mode.FULL)
        assert 0.0 <= rep.value <= 1e-12


def test_strong_term1_cases():
    assert strong_term1(0.05, np.array([0.0]), ENS, CH.p1)[0] == pytest.approx(0.0, abs=1e-15)
    e_same = make_binary_ensemble(0.0)
    rho = np.linspace(0, 1, 5)
    np.testing.assert_allclose(strong_term1(0.05, rho, e_same, CH.p1), -rho * 0.05, atol=1e-14)
    # frozen from an independent loop: -0.05 - log sum_y f(1, 2, y)
    assert strong_term1(0.05, np.array([1.0]), ENS, CH.p1)[0] == pytest.approx(0.05707289095399126, abs=1e-12)


def test_strong_term2_closed_forms():
    rho = np.linspace(0, 1, 7)
    np.testing.assert_allclose(strong_term2(0.2, rho, np.array([0.5, 0.5]), np.eye(2)),
                               rho * math.log(2) - rho * 0.2, atol=1e-14)
    np.testing.assert_allclose(strong_term2(0.2, rho, np.array([0.5, 0.5]), bsc(0.5)), -rho * 0.2, atol=1e-14)
    assert single_user_exponent(0.2, np.array([0.5, 0.5]), bsc(0.5)) == 0.0


def test_single_user_exponent_bsc_critical_region():
    # below the critical rate the exponent is E0(1) - R
    e0_one = -math.log(0.5 * (math.sqrt(0.05) + math.sqrt(0.95)) ** 2)
    assert single_user_exponent(0.01, np.array([0.5, 0.5]), bsc(0.05)) == pytest.approx(e0_one - 0.01, abs=1e-12)


def test_strong_exponent_beyond_capacity_is_zero():
    rep = strong_exponent_t1(RatePair(0.3, 0.3), ENS, CH.p1)
    assert rep.value == 0.0


def test_strong_exponent_half_beta_matches_single_user():
    e_half = make_binary_ensemble(0.5)
    rates = RatePair(0.01, 0.02)
    rep = strong_exponent_t1(rates, e_half, CH.p1)
    assert rep.value == pytest.approx(single_user_exponent(rates.total, e_half.p_x, CH.p1), abs=1e-12)
    assert rep.branch == "full_codebook"


def test_gallager74_strong_not_above_new_bound():
    rates = RatePair(0.05, 0.005)
    assert gallager74_strong(rates, ENS, CH.p1).value <= strong_exponent_t1(rates, ENS, CH.p1).value + 1e-3
    rep = gallager74_strong(RatePair(0.05, 0.0), ENS, CH.p1)
    assert rep.diagnostics["cloud"] >= rep.diagnostics["intra_cloud"] - 1e-12


def test_lambda_dominance_property():
    rng = np.random.default_rng(5)
    for _ in range(100):
        rho = rng.uniform(0, 1)
        alpha = rng.uniform(0, 1)
        lam_lo = (1 - alpha) / rho if rho > 0 else 0.0
        lam = rng.uniform(lam_lo, alpha, size=4) if lam_lo < alpha else np.array([alpha])
        assert check_lambda_dominance(rho, alpha, lam, ENS, CH.p3)
    assert check_lambda_dominance(0.7, 0.8, [1 / 1.7], ENS, CH.p3, slack=0.0)
    assert check_lambda_dominance(0.7, 0.8, [0.3, 0.6], ENS, bsc(0.5), slack=1e-15)


def test_general_ensemble_three_letters():
    rng = np.random.default_rng(2)
    ens = HierarchicalEnsemble(rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(2), size=3))
    rates = RatePair(0.01, 0.01)
    full = weak_exponent_t1(rates, ens, CH.p3, Mode.FULL).value
    g74 = weak_exponent_t1(rates, ens, CH.p3, Mode.GALLAGER74).value
    assert full >= g74 - 1e-12
