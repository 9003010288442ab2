import itertools
import math

import numpy as np
import pytest

from bcexp.channel import BroadcastChannel, RatePair, bsc, make_binary_ensemble, make_degraded_bsc
from bcexp.errors import ConfigError
from bcexp.gallager import Mode, strong_exponent_t1, weak_exponent_t1
from bcexp.oracles import (CloudTypeSpec, EnumeratorModel, SatelliteTypeSpec, SmallCode,
                           binomial_fractional_moment, cloud_count_check, count_for_rate, decode_strong,
                           decode_weak, draw_small_code, exact_type_probability, moment_rate_check,
                           occupancy_check, root_contract_suite, round_to_type, simulate_small_code,
                           validation_suite)

ENS = make_binary_ensemble(0.1)


def test_fractional_moment_linear_case():
    m, p = 37, 0.21
    assert binomial_fractional_moment(EnumeratorModel(1, m, p, 1.0)) == pytest.approx(math.log(m * p), abs=1e-12)
    assert binomial_fractional_moment(EnumeratorModel(1, 2, 0.5, 1.0)) == pytest.approx(0.0, abs=1e-14)


def test_fractional_moment_direct_sum():
    m, p, s = 9, 0.3, 0.4
    direct = sum(math.comb(m, k) * p ** k * (1 - p) ** (m - k) * k ** s for k in range(1, m + 1))
    assert binomial_fractional_moment(EnumeratorModel(1, m, p, s)) == pytest.approx(math.log(direct), abs=1e-12)


def test_fractional_moment_against_two_case_rule():
    n = 12
    model = EnumeratorModel(n, 4096, math.exp(-0.4 * n), 0.5)
    rate = binomial_fractional_moment(model) / n
    first = (math.log(4096) - 0.4 * n) / n
    assert first > 0
    assert abs(rate - 0.5 * first) <= 0.15


def test_enumerator_model_validation():
    for bad in [(1, 0, 0.5, 0.5), (1, 3, 1.5, 0.5), (1, 3, 0.5, 1.5)]:
        with pytest.raises(ConfigError):
            EnumeratorModel(*bad)


def test_exact_type_probability_small_cases():
    assert exact_type_probability(1, [[1, 0]], np.eye(2)[:1]) == 0.0
    assert exact_type_probability(1, [[0, 1]], np.eye(2)[:1]) == -math.inf
    # two uses of BSC(0.3) from input 0, exactly one flip
    val = exact_type_probability(2, [[1, 1], [0, 0]], bsc(0.3))
    assert val == pytest.approx(math.log(2 * 0.3 * 0.7), abs=1e-14)


def test_exact_type_probability_completeness():
    kernel = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])
    rows = (3, 2)
    total = 0.0
    for a in itertools.product(range(4), repeat=3):
        if sum(a) != rows[0]:
            continue
        for b in itertools.product(range(3), repeat=3):
            if sum(b) != rows[1]:
                continue
            total += math.exp(exact_type_probability(5, [list(a), list(b)], kernel))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_exact_type_probability_rejects_bad_counts():
    with pytest.raises(ConfigError):
        exact_type_probability(3, [[1, 1]], bsc(0.1)[:1])
    with pytest.raises(ConfigError):
        exact_type_probability(2, [[1.5, 0.5]], bsc(0.1)[:1])


def test_round_to_type():
    counts = round_to_type([0.26, 0.24, 0.5], 10)
    assert counts.sum() == 10
    np.testing.assert_array_equal(counts, [3, 2, 5])
    np.testing.assert_array_equal(round_to_type([0.5, 0.5], 3), [2, 1])


def test_count_for_rate():
    assert count_for_rate(12, 0.0) == 1
    assert count_for_rate(10, math.log(2) / 10 * 5) == 32


def _positive_and_negative_specs():
    rng = np.random.default_rng(21)
    pos = neg = None
    while pos is None or neg is None:
        q = rng.dirichlet(np.ones(8)).reshape(2, 2, 2)
        r_y = float(rng.uniform(0.05, 0.7))
        rep = moment_rate_check(12, r_y, SatelliteTypeSpec(ENS.p_x_given_u, q), 1.0)
        if rep["first_moment_rate"] > 0.1 and pos is None:
            pos = (q, r_y)
        if rep["first_moment_rate"] < -0.1 and neg is None:
            neg = (q, r_y)
    return pos, neg


def test_moment_check_both_signs():
    (qp, rp), (qn, rn) = _positive_and_negative_specs()
    rep = moment_rate_check(12, rp, SatelliteTypeSpec(ENS.p_x_given_u, qp), 1.0)
    assert rep["gap"] <= 0.15
    rep = moment_rate_check(12, rn, SatelliteTypeSpec(ENS.p_x_given_u, qn), 0.5)
    assert rep["predicted_rate"] == rep["first_moment_rate"]
    assert rep["gap"] <= 0.15


def test_moment_check_reports_asymptotic_rule():
    # uniform satellites and a type on the n = 8 lattice: the margin is exactly R_y
    ens = make_binary_ensemble(0.5)
    q = np.full((2, 2, 2), 1 / 8)
    rep = moment_rate_check(8, 0.2, SatelliteTypeSpec(ens.p_x_given_u, q), 0.5)
    assert rep["margin"] == pytest.approx(0.2, abs=1e-14)
    assert rep["asymptotic_rate"] == pytest.approx(0.5 * rep["margin"])


def test_moment_check_blocklength_limit():
    q = np.full((2, 2, 2), 1 / 8)
    with pytest.raises(ConfigError):
        moment_rate_check(40, 0.1, SatelliteTypeSpec(ENS.p_x_given_u, q), 0.5)


def test_cloud_count_positive_concentrates():
    q = np.array([[0.25, 0.25], [0.25, 0.25]])
    rep = cloud_count_check(12, 0.6, CloudTypeSpec(ENS.p_u, q))
    assert rep["first_moment_rate"] > 0
    assert rep["concentration_mass"] >= 0.99
    assert rep["gap"] <= 0.15


def test_cloud_count_negative_single_hit():
    q = np.array([[0.5, 0.0], [0.0, 0.5]])
    rep = cloud_count_check(12, 0.2, CloudTypeSpec(ENS.p_u, q))
    assert rep["first_moment_rate"] < 0
    assert rep["gap"] <= 0.15
    assert rep["exact_rate"] == pytest.approx(rep["log_prob_one_rate"])


def test_cloud_count_single_cloud_is_deterministic():
    rep = cloud_count_check(6, 0.0, CloudTypeSpec(np.array([1.0, 0.0]), np.array([[0.5, 0.0], [0.5, 0.0]])))
    assert rep["m_count"] == 1
    assert rep["prob_one"] == pytest.approx(1.0, abs=1e-14)


def test_occupancy_positive_and_negative():
    quz = np.array([[0.25, 0.25], [0.25, 0.25]])
    qxz = np.einsum("uz,ux->xz", quz, ENS.p_x_given_u)
    rep = occupancy_check(12, 0.5, qxz, quz, ENS)
    assert rep["first_moment_rate"] > 0
    assert 0.9 <= rep["occupancy_probability"] <= 1.0
    assert rep["gap"] <= 0.15
    qxz_far = np.array([[0.0, 0.5], [0.5, 0.0]])
    quz_far = np.array([[0.5, 0.0], [0.0, 0.5]])
    rep = occupancy_check(12, 0.1, qxz_far, quz_far, ENS)
    assert rep["first_moment_rate"] < 0
    assert rep["gap"] <= 0.15
    assert rep["a_star"] == max(rep["n_exponent"], 0.0)


def test_occupancy_single_satellite():
    quz = np.array([[0.25, 0.25], [0.25, 0.25]])
    qxz = np.einsum("uz,ux->xz", quz, ENS.p_x_given_u)
    rep = occupancy_check(8, 0.0, qxz, quz, ENS)
    assert rep["m_count"] == 1
    # one draw: Pr(N = 1) is the hit probability itself
    assert rep["exact_rate"] == pytest.approx(rep["first_moment_rate"], abs=1e-12)


def test_occupancy_rejects_mismatched_margins():
    with pytest.raises(ConfigError):
        occupancy_check(8, 0.1, np.array([[0.5, 0.0], [0.5, 0.0]]), np.full((2, 2), 0.25), ENS)


def test_validation_battery_passes():
    out = validation_suite(n=12, seed=0, count=10)
    assert out["passed"]
    for name in ("moment", "cloud_count", "occupancy"):
        signs = [r["first_moment_rate"] > 0 for r in out[name]]
        assert sum(signs) == 5 and len(signs) == 10


def test_root_contract_battery():
    out = root_contract_suite(instances=30, seed=4)
    assert out["passed"]
    assert max(r["residual"] for r in out["instances"]) <= 1e-10


# --- Monte Carlo -----------------------------------------------------------------


def _noiseless_channel():
    return BroadcastChannel(np.eye(2)[:, :, None] * np.eye(2)[:, None, :])


def test_hand_built_distinct_code_decodes_without_error():
    rng = np.random.default_rng(0)
    clouds = np.array([[0, 0, 0, 0], [1, 1, 1, 1]])
    sats = np.array([[[0, 0, 0, 0], [0, 0, 1, 1]], [[1, 1, 1, 1], [1, 1, 0, 0]]])
    code = SmallCode(4, clouds, sats, ())
    ch = _noiseless_channel()
    with np.errstate(divide="ignore"):
        log_p1, log_p3 = np.log(ch.p1), np.log(ch.p3)
    for m in range(2):
        for i in range(2):
            word = sats[m, i]
            assert decode_strong(code, word, log_p1, rng) == (m, i)
            assert decode_weak(code, word, log_p3, rng) == m


def test_small_code_shape_validation():
    with pytest.raises(ConfigError):
        SmallCode(4, np.zeros((2, 3), dtype=int), np.zeros((2, 1, 4), dtype=int), ())


def test_codebook_size_limit():
    with pytest.raises(ConfigError):
        draw_small_code(14, RatePair(0.5, 0.5), ENS, np.random.default_rng(0))


def test_useless_channel_weak_error_rate():
    ch = BroadcastChannel(np.full((2, 2, 2), 0.25))
    res = simulate_small_code(6, RatePair(0.0, math.log(3) / 6), ENS, ch, 3000, seed=1)
    assert res["clouds"] == 3
    lo, hi = res["weak_interval"]
    assert lo <= 1 - 1 / 3 <= hi


def test_simulation_is_reproducible():
    ch = make_degraded_bsc(0.05, 0.3)
    a = simulate_small_code(8, RatePair(0.09, 0.09), ENS, ch, 500, seed=7)
    b = simulate_small_code(8, RatePair(0.09, 0.09), ENS, ch, 500, seed=7)
    c = simulate_small_code(8, RatePair(0.09, 0.09), ENS, ch, 500, seed=8)
    assert a == b
    assert (a["weak_errors"], a["strong_errors"]) != (c["weak_errors"], c["strong_errors"])


@pytest.mark.slow
def test_simulated_error_rates_respect_bounds_direction():
    ch = make_degraded_bsc(0.05, 0.3)
    rates = RatePair(0.09, 0.09)
    n = 8
    res = simulate_small_code(n, rates, ENS, ch, 100_000, seed=0)
    e_z = weak_exponent_t1(rates, ENS, ch.p3, Mode.ALPHA_EQ_MU).value
    e_y = strong_exponent_t1(rates, ENS, ch.p1).value
    assert -math.log(res["weak_error_rate"]) / n >= e_z - 0.3
    assert -math.log(res["strong_error_rate"]) / n >= e_y - 0.3
