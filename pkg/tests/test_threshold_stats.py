import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom, norm

from chainmarks.errors import ChainMarksError, InvalidParameter, NoThreshold, UndefinedUtility
from chainmarks.signature_codec import LabelSequence
from chainmarks.threshold_stats import (
    ClassDistribution,
    ThresholdDecision,
    decide_threshold,
    estimate_distribution,
    estimate_phase1,
    estimate_phase2,
    exact_tail,
    exact_tails,
    guessing_attack_sim,
    marginal_utility,
    normal_tail,
    normal_tails,
    normalize_distribution,
    poisson_binomial_pmf,
    random_seed,
    sigma_prime,
)
from chainmarks.trigger_chain import InputShape, generate_chain

from conftest import ConstantOracle, ThresholdOracle

UNIFORM10 = ClassDistribution.from_probs(np.full(10, 0.1))

# binom.isf-style inversion of the Binomial(100, 0.1) upper tail, computed
# with scipy.stats.binom.sf before the threshold code existed
UNIFORM_L100_M_MIN = {1e-7: 29, 1e-4: 24, 1e-2: 19}


def _labels(C, digits):
    return LabelSequence(C, tuple(digits))


def _brute_force_pmf(p):
    pmf = np.zeros(len(p) + 1)
    for outcome in itertools.product((0, 1), repeat=len(p)):
        w = 1.0
        for hit, pi in zip(outcome, p):
            w *= pi if hit else 1 - pi
        pmf[sum(outcome)] += w
    return pmf


@given(st.lists(st.floats(0, 1), min_size=1, max_size=10))
@settings(max_examples=200)
def test_pmf_matches_enumeration(p):
    assert np.allclose(poisson_binomial_pmf(p), _brute_force_pmf(p), atol=1e-12, rtol=0)


def test_uniform_tail_matches_binomial():
    labels = _labels(10, [i % 10 for i in range(100)])
    tails = exact_tails(UNIFORM10, labels)
    ref = binom.sf(np.arange(101) - 1, 100, 0.1)
    assert np.allclose(tails, ref, rtol=1e-9, atol=1e-300)
    assert tails[0] == 1.0


@pytest.mark.parametrize("p_target,m_min", sorted(UNIFORM_L100_M_MIN.items()))
def test_uniform_threshold_oracle(p_target, m_min):
    labels = _labels(10, [3] * 100)
    d = decide_threshold(UNIFORM10, labels, p_target)
    assert d.m_min == m_min
    assert d.theta == pytest.approx(1 - m_min / 100)
    assert d.tail_at_m_min <= p_target < d.tail_below


@given(
    st.lists(st.floats(0.001, 1), min_size=2, max_size=12),
    st.lists(st.integers(0, 11), min_size=1, max_size=60),
    st.floats(1e-9, 0.5),
)
@settings(max_examples=200, deadline=None)
def test_threshold_brackets_p_target(weights, digits, p_target):
    C = len(weights)
    dist = ClassDistribution.from_probs(np.asarray(weights) / np.sum(weights))
    labels = _labels(C, [d % C for d in digits])
    try:
        d = decide_threshold(dist, labels, p_target)
    except NoThreshold as exc:
        assert exc.tail_at_L > p_target
        return
    tails = exact_tails(dist, labels)
    assert tails[d.m_min] <= p_target
    assert d.m_min == 0 or tails[d.m_min - 1] > p_target


def test_threshold_rejects_bad_p():
    for p in (0.0, 1.0, -1e-3):
        with pytest.raises(InvalidParameter):
            decide_threshold(UNIFORM10, _labels(10, [0] * 5), p)


def test_no_threshold_when_too_short():
    with pytest.raises(NoThreshold):
        decide_threshold(UNIFORM10, _labels(10, [1, 2]), 1e-4)


def test_exact_tail_bounds():
    labels = _labels(10, [0] * 5)
    assert exact_tail(UNIFORM10, labels, 0).probability == 1.0
    assert exact_tail(UNIFORM10, labels, 5).probability == pytest.approx(1e-5)
    with pytest.raises(InvalidParameter):
        exact_tail(UNIFORM10, labels, 6)


def test_normal_tail_formula():
    labels = _labels(10, list(range(10)) * 5)
    t = normal_tail(UNIFORM10, labels, 12)
    sigma = math.sqrt(50 * 0.1 * 0.9)
    ref = norm.cdf((50.5 - 5) / sigma) - norm.cdf((11.5 - 5) / sigma)
    assert t.probability == pytest.approx(ref, rel=1e-12)
    assert t.mu == pytest.approx(5.0) and t.mu_claim == 5.0
    assert t.sigma == pytest.approx(sigma, rel=1e-12)
    assert t.warning is None
    assert normal_tail(UNIFORM10, _labels(10, [1] * 5), 2).warning


def test_normal_tail_skewed_mu_is_sum_of_label_probs():
    dist = ClassDistribution.from_probs([0.5, 0.3, 0.2])
    labels = _labels(3, [0, 0, 1, 2] * 5)
    assert normal_tail(dist, labels, 8).mu == pytest.approx(5 * (0.5 + 0.5 + 0.3 + 0.2))
    assert normal_tail(dist, labels, 8).mu_claim == pytest.approx(20 / 3)


def test_normal_tail_degenerate_sigma():
    dist = ClassDistribution.from_probs([1.0, 0.0])
    labels = _labels(2, [0] * 20)
    assert normal_tail(dist, labels, 20).probability == 1.0
    assert normal_tail(ClassDistribution.from_probs([0.0, 1.0]), labels, 1).probability == 0.0


def _with_u(p_hit, U, p_U):
    probs = np.array(p_hit, dtype=float)
    probs[list(U)] = p_U / len(U)
    return ClassDistribution(len(probs), 0, np.zeros(len(probs), int), probs, tuple(U), p_U)


def test_sigma_prime_variants():
    dist = _with_u([0.5, 0.3, 0.18, 0, 0], (3, 4), 0.02)
    labels = _labels(5, [0, 1, 3, 3, 4, 2])
    p = dist.probs[list(labels.digits)]
    exact_sigma = math.sqrt(float(np.sum(p * (1 - p))))
    assert sigma_prime(dist, labels) == pytest.approx(exact_sigma, rel=1e-12)
    pooled = math.sqrt(float(np.sum(p) - np.sum(p[[0, 1, 5]] ** 2) - 0.02**2 / 2))
    assert sigma_prime(dist, labels, "pooled") == pytest.approx(pooled, rel=1e-12)
    assert sigma_prime(dist, labels, "pooled") >= sigma_prime(dist, labels)
    with pytest.raises(InvalidParameter):
        sigma_prime(dist, labels, "other")


def test_sigma_prime_pooled_variant_can_undershoot():
    # one U label but k = 4 classes: p_U^2/k exceeds (p_U/k)^2 * 1
    dist = _with_u([0.6, 0, 0, 0, 0], (1, 2, 3, 4), 0.4)
    labels = _labels(5, [1])
    p = 0.1
    assert sigma_prime(dist, labels, "pooled") < math.sqrt(p * (1 - p))


def test_sigma_prime_negative_radicand_raises():
    # no label in U, yet the single p_U^2/k term is still subtracted
    dist = _with_u([0.4, 0.0], (1,), 0.6)
    with pytest.raises(ChainMarksError):
        sigma_prime(dist, _labels(2, [0]), "pooled")


def test_phase1_counts_and_worker_independence():
    oracle = ThresholdOracle([0.5, 0.3, 0.2, 0.0])
    a = estimate_phase1(oracle, 20000, rng_seed=5)
    b = estimate_phase1(oracle, 20000, rng_seed=5, workers=3)
    assert np.array_equal(a.counts, b.counts)
    assert a.counts.sum() == 20000
    assert a.U == (3,)
    assert np.allclose(a.probs[:3], [0.5, 0.3, 0.2], atol=0.02)


def test_byte_probes_stay_on_grid():
    seen = []

    class Spy(ThresholdOracle):
        def predict(self, X):
            seen.append(X)
            return super().predict(X)

    oracle = Spy([0.5, 0.5], input_dim=4)
    dist = estimate_phase1(oracle, 1000, rng_seed=0, probe="bytes")
    X = np.concatenate(seen)
    assert np.array_equal(np.rint(X * 255) / 255, X)
    assert dist.probe == "bytes"
    assert ClassDistribution.from_json(dist.to_json()).probe == "bytes"
    with pytest.raises(InvalidParameter):
        estimate_phase1(oracle, 1000, rng_seed=0, probe="gauss")


def test_normal_approximation_error_at_short_length():
    # uniform p = 1/10, L = 20: the continuity-corrected normal tail is
    # off by several percent near the mean, well above one percent
    dist = UNIFORM10
    labels = _labels(10, [0] * 20)
    err = np.abs(normal_tails(dist, labels) - exact_tails(dist, labels))
    assert 0.03 < err.max() < 0.04


def test_phase1_parameter_checks():
    oracle = ThresholdOracle([0.5, 0.5])
    with pytest.raises(InvalidParameter):
        estimate_phase1(oracle, 0, 0)
    with pytest.raises(InvalidParameter):
        estimate_phase1(oracle, 1, 0)
    with pytest.warns(UserWarning):
        estimate_phase1(oracle, 50, 0)


def test_phase2_estimates_planted_mass():
    oracle = ThresholdOracle([0.99, 0.01])
    res = estimate_phase2(oracle, (1,), rng_seed=3, trials=200)
    assert not res.censored
    assert res.p_U == pytest.approx(0.01, rel=0.3)
    assert len(res.counts) == 200


def test_phase2_censoring():
    oracle = ConstantOracle(1, 3, label=0)
    res = estimate_phase2(oracle, (1, 2), rng_seed=0, trials=10, budget=1000)
    assert res.censored and res.p_U == 1e-3 and res.trials == 1
    assert estimate_phase2(oracle, (), 0).p_U == 0.0


def test_normalize_sums_to_one():
    partial = ClassDistribution(4, 1000, np.array([600, 400, 0, 0]), np.array([0.6, 0.4, 0, 0]), (2, 3))
    full = normalize_distribution(partial, 0.01)
    assert math.fsum(full.probs) == pytest.approx(1.0, abs=1e-15)
    assert full.probs[2] == full.probs[3] == 0.005
    assert full.probs[0] == pytest.approx(0.6 * 0.99)
    with pytest.raises(InvalidParameter):
        normalize_distribution(partial, 1.5)


def test_estimate_distribution_end_to_end():
    oracle = ThresholdOracle([0.7, 0.2999, 0.0001])
    dist = estimate_distribution(oracle, 3000, rng_seed=1, trials=30, budget=10**6)
    assert math.fsum(dist.probs) == pytest.approx(1.0, abs=1e-12)
    assert dist.phase2 is not None
    assert dist.N == 3000


def test_distribution_json_roundtrip():
    oracle = ThresholdOracle([0.7, 0.2999, 0.0001])
    dist = estimate_distribution(oracle, 3000, rng_seed=1, trials=30, budget=10**6)
    back = ClassDistribution.from_json(json.loads(json.dumps(dist.to_json())))
    assert back.fingerprint() == dist.fingerprint()
    assert back.U == dist.U and back.p_U == dist.p_U


def test_decision_json_roundtrip():
    d = decide_threshold(UNIFORM10, _labels(10, [0] * 100), 1e-4)
    assert ThresholdDecision.from_json(json.loads(json.dumps(d.to_json()))) == d


def test_marginal_utility():
    assert marginal_utility(1e-2, 0.8, 1e-4, 0.9) == pytest.approx(1000.0)
    with pytest.raises(UndefinedUtility):
        marginal_utility(1e-2, 0.9, 1e-4, 0.9)
    with pytest.raises(InvalidParameter):
        marginal_utility(1e-4, 0.8, 1e-2, 0.9)


def test_random_seed_deterministic():
    assert random_seed(1, 2) == random_seed(1, 2)
    assert random_seed(1, 2) != random_seed(1, 3)
    assert len(random_seed(1, 2)) == 32


def test_guessing_sim_constant_model():
    shape = InputShape((8,))
    oracle = ConstantOracle(8, 10, label=4)
    labels = _labels(10, [4, 4, 1, 4, 0])
    res = guessing_attack_sim(oracle, labels, 50, rng_seed=0, shape=shape)
    assert res.histogram[3] == 50
    assert res.acceptance_rate(3) == 1.0 and res.acceptance_rate(4) == 0.0


def test_guessing_sim_uses_hash_chains():
    shape = InputShape((2,))
    oracle = ThresholdOracle([0.5, 0.5], input_dim=2)
    labels = _labels(2, [0, 1, 1])
    res = guessing_attack_sim(oracle, labels, 20, rng_seed=9, shape=shape)
    res_w = guessing_attack_sim(oracle, labels, 20, rng_seed=9, shape=shape, workers=4)
    assert np.array_equal(res.histogram, res_w.histogram)
    manual = []
    for i in range(20):
        X = generate_chain(random_seed(9, i), shape, 3).features()
        manual.append(int(np.sum(oracle.predict(X) == [0, 1, 1])))
    assert np.array_equal(res.histogram, np.bincount(manual, minlength=4))
