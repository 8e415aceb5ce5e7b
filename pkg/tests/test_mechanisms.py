import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diprime.mechanisms import (
    BudgetLedger,
    PrivacyBudget,
    PrivacyError,
    ScoredOutcome,
    Sensitivity,
    Variant,
    exp_mechanism,
    exp_mechanism_pmf,
    laplace_from_uniform,
    ledger_total,
    permute_flip,
    permute_flip_pmf,
    permute_flip_pmf_bruteforce,
    sample_laplace,
)

scores_st = st.lists(st.floats(-20, 0, allow_nan=False), min_size=1, max_size=6)


# Laplace -------------------------------------------------------------------------

def test_laplace_moments_unit_scale(rng):
    x = sample_laplace(1.0, rng, size=10**6)
    assert abs(x.mean()) < 0.01
    assert abs(np.abs(x).mean() - 1.0) < 0.01


def test_laplace_variance(rng):
    x = sample_laplace(0.5, rng, size=10**6)
    assert abs(x.var() - 0.5) < 0.02


def test_laplace_inverse_cdf_median_is_zero():
    assert laplace_from_uniform(0.5, 3.0) == 0.0


def test_laplace_inverse_cdf_matches_scipy():
    from scipy.stats import laplace

    u = np.linspace(0.001, 0.999, 101)
    np.testing.assert_allclose(laplace_from_uniform(u, 2.0), laplace.ppf(u, scale=2.0), rtol=1e-12, atol=1e-12)


def test_laplace_seeded_determinism():
    a = sample_laplace(1.0, np.random.default_rng(5), size=10)
    b = sample_laplace(1.0, np.random.default_rng(5), size=10)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("scale", [0.0, -1.0, math.inf, math.nan])
def test_laplace_rejects_bad_scale(scale, rng):
    with pytest.raises(PrivacyError):
        sample_laplace(scale, rng)


# Exponential mechanism --------------------------------------------------------------

def test_em_equal_scores_follow_base_weights():
    cands = [ScoredOutcome("a", 1.0, 1.0), ScoredOutcome("b", 1.0, 3.0)]
    for eps in (0.0, 0.5, 7.0):
        np.testing.assert_allclose(exp_mechanism_pmf(cands, Sensitivity(1.0), eps), [0.25, 0.75], atol=1e-15)


def test_em_two_outcome_closed_form():
    p = exp_mechanism_pmf([0.0, -2.0], 1.0, 2.0)
    e = math.exp(-2.0)
    np.testing.assert_allclose(p, [1 / (1 + e), e / (1 + e)], rtol=1e-14)
    np.testing.assert_allclose(p, [0.8808, 0.1192], atol=1e-4)


def test_em_zero_epsilon_is_uniform():
    np.testing.assert_allclose(exp_mechanism_pmf([3.0, -1.0, 0.0], 1.0, 0.0), [1 / 3] * 3)


def test_em_single_candidate():
    assert exp_mechanism_pmf([-5.0], 1.0, 1.0).tolist() == [1.0]


def test_em_sampler_returns_outcome_ids(rng):
    cands = [ScoredOutcome("left", 0.0), ScoredOutcome("right", -100.0)]
    assert exp_mechanism(cands, 1.0, 10.0, rng) == "left"


def test_em_zero_weight_outcome_never_drawn(rng):
    draws = [exp_mechanism([0.0, 5.0, 0.0], 1.0, 1.0, rng, base_weights=[1.0, 0.0, 1.0]) for _ in range(2000)]
    assert 1 not in draws


def test_em_errors():
    with pytest.raises(PrivacyError):
        exp_mechanism_pmf([], 1.0, 1.0)
    with pytest.raises(PrivacyError):
        exp_mechanism_pmf([0.0, 1.0], 1.0, 1.0, base_weights=[0.0, 0.0])
    with pytest.raises(PrivacyError):
        exp_mechanism_pmf([0.0, 1.0], 0.0, 1.0)
    with pytest.raises(PrivacyError):
        Sensitivity(-1.0)


def test_em_sampler_total_variation(rng):
    scores = rng.uniform(-3, 0, 10)
    p = exp_mechanism_pmf(scores, 1.0, 2.0)
    draws = np.array([exp_mechanism(scores, 1.0, 2.0, rng) for _ in range(10**5)])
    freq = np.bincount(draws, minlength=10) / draws.size
    assert 0.5 * np.abs(freq - p).sum() < 0.02


@settings(max_examples=200, deadline=None)
@given(scores_st, st.floats(0.01, 10), st.floats(-50, 50))
def test_em_shift_invariance(scores, eps, c):
    a = exp_mechanism_pmf(scores, 1.0, eps)
    b = exp_mechanism_pmf([s + c for s in scores], 1.0, eps)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 0), st.floats(-1, 1)), min_size=1, max_size=6),
       st.floats(0.01, 10), st.lists(st.floats(0.01, 5), min_size=6, max_size=6))
def test_em_neighbour_ratio_bounded(pairs, eps, w):
    """Scores moving by at most the sensitivity change any probability by at most e^eps."""
    q = [a for a, _ in pairs]
    q2 = [a + d for a, d in pairs]
    weights = w[: len(q)]
    p = exp_mechanism_pmf(q, 1.0, eps, base_weights=weights)
    p2 = exp_mechanism_pmf(q2, 1.0, eps, base_weights=weights)
    assert np.all(p <= math.exp(eps) * p2 * (1 + 1e-9))
    assert np.all(p2 <= math.exp(eps) * p * (1 + 1e-9))


@settings(max_examples=100, deadline=None)
@given(scores_st, st.floats(0.01, 20), st.lists(st.floats(0.0, 5), min_size=6, max_size=6))
def test_em_pmf_normalised(scores, eps, w):
    weights = w[: len(scores)]
    if not any(x > 0 for x in weights):
        weights[0] = 1.0
    assert abs(exp_mechanism_pmf(scores, 1.0, eps, base_weights=weights).sum() - 1) < 1e-12


# Permute-and-flip ---------------------------------------------------------------------

def test_pfm_equal_scores_uniform(rng):
    k, n = 4, 10**5
    draws = np.array([permute_flip([1.0] * k, 1.0, 3.0, rng) for _ in range(n)])
    freq = np.bincount(draws, minlength=k) / n
    sigma = math.sqrt(0.25 * 0.75 / n)
    assert np.all(np.abs(freq - 0.25) <= 3 * sigma)


def test_pfm_single_outcome(rng):
    assert permute_flip([ScoredOutcome("only", -3.0)], 1.0, 1.0, rng) == "only"


def test_pfm_beats_em_on_two_outcomes():
    s = np.array([0.0, -4.0])
    pf = permute_flip_pmf(s, 1.0, 1.0)
    em = exp_mechanism_pmf(s, 1.0, 1.0)
    assert pf @ s >= em @ s
    # Two outcomes: PFM returns the loser only if it comes first and flips heads.
    assert pf[1] == pytest.approx(0.5 * math.exp(-2.0), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-6, 0), min_size=1, max_size=6), st.floats(0.0, 8))
def test_pfm_pmf_matches_permutation_enumeration(scores, eps):
    np.testing.assert_allclose(permute_flip_pmf(scores, 1.0, eps),
                               permute_flip_pmf_bruteforce(scores, 1.0, eps), atol=1e-10)


def test_pfm_sampler_matches_pmf(rng):
    s = np.array([0.0, -1.0, -2.0, -0.5, -3.0])
    p = permute_flip_pmf(s, 1.0, 2.0)
    draws = np.array([permute_flip(s, 1.0, 2.0, rng) for _ in range(50_000)])
    freq = np.bincount(draws, minlength=5) / draws.size
    assert 0.5 * np.abs(freq - p).sum() < 0.02


def test_pfm_large_epsilon_picks_argmax(rng):
    s = [-1.0, 0.0, -0.001, -5.0]
    assert all(permute_flip(s, 1.0, 1e6, rng) == 1 for _ in range(500))


@settings(max_examples=100, deadline=None)
@given(scores_st, st.floats(0.01, 10), st.floats(-50, 50))
def test_pfm_shift_invariance(scores, eps, c):
    np.testing.assert_allclose(permute_flip_pmf(scores, 1.0, eps),
                               permute_flip_pmf([x + c for x in scores], 1.0, eps), rtol=1e-9, atol=1e-12)


def test_pfm_ignores_base_weights():
    a = permute_flip_pmf([ScoredOutcome(0, 0.0, 1.0), ScoredOutcome(1, -1.0, 50.0)], 1.0, 1.0)
    b = permute_flip_pmf([0.0, -1.0], 1.0, 1.0)
    np.testing.assert_allclose(a, b)


# Budgets and ledgers -------------------------------------------------------------------

def test_ledger_sequential_and_parallel():
    led = BudgetLedger()
    led.spend("a", 1)
    led.spend("b", 2)
    assert ledger_total(led) == 3
    par = BudgetLedger()
    for i in range(3):
        par.spend_parallel("g", f"node {i}", 0.5)
    assert par.total() == 0.5


def test_ledger_tree_shaped_total():
    led = BudgetLedger()
    for depth in range(5):
        for node in range(2 ** depth):
            led.spend_parallel(f"depth {depth}", str(node), 0.2)
    for leaf in range(32):
        led.spend_parallel("leaves", str(leaf), 1.0)
    assert led.total() == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("variant", [Variant.RANDOM_ATTR, Variant.EXP, Variant.FLIP])
@pytest.mark.parametrize("eps,rho,d", [(1.0, 0.5, 3), (10.0, 0.1, 7), (0.3, 0.9, 1), (2.0, 0.5, 5)])
def test_budget_decomposition(variant, eps, rho, d):
    b = PrivacyBudget(eps, rho, d, variant)
    assert abs(b.epsilon_leaf + d * (b.epsilon_split + b.epsilon_attr) - eps) <= 1e-12
    if variant is Variant.RANDOM_ATTR:
        assert b.epsilon_attr == 0 and b.epsilon_split == pytest.approx(rho * eps / d)
    else:
        assert b.epsilon_attr == b.epsilon_split == pytest.approx(rho * eps / (2 * d))


def test_budget_leaves_only():
    b = PrivacyBudget(2.0, 0.5, 4, Variant.LEAVES_ONLY)
    assert (b.epsilon_leaf, b.epsilon_split, b.epsilon_attr) == (2.0, 0.0, 0.0)


@pytest.mark.parametrize("kw", [dict(epsilon_total=-1, rho=0.5, d_max=2), dict(epsilon_total=1, rho=1.0, d_max=2),
                                dict(epsilon_total=1, rho=0.5, d_max=0), dict(epsilon_total=math.inf, rho=0.5, d_max=2)])
def test_budget_validation(kw):
    with pytest.raises(PrivacyError):
        PrivacyBudget(**kw)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 100), st.floats(0.01, 0.99), st.integers(1, 20), st.sampled_from(list(Variant)[:3]))
def test_budget_decomposition_property(eps, rho, d, variant):
    b = PrivacyBudget(eps, rho, d, variant)
    assert abs(b.epsilon_leaf + d * b.epsilon_level - eps) <= 1e-12 * max(1.0, eps)
