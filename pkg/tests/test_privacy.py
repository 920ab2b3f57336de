import math

import numpy as np
import pytest

from privadapt.privacy import (
    DEFAULT_ALPHAS,
    DiscreteDistribution,
    NoiseSpec,
    PrivacyBudget,
    RdpCurve,
    best_dp,
    compose,
    compose_repeated,
    rdp_to_dp,
    renyi_divergence,
    sample_noise,
)


def _random_distribution(rng, n):
    w = rng.exponential(size=n) + 1e-3
    return DiscreteDistribution(w / w.sum())


class TestRenyiDivergence:
    def test_identical_distributions_are_zero(self):
        assert renyi_divergence([0.5, 0.5], [0.5, 0.5], 2.0) == 0.0

    def test_point_mass_against_uniform(self):
        # sum p^2 q^-1 = 1 * 2 = 2, so the divergence is log 2
        got = renyi_divergence([1.0, 0.0], [0.5, 0.5], 2.0)
        assert got == pytest.approx(math.log(2.0), abs=1e-12)

    def test_alpha_near_one_approaches_kl(self):
        p = np.array([0.9, 0.1])
        q = np.array([0.5, 0.5])
        kl = float(np.sum(p * np.log(p / q)))
        assert kl == pytest.approx(0.3681, abs=1e-4)
        assert renyi_divergence(p, q, 1.0001) == pytest.approx(kl, abs=1e-3)

    def test_zero_for_equal_random_distributions(self):
        rng = np.random.default_rng(7)
        for n in (2, 5, 17):
            p = _random_distribution(rng, n)
            assert renyi_divergence(p, p, 3.0) <= 1e-12

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(11)
        grid = [1.1, 1.5, 2.0, 4.0, 8.0, 32.0, 128.0]
        for _ in range(25):
            n = int(rng.integers(2, 9))
            p = _random_distribution(rng, n)
            q = _random_distribution(rng, n)
            vals = [renyi_divergence(p, q, a) for a in grid]
            for lo, hi in zip(vals, vals[1:]):
                assert hi >= lo - 1e-10

    def test_unmatched_support_is_infinite(self):
        assert renyi_divergence([0.5, 0.5], [1.0, 0.0], 2.0) == math.inf

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            renyi_divergence([1.0], [0.5, 0.5], 2.0)

    def test_alpha_at_most_one_raises(self):
        with pytest.raises(ValueError):
            renyi_divergence([0.5, 0.5], [0.5, 0.5], 1.0)

    def test_bad_distributions_rejected(self):
        with pytest.raises(ValueError):
            DiscreteDistribution(np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            DiscreteDistribution(np.array([1.2, -0.2]))


class TestRdpToDp:
    def test_zero_budget_with_unit_delta(self):
        budget = rdp_to_dp(2.0, 0.0, 1.0)
        assert budget.epsilon == 0.0
        assert budget.delta == 1.0

    def test_closed_form_small_alpha(self):
        budget = rdp_to_dp(2.0, 1.0, 1e-5)
        assert budget.epsilon == pytest.approx(1.0 + math.log(1e5), abs=1e-9)

    def test_closed_form_large_alpha(self):
        budget = rdp_to_dp(101.0, 1.0, 1e-5)
        assert budget.epsilon == pytest.approx(1.0 + math.log(1e5) / 100.0, abs=1e-9)

    def test_infinite_order_passes_pure_bound_through(self):
        assert rdp_to_dp(math.inf, 0.7, 1e-6).epsilon == 0.7

    def test_monotone_decreasing_in_delta(self):
        eps = [rdp_to_dp(4.0, 1.0, d).epsilon for d in (1e-8, 1e-5, 1e-2, 0.5)]
        assert eps == sorted(eps, reverse=True)

    def test_monotone_decreasing_in_alpha(self):
        eps = [rdp_to_dp(a, 1.0, 1e-5).epsilon for a in (1.5, 2.0, 8.0, 64.0, math.inf)]
        assert eps == sorted(eps, reverse=True)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            rdp_to_dp(1.0, 1.0, 1e-5)
        with pytest.raises(ValueError):
            rdp_to_dp(2.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            PrivacyBudget(-1.0, 0.5)


class TestCompose:
    def test_zero_is_identity(self):
        curve = RdpCurve(DEFAULT_ALPHAS, tuple(0.1 * a for a in DEFAULT_ALPHAS))
        composed = compose(RdpCurve.zero(), curve)
        assert composed.alphas == curve.alphas
        assert composed.eps == curve.eps

    def test_self_composition_doubles(self):
        curve = RdpCurve((2.0, 4.0, 8.0), (0.5, 1.0, 3.0))
        doubled = compose(curve, curve)
        assert doubled.eps == (1.0, 2.0, 6.0)

    def test_repeated_matches_loop(self):
        curve = RdpCurve((2.0, 4.0, math.inf), (0.25, 0.5, 2.0))
        acc = RdpCurve.zero(curve.alphas)
        for _ in range(9):
            acc = compose(acc, curve)
        fast = compose_repeated(curve, 9)
        assert acc.alphas == fast.alphas
        np.testing.assert_allclose(acc.eps, fast.eps, atol=1e-12)

    def test_commutative_and_associative(self):
        rng = np.random.default_rng(3)
        grids = [(1.5, 2.0, 8.0), (2.0, 4.0, 64.0), (1.25, 3.0, 8.0, 32.0)]
        curves = [
            RdpCurve(g, tuple(sorted(rng.exponential(size=len(g))))) for g in grids
        ]
        a, b, c = curves
        ab = compose(a, b)
        ba = compose(b, a)
        np.testing.assert_allclose(ab.eps, ba.eps, atol=1e-12)
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        np.testing.assert_allclose(left.eps, right.eps, atol=1e-12)

    def test_infinity_poisons_sums(self):
        bad = RdpCurve((2.0, 4.0), (math.inf, 1.0))
        out = compose(bad, RdpCurve((2.0, 4.0), (1.0, 1.0)))
        assert out.eps[0] == math.inf
        assert out.eps[1] == 2.0

    def test_pure_point_kept_only_when_shared(self):
        with_pure = RdpCurve((2.0, math.inf), (0.5, 1.0))
        without = RdpCurve((2.0,), (0.5,))
        assert compose(with_pure, with_pure).pure_eps() == 2.0
        assert compose(with_pure, without).pure_eps() is None

    def test_curve_validation(self):
        with pytest.raises(ValueError):
            RdpCurve((2.0, 2.0), (0.0, 0.0))
        with pytest.raises(ValueError):
            RdpCurve((0.5, 2.0), (0.0, 0.0))
        with pytest.raises(ValueError):
            RdpCurve((2.0,), (-1.0,))


class TestBestDp:
    def test_singleton(self):
        curve = RdpCurve((2.0,), (1.0,))
        result = best_dp(curve, 1e-5)
        assert result.budget.epsilon == pytest.approx(1.0 + math.log(1e5), abs=1e-9)
        assert result.alpha == 2.0

    def test_dominated_point_ignored(self):
        curve = RdpCurve((2.0, 3.0), (1.0, 100.0))
        assert best_dp(curve, 1e-5).alpha == 2.0

    def test_matches_exhaustive_scan(self):
        # Gaussian-mechanism-shaped curve: eps grows linearly with the order.
        alphas = tuple(float(a) for a in range(2, 65))
        sigma = 4.0
        curve = RdpCurve(alphas, tuple(a / (2.0 * sigma**2) for a in alphas))
        delta = 1e-5
        scan = min(e + math.log(1 / delta) / (a - 1) for a, e in zip(curve.alphas, curve.eps))
        result = best_dp(curve, delta)
        assert result.budget.epsilon == pytest.approx(scan, abs=1e-12)
        for a, e in zip(curve.alphas, curve.eps):
            assert result.budget.epsilon <= rdp_to_dp(a, e, delta).epsilon + 1e-12

    def test_empty_curve_rejected(self):
        with pytest.raises(ValueError):
            best_dp(RdpCurve((), ()), 1e-5)


class TestSampleNoise:
    def test_deterministic_given_seed(self):
        spec = NoiseSpec("laplace", 1.0)
        a = sample_noise(spec, (32,), np.random.default_rng(123))
        b = sample_noise(spec, (32,), np.random.default_rng(123))
        np.testing.assert_array_equal(a, b)

    def test_laplace_variance(self):
        draws = sample_noise(NoiseSpec("laplace", 2.0), 10**6, np.random.default_rng(0))
        assert float(np.var(draws)) == pytest.approx(8.0, rel=0.05)

    def test_gaussian_std(self):
        draws = sample_noise(NoiseSpec("gaussian", 3.0), 10**6, np.random.default_rng(1))
        assert float(np.std(draws)) == pytest.approx(3.0, rel=0.02)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            NoiseSpec("cauchy", 1.0)
        with pytest.raises(ValueError):
            NoiseSpec("laplace", 0.0)
