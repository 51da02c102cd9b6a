"""Window likelihood, x0 prior and the BPSK / LFM prior structures."""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from conftest import tone_scenario
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from qlut import make_uniform_midriser
from qlut.likelihood import (NodeGrid, QuadratureSpec, bpsk_case2_ensemble, cond_prob_code,
                             gaussian_window_prob, gaussian_window_prob_erf, lfm_effective_prior,
                             likelihood_window, prior_x0, tone_validity_prob)
from qlut.signals import BpskParams, LfmParams, PriorSpec, ScenarioModel, ToneParams, known_prior


def direct_tone_likelihood(s, y, x0):
    """p(y | x0) for a known-parameter tone, written out from the model."""
    d, q = s.desired, s.quantizer
    N = len(y)
    n = np.arange(-N + 1, 1)
    phi = math.acos(np.clip(x0 / d.amplitude, -1, 1))
    total = 0.0
    for br in (phi, -phi):
        x = d.amplitude * np.cos(2 * np.pi * d.frequency * n + br)
        lo = q.thresholds[np.asarray(y) - 1] - x
        hi = q.thresholds[np.asarray(y)] - x
        lo, hi = lo / s.sigma, hi / s.sigma
        # upper-tail form where both edges are positive keeps tiny cells accurate
        cell = np.where(lo > 0, stats.norm.sf(lo) - stats.norm.sf(hi), stats.norm.cdf(hi) - stats.norm.cdf(lo))
        total += 0.5 * np.prod(cell)
    return total


class TestGaussianWindow:
    def test_total_mass(self):
        assert gaussian_window_prob(-np.inf, np.inf, 0.3) == 1.0

    def test_one_sigma(self):
        assert gaussian_window_prob(-0.5, 0.5, 0.5) == pytest.approx(math.erf(1 / math.sqrt(2)), abs=1e-15)

    def test_matches_numeric_integration(self):
        pdf = lambda t: stats.norm.pdf(t, scale=0.04)
        ref, _ = integrate.quad(pdf, 0.1, 0.3, epsabs=1e-14, epsrel=1e-13)
        assert gaussian_window_prob(0.1, 0.3, 0.04) == pytest.approx(ref, abs=1e-10)

    def test_indicator_limit(self):
        assert gaussian_window_prob(-1, 1, 0.0) == 1.0
        assert gaussian_window_prob(0, 1, 0.0) == 0.5
        assert gaussian_window_prob(0.5, 1, 0.0) == 0.0

    def test_bad_order(self):
        with pytest.raises(ValueError):
            gaussian_window_prob(1.0, 0.0, 0.1)

    @given(st.floats(-3, 3), st.floats(0, 3), st.floats(0.01, 2))
    def test_agrees_with_erf_form(self, a, w, sigma):
        assert gaussian_window_prob(a, a + w, sigma) == pytest.approx(
            gaussian_window_prob_erf(a, a + w, sigma), abs=1e-12)

    def test_far_tail_not_cancelled(self):
        # erf difference would round to 0 here
        p = gaussian_window_prob(10.0, 11.0, 1.0)
        assert p == pytest.approx(stats.norm.sf(10) - stats.norm.sf(11), rel=1e-9)


class TestCondProbCode:
    @given(st.floats(-3, 3), st.floats(0.001, 1), st.integers(1, 4))
    def test_partition(self, s, sigma, b):
        q = make_uniform_midriser(b)
        total = sum(cond_prob_code(q, k, s, sigma) for k in range(1, q.n_codes + 1))
        assert total == pytest.approx(1.0, abs=1e-14)

    def test_noiseless_indicator(self, q3):
        p = [cond_prob_code(q3, k, 0.12, 1e-12) for k in range(1, 9)]
        assert p == [0, 0, 0, 0, 1, 0, 0, 0]

    def test_monte_carlo(self, q3):
        rng = np.random.default_rng(0)
        hits = np.mean(q3.quantize(0.12 + rng.normal(0, 0.04, 1_000_000)) == 5)
        p = cond_prob_code(q3, 5, 0.12, 0.04)
        assert abs(hits - p) < 3 * math.sqrt(p * (1 - p) / 1_000_000)

    def test_code_range(self, q3):
        with pytest.raises(ValueError):
            cond_prob_code(q3, 9, 0.0, 0.1)


class TestLikelihoodWindow:
    def test_single_sample_is_cond_prob(self):
        s = tone_scenario(N=1)
        for x0, k in [(0.1, 5), (0.3, 6), (-0.8, 1)]:
            assert likelihood_window(s, np.array([k]), x0) == pytest.approx(
                cond_prob_code(s.quantizer, k, x0, s.sigma), rel=1e-12)

    @pytest.mark.parametrize("y", [(3, 3), (2, 4), (1, 2), (4, 4)])
    @pytest.mark.parametrize("x0", [-0.6, -0.2, 0.05, 0.5])
    def test_matches_direct_formula(self, y, x0):
        s = tone_scenario(bits=2, N=2)
        assert likelihood_window(s, np.array(y), x0) == pytest.approx(direct_tone_likelihood(s, y, x0),
                                                                      rel=1e-9, abs=1e-300)

    def test_outside_support_is_zero(self):
        s = tone_scenario(N=2)
        assert likelihood_window(s, np.array([4, 5]), 0.9) == 0.0

    def test_invalid_window(self):
        s = tone_scenario(N=2)
        with pytest.raises(ValueError, match="invalid window"):
            likelihood_window(s, np.array([4, 9]), 0.0)
        with pytest.raises(ValueError, match="invalid window"):
            likelihood_window(s, np.array([4, 4, 4]), 0.0)

    @pytest.mark.parametrize("b,N", [(1, 1), (1, 3), (2, 2), (2, 3)])
    def test_total_probability(self, b, N):
        q = make_uniform_midriser(b)
        d = ToneParams(1 - q.step / 2, np.pi / 10)
        prior = PriorSpec((0.4, 1 - q.step / 2), (0.05, 0.45), 0.16 * q.step)
        s = ScenarioModel(d, q, N, prior, prior.sigma)
        g = NodeGrid(s, QuadratureSpec(phase_nodes=16, frequency_nodes=16, amplitude_nodes=8))
        for x0 in (-0.6 * d.amplitude, 0.0, 0.4 * d.amplitude):
            total = sum(likelihood_window(s, np.array(y), x0, grid=g)
                        for y in itertools.product(range(1, q.n_codes + 1), repeat=N))
            assert total == pytest.approx(1.0, abs=1e-3)

    def test_interferer_total_probability(self):
        q = make_uniform_midriser(2)
        d = ToneParams(0.5, 0.1)
        z = ToneParams(0.6, 0.3)
        s = ScenarioModel(d, q, 2, known_prior(d, 0.08, z), 0.08, z)
        g = NodeGrid(s, QuadratureSpec(phase_nodes=16))
        total = sum(likelihood_window(s, np.array(y), 0.2, grid=g)
                    for y in itertools.product(range(1, 5), repeat=2))
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_monte_carlo_conditional_frequency(self):
        """Simulate windows given x0 exactly (random branch + noise) and compare."""
        s = tone_scenario(bits=2, N=2)
        d, q = s.desired, s.quantizer
        rng = np.random.default_rng(11)
        g = NodeGrid(s)
        trials = 400_000
        n = np.arange(-1, 1)
        for x0 in np.linspace(-0.7, 0.7, 5):
            phi = math.acos(x0 / d.amplitude) * rng.choice([-1, 1], size=trials)
            x = d.amplitude * np.cos(2 * np.pi * d.frequency * n + phi[:, None])
            codes = q.quantize(x + rng.normal(0, s.sigma, x.shape), rng)
            for y in itertools.product(range(1, 5), repeat=2):
                freq = np.mean(np.all(codes == y, axis=1))
                p = likelihood_window(s, np.array(y), x0, grid=g)
                assert abs(freq - p) <= 3 * math.sqrt(max(p * (1 - p), 1e-12) / trials) + 1e-6

    @given(st.floats(-0.74, 0.74), st.lists(st.integers(1, 4), min_size=3, max_size=3))
    def test_mirror_symmetry(self, x0, y):
        s = _sym_scenario()
        q = s.quantizer
        y = np.array(y)
        a = likelihood_window(s, y, x0, grid=_SYM_GRID)
        b = likelihood_window(s, q.mirror(y), -x0, grid=_SYM_GRID)
        assert a == pytest.approx(b, rel=1e-6, abs=1e-300)

    def test_case2_rows_forced_to_no_transition(self):
        q = make_uniform_midriser(3)
        d = BpskParams(0.5, 1 / 16 + np.pi / 1000, tau=20, offset=0)
        s = ScenarioModel(d, q, 4, known_prior(d, 0.04), 0.04)
        tone = NodeGrid(s, bpsk_mode="tone")
        exact = NodeGrid(s, bpsk_mode="exact")
        exact.flips = np.zeros_like(exact.flips)
        codes = np.array([[5, 6, 6, 5], [4, 4, 5, 6], [1, 3, 6, 8]])
        u = np.array([0.3, 1.2, 2.0])
        np.testing.assert_allclose(exact.loglik_points(u, codes), tone.loglik_points(u, codes), rtol=1e-12)

    def test_case2_differs_from_case1(self):
        q = make_uniform_midriser(3)
        d = BpskParams(0.5, 1 / 16 + np.pi / 1000, tau=20, offset=0)
        s = ScenarioModel(d, q, 4, known_prior(d, 0.04), 0.04)
        codes = np.array([[3, 3, 6, 6]])
        u = np.array([1.0])
        assert NodeGrid(s, bpsk_mode="exact").loglik_points(u, codes)[0] > \
            NodeGrid(s, bpsk_mode="tone").loglik_points(u, codes)[0]


_SYM_GRID = None


def _sym_scenario():
    global _SYM_GRID
    q = make_uniform_midriser(2)
    d = ToneParams(0.75, np.pi / 10)
    prior = PriorSpec((0.5, 0.75), (0.2, 0.35), 0.08)
    s = ScenarioModel(d, q, 3, prior, 0.08)
    if _SYM_GRID is None:
        _SYM_GRID = NodeGrid(s, QuadratureSpec(frequency_nodes=8, amplitude_nodes=8))
    return s


class TestPriorX0:
    def test_arcsine_center(self):
        p = prior_x0(PriorSpec((1, 1), (0.1, 0.1), 0))
        assert p(0.0) == pytest.approx(1 / math.pi)
        assert p(1.2) == 0.0

    @pytest.mark.parametrize("amp", [(1.0, 1.0), (0.5, 1.0), (0.0, 0.875), (0.2, 0.3)])
    def test_normalized_in_u(self, amp):
        p = prior_x0(PriorSpec(amp, (0.1, 0.1), 0))
        hi = amp[1]
        val, _ = integrate.quad(lambda u: p(hi * math.cos(u)) * hi * math.sin(u), 0, math.pi,
                                epsabs=1e-12, limit=200)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_interval_histogram(self):
        p = prior_x0(PriorSpec((0.5, 1.0), (0.1, 0.1), 0))
        rng = np.random.default_rng(3)
        n = 2_000_000
        x = rng.uniform(0.5, 1.0, n) * np.cos(rng.uniform(0, 2 * np.pi, n))
        edges = np.linspace(-1, 1, 41)
        counts, _ = np.histogram(x, edges)
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            mass, _ = integrate.quad(p, lo, hi, limit=200)
            assert abs(c / n - mass) <= 3 * math.sqrt(mass * (1 - mass) / n) + 1e-6


class TestToneValidity:
    def test_single_sample(self):
        assert tone_validity_prob(2, 1, 50) == 1.0
        assert tone_validity_prob(4, 1, 3) == 1.0

    def test_bpsk_spot_value(self):
        assert tone_validity_prob(2, 8, 50) == 0.93

    @given(st.integers(2, 8), st.integers(1, 60), st.integers(1, 60))
    def test_linear_form_below_tau(self, M, N, tau):
        if N > tau:
            return
        assert tone_validity_prob(M, N, tau) == pytest.approx(1 - (M - 1) / M * (N - 1) / tau, abs=1e-15)

    @given(st.integers(2, 6), st.integers(1, 40))
    def test_monotone_in_n(self, M, tau):
        p = [tone_validity_prob(M, N, tau) for N in range(1, 4 * tau + 2)]
        assert all(a >= b - 1e-15 for a, b in zip(p, p[1:]))

    def test_monte_carlo_sliding(self):
        M, N, tau, trials = 2, 11, 25, 100_000
        rng = np.random.default_rng(5)
        L = rng.integers(0, tau, trials)
        span = (N - 1 + L) // tau + 1
        sym = rng.integers(0, M, (trials, span.max()))
        mask = np.arange(span.max())[None, :] < span[:, None]
        same = np.all((sym == sym[:, :1]) | ~mask, axis=1)
        p = tone_validity_prob(M, N, tau)
        assert abs(same.mean() - p) < 3 * math.sqrt(p * (1 - p) / trials)

    @pytest.mark.parametrize("args", [(1, 2, 3), (2, 0, 3), (2, 2, 0), (2.5, 2, 3)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            tone_validity_prob(*args)


class TestCase2Ensemble:
    def test_small_example(self):
        ens = bpsk_case2_ensemble(3, 50)
        assert ens.exact == (Fraction(49, 50), Fraction(1, 100), Fraction(1, 100))
        np.testing.assert_array_equal(ens.E, [[0, 0, 0], [1, 0, 0], [1, 1, 0]])

    @given(st.integers(1, 30), st.integers(0, 40))
    def test_structure(self, N, extra):
        tau = N + extra
        ens = bpsk_case2_ensemble(N, tau)
        assert sum(ens.exact) == 1
        assert not ens.E[0].any() and not ens.E[:, -1].any()
        assert np.array_equal(ens.E, np.tril(ens.E, -1))

    def test_matches_validity_formula(self):
        assert float(bpsk_case2_ensemble(8, 50).exact[0]) == tone_validity_prob(2, 8, 50)

    def test_requires_short_window(self):
        with pytest.raises(ValueError, match="N <= tau"):
            bpsk_case2_ensemble(9, 8)


class TestLfmPrior:
    def test_zero_sweep(self):
        lp = lfm_effective_prior(LfmParams(1.0, 0.3, sweep=0.0), 8)
        assert lp.frequency == (0.3, 0.3)

    def test_deviation_bound(self):
        fz = 5 / 16 - np.pi / 1000
        lp = lfm_effective_prior(LfmParams(1.25, fz, sweep=1 / 25, period=100_000), 8)
        assert lp.deviation_bound == pytest.approx(1.6e-6)
        assert lp.frequency == pytest.approx((fz - 1 / 50, fz + 1 / 50))
        assert lp.amplitude == (1.25, 1.25)


class TestQuadratureSpec:
    def test_defaults(self):
        q = QuadratureSpec()
        assert (q.x0_nodes, q.phase_nodes, q.frequency_nodes, q.amplitude_nodes) == (512, 64, 64, 16)

    @pytest.mark.parametrize("kw", [{"x0_nodes": 0}, {"phase_nodes": 0}, {"refine_tol": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            QuadratureSpec(**kw)
