import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import expit

from denoise_lab import metrics as mt
from denoise_lab import targets as tg
from denoise_lab.bounds import prop1_charfn_bound, prop1_charfn_bound_half, subspace_w2_decomposition
from denoise_lab.denoise import denoise_batch
from denoise_lab.errors import DimensionError
from denoise_lab.lab import coupled_clean


def _w2_alpha_mp(tau, sigma, alpha):
    mpmath.mp.dps = 50
    t, s, a = mpmath.mpf(tau), mpmath.mpf(sigma), mpmath.mpf(alpha)
    sd = abs((t**2 + (1 - a) * s**2) / mpmath.sqrt(t**2 + s**2))
    return float(abs(t - sd))


class TestDistanceReport:
    def test_csv_round_trip(self):
        for rep in (mt.DistanceReport("mmd_ustat", 0.1 + 0.2, 1e-3, 10), mt.DistanceReport("dirac_quadrature", 2.0, None, 77)):
            assert mt.DistanceReport.from_csv_row(rep.to_csv_row()) == rep

    @pytest.mark.parametrize(
        "args",
        [("bogus", 1.0, None, 1), ("mmd_ustat", -1.0, 0.0, 1), ("mmd_ustat", 1.0, None, 1), ("gaussian_closed_form", 1.0, 0.1, 1)],
    )
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            mt.DistanceReport(*args)


class TestGaussianClosedForms:
    def test_dirac_examples(self):
        assert mt.gaussian_w2_alpha(0.0, 1.7, 1.0) == 0.0
        assert mt.gaussian_w2_alpha(0.0, 1.7, 0.5) == pytest.approx(0.85, abs=1e-15)

    def test_crossover(self):
        s = math.sqrt(8.0)
        assert abs(mt.gaussian_w2_alpha(1.0, s, 0.5) - mt.gaussian_w2_alpha(1.0, s, 1.0)) <= 1e-10

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(-1.0, 2.0))
    def test_against_high_precision(self, tau, sigma, alpha):
        ref = _w2_alpha_mp(tau, sigma, alpha)
        assert mt.gaussian_w2_alpha(tau, sigma, alpha) == pytest.approx(ref, rel=1e-9, abs=1e-15 * (tau + sigma))

    def test_small_noise_relative_accuracy(self):
        # the naive formula cancels catastrophically here
        for alpha in (0.0, 0.5, 1.0):
            ref = _w2_alpha_mp(1.0, 1e-5, alpha)
            assert mt.gaussian_w2_alpha(1.0, 1e-5, alpha) == pytest.approx(ref, rel=1e-10)

    def test_no_denoising_asymptotic(self):
        for s in (1e-2, 1e-3, 1e-4):
            assert mt.gaussian_w2_alpha(1.0, s, 0.0) / (s * s / 2) == pytest.approx(1.0, abs=2 * s * s)

    def test_closed_two_gaussians(self):
        assert mt.gaussian_w2_closed(0.3, 1.2, 0.3, 1.2) == 0.0
        assert mt.gaussian_w2_closed(0, 1, 0, 2) == 1.0
        assert mt.gaussian_w2_closed(1, 0, -1, 0) == 2.0
        with pytest.raises(ValueError):
            mt.gaussian_w2_closed(0, -1, 0, 1)

    def test_report(self):
        rep = mt.gaussian_w2_report(1.0, 0.5, 1.0)
        assert rep.method == "gaussian_closed_form" and rep.stderr is None


class TestEmpiricalWp:
    def test_trivial(self):
        a = np.array([0.3, -1.0, 2.0])
        assert mt.empirical_wp_1d(a, a).value == 0.0
        assert mt.empirical_wp_1d([0.0, 0.0], [1.0, 1.0]).value == 1.0

    def test_sorted_coupling(self):
        a, b = np.array([3.0, 1.0, 2.0]), np.array([0.0, 5.0, 1.0])
        # sorted pairs (1,0), (2,1), (3,5)
        assert mt.empirical_wp_1d(a, b, 1.0).value == pytest.approx(4.0 / 3.0)
        assert mt.empirical_wp_1d(a, b, 2.0).value == pytest.approx(math.sqrt(6.0 / 3.0))

    def test_errors(self):
        with pytest.raises(ValueError):
            mt.empirical_wp_1d([0.0, 1.0], [0.0], 2.0)
        with pytest.raises(ValueError):
            mt.empirical_wp_1d([0.0], [1.0], 0.5)
        with pytest.raises(DimensionError):
            mt.empirical_wp_1d(np.zeros((3, 2)), np.zeros((3, 2)))

    def test_deterministic_bootstrap(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(500), rng.standard_normal(500)
        assert mt.empirical_wp_1d(a, b, seed=3) == mt.empirical_wp_1d(a, b, seed=3)
        assert mt.empirical_wp_1d(a, b, resamples=0).stderr == 0.0

    def test_two_gaussians_large_n(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal(1_000_000)
        b = 2.0 * rng.standard_normal(1_000_000)
        rep = mt.empirical_wp_1d(a, b, 2.0, seed=2)
        assert rep.method == "empirical_1d_sorted" and rep.n == 1_000_000
        assert abs(rep.value - 1.0) <= 3 * rep.stderr
        assert 1e-4 < rep.stderr < 1e-2

    def test_bootstrap_stderr_calibrated(self):
        # stderr against the spread over independent replications
        vals, ses = [], []
        for k in range(40):
            rng = np.random.default_rng(100 + k)
            rep = mt.empirical_wp_1d(rng.standard_normal(2000), 2.0 * rng.standard_normal(2000), seed=k)
            vals.append(rep.value)
            ses.append(rep.stderr)
        assert np.mean(ses) == pytest.approx(np.std(vals, ddof=1), rel=0.35)

    def test_paired_matches_unpaired_value(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal(1000), rng.standard_normal(1000)
        assert mt.empirical_wp_1d(a, b, paired=True).value == mt.empirical_wp_1d(a, b).value


class TestAssignment:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 512), st.integers(0, 2**32 - 1))
    def test_equals_sorted_in_1d(self, n, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal(n), 3.0 * rng.standard_normal(n) + 1.0
        sorted_ = mt.empirical_wp_1d(a, b, 2.0, resamples=0).value
        assign = mt.empirical_w2_assignment(a, b, resamples=0).value
        assert abs(sorted_ - assign) <= 1e-10

    def test_trivial_and_cap(self):
        x = np.random.default_rng(0).standard_normal((30, 3))
        assert mt.empirical_w2_assignment(x, x[::-1]).value == 0.0
        with pytest.raises(ValueError):
            mt.empirical_w2_assignment(np.zeros((4097, 1)), np.zeros((4097, 1)))
        with pytest.raises(DimensionError):
            mt.empirical_w2_assignment(np.zeros((4, 1)), np.zeros((4, 2)))

    def test_brute_force_small(self):
        import itertools

        rng = np.random.default_rng(5)
        a, b = rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
        best = min(
            np.mean(np.sum((a - b[list(p)]) ** 2, axis=1)) for p in itertools.permutations(range(6))
        )
        assert mt.empirical_w2_assignment(a, b, resamples=0).value == pytest.approx(math.sqrt(best), rel=1e-12)

    def test_subspace_composition(self):
        spec = tg.SubspaceGaussian(4, 2, 1.0)
        oracle = tg.NoisedScoreOracle(spec)
        hits = 0
        for rep_i in range(10):
            noisy = tg.add_noise(tg.sample_target(spec, 256, rep_i), 0.8, 1000 + rep_i)
            clean, exact = coupled_clean(spec, noisy, 0.8, 0)
            assert exact
            for alpha in (0.5, 1.0):
                den = denoise_batch(oracle, noisy, 0.8, alpha)
                rep = mt.empirical_w2_assignment(clean, den, seed=rep_i)
                sub = math.sqrt(2.0) * mt.gaussian_w2_alpha(1.0, 0.8, alpha)
                expected = subspace_w2_decomposition(sub, 4, 2, 0.8, alpha)
                hits += abs(rep.value - expected) <= 3 * rep.stderr
        assert hits >= 18


class TestMMD:
    def test_dirac_pair(self):
        rep = mt.mmd_ustat(np.zeros(50), np.full(50, 2.0), mt.KernelSpec(1.0))
        assert rep.value == pytest.approx(math.sqrt(2 - 2 * math.exp(-2)), rel=1e-12)
        assert rep.value == pytest.approx(1.31504, abs=1e-5)

    def test_equal_batches_zero(self):
        x = np.random.default_rng(0).standard_normal((100, 2))
        assert mt.mmd_ustat(x, x, mt.KernelSpec(1.0), paired=True).value == 0.0

    def test_against_brute_force(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((40, 2)), rng.standard_normal((30, 2)) + 0.5
        k = mt.KernelSpec(0.7)
        kaa, kbb, kab = k(a, a), k(b, b), k(a, b)
        m2 = (
            (kaa.sum() - np.trace(kaa)) / (40 * 39)
            + (kbb.sum() - np.trace(kbb)) / (30 * 29)
            - 2 * kab.mean()
        )
        assert mt.mmd_ustat(a, b, k).value == pytest.approx(math.sqrt(m2), rel=1e-12)

    def test_same_law_large(self):
        rng = np.random.default_rng(2)
        rep = mt.mmd_ustat(rng.standard_normal(10_000), rng.standard_normal(10_000), mt.KernelSpec(1.0), resamples=50)
        assert rep.value <= 3 * rep.stderr

    def test_same_law_95_of_100(self):
        k = mt.KernelSpec(1.0)
        ok = 0
        for rep_i in range(100):
            rng = np.random.default_rng(rep_i)
            rep = mt.mmd_ustat(rng.standard_normal(200), rng.standard_normal(200), k, resamples=100, seed=rep_i)
            ok += rep.value <= 3 * rep.stderr
        assert ok >= 95

    def test_errors(self):
        with pytest.raises(ValueError):
            mt.mmd_ustat(np.zeros(1), np.zeros(5), mt.KernelSpec(1.0))
        with pytest.raises(ValueError):
            mt.KernelSpec(0.0)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_spectral_moments_monte_carlo(self, d):
        k = mt.KernelSpec(1.3)
        xi = np.random.default_rng(d).standard_normal((2_000_000, d)) / 1.3
        r2 = np.sum(xi**2, axis=1)
        for power, exact in ((1, k.spectral_moment2(d)), (2, k.spectral_moment4(d)), (4, k.spectral_moment8(d))):
            v = r2**power
            assert v.mean() == pytest.approx(exact, abs=5 * v.std() / math.sqrt(v.size))

    def test_standard_normal_moments(self):
        k = mt.KernelSpec(1.0)
        assert (k.spectral_moment2(1), k.spectral_moment4(1), k.spectral_moment8(1)) == (1, 3, 105)

    def test_spectral_identity(self):
        # MMD^2 between N(0,1) and N(m,1) equals the integral of |charfn gap|^2 against Lambda
        m, ell = 0.8, 1.0
        k = mt.KernelSpec(ell)
        gap2 = lambda xi: abs(math.exp(-xi * xi / 2) * (1 - complex(math.cos(m * xi), math.sin(m * xi)))) ** 2
        lam = lambda xi: math.exp(-xi * xi * ell**2 / 2) * ell / math.sqrt(2 * math.pi)
        spectral, _ = integrate.quad(lambda xi: gap2(xi) * lam(xi), -np.inf, np.inf)
        rng = np.random.default_rng(6)
        rep = mt.mmd_ustat(rng.standard_normal(4000), rng.standard_normal(4000) + m, k, resamples=100)
        assert rep.value**2 == pytest.approx(spectral, abs=6 * rep.value * rep.stderr)


class TestCharacteristicFunctions:
    def test_zero_frequency(self):
        assert mt.charfn_distance_gaussian(1.0, 0.5, 1.0, 0.0) == 0.0

    def test_examples(self):
        assert mt.charfn_distance_gaussian(1.0, 0.1, 0.5, 1.0) <= 0.1**4 * 2 / 8
        assert mt.charfn_distance_gaussian(1.0, 0.1, 1.0, 2.0) <= 0.1**2 * (4 + 4) / 2

    def test_matches_direct_formula(self):
        tau, sigma, alpha = 1.2, 0.9, 0.3
        sd = (tau**2 + (1 - alpha) * sigma**2) / math.sqrt(tau**2 + sigma**2)
        xi = np.linspace(0, 5, 11)
        direct = np.abs(np.exp(-(tau**2) * xi**2 / 2) - np.exp(-(sd**2) * xi**2 / 2))
        np.testing.assert_allclose(mt.charfn_distance_gaussian(tau, sigma, alpha, xi), direct, atol=1e-15)

    def test_bounds_on_grid(self):
        xi = mt.DEFAULT_XI_GRID
        for tau in (0.5, 1.0, 3.0):
            C = 1.0 / tau**2
            for sigma in np.geomspace(1e-3, tau, 15):
                for alpha in (0.0, 0.25, 0.5, 1.0):
                    gap = mt.charfn_distance_gaussian(tau, sigma, alpha, xi)
                    assert np.all(gap <= prop1_charfn_bound(C, alpha, sigma, xi) * (1 + 1e-12))
                gap = mt.charfn_distance_gaussian(tau, sigma, 0.5, xi)
                assert np.all(gap <= prop1_charfn_bound_half(C, sigma, xi) * (1 + 1e-12))

    def test_empirical_trivial_and_diracs(self):
        a = np.random.default_rng(0).standard_normal(100)
        np.testing.assert_array_equal(mt.charfn_distance_empirical(a, a), 0.0)
        xi = np.linspace(0.1, 10, 50)
        got = mt.charfn_distance_empirical(np.zeros(3), np.full(3, 0.7), xi)
        np.testing.assert_allclose(got, 2 * np.abs(np.sin(0.35 * xi)), atol=1e-14)

    def test_empirical_against_gaussian(self):
        n = 100_000
        x = 1.5 * np.random.default_rng(1).standard_normal(n)
        xi = np.linspace(0.0, 4.0, 41)
        emp = np.mean(np.exp(1j * np.outer(x, xi)), axis=0)
        assert np.all(np.abs(emp - np.exp(-(1.5**2) * xi**2 / 2)) <= 5 / math.sqrt(n))
        # through the public function with a point mass at 0 on the other side
        gap = mt.charfn_distance_empirical(x, np.zeros(n), xi)
        assert np.all(np.abs(gap - (1 - np.exp(-(1.5**2) * xi**2 / 2))) <= 5 / math.sqrt(n))

    def test_empirical_vector_frequencies(self):
        a = np.zeros((5, 2))
        b = np.tile([1.0, 2.0], (5, 1))
        f = np.array([[1.0, 0.0], [0.5, 0.5]])
        got = mt.charfn_distance_empirical(a, b, f)
        np.testing.assert_allclose(got, 2 * np.abs(np.sin(f @ [1.0, 2.0] / 2)), atol=1e-14)
        with pytest.raises(DimensionError):
            mt.charfn_distance_empirical(a, b, np.array([1.0]))
        with pytest.raises(ValueError):
            mt.charfn_distance_empirical(np.zeros(3), np.zeros(3), np.array([]))


class TestDiracQuadrature:
    @pytest.mark.parametrize(
        "alpha,s,expected",
        [(0.5, 0.1, 0.05), (0.5, 1.0, 0.5369), (0.5, 3.0, 1.1129), (1.0, 0.3, 0.0198), (1.0, 1.0, 0.4301), (1.0, 3.0, 0.7605)],
    )
    def test_scipy_quad_oracle(self, alpha, s, expected):
        def g(y):
            ay = abs(y)
            return ((1 - alpha) * (ay - 1) - 2 * alpha * expit(-2 * ay / s**2)) ** 2

        pdf = lambda y: math.exp(-((y - 1) ** 2) / (2 * s * s)) / math.sqrt(2 * math.pi * s * s)
        ref, _ = integrate.quad(lambda y: g(y) * pdf(y), -np.inf, np.inf, points=None, epsabs=1e-14, limit=500)
        got = mt.dirac_mixture_w2_quadrature(1.0, s, alpha)
        assert got == pytest.approx(math.sqrt(ref), rel=1e-6)
        assert got == pytest.approx(expected, rel=2e-3)

    def test_tiny_value_against_laplace(self):
        # at alpha = 1 the integrand peaks at y = 0: W2^2 ~ (2/sqrt(2 pi s^2)) e^{-1/(2 s^2)} int expit(-2|y|/s^2)^2 dy
        s = 0.1
        got = mt.dirac_mixture_w2_quadrature(1.0, s, 1.0) ** 2
        mpmath.mp.dps = 40
        sm = mpmath.mpf(s)
        f = lambda y: 4 * (1 / (1 + mpmath.exp(2 * abs(y) / sm**2))) ** 2 * mpmath.exp(-((y - 1) ** 2) / (2 * sm**2))
        ref = mpmath.quad(f, [-1, -0.2, 0, 0.2, 1, 2]) / mpmath.sqrt(2 * mpmath.pi * sm**2)
        assert got == pytest.approx(float(ref), rel=1e-6)
        assert math.sqrt(got) == pytest.approx(2.568e-12, rel=1e-3)

    def test_super_small(self):
        assert mt.dirac_mixture_w2_quadrature(1.0, 0.05, 1.0) <= 1e-6
        assert mt.dirac_mixture_w2_quadrature(3.0, 0.15, 1.0) <= 1e-6 * 3.0

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.1, 10.0), st.floats(0.05, 5.0), st.sampled_from([0.0, 0.5, 1.0, 0.3]))
    def test_scale_invariance(self, mu, s, alpha):
        a = mt.dirac_mixture_w2_quadrature(mu, s * mu, alpha)
        b = mt.dirac_mixture_w2_quadrature(2 * mu, 2 * s * mu, alpha)
        assert b == pytest.approx(2 * a, rel=1e-9, abs=1e-9 * mu)

    def test_no_denoising_vs_coupled_monte_carlo(self):
        spec = tg.DiracMixture(((-1.0,), (1.0,)))
        for s in (0.05, 0.1, 0.2):
            noisy = tg.add_noise(tg.sample_target(spec, 400_000, 1), s, 2)
            clean, _ = coupled_clean(spec, noisy, s, 0)
            mc = mt.empirical_wp_1d(clean, noisy, 2.0, paired=True, resamples=50)
            assert mc.value == pytest.approx(mt.dirac_mixture_w2_quadrature(1.0, s, 0.0), rel=0.01)

    @pytest.mark.parametrize("s", [0.3, 1.0, 3.0])
    @pytest.mark.parametrize("alpha", [0.5, 1.0])
    def test_coupled_monte_carlo(self, s, alpha):
        spec = tg.DiracMixture(((-1.0,), (1.0,)))
        noisy = tg.add_noise(tg.sample_target(spec, 200_000, 3), s, 4)
        clean, _ = coupled_clean(spec, noisy, s, 0)
        den = denoise_batch(tg.NoisedScoreOracle(spec), noisy, s, alpha)
        mc = mt.empirical_wp_1d(clean, den, 2.0, paired=True, seed=5)
        assert abs(mc.value - mt.dirac_mixture_w2_quadrature(1.0, s, alpha)) <= 3 * mc.stderr

    def test_unresolvable_point_is_zero_in_monte_carlo(self):
        # the true distance is ~2.6e-12; no sample of 1e5 lands near the origin
        spec = tg.DiracMixture(((-1.0,), (1.0,)))
        noisy = tg.add_noise(tg.sample_target(spec, 100_000, 3), 0.1, 4)
        clean, _ = coupled_clean(spec, noisy, 0.1, 0)
        den = denoise_batch(tg.NoisedScoreOracle(spec), noisy, 0.1, 1.0)
        mc = mt.empirical_wp_1d(clean, den, 2.0, paired=True)
        assert mc.value < 1e-10
        assert mt.dirac_mixture_w2_quadrature(1.0, 0.1, 1.0) < 1e-10

    def test_report_and_errors(self):
        rep = mt.dirac_mixture_w2_report(1.0, 0.5, 0.5)
        assert rep.method == "dirac_quadrature" and rep.stderr is None and rep.n > 0
        with pytest.raises(ValueError):
            mt.dirac_mixture_w2_quadrature(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            mt.dirac_mixture_w2_quadrature(1.0, 0.0, 1.0)

    def test_underflow_flag(self):
        res = mt.dirac_mixture_w2_full(1.0, 0.02, 1.0)
        assert res.underflow and res.value < 1e-140
