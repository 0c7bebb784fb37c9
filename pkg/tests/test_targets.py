import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denoise_lab import targets as tg
from denoise_lab.errors import ConfigError, DimensionError, OutOfSupportError, UndefinedDensityError

from _suites import ALL_FAMILIES, lemma8_holds, tweedie_suite


class TestSpecValidation:
    @pytest.mark.parametrize(
        "make",
        [
            lambda: tg.Gaussian1D(-1.0),
            lambda: tg.Gaussian1D(math.nan),
            lambda: tg.DiagonalGaussian(()),
            lambda: tg.DiagonalGaussian((1.0, 2.0), (0.0,)),
            lambda: tg.SubspaceGaussian(2, 3, 1.0),
            lambda: tg.SubspaceGaussian(3, 0, 1.0),
            lambda: tg.DiracMixture(((0.0,), (0.0,))),
            lambda: tg.DiracMixture(((0.0,), (1.0,)), (0.5, 0.6)),
            lambda: tg.GaussianMixture((1.0,), ((0.0,),), (0.0,)),
            lambda: tg.GaussianMixture((0.5, 0.5), ((0.0,), (1.0, 2.0)), (1.0, 1.0)),
        ],
    )
    def test_rejects_invalid(self, make):
        with pytest.raises(ValueError):
            make()

    def test_default_weights_uniform(self):
        spec = tg.DiracMixture(((-1.0,), (1.0,)))
        assert spec.weights == (0.5, 0.5)

    @pytest.mark.parametrize("name", sorted(ALL_FAMILIES))
    def test_config_round_trip(self, name):
        spec = ALL_FAMILIES[name]
        assert tg.spec_from_config(tg.spec_to_config(spec)) == spec

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            tg.spec_from_config("family = cauchy")
        with pytest.raises(ConfigError):
            tg.spec_from_config("family = gaussian\ntau = -2")
        with pytest.raises(ConfigError):
            tg.spec_from_config("family = gaussian")

    def test_specs_hashable_and_frozen(self):
        spec = tg.Gaussian1D(1.0)
        assert hash(spec) == hash(tg.Gaussian1D(1.0))
        with pytest.raises(AttributeError):
            spec.tau = 2.0


class TestScoreExamples:
    def test_gaussian(self):
        oracle = tg.NoisedScoreOracle(tg.Gaussian1D(1.0))
        assert float(tg.score(oracle, 1.0, 1.0)) == pytest.approx(-0.5, abs=1e-15)

    def test_two_dirac_symmetry(self):
        oracle = tg.NoisedScoreOracle(tg.DiracMixture(((-3.0,), (3.0,))))
        for s2 in (1e-3, 0.1, 10.0):
            assert float(oracle.score(0.0, s2)) == 0.0

    def test_two_dirac_tanh_oracle(self):
        oracle = tg.NoisedScoreOracle(tg.DiracMixture(((-1.0,), (1.0,)), (0.5, 0.5)))
        expected = (-0.5 + math.tanh(2.0)) / 0.25
        assert float(oracle.score(0.5, 0.25)) == pytest.approx(expected, rel=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-20, 20), st.floats(0.05, 5.0), st.floats(1e-3, 10.0))
    def test_two_dirac_tanh_property(self, y, mu, s2):
        oracle = tg.NoisedScoreOracle(tg.DiracMixture(((-mu,), (mu,))))
        expected = (-y + mu * math.tanh(y * mu / s2)) / s2
        assert float(oracle.score(y, s2)) == pytest.approx(expected, rel=1e-12, abs=1e-12 * (1 + abs(y)) / s2)

    def test_two_dirac_matches_fd_of_explicit_density(self):
        mu, s2, y, h = 1.0, 0.25, 0.5, 1e-6

        def logp(v):
            return math.log(math.exp(-((v - mu) ** 2) / (2 * s2)) + math.exp(-((v + mu) ** 2) / (2 * s2)))

        oracle = tg.NoisedScoreOracle(tg.DiracMixture(((-mu,), (mu,))))
        fd = (logp(y + h) - logp(y - h)) / (2 * h)
        assert float(oracle.score(y, s2)) == pytest.approx(fd, rel=1e-8)

    def test_posterior_mean_examples(self):
        g = tg.NoisedScoreOracle(tg.Gaussian1D(1.0))
        assert float(tg.posterior_mean(g, 2.0, 1.0)) == pytest.approx(1.0, abs=1e-15)
        d = tg.NoisedScoreOracle(tg.DiracMixture(((-1.0,), (1.0,))))
        assert float(tg.posterior_mean(d, 0.0, 0.7)) == 0.0
        m = tg.NoisedScoreOracle(tg.GaussianMixture((1.0,), ((0.0,),), (2.0,)))
        assert float(tg.posterior_mean(m, 5.0, 1.0)) == pytest.approx(4.0, abs=1e-14)

    def test_subspace_blockwise(self):
        spec = tg.SubspaceGaussian(5, 2, 1.5)
        y = np.array([0.3, -1.0, 2.0, 0.5, -0.7])
        s2 = 0.4
        expected = np.concatenate([-y[:2] / (1.5**2 + s2), -y[2:] / s2])
        np.testing.assert_allclose(tg.NoisedScoreOracle(spec).score(y, s2), expected, rtol=1e-14)

    def test_diagonal_closed_form(self):
        spec = tg.DiagonalGaussian((0.5, 2.0), (1.0, -1.0))
        y = np.array([[0.0, 0.0], [3.0, 1.0]])
        expected = -(y - np.array([1.0, -1.0])) / (np.array([0.25, 4.0]) + 0.3)
        np.testing.assert_allclose(tg.NoisedScoreOracle(spec).score(y, 0.3), expected, rtol=1e-14)

    def test_shapes_preserved(self):
        o1 = tg.NoisedScoreOracle(tg.Gaussian1D(1.0))
        assert np.shape(o1.score(0.2, 1.0)) == ()
        assert o1.score(np.zeros(7), 1.0).shape == (7,)
        assert o1.score(np.zeros((7, 1)), 1.0).shape == (7, 1)
        o3 = tg.NoisedScoreOracle(ALL_FAMILIES["diagonal_gaussian"])
        assert o3.score(np.zeros(3), 1.0).shape == (3,)
        assert o3.score(np.zeros((4, 3)), 1.0).shape == (4, 3)

    def test_dimension_mismatch(self):
        o3 = tg.NoisedScoreOracle(ALL_FAMILIES["diagonal_gaussian"])
        with pytest.raises(DimensionError):
            o3.score(np.zeros((4, 2)), 1.0)
        with pytest.raises(ValueError):
            o3.score(np.zeros(3), 0.0)


class TestCleanScore:
    def test_examples(self):
        assert float(tg.score_of_clean_density(tg.BumpDensity1D(), 0.0)) == 0.0
        assert float(tg.score_of_clean_density(tg.Gaussian1D(2.0), 3.0)) == pytest.approx(-0.75, abs=1e-15)
        assert float(tg.score_of_clean_density(tg.BumpDensity1D(), 0.5)) == pytest.approx(-16.0 / 9.0, rel=1e-15)

    def test_errors(self):
        with pytest.raises(UndefinedDensityError):
            tg.score_of_clean_density(ALL_FAMILIES["dirac_mixture"], np.zeros(2))
        with pytest.raises(UndefinedDensityError):
            tg.score_of_clean_density(ALL_FAMILIES["subspace_gaussian"], np.zeros(4))
        with pytest.raises(OutOfSupportError):
            tg.score_of_clean_density(tg.BumpDensity1D(), 1.0)
        with pytest.raises(OutOfSupportError):
            tg.bump_hessian(np.array([0.0, -1.5]))

    def test_bump_derivatives_by_mpmath(self):
        mpmath.mp.dps = 40
        logp = lambda x: -1 / (1 - x**2)
        for x in (-0.9, -0.4, 0.1, 0.55, 0.8):
            d1, d2, d3 = (float(mpmath.diff(logp, mpmath.mpf(x), k)) for k in (1, 2, 3))
            assert float(tg.bump_score(x)) == pytest.approx(d1, rel=1e-13)
            assert float(tg.bump_hessian(x)) == pytest.approx(d2, rel=1e-13)
            assert float(tg.bump_third_derivative(x)) == pytest.approx(d3, rel=1e-13)

    def test_bump_normalizer_by_mpmath(self):
        mpmath.mp.dps = 30
        ref = mpmath.quad(lambda x: mpmath.exp(-1 / (1 - x**2)), [-1, 0, 1])
        assert tg.bump_normalizer() == pytest.approx(float(ref), rel=1e-12)
        assert float(tg.bump_density(0.0)) == pytest.approx(math.exp(-1) / float(ref), rel=1e-12)

    def test_single_component_mixture_degenerates(self):
        x = np.linspace(-3, 3, 13)
        mix = tg.GaussianMixture((1.0,), ((0.5,),), (1.7,))
        np.testing.assert_array_equal(
            tg.NoisedScoreOracle(mix).score(x, 0.3),
            tg.NoisedScoreOracle(tg.DiagonalGaussian((1.7,), (0.5,))).score(x, 0.3),
        )
        np.testing.assert_allclose(
            tg.NoisedScoreOracle(tg.GaussianMixture((1.0,), ((0.0,),), (1.7,))).score(x, 0.3),
            tg.NoisedScoreOracle(tg.Gaussian1D(1.7)).score(x, 0.3),
            rtol=1e-15,
        )


class TestBumpNoisedScore:
    def test_against_mpmath(self):
        mpmath.mp.dps = 30
        oracle = tg.NoisedScoreOracle(tg.BumpDensity1D())
        for y, s2 in [(0.3, 0.01), (-1.2, 0.04), (2.5, 1.0), (0.0, 0.5), (0.97, 1e-3)]:
            f0 = lambda x: mpmath.exp(-1 / (1 - x**2) - (y - x) ** 2 / (2 * s2))
            f1 = lambda x: x * f0(x)
            pts = [-1, min(max(y, -0.999), 0.999), 1]
            i0, i1 = mpmath.quad(f0, pts), mpmath.quad(f1, pts)
            expected = float((i1 / i0 - y) / s2)
            assert float(oracle.score(y, s2)) == pytest.approx(expected, rel=1e-8, abs=1e-8)

    @pytest.mark.parametrize("y", [-2.0, -0.999, 0.5, 0.99, 1.5])
    @pytest.mark.parametrize("s2", [1e-6, 1e-8])
    def test_narrow_posterior_against_mpmath(self, y, s2):
        mpmath.mp.dps = 40
        h = lambda x: -1 / (1 - x**2) - (y - x) ** 2 / (2 * s2)
        lo, hi = mpmath.mpf(-1), mpmath.mpf(1)
        for _ in range(150):
            mid = (lo + hi) / 2
            if -2 * mid / (1 - mid**2) ** 2 + (y - mid) / s2 > 0:
                lo = mid
            else:
                hi = mid
        mode = (lo + hi) / 2
        peak = h(mode)
        f0 = lambda x: mpmath.exp(h(x) - peak) if abs(x) < 1 else mpmath.mpf(0)
        f1 = lambda x: x * f0(x)
        # 14 standard deviations of the Laplace approximation at the mode
        w = 14 / mpmath.sqrt(2 * (3 * mode**2 + 1) / (1 - mode**2) ** 3 + 1 / s2)
        pts = [max(mode - w, -1), mode - w / 8, mode, mode + w / 8, min(mode + w, 1)]
        expected = float(mpmath.quad(f1, pts) / mpmath.quad(f0, pts))
        got = float(tg.NoisedScoreOracle(tg.BumpDensity1D()).posterior_mean_direct(y, s2))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_outside_support_is_finite(self):
        oracle = tg.NoisedScoreOracle(tg.BumpDensity1D())
        s = oracle.score(np.array([-40.0, -3.0, 3.0, 40.0]), 0.01)
        assert np.all(np.isfinite(s))
        # the posterior mean stays inside the support
        pm = oracle.posterior_mean_direct(np.array([-40.0, 40.0]), 0.01)
        assert np.all(np.abs(pm) < 1)


class TestInvariants:
    @pytest.mark.parametrize("name", sorted(ALL_FAMILIES))
    def test_tweedie_consistency(self, name):
        n = 2000 if name == "bump" else 10_000
        ident, direct = tweedie_suite(ALL_FAMILIES[name], n, seed=7)
        assert ident <= 1e-12
        assert direct <= 1e-9

    @pytest.mark.parametrize("name", sorted(ALL_FAMILIES))
    def test_finite_difference_of_log_density(self, name):
        spec = ALL_FAMILIES[name]
        oracle = tg.NoisedScoreOracle(spec, quad_tol=1e-14)
        rng = np.random.default_rng(3)
        h = 1e-5
        for s2 in (0.05, 0.5, 2.0):
            y = 1.5 * rng.standard_normal((20, spec.dim))
            g = oracle.score(y, s2)
            fd = np.empty_like(y)
            for j in range(spec.dim):
                e = np.zeros(spec.dim)
                e[j] = h
                fd[:, j] = (oracle.log_density(y + e, s2) - oracle.log_density(y - e, s2)) / (2 * h)
            err = np.linalg.norm(fd - g, axis=1) / np.maximum(np.linalg.norm(g, axis=1), 1.0)
            assert err.max() <= 1e-6, (s2, err.max())

    def test_log_density_normalized(self):
        for name in ("gaussian", "gaussian_mixture", "bump", "dirac_mixture"):
            spec = ALL_FAMILIES[name]
            if spec.dim != 1:
                continue
            oracle = tg.NoisedScoreOracle(spec)
            y = np.linspace(-12, 12, 4801)
            total = np.trapezoid(np.exp(oracle.log_density(y, 0.3)), y)
            assert total == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("name", sorted(set(ALL_FAMILIES) - {"bump"}))
    def test_log_space_responsibilities(self, name):
        spec = ALL_FAMILIES[name]
        oracle = tg.NoisedScoreOracle(spec)
        s2 = 1e-4
        # |y - x_i|^2 / sigma2 up to ~1e6
        y = np.full((3, spec.dim), 0.0)
        y[0, 0] = 10.0
        y[1, 0] = -10.0
        y[2] = 7.0
        assert np.all(np.isfinite(oracle.score(y, s2)))
        assert np.all(np.isfinite(oracle.log_density(y, s2)))

    def test_far_point_picks_nearest_dirac(self):
        oracle = tg.NoisedScoreOracle(tg.DiracMixture(((-1.0,), (1.0,))))
        pm = oracle.posterior_mean_direct(np.array([1000.0, -1000.0]), 1e-3)
        np.testing.assert_array_equal(pm, [1.0, -1.0])

    @pytest.mark.parametrize("sigma", [0.1, 0.5, 1.0])
    def test_lemma8_mixture(self, sigma):
        ok, vals = lemma8_holds(ALL_FAMILIES["gaussian_mixture"], sigma, 20_000, seed=11)
        assert ok, vals

    def test_lemma8_gaussian_exact(self):
        # E|score(Y)|^2 = 1/(tau^2 + sigma^2) <= 1/tau^2
        oracle = tg.NoisedScoreOracle(tg.Gaussian1D(1.0))
        y = np.linspace(-4, 4, 9)
        np.testing.assert_allclose(oracle.score(y, 0.5), -y / 1.5)


class TestSampling:
    def test_determinism(self):
        for spec in ALL_FAMILIES.values():
            a = tg.sample_target(spec, 100, 4)
            b = tg.sample_target(spec, 100, 4)
            np.testing.assert_array_equal(a.data, b.data)
            np.testing.assert_array_equal(tg.add_noise(a, 0.5, 9).data, tg.add_noise(b, 0.5, 9).data)

    def test_noise_variance(self):
        zero = tg.SampleBatch(np.zeros((1_000_000, 1)))
        noisy = tg.add_noise(zero, 2.0, 5)
        assert noisy.data.var() == pytest.approx(4.0, rel=0.01)

    def test_noise_mean_3d(self):
        batch = tg.sample_target(tg.DiracMixture(((0.0, 0.0, 0.0),)), 1_000_000, 0)
        noisy = tg.add_noise(batch, 1.0, 1)
        assert np.linalg.norm(noisy.data.mean(axis=0)) <= 4 * math.sqrt(3 / 1e6)

    def test_same_seed_streams_independent(self):
        x = tg.sample_target(tg.Gaussian1D(1.0), 50_000, 3)
        noise = tg.add_noise(x, 1.0, 3).data - x.data
        assert abs(np.corrcoef(x.data[:, 0], noise[:, 0])[0, 1]) < 0.02

    def test_bump_samples_match_density(self):
        x = tg.sample_target(tg.BumpDensity1D(), 200_000, 1).data[:, 0]
        assert np.all(np.abs(x) < 1)
        # second moment against quadrature
        m2 = mpmath.quad(lambda t: t**2 * mpmath.exp(-1 / (1 - t**2)), [-1, 0, 1]) / tg.bump_normalizer()
        se = x.var() * math.sqrt(2 / x.size) * 3
        assert np.mean(x**2) == pytest.approx(float(m2), abs=4 * se)

    def test_mixture_weights(self):
        spec = tg.GaussianMixture((0.2, 0.8), ((-50.0,), (50.0,)), (1.0, 1.0))
        x = tg.sample_target(spec, 100_000, 2).data[:, 0]
        frac = np.mean(x < 0)
        assert frac == pytest.approx(0.2, abs=4 * math.sqrt(0.16 / 1e5))

    def test_subspace_samples_flat(self):
        x = tg.sample_target(tg.SubspaceGaussian(4, 2, 2.0), 1000, 0).data
        assert np.all(x[:, 2:] == 0)
        assert x[:, :2].std() == pytest.approx(2.0, rel=0.1)

    def test_batch_read_only(self):
        b = tg.sample_target(tg.Gaussian1D(1.0), 3, 0)
        with pytest.raises(ValueError):
            b.data[0, 0] = 1.0
        with pytest.raises(ValueError):
            tg.SampleBatch(np.array([[np.nan]]))
        with pytest.raises(ValueError):
            tg.sample_target(tg.Gaussian1D(1.0), 0, 0)
