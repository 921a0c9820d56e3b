import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from blindfx import autodiff as ad
from blindfx.prior import (
    DenoiserNet,
    DenoiserScore,
    DsmConfig,
    GaussianAnalyticPrior,
    NoiseSchedule,
    dsm_train,
    ode_sample,
    tweedie_denoise,
)


class TestSchedule:
    def test_endpoints_and_length(self):
        t = NoiseSchedule().taus
        assert len(t) == 101
        assert t[0] == 10.0 and t[-1] == 1e-4

    def test_strictly_decreasing(self):
        assert np.all(np.diff(NoiseSchedule(steps=30).taus) < 0)

    def test_rho_warp(self):
        t = NoiseSchedule(sigma_max=1.0, sigma_min=1e-4, steps=3, rho=7).taus
        mid = ((1.0 + 1e-4 ** (1 / 7)) / 2) ** 7
        assert t[1] == pytest.approx(mid, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseSchedule(sigma_min=1.0, sigma_max=0.5)
        with pytest.raises(ValueError):
            NoiseSchedule(steps=1)


class TestAnalyticPrior:
    def test_score_matches_dense_solve(self):
        prior = GaussianAnalyticPrior(0.8, 0.3)
        z = np.random.default_rng(0).standard_normal(64)
        cov = oracles.ar1_covariance(64, 0.8, 0.3)
        for tau in (1e-2, 0.5, 3.0):
            np.testing.assert_allclose(prior.score(z, tau).data, oracles.gaussian_score(z, tau, cov), atol=1e-8)

    def test_odd_length(self):
        prior = GaussianAnalyticPrior(-0.4, 2.0)
        z = np.random.default_rng(1).standard_normal(33)
        cov = oracles.ar1_covariance(33, -0.4, 2.0)
        np.testing.assert_allclose(prior.score(z, 0.7).data, oracles.gaussian_score(z, 0.7, cov), atol=1e-8)

    def test_zero_input(self):
        assert not GaussianAnalyticPrior(0.9).score(np.zeros(32), 1.0).data.any()

    def test_white_unit(self):
        z = np.random.default_rng(2).standard_normal(16)
        np.testing.assert_allclose(GaussianAnalyticPrior(0.0, 1.0).score(z, 1.0).data, -z / 2, atol=1e-14)

    def test_not_positive_definite(self):
        with pytest.raises(ValueError):
            GaussianAnalyticPrior(1.0)
        with pytest.raises(ValueError):
            GaussianAnalyticPrior(0.5, 0.0)

    def test_fit_recovers_moments(self):
        truth = GaussianAnalyticPrior(0.9, 0.16)
        x = truth.sample((40, 4096), np.random.default_rng(3))
        fit = GaussianAnalyticPrior.fit(x)
        assert fit.ar_coef == pytest.approx(0.9, abs=0.01)
        assert fit.variance == pytest.approx(0.16, rel=0.05)

    def test_sample_covariance(self):
        prior = GaussianAnalyticPrior(0.6, 1.0)
        x = prior.sample((20000, 8), np.random.default_rng(4))
        np.testing.assert_allclose(np.cov(x.T), oracles.ar1_covariance(8, 0.6, 1.0), atol=0.05)

    def test_evaluation_counter(self):
        prior = GaussianAnalyticPrior(0.5)
        prior.score(np.zeros((3, 16)), 1.0)
        prior.score(np.zeros(16), 1.0)
        assert prior.evaluations == 4

    def test_negative_tau(self):
        with pytest.raises(ValueError):
            GaussianAnalyticPrior().score(np.zeros(4), -1.0)

    def test_curl_free(self):
        # the score is a gradient field, so its Jacobian must be symmetric
        prior = GaussianAnalyticPrior(0.7, 0.5)
        z0 = np.random.default_rng(5).standard_normal(8)
        J = np.empty((8, 8))
        for i in range(8):
            zt = ad.Tensor(z0, requires_grad=True)
            (J[i],) = ad.grad(prior.score(zt, 0.3)[i], [zt])
        np.testing.assert_allclose(J, J.T, atol=1e-12)


class TestTweedie:
    def test_zero_tau_is_identity(self):
        z = np.random.default_rng(6).standard_normal(32)
        np.testing.assert_array_equal(tweedie_denoise(z, 0.0, GaussianAnalyticPrior(0.5)).data, z)

    def test_white_conjugate_shrinkage(self):
        z = np.random.default_rng(7).standard_normal(32)
        out = tweedie_denoise(z, 2.0, GaussianAnalyticPrior(0.0, 1.0)).data
        np.testing.assert_allclose(out, z / 5.0, atol=1e-14)

    def test_matches_posterior_mean(self):
        prior = GaussianAnalyticPrior(0.9, 0.2)
        z = np.random.default_rng(8).standard_normal(48)
        cov = oracles.ar1_covariance(48, 0.9, 0.2)
        np.testing.assert_allclose(tweedie_denoise(z, 0.4, prior).data, oracles.posterior_mean(z, 0.4, cov), atol=1e-10)

    def test_reuses_given_score(self):
        prior = GaussianAnalyticPrior(0.5)
        z = np.ones(8)
        s = prior.score(z, 1.0)
        before = prior.evaluations
        tweedie_denoise(z, 1.0, prior, s)
        assert prior.evaluations == before


class TestOdeSample:
    def test_deterministic(self):
        prior = GaussianAnalyticPrior(0.9, 0.2)
        sched = NoiseSchedule(steps=40)
        a = ode_sample(prior, sched, 3, (2, 256))
        assert np.array_equal(a, ode_sample(prior, sched, 3, (2, 256)))
        assert not np.array_equal(a, ode_sample(prior, sched, 4, (2, 256)))

    def test_sample_variance(self):
        prior = GaussianAnalyticPrior(0.0, 0.25)
        x = ode_sample(prior, NoiseSchedule(steps=200), 0, (16, 1024))
        assert np.var(x) == pytest.approx(0.25, rel=0.1)


class TestDenoiser:
    def small_net(self):
        return DenoiserNet(n_blocks=2, channels=8, kernel_size=3, emb_dim=8)

    def test_shapes(self):
        net = self.small_net()
        z = np.random.default_rng(9).standard_normal((3, 128))
        assert net.denoise(z, 0.5, net.init_params()).shape == (3, 128)
        s = DenoiserScore(net, net.init_params())
        assert s.score(z, 0.5).shape == (3, 128)

    def test_training_reduces_loss(self):
        data = GaussianAnalyticPrior(0.9, 0.2).sample((16, 256), np.random.default_rng(10))
        _, state = dsm_train(data, self.small_net(), NoiseSchedule(), DsmConfig(iterations=60, batch_size=4, lr=3e-3))
        assert len(state.losses) == 60
        assert np.mean(state.losses[-15:]) < np.mean(state.losses[:15])

    def test_resume_is_bit_identical(self):
        data = GaussianAnalyticPrior(0.9, 0.2).sample((8, 128), np.random.default_rng(11))
        sched = NoiseSchedule()
        net = self.small_net()
        _, straight = dsm_train(data, net, sched, DsmConfig(iterations=10))
        _, half = dsm_train(data, net, sched, DsmConfig(iterations=5))
        _, resumed = dsm_train(data, net, sched, DsmConfig(iterations=10), state=half)
        assert np.array_equal(straight.params, resumed.params)
        assert straight.losses == resumed.losses

    def test_bad_dataset(self):
        with pytest.raises(ValueError):
            dsm_train(np.zeros(10), self.small_net(), NoiseSchedule())


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.95, 0.95), st.floats(0.05, 3.0), st.floats(1e-3, 5.0), st.integers(0, 2**31 - 1))
def test_score_is_linear_and_contracting(a, v, tau, seed):
    prior = GaussianAnalyticPrior(a, v)
    rng = np.random.default_rng(seed)
    z1, z2 = rng.standard_normal(32), rng.standard_normal(32)
    s1, s2 = prior.score(z1, tau).data, prior.score(z2, tau).data
    np.testing.assert_allclose(prior.score(z1 + 2 * z2, tau).data, s1 + 2 * s2, atol=1e-9)
    # a Gaussian score points back toward the mean
    assert z1 @ s1 < 0
