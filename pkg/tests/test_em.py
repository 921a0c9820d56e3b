import inspect
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from blindfx.dsp import compressed_stft_cost
from blindfx.em import (
    EMConfig,
    EMDivergenceError,
    EMState,
    ZETA_POLICIES,
    cost_normalized_zeta,
    e_step,
    em_init,
    latent_update,
    m_step,
    run_em,
)
from blindfx.operators import GainOperator
from blindfx.prior import GaussianAnalyticPrior, NoiseSchedule, ode_sample

PRIOR = GaussianAnalyticPrior(0.9, 0.16)
SMALL_COST = dict(cost_window=64, cost_hop=16, cost_fft=64)


def small_cfg(**kw):
    base = dict(steps=12, m_its=3, lr=0.05, **SMALL_COST)
    base.update(kw)
    return EMConfig(**base)


def observations(n=4, length=256, seed=0, gain=1.0):
    return gain * PRIOR.sample((n, length), np.random.default_rng(seed))


class TestConfig:
    def test_defaults(self):
        c = EMConfig()
        assert (c.steps, c.m_its, c.zeta_prime, c.batch_size) == (101, 20, 0.2, 4)
        assert (c.lr, c.beta1, c.beta2, c.weight_decay) == (1e-3, 0.9, 0.99, 1e-2)
        assert c.zeta_policy == "normalized"

    def test_validation(self):
        with pytest.raises(ValueError):
            EMConfig(steps=1)
        with pytest.raises(ValueError):
            EMConfig(zeta_policy="cosine")


class TestZeta:
    def test_examples(self):
        assert cost_normalized_zeta(1.0, 0.04, 0.2) == pytest.approx(1.0)
        assert cost_normalized_zeta(1.0, 2.0, 1.0) * np.sqrt(2) == pytest.approx(cost_normalized_zeta(1.0, 1.0, 1.0))

    def test_floor(self):
        assert cost_normalized_zeta(1.0, 0.0, 0.2) == pytest.approx(0.2 / 1e-6)

    def test_negative_cost(self):
        with pytest.raises(ValueError):
            cost_normalized_zeta(1.0, -1.0, 0.2)

    def test_policies_finite(self):
        for name, fn in ZETA_POLICIES.items():
            assert np.isfinite(fn(1e-4, 0.0, 0.0, 1024, 0.2, -1e-5)), name


class TestInit:
    def test_rms_and_shape(self):
        Y = observations(3, 4096)
        s = em_init(Y, NoiseSchedule(), GainOperator(), EMConfig(), 0)
        assert s.latents.shape == Y.shape and s.k == 0
        assert np.sqrt(np.mean(s.latents**2)) == pytest.approx(10.0, rel=0.05)
        assert np.array_equal(s.params, [1.0])

    def test_seeded(self):
        Y = observations()
        a = em_init(Y, NoiseSchedule(), GainOperator(), EMConfig(), 5).latents
        assert np.array_equal(a, em_init(Y, NoiseSchedule(), GainOperator(), EMConfig(), 5).latents)

    def test_empty(self):
        with pytest.raises(ValueError):
            em_init(np.zeros((0, 16)), NoiseSchedule(), GainOperator(), EMConfig(), 0)
        with pytest.raises(ValueError):
            em_init([], NoiseSchedule(), GainOperator(), EMConfig(), 0)


class TestEStep:
    def test_posterior_mean_every_k(self):
        sched = NoiseSchedule(steps=8)
        Y = observations(3, 64)
        s = em_init(Y, sched, GainOperator(), EMConfig(steps=8), 1)
        cov = oracles.ar1_covariance(64, 0.9, 0.16)
        for k in range(8):
            s.k = k
            est = e_step(s, PRIOR, sched, EMConfig(steps=8)).estimates()
            tau = sched.taus[k]
            ref = np.stack([oracles.posterior_mean(z, tau, cov) for z in s.latents])
            np.testing.assert_allclose(est, ref, atol=1e-8)

    def test_final_level_is_copy(self):
        sched = NoiseSchedule(steps=5)
        s = em_init(observations(2, 64), sched, GainOperator(), EMConfig(steps=5), 0)
        s.k = 4
        cache = e_step(s, PRIOR, sched, EMConfig(steps=5))
        score = np.concatenate([c.data for c in cache.score])
        bound = 1e-8 * np.linalg.norm(score, axis=-1, keepdims=True)
        assert np.all(np.abs(cache.estimates() - s.latents) <= bound)

    def test_latent_update_reuses_cached_scores(self):
        prior = GaussianAnalyticPrior(0.9, 0.16)
        sched = NoiseSchedule(steps=5)
        cfg = small_cfg(steps=5)
        Y = observations(5)
        s = em_init(Y, sched, GainOperator(), cfg, 0)
        cache = e_step(s, prior, sched, cfg)
        assert prior.evaluations == 5
        latent_update(s, Y, cache, GainOperator(), sched, cfg)
        assert prior.evaluations == 5 and s.k == 1


class TestMStep:
    def test_gain_regression(self):
        x = observations(4, 256)
        cfg = small_cfg(m_its=300, weight_decay=0.0)
        s = em_init(x, NoiseSchedule(), GainOperator(), cfg, 0)
        m_step(s, x, 2 * x, GainOperator(), cfg)
        assert s.params[0] == pytest.approx(2.0, rel=0.01)

    def test_optimum_is_fixed_point(self):
        x = observations(4, 256)
        cfg = small_cfg(m_its=5, lr=1e-3, weight_decay=0.0)
        s = em_init(x, NoiseSchedule(), GainOperator(), cfg, 0)
        losses = m_step(s, x, x, GainOperator(), cfg)
        assert max(losses) < 1e-20
        assert abs(s.params[0] - 1.0) < 1e-6

    def test_moving_average_descends(self):
        x = observations(4, 256)
        cfg = small_cfg(m_its=40, lr=0.01, weight_decay=0.0)
        s = em_init(x, NoiseSchedule(), GainOperator(), cfg, 0)
        losses = np.array(m_step(s, x, 1.5 * x, GainOperator(), cfg))
        avg = np.convolve(losses, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(avg) <= 0)

    def test_shape_mismatch(self):
        x = observations(4, 256)
        s = em_init(x, NoiseSchedule(), GainOperator(), small_cfg(), 0)
        with pytest.raises(ValueError):
            m_step(s, x[:3], x, GainOperator(), small_cfg())


class TestRunEm:
    def test_zero_guidance_matches_ode_sampler(self):
        sched = NoiseSchedule(steps=15)
        Y = observations(3, 256)
        cfg = small_cfg(steps=15, m_its=0, zeta_prime=0.0, zeta_policy="constant")
        trajectory = []
        run_em(Y, PRIOR, GainOperator(), cfg, seed=7, callback=lambda st, rec: trajectory.append(st.latents.copy()))
        assert np.array_equal(trajectory[-1], ode_sample(PRIOR, sched, 7, Y.shape))

    def test_guidance_pulls_toward_observation(self):
        rng = np.random.default_rng(1)
        z0 = PRIOR.sample((2, 2048), rng)
        Y = z0 + 0.01 * rng.standard_normal(z0.shape)
        cfg = EMConfig(m_its=0, zeta_prime=20.0)
        guided = run_em(Y, PRIOR, GainOperator(), cfg, seed=0).denoised
        unguided = ode_sample(PRIOR, NoiseSchedule(), 0, Y.shape)
        cost = lambda z: compressed_stft_cost(Y, z, cfg.cost).item()
        assert cost(unguided) >= 10 * cost(guided)

    def test_deterministic(self):
        Y = observations(5, 256, gain=1.3)
        a = run_em(Y, PRIOR, GainOperator(), small_cfg(), seed=2)
        b = run_em(Y, PRIOR, GainOperator(), small_cfg(), seed=2)
        assert np.array_equal(a.params, b.params)
        assert np.array_equal(a.denoised, b.denoised)

    def test_telemetry_and_stability(self):
        buf = io.StringIO()
        res = run_em(observations(), PRIOR, GainOperator(), small_cfg(), seed=0, telemetry=buf)
        recs = [json.loads(line) for line in buf.getvalue().splitlines()]
        assert len(recs) == 12 == len(res.history)
        taus = [r["tau"] for r in recs]
        assert np.all(np.diff(taus) < 0)
        assert all(np.isfinite(r["latent_rms"]) and r["objective"] is not None for r in recs)
        assert all("zeta" in r for r in recs[:-1])

    def test_resume_matches_straight_run(self, tmp_path):
        Y = observations(5, 256, gain=0.7)
        cfg = small_cfg()
        straight = run_em(Y, PRIOR, GainOperator(), cfg, seed=3)

        class Stop(Exception):
            pass

        def stop(state, rec):
            if state.k == 6:
                raise Stop

        ck = tmp_path / "em.json"
        with pytest.raises(Stop):
            run_em(Y, PRIOR, GainOperator(), cfg, seed=3, checkpoint=ck, checkpoint_every=5, callback=stop)
        state = EMState.load(ck)
        assert state.k == 5
        resumed = run_em(Y, PRIOR, GainOperator(), cfg, seed=3, state=state)
        assert np.array_equal(straight.params, resumed.params)
        assert np.array_equal(straight.denoised, resumed.denoised)

    def test_state_round_trip(self, tmp_path):
        s = em_init(observations(), NoiseSchedule(), GainOperator(), EMConfig(), 0)
        back = EMState.load(s.save(tmp_path / "s.json"))
        assert np.array_equal(back.latents, s.latents) and back.rng_state == s.rng_state

    def test_divergence_snapshot(self, tmp_path):
        ck = tmp_path / "em.json"
        with pytest.raises(EMDivergenceError) as info:
            run_em(observations(), PRIOR, GainOperator(np.inf), small_cfg(), checkpoint=ck)
        assert info.value.snapshot["k"] == 0
        assert (tmp_path / "em.json.diverged.json").exists()

    def test_descent_on_fixed_estimates(self):
        Y = observations(4, 256, gain=1.8)
        res = run_em(Y, PRIOR, GainOperator(), small_cfg(steps=20, lr=1e-3, track_objective=True), seed=0)
        ok = [r["objective_end"] <= r["objective_start"] for r in res.history]
        assert np.mean(ok) >= 0.95

    def test_frozen_denoiser_runs(self):
        res = run_em(observations(), PRIOR, GainOperator(), small_cfg(frozen_denoiser=True, zeta_prime=1.0), seed=0)
        assert np.all(np.isfinite(res.denoised))

    def test_interface_takes_no_clean_data(self):
        params = inspect.signature(run_em).parameters
        assert list(params)[:3] == ["Y", "model", "operator"]
        assert not any(p in params for p in ("X", "clean", "pairs", "targets"))


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-6, 1e3), st.floats(1e-3, 1.0))
def test_zeta_scales_with_inverse_root_cost(cost, zp):
    a = cost_normalized_zeta(1.0, cost, zp)
    assert cost_normalized_zeta(1.0, 4 * cost, zp) == pytest.approx(a / 2)
