"""Sampler tests: proposal, batch law, batch formation, ratios, step kernels."""
import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats as sps

from dpmh import models, privacy, samplers
from dpmh.errors import ConfigurationError, InvariantViolationError, NumericError

BOX = models.BoxDomain([-1.5, -1.5], [2.5, 2.5])


class StubModel(models.EnergyModel):
    """Hand-set energies keyed by theta tuples; fixed pair distance."""

    def __init__(self, c_raw, energies, M_fixed=None, temperature=1.0, domain=None, dim=1):
        super().__init__(np.asarray(c_raw, dtype=float), temperature, domain)
        self._energies = {k: np.asarray(v, dtype=float) for k, v in energies.items()}
        self._M = M_fixed
        self.dim = dim

    def energy(self, theta, idx=None):
        u = self._energies[tuple(np.atleast_1d(theta))]
        return (u if idx is None else u[idx]) / self.temperature

    def distance(self, theta, theta_prime):
        if self._M is not None:
            return self._M
        return super().distance(theta, theta_prime)


def small_mixture(n=60, seed=2, temperature=10.0):
    return models.generate_mixture_data(n, seed, temperature=temperature, domain=BOX)


def fresh_rngs(seed=0):
    return samplers.RngStreams.from_seed(seed)


class TestPropose:
    def test_zero_scale_limit(self):
        theta = np.array([0.5, -0.5])
        out = samplers.propose(theta, 1e-300, fresh_rngs().proposal)
        assert np.allclose(out, theta)
        with pytest.raises(ConfigurationError):
            samplers.propose(theta, 0.0, fresh_rngs().proposal)

    def test_deterministic_sequence(self):
        a = [samplers.propose(np.zeros(2), 1.0, r) for r in [fresh_rngs(5).proposal] for _ in range(4)]
        b = [samplers.propose(np.zeros(2), 1.0, r) for r in [fresh_rngs(5).proposal] for _ in range(4)]
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_sample_variance_within_five_percent(self):
        rng = fresh_rngs(7).proposal
        draws = np.array([samplers.propose(np.zeros(2), 1.0, rng) for _ in range(10_000)])
        var = draws.var(axis=0, ddof=1)
        assert np.all(np.abs(var - 1.0) < 0.05)


class TestDrawBatchSize:
    def test_preconditions(self):
        rng = fresh_rngs().batch
        with pytest.raises(ConfigurationError):
            samplers.draw_batch_size(0.0, 1.0, 0.0, rng)

    def test_poisson_mean_lambda_only(self):
        rng = fresh_rngs(1).batch
        draws = np.array([samplers.draw_batch_size(3.0, 1.0, 0.0, rng) for _ in range(100_000)])
        assert abs(draws.mean() - 3.0) <= 3 * math.sqrt(3.0 / 100_000)

    def test_poisson_mean_with_distance_term(self):
        rng = fresh_rngs(2).batch
        draws = np.array([samplers.draw_batch_size(2.0, 4.0, 0.5, rng) for _ in range(100_000)])
        assert abs(draws.mean() - 4.0) <= 3 * math.sqrt(4.0 / 100_000)

    def test_chi_square_goodness_of_fit(self):
        # batch-size law at fixed (theta, theta'): B ~ Poisson(lam + C*M)
        mu = 6.0
        rng = fresh_rngs(3).batch
        draws = np.array([samplers.draw_batch_size(2.0, 8.0, 0.5, rng) for _ in range(100_000)])
        kmax = int(draws.max())
        obs = np.bincount(draws, minlength=kmax + 1).astype(float)
        probs = sps.poisson.pmf(np.arange(kmax + 1), mu)
        probs[-1] = 1.0 - probs[:-1].sum()
        # merge tail bins with expected count < 5
        exp = probs * draws.size
        while exp.size > 2 and exp[-1] < 5:
            exp[-2] += exp[-1]
            obs[-2] += obs[-1]
            exp, obs = exp[:-1], obs[:-1]
        chi2 = float(((obs - exp) ** 2 / exp).sum())
        crit = sps.chi2.ppf(1 - 1e-3, df=exp.size - 1)
        assert chi2 < crit


class TestFormBatch:
    def test_empty_batch(self):
        model = small_mixture()
        theta = np.array([0.1, 0.2])
        out = samplers.form_batch(model, theta, theta, 0, 1.0, fresh_rngs().batch)
        assert out.size == 0

    def test_keep_probability_boundaries(self):
        # one datum; forward diff U(theta')-U(theta) = +c*M gives keep prob 1,
        # -c*M gives keep prob lam/(lam + C*M)
        c, M, lam = 2.0, 1.5, 4.0
        up = StubModel([c], {(0.0,): [0.0], (1.0,): [c * M]}, M_fixed=M)
        p_hi = samplers.keep_probabilities(up, np.array([0.0]), np.array([1.0]), np.zeros(1, int), M, lam)
        assert p_hi[0] == pytest.approx(1.0, abs=1e-12)
        down = StubModel([c], {(0.0,): [0.0], (1.0,): [-c * M]}, M_fixed=M)
        p_lo = samplers.keep_probabilities(down, np.array([0.0]), np.array([1.0]), np.zeros(1, int), M, lam)
        assert p_lo[0] == pytest.approx(lam / (lam + c * M), rel=1e-12)

    def test_monte_carlo_matches_closed_form(self):
        c, M, lam = 2.0, 1.5, 4.0
        down = StubModel([c], {(0.0,): [0.0], (1.0,): [-c * M]}, M_fixed=M)
        rng = fresh_rngs(9).batch
        n, B = 2000, 20
        kept = sum(
            samplers.form_batch(down, np.array([0.0]), np.array([1.0]), B, lam, rng, M_val=M).size
            for _ in range(n)
        )
        p = lam / (lam + c * M)
        se = math.sqrt(p * (1 - p) / (n * B))
        assert abs(kept / (n * B) - p) <= 4 * se

    def test_bound_breach_raises(self):
        c, M = 1.0, 1.0
        bad = StubModel([c], {(0.0,): [0.0], (1.0,): [5.0]}, M_fixed=M)  # |diff| > c*M
        with pytest.raises(InvariantViolationError):
            samplers.form_batch(bad, np.array([0.0]), np.array([1.0]), 5, 1.0, fresh_rngs().batch, M_val=M)

    def test_multiset_multiplicity_preserved(self):
        # two data, one datum always kept; with replacement a datum can repeat
        c, M, lam = 1.0, 1.0, 3.0
        m = StubModel([c, c], {(0.0,): [0.0, 0.0], (1.0,): [c * M, c * M]}, M_fixed=M)
        out = samplers.form_batch(m, np.array([0.0]), np.array([1.0]), 50, lam, fresh_rngs(4).batch, M_val=M)
        assert out.size == 50  # keep prob 1 for both
        assert np.bincount(out).max() > 1


class TestMhRatioMinibatch:
    def test_empty_batch_is_one(self):
        model = small_mixture()
        theta = np.array([0.0, 0.0])
        r = samplers.mh_ratio_minibatch(model, np.empty(0, int), theta, theta, 1.0)
        assert r == 1.0

    def test_frozen_artanh_chain(self):
        # C=10, c_i=2, lambda=5, M=1, energy diff 1: argument 10*1/(2*(10+10)) = 0.25
        # and exp(2 artanh 1/4) = (1+1/4)/(1-1/4) = 5/3
        m = StubModel([2.0, 8.0], {(0.0,): [1.0, 0.0], (1.0,): [0.0, 0.0]}, M_fixed=1.0)
        r = samplers.mh_ratio_minibatch(m, np.zeros(1, int), np.array([0.0]), np.array([1.0]), 5.0, M_val=1.0)
        assert r == pytest.approx(5.0 / 3.0, rel=1e-12)

    def test_boundary_argument_at_energy_bound(self):
        # diff = c*M = 2 pushes the argument to its maximum CM/(2 lam + CM) = 0.5
        m = StubModel([2.0, 8.0], {(0.0,): [2.0, 0.0], (1.0,): [0.0, 0.0]}, M_fixed=1.0)
        r = samplers.mh_ratio_minibatch(m, np.zeros(1, int), np.array([0.0]), np.array([1.0]), 5.0, M_val=1.0)
        assert r == pytest.approx(3.0, rel=1e-10)

    def test_shift_only(self):
        model = small_mixture()
        theta = np.array([0.0, 0.0])
        r = samplers.mh_ratio_minibatch(model, np.empty(0, int), theta, theta, 1.0, noise_shift=-0.5)
        assert r == pytest.approx(math.exp(-0.5), rel=1e-14)

    def test_non_finite_raises(self):
        model = small_mixture()
        theta = np.array([0.0, 0.0])
        with pytest.raises(NumericError):
            samplers.mh_ratio_minibatch(model, np.empty(0, int), theta, theta, 1.0, noise_shift=math.nan)
        with pytest.raises(NumericError):
            samplers.mh_ratio_minibatch(model, np.empty(0, int), theta, theta, 1.0, noise_shift=1e4)


def chain_config(mode, **kw):
    base = dict(lam=3.0, batch_cap=20, epsilon=0.5, delta=1e-5, proposal_scale=0.08,
                iters=400, seed=12)
    base.update(kw)
    return samplers.SamplerConfig(mode=mode, **base)


class TestDpfastStep:
    def test_near_zero_proposal_always_accepts(self):
        model = small_mixture()
        cfg = chain_config("dpfast", proposal_scale=1e-12, iters=50)
        trace = samplers.run_chain(model, cfg)
        assert all(r.accepted for r in trace)
        assert all(not r.noise_added for r in trace)
        assert all(abs(r.log_ratio) < 1e-6 for r in trace)

    def test_forced_fullbatch_free_equals_plain_mh(self):
        model = small_mixture()
        shared = dict(lam=3.0, proposal_scale=0.03, iters=300, seed=77, delta=1e-5)
        mh = samplers.run_chain(model, samplers.SamplerConfig(mode="mh", batch_cap=0, epsilon=1.0, **shared))
        # epsilon=1 keeps delta(l2) <= eps at this scale, so every step is free
        dp = samplers.run_chain(model, samplers.SamplerConfig(mode="dpfast", batch_cap=0, epsilon=1.0, **shared))
        assert all(not r.noise_added for r in dp)
        for a, b in zip(mh, dp):
            assert a.accepted == b.accepted
            assert np.array_equal(a.theta, b.theta)
            assert a.log_ratio == pytest.approx(b.log_ratio, rel=1e-12)

    def test_dpfast_fullbatch_mode_matches_k_zero(self):
        model = small_mixture()
        shared = dict(lam=3.0, epsilon=0.4, delta=1e-5, proposal_scale=0.05, iters=200, seed=5)
        a = samplers.run_chain(model, samplers.SamplerConfig(mode="dpfast", batch_cap=0, **shared))
        b = samplers.run_chain(model, samplers.SamplerConfig(mode="dpfast_fullbatch", batch_cap=7, **shared))
        for x, y in zip(a, b):
            assert x.accepted == y.accepted and x.branch == y.branch
            assert np.array_equal(x.theta, y.theta)

    def test_penalty_matches_noisy_dpfast_fullbatch_single_step(self):
        model = small_mixture()
        cfg_dp = chain_config("dpfast", batch_cap=0, epsilon=0.05, proposal_scale=0.3, iters=1, seed=41)
        cfg_pen = replace(cfg_dp, mode="penalty")
        (rec_dp,) = samplers.run_chain(model, cfg_dp)
        (rec_pen,) = samplers.run_chain(model, cfg_pen)
        if rec_dp.branch == samplers.BRANCH_OUT_OF_DOMAIN:
            pytest.skip("proposal left the domain for this seed")
        assert rec_dp.noise_added  # chosen scale/epsilon force the noisy branch
        assert rec_pen.noise_value == rec_dp.noise_value
        assert rec_pen.log_ratio == pytest.approx(rec_dp.log_ratio, rel=1e-12)

    def test_penalty_sigma_zero_reduces_to_mh_ratio(self):
        model = small_mixture()
        cal = privacy.NoiseCalibration(
            sigma1=0.0, sigma2=0.0, free_threshold_minibatch=math.inf,
            free_threshold_fullbatch=1.0, epsilon=1.0, delta=1e-5, batch_cap=0,
            C=model.C, max_c=model.max_c,
        )
        cfg = chain_config("penalty", iters=0, seed=9)
        state = samplers.initial_state(model, cfg)
        new_state, rec = samplers.penalty_step(model, state, cfg, cal)
        if rec.branch != samplers.BRANCH_OUT_OF_DOMAIN:
            expected = models.energy_diff_sum(model, state.theta, rec.theta_proposed)
            assert rec.log_ratio == pytest.approx(expected, abs=1e-12)

    def test_noise_shift_correction(self):
        model = small_mixture()
        cfg = chain_config("dpfast", epsilon=0.05, proposal_scale=0.2, iters=400, seed=8)
        cal = privacy.calibrate(cfg, model.C, model.max_c)
        trace = samplers.run_chain(model, cfg)
        noisy = [r for r in trace if r.noise_added]
        assert noisy, "configuration should trigger noise"
        for r in noisy:
            sigma = cal.sigma1 if r.branch == samplers.BRANCH_MINIBATCH else cal.sigma2
            std = sigma * r.sensitivity
            assert r.noise_shift == pytest.approx(r.noise_value - std * std / 2.0, abs=1e-12)
        for r in trace:
            if not r.noise_added:
                assert r.noise_value == 0.0 and r.noise_shift == 0.0

    def test_branch_and_free_predicates(self):
        model = small_mixture()
        cfg = chain_config("dpfast", epsilon=0.3, proposal_scale=0.15, iters=2000, seed=21)
        cal = privacy.calibrate(cfg, model.C, model.max_c)
        trace = samplers.run_chain(model, cfg)
        seen = {r.branch for r in trace}
        assert samplers.BRANCH_MINIBATCH in seen and samplers.BRANCH_FULLBATCH in seen
        for r in trace:
            if r.branch == samplers.BRANCH_OUT_OF_DOMAIN:
                assert r.batch_size == 0 and not r.accepted and not r.noise_added
                continue
            assert (r.branch == samplers.BRANCH_MINIBATCH) == (r.batch_size < cfg.batch_cap)
            if r.branch == samplers.BRANCH_MINIBATCH:
                assert r.noise_added == (r.sensitivity > cal.free_threshold_minibatch)
            else:
                assert r.noise_added == (r.sensitivity > cal.free_threshold_fullbatch)

    def test_fullbatch_log_ratio_consistency(self):
        model = small_mixture()
        cfg = chain_config("penalty", epsilon=0.2, proposal_scale=0.1, iters=100, seed=31)
        trace = samplers.run_chain(model, cfg)
        prev = samplers.initial_state(model, cfg).theta
        for r in trace:
            if r.branch == samplers.BRANCH_FULLBATCH:
                diff = models.energy_diff_sum(model, prev, r.theta_proposed)
                assert r.log_ratio == pytest.approx(diff + r.noise_shift, abs=1e-10)
            prev = r.theta


class TestRunChain:
    def test_zero_iters(self):
        assert samplers.run_chain(small_mixture(), chain_config("mh", iters=0)) == []

    def test_deterministic(self):
        model = small_mixture()
        a = samplers.run_chain(model, chain_config("dpfast", iters=200))
        b = samplers.run_chain(model, chain_config("dpfast", iters=200))
        for x, y in zip(a, b):
            assert np.array_equal(x.theta, y.theta) and x.log_ratio == y.log_ratio

    def test_chain_stays_in_domain(self):
        model = small_mixture()
        cfg = chain_config("mh", proposal_scale=2.0, iters=500, seed=3)
        trace = samplers.run_chain(model, cfg)
        assert any(r.branch == samplers.BRANCH_OUT_OF_DOMAIN for r in trace)
        for r in trace:
            assert model.domain.contains(r.theta)
            if r.branch == samplers.BRANCH_OUT_OF_DOMAIN:
                assert not model.domain.contains(r.theta_proposed)

    def test_expected_batch_size_law_on_trace(self):
        model = small_mixture(n=100, seed=6)
        cfg = chain_config("tunamh", lam=4.0, proposal_scale=0.05, iters=4000, seed=15)
        trace = samplers.run_chain(model, cfg)
        prev = samplers.initial_state(model, cfg).theta
        bs, mus = [], []
        for r in trace:
            if r.branch == samplers.BRANCH_MINIBATCH:
                bs.append(r.batch_size)
                mus.append(cfg.lam + model.C * model.distance(prev, r.theta_proposed))
            prev = r.theta
        bs, mus = np.array(bs), np.array(mus)
        se = math.sqrt(mus.sum()) / bs.size
        assert abs(bs.mean() - mus.mean()) <= 3 * se

    def test_invalid_mode_rejected(self):
        with pytest.raises(ConfigurationError):
            samplers.run_chain(small_mixture(), chain_config("gibbs"))

    def test_initial_state_outside_domain_rejected(self):
        model = small_mixture()
        cfg = chain_config("mh", theta0=np.array([9.0, 9.0]))
        with pytest.raises(ConfigurationError):
            samplers.run_chain(model, cfg)

    def test_epsilon_required_for_private_modes(self):
        with pytest.raises(ConfigurationError):
            chain_config("dpfast", epsilon=1.5).validate()
        chain_config("dpfast", epsilon=1.0).validate()  # closed at 1 for the sweep
        chain_config("mh", epsilon=99.0).validate()  # ignored for non-private modes


class TestTuner:
    def test_reaches_target_acceptance(self):
        model = small_mixture(n=80, seed=9, temperature=20.0)
        cfg = chain_config("mh", proposal_scale=1.0, iters=0, seed=17)
        scale = samplers.tune_proposal_scale(model, cfg)
        probe = replace(cfg, proposal_scale=scale, iters=2000)
        acc = samplers.acceptance_rate(samplers.run_chain(model, probe))
        assert 0.5 <= acc <= 0.7

    def test_deterministic(self):
        model = small_mixture(n=80, seed=9, temperature=20.0)
        cfg = chain_config("mh", proposal_scale=1.0, iters=0, seed=17)
        assert samplers.tune_proposal_scale(model, cfg) == samplers.tune_proposal_scale(model, cfg)
