import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttu.data import prepare_dataset
from ttu.model import (
    EvidenceState,
    ModelConfig,
    TTUPosterior,
    UnconstrainedParams,
    constrain,
    constrained_from_vector,
    log_likelihood_ratio_delta,
    observation_logit,
    predict_logit,
    predict_logit_draws,
)
from tests.conftest import make_records, prior_plausible_point

CFG = ModelConfig(censor_limit_min=300.0, prior_t_mean=120.0, prior_scale=60.0)


def params(rho0=0.5, rho1=0.5, mu0=100.0, mu1=100.0, sigma0=50.0, sigma1=50.0,
           beta=(0.0, 0.0, 0.0, 0.0)):
    from ttu.model import ConstrainedParams
    return ConstrainedParams(rho0=rho0, rho1=rho1, mu0=mu0, mu1=mu1,
                             sigma0=sigma0, sigma1=sigma1, beta=np.array(beta))


class TestConstrain:
    def test_eta_zero_gives_half(self):
        p = constrain(UnconstrainedParams(0, 0, 0, 0, 0, 0), CFG)
        assert p.rho0 == 0.5 and p.rho1 == 0.5

    def test_sigma_transform(self):
        p = constrain(UnconstrainedParams(0, 0, 0, 0, 0.0, 0.0), CFG)
        assert p.sigma0 == pytest.approx(1.0 + 1e-6, abs=0)
        assert p.sigma1 == pytest.approx(1.0 + 1e-6, abs=0)

    def test_mu1_clamped_at_censor_limit(self):
        # mu0 = 200 via logit(200/300); delta_mu = 150
        u = UnconstrainedParams(0, 0, float(np.log(2.0)), float(np.log(150.0)), 0, 0)
        p = constrain(u, CFG)
        assert p.mu0 == pytest.approx(200.0, abs=1e-9)
        assert p.mu1 == 300.0
        assert p.mu1_clamped

    @settings(max_examples=200, deadline=None)
    @given(u=st.lists(st.floats(-20, 20, allow_nan=False), min_size=6, max_size=6))
    def test_ordered_means_always(self, u):
        p = constrain(UnconstrainedParams(*u), CFG)
        assert p.mu1 >= p.mu0
        assert 0.0 <= p.mu0 <= CFG.censor_limit_min
        assert p.mu1 <= CFG.censor_limit_min
        assert 1e-6 <= p.rho0 <= 1 - 1e-6
        assert p.sigma0 > 0 and p.sigma1 > 0


class TestDelta:
    def test_symmetric_kernels_cancel(self):
        p = params()
        assert log_likelihood_ratio_delta(42.0, 0, p, CFG) == 0.0
        assert log_likelihood_ratio_delta(42.0, 1, p, CFG) == 0.0

    def test_density_difference_closed_form(self):
        # t = mu1, equal sigmas, mu0 = mu1 - d  =>  d^2 / (2 sigma^2)
        d, sigma = 60.0, 40.0
        p = params(mu0=150.0 - d, mu1=150.0, sigma0=sigma, sigma1=sigma)
        got = log_likelihood_ratio_delta(150.0, 0, p, CFG)
        assert got == pytest.approx(d * d / (2 * sigma * sigma), rel=1e-12)

    def test_censored_oracle_value(self):
        # log SF(0) - log SF(6), frozen from a 50-digit erfc evaluation
        p = params(mu0=0.0, mu1=300.0, sigma0=50.0, sigma1=50.0)
        got = log_likelihood_ratio_delta(300.0, 1, p, CFG)
        assert got == pytest.approx(20.043621769414760346, rel=1e-13)

    def test_range_error(self):
        with pytest.raises(ValueError):
            log_likelihood_ratio_delta(301.0, 0, params(), CFG)

    def test_translation_symmetry(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            mu0 = rng.uniform(10, 120)
            mu1 = mu0 + rng.uniform(0, 120)
            s0, s1 = rng.uniform(5, 90, 2)
            t = rng.uniform(35, 250)
            shift = rng.uniform(-30, 30)
            a = log_likelihood_ratio_delta(
                t, 0, params(mu0=mu0, mu1=mu1, sigma0=s0, sigma1=s1), CFG)
            b = log_likelihood_ratio_delta(
                t + shift, 0,
                params(mu0=mu0 + shift, mu1=mu1 + shift, sigma0=s0, sigma1=s1), CFG)
            assert a == pytest.approx(b, abs=1e-12)


class TestObservationLogit:
    def test_fully_symmetric_model_gives_even_odds(self):
        p = params()
        assert observation_logit(100.0, 0, 1, 0.3, 0, 1, 0, p, CFG) == 0.0
        assert observation_logit(0.0, 0, 0, 0.3, 0, 1, 0, p, CFG) == 0.0

    def test_m0_branch_arithmetic(self):
        p = params(rho0=0.5, rho1=0.8)
        got = observation_logit(0.0, 0, 0, 0.0, 0, 0, 0, p, CFG)
        assert got == pytest.approx(-0.9162907318741550651835, rel=1e-14)

    def test_full_scalar_oracle(self):
        # Frozen 50-digit evaluation of the m=1, c=0 branch at theta*.
        p = params(rho0=0.35, rho1=0.55, mu0=90.0, mu1=210.0, sigma0=60.0,
                   sigma1=80.0, beta=(0.4, -0.2, 0.3, 0.1))
        got = observation_logit(120.0, 0, 1, 0.7, 0, 1, 0, p, CFG)
        assert got == pytest.approx(0.2364905512912763115174, rel=1e-12)

    def test_equal_kernels_reduce_to_linear_term(self):
        p = params(beta=(0.5, -0.1, 0.2, 0.3))
        got = observation_logit(77.0, 0, 1, 1.5, 0, 1, 0, p, CFG)
        assert got == pytest.approx(0.5 * 1.5 + 0.2, abs=1e-12)


def fd_grad(f, u, h=1e-5):
    g = np.zeros_like(u)
    for i in range(len(u)):
        step = h * max(1.0, abs(u[i]))
        up, dn = u.copy(), u.copy()
        up[i] += step
        dn[i] -= step
        g[i] = (f(up)[0] - f(dn)[0]) / (2 * step)
    return g


def assert_grad_close(analytic, numeric, rel=1e-6, abs_floor=1e-8):
    """Component check: relative agreement, with an absolute fallback below
    the finite-difference noise floor for near-zero components."""
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (diff < rel * denom) | (diff < abs_floor)
    assert ok.all(), f"grad mismatch: {diff / np.maximum(denom, 1e-300)}"


class TestLogPosterior:
    def test_gradient_matches_finite_differences(self, small_dataset, small_config):
        post = TTUPosterior(small_dataset, small_config)
        rng = np.random.default_rng(42)
        for _ in range(20):
            u = prior_plausible_point(rng, small_config)
            if abs(constrain(UnconstrainedParams.from_vector(u), small_config).mu0
                   + np.exp(u[3]) - small_config.censor_limit_min) < 1.0:
                u[3] = np.log(30.0)
            _, g = post.value_and_grad(u)
            assert_grad_close(g, fd_grad(post.value_and_grad, u))

    def test_gradient_no_covariate_mode(self, small_dataset, small_config):
        post = TTUPosterior(small_dataset, small_config, covariates=False)
        rng = np.random.default_rng(9)
        for _ in range(10):
            u = prior_plausible_point(rng, small_config)[:6]
            _, g = post.value_and_grad(u)
            assert_grad_close(g, fd_grad(post.value_and_grad, u))

    def test_symmetric_outcome_pairs_zero_beta_grad(self):
        # duplicate every row with flipped outcome; at symmetric parameters the
        # beta gradient must vanish exactly
        records = make_records(4, n=30)
        from dataclasses import replace
        flipped = [replace(r, id=r.id + "f", admitted=not r.admitted) for r in records]
        ds = prepare_dataset(records + flipped)
        cfg = ModelConfig.from_dataset(ds)
        post = TTUPosterior(ds, cfg)
        u = np.zeros(10)
        u[3] = -40.0  # delta_mu ~ 4e-18, below float resolution of mu1 - mu0
        u[4] = u[5] = np.log(cfg.prior_scale)
        _, g = post.value_and_grad(u)
        assert np.allclose(g[6:], 0.0, atol=1e-10)

    def test_empty_dataset_gives_prior_only(self, small_dataset, small_config):
        from dataclasses import replace
        empty = replace(small_dataset, n=0, t_min=np.zeros(0),
                        censored=np.zeros(0, np.int8), voided=np.zeros(0, np.int8),
                        outcome=np.zeros(0, np.int8), age_std=np.zeros(0),
                        age_missing=np.zeros(0, np.int8), sex01=np.zeros(0, np.int8),
                        sex_missing=np.zeros(0, np.int8))
        post_empty = TTUPosterior(empty, small_config)
        rng = np.random.default_rng(1)
        u = prior_plausible_point(rng, small_config)
        v_empty, _ = post_empty.value_and_grad(u)
        # check against the prior computed through an n=1 dataset with the
        # likelihood subtracted
        post_one = TTUPosterior(small_dataset, small_config)
        v_full, _ = post_one.value_and_grad(u)
        assert np.isfinite(v_empty)
        assert v_full != pytest.approx(v_empty)  # likelihood contributes

    def test_prior_finite_on_random_scan(self, small_dataset, small_config):
        from dataclasses import replace
        empty = replace(small_dataset, n=0, t_min=np.zeros(0),
                        censored=np.zeros(0, np.int8), voided=np.zeros(0, np.int8),
                        outcome=np.zeros(0, np.int8), age_std=np.zeros(0),
                        age_missing=np.zeros(0, np.int8), sex01=np.zeros(0, np.int8),
                        sex_missing=np.zeros(0, np.int8))
        post = TTUPosterior(empty, small_config)
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            u = rng.normal(scale=2.0, size=10)
            v, g = post.value_and_grad(u)
            assert np.isfinite(v)
            assert np.all(np.isfinite(g))


class TestPredictLogit:
    def test_not_yet_zero_at_arrival_when_kernels_far(self):
        p = params(rho0=0.3, rho1=0.7, mu0=150.0, mu1=250.0, sigma0=20.0, sigma1=20.0)
        got = predict_logit(EvidenceState.not_yet(0.0), 0, 0, 0, 0, p, CFG)
        assert got == pytest.approx(0.0, abs=1e-9)

    def test_voided_at_equals_observation_logit(self):
        p = params(rho0=0.35, rho1=0.55, mu0=90.0, mu1=210.0, sigma0=60.0,
                   sigma1=80.0, beta=(0.4, -0.2, 0.3, 0.1))
        u = 120.0
        a = predict_logit(EvidenceState.voided_at(u), 0.7, 0, 1, 0, p, CFG)
        b = observation_logit(u, 0, 1, 0.7, 0, 1, 0, p, CFG)
        assert a == b

    def test_not_observed_equals_m0_branch(self):
        p = params(rho0=0.35, rho1=0.55, beta=(0.4, -0.2, 0.3, 0.1))
        a = predict_logit(EvidenceState.not_observed(), 0.7, 0, 1, 0, p, CFG)
        b = observation_logit(0.0, 0, 0, 0.7, 0, 1, 0, p, CFG)
        assert a == b

    def test_not_yet_interpolates_to_m0_branch(self):
        # with full censoring mass the not-yet state at large t approaches the
        # never-voided branch
        p = params(rho0=0.4, rho1=0.6, mu0=50.0, mu1=80.0, sigma0=10.0, sigma1=10.0)
        at_c = predict_logit(EvidenceState.not_yet(300.0), 0, 0, 0, 0, p, CFG)
        m0 = predict_logit(EvidenceState.not_observed(), 0, 0, 0, 0, p, CFG)
        assert at_c == pytest.approx(m0, abs=1e-10)

    def test_not_yet_monotone_while_mass_ordering_holds(self):
        # The evidence is monotone exactly while the weighted drained-mass
        # hazards stay ordered: q_k(t) = rho_k f_k(t) / [(1-rho_k) + rho_k
        # S_k(t)] and d logit/dt = q0 - q1. Brute-force grid scan over 50
        # random draws: wherever q0 - q1 holds one strict sign across a grid
        # cell, the logit must move in that direction.
        from ttu.special import log_normal_sf

        def q(t, rho, mu, sigma):
            f = np.exp(-0.5 * ((t - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
            surv = np.exp(log_normal_sf((t - mu) / sigma))
            return rho * f / ((1 - rho) + rho * surv)

        rng = np.random.default_rng(12)
        grid = np.linspace(0.0, 300.0, 121)
        cells_checked = 0
        for _ in range(50):
            rho0, rho1 = rng.uniform(0.05, 0.95, 2)
            mu0 = rng.uniform(20, 200)
            mu1 = min(mu0 + rng.uniform(5, 100), 300.0)
            s0, s1 = rng.uniform(10, 80, 2)
            p = params(rho0=rho0, rho1=rho1, mu0=mu0, mu1=mu1, sigma0=s0, sigma1=s1)
            vals = np.array([
                predict_logit(EvidenceState.not_yet(float(t)), 0, 0, 0, 0, p, CFG)
                for t in grid])
            slope_sign = np.sign(q(grid, rho0, mu0, s0) - q(grid, rho1, mu1, s1))
            diffs = np.diff(vals)
            same_sign = (slope_sign[:-1] == slope_sign[1:]) & (slope_sign[:-1] != 0)
            for i in np.flatnonzero(same_sign):
                assert np.sign(diffs[i]) == slope_sign[i] or abs(diffs[i]) < 1e-12
                cells_checked += 1
        assert cells_checked > 1000

    def test_range_error(self):
        with pytest.raises(ValueError):
            predict_logit(EvidenceState.not_yet(301.0), 0, 0, 0, 0, params(), CFG)
        with pytest.raises(ValueError):
            predict_logit(EvidenceState.voided_at(-1.0), 0, 0, 0, 0, params(), CFG)

    def test_draws_version_matches_scalar(self):
        rng = np.random.default_rng(5)
        u_mat = rng.normal(size=(8, 10))
        theta = constrained_from_vector(u_mat, CFG)
        x = np.array([0.5, 0.0, 1.0, 0.0])
        for state in (EvidenceState.voided_at(90.0), EvidenceState.not_yet(45.0),
                      EvidenceState.not_observed(), EvidenceState.voided_censored()):
            vec = predict_logit_draws(state, x, theta, CFG)
            for s in range(8):
                p = constrain(UnconstrainedParams.from_vector(u_mat[s]), CFG)
                scalar = predict_logit(state, 0.5, 0, 1, 0, p, CFG)
                assert vec[s] == pytest.approx(scalar, rel=1e-14)
