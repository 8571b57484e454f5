"""Latency accounting and the consensus-averaging baseline."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcmc.cluster import (
    LatencyModel,
    budget_report,
    cmc_combine,
    iteration_time,
    likelihood_fraction,
    run_subposterior_chains,
    samples_within_budget,
)
from gcmc.diagnostics import batch_means_variance
from gcmc.errors import ConfigError, DegeneracyWarning
from gcmc.models import gaussian_model, lognormal_model, subposterior_log_density
from gcmc.oracle import GaussianSetup, pi_lambda_params

PAPER_SETTING = LatencyModel(ell=1.0, comm_latency=10.0, inner_steps=20)


class TestIterationTime:
    def test_paper_setting(self):
        assert iteration_time(PAPER_SETTING, "gcmc") == 40.0
        assert iteration_time(PAPER_SETTING, "direct") == 21.0

    def test_zero_latency(self):
        model = LatencyModel(ell=1.0, comm_latency=0.0, inner_steps=1)
        assert iteration_time(model, "gcmc") == 1.0
        assert iteration_time(model, "direct") == 1.0

    def test_direct_ignores_inner_steps(self):
        for k in (1, 5, 100):
            model = LatencyModel(ell=2.0, comm_latency=3.0, inner_steps=k)
            assert iteration_time(model, "direct") == 8.0

    def test_unknown_algorithm(self):
        with pytest.raises(ConfigError):
            iteration_time(PAPER_SETTING, "smc")


class TestLikelihoodFraction:
    def test_paper_values(self):
        assert likelihood_fraction(PAPER_SETTING, "gcmc") == pytest.approx(0.5)
        assert likelihood_fraction(PAPER_SETTING, "direct") == pytest.approx(1.0 / 21.0)

    def test_no_latency_is_all_work(self):
        model = LatencyModel(ell=1.0, comm_latency=0.0, inner_steps=7)
        assert likelihood_fraction(model, "gcmc") == 1.0
        assert likelihood_fraction(model, "direct") == 1.0

    @given(
        ell=st.floats(min_value=0.01, max_value=100),
        latency=st.one_of(st.just(0.0), st.floats(min_value=0.01, max_value=1000)),
        k=st.integers(min_value=1, max_value=200),
    )
    @settings(max_examples=100, deadline=None)
    def test_gcmc_fraction_dominates(self, ell, latency, k):
        model = LatencyModel(ell=ell, comm_latency=latency, inner_steps=k)
        gcmc_frac = likelihood_fraction(model, "gcmc")
        direct_frac = likelihood_fraction(model, "direct")
        assert gcmc_frac >= direct_frac - 1e-15
        if k == 1 or latency == 0.0:
            assert gcmc_frac == pytest.approx(direct_frac)
        else:
            assert gcmc_frac > direct_frac


class TestBudget:
    def test_paper_sample_counts(self):
        assert samples_within_budget(PAPER_SETTING, "gcmc", 200_000.0) == 5000
        assert samples_within_budget(PAPER_SETTING, "direct", 200_000.0) == 9523

    def test_budget_below_one_iteration(self):
        assert samples_within_budget(PAPER_SETTING, "gcmc", 39.0) == 0

    def test_budget_must_be_positive(self):
        with pytest.raises(ConfigError):
            samples_within_budget(PAPER_SETTING, "gcmc", 0.0)

    @given(
        ell=st.floats(min_value=0.01, max_value=10),
        latency=st.floats(min_value=0.0, max_value=100),
        k=st.integers(min_value=1, max_value=50),
        budget=st.floats(min_value=0.1, max_value=1e6),
    )
    @settings(max_examples=200, deadline=None)
    def test_accounting_identity(self, ell, latency, k, budget):
        model = LatencyModel(ell=ell, comm_latency=latency, inner_steps=k)
        for algorithm in ("gcmc", "direct"):
            step = iteration_time(model, algorithm)
            samples = samples_within_budget(model, algorithm, budget)
            assert samples * step <= budget * (1 + 1e-12)
            assert budget < (samples + 1) * step * (1 + 1e-12)

    def test_report_fields(self):
        report = budget_report(PAPER_SETTING, "gcmc", 200_000.0)
        assert report == {
            "algorithm": "gcmc",
            "samples": 5000,
            "iteration_time": 40.0,
            "likelihood_fraction": 0.5,
        }

    def test_validation(self):
        with pytest.raises(ConfigError):
            LatencyModel(ell=0.0, comm_latency=1.0)
        with pytest.raises(ConfigError):
            LatencyModel(ell=1.0, comm_latency=-1.0)
        with pytest.raises(ConfigError):
            LatencyModel(ell=1.0, comm_latency=1.0, inner_steps=0)


def chain_se(samples):
    return math.sqrt(float(batch_means_variance(samples)[0]) / len(samples))


class TestSubposteriorChains:
    def test_single_block_recovers_posterior(self):
        model = gaussian_model(0.0, 1.0, [2.0], [1.0])
        out = run_subposterior_chains(model, 100_000, seed=1)
        z = out.chains[0, :, 0]
        # With b=1 the subposterior is the posterior N(1, 1/2).
        assert z.mean() == pytest.approx(1.0, abs=4 * chain_se(z))
        assert z.var() == pytest.approx(0.5, rel=0.05)

    def test_gaussian_blocks_match_conjugate_form(self):
        model = gaussian_model(0.5, 2.0, [1.0, -1.0, 3.0], [1.0, 0.5, 2.0])
        b = 3
        out = run_subposterior_chains(model, 100_000, seed=2)
        for j in range(b):
            # Fractionated prior N(mu0, b*s0sq) conjugate with N(mu_j; z, s2_j).
            prior_var = b * 2.0
            post_var = 1.0 / (1.0 / prior_var + 1.0 / model.conjugate_params.s2[j])
            post_mean = post_var * (0.5 / prior_var + model.conjugate_params.mu[j] / model.conjugate_params.s2[j])
            z = out.chains[j, :, 0]
            assert z.mean() == pytest.approx(post_mean, abs=4 * chain_se(z))
            assert z.var() == pytest.approx(post_var, rel=0.06)

    def test_fractionated_prior_widens_by_block_count(self):
        # Checked on the density itself: the z^2 coefficient of the
        # fractionated log-prior is 1/b times the full prior's.
        model = gaussian_model(0.0, 2.0, [1.0, 2.0, 3.0, 4.0], [1.0] * 4)
        full = model.prior_log_density
        sub = subposterior_log_density(model, 0)
        z1, z2 = np.array([1.0]), np.array([3.0])
        flat_likelihood = model.log_partial(0, z1) - model.log_partial(0, z2)
        got = (sub(z1) - sub(z2)) - flat_likelihood
        assert float(got) == pytest.approx(float(full(z1) - full(z2)) / 4.0, rel=1e-12)

    def test_lognormal_blocks_positive_and_correct_in_log_space(self):
        model = lognormal_model(0.0, 25.0, [0.3, -0.2], 1.0)
        out = run_subposterior_chains(model, 100_000, seed=3)
        assert np.all(out.chains > 0)
        b = 2
        for j in range(b):
            w = np.log(out.chains[j, :, 0])
            # Distribution of log z under the z-density of the subposterior:
            # the change of variables contributes an extra +w to the exponent.
            var = 1.0 / (1.0 / (b * 25.0) + 1.0)
            mean = var * (model.conjugate_params.mu[j] - 1.0 / b + 1.0)
            assert w.mean() == pytest.approx(mean, abs=4 * chain_se(w))

    def test_determinism(self):
        model = gaussian_model(0.0, 1.0, [1.0, 2.0], [1.0, 1.0])
        a = run_subposterior_chains(model, 1000, seed=9)
        b = run_subposterior_chains(model, 1000, seed=9)
        np.testing.assert_array_equal(a.chains, b.chains)

    def test_acceptance_rates_reasonable(self):
        model = gaussian_model(0.0, 1.0, [1.0, 2.0], [1.0, 1.0])
        out = run_subposterior_chains(model, 20_000, seed=4)
        assert np.all(out.acceptance_rates > 0.2)
        assert np.all(out.acceptance_rates < 0.8)


class TestCmcCombine:
    def test_single_chain_identity(self):
        rng = np.random.default_rng(5)
        chains = rng.normal(size=(1, 100, 2))
        np.testing.assert_allclose(cmc_combine(chains), chains[0])

    def test_iid_common_covariance_averages(self):
        rng = np.random.default_rng(6)
        b, n = 4, 200_000
        offsets = np.array([0.0, 1.0, 2.0, 3.0])
        chains = rng.normal(size=(b, n, 1)) + offsets[:, None, None]
        consensus = cmc_combine(chains)
        chain_means = chains.mean(axis=1)[:, 0]
        se = 1.0 / math.sqrt(n * b)
        assert consensus.mean() == pytest.approx(chain_means.mean(), abs=4 * se)

    def test_affine_equivariance(self):
        rng = np.random.default_rng(7)
        chains = rng.normal(size=(3, 5000, 2)) @ np.array([[1.0, 0.3], [0.0, 0.7]]) + rng.normal(
            size=(3, 1, 2)
        )
        amat = np.array([[2.0, 0.5], [-0.3, 1.5]])
        shift = np.array([1.0, -2.0])
        direct = cmc_combine(chains @ amat.T + shift)
        mapped = cmc_combine(chains) @ amat.T + shift
        np.testing.assert_allclose(direct, mapped, rtol=1e-8, atol=1e-8)

    def test_singular_covariance_falls_back_to_diagonal(self):
        rng = np.random.default_rng(8)
        chains = rng.normal(size=(2, 500, 2))
        chains[0, :, 1] = chains[0, :, 0]  # exactly collinear components
        with pytest.warns(DegeneracyWarning):
            out = cmc_combine(chains)
        assert np.all(np.isfinite(out))

    def test_scalar_chains_supported(self):
        rng = np.random.default_rng(9)
        chains = rng.normal(size=(3, 1000)) + np.array([[0.0], [1.0], [2.0]])
        out = cmc_combine(chains)
        assert out.shape == (1000, 1)
