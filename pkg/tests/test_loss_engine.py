"""
Tests for loss distributions and risk metrics.
"""

import numpy as np
import pytest
from scipy.stats import norm

from src.core_types import CreditParams, DejdParams, LossDistribution, Side, TransactionSpec
from src.loss_engine import (
    DistributionMethod,
    LossMode,
    build_distribution_independent,
    build_distribution_joint,
    closeout_payoff,
    distribution_from_scenarios,
    independent_losses,
    loss_from_path,
    metrics,
    scenario_losses,
)
from src.stochastic_models import PathSample, sample_scenarios


def black_scholes_el(dejd, txn):
    """EL of the pure-diffusion lending option in closed form."""
    u = txn.mpr_years
    s = dejd.sigma_a * np.sqrt(u)
    strike = np.log((1 + txn.haircut) / (1 + txn.liquidity_spread))
    d2 = (dejd.mu * u - strike) / s
    d1 = d2 + s
    forward = np.exp(dejd.mu * u + 0.5 * s * s)
    return (1 + txn.liquidity_spread) * forward * norm.cdf(d1) - (1 + txn.haircut) * norm.cdf(d2)


def weighted(loss, weights):
    n = len(loss)
    return LossDistribution(
        loss=np.asarray(loss, dtype=float),
        defaulted=np.ones(n, dtype=bool),
        tau=np.zeros(n),
        weights=np.asarray(weights, dtype=float),
    )


def sampled(loss):
    n = len(loss)
    return LossDistribution(loss=np.asarray(loss, dtype=float), defaulted=np.ones(n, dtype=bool), tau=np.zeros(n))


@pytest.fixture
def gaussian_asset():
    return DejdParams(mu=0.05, sigma_a=0.2, lambda_a=0.0, p_u=0.5, eta=50.0, theta=50.0)


@pytest.fixture
def jump_asset():
    return DejdParams(mu=0.05, sigma_a=0.2, lambda_a=25.0, p_u=0.4, eta=60.0, theta=45.0)


class TestCloseout:
    def test_lending_loses_on_rally(self):
        txn = TransactionSpec(haircut=0.05)
        payoff = closeout_payoff(np.log(np.array([1.1, 1.0])), txn)
        np.testing.assert_allclose(payoff, [0.05, 0.0], atol=1e-15)

    def test_liquidity_spread_raises_replacement_cost(self):
        txn = TransactionSpec(haircut=0.05, liquidity_spread=0.02)
        assert closeout_payoff(np.zeros(1), txn)[0] == pytest.approx(0.0)
        assert closeout_payoff(np.array([0.04]), txn)[0] == pytest.approx(np.exp(0.04) * 1.02 - 1.05)

    def test_repo_loses_on_fall(self):
        txn = TransactionSpec(haircut=0.05, side=Side.REPO)
        payoff = closeout_payoff(np.log(np.array([0.9, 1.2])), txn)
        np.testing.assert_allclose(payoff, [0.05, 0.0], atol=1e-15)

    def test_loss_from_path(self):
        credit = CreditParams(k=0.5, ybar=-3.0, sigma=1.0, recovery=0.4)
        txn = TransactionSpec(haircut=0.05)
        path = PathSample(
            log_return_path=np.array([0.1]),
            intensity_path=np.array([0.05]),
            default_time=0.004,
            mpr_log_return=float(np.log(1.1)),
            x_at_default=0.1,
        )
        sample = loss_from_path(path, txn, credit)
        assert sample.loss == pytest.approx(0.6 * np.exp(0.1) * 0.05)
        assert sample.default_time == 0.004

        survived = PathSample(np.zeros(250), np.zeros(250), None, None)
        assert loss_from_path(survived, txn, credit).loss == 0.0


class TestMetrics:
    """Test EL, PD and ES estimators."""

    def test_sampled_metrics(self):
        loss = np.arange(100) / 100.0
        result = metrics(sampled(loss), es_confidence=0.9)
        assert result.el == pytest.approx(loss.mean())
        assert result.pd_loss == pytest.approx(0.99)
        assert result.es == pytest.approx(np.mean(loss[-10:]))
        assert result.path_count == 100
        assert result.es_unstable

    def test_es_counts_zero_losses(self):
        loss = np.zeros(1000)
        loss[:3] = 1.0
        result = metrics(sampled(loss), es_confidence=0.99)
        assert result.es == pytest.approx(0.3)
        assert result.el <= result.es

    def test_single_tail_sample(self):
        result = metrics(sampled(np.arange(100) / 100.0), es_confidence=0.99)
        assert result.es == pytest.approx(0.99)
        assert result.es_stderr == 0.0

    def test_weighted_fractional_tail(self):
        result = metrics(weighted([0.0, 1.0], [0.995, 0.005]), es_confidence=0.99)
        assert result.el == pytest.approx(0.005)
        assert result.pd_loss == pytest.approx(0.005)
        assert result.es == pytest.approx(0.5)
        assert result.el_stderr == 0.0

    def test_rejects_bad_confidence(self):
        with pytest.raises(ValueError):
            metrics(sampled([0.0, 1.0]), es_confidence=1.0)

    def test_stderr_of_mean(self):
        loss = np.random.default_rng(3).exponential(size=10_000)
        result = metrics(sampled(loss))
        assert result.el_stderr == pytest.approx(loss.std(ddof=1) / 100.0)


class TestIndependentDistribution:
    def test_quadrature_matches_black_scholes(self, gaussian_asset):
        txn = TransactionSpec(haircut=0.05)
        dist = build_distribution_independent(gaussian_asset, txn, DistributionMethod.QUADRATURE)
        assert metrics(dist).el == pytest.approx(black_scholes_el(gaussian_asset, txn), abs=1e-6)

    def test_quadrature_at_the_money(self, gaussian_asset):
        txn = TransactionSpec(haircut=0.0, mpr_days=5)
        dist = build_distribution_independent(gaussian_asset, txn, DistributionMethod.QUADRATURE)
        assert metrics(dist).el == pytest.approx(black_scholes_el(gaussian_asset, txn), abs=1e-6)

    def test_quadrature_agrees_with_simulation_under_jumps(self, jump_asset):
        txn = TransactionSpec(haircut=0.02)
        exact = metrics(build_distribution_independent(jump_asset, txn, DistributionMethod.QUADRATURE))
        mc = metrics(build_distribution_independent(jump_asset, txn, n_paths=200_000, seed=13))
        assert abs(mc.el - exact.el) < 4 * mc.el_stderr
        assert abs(mc.pd_loss - exact.pd_loss) < 4 * mc.pd_stderr

    def test_higher_haircut_lowers_loss(self, jump_asset):
        low = metrics(build_distribution_independent(jump_asset, TransactionSpec(haircut=0.02), DistributionMethod.QUADRATURE))
        high = metrics(build_distribution_independent(jump_asset, TransactionSpec(haircut=0.06), DistributionMethod.QUADRATURE))
        assert high.el < low.el
        assert high.es < low.es

    @pytest.mark.slow
    def test_simulation_matches_black_scholes(self, gaussian_asset):
        txn = TransactionSpec(haircut=0.0, liquidity_spread=0.1)
        dist = build_distribution_independent(gaussian_asset, txn, n_paths=1_000_000, seed=17)
        expected = black_scholes_el(gaussian_asset, txn)
        assert metrics(dist).el == pytest.approx(expected, rel=1e-3)


class TestJointDistribution:
    def test_survivors_lose_nothing(self, jump_asset):
        credit = CreditParams(k=0.5, ybar=np.log(0.1), sigma=1.0, recovery=0.4)
        txn = TransactionSpec(haircut=0.0)
        dist = build_distribution_joint(jump_asset, credit, txn, 5_000, seed=3)
        assert np.all(dist.loss[~dist.defaulted] == 0.0)
        assert dist.seed_descriptor.seed == 3

    def test_joint_mode_needs_credit(self, jump_asset):
        scenarios = sample_scenarios(jump_asset, None, TransactionSpec(haircut=0.0), 100, seed=1)
        with pytest.raises(ValueError):
            distribution_from_scenarios(scenarios, TransactionSpec(haircut=0.0), None, LossMode.JOINT)

    def test_independent_mode_ignores_defaults(self, jump_asset):
        credit = CreditParams(k=0.5, ybar=np.log(0.1), sigma=1.0)
        txn = TransactionSpec(haircut=0.01)
        scenarios = sample_scenarios(jump_asset, credit, txn, 2_000, seed=4)
        dist = distribution_from_scenarios(scenarios, txn, credit, LossMode.INDEPENDENT)
        np.testing.assert_array_equal(dist.loss, independent_losses(scenarios, txn))
        assert dist.defaulted.all()

    def test_recovery_scales_loss(self, jump_asset):
        txn = TransactionSpec(haircut=0.0)
        base = CreditParams(k=0.5, ybar=np.log(0.2), sigma=1.0)
        scenarios = sample_scenarios(jump_asset, base, txn, 2_000, seed=6)
        full = scenario_losses(scenarios, txn, base)
        partial = scenario_losses(scenarios, txn, base.model_copy(update={"recovery": 0.25}))
        np.testing.assert_allclose(partial, 0.75 * full)

    def test_lending_repo_mirror_identity(self, jump_asset):
        credit = CreditParams(k=0.5, ybar=np.log(0.2), sigma=1.0, recovery=0.4, rho=0.5)
        lending = TransactionSpec(haircut=0.0, liquidity_spread=0.03)
        repo = TransactionSpec(haircut=-0.03, liquidity_spread=0.0, side=Side.REPO)
        scenarios = sample_scenarios(jump_asset, credit, lending, 5_000, seed=21)
        lending_loss = scenario_losses(scenarios, lending, credit)
        repo_loss = scenario_losses(scenarios.mirrored(), repo, credit)
        factor = np.exp(2.0 * scenarios.x_tau + scenarios.mpr_return)
        np.testing.assert_allclose(lending_loss, repo_loss * factor, rtol=1e-8, atol=1e-14)

    @pytest.mark.slow
    def test_independence_factorizes_expected_loss(self, jump_asset):
        # Martingale drift makes E[exp(X(tau))] = 1 when tau is independent of X
        compensator = jump_asset.p_u * jump_asset.eta / (jump_asset.eta - 1) + jump_asset.q_d * jump_asset.theta / (
            jump_asset.theta + 1
        )
        mu = -0.5 * jump_asset.sigma_a**2 - jump_asset.lambda_a * (compensator - 1.0)
        asset = jump_asset.model_copy(update={"mu": mu})
        credit = CreditParams(k=0.5, ybar=np.log(0.04), sigma=0.0, recovery=0.0, rho=0.0)
        txn = TransactionSpec(haircut=0.0)

        joint = metrics(build_distribution_joint(asset, credit, txn, 1_000_000, seed=29))
        payoff = metrics(build_distribution_independent(asset, txn, DistributionMethod.QUADRATURE)).el
        expected = (1 - np.exp(-0.04)) * payoff
        assert abs(joint.el - expected) < 3 * joint.el_stderr
