"""
Loss Engine

Turns simulated scenarios (or the analytic return density) into loss
distributions for the joint asset/credit model and the borrower-independent
model, and estimates expected loss, first-dollar loss probability and
expected shortfall.
"""

import logging
import math
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from .core_types import (
    CreditParams,
    DejdParams,
    LossDistribution,
    LossSample,
    Side,
    TransactionSpec,
)
from .stochastic_models import PathSample, ScenarioSet, mpr_return_density, sample_scenarios

logger = logging.getLogger(__name__)

MIN_TAIL_SAMPLES = 20


class LossMode(str, Enum):
    """Whether borrower credit support enters the loss."""

    JOINT = "joint"
    INDEPENDENT = "independent"


class DistributionMethod(str, Enum):
    MONTE_CARLO = "mc"
    QUADRATURE = "quadrature"


class RiskMetrics(BaseModel):
    """Loss distribution estimators with Monte Carlo standard errors."""

    model_config = ConfigDict(frozen=True)

    el: float
    el_stderr: float
    pd_loss: float
    pd_stderr: float
    es: float
    es_stderr: float
    es_confidence: float
    path_count: int
    es_unstable: bool = False


def closeout_payoff(mpr_return: np.ndarray, txn: TransactionSpec) -> np.ndarray:
    """
    Replacement shortfall per unit of loaned value at default.

    Securities lending loses when the security rallies past the collateral
    (a call struck at (1+h)/(1+g)); repo loses when the collateral security
    falls below the cash lent (a put).
    """
    h, g = txn.haircut, txn.liquidity_spread
    growth = np.exp(mpr_return)
    if txn.side is Side.SEC_LENDING:
        return np.maximum(growth * (1.0 + g) - (1.0 + h), 0.0)
    return np.maximum((1.0 - h) - growth * (1.0 - g), 0.0)


def scenario_losses(scenarios: ScenarioSet, txn: TransactionSpec, credit: CreditParams) -> np.ndarray:
    """Joint-model loss of every path as a fraction of B0."""
    exposure = np.where(scenarios.defaulted, np.exp(scenarios.x_tau), 0.0)
    return (1.0 - credit.recovery) * exposure * closeout_payoff(scenarios.mpr_return, txn)


def independent_losses(scenarios: ScenarioSet, txn: TransactionSpec) -> np.ndarray:
    """Credit-worthless loss: default at t=0 with certainty and no recovery."""
    return closeout_payoff(scenarios.mpr_return, txn)


def loss_from_path(path: PathSample, txn: TransactionSpec, credit: CreditParams) -> LossSample:
    """Loss on a single simulated path."""
    if path.default_time is None:
        return LossSample(loss=0.0, defaulted=False)
    payoff = closeout_payoff(np.array([path.mpr_log_return]), txn)[0]
    loss = (1.0 - credit.recovery) * np.exp(path.x_at_default) * payoff
    return LossSample(loss=float(loss), defaulted=True, default_time=path.default_time)


def distribution_from_scenarios(
    scenarios: ScenarioSet,
    txn: TransactionSpec,
    credit: Optional[CreditParams],
    mode: LossMode = LossMode.JOINT,
) -> LossDistribution:
    """Loss distribution at the transaction haircut on a fixed scenario set."""
    if mode is LossMode.JOINT:
        if credit is None:
            raise ValueError("joint mode requires credit parameters")
        return LossDistribution(
            loss=scenario_losses(scenarios, txn, credit),
            defaulted=scenarios.defaulted,
            tau=scenarios.tau,
            seed_descriptor=scenarios.seed_descriptor,
        )
    n = scenarios.path_count
    return LossDistribution(
        loss=independent_losses(scenarios, txn),
        defaulted=np.ones(n, dtype=bool),
        tau=np.zeros(n),
        seed_descriptor=scenarios.seed_descriptor,
    )


def build_distribution_joint(
    dejd: DejdParams,
    credit: CreditParams,
    txn: TransactionSpec,
    n_paths: int,
    seed: int,
    partitions: int = 16,
    workers: int = 1,
) -> LossDistribution:
    """Simulate n_paths joint paths and map each through the loss function."""
    scenarios = sample_scenarios(dejd, credit, txn, n_paths, seed, partitions, workers)
    logger.info(
        f"Joint distribution: {n_paths} paths, default rate {scenarios.default_rate():.3e}"
    )
    return distribution_from_scenarios(scenarios, txn, credit, LossMode.JOINT)


def quadrature_distribution(
    dejd: DejdParams,
    txn: TransactionSpec,
    panels: int = 400,
    order: int = 16,
    width_sd: float = 12.0,
    tol: float = 1e-12,
) -> LossDistribution:
    """
    Borrower-independent loss distribution as probability-weighted atoms.

    The loss region of the MPR return is split into Gauss-Legendre panels;
    each node becomes an atom weighted by density times quadrature weight.
    The remaining mass is a single zero-loss atom.
    """
    u = txn.mpr_years
    h, g = txn.haircut, txn.liquidity_spread
    centre = dejd.mu * u
    spread = width_sd * np.sqrt(dejd.variance_rate() * u) + 40.0 / min(dejd.eta, dejd.theta)
    if txn.side is Side.SEC_LENDING:
        lo = np.log((1.0 + h) / (1.0 + g))
        hi = max(lo, centre) + spread
    else:
        hi = np.log((1.0 - h) / (1.0 - g))
        lo = min(hi, centre) - spread

    nodes_ref, weights_ref = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * nodes_ref[None, :]).ravel()
    weights = (half[:, None] * weights_ref[None, :]).ravel()

    mass = weights * mpr_return_density(nodes, dejd, u, tol)
    losses = closeout_payoff(nodes, txn)
    zero_mass = max(0.0, 1.0 - float(mass.sum()))

    loss = np.concatenate([[0.0], losses])
    prob = np.concatenate([[zero_mass], mass])
    n = loss.shape[0]
    return LossDistribution(
        loss=loss,
        defaulted=np.ones(n, dtype=bool),
        tau=np.zeros(n),
        weights=prob,
    )


def build_distribution_independent(
    dejd: DejdParams,
    txn: TransactionSpec,
    method: DistributionMethod = DistributionMethod.MONTE_CARLO,
    n_paths: int = 100_000,
    seed: int = 0,
    partitions: int = 16,
    workers: int = 1,
) -> LossDistribution:
    """
    Loss distribution of the pure MPR-return option (Gamma = 1, R = 0, t = 0).

    Args:
        dejd: Asset dynamics
        txn: Transaction; only haircut, spread, MPR and side matter
        method: Monte Carlo sampling or quadrature against the return density
        n_paths, seed, partitions, workers: Monte Carlo layout

    Returns:
        LossDistribution (weighted atoms for quadrature)
    """
    if method is DistributionMethod.QUADRATURE:
        return quadrature_distribution(dejd, txn)
    scenarios = sample_scenarios(dejd, None, txn, n_paths, seed, partitions, workers)
    return distribution_from_scenarios(scenarios, txn, None, LossMode.INDEPENDENT)


def metrics(dist: LossDistribution, es_confidence: float = 0.99) -> RiskMetrics:
    """
    EL, PD and ES of a loss distribution.

    ES is the mean of the worst ceil((1 - q) n) losses, zero-loss paths
    included. Weighted distributions use the exact fractional tail.
    """
    if not 0.0 < es_confidence < 1.0:
        raise ValueError("es_confidence must lie in (0, 1)")
    n = dist.path_count
    if n < 1:
        raise ValueError("distribution has no samples")
    loss = dist.loss
    alpha = 1.0 - es_confidence

    if dist.weights is not None:
        w = dist.weights / dist.weights.sum()
        el = float(np.dot(w, loss))
        pd_loss = float(w[loss > 0].sum())
        order = np.argsort(-loss, kind="stable")
        cum = np.cumsum(w[order])
        before = np.concatenate([[0.0], cum[:-1]])
        take = np.clip(alpha - before, 0.0, w[order])
        es = float(np.dot(take, loss[order]) / alpha)
        return RiskMetrics(
            el=el,
            el_stderr=0.0,
            pd_loss=pd_loss,
            pd_stderr=0.0,
            es=es,
            es_stderr=0.0,
            es_confidence=es_confidence,
            path_count=n,
        )

    el = float(loss.mean())
    el_stderr = float(loss.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    pd_loss = float(np.count_nonzero(loss > 0) / n)
    pd_stderr = float(np.sqrt(pd_loss * (1.0 - pd_loss) / n))
    k = max(1, math.ceil(round(alpha * n, 9)))
    tail = np.partition(loss, n - k)[n - k:]
    es = float(tail.mean())
    es_stderr = float(tail.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0
    unstable = k < MIN_TAIL_SAMPLES
    if unstable:
        logger.warning(f"ES at {es_confidence:.4f} rests on only {k} tail sample(s)")
    return RiskMetrics(
        el=el,
        el_stderr=el_stderr,
        pd_loss=pd_loss,
        pd_stderr=pd_stderr,
        es=es,
        es_stderr=es_stderr,
        es_confidence=es_confidence,
        path_count=n,
        es_unstable=unstable,
    )
