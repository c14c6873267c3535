"""
Indemnity Pricing

Prices borrower-default indemnification as the cost of capitalizing and
funding the gap between the transaction haircut and the triple-A haircut.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .core_types import (
    BPS,
    CreditParams,
    Criterion,
    DejdParams,
    IndemnitySheet,
    RatingTarget,
    TransactionSpec,
)
from .errors import InconsistentMetricsError, TargetUnreachableError
from .haircut_solver import DEFAULT_RESOLUTION, solve_on_scenarios, triple_a_target
from .loss_engine import LossMode, distribution_from_scenarios, metrics
from .stochastic_models import ScenarioSet, sample_scenarios

logger = logging.getLogger(__name__)

DEFAULT_COST_OF_CAPITAL = 0.15
DEFAULT_FUNDING_SPREAD = 0.01

# Slack for el == es ties that differ only by summation order.
_METRIC_TOLERANCE = 1e-15


def price_indemnity(
    h_c: float,
    hddot_c: float,
    el: float,
    es: float,
    s_c: float = DEFAULT_COST_OF_CAPITAL,
    s_f: float = DEFAULT_FUNDING_SPREAD,
) -> IndemnitySheet:
    """
    Risk, capital and funding charges for indemnifying a lending.

    Args:
        h_c: Transaction haircut
        hddot_c: Triple-A haircut facing the borrower
        el: Expected loss at h_c
        es: Expected shortfall at h_c
        s_c: Cost of capital
        s_f: Funding spread

    Returns:
        IndemnitySheet with all intermediates. When el + es exceeds the gap
        the redundant fund is floored at zero and the sheet is flagged.

    Raises:
        InconsistentMetricsError: If el > es
        ValueError: On negative rates or metrics
    """
    if s_c < 0 or s_f < 0:
        raise ValueError("cost of capital and funding spread must be non-negative")
    if el < 0 or es < 0:
        raise ValueError("el and es must be non-negative")
    if el > es + _METRIC_TOLERANCE:
        raise InconsistentMetricsError(f"expected loss {el:.6e} exceeds expected shortfall {es:.6e}")

    gap = max(hddot_c - h_c, 0.0)
    if gap == 0.0:
        return IndemnitySheet(
            transaction_haircut=h_c,
            triple_a_haircut=hddot_c,
            gap=0.0,
            el=el,
            es=es,
            redundant_fund=0.0,
            cost_of_capital=s_c,
            funding_spread=s_f,
            risk_charge=0.0,
            capital_charge=0.0,
            funding_charge=0.0,
            total=0.0,
        )

    reserve = gap - el - es
    redundant_fund = max(reserve, 0.0)
    risk = el
    capital = es * s_c
    funding = redundant_fund * s_f
    if reserve < 0:
        logger.warning(f"Haircut gap {gap:.4%} is smaller than el + es; funding charge floored at 0")
    return IndemnitySheet(
        transaction_haircut=h_c,
        triple_a_haircut=hddot_c,
        gap=gap,
        el=el,
        es=es,
        redundant_fund=redundant_fund,
        cost_of_capital=s_c,
        funding_spread=s_f,
        risk_charge=risk,
        capital_charge=capital,
        funding_charge=funding,
        total=risk + capital + funding,
        undercapitalized_gap=reserve < 0,
    )


def price_on_scenarios(
    scenarios: ScenarioSet,
    txn: TransactionSpec,
    credit: CreditParams,
    target: RatingTarget,
    s_c: float = DEFAULT_COST_OF_CAPITAL,
    s_f: float = DEFAULT_FUNDING_SPREAD,
    es_confidence: float = 0.99,
    resolution: float = DEFAULT_RESOLUTION,
    hddot_c: Optional[float] = None,
) -> IndemnitySheet:
    """
    Price one haircut on a fixed path set.

    The triple-A haircut and the metrics at h_c come from the same paths, so
    the total is nonincreasing in h_c across calls sharing ``scenarios``.
    """
    if hddot_c is None:
        hddot_c = solve_on_scenarios(scenarios, txn, credit, target, LossMode.JOINT, resolution).haircut
    dist = distribution_from_scenarios(scenarios, txn, credit, LossMode.JOINT)
    m = metrics(dist, es_confidence)
    return price_indemnity(txn.haircut, hddot_c, m.el, m.es, s_c, s_f)


def pricing_sheet(
    dejd: DejdParams,
    credit: CreditParams,
    txn: TransactionSpec,
    rating_criterion: Criterion,
    s_c: float = DEFAULT_COST_OF_CAPITAL,
    s_f: float = DEFAULT_FUNDING_SPREAD,
    n_paths: int = 100_000,
    seed: int = 0,
    pd_threshold: Optional[float] = None,
    es_confidence: float = 0.99,
    resolution: float = DEFAULT_RESOLUTION,
    partitions: int = 16,
    workers: int = 1,
) -> IndemnitySheet:
    """Simulate, solve the triple-A haircut and price the transaction haircut."""
    target = triple_a_target(rating_criterion, pd_threshold)
    scenarios = sample_scenarios(dejd, credit, txn, n_paths, seed, partitions, workers)
    sheet = price_on_scenarios(scenarios, txn, credit, target, s_c, s_f, es_confidence, resolution)
    logger.info(
        f"Indemnity at h={txn.haircut:.2%}: triple-A {sheet.triple_a_haircut:.2%}, "
        f"total {sheet.total * BPS:.2f} bps"
    )
    return sheet


CellKey = Tuple[str, str, int, float]


@dataclass
class ScenarioGrid:
    """
    Pricing sheets over (criterion, borrower, mpr_days, haircut).

    Rows are (criterion, borrower) and columns (mpr_days, haircut), the
    layout of an indemnification scenario table.
    """

    criteria: List[Criterion]
    borrowers: List[str]
    mprs: List[int]
    haircuts: List[float]
    sheets: Dict[CellKey, IndemnitySheet] = field(default_factory=dict)
    errors: Dict[CellKey, str] = field(default_factory=dict)

    def total(self, criterion: Criterion, borrower: str, mpr_days: int, haircut: float) -> float:
        sheet = self.sheets.get((criterion.value, borrower, mpr_days, haircut))
        return sheet.total if sheet is not None else np.nan

    def to_frame(self) -> pd.DataFrame:
        """Total charges as fractions of notional."""
        rows = pd.MultiIndex.from_product(
            [[c.value for c in self.criteria], self.borrowers], names=["criterion", "borrower"]
        )
        cols = pd.MultiIndex.from_product([self.mprs, self.haircuts], names=["mpr_days", "haircut"])
        values = [
            [self.total(c, b, m, h) for m in self.mprs for h in self.haircuts]
            for c in self.criteria
            for b in self.borrowers
        ]
        return pd.DataFrame(values, index=rows, columns=cols)

    def to_bps_frame(self) -> pd.DataFrame:
        return (self.to_frame() * BPS).round(2)

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path)

    def check_monotone(self) -> List[str]:
        """Totals must not rise as the haircut increases."""
        violations = []
        ordered = sorted(self.haircuts)
        for c in self.criteria:
            for b in self.borrowers:
                for m in self.mprs:
                    totals = [self.total(c, b, m, h) for h in ordered]
                    for lo, hi, a, v in zip(ordered, ordered[1:], totals, totals[1:]):
                        if not np.isnan(a) and not np.isnan(v) and v > a:
                            violations.append(
                                f"{c.value}/{b}/{m}d: total at {hi:.2%} ({v * BPS:.2f} bps) "
                                f"above {lo:.2%} ({a * BPS:.2f} bps)"
                            )
        return violations


def scenario_grid(
    dejd: DejdParams,
    txn: TransactionSpec,
    haircuts: Sequence[float],
    borrowers: Mapping[str, CreditParams],
    criteria: Sequence[Criterion],
    mprs: Sequence[int],
    s_c: float = DEFAULT_COST_OF_CAPITAL,
    s_f: float = DEFAULT_FUNDING_SPREAD,
    n_paths: int = 100_000,
    seed: int = 0,
    pd_threshold: Optional[float] = None,
    es_confidence: float = 0.99,
    resolution: float = DEFAULT_RESOLUTION,
    partitions: int = 16,
    workers: int = 1,
) -> ScenarioGrid:
    """
    Price every (criterion, borrower, MPR, haircut) cell.

    One path set is simulated per (borrower, MPR) and shared by all criteria
    and haircuts. A failed cell is recorded in ``errors`` and the grid
    completes.
    """
    if not (haircuts and borrowers and criteria and mprs):
        raise ValueError("every scenario grid axis must be nonempty")
    targets = {c: triple_a_target(c, pd_threshold) for c in criteria}
    grid = ScenarioGrid(
        criteria=list(criteria),
        borrowers=list(borrowers),
        mprs=list(mprs),
        haircuts=list(haircuts),
    )
    for label, credit in borrowers.items():
        for mpr in mprs:
            base = txn.model_copy(update={"mpr_days": mpr})
            scenarios = sample_scenarios(dejd, credit, base, n_paths, seed, partitions, workers)
            for criterion in criteria:
                try:
                    hddot = solve_on_scenarios(
                        scenarios, base, credit, targets[criterion], LossMode.JOINT, resolution
                    ).haircut
                except TargetUnreachableError as e:
                    logger.warning(f"{criterion.value}/{label}/{mpr}d: {e}")
                    for h in haircuts:
                        grid.errors[(criterion.value, label, mpr, h)] = str(e)
                    continue
                for h in haircuts:
                    key = (criterion.value, label, mpr, h)
                    try:
                        grid.sheets[key] = price_on_scenarios(
                            scenarios,
                            base.with_haircut(h),
                            credit,
                            targets[criterion],
                            s_c,
                            s_f,
                            es_confidence,
                            resolution,
                            hddot_c=hddot,
                        )
                    except InconsistentMetricsError as e:
                        grid.errors[key] = str(e)
            logger.info(f"Priced borrower {label} at {mpr}d MPR")
    return grid


def charge_slope(grid: ScenarioGrid) -> float:
    """
    Average fall in total charge per 1% of extra haircut.

    Averaged over every row and MPR of the grid, using consecutive haircut
    pairs with both cells priced.
    """
    ordered = sorted(grid.haircuts)
    if len(ordered) < 2:
        raise ValueError("charge_slope needs at least two haircuts")
    slopes = []
    for c in grid.criteria:
        for b in grid.borrowers:
            for m in grid.mprs:
                totals = [grid.total(c, b, m, h) for h in ordered]
                for lo, hi, a, v in zip(ordered, ordered[1:], totals, totals[1:]):
                    if not np.isnan(a) and not np.isnan(v):
                        slopes.append((a - v) / (hi - lo) * 0.01)
    if not slopes:
        raise ValueError("grid has no priced haircut pairs")
    return float(np.mean(slopes))
