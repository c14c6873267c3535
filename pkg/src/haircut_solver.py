"""
Haircut Solver

Finds the smallest haircut whose loss metric meets a rating target, on a
common-random-number objective, and builds haircut schedules across borrower
grades and rating targets.
"""

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from .core_types import (
    CreditParams,
    Criterion,
    DejdParams,
    RatingTarget,
    Side,
    TransactionSpec,
)
from .errors import ConfigurationError, TargetUnreachableError
from .loss_engine import LossMode, closeout_payoff
from .stochastic_models import ScenarioSet, sample_scenarios

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 1e-4
TRIPLE_A_LABEL = "Aaa"

Objective = Callable[[float], float]


class HaircutResult(BaseModel):
    """Solved haircut with the metric it achieves and its final bracket."""

    model_config = ConfigDict(frozen=True)

    haircut: float
    achieved_metric: float
    target: RatingTarget
    bracket: Tuple[float, float]
    mode: LossMode
    evaluations: int = 0


def default_h_max(side: Side) -> float:
    return 1.0 if side is Side.SEC_LENDING else 0.99


def objective_from_scenarios(
    scenarios: ScenarioSet,
    txn: TransactionSpec,
    credit: Optional[CreditParams],
    criterion: Criterion,
    mode: LossMode = LossMode.JOINT,
) -> Objective:
    """
    Loss metric as a function of the haircut on one fixed path set.

    Only the haircut varies between evaluations, so the objective is exactly
    nonincreasing in h.
    """
    n = scenarios.path_count
    if mode is LossMode.JOINT:
        if credit is None:
            raise ValueError("joint mode requires credit parameters")
        hit = scenarios.defaulted
        scale = (1.0 - credit.recovery) * np.exp(scenarios.x_tau[hit])
    else:
        hit = np.ones(n, dtype=bool)
        scale = np.ones(n)
    mpr = scenarios.mpr_return[hit]

    def objective(h: float) -> float:
        payoff = closeout_payoff(mpr, txn.with_haircut(h))
        if criterion is Criterion.EXPECTED_LOSS:
            return float(np.dot(scale, payoff) / n)
        return float(np.count_nonzero(payoff > 0) / n)

    return objective


def fresh_paths_objective(
    dejd: DejdParams,
    credit: Optional[CreditParams],
    txn: TransactionSpec,
    criterion: Criterion,
    n_paths: int,
    seed: int,
    mode: LossMode = LossMode.JOINT,
    partitions: int = 16,
) -> Objective:
    """
    Statistical-noise objective: every evaluation draws a new path set.

    The k-th call uses seed + k, so a search is still reproducible, but the
    objective is only monotone up to Monte Carlo noise.
    """
    sim_credit = credit if mode is LossMode.JOINT else None
    calls = itertools.count()

    def objective(h: float) -> float:
        scenarios = sample_scenarios(dejd, sim_credit, txn, n_paths, seed + next(calls), partitions)
        return objective_from_scenarios(scenarios, txn, sim_credit, criterion, mode)(h)

    return objective


def solve_haircut(
    objective: Objective,
    target: RatingTarget,
    resolution: float = DEFAULT_RESOLUTION,
    h_max: float = 1.0,
    mode: LossMode = LossMode.JOINT,
) -> HaircutResult:
    """
    Smallest h on the grid {i * resolution} with objective(h) <= threshold.

    Binary search over grid indices, so the answer coincides with an
    exhaustive grid search at the same resolution.

    Raises:
        TargetUnreachableError: If objective(h_max) is still above threshold
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    top = int(round(h_max / resolution))
    cache: Dict[int, float] = {}

    def at(i: int) -> float:
        if i not in cache:
            cache[i] = objective(i * resolution)
        return cache[i]

    threshold = target.threshold
    if at(0) <= threshold:
        return HaircutResult(
            haircut=0.0,
            achieved_metric=at(0),
            target=target,
            bracket=(0.0, 0.0),
            mode=mode,
            evaluations=len(cache),
        )
    if at(top) > threshold:
        raise TargetUnreachableError(target.label, threshold, top * resolution, at(top))

    lo, hi = 0, top
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if at(mid) <= threshold:
            hi = mid
        else:
            lo = mid
    return HaircutResult(
        haircut=hi * resolution,
        achieved_metric=at(hi),
        target=target,
        bracket=(lo * resolution, hi * resolution),
        mode=mode,
        evaluations=len(cache),
    )


def triple_a_target(criterion: Criterion, pd_threshold: Optional[float] = None) -> RatingTarget:
    """The triple-A target under the EL table or a configured PD threshold."""
    if criterion is Criterion.EXPECTED_LOSS:
        return RatingTarget.moodys(TRIPLE_A_LABEL)
    if pd_threshold is None:
        raise ConfigurationError("the PD criterion needs a configured triple-A PD threshold")
    return RatingTarget(criterion=Criterion.DEFAULT_PROBABILITY, threshold=pd_threshold, label="AAA")


def solve_on_scenarios(
    scenarios: ScenarioSet,
    txn: TransactionSpec,
    credit: Optional[CreditParams],
    target: RatingTarget,
    mode: LossMode = LossMode.JOINT,
    resolution: float = DEFAULT_RESOLUTION,
    h_max: Optional[float] = None,
) -> HaircutResult:
    objective = objective_from_scenarios(scenarios, txn, credit, target.criterion, mode)
    if h_max is None:
        h_max = default_h_max(txn.side)
    return solve_haircut(objective, target, resolution, h_max, mode)


def triple_a_haircut(
    dejd: DejdParams,
    credit: Optional[CreditParams],
    txn: TransactionSpec,
    criterion: Criterion,
    n_paths: int,
    seed: int,
    mode: LossMode = LossMode.JOINT,
    pd_threshold: Optional[float] = None,
    resolution: float = DEFAULT_RESOLUTION,
    partitions: int = 16,
    workers: int = 1,
) -> HaircutResult:
    """
    Haircut that brings the lending to triple-A on its own.

    In independent mode the borrower is treated as credit worthless. When
    ``credit`` is given the paths are still simulated with it, so both modes
    on the same seed share one sample set.
    """
    target = triple_a_target(criterion, pd_threshold)
    if mode is LossMode.JOINT and credit is None:
        raise ValueError("joint mode requires credit parameters")
    scenarios = sample_scenarios(dejd, credit, txn, n_paths, seed, partitions, workers)
    result = solve_on_scenarios(scenarios, txn, credit, target, mode, resolution)
    logger.info(f"Triple-A haircut ({criterion.value}, {mode.value}): {result.haircut:.4%}")
    return result


@dataclass
class HaircutSchedule:
    """Haircuts per borrower grade (rows) and rating target (columns)."""

    grades: List[str]
    targets: List[RatingTarget]
    results: List[List[Optional[HaircutResult]]]
    errors: Dict[Tuple[str, str], str] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        values = [
            [cell.haircut if cell is not None else np.nan for cell in row]
            for row in self.results
        ]
        frame = pd.DataFrame(values, index=self.grades, columns=[t.label for t in self.targets])
        frame.index.name = "grade"
        return frame

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path)

    def check_monotone(self) -> List[str]:
        """
        Violations of the schedule shape: nonincreasing along a row as the
        target loosens, nondecreasing down a column as credit worsens.
        """
        violations = []
        frame = self.to_frame()
        values = frame.to_numpy()
        for i, grade in enumerate(self.grades):
            for j in range(1, len(self.targets)):
                a, b = values[i, j - 1], values[i, j]
                if not np.isnan(a) and not np.isnan(b) and b > a:
                    violations.append(
                        f"row {grade}: {self.targets[j].label} ({b:.4f}) above "
                        f"{self.targets[j - 1].label} ({a:.4f})"
                    )
        for j, target in enumerate(self.targets):
            for i in range(1, len(self.grades)):
                a, b = values[i - 1, j], values[i, j]
                if not np.isnan(a) and not np.isnan(b) and b < a:
                    violations.append(
                        f"column {target.label}: {self.grades[i]} ({b:.4f}) below "
                        f"{self.grades[i - 1]} ({a:.4f})"
                    )
        return violations


def haircut_schedule(
    dejd: DejdParams,
    credit_grades: Mapping[str, CreditParams],
    targets: Sequence[RatingTarget],
    txn: TransactionSpec,
    n_paths: int,
    seed: int,
    mode: LossMode = LossMode.JOINT,
    resolution: float = DEFAULT_RESOLUTION,
    partitions: int = 16,
    workers: int = 1,
) -> HaircutSchedule:
    """
    Solve every (grade, target) cell.

    All grades reuse the same seed, so rows differ only through credit.
    Unreachable cells are recorded in ``errors`` and left empty.
    """
    grades = list(credit_grades)
    intensities = [credit_grades[g].mean_intensity for g in grades]
    if any(b < a for a, b in zip(intensities, intensities[1:])):
        logger.warning("Credit grades are not ordered by worsening mean intensity")

    results: List[List[Optional[HaircutResult]]] = []
    errors: Dict[Tuple[str, str], str] = {}
    for grade in grades:
        credit = credit_grades[grade]
        scenarios = sample_scenarios(dejd, credit, txn, n_paths, seed, partitions, workers)
        row: List[Optional[HaircutResult]] = []
        for target in targets:
            try:
                row.append(solve_on_scenarios(scenarios, txn, credit, target, mode, resolution))
            except TargetUnreachableError as e:
                logger.warning(f"Grade {grade}, target {target.label}: {e}")
                errors[(grade, target.label)] = str(e)
                row.append(None)
        results.append(row)
        logger.info(f"Grade {grade}: {[None if r is None else round(r.haircut, 4) for r in row]}")
    return HaircutSchedule(grades=grades, targets=list(targets), results=results, errors=errors)


def credit_support_saving(
    dejd: DejdParams,
    credit: CreditParams,
    txn: TransactionSpec,
    target: RatingTarget,
    n_paths: int,
    seed: int,
    resolution: float = DEFAULT_RESOLUTION,
    partitions: int = 16,
    workers: int = 1,
) -> Tuple[HaircutResult, HaircutResult]:
    """Borrower-independent and joint haircuts on one path set."""
    scenarios = sample_scenarios(dejd, credit, txn, n_paths, seed, partitions, workers)
    independent = solve_on_scenarios(scenarios, txn, None, target, LossMode.INDEPENDENT, resolution)
    joint = solve_on_scenarios(scenarios, txn, credit, target, LossMode.JOINT, resolution)
    return independent, joint


def side_comparison(
    dejd: DejdParams,
    credit: CreditParams,
    txn: TransactionSpec,
    targets: Sequence[RatingTarget],
    n_paths: int,
    seed: int,
    resolution: float = DEFAULT_RESOLUTION,
    partitions: int = 16,
    workers: int = 1,
) -> Dict[Side, List[HaircutResult]]:
    """Securities lending and repo haircuts across a band of targets on one path set."""
    scenarios = sample_scenarios(dejd, credit, txn, n_paths, seed, partitions, workers)
    out: Dict[Side, List[HaircutResult]] = {}
    for side in Side:
        side_txn = txn.model_copy(update={"side": side, "haircut": 0.0})
        out[side] = [
            solve_on_scenarios(scenarios, side_txn, credit, t, LossMode.JOINT, resolution)
            for t in targets
        ]
    return out


def correlation_sensitivity(
    dejd: DejdParams,
    credit: CreditParams,
    txn: TransactionSpec,
    target: RatingTarget,
    rhos: Sequence[float],
    n_paths: int,
    seed: int,
    resolution: float = DEFAULT_RESOLUTION,
    partitions: int = 16,
    workers: int = 1,
) -> List[Tuple[float, HaircutResult]]:
    """Joint haircut for each asset/credit correlation, same seed throughout."""
    out = []
    for rho in rhos:
        rho_credit = credit.model_copy(update={"rho": rho})
        scenarios = sample_scenarios(dejd, rho_credit, txn, n_paths, seed, partitions, workers)
        out.append((rho, solve_on_scenarios(scenarios, txn, rho_credit, target, LossMode.JOINT, resolution)))
    return out
