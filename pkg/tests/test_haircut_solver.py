"""
Tests for the rating-targeted haircut solver and schedules.
"""

import logging

import numpy as np
import pandas as pd
import pytest

from src.calibration import cds_to_credit
from src.core_types import CreditParams, Criterion, DejdParams, RatingTarget, Side, TransactionSpec
from src.errors import ConfigurationError, TargetUnreachableError
from src.haircut_solver import (
    DEFAULT_RESOLUTION,
    HaircutResult,
    HaircutSchedule,
    correlation_sensitivity,
    credit_support_saving,
    default_h_max,
    fresh_paths_objective,
    haircut_schedule,
    objective_from_scenarios,
    side_comparison,
    solve_haircut,
    solve_on_scenarios,
    triple_a_haircut,
    triple_a_target,
)
from src.loss_engine import LossMode
from src.stochastic_models import sample_scenarios

TARGETS = [RatingTarget.moodys(label) for label in ("Aaa", "Aa1", "Aa2", "Aa3")]


@pytest.fixture
def dejd():
    return DejdParams(mu=0.05, sigma_a=0.2, lambda_a=25.0, p_u=0.4, eta=60.0, theta=45.0)


@pytest.fixture
def credit():
    return CreditParams(k=0.5, ybar=np.log(0.05), sigma=1.0, recovery=0.4, rho=0.3)


@pytest.fixture
def txn():
    return TransactionSpec(haircut=0.05)


@pytest.fixture(scope="module")
def scenarios():
    dejd = DejdParams(mu=0.05, sigma_a=0.2, lambda_a=25.0, p_u=0.4, eta=60.0, theta=45.0)
    credit = CreditParams(k=0.5, ybar=np.log(0.05), sigma=1.0, recovery=0.4, rho=0.3)
    return sample_scenarios(dejd, credit, TransactionSpec(haircut=0.05), 100_000, seed=2024)


def result_at(haircut, label="Aaa"):
    return HaircutResult(
        haircut=haircut,
        achieved_metric=0.0,
        target=RatingTarget.moodys(label),
        bracket=(haircut, haircut),
        mode=LossMode.JOINT,
    )


class TestSolveHaircut:
    """Test the grid bisection."""

    def test_matches_exhaustive_grid_search(self):
        def objective(h):
            return 1e-3 * np.exp(-50.0 * h)

        target = RatingTarget.moodys("Aaa")
        result = solve_haircut(objective, target)
        brute = next(i for i in range(10_001) if objective(i * DEFAULT_RESOLUTION) <= target.threshold)
        assert result.haircut == brute * DEFAULT_RESOLUTION
        assert result.bracket == ((brute - 1) * DEFAULT_RESOLUTION, brute * DEFAULT_RESOLUTION)
        assert result.achieved_metric <= target.threshold
        assert result.evaluations < 20

    def test_vacuous_target_gives_zero(self):
        result = solve_haircut(lambda h: 0.5, RatingTarget(label="loose", threshold=1.0))
        assert result.haircut == 0.0
        assert result.bracket == (0.0, 0.0)
        assert result.evaluations == 1

    def test_unreachable_target(self):
        with pytest.raises(TargetUnreachableError) as info:
            solve_haircut(lambda h: 1.0, RatingTarget.moodys("Aaa"), h_max=0.99)
        assert info.value.achieved == 1.0
        assert info.value.h_max == pytest.approx(0.99)

    def test_rejects_bad_resolution(self):
        with pytest.raises(ValueError):
            solve_haircut(lambda h: 0.0, RatingTarget.moodys("Aaa"), resolution=0.0)

    def test_h_max_by_side(self):
        assert default_h_max(Side.SEC_LENDING) == 1.0
        assert default_h_max(Side.REPO) == 0.99


class TestScenarioObjective:
    def test_objective_is_nonincreasing(self, scenarios, credit, txn):
        objective = objective_from_scenarios(scenarios, txn, credit, Criterion.EXPECTED_LOSS)
        values = [objective(h) for h in np.linspace(0.0, 0.2, 41)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_pd_objective_counts_loss_paths(self, scenarios, credit, txn):
        objective = objective_from_scenarios(scenarios, txn, credit, Criterion.DEFAULT_PROBABILITY)
        assert objective(0.0) <= scenarios.default_rate()
        assert objective(1.0) <= objective(0.0)

    def test_joint_objective_needs_credit(self, scenarios, txn):
        with pytest.raises(ValueError):
            objective_from_scenarios(scenarios, txn, None, Criterion.EXPECTED_LOSS)

    def test_solution_brackets_threshold(self, scenarios, credit, txn):
        target = RatingTarget.moodys("Aaa")
        objective = objective_from_scenarios(scenarios, txn, credit, Criterion.EXPECTED_LOSS)
        result = solve_on_scenarios(scenarios, txn, credit, target)
        assert result.haircut > 0
        assert objective(result.haircut) <= target.threshold
        assert objective(result.haircut - DEFAULT_RESOLUTION) > target.threshold

    def test_equals_exhaustive_search_on_paths(self, scenarios, credit, txn):
        target = RatingTarget.moodys("Aa2")
        objective = objective_from_scenarios(scenarios, txn, credit, Criterion.EXPECTED_LOSS)
        brute = next(i for i in range(10_001) if objective(i * DEFAULT_RESOLUTION) <= target.threshold)
        result = solve_on_scenarios(scenarios, txn, credit, target)
        assert result.haircut == brute * DEFAULT_RESOLUTION

    def test_looser_target_needs_no_more_haircut(self, scenarios, credit, txn):
        haircuts = [solve_on_scenarios(scenarios, txn, credit, t).haircut for t in TARGETS]
        assert haircuts == sorted(haircuts, reverse=True)

    def test_fresh_paths_objective_is_reproducible(self, dejd, credit, txn):
        first = fresh_paths_objective(dejd, credit, txn, Criterion.EXPECTED_LOSS, 2_000, seed=3)
        second = fresh_paths_objective(dejd, credit, txn, Criterion.EXPECTED_LOSS, 2_000, seed=3)
        assert [first(0.01), first(0.01)] == [second(0.01), second(0.01)]


class TestTripleA:
    def test_pd_needs_threshold(self):
        with pytest.raises(ConfigurationError):
            triple_a_target(Criterion.DEFAULT_PROBABILITY)
        assert triple_a_target(Criterion.DEFAULT_PROBABILITY, 1e-4).threshold == 1e-4
        assert triple_a_target(Criterion.EXPECTED_LOSS).label == "Aaa"

    def test_negligible_credit_risk_needs_no_haircut(self, dejd, txn):
        safe = CreditParams(k=0.5, ybar=np.log(1e-12), sigma=0.0)
        result = triple_a_haircut(dejd, safe, txn, Criterion.EXPECTED_LOSS, 5_000, seed=1)
        assert result.haircut == 0.0

    def test_independent_mode_is_more_conservative(self, dejd, credit, txn):
        joint = triple_a_haircut(dejd, credit, txn, Criterion.EXPECTED_LOSS, 20_000, seed=5)
        independent = triple_a_haircut(
            dejd, credit, txn, Criterion.EXPECTED_LOSS, 20_000, seed=5, mode=LossMode.INDEPENDENT
        )
        assert independent.haircut >= joint.haircut
        assert independent.mode is LossMode.INDEPENDENT

    def test_joint_mode_needs_credit(self, dejd, txn):
        with pytest.raises(ValueError):
            triple_a_haircut(dejd, None, txn, Criterion.EXPECTED_LOSS, 100, seed=1)

    def test_pd_criterion_runs_with_threshold(self, dejd, credit, txn):
        result = triple_a_haircut(
            dejd, credit, txn, Criterion.DEFAULT_PROBABILITY, 5_000, seed=2, pd_threshold=1e-3
        )
        assert result.target.criterion is Criterion.DEFAULT_PROBABILITY
        assert result.achieved_metric <= 1e-3

    def test_longer_margin_period_needs_more_haircut(self):
        dejd = DejdParams(mu=0.05, sigma_a=0.3, lambda_a=0.0, p_u=0.5, eta=50.0, theta=50.0)
        credit = CreditParams(k=0.5, ybar=np.log(0.1), sigma=1.0, recovery=0.4)
        haircuts = [
            triple_a_haircut(
                dejd, credit, TransactionSpec(haircut=0.05, mpr_days=days), Criterion.EXPECTED_LOSS, 50_000, seed=8
            ).haircut
            for days in (1, 3, 5)
        ]
        assert haircuts == sorted(haircuts)

    @pytest.mark.slow
    def test_margin_period_strictly_raises_haircut_with_jumps(self, dejd, credit):
        haircuts = [
            triple_a_haircut(
                dejd, credit, TransactionSpec(haircut=0.05, mpr_days=days), Criterion.EXPECTED_LOSS, 100_000, seed=8
            ).haircut
            for days in (1, 3, 5)
        ]
        assert haircuts[0] < haircuts[1] < haircuts[2]
        assert haircuts[2] - haircuts[0] > 0.02


class TestSchedule:
    def test_single_cell_matches_direct_solve(self, dejd, credit, txn):
        schedule = haircut_schedule(dejd, {"A": credit}, TARGETS[:1], txn, 10_000, seed=4)
        scenarios = sample_scenarios(dejd, credit, txn, 10_000, seed=4)
        direct = solve_on_scenarios(scenarios, txn, credit, TARGETS[0])
        assert schedule.results[0][0] == direct
        assert schedule.to_frame().shape == (1, 1)

    def test_schedule_is_monotone(self, dejd, txn):
        grades = {
            "A": CreditParams(k=0.5, ybar=np.log(0.01), sigma=1.0, recovery=0.4),
            "D": CreditParams(k=0.5, ybar=np.log(0.3), sigma=1.0, recovery=0.4),
        }
        schedule = haircut_schedule(dejd, grades, TARGETS, txn, 20_000, seed=6)
        assert schedule.errors == {}
        assert schedule.check_monotone() == []
        frame = schedule.to_frame()
        assert list(frame.columns) == ["Aaa", "Aa1", "Aa2", "Aa3"]
        assert frame.index.name == "grade"

    @pytest.mark.slow
    def test_full_rating_grid_is_monotone(self, dejd, txn):
        """Five CDS-mapped grades against the Aaa to A3 targets on one seed."""
        spreads = {"g60": 60.0, "g150": 150.0, "g400": 400.0, "g900": 900.0, "g3000": 3000.0}
        grades = {label: cds_to_credit(bps, 0.4, k=0.5, sigma=1.0) for label, bps in spreads.items()}
        single_a = {"A1": 3.2e-5, "A2": 5.98e-5, "A3": 1.178e-4}
        targets = TARGETS + [RatingTarget(label=label, threshold=el) for label, el in single_a.items()]
        schedule = haircut_schedule(dejd, grades, targets, txn, 200_000, seed=17)
        assert schedule.errors == {}
        assert schedule.check_monotone() == []
        assert schedule.to_frame().shape == (5, 7)

    def test_unordered_grades_warn(self, dejd, txn, caplog):
        grades = {
            "worse": CreditParams(k=0.5, ybar=np.log(0.2), sigma=1.0),
            "better": CreditParams(k=0.5, ybar=np.log(0.01), sigma=1.0),
        }
        with caplog.at_level(logging.WARNING, logger="src.haircut_solver"):
            haircut_schedule(dejd, grades, TARGETS[:1], txn, 1_000, seed=1)
        assert "not ordered" in caplog.text

    def test_unreachable_cell_is_recorded(self, mocker, dejd, credit, txn):
        mocker.patch(
            "src.haircut_solver.solve_on_scenarios",
            side_effect=TargetUnreachableError("Aaa", 3e-7, 1.0, 1e-5),
        )
        schedule = haircut_schedule(dejd, {"A": credit}, TARGETS[:1], txn, 100, seed=1)
        assert schedule.results == [[None]]
        assert ("A", "Aaa") in schedule.errors
        assert np.isnan(schedule.to_frame().iloc[0, 0])

    def test_check_monotone_flags_violations(self):
        schedule = HaircutSchedule(
            grades=["A", "B"],
            targets=[RatingTarget.moodys("Aaa"), RatingTarget.moodys("Aa1")],
            results=[
                [result_at(0.05), result_at(0.06, "Aa1")],
                [result_at(0.04), result_at(0.03, "Aa1")],
            ],
        )
        violations = schedule.check_monotone()
        assert len(violations) == 3
        assert any(v.startswith("row A") for v in violations)
        assert sum(v.startswith("column") for v in violations) == 2

    def test_to_csv(self, tmp_path):
        schedule = HaircutSchedule(
            grades=["A"], targets=[RatingTarget.moodys("Aaa")], results=[[result_at(0.0712)]]
        )
        path = tmp_path / "schedule.csv"
        schedule.to_csv(path)
        frame = pd.read_csv(path, index_col="grade")
        assert frame.loc["A", "Aaa"] == pytest.approx(0.0712)


class TestComparisons:
    def test_credit_support_saving(self, dejd, credit, txn):
        independent, joint = credit_support_saving(dejd, credit, txn, TARGETS[0], 10_000, seed=3)
        assert independent.haircut >= joint.haircut
        assert (independent.mode, joint.mode) == (LossMode.INDEPENDENT, LossMode.JOINT)

    def test_side_comparison(self, dejd, credit, txn):
        out = side_comparison(dejd, credit, txn, TARGETS, 10_000, seed=3)
        assert set(out) == {Side.SEC_LENDING, Side.REPO}
        for results in out.values():
            haircuts = [r.haircut for r in results]
            assert haircuts == sorted(haircuts, reverse=True)

    def test_correlation_sensitivity(self, dejd, credit, txn):
        out = correlation_sensitivity(dejd, credit, txn, TARGETS[0], [-0.5, 0.0, 0.5], 5_000, seed=3)
        assert [rho for rho, _ in out] == [-0.5, 0.0, 0.5]
        assert all(result.haircut >= 0.0 for _, result in out)
