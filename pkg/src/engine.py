"""
Haircut Engine

Resolves run configurations into model inputs and drives calibration, haircut
solving and indemnity pricing with the process-level execution settings.
"""

import logging
import os
from typing import Dict, List, Optional

from dotenv import load_dotenv

from .calibration import FitBounds, FitReport, ReturnSeries, cds_to_credit, fit_dejd
from .config import AssetConfig, BorrowerConfig, RunConfig
from .core_types import CreditParams, DejdParams, IndemnitySheet
from .errors import ConfigurationError
from .haircut_solver import HaircutSchedule, haircut_schedule
from .indemnity import ScenarioGrid, price_indemnity, pricing_sheet, scenario_grid

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_FIT_START = DejdParams(mu=0.0, sigma_a=0.2, lambda_a=10.0, p_u=0.5, eta=50.0, theta=50.0)


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or value == "":
        return default
    try:
        parsed = int(value)
    except ValueError:
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if parsed < 1:
        raise ConfigurationError(f"{name} must be at least 1, got {parsed}")
    return parsed


class HaircutEngine:
    """Entry point the commands call for every model computation."""

    def __init__(self, workers: Optional[int] = None, partitions: Optional[int] = None):
        self.workers = workers if workers is not None else _env_int("SECLEND_WORKERS", 1)
        self.partitions = partitions if partitions is not None else _env_int("SECLEND_PARTITIONS", 16)
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")

    def calibrate(
        self,
        series: ReturnSeries,
        init: Optional[DejdParams] = None,
        bounds: Optional[FitBounds] = None,
        zero_drift: bool = False,
    ) -> FitReport:
        return fit_dejd(series, init or DEFAULT_FIT_START, bounds, zero_drift, self.workers)

    def resolve_asset(self, asset: AssetConfig) -> DejdParams:
        if asset.params is not None:
            params = asset.params
        else:
            series = ReturnSeries.from_csv(asset.price_series)
            params = self.calibrate(series, asset.init, asset.bounds, asset.zero_drift).params
        if asset.zero_drift:
            params = params.model_copy(update={"mu": 0.0})
        return params

    def resolve_borrower(self, borrower: BorrowerConfig) -> CreditParams:
        if borrower.params is not None:
            return borrower.params
        quote = borrower.cds
        return cds_to_credit(quote.spread_bps, quote.recovery, quote.k, quote.sigma, quote.y0, quote.rho)

    def resolve(self, config: RunConfig) -> RunConfig:
        """
        Replace every indirect input by the values actually used.

        Price series become fitted parameters, CDS quotes become intensity
        parameters and the partition count is filled in, so the result can be
        rerun without the original inputs.
        """
        asset = AssetConfig(params=self.resolve_asset(config.asset), zero_drift=config.asset.zero_drift)
        borrowers = [
            BorrowerConfig(label=b.label, params=self.resolve_borrower(b)) for b in config.borrowers
        ]
        simulation = config.simulation
        if simulation.partitions is None:
            simulation = simulation.model_copy(update={"partitions": self.partitions})
        return config.model_copy(
            update={"asset": asset, "borrowers": borrowers, "simulation": simulation}
        )

    def _grades(self, config: RunConfig) -> Dict[str, CreditParams]:
        return {b.label: self.resolve_borrower(b) for b in config.borrowers}

    def _partitions(self, config: RunConfig) -> int:
        return config.simulation.partitions or self.partitions

    def haircut_schedule(self, config: RunConfig) -> HaircutSchedule:
        sim = config.simulation
        return haircut_schedule(
            self.resolve_asset(config.asset),
            self._grades(config),
            config.targets,
            config.transaction,
            sim.n_paths,
            sim.seed,
            mode=sim.mode,
            resolution=sim.resolution,
            partitions=self._partitions(config),
            workers=self.workers,
        )

    def pricing_sheet(self, config: RunConfig, borrower: Optional[str] = None) -> IndemnitySheet:
        """Price the first (or named) borrower; replay inputs skip simulation."""
        pricing = config.pricing
        if pricing.replay is not None:
            replay = pricing.replay
            return price_indemnity(
                config.transaction.haircut,
                replay.triple_a_haircut,
                replay.el,
                replay.es,
                pricing.s_c,
                pricing.s_f,
            )
        grades = self._grades(config)
        label = borrower or next(iter(grades))
        if label not in grades:
            raise ConfigurationError(f"unknown borrower {label}")
        sim = config.simulation
        return pricing_sheet(
            self.resolve_asset(config.asset),
            grades[label],
            config.transaction,
            pricing.criterion,
            pricing.s_c,
            pricing.s_f,
            sim.n_paths,
            sim.seed,
            pd_threshold=pricing.pd_triple_a,
            es_confidence=sim.es_confidence,
            resolution=sim.resolution,
            partitions=self._partitions(config),
            workers=self.workers,
        )

    def scenario_grid(self, config: RunConfig) -> ScenarioGrid:
        if config.grid is None:
            raise ConfigurationError("a scenario grid run needs a grid section")
        sim = config.simulation
        pricing = config.pricing
        return scenario_grid(
            self.resolve_asset(config.asset),
            config.transaction,
            config.grid.haircuts,
            self._grades(config),
            config.grid.criteria,
            config.grid.mprs,
            pricing.s_c,
            pricing.s_f,
            sim.n_paths,
            sim.seed,
            pd_threshold=pricing.pd_triple_a,
            es_confidence=sim.es_confidence,
            resolution=sim.resolution,
            partitions=self._partitions(config),
            workers=self.workers,
        )

    def assumed_credit_fields(self, config: RunConfig) -> List[str]:
        """CDS-derived borrowers whose k or sigma fell back to defaults."""
        out = []
        for b in config.borrowers:
            if b.cds is not None:
                out += [f"{b.label}.{name}" for name in ("k", "sigma") if getattr(b.cds, name) is None]
        return out
