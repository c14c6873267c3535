"""
Run Configuration

Versioned JSON configuration for batch runs of the haircut model.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .calibration import FitBounds
from .core_types import CreditParams, Criterion, DejdParams, RatingTarget, TransactionSpec
from .errors import ConfigurationError
from .loss_engine import LossMode

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class AssetConfig(_Section):
    """Loaned security dynamics: explicit parameters or a price history to fit."""

    params: Optional[DejdParams] = None
    price_series: Optional[str] = Field(None, description="Path to a date,close CSV")
    init: Optional[DejdParams] = Field(None, description="Starting point for the fit")
    bounds: Optional[FitBounds] = Field(None, description="Parameter box for the fit")
    zero_drift: bool = False

    @model_validator(mode="after")
    def _exactly_one_source(self) -> "AssetConfig":
        if (self.params is None) == (self.price_series is None):
            raise ValueError("asset needs exactly one of params or price_series")
        return self


class CdsQuote(_Section):
    spread_bps: float = Field(description="5-year CDS spread in basis points")
    recovery: float = 0.4
    k: Optional[float] = None
    sigma: Optional[float] = None
    y0: Optional[float] = None
    rho: float = 0.0


class BorrowerConfig(_Section):
    """A borrower grade given by intensity parameters or a CDS quote."""

    label: str
    params: Optional[CreditParams] = None
    cds: Optional[CdsQuote] = None

    @model_validator(mode="after")
    def _exactly_one_source(self) -> "BorrowerConfig":
        if (self.params is None) == (self.cds is None):
            raise ValueError(f"borrower {self.label} needs exactly one of params or cds")
        return self


class SimulationConfig(_Section):
    n_paths: int = 100_000
    seed: int = Field(description="Base seed; there is no wall-clock seeding")
    es_confidence: float = 0.99
    partitions: Optional[int] = Field(None, description="Path partitions; environment default when omitted")
    mode: LossMode = LossMode.JOINT
    resolution: float = 1e-4

    @field_validator("n_paths")
    @classmethod
    def _n_paths(cls, v: int) -> int:
        if v < 1:
            raise ValueError("n_paths must be at least 1")
        return v

    @field_validator("seed")
    @classmethod
    def _seed(cls, v: int) -> int:
        if not 0 <= v < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return v

    @field_validator("es_confidence")
    @classmethod
    def _es_confidence(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("es_confidence must lie in (0, 1)")
        return v

    @field_validator("partitions")
    @classmethod
    def _partitions(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError("partitions must be at least 1")
        return v

    @field_validator("resolution")
    @classmethod
    def _resolution(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("resolution must lie in (0, 1)")
        return v


class ReplayInputs(_Section):
    """Externally supplied metrics that replace simulation in pricing."""

    el: float
    es: float
    triple_a_haircut: float


class PricingConfig(_Section):
    s_c: float = 0.15
    s_f: float = 0.01
    criterion: Criterion = Criterion.EXPECTED_LOSS
    pd_triple_a: Optional[float] = Field(None, description="Triple-A PD threshold for the PD criterion")
    replay: Optional[ReplayInputs] = None

    @model_validator(mode="after")
    def _rates(self) -> "PricingConfig":
        if self.s_c < 0 or self.s_f < 0:
            raise ValueError("s_c and s_f must be non-negative")
        return self


class GridConfig(_Section):
    """Axes of an indemnification scenario grid."""

    haircuts: List[float] = Field(min_length=1)
    mprs: List[int] = Field(min_length=1)
    criteria: List[Criterion] = Field(default_factory=lambda: [Criterion.EXPECTED_LOSS], min_length=1)


class RunConfig(_Section):
    """A complete, reproducible run."""

    schema_version: Literal[1]
    asset: AssetConfig
    borrowers: List[BorrowerConfig] = Field(min_length=1)
    transaction: TransactionSpec
    targets: List[RatingTarget] = Field(default_factory=lambda: [RatingTarget.moodys("Aaa")])
    simulation: SimulationConfig
    pricing: PricingConfig = Field(default_factory=PricingConfig)
    grid: Optional[GridConfig] = None

    @model_validator(mode="after")
    def _unique_labels(self) -> "RunConfig":
        labels = [b.label for b in self.borrowers]
        if len(set(labels)) != len(labels):
            raise ValueError("borrower labels must be unique")
        return self


class CalibrationConfig(_Section):
    """The asset section alone; what a calibration run reads and echoes."""

    schema_version: Literal[1]
    asset: AssetConfig


def _read_config(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigurationError(f"cannot read configuration {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"configuration {path} is not valid JSON: line {e.lineno}: {e.msg}")
    if not isinstance(raw, dict):
        raise ConfigurationError(f"configuration {path} must be a JSON object")
    return raw


def load_run_config(path: Union[str, Path], seed: Optional[int] = None) -> RunConfig:
    """
    Read and validate a RunConfig JSON file.

    Args:
        path: Configuration file
        seed: Overrides simulation.seed when given

    Raises:
        ConfigurationError: If the file is unreadable, not JSON or invalid
    """
    raw = _read_config(path)
    if seed is not None:
        raw["simulation"] = {**raw.get("simulation", {}), "seed": seed}
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration {path}: {e}")
    logger.info(f"Loaded configuration {path} (seed {config.simulation.seed})")
    return config


def load_calibration_config(path: Union[str, Path]) -> Union[RunConfig, CalibrationConfig]:
    """
    Read the configuration of a calibration run.

    A document holding only ``schema_version`` and ``asset`` is a
    CalibrationConfig; anything else must be a full RunConfig.

    Raises:
        ConfigurationError: If the file is unreadable, not JSON or invalid
    """
    raw = _read_config(path)
    model = CalibrationConfig if set(raw) <= set(CalibrationConfig.model_fields) else RunConfig
    try:
        config = model.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration {path}: {e}")
    logger.info(f"Loaded calibration configuration {path}")
    return config


def write_sidecar(config: BaseModel, path: Union[str, Path]) -> None:
    """Write a resolved configuration for audit and byte-identical reruns."""
    Path(path).write_text(config.model_dump_json(indent=2, exclude_none=True) + "\n")
