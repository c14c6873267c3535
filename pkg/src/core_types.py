"""
Core Types

Domain records shared by every part of the haircut model: asset and credit
dynamics parameters, the lending transaction, rating targets, loss samples and
the indemnification pricing sheet.
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import (
    Any,
    Dict,
    Iterator,
    List,
    Mapping,
    Optional,
    Tuple,
    Type,
    TypeVar,
    Union,
)

import numpy as np
import pandas as pd
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from .errors import ParameterValidationError

BUSINESS_DAYS_PER_YEAR = 250
BPS = 1.0e4

# Moody's idealized 1-year expected losses
MOODYS_EL_1Y: Dict[str, float] = {
    "Aaa": 3.00e-7,
    "Aa1": 3.10e-6,
    "Aa2": 7.50e-6,
    "Aa3": 1.66e-5,
}


class Side(str, Enum):
    """Which leg of the financing trade the lender sits on."""

    SEC_LENDING = "sec_lending"
    REPO = "repo"


class Criterion(str, Enum):
    """Rating methodology used to size a haircut."""

    EXPECTED_LOSS = "el"
    DEFAULT_PROBABILITY = "pd"


class _Record(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class DejdParams(_Record):
    """Double-exponential jump-diffusion parameters of the loaned security."""

    mu: float = Field(description="Drift of the log price, per year")
    sigma_a: float = Field(description="Diffusion volatility, per sqrt-year")
    lambda_a: float = Field(description="Jump intensity, jumps per year")
    p_u: float = Field(description="Probability that a jump is upward")
    eta: float = Field(description="Rate of the upward exponential jump size")
    theta: float = Field(description="Rate of the downward exponential jump size")

    @field_validator("sigma_a")
    @classmethod
    def _sigma_a(cls, v: float) -> float:
        if not v >= 0:
            raise ValueError("sigma_a must be non-negative")
        return v

    @field_validator("lambda_a")
    @classmethod
    def _lambda_a(cls, v: float) -> float:
        if not v >= 0:
            raise ValueError("lambda_a must be non-negative")
        return v

    @field_validator("p_u")
    @classmethod
    def _p_u(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError("p_u must lie in [0, 1]")
        return v

    @field_validator("eta")
    @classmethod
    def _eta(cls, v: float) -> float:
        if not v > 1.0:
            raise ValueError("eta must exceed 1")
        return v

    @field_validator("theta")
    @classmethod
    def _theta(cls, v: float) -> float:
        if not v > 0.0:
            raise ValueError("theta must be positive")
        return v

    @property
    def q_d(self) -> float:
        return 1.0 - self.p_u

    def mean_jump(self) -> float:
        """Expected size of a single log-return jump."""
        return self.p_u / self.eta - self.q_d / self.theta

    def mean_rate(self) -> float:
        """Expected log-return per year including jumps."""
        return self.mu + self.lambda_a * self.mean_jump()

    def variance_rate(self) -> float:
        """Variance of the log-return per year including jumps."""
        second = 2.0 * self.p_u / self.eta**2 + 2.0 * self.q_d / self.theta**2
        return self.sigma_a**2 + self.lambda_a * second

    def mirrored(self) -> "DejdParams":
        """Parameters of the negated log-return process."""
        return DejdParams(
            mu=-self.mu,
            sigma_a=self.sigma_a,
            lambda_a=self.lambda_a,
            p_u=self.q_d,
            eta=self.theta,
            theta=self.eta,
        )


class CreditParams(_Record):
    """Log-OU default intensity of the borrower, with recovery and correlation."""

    k: float = Field(description="Mean reversion speed of log intensity, per year")
    ybar: float = Field(description="Mean reversion level of log intensity")
    sigma: float = Field(description="Volatility of log intensity, per sqrt-year")
    y0: float = Field(description="Initial log intensity")
    recovery: float = Field(0.0, description="Recovery rate on the loss claim")
    rho: float = Field(0.0, description="Correlation between credit and asset Brownians")

    @model_validator(mode="before")
    @classmethod
    def _default_y0(cls, data: Any) -> Any:
        if isinstance(data, dict) and "y0" not in data and "ybar" in data:
            data = {**data, "y0": data["ybar"]}
        return data

    @field_validator("k")
    @classmethod
    def _k(cls, v: float) -> float:
        if not v >= 0:
            raise ValueError("k must be non-negative")
        return v

    @field_validator("sigma")
    @classmethod
    def _sigma(cls, v: float) -> float:
        if not v >= 0:
            raise ValueError("sigma must be non-negative")
        return v

    @field_validator("recovery")
    @classmethod
    def _recovery(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("recovery must lie in [0, 1)")
        return v

    @field_validator("rho")
    @classmethod
    def _rho(cls, v: float) -> float:
        if not -1.0 <= v <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        return v

    @property
    def mean_intensity(self) -> float:
        return float(np.exp(self.ybar))


class TransactionSpec(_Record):
    """A securities lending or repo transaction."""

    haircut: float = Field(description="Overcollateralization h as a fraction")
    liquidity_spread: float = Field(0.0, description="Ask to fair close-out premium g")
    mpr_days: int = Field(3, description="Margin period of risk in business days")
    side: Side = Field(Side.SEC_LENDING)
    notional: float = Field(1.0, description="Initial market value B0 of the loan")
    horizon: float = Field(1.0, description="Default horizon T in years")

    @field_validator("liquidity_spread")
    @classmethod
    def _liquidity_spread(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("liquidity_spread must lie in [0, 1)")
        return v

    @field_validator("mpr_days")
    @classmethod
    def _mpr_days(cls, v: int) -> int:
        if v < 1:
            raise ValueError("mpr_days must be at least 1")
        return v

    @field_validator("notional")
    @classmethod
    def _notional(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("notional must be positive")
        return v

    @field_validator("horizon")
    @classmethod
    def _horizon(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("horizon must be positive")
        return v

    @model_validator(mode="after")
    def _haircut_for_side(self) -> "TransactionSpec":
        if self.side is Side.SEC_LENDING and not self.haircut >= 0:
            raise ValueError("haircut must be non-negative for securities lending")
        if self.side is Side.REPO and not self.haircut < 1:
            raise ValueError("haircut must be below 1 for repo")
        return self

    @property
    def mpr_years(self) -> float:
        return self.mpr_days / BUSINESS_DAYS_PER_YEAR

    @property
    def horizon_days(self) -> int:
        return max(1, int(round(self.horizon * BUSINESS_DAYS_PER_YEAR)))

    @property
    def collateral_ratio(self) -> float:
        """E(t)/B(t): collateral posted per unit of loaned value."""
        return 1.0 + self.haircut

    def with_haircut(self, haircut: float) -> "TransactionSpec":
        return self.model_copy(update={"haircut": haircut})


class RatingTarget(_Record):
    """Rating criterion and the threshold a haircut must meet."""

    criterion: Criterion = Field(Criterion.EXPECTED_LOSS)
    threshold: float = Field(description="EL as fraction of notional, or PD")
    label: str = Field(description="Rating label, e.g. Aaa")

    @model_validator(mode="before")
    @classmethod
    def _resolve_threshold(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("threshold") is None:
            criterion = Criterion(data.get("criterion", Criterion.EXPECTED_LOSS))
            label = data.get("label")
            # Only EL thresholds have a built-in table; PD thresholds come from configuration.
            if criterion is not Criterion.EXPECTED_LOSS or label not in MOODYS_EL_1Y:
                raise ValueError(
                    f"no built-in {criterion.value} threshold for label {label!r}; "
                    "supply threshold explicitly"
                )
            data = {**data, "threshold": MOODYS_EL_1Y[label]}
        return data

    @field_validator("threshold")
    @classmethod
    def _threshold(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("threshold must be positive")
        return v

    @classmethod
    def moodys(cls, label: str) -> "RatingTarget":
        return cls(criterion=Criterion.EXPECTED_LOSS, label=label, threshold=MOODYS_EL_1Y[label])


class LossSample(_Record):
    """Loss on one simulated path, as a fraction of B0."""

    loss: float
    defaulted: bool
    default_time: Optional[float] = None

    @field_validator("loss")
    @classmethod
    def _loss(cls, v: float) -> float:
        if not v >= 0:
            raise ValueError("loss must be non-negative")
        return v

    @model_validator(mode="after")
    def _default_consistency(self) -> "LossSample":
        if self.loss > 0 and not self.defaulted:
            raise ValueError("a positive loss requires a default")
        if self.defaulted != (self.default_time is not None):
            raise ValueError("default_time must be present exactly when defaulted")
        return self


class SeedDescriptor(_Record):
    """Base seed and partition count that fully determine a path set."""

    seed: int
    partitions: int = 1


@dataclass(frozen=True)
class LossDistribution:
    """
    Loss samples with their default flags and times.

    Monte Carlo distributions have ``weights=None`` (each path counts 1/n);
    quadrature distributions carry probability weights summing to one.
    """

    loss: np.ndarray
    defaulted: np.ndarray
    tau: np.ndarray
    seed_descriptor: Optional[SeedDescriptor] = None
    weights: Optional[np.ndarray] = None

    @property
    def path_count(self) -> int:
        return int(self.loss.shape[0])

    def samples(self) -> Iterator[LossSample]:
        for loss, defaulted, tau in zip(self.loss, self.defaulted, self.tau):
            yield LossSample(
                loss=float(loss),
                defaulted=bool(defaulted),
                default_time=float(tau) if defaulted else None,
            )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "loss": self.loss,
                "defaulted": self.defaulted.astype(bool),
                "tau": np.where(self.defaulted, self.tau, np.nan),
            }
        )
        if self.weights is not None:
            frame["weight"] = self.weights
        return frame

    def to_csv(self, path: Union[str, Path]) -> None:
        """Write (loss, defaulted, tau) rows for external audit."""
        self.to_frame().to_csv(path, index=False)


SHEET_AMOUNT_FIELDS = (
    "transaction_haircut",
    "triple_a_haircut",
    "gap",
    "el",
    "es",
    "redundant_fund",
    "risk_charge",
    "capital_charge",
    "funding_charge",
    "total",
)


class IndemnitySheet(_Record):
    """Indemnification charge decomposition, all amounts as fractions of notional."""

    transaction_haircut: float
    triple_a_haircut: float
    gap: float
    el: float
    es: float
    redundant_fund: float
    cost_of_capital: float
    funding_spread: float
    risk_charge: float
    capital_charge: float
    funding_charge: float
    total: float
    undercapitalized_gap: bool = False

    @model_validator(mode="after")
    def _additivity(self) -> "IndemnitySheet":
        if self.total != self.risk_charge + self.capital_charge + self.funding_charge:
            raise ValueError("total must equal risk + capital + funding charges")
        if self.gap == 0 and self.total != 0:
            raise ValueError("a zero haircut gap requires a zero total charge")
        return self

    def to_bps(self) -> Dict[str, Any]:
        """Amounts in basis points, rates and flags unchanged."""
        out: Dict[str, Any] = self.model_dump()
        for name in SHEET_AMOUNT_FIELDS:
            out[name] = out[name] * BPS
        return out

    @classmethod
    def from_bps(cls, data: Mapping[str, Any]) -> "IndemnitySheet":
        values = dict(data)
        for name in SHEET_AMOUNT_FIELDS:
            values[name] = values[name] / BPS
        values["total"] = values["risk_charge"] + values["capital_charge"] + values["funding_charge"]
        return cls(**values)

    def rows(self) -> List[Tuple[str, float]]:
        """Label/value rows in pricing sheet order."""
        return [
            ("margin", haircut_to_margin(self.transaction_haircut)),
            ("triple_a_haircut", self.triple_a_haircut),
            ("haircut_gap", self.gap),
            ("el", self.el),
            ("es", self.es),
            ("funding", self.redundant_fund),
            ("cost_of_capital", self.cost_of_capital),
            ("funding_cost", self.funding_spread),
            ("risk_charge", self.risk_charge),
            ("capital_charge", self.capital_charge),
            ("funding_charge", self.funding_charge),
            ("total", self.total),
        ]

    def to_csv(self, path: Union[str, Path]) -> None:
        pd.DataFrame(self.rows(), columns=["item", "value"]).to_csv(path, index=False)


def margin_to_haircut(margin: float) -> float:
    """Margin ratio 1.05 is a 5% haircut."""
    return margin - 1.0


def haircut_to_margin(haircut: float) -> float:
    return 1.0 + haircut


ModelT = TypeVar("ModelT", DejdParams, CreditParams, TransactionSpec)


def validate(
    value: Union[ModelT, Mapping[str, Any]],
    kind: Optional[Type[ModelT]] = None,
) -> ModelT:
    """
    Check every invariant of a parameter record.

    Args:
        value: A record instance, or a mapping of fields when ``kind`` is given
        kind: Record type to build from a mapping

    Returns:
        The validated record, unchanged

    Raises:
        ParameterValidationError: One message per violated invariant
    """
    if isinstance(value, BaseModel):
        model_cls = type(value)
        data = dict(value.__dict__)
    else:
        if kind is None:
            raise TypeError("kind is required when validating a mapping")
        model_cls = kind
        data = dict(value)
    try:
        checked = model_cls.model_validate(data)
    except ValidationError as e:
        errors = []
        for err in e.errors():
            field = ".".join(str(p) for p in err["loc"])
            msg = str(err["msg"]).removeprefix("Value error, ")
            errors.append(f"{field}: {msg}" if field else msg)
        raise ParameterValidationError(errors) from e
    return value if isinstance(value, BaseModel) else checked
