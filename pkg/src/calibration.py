"""
Calibration

Maximum likelihood estimation of the jump-diffusion parameters from daily
price history, and the mapping from a CDS quote to borrower credit parameters.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize
from scipy.special import expit, logit

from .core_types import BPS, CreditParams, DejdParams
from .errors import CalibrationError, HaircutModelError, InputDataError
from .stochastic_models import DAY, mpr_return_log_density

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 500
RECOMMENDED_OBSERVATIONS = 1250
DEFAULT_MEAN_REVERSION = 0.5
DEFAULT_INTENSITY_VOL = 1.0
DENSITY_FLOOR = 1e-300

PARAM_NAMES = ("mu", "sigma_a", "lambda_a", "p_u", "eta", "theta")


@dataclass(frozen=True)
class ReturnSeries:
    """Daily log-returns with the date each return ends on."""

    dates: np.ndarray
    log_returns: np.ndarray
    source: str = ""

    def __post_init__(self) -> None:
        if self.dates.shape != self.log_returns.shape:
            raise ValueError("dates and log_returns must have the same length")
        if not np.all(np.isfinite(self.log_returns)):
            raise ValueError("log_returns must be finite")
        if self.dates.size > 1 and not np.all(np.diff(self.dates) > np.timedelta64(0)):
            raise ValueError("dates must be strictly increasing")

    def __len__(self) -> int:
        return int(self.log_returns.shape[0])

    def negated(self) -> "ReturnSeries":
        return ReturnSeries(self.dates, -self.log_returns, self.source)

    @classmethod
    def from_prices(
        cls, dates: Sequence[Any], closes: Sequence[float], source: str = ""
    ) -> "ReturnSeries":
        """
        Build log(P_t / P_{t-1}) from adjusted closes.

        Raises:
            InputDataError: On non-increasing dates, non-positive or missing
                closes, or fewer than two prices. Lines count from the header
                as line 1.
        """
        stamps = pd.to_datetime(pd.Series(list(dates)), format="ISO8601", errors="coerce")
        values = pd.to_numeric(pd.Series(list(closes)), errors="coerce")
        if len(stamps) != len(values):
            raise InputDataError("dates and closes differ in length")
        for i in range(len(values)):
            line = i + 2
            if pd.isna(stamps.iloc[i]):
                raise InputDataError("date is missing or not ISO-8601", line=line)
            if pd.isna(values.iloc[i]):
                raise InputDataError("close is missing or not a number", line=line)
            if values.iloc[i] <= 0:
                raise InputDataError(f"close must be positive, got {values.iloc[i]}", line=line)
            if i > 0 and stamps.iloc[i] <= stamps.iloc[i - 1]:
                raise InputDataError(
                    f"date {stamps.iloc[i].date()} does not follow {stamps.iloc[i - 1].date()}",
                    line=line,
                )
        if len(values) < 2:
            raise InputDataError("at least two prices are needed for one return")
        closes_arr = values.to_numpy(dtype=float)
        return cls(
            dates=stamps.to_numpy()[1:],
            log_returns=np.diff(np.log(closes_arr)),
            source=source,
        )

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "ReturnSeries":
        """Read a ``date,close`` CSV of adjusted closes."""
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        except FileNotFoundError:
            raise InputDataError(f"price file not found: {path}")
        except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
            raise InputDataError(f"malformed CSV: {e}")
        columns = [c.strip().lower() for c in frame.columns]
        if columns != ["date", "close"]:
            raise InputDataError(f"expected header 'date,close', got {','.join(frame.columns)}", line=1)
        return cls.from_prices(
            frame.iloc[:, 0].str.strip(), frame.iloc[:, 1].str.strip(), source=str(path)
        )


class FitBounds(BaseModel):
    """Box constraints on each jump-diffusion parameter during optimization."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mu: Tuple[float, float] = (-5.0, 5.0)
    sigma_a: Tuple[float, float] = (1e-4, 5.0)
    lambda_a: Tuple[float, float] = (1e-3, 1000.0)
    p_u: Tuple[float, float] = (1e-4, 1.0 - 1e-4)
    eta: Tuple[float, float] = (1.5, 1e4)
    theta: Tuple[float, float] = (1.5, 1e4)

    @model_validator(mode="after")
    def _ordered(self) -> "FitBounds":
        for name in PARAM_NAMES:
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} bounds must satisfy lower < upper")
        if self.sigma_a[0] <= 0 or self.lambda_a[0] <= 0 or self.theta[0] <= 0:
            raise ValueError("sigma_a, lambda_a and theta lower bounds must be positive")
        if self.eta[0] <= 1.0:
            raise ValueError("eta lower bound must exceed 1")
        if not (0.0 < self.p_u[0] and self.p_u[1] < 1.0):
            raise ValueError("p_u bounds must lie inside (0, 1)")
        return self


class StartDiagnostics(BaseModel):
    start: Dict[str, float]
    log_likelihood: Optional[float] = None
    iterations: int = 0
    converged: bool = False
    gradient_norm: Optional[float] = None
    message: str = ""


class FitReport(BaseModel):
    """Outcome of a maximum likelihood fit."""

    params: DejdParams
    log_likelihood: float
    iterations: int
    converged: bool
    gradient_norm: Optional[float] = Field(None, description="Projected gradient norm of the mean NLL at the optimum")
    standard_errors: Dict[str, Optional[float]] = Field(default_factory=dict)
    observations: int = 0
    floor_hits: int = 0
    zero_drift: bool = False
    source: str = ""
    starts: List[StartDiagnostics] = Field(default_factory=list)

    def to_json(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.model_dump_json(indent=2) + "\n")


def log_density_terms(
    series: ReturnSeries,
    params: DejdParams,
    dt: float = DAY,
    floor: float = DENSITY_FLOOR,
) -> Tuple[np.ndarray, int]:
    """
    Per-observation log density with underflow floored.

    Returns:
        (log densities, number of observations floored)
    """
    log_f = mpr_return_log_density(series.log_returns, params, dt)
    log_floor = np.log(floor)
    low = ~(log_f >= log_floor)
    hits = int(np.count_nonzero(low))
    if hits:
        log_f = np.where(low, log_floor, log_f)
    return log_f, hits


def log_likelihood(
    series: ReturnSeries,
    params: DejdParams,
    dt: float = DAY,
    floor: float = DENSITY_FLOOR,
) -> float:
    """Sum of log densities of the daily returns under ``params``."""
    log_f, hits = log_density_terms(series, params, dt, floor)
    if hits:
        logger.warning(f"Density floored at {floor:.1e} for {hits} observation(s)")
    return float(log_f.sum())


def _to_free(params: DejdParams) -> np.ndarray:
    return np.array(
        [
            params.mu,
            np.log(params.sigma_a),
            np.log(params.lambda_a),
            logit(params.p_u),
            np.log(params.eta - 1.0),
            np.log(params.theta),
        ]
    )


def _from_free(x: np.ndarray) -> DejdParams:
    # Skips validation; the transform keeps every field inside its domain.
    return DejdParams.model_construct(
        mu=float(x[0]),
        sigma_a=float(np.exp(x[1])),
        lambda_a=float(np.exp(x[2])),
        p_u=float(expit(x[3])),
        eta=float(1.0 + np.exp(x[4])),
        theta=float(np.exp(x[5])),
    )


def _free_bounds(bounds: FitBounds) -> List[Tuple[float, float]]:
    return [
        bounds.mu,
        (np.log(bounds.sigma_a[0]), np.log(bounds.sigma_a[1])),
        (np.log(bounds.lambda_a[0]), np.log(bounds.lambda_a[1])),
        (logit(bounds.p_u[0]), logit(bounds.p_u[1])),
        (np.log(bounds.eta[0] - 1.0), np.log(bounds.eta[1] - 1.0)),
        (np.log(bounds.theta[0]), np.log(bounds.theta[1])),
    ]


def _clip(params: DejdParams, bounds: FitBounds) -> DejdParams:
    values = {}
    for name in PARAM_NAMES:
        lo, hi = getattr(bounds, name)
        values[name] = float(np.clip(getattr(params, name), lo, hi))
    return DejdParams(**values)


def _projected_gradient_norm(x: np.ndarray, grad: np.ndarray, box: List[Tuple[float, float]]) -> float:
    g = np.array(grad, dtype=float)
    for i, (lo, hi) in enumerate(box):
        if x[i] <= lo and g[i] > 0:
            g[i] = 0.0
        if x[i] >= hi and g[i] < 0:
            g[i] = 0.0
    return float(np.linalg.norm(g))


def _run_start(task: Tuple[ReturnSeries, DejdParams, FitBounds, bool, float]) -> Dict[str, Any]:
    """One bounded quasi-Newton run from one start."""
    series, start, bounds, zero_drift, grad_tol = task
    n = len(series)
    full = _to_free(start)
    box = _free_bounds(bounds)
    # mu is the first free coordinate; a zero-drift fit optimizes the rest.
    first = 1 if zero_drift else 0
    if zero_drift:
        full[0] = 0.0
    box = box[first:]
    x0 = np.clip(full[first:], [lo for lo, _ in box], [hi for _, hi in box])

    def objective(x: np.ndarray) -> float:
        log_f, _ = log_density_terms(series, _from_free(np.concatenate([full[:first], x])))
        return float(-log_f.sum() / n)

    try:
        res = minimize(
            objective,
            x0,
            method="L-BFGS-B",
            bounds=box,
            options={"maxiter": 500, "ftol": 1e-12, "gtol": 1e-7},
        )
    except (ArithmeticError, ValueError, HaircutModelError) as e:
        return {"start": start, "x": None, "fun": None, "nit": 0, "success": False, "grad": None, "message": str(e)}
    grad_norm = _projected_gradient_norm(res.x, res.jac, box)
    return {
        "start": start,
        "x": np.concatenate([full[:first], res.x]),
        "fun": float(res.fun),
        "nit": int(res.nit),
        "success": bool(np.isfinite(res.fun)) and grad_norm < grad_tol,
        "grad": grad_norm,
        "message": str(res.message),
    }


def multi_start_grid(init: DejdParams, bounds: FitBounds) -> List[DejdParams]:
    """Deterministic jump-parameter initializations around ``init``."""
    starts: List[DejdParams] = []
    for scale in (1.0, 0.25, 4.0):
        for p_u in (init.p_u, 0.5):
            candidate = _clip(
                init.model_copy(update={"lambda_a": max(init.lambda_a, bounds.lambda_a[0]) * scale, "p_u": p_u}),
                bounds,
            )
            if candidate not in starts:
                starts.append(candidate)
    return starts


def _difference_steps(params: DejdParams, free: Sequence[str], bounds: FitBounds) -> Dict[str, float]:
    """Central-difference step per parameter, shrunk so base +/- step stays inside the box."""
    steps = {}
    for name in free:
        value = getattr(params, name)
        lo, hi = getattr(bounds, name)
        step = 1e-3 if name == "mu" else 1e-3 * abs(value)
        steps[name] = min(step, 0.5 * (value - lo), 0.5 * (hi - value))
    return steps


def _standard_errors(
    series: ReturnSeries,
    params: DejdParams,
    free: Sequence[str],
    bounds: Optional[FitBounds] = None,
) -> Dict[str, Optional[float]]:
    """
    Square roots of the inverse observed information, central differences.

    Parameters sitting on a bound have no two-sided difference; they are
    held fixed and reported as None.
    """
    out: Dict[str, Optional[float]] = {name: None for name in PARAM_NAMES}
    all_steps = _difference_steps(params, free, bounds or FitBounds())
    on_bound = [name for name, step in all_steps.items() if not step > 0]
    if on_bound:
        logger.warning(f"No standard error for {', '.join(on_bound)}: estimate sits on its bound")
    free = [name for name in free if name not in on_bound]
    if not free:
        return out
    base = np.array([getattr(params, name) for name in free])
    steps = np.array([all_steps[name] for name in free])

    def nll(values: np.ndarray) -> float:
        fields = params.model_dump()
        fields.update(dict(zip(free, values)))
        log_f, _ = log_density_terms(series, DejdParams.model_construct(**fields))
        return float(-log_f.sum())

    m = len(free)
    hess = np.empty((m, m))
    f0 = nll(base)
    for i in range(m):
        ei = np.zeros(m)
        ei[i] = steps[i]
        hess[i, i] = (nll(base + ei) - 2.0 * f0 + nll(base - ei)) / steps[i] ** 2
        for j in range(i + 1, m):
            ej = np.zeros(m)
            ej[j] = steps[j]
            value = (
                nll(base + ei + ej) - nll(base + ei - ej) - nll(base - ei + ej) + nll(base - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
            hess[i, j] = hess[j, i] = value
    try:
        variances = np.diag(np.linalg.inv(hess))
    except np.linalg.LinAlgError:
        logger.warning("Observed information is singular; standard errors unavailable")
        return out
    for name, var in zip(free, variances):
        out[name] = float(np.sqrt(var)) if var > 0 else None
    return out


def fit_dejd(
    series: ReturnSeries,
    init: DejdParams,
    bounds: Optional[FitBounds] = None,
    zero_drift: bool = False,
    workers: int = 1,
    grad_tol: float = 1e-2,
) -> FitReport:
    """
    Fit jump-diffusion parameters by maximum likelihood.

    Each start runs L-BFGS-B on the mean negative log-likelihood in
    unconstrained coordinates (log, logit and log(eta - 1) transforms) with
    the bounds mapped through. The best converged start wins.

    Args:
        series: Daily log-returns
        init: Initial parameters; jump parameters are also varied over a grid
        bounds: Parameter box, FitBounds() when omitted
        zero_drift: Fix mu at 0 instead of estimating it
        workers: Processes for the starts; results do not depend on it
        grad_tol: Projected gradient norm below which a start counts as converged

    Returns:
        FitReport

    Raises:
        InputDataError: If the series is shorter than 500 observations
        CalibrationError: If no start converges
    """
    bounds = bounds or FitBounds()
    n = len(series)
    if n < MIN_OBSERVATIONS:
        raise InputDataError(f"series has {n} returns; at least {MIN_OBSERVATIONS} are required")
    if n < RECOMMENDED_OBSERVATIONS:
        logger.warning(
            f"Series has {n} returns, below the {RECOMMENDED_OBSERVATIONS} of a 5-year history"
        )

    starts = multi_start_grid(init, bounds)
    tasks = [(series, start, bounds, zero_drift, grad_tol) for start in starts]
    logger.info(f"Fitting {n} returns from {len(starts)} start(s)")
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_start, tasks))
    else:
        runs = [_run_start(task) for task in tasks]

    diagnostics = [
        StartDiagnostics(
            start=run["start"].model_dump(),
            log_likelihood=None if run["fun"] is None else -run["fun"] * n,
            iterations=run["nit"],
            converged=run["success"],
            gradient_norm=run["grad"],
            message=run["message"],
        )
        for run in runs
    ]
    for i, d in enumerate(diagnostics):
        if not d.converged:
            logger.warning(f"Start {i} did not converge: {d.message}")

    converged = [run for run in runs if run["success"]]
    if not converged:
        raise CalibrationError(
            f"none of {len(runs)} starts converged",
            diagnostics=[d.model_dump() for d in diagnostics],
        )
    best = min(converged, key=lambda run: run["fun"])
    fitted = DejdParams(**_from_free(best["x"]).model_dump())
    if zero_drift:
        fitted = fitted.model_copy(update={"mu": 0.0})
    log_f, hits = log_density_terms(series, fitted)
    free = [name for name in PARAM_NAMES if not (zero_drift and name == "mu")]
    report = FitReport(
        params=fitted,
        log_likelihood=float(log_f.sum()),
        iterations=best["nit"],
        converged=True,
        gradient_norm=best["grad"],
        standard_errors=_standard_errors(series, fitted, free, bounds),
        observations=n,
        floor_hits=hits,
        zero_drift=zero_drift,
        source=series.source,
        starts=diagnostics,
    )
    logger.info(
        f"Fit: sigma_a={fitted.sigma_a:.4f}, lambda_a={fitted.lambda_a:.3f}, "
        f"p_u={fitted.p_u:.3f}, eta={fitted.eta:.2f}, theta={fitted.theta:.2f}, "
        f"loglik={report.log_likelihood:.3f}"
    )
    return report


def cds_to_credit(
    spread_bps: float,
    recovery: float,
    k: Optional[float] = None,
    sigma: Optional[float] = None,
    y0: Optional[float] = None,
    rho: float = 0.0,
) -> CreditParams:
    """
    Credit-triangle mapping of a 5-year CDS spread to intensity parameters.

    The mean intensity is spread / (1 - R). Mean reversion and volatility
    fall back to fixed assumptions when not given.
    """
    if not spread_bps > 0:
        raise ValueError("CDS spread must be positive")
    if not 0.0 <= recovery < 1.0:
        raise ValueError("recovery must lie in [0, 1)")
    ybar = float(np.log(spread_bps / BPS / (1.0 - recovery)))
    if k is None:
        k = DEFAULT_MEAN_REVERSION
        logger.warning(f"Mean reversion k not given; assuming {k}")
    if sigma is None:
        sigma = DEFAULT_INTENSITY_VOL
        logger.warning(f"Intensity volatility sigma not given; assuming {sigma}")
    return CreditParams(
        k=k,
        ybar=ybar,
        sigma=sigma,
        y0=ybar if y0 is None else y0,
        recovery=recovery,
        rho=rho,
    )


def implied_default_probability(spread_bps: float, recovery: float, years: float) -> float:
    """Default probability over ``years`` at the flat credit-triangle intensity."""
    intensity = spread_bps / BPS / (1.0 - recovery)
    return float(-np.expm1(-intensity * years))
