"""
Calibrate Command

Fits the jump-diffusion parameters of the loaned security to a price history
and writes the fit report.
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from ..calibration import FitBounds, ReturnSeries, log_likelihood
from ..config import (
    SCHEMA_VERSION,
    AssetConfig,
    CalibrationConfig,
    RunConfig,
    load_calibration_config,
    write_sidecar,
)
from ..core_types import DejdParams
from ..errors import HaircutModelError
from . import EXIT_SELF_CHECK_FAILED, domain_failure, failure

logger = logging.getLogger(__name__)

REPORT_FILE = "fit_report.json"
SIDECAR_FILE = "calibrate_resolved.json"


class CalibrateRequest(BaseModel):
    """Request model for a calibration run."""

    csv_path: Optional[str] = Field(None, description="date,close CSV of adjusted closes")
    config_path: Optional[str] = Field(
        None, description="Run or calibration configuration; its asset section fills unset fields"
    )
    out_dir: str = Field(".", description="Directory for the report and sidecar")
    init: Optional[DejdParams] = Field(None, description="Starting parameters")
    bounds: Optional[FitBounds] = Field(None, description="Parameter box; asset.bounds or the defaults when omitted")
    zero_drift: bool = Field(False, description="Fix the drift at zero")
    self_check: bool = Field(False, description="Re-evaluate the stored log-likelihood")


class CalibrateCommand:
    """Command that fits DEJD parameters by maximum likelihood."""

    name = "calibrate"
    help = "Fit jump-diffusion parameters to a date,close price history"

    def __init__(self, engine):
        self.engine = engine

    @staticmethod
    def add_arguments(parser: argparse.ArgumentParser) -> None:
        parser.add_argument("csv_path", nargs="?", help="date,close CSV; defaults to asset.price_series")
        parser.add_argument("--zero-drift", action="store_true", help="Fix mu at 0")

    def execute(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        """
        Execute a calibration.

        Args:
            arguments: Fields of CalibrateRequest

        Returns:
            Result payload; ``exit_code`` is set on failure
        """
        try:
            request = CalibrateRequest(**arguments)
            config: Optional[Union[RunConfig, CalibrationConfig]] = None
            asset = None
            if request.config_path is not None:
                config = load_calibration_config(request.config_path)
                asset = config.asset
            csv_path = request.csv_path or (asset.price_series if asset else None)
            if csv_path is None:
                return failure("Invalid arguments", "a price CSV is required")
            resolved = AssetConfig(
                price_series=csv_path,
                init=request.init or (asset.init if asset else None),
                bounds=request.bounds or (asset.bounds if asset else None) or FitBounds(),
                zero_drift=request.zero_drift or (asset.zero_drift if asset else False),
            )

            series = ReturnSeries.from_csv(csv_path)
            report = self.engine.calibrate(series, resolved.init, resolved.bounds, resolved.zero_drift)

            out = Path(request.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            report.to_json(out / REPORT_FILE)
            if config is None:
                sidecar: BaseModel = CalibrationConfig(schema_version=SCHEMA_VERSION, asset=resolved)
            else:
                sidecar = config.model_copy(update={"asset": resolved})
            write_sidecar(sidecar, out / SIDECAR_FILE)

            response: Dict[str, Any] = {
                "success": True,
                "report_path": str(out / REPORT_FILE),
                "sidecar_path": str(out / SIDECAR_FILE),
                "observations": len(series),
                "log_likelihood": report.log_likelihood,
                "params": report.params.model_dump(),
                "message": f"Fitted {len(series)} returns, log-likelihood {report.log_likelihood:.3f}",
            }
            if request.self_check:
                recomputed = log_likelihood(series, report.params)
                passed = bool(np.isclose(recomputed, report.log_likelihood, rtol=1e-10, atol=1e-8))
                response["self_check"] = {"passed": passed, "recomputed": recomputed}
                if not passed:
                    result = failure(
                        "Self-check failed",
                        f"stored log-likelihood {report.log_likelihood} but params give {recomputed}",
                        EXIT_SELF_CHECK_FAILED,
                    )
                    return {**response, **result}
            return response

        except ValidationError as e:
            return failure("Invalid arguments", e)
        except HaircutModelError as e:
            return domain_failure(e, "calibrate")
        except Exception as e:
            logger.exception("Calibration failed")
            return failure("Failed to calibrate", e)
