"""
Price Command

Prices borrower-default indemnification for a run configuration, either as a
single pricing sheet or as a scenario grid.
"""

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field, ValidationError

from ..config import load_run_config, write_sidecar
from ..core_types import BPS, SHEET_AMOUNT_FIELDS, IndemnitySheet
from ..errors import HaircutModelError
from . import EXIT_SELF_CHECK_FAILED, EXIT_TARGET_UNREACHABLE, domain_failure, failure

logger = logging.getLogger(__name__)

SHEET_JSON = "indemnity_sheet.json"
SHEET_CSV = "indemnity_sheet.csv"
GRID_CSV = "indemnity_grid.csv"
SIDECAR_FILE = "price_resolved.json"


class PriceRequest(BaseModel):
    """Request model for an indemnity pricing run."""

    config_path: str = Field(description="Run configuration JSON")
    out_dir: str = Field(".", description="Directory for sheets, grids and sidecar")
    seed: Optional[int] = Field(None, description="Overrides simulation.seed")
    borrower: Optional[str] = Field(None, description="Borrower label to price; the first one by default")
    self_check: bool = Field(False, description="Verify totals do not rise with the haircut")


def sheet_payload(sheet: IndemnitySheet) -> Dict[str, Any]:
    """Sheet fields as fractions plus ``*_bps`` companions for the amounts."""
    payload: Dict[str, Any] = sheet.model_dump()
    for name in SHEET_AMOUNT_FIELDS:
        payload[f"{name}_bps"] = round(payload[name] * BPS, 6)
    return payload


class PriceCommand:
    """Command that prices indemnification."""

    name = "price"
    help = "Price borrower-default indemnification (sheet or scenario grid)"

    def __init__(self, engine):
        self.engine = engine

    @staticmethod
    def add_arguments(parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--borrower", help="Borrower label to price")

    def execute(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        try:
            request = PriceRequest(**arguments)
            config = load_run_config(request.config_path, request.seed)
            resolved = self.engine.resolve(config)
            out = Path(request.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            if resolved.grid is not None:
                response = self._price_grid(resolved, out, request.self_check)
            else:
                response = self._price_sheet(resolved, out, request.borrower)
            write_sidecar(resolved, out / SIDECAR_FILE)
            response["sidecar_path"] = str(out / SIDECAR_FILE)
            response["assumptions"] = self.engine.assumed_credit_fields(config)
            return response

        except ValidationError as e:
            return failure("Invalid arguments", e)
        except HaircutModelError as e:
            return domain_failure(e, "price indemnification")
        except Exception as e:
            logger.exception("Pricing run failed")
            return failure("Failed to price indemnification", e)

    def _price_sheet(self, config, out: Path, borrower: Optional[str]) -> Dict[str, Any]:
        sheet = self.engine.pricing_sheet(config, borrower)
        (out / SHEET_JSON).write_text(json.dumps(sheet_payload(sheet), indent=2) + "\n")
        sheet.to_csv(out / SHEET_CSV)
        total_bps = sheet.total * BPS
        logger.info(
            f"Risk {sheet.risk_charge * BPS:.2f} bps, capital {sheet.capital_charge * BPS:.2f} bps, "
            f"funding {sheet.funding_charge * BPS:.2f} bps, total {total_bps:.2f} bps"
        )
        return {
            "success": True,
            "sheet_path": str(out / SHEET_JSON),
            "csv_path": str(out / SHEET_CSV),
            "total_bps": round(total_bps, 2),
            "undercapitalized_gap": sheet.undercapitalized_gap,
            "message": f"Total indemnification charge {total_bps:.2f} bps",
        }

    def _price_grid(self, config, out: Path, self_check: bool) -> Dict[str, Any]:
        grid = self.engine.scenario_grid(config)
        grid.to_csv(out / GRID_CSV)
        logger.info(f"Scenario grid totals (bps):\n{grid.to_bps_frame().to_string()}")
        response: Dict[str, Any] = {
            "success": True,
            "grid_path": str(out / GRID_CSV),
            "cells": len(grid.sheets),
            "message": f"Priced {len(grid.sheets)} scenario cell(s)",
        }
        if grid.errors:
            details = "; ".join(
                f"{c}/{b}/{m}d/{h:.2%}: {msg}" for (c, b, m, h), msg in grid.errors.items()
            )
            return {**response, **failure("Target unreachable", details, EXIT_TARGET_UNREACHABLE)}
        if self_check:
            violations = grid.check_monotone()
            response["self_check"] = {"passed": not violations, "violations": violations}
            if violations:
                return {**response, **failure("Self-check failed", "; ".join(violations), EXIT_SELF_CHECK_FAILED)}
        return response
