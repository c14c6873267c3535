"""
Haircut Command

Solves rating-targeted haircuts for every borrower grade and target of a run
configuration and writes the schedule.
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field, ValidationError

from ..config import load_run_config, write_sidecar
from ..errors import HaircutModelError
from . import EXIT_SELF_CHECK_FAILED, EXIT_TARGET_UNREACHABLE, domain_failure, failure

logger = logging.getLogger(__name__)

SCHEDULE_FILE = "haircut_schedule.csv"
SIDECAR_FILE = "haircut_resolved.json"


class HaircutRequest(BaseModel):
    """Request model for a haircut schedule run."""

    config_path: str = Field(description="Run configuration JSON")
    out_dir: str = Field(".", description="Directory for the schedule and sidecar")
    seed: Optional[int] = Field(None, description="Overrides simulation.seed")
    self_check: bool = Field(False, description="Verify row and column monotonicity")


class HaircutCommand:
    """Command that builds a haircut schedule (grades x targets)."""

    name = "haircut"
    help = "Solve rating-targeted haircuts per borrower grade and target"

    def __init__(self, engine):
        self.engine = engine

    @staticmethod
    def add_arguments(parser: argparse.ArgumentParser) -> None:
        """Only the shared flags apply."""

    def execute(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        try:
            request = HaircutRequest(**arguments)
            config = load_run_config(request.config_path, request.seed)
            resolved = self.engine.resolve(config)
            schedule = self.engine.haircut_schedule(resolved)

            out = Path(request.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            schedule.to_csv(out / SCHEDULE_FILE)
            write_sidecar(resolved, out / SIDECAR_FILE)

            frame = schedule.to_frame()
            response: Dict[str, Any] = {
                "success": True,
                "schedule_path": str(out / SCHEDULE_FILE),
                "sidecar_path": str(out / SIDECAR_FILE),
                "shape": list(frame.shape),
                "haircuts": frame.to_dict(orient="index"),
                "assumptions": self.engine.assumed_credit_fields(config),
                "message": f"Solved {frame.size} haircut(s) for {len(schedule.grades)} grade(s)",
            }

            if schedule.errors:
                details = "; ".join(f"{g}/{t}: {msg}" for (g, t), msg in schedule.errors.items())
                return {**response, **failure("Target unreachable", details, EXIT_TARGET_UNREACHABLE)}

            if request.self_check:
                violations = schedule.check_monotone()
                response["self_check"] = {"passed": not violations, "violations": violations}
                if violations:
                    return {**response, **failure("Self-check failed", "; ".join(violations), EXIT_SELF_CHECK_FAILED)}
            return response

        except ValidationError as e:
            return failure("Invalid arguments", e)
        except HaircutModelError as e:
            return domain_failure(e, "solve haircuts")
        except Exception as e:
            logger.exception("Haircut run failed")
            return failure("Failed to solve haircuts", e)
