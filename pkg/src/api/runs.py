"""
Run processing module
Request models for the HTTP surface and the handlers that turn them into
harness calls.
"""
import logging
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field, model_validator

from src.services.harness import check_expectations, run_batch
from src.services.results_store import log_batch_result
from src.services.scenario import ScenarioFile, load_bundled_scenario, parse_scenario
from src.services.sweep import message_length_sweep, parse_lengths
from src.services.vlc import PACKET_BITS

logger = logging.getLogger(__name__)


class ScenarioRef(BaseModel):
    """A bundled scenario name or an inline scenario document (YAML or JSON)."""

    scenario: Optional[str] = None
    scenario_text: Optional[str] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.scenario is None) == (self.scenario_text is None):
            raise ValueError("give exactly one of 'scenario' or 'scenario_text'")
        return self

    def load(self) -> ScenarioFile:
        if self.scenario_text is not None:
            return parse_scenario(self.scenario_text)
        return load_bundled_scenario(self.scenario)

    @property
    def label(self) -> str:
        return self.scenario or "inline"


class RunRequest(ScenarioRef):
    seed: Optional[int] = None
    repetitions: Optional[int] = Field(None, ge=1, le=500)
    workers: int = Field(1, ge=1, le=16)
    persist: bool = False


class SweepRequest(ScenarioRef):
    lengths: str = "14..26"
    motion: str = Field("walking", pattern=r"^(static|walking)$")
    trials: int = Field(20, ge=1, le=200)
    seed: int = 0
    workers: int = Field(1, ge=1, le=16)


def execute_run(request: RunRequest) -> Dict[str, Any]:
    """Run a batch; ScenarioParseError and FileNotFoundError propagate to the caller."""
    scenario = request.load()
    batch = run_batch(scenario, repetitions=request.repetitions, base_seed=request.seed, workers=request.workers)
    failures = check_expectations(scenario, batch)
    persisted = log_batch_result(batch, scenario=request.label, packet_bits=PACKET_BITS) if request.persist else False
    logger.info(f"[{scenario.condition}] API run finished, {len(failures)} failed expectations")
    return {
        "scenario": request.label,
        "result": batch.to_dict(),
        "expectation_failures": failures,
        "persisted": persisted,
    }


def execute_sweep(request: SweepRequest) -> Dict[str, Any]:
    scenario = request.load()
    lengths = parse_lengths(request.lengths)
    rows = message_length_sweep(
        scenario, lengths, motion=request.motion, trials=request.trials,
        base_seed=request.seed, workers=request.workers,
    )
    return {
        "scenario": request.label,
        "motion": request.motion,
        "rows": [row.to_dict() for row in rows],
    }
