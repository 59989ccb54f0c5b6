"""
HeatFlow Lab - Master Worker
============================
The orchestrator: resolves a scenario, routes each command-line verb to its
worker and tracks the run phase.
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

from errors import PreconditionError
from scenario import Scenario, load_preset, load_scenario
from workers.destab_worker import DestabWorker
from workers.flow_worker import FlowWorker
from workers.frobenius_worker import FrobeniusWorker
from workers.verification import VerificationWorker

logger = logging.getLogger('MasterWorker')


# ============================================================================
# PHASES
# ============================================================================

class LabPhase(Enum):
    """Where a command currently is."""
    CONFIGURED = "configured"
    FLOWING = "flowing"
    ANALYZING = "analyzing"
    SOLVING = "solving"
    CHECKING = "checking"
    DONE = "done"
    FAILED = "failed"


class MasterWorker:
    """
    Hub-and-spoke router over FlowWorker, DestabWorker, FrobeniusWorker and
    VerificationWorker.
    """

    def __init__(self, scenario: Optional[Scenario] = None, out_dir: Optional[str] = None,
                 seed: Optional[int] = None, threads: Optional[int] = None):
        self.scenario = scenario
        self.out_dir = out_dir
        self.seed = seed
        self.threads = threads
        self.phase = LabPhase.CONFIGURED
        self.history: List[LabPhase] = [self.phase]

    @classmethod
    def from_args(cls, scenario_path: Optional[str] = None, preset: Optional[str] = None, **kwargs) -> 'MasterWorker':
        if scenario_path and preset:
            raise PreconditionError("give either --scenario or --preset, not both")
        scenario = None
        if scenario_path:
            scenario = load_scenario(scenario_path)
        elif preset:
            scenario = load_preset(preset)
        return cls(scenario, **kwargs)

    def _enter(self, phase: LabPhase) -> None:
        logger.info("phase %s -> %s", self.phase.value, phase.value)
        self.phase = phase
        self.history.append(phase)

    def _need_scenario(self) -> Scenario:
        if self.scenario is None:
            raise PreconditionError("this command needs --scenario or --preset")
        return self.scenario

    def _out(self) -> Path:
        return self._need_scenario().output_dir(self.out_dir)

    # ------------------------------------------------------------------ verbs

    def flow(self) -> Dict:
        scenario = self._need_scenario()
        self._enter(LabPhase.FLOWING)
        try:
            result = FlowWorker.run_scenario(scenario, self._out(), self.seed)
        except Exception:
            self._enter(LabPhase.FAILED)
            raise
        self._enter(LabPhase.DONE)
        return result

    def destab(self, run_dir: Optional[str] = None) -> Dict:
        """Analyze `run_dir`, or run the scenario's flow first when none is given."""
        if run_dir:
            trajectory = DestabWorker.load(run_dir)
            out = Path(self.out_dir) if self.out_dir else Path(run_dir)
            scenario_hash = self.scenario.hash if self.scenario else ""
        else:
            flow = self.flow()
            trajectory = flow["trajectory"]
            out = flow["run_dir"]
            scenario_hash = self.scenario.hash
        self._enter(LabPhase.ANALYZING)
        try:
            report = DestabWorker.analyze(trajectory, self.scenario)
            DestabWorker.write(report, out, scenario_hash)
        except Exception:
            self._enter(LabPhase.FAILED)
            raise
        self._enter(LabPhase.DONE)
        return report

    def frobenius(self, problem_path: Optional[str] = None, exact: Optional[bool] = None) -> Dict:
        self._enter(LabPhase.SOLVING)
        if problem_path:
            problem = FrobeniusWorker.load_problem(problem_path)
        else:
            block = self._need_scenario().data["frobenius"]
            if block["problem"]:
                problem = FrobeniusWorker.load_problem(block["problem"])
            elif block["family"]:
                problem = {"family": block["family"], "degree": block["degree"], "mode": block["mode"]}
            else:
                raise PreconditionError("scenario has neither frobenius.problem nor frobenius.family")
        solution = FrobeniusWorker.solve(problem, exact)
        out = Path(self.out_dir) if self.out_dir else (self._out() if self.scenario else Path("."))
        FrobeniusWorker.write(solution, out, self.scenario.hash if self.scenario else "")
        self._enter(LabPhase.DONE)
        return solution

    def check(self, suite: str) -> List[Dict]:
        self._enter(LabPhase.CHECKING)
        rows = VerificationWorker.run(suite, seed=self.seed or 0, threads=self.threads)
        self._enter(LabPhase.DONE)
        return rows
