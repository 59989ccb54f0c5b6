"""
HeatFlow Lab - Flow Worker
==========================
Worker: runs the Donaldson flow for a scenario and writes the run directory
(diagnostics CSV, binary snapshots, verdict JSON).
"""

import logging
from pathlib import Path
from typing import Dict, Optional

import numpy as np

import settings
from donaldson_flow import Verdict, flow_diagnostics, run
from errors import FlowAbort
from fieldio import save_trajectory, write_json
from scenario import Scenario

logger = logging.getLogger('FlowWorker')


class FlowWorker:
    """
    Flow Worker: the integrator front end.

    Responsibilities:
    1. Build geometry, bundle and controls from a scenario
    2. Run the flow to a verdict
    3. Persist snapshots, diagnostics and the verdict report
    """

    @staticmethod
    def run_scenario(scenario: Scenario, out_dir: Optional[Path] = None,
                     seed: Optional[int] = None) -> Dict:
        """
        Returns:
            dict with verdict, final residual, sup|h|, run directory and
            the exit status the command line should report.
        """
        out_dir = Path(out_dir) if out_dir else scenario.output_dir()
        spec = scenario.bundle(seed)
        controls = scenario.flow_controls()
        logger.info("scenario %s (%s): rank %d, degrees %s, grid %d^%d",
                    scenario.name, scenario.hash[:12], spec.rank, list(spec.degrees),
                    spec.geometry.grid, spec.geometry.ndim)
        base = {
            "scenario": scenario.to_dict(),
            "scenario_hash": scenario.hash,
            "config": settings.effective_config(),
            "tolerances": {"eps": controls.eps, "blowup": controls.blowup},
            "grid": spec.geometry.describe(),
        }
        try:
            traj = run(spec, controls)
        except FlowAbort as e:
            write_json(out_dir / "verdict.json", {**base, "verdict": "Abort", "error": str(e),
                                                  "last_t": getattr(e.last_state, "t", None)})
            raise

        diagnostics = flow_diagnostics(traj) if len(traj.snapshots) >= 2 else None
        last = traj.last_state
        report = {
            **base,
            "verdict": traj.verdict.value,
            "t": last.t,
            "residual": last.residual,
            "sup_h": last.sup_h,
            "trace_integral": last.trace,
            "expected_trace": 2 * np.pi * spec.degree,
            "dissipation": last.dissipation,
            "diagnostics": diagnostics or {},
        }
        save_trajectory(out_dir, traj, {"scenario_hash": scenario.hash})
        write_json(out_dir / "verdict.json", report)
        return {
            "verdict": traj.verdict,
            "run_dir": out_dir,
            "trajectory": traj,
            "report": report,
            "exit_status": 1 if traj.verdict == Verdict.TIMEOUT else 0,
        }
