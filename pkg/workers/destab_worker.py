"""
HeatFlow Lab - Destabilizer Worker
==================================
Worker: reads a BlowUp run, extracts the destabilizing subsheaf and writes
the evidence report, eigenvalue histograms and a PDF certificate.
"""

import logging
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from assets.certificate_generator import generate_certificate
from destabilizer import DEFAULT_SCHEDULE, destabilize_verdict, harnack_check, multiplier_membership
from donaldson_flow import FlowTrajectory, concentration_detect, concentration_mask
from fieldio import atomic_open, load_trajectory, write_csv, write_json
from scenario import Scenario

logger = logging.getLogger('DestabWorker')


class DestabWorker:
    """
    Destabilizer Worker: the blow-up analyst.

    Responsibilities:
    1. Mask curvature concentration (n = 2) and extract h∞, π
    2. Compare μ(F) with μ(E) and check the Harnack bound per snapshot
    3. Emit JSON evidence, CSV histograms and the PDF certificate
    """

    @staticmethod
    def load(run_dir) -> FlowTrajectory:
        return load_trajectory(run_dir)

    @staticmethod
    def analyze(trajectory: FlowTrajectory, scenario: Optional[Scenario] = None) -> Dict:
        analysis = scenario.data["analysis"] if scenario else {}
        schedule = analysis.get("sigma_schedule") or DEFAULT_SCHEDULE
        regions = concentration_detect(trajectory, eps_loc=analysis.get("eps_loc", 0.5))
        mask = concentration_mask(trajectory.spec.geometry, regions) if regions else None
        report = destabilize_verdict(trajectory, mask=mask,
                                     tol_slope=analysis.get("tol_slope", 1e-3),
                                     tau=analysis.get("tau", 1e-6), schedule=schedule,
                                     delta_conv=analysis.get("delta_conv", 1e-3))
        spec = trajectory.spec
        report["harnack"] = [harnack_check(h, spec) for h in trajectory.snapshots]
        report["concentration_regions"] = [{"label": r["label"], "peak": r["peak"], "energy": r["energy"],
                                            "cells": len(r["cells"])} for r in regions]
        pi = report["projection"].pi
        # a constant vector in the kernel of h∞ at the peak cell of π
        peak = np.unravel_index(np.argmax(np.real(np.trace(pi, axis1=-2, axis2=-1))), pi.shape[:-2])
        vec = np.linalg.eigh(report["limit"].h_inf[peak])[1][:, 0]
        report["membership_sample"] = multiplier_membership(
            spec, vec, trajectory.snapshots, report["limit"].h_inf,
            analysis.get("delta_mem", 1e-4))
        return report

    @staticmethod
    def write(report: Dict, out_dir, scenario_hash: str = "") -> Path:
        out_dir = Path(out_dir)
        proj = report.pop("projection")
        limit = report.pop("limit")
        write_json(out_dir / "destab.json", {**report, "scenario_hash": scenario_hash})
        write_csv(out_dir / "rank_histogram.csv", ("eigencount", "cells"),
                  sorted(proj.histogram.items()))
        hist = report["log10_spectrum_histogram"]
        write_csv(out_dir / "spectrum_histogram.csv", ("log10_lo", "log10_hi", "count"),
                  zip(hist["edges"][:-1], hist["edges"][1:], hist["counts"]))
        with atomic_open(out_dir / "certificate.pdf", "wb") as f:
            f.write(generate_certificate(report, scenario_hash))
        report["projection"], report["limit"] = proj, limit
        logger.info("destabilizer evidence written to %s", out_dir)
        return out_dir
