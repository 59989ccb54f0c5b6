"""
HeatFlow Lab - Verification Worker
==================================
Worker: invariant and inequality check suites. Each suite returns rows of
{suite, case, value, threshold, passed, note}; suites run in parallel
through joblib.
"""

import logging
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

import settings
from bundle_fields import (MetricField, build_bundle, energy_identity_defect, hermitian_function,
                           random_metric, random_twisted_field, slope_bundle)
from destabilizer import (ProjectionField, destabilize_verdict, harnack_check, multiplier_membership,
                          slope_subsheaf, uy_inequality_terms, uy_ratio)
from donaldson_flow import FlowTrajectory, Verdict, run
from errors import FlowAbort, PreconditionError
from frobenius_series import EXACT, FAMILIES, FLOAT, family, holomorphic_frame
from scenario import load_preset, preset_names
from torus_geometry import TorusGeometry

logger = logging.getLogger('VerificationWorker')

SUITES = ("ibp", "uy", "harnack", "trace", "projection", "membership", "frobenius")
SIGMAS = tuple(round(0.1 * k, 1) for k in range(1, 10))


def _row(suite: str, case: str, value: float, threshold: float, passed: bool, note: str = "") -> Dict:
    return {"suite": suite, "case": case, "value": float(value), "threshold": float(threshold),
            "passed": bool(passed), "note": note}


@lru_cache(maxsize=None)
def _preset_run(name: str) -> Tuple[FlowTrajectory, float]:
    """A preset flow run, once per process, with the worst |det h - 1| over every step."""
    scenario = load_preset(name)
    spec = scenario.bundle()
    det_defect = [0.0]

    def watch(state):
        if spec.rank > 1:
            det = np.real(np.linalg.det(state.h))
            det_defect[0] = max(det_defect[0], float(np.max(np.abs(det - 1.0))))

    traj = run(spec, scenario.flow_controls(), on_step=watch)
    return traj, det_defect[0]


def _blowup_presets(presets: Optional[Sequence[str]] = None) -> List[str]:
    names = []
    for name in presets or preset_names():
        try:
            traj, _ = _preset_run(name)
        except FlowAbort as e:
            logger.warning("preset %s aborted: %s", name, e)
            continue
        if traj.verdict == Verdict.BLOW_UP:
            names.append(name)
    return names


# ============================================================================
# SUITES
# ============================================================================

def check_ibp(seed: int = 0) -> List[Dict]:
    """Integration-by-parts identity under refinement; exact SBP makes it roundoff-level."""
    rows, defects = [], []
    for grid in (16, 32, 64):
        spec = build_bundle(TorusGeometry(1, grid), (1, 1), (0, 1), "extension",
                            seed=seed, amplitude=0.5, conformal=False)
        lhs, rhs, defect = energy_identity_defect(spec, random_metric(spec, seed))
        scale = max(1.0, abs(lhs), abs(rhs))
        defects.append(defect / scale)
        rows.append(_row("ibp", f"grid={grid}", defect, 1e-9 * scale, True, f"lhs={lhs:.6g}"))
    floor = max(defects) < 1e-9
    rate = float(np.log2(defects[-2] / defects[-1])) if defects[-1] > 0 and defects[-2] > 0 else np.inf
    passed = floor or rate >= 1.8
    for r in rows:
        r["passed"] = passed
    rows.append(_row("ibp", "refinement", rate if np.isfinite(rate) else 0.0, 1.8, passed,
                     "roundoff floor" if floor else "measured rate"))
    return rows


def check_uy(count: int = 1000, seed: int = 0) -> List[Dict]:
    rows = []
    worst, equality = -np.inf, 0.0
    spec = build_bundle(TorusGeometry(1, 16), (1, 1), (0, 1), "direct_sum", conformal=False)
    for i in range(count):
        h = random_metric(spec, seed + i, amplitude=0.8)
        for sigma in SIGMAS:
            lhs, rhs = uy_inequality_terms(spec, h, sigma)
            scale = max(1e-300, float(np.max(rhs)))
            worst = max(worst, float(np.max(lhs - rhs)) / scale)
        lhs, rhs = uy_inequality_terms(spec, h, 1.0)
        scale = max(1e-300, float(np.max(rhs)))
        equality = max(equality, float(np.max(np.abs(lhs - rhs))) / scale)
    rows.append(_row("uy", f"{count} fields sigma=1", equality, 1e-10, equality <= 1e-10, "exact"))
    rows.append(_row("uy", f"{count} fields x {len(SIGMAS)} sigmas", worst, 1e-8, worst <= 1e-8,
                     "max relative violation"))

    spec = build_bundle(TorusGeometry(1, 16), (1, 1), (0, 0), "direct_sum", conformal=False)
    u = np.real(random_twisted_field(spec.geometry, 0, np.random.default_rng(seed)))
    X = np.array([[1.0, 0.3 + 0.2j], [0.3 - 0.2j, -0.5]])
    h = hermitian_function(u[..., None, None] * X, np.exp)
    for sigma in (0.3, 0.7):
        ratio = uy_ratio(spec, h, sigma)
        rows.append(_row("uy", f"commuting sigma={sigma}", ratio, sigma,
                         abs(ratio - sigma) < 1e-8, "ratio equals sigma"))
    return rows


def check_harnack(seed: int = 0, presets: Optional[Sequence[str]] = None) -> List[Dict]:
    rows = []
    for name in _blowup_presets(presets):
        traj, _ = _preset_run(name)
        for k, h in enumerate(traj.snapshots):
            res = harnack_check(h, traj.spec)
            rows.append(_row("harnack", f"{name} snapshot {k}", res["c"], res["bound"], res["holds"]))
    spec = build_bundle(TorusGeometry(1, 16), (1, 1), (1, -1), "direct_sum")
    for i in range(5):
        res = harnack_check(random_metric(spec, seed + i, amplitude=1.0), spec)
        rows.append(_row("harnack", f"random field {i}", res["c"], res["bound"], res["holds"],
                         f"pointwise margin {res['pointwise_margin']:.3e}"))
    return rows


def check_trace(presets: Optional[Sequence[str]] = None) -> List[Dict]:
    """Trace integral at every accepted step of every preset run, and det h = 1 for rank > 1."""
    rows = []
    for name in presets or preset_names():
        try:
            traj, det_defect = _preset_run(name)
        except FlowAbort as e:
            rows.append(_row("trace", f"{name} trace", 0.0, 1e-6, False, f"flow aborted: {e}"))
            continue
        spec = traj.spec
        target = 2 * np.pi * spec.degree
        series = traj.series["trace"]
        drift = max(abs(t - target) for t in series)
        rows.append(_row("trace", f"{name} trace", drift, 1e-6, drift < 1e-6,
                         f"{len(series)} steps, {traj.verdict.value}"))
        if spec.rank > 1 and traj.controls.normalize_det:
            rows.append(_row("trace", f"{name} det", det_defect, 1e-10, det_defect < 1e-10))
    return rows


SUBSHEAF_SLOPES = {"split_1_-1": 1.0, "split_2_0": 2.0, "unstable_extension_r2": 1.0}


def check_projection(presets: Optional[Sequence[str]] = None) -> List[Dict]:
    rows = []
    for name in _blowup_presets(presets):
        traj, _ = _preset_run(name)
        report = destabilize_verdict(traj)
        proj = report["projection"]
        pi = proj.pi[proj.valid]
        idem = float(np.max(np.abs(pi @ pi - pi)))
        herm = float(np.max(np.abs(pi - np.conj(np.swapaxes(pi, -1, -2)))))
        rows.append(_row("projection", f"{name} idempotent", idem, 1e-8, idem < 1e-8))
        rows.append(_row("projection", f"{name} self-adjoint", herm, 1e-8, herm < 1e-8))
        mu_f = report["slope_subsheaf"]
        expected = SUBSHEAF_SLOPES.get(name)
        if expected is None:
            rows.append(_row("projection", f"{name} mu(F)", mu_f, report["slope_bundle"],
                             report["destabilizing"], "mu(F) >= mu(E)"))
        else:
            rows.append(_row("projection", f"{name} mu(F)", mu_f, expected,
                             abs(mu_f - expected) < 1e-3 and report["destabilizing"]))
        spec = traj.spec
        full = ProjectionField(pi=MetricField.identity(spec).h, k=spec.rank, tau=proj.tau,
                               exceptional=np.zeros(spec.geometry.shape, dtype=bool),
                               mask=np.zeros(spec.geometry.shape, dtype=bool), histogram={})
        gap = abs(slope_subsheaf(full, spec) - slope_bundle(spec))
        rows.append(_row("projection", f"{name} slope(I)", gap, 1e-12, gap < 1e-12))
    return rows


def check_membership(seed: int = 0, count: int = 20, presets: Optional[Sequence[str]] = None) -> List[Dict]:
    """Sections alpha·v_in + beta·v_out, v_in/v_out the extreme eigenvectors of h∞ at the peak of π."""
    rows = []
    rng = np.random.default_rng(seed)
    for name in _blowup_presets(presets):
        traj, _ = _preset_run(name)
        report = destabilize_verdict(traj)
        h_inf = report["limit"].h_inf
        pi = report["projection"].pi
        peak = np.unravel_index(np.argmax(np.real(np.trace(pi, axis1=-2, axis2=-1))), pi.shape[:-2])
        vecs = np.linalg.eigh(h_inf[peak])[1]
        inside, outside = vecs[:, 0], vecs[:, -1]
        agree = 0
        for i in range(count):
            alpha = rng.normal() + 1j * rng.normal()
            beta = 0.0 if i % 2 == 0 else rng.uniform(0.5, 1.0)
            res = multiplier_membership(traj.spec, alpha * inside + beta * outside, traj.snapshots, h_inf)
            agree += res["agree"]
        rows.append(_row("membership", f"{name} {count} sections", agree, count, agree == count,
                         "flags agree"))
    return rows


def check_frobenius(degree: int = 6) -> List[Dict]:
    rows = []
    for ring in (EXACT, FLOAT):
        for name in FAMILIES:
            fam = family(name, degree, ring)
            res = holomorphic_frame(fam["f"], fam["A"])
            worst = max(res["residuals"])
            threshold = 0.0 if ring.exact else 1e-12
            rows.append(_row("frobenius", f"{name} ({ring.mode})", worst, threshold,
                             worst <= threshold and res["span_certificate"]["exact"]))
    return rows


SUITE_FUNCTIONS = {
    "ibp": check_ibp,
    "uy": check_uy,
    "harnack": check_harnack,
    "trace": lambda seed=0: check_trace(),
    "projection": lambda seed=0: check_projection(),
    "membership": check_membership,
    "frobenius": lambda seed=0: check_frobenius(),
}


def _run_suite(name: str, seed: int) -> List[Dict]:
    return SUITE_FUNCTIONS[name](seed=seed)


class VerificationWorker:
    """
    Verification Worker: the invariant auditor.

    Suites: ibp, uy, harnack, trace, projection, membership, frobenius, all.
    """

    @staticmethod
    def suites() -> tuple:
        return SUITES + ("all",)

    @staticmethod
    def run(suite: str, seed: int = 0, threads: Optional[int] = None) -> List[Dict]:
        if suite not in VerificationWorker.suites():
            raise PreconditionError(f"unknown suite {suite!r}; available: {', '.join(VerificationWorker.suites())}")
        names = SUITES if suite == "all" else (suite,)
        n_jobs = threads or settings.threads()
        results = Parallel(n_jobs=min(n_jobs, len(names)))(delayed(_run_suite)(name, seed) for name in names)
        rows = [row for block in results for row in block]
        failed = [r for r in rows if not r["passed"]]
        logger.info("check %s: %d rows, %d failed", suite, len(rows), len(failed))
        return rows
