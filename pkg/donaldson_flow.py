"""
HeatFlow Lab - Donaldson Flow
=============================
Time integration of the Donaldson heat flow

    ∂h/∂t = -2 h (iF̂_H - μ I)

starting from h_0 = I, with explicit RK4 steps, adaptive halving on loss of
positivity, det renormalization and the stopping rules
Converged / BlowUp / Timeout.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from bundle_fields import (BundleSpec, MetricField, cov_antihol, cov_hol, curvature,
                           i_hatF, operator_norm, pointwise_norm_sq, safe_inverse,
                           slope_bundle, sup_norm, trace_integral)
from errors import FlowAbort, NumericalError, PreconditionError
from torus_geometry import ScalarField, TorusGeometry, _fft, _ifft, integrate

logger = logging.getLogger('DonaldsonFlow')


# ============================================================================
# CONTROLS AND STATE
# ============================================================================

class Verdict(Enum):
    """How a flow run ended"""
    CONVERGED = "Converged"
    BLOW_UP = "BlowUp"
    TIMEOUT = "Timeout"


@dataclass
class FlowControls:
    """
    Integrator and stopping parameters.

    dt0 defaults to 0.2·dx²·s, the parabolic step bound of the stencil.
    """
    dt0: Optional[float] = None
    t_max: float = 20.0
    eps: float = 1e-6
    blowup: float = 1e6
    stride: int = 50
    normalize_det: bool = True
    max_halvings: int = 20
    monotone_tol: float = 1e-8
    trace_tol: float = 1e-6

    def initial_dt(self, geometry: TorusGeometry) -> float:
        if self.dt0 is not None:
            if self.dt0 <= 0:
                raise PreconditionError(f"dt0 must be positive, got {self.dt0}")
            return float(self.dt0)
        dx = min(geometry.spacing(a) for a in geometry.grid_axes)
        return 0.2 * dx * dx * geometry.vol_scale

    def as_dict(self) -> Dict:
        return {"dt0": self.dt0, "t_max": self.t_max, "eps": self.eps,
                "blowup": self.blowup, "stride": self.stride,
                "normalize_det": self.normalize_det}


@dataclass
class FlowState:
    spec: BundleSpec
    t: float
    h: np.ndarray
    residual: float = 0.0
    sup_h: float = 1.0
    trace: float = 0.0
    dissipation: float = 0.0
    dt: float = 0.0


@dataclass
class FlowTrajectory:
    """Snapshots of h plus one diagnostics row per accepted step."""
    spec: BundleSpec
    controls: FlowControls
    snapshot_times: List[float] = field(default_factory=list)
    snapshots: List[np.ndarray] = field(default_factory=list)
    series: Dict[str, List[float]] = field(default_factory=lambda: {
        "t": [], "residual": [], "sup_h": [], "trace": [], "dissipation": []})
    _verdict: Optional[Verdict] = None
    last_state: Optional[FlowState] = None

    @property
    def verdict(self) -> Optional[Verdict]:
        return self._verdict

    @verdict.setter
    def verdict(self, value: Verdict) -> None:
        if self._verdict is not None:
            raise PreconditionError(f"verdict already set to {self._verdict.value}")
        self._verdict = value

    def record(self, state: FlowState) -> None:
        for key in self.series:
            self.series[key].append(float(getattr(state, key)))

    def snapshot(self, state: FlowState) -> None:
        if self.snapshot_times and state.t <= self.snapshot_times[-1]:
            return
        self.snapshot_times.append(float(state.t))
        self.snapshots.append(state.h.copy())


# ============================================================================
# STEPPING
# ============================================================================

def _rhs(spec: BundleSpec, h: np.ndarray, mu: float) -> np.ndarray:
    m = i_hatF(spec, h) - mu * np.eye(spec.rank)
    return -2.0 * (h @ m)


def residual_norm(spec: BundleSpec, h: np.ndarray, mu: Optional[float] = None) -> float:
    """‖iF̂_H - μ‖_{L², H} = sqrt ∫ Tr(m h^{-1} m^† h), m = iF̂_H - μ."""
    mu = slope_bundle(spec) if mu is None else mu
    m = i_hatF(spec, h) - mu * np.eye(spec.rank)
    dens = pointwise_norm_sq(ScalarField(spec.geometry, m), h)
    return float(np.sqrt(max(0.0, np.real(integrate(spec.geometry, dens)))))


def _rk4(spec: BundleSpec, h: np.ndarray, dt: float, mu: float, normalize_det: bool) -> np.ndarray:
    k1 = _rhs(spec, h, mu)
    k2 = _rhs(spec, h + 0.5 * dt * k1, mu)
    k3 = _rhs(spec, h + 0.5 * dt * k2, mu)
    k4 = _rhs(spec, h + dt * k3, mu)
    new = h + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    new = 0.5 * (new + np.conj(np.swapaxes(new, -1, -2)))
    if not np.all(np.isfinite(new)):
        raise NumericalError("non-finite metric after step")
    eig = np.linalg.eigvalsh(new)
    if eig.min() <= 0:
        where = np.unravel_index(np.argmin(eig.min(axis=-1)), eig.shape[:-1])
        raise NumericalError("metric lost positivity", where)
    if normalize_det and spec.rank > 1:
        det = np.prod(eig, axis=-1)
        new = new / (det ** (1.0 / spec.rank))[..., None, None]
    return new


def step(state: FlowState, dt: float, controls: Optional[FlowControls] = None) -> FlowState:
    """
    One accepted RK4 step. A step that loses positivity is retried with dt
    halved, at most `max_halvings` times.
    """
    if dt <= 0:
        raise PreconditionError(f"dt must be positive, got {dt}")
    controls = controls or FlowControls()
    spec = state.spec
    mu = slope_bundle(spec)
    trial = dt
    for attempt in range(controls.max_halvings + 1):
        try:
            h = _rk4(spec, state.h, trial, mu, controls.normalize_det)
            break
        except NumericalError as e:
            logger.warning("step rejected at t=%.4g dt=%.3e (%s); halving", state.t, trial, e)
            trial *= 0.5
    else:
        raise FlowAbort(f"positivity lost after {controls.max_halvings} halvings at t={state.t:.4g}", state)
    residual = residual_norm(spec, h, mu)
    dissipation = state.dissipation + 0.5 * trial * (state.residual ** 2 + residual ** 2)
    return replace(state, t=state.t + trial, h=h, residual=residual, sup_h=sup_norm(h),
                   trace=trace_integral(spec, h), dissipation=dissipation, dt=trial)


def initial_state(spec: BundleSpec, h0=None) -> FlowState:
    h = MetricField.identity(spec).h if h0 is None else np.array(h0.h if isinstance(h0, MetricField) else h0,
                                                                 dtype=complex)
    MetricField(h).check()
    mu = slope_bundle(spec)
    return FlowState(spec=spec, t=0.0, h=h, residual=residual_norm(spec, h, mu),
                     sup_h=sup_norm(h), trace=trace_integral(spec, h))


def run(spec: BundleSpec, controls: Optional[FlowControls] = None, h0=None,
        on_step: Optional[Callable[[FlowState], None]] = None) -> FlowTrajectory:
    """Integrate until Converged, BlowUp or Timeout; snapshots every `stride` steps."""
    controls = controls or FlowControls()
    state = initial_state(spec, h0)
    traj = FlowTrajectory(spec=spec, controls=controls)
    traj.record(state)
    traj.snapshot(state)
    dt = controls.initial_dt(spec.geometry)
    trace0 = state.trace
    logger.info("flow start: rank=%d mu=%.6g dt0=%.3e residual=%.3e",
                spec.rank, slope_bundle(spec), dt, state.residual)

    steps = 0
    verdict = None
    while verdict is None:
        if state.residual < controls.eps:
            verdict = Verdict.CONVERGED
            break
        if state.sup_h > controls.blowup:
            verdict = Verdict.BLOW_UP
            break
        if state.t >= controls.t_max - 1e-12:
            verdict = Verdict.TIMEOUT
            break
        prev = state
        try:
            state = step(state, min(dt, controls.t_max - state.t), controls)
        except FlowAbort as e:
            traj.last_state = prev
            traj.snapshot(prev)
            raise FlowAbort(str(e), prev) from e
        dt = min(dt, state.dt) if state.dt < dt else dt
        steps += 1
        if state.residual ** 2 > prev.residual ** 2 + controls.monotone_tol * max(1.0, prev.residual ** 2):
            traj.last_state = prev
            traj.snapshot(prev)
            raise FlowAbort(f"residual increased at t={state.t:.4g}: "
                            f"{prev.residual:.6e} -> {state.residual:.6e}", prev)
        if abs(state.trace - trace0) > controls.trace_tol * max(1.0, abs(trace0)):
            logger.warning("trace integral drifted to %.8g (start %.8g)", state.trace, trace0)
        traj.record(state)
        if on_step is not None:
            on_step(state)
        if steps % controls.stride == 0:
            traj.snapshot(state)
            logger.debug("t=%.4g residual=%.3e sup|h|=%.3e", state.t, state.residual, state.sup_h)

    traj.snapshot(state)
    traj.last_state = state
    traj.verdict = verdict
    logger.info("flow verdict %s at t=%.4g after %d steps (residual %.3e, sup|h| %.3e)",
                verdict.value, state.t, steps, state.residual, state.sup_h)
    return traj


# ============================================================================
# CONVERGENCE DIAGNOSTICS
# ============================================================================

def covariant_gradient_norm(spec: BundleSpec, h: np.ndarray, m: np.ndarray) -> float:
    """‖∇_H m‖_{L²} for an endomorphism field, Chern connection of H = H_0 h."""
    g = spec.geometry
    hinv = safe_inverse(h)
    total = 0.0
    for j in range(g.n):
        theta = hinv @ cov_hol(spec, h, j)
        d10 = cov_hol(spec, m, j) + theta @ m - m @ theta
        d01 = cov_antihol(spec, m, j)
        for d in (d10, d01):
            dens = np.real(np.trace(d @ hinv @ np.conj(np.swapaxes(d, -1, -2)) @ h, axis1=-2, axis2=-1))
            total += (2.0 / g.vol_scale) * np.real(integrate(g, dens))
    return float(np.sqrt(max(0.0, total)))


def flow_diagnostics(trajectory: FlowTrajectory) -> Dict:
    """
    Per snapshot: ‖F_H‖_{L²}, sup|F̂_H| and ‖∇_H F̂_H‖_{L²}, plus monotonicity
    violations of the residual series and the maximum-principle bound on sup|F̂|.
    """
    if len(trajectory.snapshots) < 2:
        raise PreconditionError("diagnostics need at least two snapshots")
    spec = trajectory.spec
    g = spec.geometry
    curv_l2, sup_hat, grad = [], [], []
    for h in trajectory.snapshots:
        F = curvature(spec, h)
        curv_l2.append(float(np.sqrt(max(0.0, np.real(integrate(g, pointwise_norm_sq(F, h)))))))
        m = i_hatF(spec, h)
        sup_hat.append(float(np.max(operator_norm(m))))
        grad.append(covariant_gradient_norm(spec, h, m))

    res = trajectory.series["residual"]
    tol = trajectory.controls.monotone_tol
    violations = [i for i in range(1, len(res))
                  if res[i] ** 2 > res[i - 1] ** 2 + tol * max(1.0, res[i - 1] ** 2)]
    bound = sup_hat[0] * (1 + 1e-6) + 1e-9
    return {
        "times": list(trajectory.snapshot_times),
        "curvature_l2": curv_l2,
        "sup_hatF": sup_hat,
        "grad_hatF_l2": grad,
        "hatF_bound": bound,
        "hatF_bounded": bool(max(sup_hat) <= bound),
        "monotonicity_violations": violations,
        "monotone": not violations,
    }


def _ball_kernel(geometry: TorusGeometry, radius: float) -> np.ndarray:
    dist2 = 0.0
    for axis in geometry.grid_axes:
        x = geometry.coordinate(axis)
        L = geometry.periods[axis // 2]
        wrapped = np.minimum(x, L - x)
        dist2 = dist2 + geometry.vol_scale * wrapped ** 2
    return (dist2 <= radius ** 2).astype(float)


def periodic_label(mask: np.ndarray):
    """ndimage.label with labels merged across opposite faces of the grid."""
    labels, count = ndimage.label(mask)
    if count == 0:
        return labels, 0
    rows, cols = [], []
    for axis in range(mask.ndim):
        first = np.take(labels, 0, axis=axis)
        last = np.take(labels, -1, axis=axis)
        both = (first > 0) & (last > 0)
        rows.extend(first[both].tolist())
        cols.extend(last[both].tolist())
    graph = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(count + 1, count + 1))
    _, comp = csgraph.connected_components(graph, directed=False)
    # compact to 1..k, background stays 0
    roots = comp[1:]
    _, merged = np.unique(roots, return_inverse=True)
    lookup = np.concatenate([[0], merged + 1])
    labels = lookup[labels]
    return labels, int(merged.max()) + 1


def concentration_regions(geometry: TorusGeometry, density: np.ndarray,
                          eps_loc: float, radius: float) -> List[Dict]:
    """
    Connected regions (periodic in every axis) where the energy of `density` inside a geodesic ball
    of the given radius exceeds eps_loc.
    """
    if geometry.n == 1:
        return []
    kernel = _ball_kernel(geometry, radius)
    local = np.real(_ifft(geometry, _fft(geometry, density) * _fft(geometry, kernel))) * geometry.cell_volume
    labels, count = periodic_label(local > eps_loc)
    regions = []
    for lab in range(1, count + 1):
        cells = np.argwhere(labels == lab)
        peak = np.unravel_index(np.argmax(np.where(labels == lab, local, -np.inf)), local.shape)
        regions.append({"label": lab, "cells": cells, "peak": tuple(int(i) for i in peak),
                        "energy": float(local[peak])})
    return regions


def concentration_mask(geometry: TorusGeometry, regions: List[Dict]) -> np.ndarray:
    """True where a cell belongs to a concentration region (excluded from X̃)."""
    mask = np.zeros(geometry.shape, dtype=bool)
    for region in regions:
        mask[tuple(region["cells"].T)] = True
    return mask


def concentration_detect(trajectory: FlowTrajectory, eps_loc: float = 0.5,
                         radius: Optional[float] = None) -> List[Dict]:
    """Curvature-concentration regions of the last snapshot; empty for n = 1."""
    spec = trajectory.spec
    g = spec.geometry
    if g.n == 1:
        return []
    radius = radius if radius is not None else 4 * min(g.spacing(a) for a in g.grid_axes) * np.sqrt(g.vol_scale)
    h = trajectory.snapshots[-1]
    density = pointwise_norm_sq(curvature(spec, h), h)
    regions = concentration_regions(g, density, eps_loc, radius)
    if regions:
        logger.info("%d curvature concentration region(s) above %.3g", len(regions), eps_loc)
    return regions
