"""
HeatFlow Lab - Destabilizer
===========================
Post-processing of a blow-up run: normalized endomorphisms h'_k, their limit
h∞, spectral powers, the projection π = lim_{σ→0}(I - h∞^σ), multiplier-sheaf
membership of sections, the slope of the subsheaf cut out by π and the
destabilizing verdict. Also hosts the pointwise inequality checks used in
the curvature estimates (Harnack-type bound, divided-difference inequality).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from bundle_fields import (BundleSpec, cov_hol, dagger, i_hatF,
                           operator_norm, slope_bundle, sup_norm)
from donaldson_flow import FlowTrajectory, Verdict
from errors import (NoLimitError, NumericalError, PreconditionError, RankPlateauError,
                    StructuralError, UndefinedSlopeError)
from torus_geometry import greens_minimum, integrate, laplacian

logger = logging.getLogger('Destabilizer')

DEFAULT_SCHEDULE = tuple(2.0 ** -k for k in range(0, 21))
DELTA_CONV = 1e-3
DELTA_MEM = 1e-4
TAU = 1e-6
TOL_SLOPE = 1e-3


# ============================================================================
# DOMAIN TYPES
# ============================================================================

@dataclass
class LimitEndo:
    """h∞ with its Cauchy-gap report; mask is True on excluded cells."""
    h_inf: np.ndarray
    gaps: List[float]
    mask: np.ndarray
    times: List[float] = field(default_factory=list)

    @property
    def spectrum(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.h_inf)


@dataclass
class ProjectionField:
    """π with its numerical rank k, the threshold τ and the exceptional cells."""
    pi: np.ndarray
    k: int
    tau: float
    exceptional: np.ndarray
    mask: np.ndarray
    histogram: Dict[int, int]
    sigma_limit_gap: float = 0.0
    sigma_window: float = 1.0
    schedule_gaps: List[float] = field(default_factory=list)

    @property
    def valid(self) -> np.ndarray:
        return ~(self.exceptional | self.mask)


def _mask_for(h: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    shape = h.shape[:-2]
    if mask is None:
        return np.zeros(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise StructuralError(f"mask shape {mask.shape} does not match grid {shape}")
    return mask


# ============================================================================
# NORMALIZATION AND LIMIT
# ============================================================================

def normalize_blowup(h) -> np.ndarray:
    """h' = h / sup_X |h|_{H_0}, so that sup |h'| = 1."""
    h = np.asarray(getattr(h, 'h', h))
    top = sup_norm(h)
    if not top > 0:
        raise PreconditionError("cannot normalize a metric field with sup |h| = 0")
    return h / top


def limit_endo(trajectory: FlowTrajectory, mask: Optional[np.ndarray] = None,
               delta_conv: float = DELTA_CONV) -> LimitEndo:
    """
    Sup-norm gaps of consecutive normalized snapshots on the unmasked region.
    Convergence needs the second half of the gap series (at least three gaps)
    to be nonincreasing and the last gap below delta_conv.
    """
    if trajectory.verdict != Verdict.BLOW_UP:
        raise PreconditionError("limit_endo needs a BlowUp trajectory")
    if len(trajectory.snapshots) < 3:
        raise PreconditionError("limit_endo needs at least three snapshots")
    normalized = [normalize_blowup(h) for h in trajectory.snapshots]
    mask = _mask_for(normalized[0], mask)
    keep = ~mask
    gaps = []
    for prev, cur in zip(normalized, normalized[1:]):
        diff = np.linalg.eigvalsh((cur - prev)[keep])
        gaps.append(float(np.max(np.abs(diff))))
    tail = gaps[max(0, min(len(gaps) // 2, len(gaps) - 3)):]
    decreasing = all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(tail, tail[1:]))
    if not (decreasing and gaps[-1] < delta_conv):
        raise NoLimitError("no limit detected for the normalized snapshots", gaps)
    logger.info("h' converged: last gap %.3e over %d snapshots", gaps[-1], len(normalized))
    return LimitEndo(h_inf=normalized[-1], gaps=gaps, mask=mask,
                     times=list(trajectory.snapshot_times))


def sigma_power(h, sigma: float) -> np.ndarray:
    """Spectral power h^σ; small negative eigenvalues are clamped to 0."""
    h = np.asarray(getattr(h, 'h', h))
    if sigma <= 0:
        raise PreconditionError(f"sigma must be positive, got {sigma}")
    lam, vec = np.linalg.eigh(h)
    scale = max(1.0, float(np.max(np.abs(lam))))
    if lam.min() < -1e-9 * scale:
        where = np.unravel_index(np.argmin(lam.min(axis=-1)), lam.shape[:-1])
        raise NumericalError(f"negative eigenvalue {lam.min():.3e}", where)
    lam = np.clip(lam, 0.0, None)
    return (vec * (lam ** sigma)[..., None, :]) @ dagger(vec)


# ============================================================================
# PROJECTION
# ============================================================================

def projection_pi(limit, schedule: Sequence[float] = DEFAULT_SCHEDULE, tau: float = TAU,
                  mask: Optional[np.ndarray] = None) -> ProjectionField:
    """
    π onto the eigenvectors of h∞ with eigenvalue below τ, cross-checked against
    I - h∞^σ along the schedule. The reported σ-limit gap is the best agreement
    over the schedule, sigma_window the σ where it is reached.
    The rank k is the dominant pointwise eigencount; cells with another count
    form the exceptional set.
    """
    if isinstance(limit, LimitEndo):
        h_inf, mask = limit.h_inf, limit.mask if mask is None else mask
    else:
        h_inf = np.asarray(limit)
    mask = _mask_for(h_inf, mask)
    schedule = sorted(schedule, reverse=True)
    if len(schedule) < 2 or schedule[-1] <= 0:
        raise PreconditionError("sigma schedule needs two or more positive values")

    lam, vec = np.linalg.eigh(h_inf)
    small = lam < tau
    counts = small.sum(axis=-1)
    values, freq = np.unique(counts[~mask], return_counts=True)
    histogram = {int(v): int(f) for v, f in zip(values, freq)}
    k = int(values[np.argmax(freq)])
    if freq.max() < 0.5 * freq.sum():
        raise RankPlateauError("no stable rank plateau", histogram)
    exceptional = (counts != k) & ~mask
    if exceptional.any():
        logger.warning("%d exceptional cell(s) where rank differs from %d", int(exceptional.sum()), k)

    pi = (vec * small[..., None, :]) @ dagger(vec)

    # only round-off negatives are clamped; eigenvalues below τ keep their size
    spectrum = np.clip(lam, 0.0, None)
    eye = np.eye(h_inf.shape[-1])

    def pi_sigma(s: float) -> np.ndarray:
        return eye - (vec * (spectrum ** s)[..., None, :]) @ dagger(vec)

    separated = np.all(small | (lam >= 10 * tau), axis=-1) & ~mask
    schedule_gaps = [float(np.max(np.abs(pi_sigma(s) - pi)[separated])) if separated.any() else 0.0
                     for s in schedule]
    best = int(np.argmin(schedule_gaps))
    gap = schedule_gaps[best]
    logger.info("projection rank %d (histogram %s), sigma-limit gap %.3e at sigma=%.3g",
                k, histogram, gap, schedule[best])
    return ProjectionField(pi=pi, k=k, tau=tau, exceptional=exceptional, mask=mask,
                           histogram=histogram, sigma_limit_gap=gap, sigma_window=float(schedule[best]),
                           schedule_gaps=schedule_gaps)


# ============================================================================
# MEMBERSHIP AND SLOPES
# ============================================================================

def _section_field(spec: BundleSpec, s) -> np.ndarray:
    s = np.asarray(s, dtype=complex)
    g = spec.geometry
    if s.shape == (spec.rank,):
        return np.broadcast_to(s, g.shape + (spec.rank,))
    if s.shape != g.shape + (spec.rank,):
        raise StructuralError(f"section shape {s.shape} does not fit a rank-{spec.rank} bundle")
    return s


def multiplier_membership(spec: BundleSpec, s, snapshots: Sequence[np.ndarray],
                          h_inf: np.ndarray, delta_mem: float = DELTA_MEM) -> Dict:
    """
    Two membership tests for the multiplier sheaf: decay of ∫|s|²_{H'_k} along
    the normalized snapshots, and h∞ s = 0.
    """
    if len(snapshots) < 3:
        raise PreconditionError("membership needs at least three snapshots")
    g = spec.geometry
    s = _section_field(spec, s)
    series = []
    for h in snapshots:
        hn = normalize_blowup(h)
        dens = np.real(np.einsum('...a,...ab,...b->...', np.conj(s), hn, s))
        series.append(float(np.real(integrate(g, dens))))
    decreasing = all(b <= a + 1e-12 * max(1.0, a) for a, b in zip(series, series[1:]))
    by_integral = decreasing and series[-1] < delta_mem
    image = np.einsum('...ab,...b->...a', h_inf, s)
    kernel_norm = float(np.sqrt(np.real(integrate(g, np.sum(np.abs(image) ** 2, axis=-1)))))
    by_kernel = kernel_norm < delta_mem
    return {"by_integral": bool(by_integral), "by_kernel": bool(by_kernel),
            "series": series, "kernel_norm": kernel_norm, "agree": by_integral == by_kernel}


def slope_terms(proj: ProjectionField, spec: BundleSpec) -> Dict:
    """
    Curvature and second-fundamental-form parts of the subsheaf degree,
    integrated over the valid (unmasked, non-exceptional) cells.
    """
    g = spec.geometry
    pi = proj.pi
    valid = proj.valid
    curv = np.real(np.trace(i_hatF(spec) @ pi, axis1=-2, axis2=-1))
    sff = 0.0
    for j in range(g.n):
        d = cov_hol(spec, pi, j)
        sff = sff + (2.0 / g.vol_scale) * np.real(np.trace(d @ dagger(d), axis1=-2, axis2=-1))
    mu = slope_bundle(spec)
    shifted = curv - mu * np.real(np.trace(pi, axis1=-2, axis2=-1))
    return {
        "curvature_term": float(np.real(integrate(g, np.where(valid, curv, 0.0)))),
        "second_fundamental_form": float(np.real(integrate(g, np.where(valid, sff, 0.0)))),
        "shifted_curvature_term": float(np.real(integrate(g, np.where(valid, shifted, 0.0)))),
        "excluded_cells": int((~valid).sum()),
    }


def slope_subsheaf(proj: ProjectionField, spec: BundleSpec) -> float:
    """μ(F) = (1/2πk) [∫ Tr(iF̂_0 π) - ∫ |∂_0 π|²_{H_0}]."""
    if proj.k == 0:
        raise UndefinedSlopeError("slope of a rank-zero subsheaf is undefined")
    terms = slope_terms(proj, spec)
    return (terms["curvature_term"] - terms["second_fundamental_form"]) / (2 * np.pi * proj.k)


def destabilize_verdict(trajectory: FlowTrajectory, mask: Optional[np.ndarray] = None,
                        tol_slope: float = TOL_SLOPE, tau: float = TAU,
                        schedule: Sequence[float] = DEFAULT_SCHEDULE,
                        delta_conv: float = DELTA_CONV) -> Dict:
    """limit_endo → projection_pi → slope_subsheaf, with the full evidence report."""
    if trajectory.verdict != Verdict.BLOW_UP:
        raise PreconditionError(f"destabilizer needs a BlowUp run, got {trajectory.verdict}")
    spec = trajectory.spec
    limit = limit_endo(trajectory, mask, delta_conv)
    proj = projection_pi(limit, schedule, tau)
    if not 0 < proj.k < spec.rank:
        raise PreconditionError(f"projection rank {proj.k} is not a proper subsheaf rank in (0, {spec.rank})")
    mu_e = slope_bundle(spec)
    terms = slope_terms(proj, spec)
    mu_f = slope_subsheaf(proj, spec)
    destabilizing = bool(mu_f >= mu_e - tol_slope)
    spectrum = limit.spectrum[~limit.mask]
    hist, edges = np.histogram(np.log10(np.clip(spectrum.ravel(), 1e-300, None)), bins=20)
    report = {
        "k": proj.k,
        "rank": spec.rank,
        "slope_bundle": mu_e,
        "slope_subsheaf": mu_f,
        "terms": terms,
        "shifted_inequality": terms["shifted_curvature_term"] >= terms["second_fundamental_form"] - tol_slope,
        "destabilizing": destabilizing,
        "gaps": limit.gaps,
        "rank_histogram": proj.histogram,
        "exceptional_cells": int(proj.exceptional.sum()),
        "masked_cells": int(limit.mask.sum()),
        "sigma_limit_gap": proj.sigma_limit_gap,
        "sigma_window": proj.sigma_window,
        "log10_spectrum_histogram": {"counts": hist.tolist(), "edges": edges.tolist()},
        "thresholds": {"tau": tau, "delta_conv": delta_conv, "tol_slope": tol_slope},
        "projection": proj,
        "limit": limit,
    }
    logger.info("destabilizer: k=%d mu(F)=%.6g mu(E)=%.6g destabilizing=%s",
                proj.k, mu_f, mu_e, destabilizing)
    return report


# ============================================================================
# INEQUALITY CHECKS
# ============================================================================

def harnack_check(h, spec: BundleSpec, kappa: float = 1.0) -> Dict:
    """
    c = avg Tr h / sup Tr h against the Green's-function bound exp(-C),
    C = Vol·A·κ·sup(|F̂_0| + |F̂_H|) with A = -min G. Also reports the pointwise
    margin of Δ log Tr h ≥ -κ(|F̂_0| + |F̂_H|).
    """
    h = np.asarray(getattr(h, 'h', h))
    g = spec.geometry
    tr = np.real(np.trace(h, axis1=-2, axis2=-1))
    if tr.min() <= 0:
        raise PreconditionError("harnack_check needs a positive metric")
    c = float(np.real(integrate(g, tr)) / g.volume / tr.max())
    curv = operator_norm(i_hatF(spec)) + operator_norm(i_hatF(spec, h))
    K = float(np.max(curv))
    A = -greens_minimum(g, "fd4")
    C = g.volume * A * kappa * K
    bound = float(np.exp(-C))
    margin = laplacian(g, np.log(tr), stencil="fd4") + kappa * curv
    return {"c": c, "bound": bound, "C": C, "A": A, "K": K,
            "holds": c >= bound * (1 - 1e-9),
            "pointwise_margin": float(np.min(margin))}


def _divided_differences(lam: np.ndarray, sigma: float) -> np.ndarray:
    la = lam[..., :, None]
    lb = lam[..., None, :]
    diff = la - lb
    close = np.abs(diff) <= 1e-12 * np.maximum(1.0, np.abs(la))
    safe = np.where(close, 1.0, diff)
    return np.where(close, sigma * la ** (sigma - 1), (la ** sigma - lb ** sigma) / safe)


def uy_inequality_terms(spec: BundleSpec, h, sigma: float):
    """
    Pointwise |h^{-σ/2} ∂_0 h^σ|² and Re⟨h^{-1} ∂_0 h, ∂_0 h^σ⟩, with ∂_0 h^σ
    taken from the exact divided-difference formula in the eigenbasis of h.
    """
    if not 0 < sigma <= 1:
        raise PreconditionError(f"sigma must lie in (0, 1], got {sigma}")
    h = np.asarray(getattr(h, 'h', h))
    g = spec.geometry
    lam, vec = np.linalg.eigh(h)
    if lam.min() <= 0:
        raise PreconditionError("uy_inequality_check needs a positive metric")
    f = _divided_differences(lam, sigma)
    lhs = np.zeros(g.shape)
    rhs = np.zeros(g.shape)
    for j in range(g.n):
        x = dagger(vec) @ cov_hol(spec, h, j) @ vec
        w = np.abs(x) ** 2
        lhs = lhs + np.sum((lam ** -sigma)[..., :, None] * f ** 2 * w, axis=(-2, -1))
        rhs = rhs + np.sum((1.0 / lam)[..., :, None] * f * w, axis=(-2, -1))
    weight = 2.0 / g.vol_scale
    return weight * lhs, weight * rhs


def uy_inequality_check(spec: BundleSpec, h, sigma: float) -> float:
    """max over the grid of LHS - RHS (nonpositive when the inequality holds)."""
    lhs, rhs = uy_inequality_terms(spec, h, sigma)
    return float(np.max(lhs - rhs))


def uy_ratio(spec: BundleSpec, h, sigma: float) -> float:
    """∫LHS / ∫RHS; equals σ for a commuting family."""
    lhs, rhs = uy_inequality_terms(spec, h, sigma)
    g = spec.geometry
    den = float(np.real(integrate(g, rhs)))
    return float(np.real(integrate(g, lhs))) / den if den > 0 else 1.0
