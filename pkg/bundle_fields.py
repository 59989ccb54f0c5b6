"""
HeatFlow Lab - Bundle Fields
============================
Holomorphic bundles on flat tori in a twisted trivialization, Hermitian
metrics, Chern connections, curvature and slopes.

Model:
- E = ⊕_α L_α^{⊕ r_α}; every index in block α carries the flux integer m_α
  on the first complex factor (the block is r_α copies of one line bundle).
- Background unitary connection (Landau gauge): B_{z_1} = -c x_1,
  B_{z̄_1} = c x_1 with c = π m / L_1², constant curvature F_{11̄} = c.
- Sections obey s(x_1 + L_1, ...) = exp(2i c L_1 y_1) s; endomorphism entry
  (a, b) picks up exp(2i (c_a - c_b) L_1 y_1). Everything else is periodic.
- The holomorphic structure is ∂̄_a = ∂̄_B + a with a = Σ a_j dz̄^j.
- H_0 is the identity pairing in this frame and H = H_0 h.

Derivatives of bundle-valued fields are 4th-order central differences with
the wrap-around phases applied, so trace integrals telescope exactly.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from errors import NumericalError, PreconditionError, StructuralError
from torus_geometry import (FormField, ScalarField, TorusGeometry, green_solve,
                            integrate, lambda_contract)

logger = logging.getLogger('BundleFields')

A_PRESETS = ("direct_sum", "extension", "random_smooth")


# ============================================================================
# TWISTED FRAME
# ============================================================================

class Twist:
    """Wrap-around phases of a twisted trivialization along x_1."""

    def __init__(self, geometry: TorusGeometry, flux: np.ndarray):
        self.geometry = geometry
        self.flux = np.asarray(flux, dtype=float)
        L = geometry.periods[0]
        y = geometry.coordinate(1)
        self._section = np.exp(2j * L * self.flux * y[..., None])
        dc = self.flux[:, None] - self.flux[None, :]
        self._endo = np.exp(2j * L * dc * y[..., None, None])
        self.untwisted = bool(np.all(dc == 0))

    def phase_for(self, f: np.ndarray) -> Optional[np.ndarray]:
        extra = np.ndim(f) - self.geometry.ndim
        if extra == 0:
            return None
        if extra == 1:
            return self._section
        if extra == 2:
            return self._endo
        raise StructuralError(f"cannot twist a field with {extra} value axes")

    def shift(self, f: np.ndarray, axis: int, k: int) -> np.ndarray:
        """Field value at grid index i + k along `axis`, phases applied on wrap."""
        g = np.roll(f, -k, axis)
        phase = self.phase_for(f)
        if axis != 0 or phase is None or self.untwisted and np.ndim(f) - self.geometry.ndim == 2:
            return g
        N = self.geometry.grid
        idx = np.arange(N) + k
        shape = (N,) + (1,) * (np.ndim(f) - 1)
        up = (idx >= N).reshape(shape)
        down = (idx < 0).reshape(shape)
        factor = np.where(up, phase, np.where(down, np.conj(phase), 1.0))
        return g * factor

    def derivative(self, f: np.ndarray, axis: int) -> np.ndarray:
        dx = self.geometry.spacing(axis)
        return (-self.shift(f, axis, 2) + 8 * self.shift(f, axis, 1)
                - 8 * self.shift(f, axis, -1) + self.shift(f, axis, -2)) / (12 * dx)

    def d_hol(self, f: np.ndarray, j: int) -> np.ndarray:
        return 0.5 * (self.derivative(f, 2 * j) - 1j * self.derivative(f, 2 * j + 1))

    def d_antihol(self, f: np.ndarray, j: int) -> np.ndarray:
        return 0.5 * (self.derivative(f, 2 * j) + 1j * self.derivative(f, 2 * j + 1))


# ============================================================================
# DOMAIN TYPES
# ============================================================================

@dataclass
class BundleSpec:
    """
    Rank, block structure, flux degrees and the (0,1) perturbation `a`
    (shape (n,) + grid + (r, r), entry [j] the coefficient of dz̄^j).
    """
    geometry: TorusGeometry
    block_ranks: Tuple[int, ...]
    degrees: Tuple[int, ...]
    a: np.ndarray
    conformal: bool = False
    twist: Twist = field(init=False, repr=False)

    def __post_init__(self):
        self.block_ranks = tuple(int(r) for r in self.block_ranks)
        self.degrees = tuple(int(d) for d in self.degrees)
        if not self.block_ranks or any(r <= 0 for r in self.block_ranks):
            raise StructuralError(f"block ranks must be positive, got {self.block_ranks}")
        if len(self.degrees) != len(self.block_ranks):
            raise StructuralError("one degree per block is required")
        r = self.rank
        expected = (self.geometry.n,) + self.geometry.shape + (r, r)
        self.a = np.asarray(self.a, dtype=complex)
        if self.a.shape != expected:
            raise StructuralError(f"a must have shape {expected}, got {self.a.shape}")
        self.twist = Twist(self.geometry, self.flux)

    @property
    def rank(self) -> int:
        return sum(self.block_ranks)

    @property
    def index_degrees(self) -> np.ndarray:
        return np.repeat(np.array(self.degrees, dtype=float), self.block_ranks)

    @property
    def flux(self) -> np.ndarray:
        return np.pi * self.index_degrees / self.geometry.periods[0] ** 2

    @property
    def block_slices(self):
        start = 0
        for r in self.block_ranks:
            yield slice(start, start + r)
            start += r

    def line_slope(self, m: float) -> float:
        """Constant i·Λ F of a flux-m line; equals m when n = 1."""
        g = self.geometry
        return 2 * np.pi * m / (g.vol_scale * g.periods[0] ** 2)

    @property
    def expected_slope(self) -> float:
        return float(np.mean([self.line_slope(m) for m in self.index_degrees]))

    @property
    def degree(self) -> float:
        return self.expected_slope * self.rank

    def describe(self) -> dict:
        return {"rank": self.rank, "block_ranks": list(self.block_ranks),
                "degrees": list(self.degrees), "conformal": self.conformal}


@dataclass
class MetricField:
    """h with H = H_0 h; Hermitian positive-definite at every grid point."""
    h: np.ndarray

    def check(self, det_normalized: bool = False, tol: float = 1e-12) -> None:
        herm = np.max(np.abs(self.h - np.conj(np.swapaxes(self.h, -1, -2))))
        if herm > tol * max(1.0, np.max(np.abs(self.h))):
            raise NumericalError(f"metric is not Hermitian (defect {herm:.2e})")
        eig = np.linalg.eigvalsh(self.h)
        if eig.min() <= 0:
            where = np.unravel_index(np.argmin(eig.min(axis=-1)), eig.shape[:-1])
            raise NumericalError("metric lost positivity", where)
        if det_normalized:
            det_defect = np.max(np.abs(np.prod(eig, axis=-1) - 1.0))
            if det_defect > 1e-10:
                raise NumericalError(f"det h deviates from 1 by {det_defect:.2e}")

    @classmethod
    def identity(cls, spec: BundleSpec) -> 'MetricField':
        return cls(np.broadcast_to(np.eye(spec.rank, dtype=complex),
                                   spec.geometry.shape + (spec.rank, spec.rank)).copy())


def _as_array(h) -> Optional[np.ndarray]:
    if h is None:
        return None
    return h.h if isinstance(h, MetricField) else np.asarray(h)


def dagger(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def safe_inverse(h: np.ndarray) -> np.ndarray:
    try:
        inv = np.linalg.inv(h)
    except np.linalg.LinAlgError:
        inv = None
    if inv is None or not np.all(np.isfinite(inv)):
        dets = np.abs(np.linalg.det(h))
        raise NumericalError("singular metric", np.unravel_index(np.argmin(dets), dets.shape))
    return inv


# ============================================================================
# CONNECTIONS
# ============================================================================

def _x1(spec: BundleSpec, extra: int) -> np.ndarray:
    x = spec.geometry.coordinate(0)
    return x.reshape(x.shape + (1,) * extra)


def _background_term(spec: BundleSpec, f: np.ndarray, j: int, antihol: bool) -> np.ndarray:
    """B-connection action on a section (r,) or endomorphism (r, r)."""
    if j != 0:
        return np.zeros_like(f, dtype=complex)
    extra = np.ndim(f) - spec.geometry.ndim
    sign = 1.0 if antihol else -1.0
    c = spec.flux
    coeff = c if extra == 1 else c[:, None] - c[None, :]
    return sign * _x1(spec, extra) * coeff * f


def _a_term(spec: BundleSpec, f: np.ndarray, j: int, antihol: bool) -> np.ndarray:
    a = spec.a[j] if antihol else -dagger(spec.a[j])
    if np.ndim(f) - spec.geometry.ndim == 1:
        return np.einsum('...ab,...b->...a', a, f)
    return a @ f - f @ a


def cov_hol(spec: BundleSpec, f: np.ndarray, j: int, background_only: bool = False) -> np.ndarray:
    """(1,0) covariant derivative D_j of the H_0-unitary connection."""
    out = spec.twist.d_hol(f, j) + _background_term(spec, f, j, antihol=False)
    return out if background_only else out + _a_term(spec, f, j, antihol=False)


def cov_antihol(spec: BundleSpec, f: np.ndarray, j: int, background_only: bool = False) -> np.ndarray:
    """(0,1) covariant derivative D_j̄ = ∂̄_a."""
    out = spec.twist.d_antihol(f, j) + _background_term(spec, f, j, antihol=True)
    return out if background_only else out + _a_term(spec, f, j, antihol=True)


def dbar_a(spec: BundleSpec, s: np.ndarray) -> FormField:
    """∂̄_a of a section or endomorphism field, as a (0,1) form."""
    _check_value_shape(spec, s)
    comps = np.stack([cov_antihol(spec, s, j) for j in range(spec.geometry.n)])
    return FormField(spec.geometry, (0, 1), comps)


def d0_H(spec: BundleSpec, s: np.ndarray, h=None) -> FormField:
    """(1,0) part of the Chern connection of H = H_0 h (H_0 alone when h is None)."""
    _check_value_shape(spec, s)
    h = _as_array(h)
    hinv = None if h is None else safe_inverse(h)
    comps = []
    for j in range(spec.geometry.n):
        d = cov_hol(spec, s, j)
        if h is not None:
            theta = hinv @ cov_hol(spec, h, j)
            if np.ndim(s) - spec.geometry.ndim == 1:
                d = d + np.einsum('...ab,...b->...a', theta, s)
            else:
                d = d + theta @ s - s @ theta
        comps.append(d)
    return FormField(spec.geometry, (1, 0), np.stack(comps))


def _check_value_shape(spec: BundleSpec, s: np.ndarray) -> None:
    shape = np.shape(s)
    g = spec.geometry
    r = spec.rank
    if shape[:g.ndim] != g.shape or shape[g.ndim:] not in ((r,), (r, r)):
        raise StructuralError(f"field of shape {shape} is not a section/endomorphism of a rank-{r} bundle")


# ============================================================================
# CURVATURE
# ============================================================================

def curvature(spec: BundleSpec, h=None, diagonal_only: bool = False) -> FormField:
    """
    F_H = F_{H_0} + ∂̄_a(h^{-1} ∂_0 h) as a (1,1) form of endomorphisms:

        F_{jk̄} = F^B_{jk̄} + D^B_j a_k + D^B_k̄ a_j^† - [a_j^†, a_k] - D_k̄(h^{-1} D_j h)
    """
    g = spec.geometry
    r = spec.rank
    h = _as_array(h)
    comps = np.zeros((g.n, g.n) + g.shape + (r, r), dtype=complex)
    theta = None
    if h is not None:
        hinv = safe_inverse(h)
        theta = [hinv @ cov_hol(spec, h, j) for j in range(g.n)]
    for j in range(g.n):
        adj_j = dagger(spec.a[j])
        for k in range(g.n):
            if diagonal_only and j != k:
                continue
            F = (cov_hol(spec, spec.a[k], j, background_only=True)
                 + cov_antihol(spec, adj_j, k, background_only=True)
                 - (adj_j @ spec.a[k] - spec.a[k] @ adj_j))
            if j == 0 and k == 0:
                F = F + np.diag(spec.flux)
            if theta is not None:
                F = F - cov_antihol(spec, theta[j], k)
            comps[j, k] = F
    return FormField(g, (1, 1), comps)


def i_hatF(spec: BundleSpec, h=None) -> np.ndarray:
    """
    iF̂_H projected onto its H-self-adjoint part ½(m + h^{-1} m^† h). The
    discrete curvature is self-adjoint only up to stencil error; the
    projection keeps Re Tr(iF̂ X) for every Hermitian X.
    """
    m = 1j * lambda_contract(curvature(spec, h, diagonal_only=True)).values
    h = _as_array(h)
    if h is None:
        return 0.5 * (m + dagger(m))
    proj = 0.5 * (m + safe_inverse(h) @ dagger(m) @ h)
    # h^{-1}(·)h costs cond(h)·eps of the trace near blow-up; put Re Tr m back
    shift = np.real(np.trace(proj - m, axis1=-2, axis2=-1)) / spec.rank
    return proj - shift[..., None, None] * np.eye(spec.rank)


def hatF(spec: BundleSpec, h=None) -> np.ndarray:
    """F̂ = ΛF_H as an endomorphism field."""
    return -1j * i_hatF(spec, h)


def self_adjoint_defect(m: np.ndarray, h=None) -> float:
    """sup |m - h^{-1} m^† h|."""
    h = _as_array(h)
    adj = dagger(m) if h is None else safe_inverse(h) @ dagger(m) @ h
    return float(np.max(np.abs(m - adj)))


def trace_integral(spec: BundleSpec, h=None) -> float:
    """integrate(Tr iF̂_H); equals 2π deg E for every h."""
    return float(np.real(integrate(spec.geometry, np.trace(i_hatF(spec, h), axis1=-2, axis2=-1))))


def slope_bundle(spec: BundleSpec) -> float:
    """μ(E) = (i/2π) ∫ Tr F̂_0 / r, computed as i·λ."""
    return float(np.real(1j * lambda_of(spec)))


def lambda_of(spec: BundleSpec) -> complex:
    """λ: average of Tr F̂_0 / r over a volume-2π torus."""
    tr = np.trace(hatF(spec), axis1=-2, axis2=-1)
    return complex(integrate(spec.geometry, tr) / (spec.geometry.volume * spec.rank))


# ============================================================================
# PAIRINGS AND NORMS
# ============================================================================

def _inner(psi: np.ndarray, h: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return np.einsum('...a,...ab,...b->...', np.conj(psi), h, phi)


def pairing(phi: FormField, psi: FormField, h=None) -> FormField:
    """⟨φ, ψ⟩_H = Σ H_{αβ̄} φ^α ∧ conj(ψ^β) for vector-valued forms."""
    g = phi.geometry
    r = phi.value_shape[-1] if phi.value_shape else 0
    if phi.value_shape != (r,) or psi.value_shape != (r,):
        raise StructuralError("pairing needs vector-valued forms of equal rank")
    h = _as_array(h)
    if h is None:
        h = np.broadcast_to(np.eye(r, dtype=complex), g.shape + (r, r))
    n = g.n
    p, q = phi.form_type, psi.form_type
    P, Q = phi.components, psi.components
    if p == (0, 0) and q == (0, 0):
        return ScalarField(g, _inner(Q, h, P))
    if p == (1, 0) and q == (1, 0):
        comps = np.stack([np.stack([_inner(Q[k], h, P[j]) for k in range(n)]) for j in range(n)])
        return FormField(g, (1, 1), comps)
    if p == (0, 1) and q == (0, 1):
        comps = np.stack([np.stack([-_inner(Q[k], h, P[j]) for j in range(n)]) for k in range(n)])
        return FormField(g, (1, 1), comps)
    if p in ((1, 0), (0, 1)) and q == (0, 0):
        return FormField(g, p, np.stack([_inner(Q, h, P[j]) for j in range(n)]))
    if p == (0, 0) and q in ((1, 0), (0, 1)):
        flipped = (q[1], q[0])
        return FormField(g, flipped, np.stack([_inner(Q[k], h, P) for k in range(n)]))
    raise StructuralError(f"cannot pair form degrees {p} and {q}")


def pointwise_norm_sq(phi: FormField, h=None) -> np.ndarray:
    """|φ|²_H at each grid point (vector or endomorphism values)."""
    g = phi.geometry
    s = g.vol_scale
    h = _as_array(h)
    vals = phi.components
    if phi.value_shape and len(phi.value_shape) == 2:
        if h is None:
            dens = np.sum(np.abs(vals) ** 2, axis=(-2, -1))
        else:
            hinv = safe_inverse(h)
            dens = np.real(np.trace(vals @ hinv @ dagger(vals) @ h, axis1=-2, axis2=-1))
    else:
        if h is None:
            dens = np.sum(np.abs(vals) ** 2, axis=-1)
        else:
            dens = np.real(_inner(vals, h, vals))
    k = len(phi.index_shape)
    weight = (2.0 / s) ** k
    return weight * np.sum(dens, axis=tuple(range(k))) if k else dens


def l2_norm(phi: FormField, h=None) -> float:
    return float(np.sqrt(max(0.0, np.real(integrate(phi.geometry, pointwise_norm_sq(phi, h))))))


def operator_norm(m: np.ndarray) -> np.ndarray:
    """Largest |eigenvalue| pointwise; the H-norm of an H-self-adjoint field."""
    return np.max(np.abs(np.linalg.eigvals(m)), axis=-1)


def sup_norm(h) -> float:
    """sup_X |h|_{H_0} with |h| the largest eigenvalue of the Hermitian h."""
    return float(np.max(np.linalg.eigvalsh(_as_array(h))))


# ============================================================================
# IDENTITIES
# ============================================================================

def energy_identity_defect(spec: BundleSpec, h) -> Tuple[float, float, float]:
    """
    Integration by parts behind the curvature bound:
        ∫ |h^{-1/2} ∂_0 h|²_{H_0}  vs  ∫ ⟨iF̂_H - iF̂_{H_0}, h⟩_{H_0}.
    Returns (lhs, rhs, |lhs - rhs|).
    """
    h = _as_array(h)
    g = spec.geometry
    hinv = safe_inverse(h)
    dens = 0.0
    for j in range(g.n):
        dh = cov_hol(spec, h, j)
        dens = dens + np.real(np.trace(hinv @ dh @ dagger(dh), axis1=-2, axis2=-1))
    lhs = float(np.real(integrate(g, (2.0 / g.vol_scale) * dens)))
    diff = i_hatF(spec, h) - i_hatF(spec)
    rhs = float(np.real(integrate(g, np.trace(diff @ h, axis1=-2, axis2=-1))))
    return lhs, rhs, abs(lhs - rhs)


def integrability_residual(spec: BundleSpec) -> float:
    """sup of ∂̄_B a + a ∧ a for n = 2; zero by definition when n = 1."""
    if spec.geometry.n == 1:
        return 0.0
    a1, a2 = spec.a[0], spec.a[1]
    res = (cov_antihol(spec, a2, 0, background_only=True)
           - cov_antihol(spec, a1, 1, background_only=True)
           + a1 @ a2 - a2 @ a1)
    return float(np.max(np.abs(res)))


def conformal_normalize(spec: BundleSpec) -> BundleSpec:
    """
    Complex scalar gauge a ↦ a + (∂̄ψ)·I making Tr iF̂_{H_0} ≡ r·μ, so that
    det h = 1 is preserved by the flow. Solved against the same stencil the
    curvature uses.
    """
    g = spec.geometry
    r = spec.rank
    tr = np.real(np.trace(i_hatF(spec), axis1=-2, axis2=-1))
    source = (r * slope_bundle(spec) - tr) / (2 * r)
    source = source - np.real(integrate(g, source)) / g.volume
    psi, _ = green_solve(g, source, stencil="fd4")
    eye = np.eye(r)
    a = spec.a.copy()
    for j in range(g.n):
        a[j] = a[j] + spec.twist.d_antihol(psi.astype(complex), j)[..., None, None] * eye
    logger.debug("conformal normalization: max |Tr iF̂_0 - rμ| before %.3e", np.max(np.abs(tr - r * slope_bundle(spec))))
    return replace(spec, a=a, conformal=True)


# ============================================================================
# FIELD GENERATORS
# ============================================================================

def random_twisted_field(geometry: TorusGeometry, flux_difference: int,
                         rng: np.random.Generator, modes: int = 3) -> np.ndarray:
    """
    Smooth scalar field with the wrap-around phase of a flux-difference M
    endomorphism entry. For M ≠ 0 it is a magnetic-translation sum
        Σ_n g(x_1 - n L, y_1) exp(2π i M n y_1 / L)
    of Gaussians in x_1 modulated periodically in y_1. Independent of the
    second complex factor.
    """
    L = geometry.periods[0]
    x = geometry.coordinate(0)
    y = geometry.coordinate(1)
    out = np.zeros(geometry.shape, dtype=complex)
    if flux_difference == 0:
        for _ in range(modes):
            kx, ky = rng.integers(-2, 3, size=2)
            amp = (rng.normal() + 1j * rng.normal()) / np.sqrt(2 * modes)
            out = out + amp * np.exp(2j * np.pi * (kx * x + ky * y) / L)
        return out
    width = L / 4
    for _ in range(modes):
        x0 = rng.uniform(0, L)
        ky = rng.integers(-1, 2)
        amp = (rng.normal() + 1j * rng.normal()) / np.sqrt(2 * modes)
        for n_img in range(-4, 5):
            bump = np.exp(-((x - x0 - n_img * L) ** 2) / (2 * width ** 2))
            out = out + amp * bump * np.exp(2j * np.pi * (ky + flux_difference * n_img) * y / L)
    return out


def preset_a(geometry: TorusGeometry, block_ranks: Sequence[int], degrees: Sequence[int],
             preset: str, seed: int = 0, amplitude: float = 0.0) -> np.ndarray:
    """Named (0,1) perturbations: direct_sum, extension (upper block), random_smooth."""
    if preset not in A_PRESETS:
        raise PreconditionError(f"unknown a-preset {preset!r}; choose from {A_PRESETS}")
    r = sum(block_ranks)
    a = np.zeros((geometry.n,) + geometry.shape + (r, r), dtype=complex)
    if preset == "direct_sum" or amplitude == 0.0:
        return a
    rng = np.random.default_rng(seed)
    deg = np.repeat(np.asarray(degrees), block_ranks)
    if preset == "extension":
        if len(block_ranks) < 2:
            raise PreconditionError("extension preset needs at least two blocks")
        rows = range(block_ranks[0])
        cols = range(block_ranks[0], block_ranks[0] + block_ranks[1])
        entries = [(i, k) for i in rows for k in cols]
    else:
        entries = [(i, k) for i in range(r) for k in range(r)]
    for i, k in entries:
        a[0, ..., i, k] = amplitude * random_twisted_field(geometry, int(deg[i] - deg[k]), rng)
    return a


def build_bundle(geometry: TorusGeometry, block_ranks: Sequence[int], degrees: Sequence[int],
                 preset: str = "direct_sum", seed: int = 0, amplitude: float = 0.0,
                 conformal: bool = True) -> BundleSpec:
    spec = BundleSpec(geometry, tuple(block_ranks), tuple(degrees),
                      preset_a(geometry, block_ranks, degrees, preset, seed, amplitude))
    if geometry.n == 2:
        res = integrability_residual(spec)
        if res > 1e-9:
            logger.warning("a is not integrable (residual %.3e)", res)
    return conformal_normalize(spec) if conformal else spec


def hermitian_function(h: np.ndarray, fn) -> np.ndarray:
    """Apply a scalar function to the spectrum of a Hermitian field."""
    lam, vec = np.linalg.eigh(h)
    return (vec * fn(lam)[..., None, :]) @ dagger(vec)


def random_metric(spec: BundleSpec, seed: int = 0, amplitude: float = 0.3) -> MetricField:
    """h = exp(X) for a smooth twisted Hermitian X; positive by construction."""
    rng = np.random.default_rng(seed)
    r = spec.rank
    g = spec.geometry
    deg = spec.index_degrees
    y = np.zeros(g.shape + (r, r), dtype=complex)
    for i in range(r):
        for k in range(r):
            y[..., i, k] = random_twisted_field(g, int(deg[i] - deg[k]), rng)
    x = amplitude * 0.5 * (y + dagger(y))
    return MetricField(hermitian_function(x, np.exp))
