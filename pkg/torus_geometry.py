"""
HeatFlow Lab - Torus Geometry
=============================
Flat Kähler tori used as base manifolds for every field in the lab.

A torus of complex dimension n is the product of n squares of side L_j with
real coordinates (x_1, y_1, ..., x_n, y_n), z_j = x_j + i y_j, carrying the
Kähler form

    ω = s · ½ i Σ dz^j ∧ dz̄^j,      s = (2π / Π L_j²)^{1/n},

so that the total volume is exactly 2π.

Conventions:
- Λ(Σ a_{jk̄} dz^j ∧ dz̄^k) = -(2i/s) Σ a_{jj̄}
- Δ := iΛ∂∂̄ = (1/2s) Σ (∂²/∂x_j² + ∂²/∂y_j²), negative semidefinite
- Grid arrays carry the 2n grid axes first, any matrix/vector axes last.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from errors import PreconditionError, StructuralError

logger = logging.getLogger('TorusGeometry')

FORM_TYPES = ((0, 0), (1, 0), (0, 1), (1, 1))


# ============================================================================
# GEOMETRY
# ============================================================================

@dataclass(frozen=True)
class TorusGeometry:
    """
    Flat torus discretization.

    Args:
        n: complex dimension (1 or 2)
        grid: points per real axis (power of two, at least 16)
        periods: side length per complex factor; defaults make s = 1
    """
    n: int = 1
    grid: int = 32
    periods: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.n not in (1, 2):
            raise StructuralError(f"complex dimension must be 1 or 2, got {self.n}")
        if self.grid < 16 or self.grid & (self.grid - 1):
            raise StructuralError(f"grid must be a power of two >= 16, got {self.grid}")
        periods = tuple(float(p) for p in self.periods) or (self.default_period(self.n),) * self.n
        if len(periods) != self.n or any(p <= 0 for p in periods):
            raise StructuralError(f"need {self.n} positive periods, got {periods}")
        object.__setattr__(self, 'periods', periods)

    @staticmethod
    def default_period(n: int) -> float:
        """Side length giving vol_scale = 1 when all factors are equal."""
        return (2 * np.pi) ** (1.0 / (2 * n))

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.grid,) * self.ndim

    @property
    def grid_axes(self) -> Tuple[int, ...]:
        return tuple(range(self.ndim))

    @property
    def vol_scale(self) -> float:
        return (2 * np.pi / np.prod([L * L for L in self.periods])) ** (1.0 / self.n)

    def spacing(self, axis: int) -> float:
        return self.periods[axis // 2] / self.grid

    @property
    def cell_volume(self) -> float:
        return self.vol_scale ** self.n * np.prod([self.spacing(a) for a in self.grid_axes])

    @property
    def volume(self) -> float:
        return self.cell_volume * self.grid ** self.ndim

    def _broadcast(self, vec: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * self.ndim
        shape[axis] = self.grid
        return vec.reshape(shape)

    def coordinate(self, axis: int) -> np.ndarray:
        """Real coordinate along `axis`, broadcastable over the grid."""
        return self._broadcast(np.arange(self.grid) * self.spacing(axis), axis)

    def wavenumbers(self, axis: int) -> np.ndarray:
        return self._broadcast(2 * np.pi * np.fft.fftfreq(self.grid, d=self.spacing(axis)), axis)

    def fd_wavenumbers(self, axis: int) -> np.ndarray:
        """Effective wavenumber of the 4th-order central difference."""
        k = 2 * np.pi * np.fft.fftfreq(self.grid, d=self.spacing(axis))
        dx = self.spacing(axis)
        return self._broadcast((8 * np.sin(k * dx) - np.sin(2 * k * dx)) / (6 * dx), axis)

    def kahler_form(self) -> 'FormField':
        """ω in coordinate components: a_{jk̄} = s·(i/2)·δ_{jk}."""
        comps = np.zeros((self.n, self.n) + self.shape, dtype=complex)
        for j in range(self.n):
            comps[j, j] = 0.5j * self.vol_scale
        return FormField(self, (1, 1), comps)

    def describe(self) -> dict:
        return {"n": self.n, "grid": self.grid, "periods": list(self.periods),
                "vol_scale": self.vol_scale}


# ============================================================================
# FIELDS
# ============================================================================

@dataclass
class FormField:
    """
    Form-valued field. Index axes come first: none for (0,0), (n,) for
    (1,0)/(0,1), (n, n) for (1,1) with entry [j, k] the coefficient of
    dz^j ∧ dz̄^k. Grid axes follow; any trailing axes are matrix/vector values.
    """
    geometry: TorusGeometry
    form_type: Tuple[int, int]
    components: np.ndarray

    def __post_init__(self):
        if tuple(self.form_type) not in FORM_TYPES:
            raise StructuralError(f"unknown form type {self.form_type}")
        self.form_type = tuple(self.form_type)
        lead = self.index_shape
        grid = self.geometry.shape
        shape = np.shape(self.components)
        if shape[:len(lead)] != lead or shape[len(lead):len(lead) + len(grid)] != grid:
            raise StructuralError(
                f"{self.form_type} field on grid {grid} cannot have components of shape {shape}")

    @property
    def index_shape(self) -> Tuple[int, ...]:
        n = self.geometry.n
        return {(0, 0): (), (1, 0): (n,), (0, 1): (n,), (1, 1): (n, n)}[self.form_type]

    @property
    def value_shape(self) -> Tuple[int, ...]:
        return np.shape(self.components)[len(self.index_shape) + self.geometry.ndim:]


class ScalarField(FormField):
    """(0,0) field; values may be matrix-valued."""

    def __init__(self, geometry: TorusGeometry, values: np.ndarray):
        super().__init__(geometry, (0, 0), np.asarray(values))

    @property
    def values(self) -> np.ndarray:
        return self.components


# ============================================================================
# OPERATIONS
# ============================================================================

def lambda_contract(f: FormField) -> ScalarField:
    """Λ of a (1,1) field, applied pointwise (matrix values allowed)."""
    if f.form_type != (1, 1):
        raise StructuralError(f"Λ acts on (1,1) forms, got {f.form_type}")
    trace = sum(f.components[j, j] for j in range(f.geometry.n))
    return ScalarField(f.geometry, (-2j / f.geometry.vol_scale) * trace)


def integrate(geometry: TorusGeometry, f) -> complex:
    """Riemann sum times the cell volume; trailing value axes are kept."""
    values = f.values if isinstance(f, ScalarField) else np.asarray(f)
    total = np.sum(values, axis=geometry.grid_axes) * geometry.cell_volume
    return total[()] if np.ndim(total) == 0 else total


def _fft(geometry: TorusGeometry, f: np.ndarray) -> np.ndarray:
    return np.fft.fftn(f, axes=geometry.grid_axes)


def _ifft(geometry: TorusGeometry, f: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(f, axes=geometry.grid_axes)


def _pad(geometry: TorusGeometry, sym: np.ndarray, f: np.ndarray) -> np.ndarray:
    extra = np.ndim(f) - geometry.ndim
    return sym.reshape(sym.shape + (1,) * extra)


def spectral_derivative(geometry: TorusGeometry, f: np.ndarray, axis: int) -> np.ndarray:
    """∂/∂(axis) of a periodic field; the Nyquist mode is dropped."""
    k = geometry.wavenumbers(axis).copy()
    nyq = np.abs(np.abs(k) - np.pi / geometry.spacing(axis)) < 1e-9 / geometry.spacing(axis)
    k[nyq] = 0.0
    out = _ifft(geometry, _fft(geometry, f) * _pad(geometry, 1j * k, f))
    return out.real if np.isrealobj(f) else out


def fd_derivative(geometry: TorusGeometry, f: np.ndarray, axis: int) -> np.ndarray:
    """4th-order central difference of a periodic field."""
    dx = geometry.spacing(axis)
    return (-np.roll(f, -2, axis) + 8 * np.roll(f, -1, axis)
            - 8 * np.roll(f, 1, axis) + np.roll(f, 2, axis)) / (12 * dx)


def dz(geometry: TorusGeometry, f: np.ndarray, j: int) -> np.ndarray:
    """∂/∂z_j (j counted from 0), spectral."""
    fx = spectral_derivative(geometry, np.asarray(f, dtype=complex), 2 * j)
    fy = spectral_derivative(geometry, np.asarray(f, dtype=complex), 2 * j + 1)
    return 0.5 * (fx - 1j * fy)


def dzbar(geometry: TorusGeometry, f: np.ndarray, j: int) -> np.ndarray:
    """∂/∂z̄_j (j counted from 0), spectral."""
    fx = spectral_derivative(geometry, np.asarray(f, dtype=complex), 2 * j)
    fy = spectral_derivative(geometry, np.asarray(f, dtype=complex), 2 * j + 1)
    return 0.5 * (fx + 1j * fy)


def dd_bar(geometry: TorusGeometry, phi: np.ndarray) -> FormField:
    """The (1,1) form ∂∂̄φ, entry [j, k] = ∂_j ∂_k̄ φ."""
    n = geometry.n
    comps = np.empty((n, n) + np.shape(phi), dtype=complex)
    for k in range(n):
        phi_k = dzbar(geometry, phi, k)
        for j in range(n):
            comps[j, k] = dz(geometry, phi_k, j)
    return FormField(geometry, (1, 1), comps)


def laplacian_symbol(geometry: TorusGeometry, stencil: str = "spectral") -> np.ndarray:
    """Fourier symbol of Δ, either exact or for the 4th-order stencil."""
    if stencil not in ("spectral", "fd4"):
        raise PreconditionError(f"unknown stencil {stencil!r}")
    wave = geometry.wavenumbers if stencil == "spectral" else geometry.fd_wavenumbers
    total = sum(wave(a) ** 2 for a in geometry.grid_axes)
    return -total / (2 * geometry.vol_scale)


def laplacian(geometry: TorusGeometry, f: np.ndarray, stencil: str = "spectral") -> np.ndarray:
    sym = laplacian_symbol(geometry, stencil)
    out = _ifft(geometry, _fft(geometry, f) * _pad(geometry, sym, f))
    return out.real if np.isrealobj(f) else out


@lru_cache(maxsize=32)
def greens_minimum(geometry: TorusGeometry, stencil: str = "spectral") -> float:
    """
    Minimum over the grid of the zero-mean Green's kernel G of -Δ,
    i.e. -Δ_x G(x, 0) = δ_0 - 1/Vol. The lower bound is -A with A = -min G.
    """
    sym = laplacian_symbol(geometry, stencil)
    mask = np.abs(sym) > 1e-12
    kernel_hat = np.where(mask, -1.0 / np.where(mask, sym, 1.0), 0.0)
    kernel = _ifft(geometry, kernel_hat).real * geometry.grid ** geometry.ndim / geometry.volume
    return float(kernel.min())


def green_solve(geometry: TorusGeometry, f: np.ndarray, stencil: str = "spectral",
                mean_tol: float = 1e-9) -> Tuple[np.ndarray, float]:
    """
    Solve Δu = f for zero-mean f, returning the zero-mean u and the minimum
    of the discrete Green's kernel.
    """
    f = np.asarray(f)
    mean = integrate(geometry, f)
    if np.max(np.abs(mean)) >= mean_tol:
        raise PreconditionError(f"green_solve needs a zero-mean source, integral is {mean}")
    sym = laplacian_symbol(geometry, stencil)
    mask = np.abs(sym) > 1e-12
    inv = np.where(mask, 1.0 / np.where(mask, sym, 1.0), 0.0)
    u = _ifft(geometry, _fft(geometry, f) * _pad(geometry, inv, f))
    if np.isrealobj(f):
        u = u.real
    return u, greens_minimum(geometry, stencil)
