"""
HeatFlow Lab - Frobenius Series
===============================
Truncated multivariate power series in (z_1, z̄_1, ..., z_n, z̄_n) with
matrix coefficients, and the gauge construction that turns generators f with
∂̄_k f = A_k f into holomorphic generators g = B f.

Coefficients are exact Gaussian rationals (sympy QQ_I) by default; a float
mode uses complex128 with 1e-12 gates.

Monomials are exponent tuples (a_1, b_1, ..., a_n, b_n) of z_j^{a_j} z̄_j^{b_j}.
Variable indices j are counted from 0.
"""

import logging
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sympy import QQ, QQ_I
from sympy.polys.matrices import DomainMatrix
from sympy.polys.matrices.exceptions import DMNonInvertibleMatrixError

from errors import FrobeniusStageError, NumericalError, PreconditionError, StructuralError

logger = logging.getLogger('FrobeniusSeries')

FLOAT_TOL = 1e-12
FAMILIES = ("exp_scalar", "gauged_rank2", "exp_two_variable")


# ============================================================================
# COEFFICIENT RINGS
# ============================================================================

class CoefficientRing:
    """Matrix coefficients over QQ_I (exact) or complex128 (float)."""

    def __init__(self, exact: bool = True):
        self.exact = exact

    @property
    def mode(self) -> str:
        return "exact" if self.exact else "float"

    def convert(self, value):
        if not self.exact:
            if isinstance(value, (list, tuple)):
                return complex(float(Fraction(value[0])), float(Fraction(value[1])))
            return complex(value)
        if isinstance(value, (list, tuple)):
            re, im = (Fraction(v) for v in value)
            return QQ_I(QQ(re.numerator, re.denominator), QQ(im.numerator, im.denominator))
        if isinstance(value, complex):
            re, im = Fraction(value.real), Fraction(value.imag)
            return QQ_I(QQ(re.numerator, re.denominator), QQ(im.numerator, im.denominator))
        if hasattr(value, 'x') and hasattr(value, 'y'):
            return value
        q = Fraction(value)
        return QQ_I(QQ(q.numerator, q.denominator))

    def zeros(self, shape: Tuple[int, int]) -> np.ndarray:
        if self.exact:
            return np.full(shape, QQ_I.zero, dtype=object)
        return np.zeros(shape, dtype=complex)

    def identity(self, q: int) -> np.ndarray:
        out = self.zeros((q, q))
        for i in range(q):
            out[i, i] = self.convert(1)
        return out

    def matrix(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=object if self.exact else complex)
        out = self.zeros(rows.shape)
        for idx in np.ndindex(rows.shape):
            out[idx] = self.convert(rows[idx])
        return out

    def scalar(self, value):
        return self.convert(value)

    def is_zero(self, m: np.ndarray, tol: float = FLOAT_TOL) -> bool:
        if self.exact:
            return not any(bool(x) for x in m.flat)
        return bool(np.max(np.abs(m), initial=0.0) <= tol)

    def to_complex(self, m: np.ndarray) -> np.ndarray:
        if not self.exact:
            return np.asarray(m, dtype=complex)
        out = np.empty(m.shape, dtype=complex)
        for idx in np.ndindex(m.shape):
            x = m[idx]
            out[idx] = complex(float(x.x), float(x.y))
        return out

    def inverse(self, m: np.ndarray) -> np.ndarray:
        if not self.exact:
            if abs(np.linalg.det(m)) < FLOAT_TOL:
                raise PreconditionError("constant term is not invertible")
            return np.linalg.inv(m)
        q = m.shape[0]
        dm = DomainMatrix([[m[i, k] for k in range(q)] for i in range(q)], (q, q), QQ_I)
        try:
            inv = dm.inv().to_Matrix()
        except DMNonInvertibleMatrixError:
            raise PreconditionError("constant term is not invertible") from None
        return self.matrix([[QQ_I.from_sympy(inv[i, k]) for k in range(q)] for i in range(q)])

    def conjugate_transpose(self, m: np.ndarray) -> np.ndarray:
        if not self.exact:
            return np.conj(m.T)
        out = self.zeros((m.shape[1], m.shape[0]))
        for i, k in np.ndindex(m.shape):
            x = m[i, k]
            out[k, i] = QQ_I(x.x, -x.y)
        return out

    def encode(self, x):
        if self.exact:
            return [_qq_str(x.x), _qq_str(x.y)]
        return [float(np.real(x)), float(np.imag(x))]


def _qq_str(q) -> str:
    return f"{int(q.numerator)}/{int(q.denominator)}"


EXACT = CoefficientRing(exact=True)
FLOAT = CoefficientRing(exact=False)


# ============================================================================
# TRUNCATED SERIES
# ============================================================================

class TruncSeries:
    """
    Matrix-valued polynomial truncated at total degree `degree`; zero
    coefficients are never stored.
    """

    def __init__(self, ring: CoefficientRing, n: int, shape: Tuple[int, int], degree: int,
                 coeffs: Optional[Dict[Tuple[int, ...], np.ndarray]] = None):
        if n < 1:
            raise StructuralError("a series needs at least one complex variable")
        if degree < 0:
            raise StructuralError(f"truncation degree must be nonnegative, got {degree}")
        self.ring = ring
        self.n = n
        self.shape = tuple(shape)
        self.degree = degree
        self.coeffs: Dict[Tuple[int, ...], np.ndarray] = {}
        for mono, c in (coeffs or {}).items():
            mono = tuple(mono)
            if len(mono) != 2 * n:
                raise StructuralError(f"multidegree {mono} does not have {2 * n} entries")
            if sum(mono) > degree:
                continue
            if np.shape(c) != self.shape:
                raise StructuralError(f"coefficient of shape {np.shape(c)} in a {self.shape} series")
            if not ring.is_zero(c, tol=0.0):
                self.coeffs[mono] = c

    # ------------------------------------------------------------------ builders

    @classmethod
    def zero(cls, ring, n, shape, degree) -> 'TruncSeries':
        return cls(ring, n, shape, degree)

    @classmethod
    def constant(cls, ring, n, matrix: np.ndarray, degree: int) -> 'TruncSeries':
        return cls(ring, n, matrix.shape, degree, {(0,) * (2 * n): matrix})

    @classmethod
    def identity(cls, ring, n, q, degree) -> 'TruncSeries':
        return cls.constant(ring, n, ring.identity(q), degree)

    @classmethod
    def variable(cls, ring, n, j: int, conjugate: bool, degree: int, q: int = 1) -> 'TruncSeries':
        mono = [0] * (2 * n)
        mono[2 * j + (1 if conjugate else 0)] = 1
        return cls(ring, n, (q, q), degree, {tuple(mono): ring.identity(q)})

    def _like(self, coeffs, shape=None, degree=None) -> 'TruncSeries':
        return TruncSeries(self.ring, self.n, shape or self.shape,
                           self.degree if degree is None else degree, coeffs)

    # ------------------------------------------------------------------ arithmetic

    def _check(self, other: 'TruncSeries') -> None:
        if other.n != self.n or other.ring.exact != self.ring.exact:
            raise StructuralError("series over different variables or coefficient rings")

    def __add__(self, other: 'TruncSeries') -> 'TruncSeries':
        self._check(other)
        if other.shape != self.shape:
            raise StructuralError(f"cannot add {self.shape} and {other.shape} series")
        out = dict(self.coeffs)
        for mono, c in other.coeffs.items():
            out[mono] = out[mono] + c if mono in out else c
        return self._like(out, degree=min(self.degree, other.degree))

    def __neg__(self) -> 'TruncSeries':
        return self._like({m: -c for m, c in self.coeffs.items()})

    def __sub__(self, other: 'TruncSeries') -> 'TruncSeries':
        return self + (-other)

    def scale(self, value) -> 'TruncSeries':
        x = self.ring.scalar(value)
        return self._like({m: c * x for m, c in self.coeffs.items()})

    def __matmul__(self, other: 'TruncSeries') -> 'TruncSeries':
        self._check(other)
        if self.shape[1] != other.shape[0]:
            raise StructuralError(f"cannot multiply {self.shape} by {other.shape} series")
        degree = min(self.degree, other.degree)
        shape = (self.shape[0], other.shape[1])
        by_degree: Dict[int, List] = {}
        for mono, c in other.coeffs.items():
            by_degree.setdefault(sum(mono), []).append((mono, c))
        out: Dict[Tuple[int, ...], np.ndarray] = {}
        for m1, c1 in self.coeffs.items():
            d1 = sum(m1)
            for d2, items in by_degree.items():
                if d1 + d2 > degree:
                    continue
                for m2, c2 in items:
                    mono = tuple(a + b for a, b in zip(m1, m2))
                    term = c1 @ c2
                    out[mono] = out[mono] + term if mono in out else term
        return self._like(out, shape=shape, degree=degree)

    def truncate(self, degree: int) -> 'TruncSeries':
        return self._like(self.coeffs, degree=min(degree, self.degree))

    # ------------------------------------------------------------------ queries

    @property
    def const(self) -> np.ndarray:
        return self.coeffs.get((0,) * (2 * self.n), self.ring.zeros(self.shape))

    def coefficient(self, mono: Sequence[int]) -> np.ndarray:
        return self.coeffs.get(tuple(mono), self.ring.zeros(self.shape))

    def is_zero(self, tol: float = FLOAT_TOL) -> bool:
        return all(self.ring.is_zero(c, tol) for c in self.coeffs.values())

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(self.ring.to_complex(c)))) for c in self.coeffs.values()),
                   default=0.0)

    def is_holomorphic_in(self, p: int, tol: float = FLOAT_TOL) -> bool:
        """No stored coefficient with positive z̄_j degree for j < p."""
        return all(self.ring.is_zero(c, tol) for m, c in self.coeffs.items()
                   if any(m[2 * j + 1] > 0 for j in range(p)))

    def equals(self, other: 'TruncSeries', degree: Optional[int] = None, tol: float = FLOAT_TOL) -> bool:
        diff = self - other
        if degree is not None:
            diff = diff.truncate(degree)
        return diff.is_zero(tol)

    # ------------------------------------------------------------------ calculus

    def dbar(self, j: int) -> 'TruncSeries':
        """Formal ∂/∂z̄_j; truncation degree drops by one."""
        return self._derivative(2 * j + 1)

    def _derivative(self, slot: int) -> 'TruncSeries':
        out = {}
        for mono, c in self.coeffs.items():
            k = mono[slot]
            if k == 0:
                continue
            new = list(mono)
            new[slot] -= 1
            out[tuple(new)] = c * self.ring.scalar(k)
        return self._like(out, degree=max(self.degree - 1, 0))

    def zbar_antiderivative(self, j: int, cap: Optional[int] = None) -> 'TruncSeries':
        """
        Monomial right inverse of ∂̄_j: z̄_j^k ↦ z̄_j^{k+1}/(k+1). The degree
        rises by one unless `cap` forbids it, in which case top terms are dropped.
        """
        slot = 2 * j + 1
        degree = self.degree + 1 if cap is None else min(self.degree + 1, cap)
        out = {}
        dropped = 0
        for mono, c in self.coeffs.items():
            new = list(mono)
            new[slot] += 1
            if sum(new) > degree:
                dropped += 1
                continue
            out[tuple(new)] = c * self.ring.scalar(Fraction(1, mono[slot] + 1))
        if dropped:
            logger.warning("antiderivative in zbar_%d dropped %d term(s) above degree %d", j + 1, dropped, degree)
        return self._like(out, degree=degree)

    def dilate(self, r, j: int) -> 'TruncSeries':
        """Substitution z_j → r z_j, z̄_j → r z̄_j."""
        r = Fraction(r) if self.ring.exact else float(r)
        if not 0 < r <= 1:
            raise PreconditionError(f"dilation factor must lie in (0, 1], got {r}")
        out = {}
        for mono, c in self.coeffs.items():
            out[mono] = c * self.ring.scalar(r ** (mono[2 * j] + mono[2 * j + 1]))
        return self._like(out)

    def restrict_antihol(self, p: int) -> 'TruncSeries':
        """Set z̄_1 = … = z̄_p = 0."""
        if not 0 <= p <= self.n:
            raise PreconditionError(f"restriction index must lie in [0, {self.n}], got {p}")
        return self._like({m: c for m, c in self.coeffs.items()
                           if all(m[2 * j + 1] == 0 for j in range(p))})

    def conjugate(self) -> 'TruncSeries':
        """Real-analytic conjugate transpose: swaps z_j with z̄_j."""
        out = {}
        for mono, c in self.coeffs.items():
            swapped = []
            for j in range(self.n):
                swapped += [mono[2 * j + 1], mono[2 * j]]
            out[tuple(swapped)] = self.ring.conjugate_transpose(c)
        return self._like(out, shape=(self.shape[1], self.shape[0]))

    def inverse(self) -> 'TruncSeries':
        """Series inverse of a square series with invertible constant term."""
        if self.shape[0] != self.shape[1]:
            raise StructuralError("only square series can be inverted")
        c0 = self.const
        c0_inv = self.ring.inverse(c0)
        zero = (0,) * (2 * self.n)
        rest = self._like({m: c for m, c in self.coeffs.items() if m != zero})
        c0_inv_s = TruncSeries.constant(self.ring, self.n, c0_inv, self.degree)
        step = -(c0_inv_s @ rest)
        total = TruncSeries.identity(self.ring, self.n, self.shape[0], self.degree)
        term = total
        for _ in range(self.degree):
            term = term @ step
            if term.is_zero(tol=0.0):
                break
            total = total + term
        return total @ c0_inv_s

    def exp(self) -> 'TruncSeries':
        """Truncated exponential of a square series with zero constant term."""
        if not self.ring.is_zero(self.const, tol=0.0):
            raise PreconditionError("exp needs a series without constant term")
        q = self.shape[0]
        total = TruncSeries.identity(self.ring, self.n, q, self.degree)
        term = total
        for k in range(1, self.degree + 1):
            term = (term @ self).scale(Fraction(1, k))
            if term.is_zero(tol=0.0):
                break
            total = total + term
        return total

    def __repr__(self) -> str:
        return f"TruncSeries(n={self.n}, shape={self.shape}, degree={self.degree}, terms={len(self.coeffs)})"


# ============================================================================
# GAUGE CONSTRUCTION
# ============================================================================

def dbar_j(s: TruncSeries, j: int) -> TruncSeries:
    if not 0 <= j < s.n:
        raise PreconditionError(f"variable index {j} out of range for n={s.n}")
    return s.dbar(j)


def zbar_antiderivative_j(s: TruncSeries, j: int, cap: Optional[int] = None) -> TruncSeries:
    if not 0 <= j < s.n:
        raise PreconditionError(f"variable index {j} out of range for n={s.n}")
    return s.zbar_antiderivative(j, cap)


def dilate(s: TruncSeries, r, j: int) -> TruncSeries:
    return s.dilate(r, j)


def restrict_antihol(s: TruncSeries, p: int) -> TruncSeries:
    return s.restrict_antihol(p)


def relation_residual(f: TruncSeries, A: TruncSeries, j: int) -> TruncSeries:
    """∂̄_j f - A f, modulo degree D-1."""
    d = f.dbar(j)
    return d - (A @ f).truncate(d.degree)


def gauge_residual(B: TruncSeries, A: TruncSeries, j: int) -> TruncSeries:
    """∂̄_j B + B A, modulo degree D-1."""
    d = B.dbar(j)
    return d + (B @ A).truncate(d.degree)


def solve_gauge_step(A: TruncSeries, j: int, p: int) -> Tuple[TruncSeries, TruncSeries]:
    """
    Graded fixed point of F = -P_j((I + F) A). P_j raises the z̄_j degree, so
    the iteration is exact after at most D + 2 rounds. Returns (B, F) with
    B = I + F and F(0) = 0.
    """
    if A.shape[0] != A.shape[1]:
        raise StructuralError(f"relation matrix must be square, got {A.shape}")
    if not A.is_holomorphic_in(p):
        raise PreconditionError(f"A is not holomorphic in z_1..z_{p}")
    cap = A.degree + 1
    tol = 0.0 if A.ring.exact else FLOAT_TOL * max(1.0, A.max_abs())
    eye = TruncSeries.identity(A.ring, A.n, A.shape[0], cap)
    F = TruncSeries.zero(A.ring, A.n, A.shape, cap)
    for _ in range(cap + 2):
        new = -((eye + F) @ A).zbar_antiderivative(j, cap=cap)
        change = new - F
        F = new
        if change.is_zero(tol):
            break
    else:
        raise FrobeniusStageError(f"gauge iteration in z_{j + 1}", change.max_abs())
    B = eye + F
    residual = gauge_residual(B, A, j).max_abs()
    # ∂̄ scales a term by its z̄ exponent, at most cap
    if residual > cap * tol * max(1.0, B.max_abs()):
        raise NumericalError(f"gauge residual {residual:.3e} in z_{j + 1} above tolerance")
    return B, F


def holomorphic_frame(f: TruncSeries, A: Sequence[TruncSeries]) -> Dict:
    """
    Induction over the variables: at stage p the relation matrix of z̄_{p+1}
    is restricted to z̄_1 = … = z̄_p = 0, gauged away, and the remaining
    relation matrices are transported by the new gauge.
    """
    n = f.n
    ring = f.ring
    if len(A) != n:
        raise PreconditionError(f"need one relation matrix per variable, got {len(A)} for n={n}")
    tol = 0.0 if ring.exact else FLOAT_TOL
    for k, Ak in enumerate(A):
        if Ak.shape != (f.shape[0], f.shape[0]):
            raise StructuralError(f"A_{k + 1} must be {f.shape[0]}x{f.shape[0]}, got {Ak.shape}")
        if not relation_residual(f, Ak, k).is_zero(tol):
            raise PreconditionError(f"∂̄_{k + 1} f = A_{k + 1} f does not hold")

    f0 = f
    A = list(A)
    B_total = TruncSeries.identity(ring, n, f.shape[0], f.degree)
    stages = []
    for p in range(n):
        Ap = A[p].restrict_antihol(p)
        B, _ = solve_gauge_step(Ap, p, p)
        f = (B @ f).truncate(f0.degree)
        B_total = (B @ B_total).truncate(f0.degree)
        B_inv = B.inverse()
        for k in range(p + 1, n):
            A[k] = (B.dbar(k) + (B @ A[k])) @ B_inv
            A[k] = A[k].truncate(f0.degree - 1)
        worst = 0.0
        for j in range(p + 1):
            residual = f.dbar(j)
            if not residual.is_zero(tol):
                raise FrobeniusStageError(f"p={p + 1}", residual.max_abs())
            worst = max(worst, residual.max_abs())
        stages.append({"stage": p + 1, "gauge_terms": len(B.coeffs), "residual": worst})
        logger.info("frobenius stage %d: holomorphic in z_1..z_%d", p + 1, p + 1)

    span = (B_total.inverse() @ f) - f0
    orders = {0: 0.0, 1: 0.0}
    for mono, c in span.coeffs.items():
        d = sum(mono)
        if d in orders:
            orders[d] = max(orders[d], float(np.max(np.abs(ring.to_complex(c)))))
    return {
        "g": f,
        "B_total": B_total,
        "stages": stages,
        "residuals": [f.dbar(k).max_abs() for k in range(n)],
        "span_certificate": {"order0": orders[0], "order1": orders[1],
                             "exact": span.is_zero(tol)},
        "B0_invertible": not ring.is_zero(B_total.const),
    }


def relation_matrix(f: TruncSeries) -> List[TruncSeries]:
    """
    A_k = (∂̄_k f)·f⁺ with the series right inverse f⁺ = f(0)^†(f f(0)^†)^{-1}.
    Needs f(0) of full row rank.
    """
    ring = f.ring
    f0_adj = ring.conjugate_transpose(f.const)
    gram = f @ TruncSeries.constant(ring, f.n, f0_adj, f.degree)
    try:
        gram_inv = gram.inverse()
    except PreconditionError:
        raise PreconditionError("f(0) is rank-deficient; supply the relation matrices A_k explicitly") from None
    f_plus = TruncSeries.constant(ring, f.n, f0_adj, f.degree) @ gram_inv
    tol = 0.0 if ring.exact else FLOAT_TOL
    out = []
    for k in range(f.n):
        Ak = (f.dbar(k) @ f_plus).truncate(f.degree - 1)
        if not relation_residual(f, Ak, k).is_zero(tol):
            raise PreconditionError(
                f"∂̄_{k + 1} f is not in the span of f; supply the relation matrices A_k explicitly")
        out.append(Ak)
    return out


# ============================================================================
# PROBLEM FAMILIES
# ============================================================================

def family(name: str, degree: int = 8, ring: CoefficientRing = EXACT) -> Dict:
    """
    Built-in problems: f with its relation matrices.

    - exp_scalar: f = exp(z_1 z̄_1), A_1 = z_1
    - gauged_rank2: f = (I + z̄_1 E_12) f_h with holomorphic f_h, A_1 = E_12
    - exp_two_variable: f = exp(z_1 z̄_1 + z_2 z̄_2), A_k = z_k
    """
    if name == "exp_scalar":
        z = TruncSeries.variable(ring, 1, 0, False, degree)
        zb = TruncSeries.variable(ring, 1, 0, True, degree)
        f = (z @ zb).exp()
        return {"n": 1, "f": f, "A": [z.truncate(degree - 1)]}
    if name == "gauged_rank2":
        one = TruncSeries.identity(ring, 1, 2, degree)
        z = TruncSeries.variable(ring, 1, 0, False, degree, q=2)
        zb = TruncSeries.variable(ring, 1, 0, True, degree, q=2)
        e12 = TruncSeries.constant(ring, 1, ring.matrix([[0, 1], [0, 0]]), degree)
        e21 = TruncSeries.constant(ring, 1, ring.matrix([[0, 0], [1, 0]]), degree)
        f_h = one + (z @ e12) + (z @ z @ e21)
        f = (one + zb @ e12) @ f_h
        return {"n": 1, "f": f, "A": [e12.truncate(degree - 1)], "holomorphic_part": f_h}
    if name == "exp_two_variable":
        z1 = TruncSeries.variable(ring, 2, 0, False, degree)
        zb1 = TruncSeries.variable(ring, 2, 0, True, degree)
        z2 = TruncSeries.variable(ring, 2, 1, False, degree)
        zb2 = TruncSeries.variable(ring, 2, 1, True, degree)
        f = ((z1 @ zb1) + (z2 @ zb2)).exp()
        return {"n": 2, "f": f, "A": [z1.truncate(degree - 1), z2.truncate(degree - 1)]}
    raise PreconditionError(f"unknown family {name!r}; choose from {FAMILIES}")


# ============================================================================
# JSON I/O
# ============================================================================

def variable_names(n: int) -> List[str]:
    names = []
    for j in range(1, n + 1):
        names += [f"z{j}", f"zb{j}"]
    return names


def series_to_json(s: TruncSeries) -> Dict:
    entries = []
    for mono in sorted(s.coeffs, key=lambda m: (sum(m), m)):
        c = s.coeffs[mono]
        entries.append({"multidegree": list(mono),
                        "matrix": [[s.ring.encode(c[i, k]) for k in range(s.shape[1])]
                                   for i in range(s.shape[0])]})
    return {"vars": variable_names(s.n), "shape": list(s.shape), "degree": s.degree,
            "mode": s.ring.mode, "entries": entries}


def series_from_json(data: Dict, ring: Optional[CoefficientRing] = None) -> TruncSeries:
    try:
        n = len(data["vars"]) // 2
        shape = tuple(data["shape"])
        degree = int(data["degree"])
        ring = ring or (EXACT if data.get("mode", "exact") == "exact" else FLOAT)
        coeffs = {}
        for entry in data["entries"]:
            coeffs[tuple(entry["multidegree"])] = ring.matrix(
                [[ring.convert(tuple(v)) for v in row] for row in entry["matrix"]])
    except (KeyError, TypeError, ValueError) as e:
        raise StructuralError(f"malformed series JSON: {e}") from e
    return TruncSeries(ring, n, shape, degree, coeffs)


def solve_problem(problem: Dict, exact: Optional[bool] = None) -> Dict:
    """
    Problem file: {"family": NAME} or {"f": series, "A": [series, ...]}
    (A optional), plus "degree" and "mode".
    """
    mode = problem.get("mode", "exact") if exact is None else ("exact" if exact else "float")
    ring = EXACT if mode == "exact" else FLOAT
    degree = int(problem.get("degree", 8))
    if "family" in problem:
        fam = family(problem["family"], degree, ring)
        f, A = fam["f"], fam["A"]
    elif "f" in problem:
        f = series_from_json(problem["f"], ring)
        A = [series_from_json(a, ring) for a in problem["A"]] if problem.get("A") else relation_matrix(f)
    else:
        raise PreconditionError("problem needs either 'family' or 'f'")
    result = holomorphic_frame(f, A)
    return {
        "mode": mode,
        "degree": f.degree,
        "g": series_to_json(result["g"]),
        "B_total": series_to_json(result["B_total"]),
        "stages": result["stages"],
        "residuals": result["residuals"],
        "span_certificate": result["span_certificate"],
    }
