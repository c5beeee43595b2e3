"""
Forward theory for whole-line matrix Jacobi operators

    (H psi)(k) = A(k) psi(k+1) + A(k-1) psi(k-1) + B(k) psi(k)

with coefficients that differ from the free operator (A = I, B = 0) only on a finite
window. Outside the window the Weyl matrices are the closed-form roots of
M^2 + zM + I = 0, so M+ and M- are obtained exactly by Riccati propagation inward.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
import scipy.linalg as la

from config import TRUNCATION_MARGIN
from errors import NonConvergence, RealAxis, ValidationError, ConsistencyError
from matalg import (
    CMatrix,
    adjoint,
    as_cmatrix,
    identity,
    imag_part,
    inverse,
    is_hermitian,
    op_norm,
)

logger = logging.getLogger(__name__)

Solution = Dict[int, CMatrix]


class Side(str, Enum):
    PLUS = "+"
    MINUS = "-"


def _frozen(M: CMatrix) -> CMatrix:
    M = np.array(M, dtype=complex)
    M.setflags(write=False)
    return M


@dataclass(frozen=True)
class JacobiCoeffs:
    """A(k), B(k) on [k_min, k_max]; A = I and B = 0 elsewhere"""

    m: int
    k_min: int
    k_max: int
    A: Tuple[CMatrix, ...]
    B: Tuple[CMatrix, ...]
    bound: Optional[float] = None

    def __post_init__(self):
        size = self.k_max - self.k_min + 1
        if size < 0 or len(self.A) != size or len(self.B) != size:
            raise ValidationError(
                f"coefficient window [{self.k_min}, {self.k_max}] needs {max(size, 0)} A and B entries"
            )
        A, B = [], []
        for offset, (a, b) in enumerate(zip(self.A, self.B)):
            k = self.k_min + offset
            a = as_cmatrix(a, f"A({k})")
            b = as_cmatrix(b, f"B({k})")
            if a.shape != (self.m, self.m) or b.shape != (self.m, self.m):
                raise ValidationError(f"A({k}) and B({k}) must be {self.m}x{self.m}")
            if not is_hermitian(a):
                raise ValidationError(f"A({k}) is not Hermitian")
            if not is_hermitian(b):
                raise ValidationError(f"B({k}) is not Hermitian")
            if la.eigvalsh((a + adjoint(a)) / 2)[0] <= 0:
                raise ValidationError(f"A({k}) is not positive definite")
            A.append(_frozen(a))
            B.append(_frozen(b))
        object.__setattr__(self, "A", tuple(A))
        object.__setattr__(self, "B", tuple(B))
        if self.bound is None:
            object.__setattr__(self, "bound", self.coefficient_norm())

    @classmethod
    def free(cls, m: int) -> "JacobiCoeffs":
        return cls(m=m, k_min=0, k_max=-1, A=(), B=())

    @classmethod
    def from_maps(
        cls,
        A: Mapping[int, CMatrix],
        B: Mapping[int, CMatrix],
        m: Optional[int] = None,
        bound: Optional[float] = None,
    ) -> "JacobiCoeffs":
        keys = set(A) | set(B)
        if m is None:
            sample = next(iter(A.values()), None)
            if sample is None:
                sample = next(iter(B.values()))
            m = as_cmatrix(sample).shape[0]
        if not keys:
            return cls.free(m)
        k_min, k_max = min(keys), max(keys)
        ks = range(k_min, k_max + 1)
        return cls(
            m=m,
            k_min=k_min,
            k_max=k_max,
            A=tuple(A.get(k, identity(m)) for k in ks),
            B=tuple(B.get(k, np.zeros((m, m), dtype=complex)) for k in ks),
            bound=bound,
        )

    def A_at(self, k: int) -> CMatrix:
        if self.k_min <= k <= self.k_max:
            return self.A[k - self.k_min]
        return identity(self.m)

    def B_at(self, k: int) -> CMatrix:
        if self.k_min <= k <= self.k_max:
            return self.B[k - self.k_min]
        return np.zeros((self.m, self.m), dtype=complex)

    def coefficient_norm(self) -> float:
        """sup_k |A(k)| + |B(k)|, the free background contributing 1"""
        norms = [op_norm(a) + op_norm(b) for a, b in zip(self.A, self.B)]
        return max([1.0] + norms)

    def bound_violation(self) -> float:
        """Positive when the stored bound constant is exceeded"""
        return self.coefficient_norm() - self.bound

    def to_maps(self) -> Tuple[Dict[int, CMatrix], Dict[int, CMatrix]]:
        ks = range(self.k_min, self.k_max + 1)
        return dict(zip(ks, self.A)), dict(zip(ks, self.B))


@dataclass(frozen=True)
class WeylPair:
    """M+(z, k0), M-(z, k0); ``k0`` is a lattice site or a continuum point"""

    z: complex
    k0: float
    M_plus: CMatrix
    M_minus: CMatrix

    @property
    def g(self) -> CMatrix:
        return inverse(self.M_minus - self.M_plus)

    def conj(self) -> "WeylPair":
        """The pair at conj(z)"""
        return WeylPair(np.conj(self.z), self.k0, adjoint(self.M_plus), adjoint(self.M_minus))

    def herglotz_margin(self) -> float:
        """Smallest eigenvalue of Im(M+) and -Im(M-), oriented by the sign of Im z"""
        s = np.sign(np.imag(self.z))
        low_plus = la.eigvalsh(s * imag_part(self.M_plus))[0]
        low_minus = la.eigvalsh(-s * imag_part(self.M_minus))[0]
        return float(min(low_plus, low_minus))

    def distance(self, other: "WeylPair") -> float:
        return max(op_norm(self.M_plus - other.M_plus), op_norm(self.M_minus - other.M_minus))


@dataclass(frozen=True)
class GreensSample:
    """Green's matrix blocks at (k0, k0 + 1)"""

    z: complex
    k0: int
    g0: CMatrix
    g1: CMatrix
    G01: CMatrix
    G10: CMatrix
    metadata: Dict[str, object] = field(default_factory=dict, compare=False)

    @property
    def m(self) -> int:
        return self.g0.shape[0]


def _require_offaxis(z: complex) -> complex:
    z = complex(z)
    if z.imag == 0:
        raise RealAxis(f"spectral parameter {z} lies on the real axis")
    return z


def weyl_m_tail(z: complex, sign: Side, m: int = 1) -> CMatrix:
    """Free-tail Weyl matrix: a root of M^2 + zM + 1 = 0 times I_m.

    The + root is the decaying one (|M| < 1, Herglotz); the two roots multiply to 1,
    so the small root is taken as the reciprocal of the large one.
    """
    z = _require_offaxis(z)
    root = np.sqrt(z * z - 4)
    first, second = (-z + root) / 2, (-z - root) / 2
    large = first if abs(first) >= abs(second) else second
    small = 1 / large
    if abs(abs(large) - abs(small)) < 1e-12 and np.sign(small.imag) != np.sign(z.imag):
        small, large = large, small
    value = small if Side(sign) == Side.PLUS else large
    return value * identity(m)


def fundamental_solutions(
    c: JacobiCoeffs, z: complex, k0: int, k_lo: int, k_hi: int
) -> Tuple[Solution, Solution]:
    """phi, theta on [k_lo, k_hi] with theta(k0) = phi(k0+1) = I, phi(k0) = theta(k0+1) = 0"""
    if not k_lo <= k0 < k_hi:
        raise ValidationError(f"need k_lo <= k0 < k_hi, got {k_lo}, {k0}, {k_hi}")
    eye = identity(c.m)
    zero = np.zeros_like(eye)
    phi: Solution = {k0: zero, k0 + 1: eye}
    theta: Solution = {k0: eye, k0 + 1: zero}
    for sol in (phi, theta):
        for k in range(k0 + 1, k_hi):
            rhs = (z * eye - c.B_at(k)) @ sol[k] - c.A_at(k - 1) @ sol[k - 1]
            sol[k + 1] = la.solve(c.A_at(k), rhs)
        for k in range(k0, k_lo, -1):
            rhs = (z * eye - c.B_at(k)) @ sol[k] - c.A_at(k) @ sol[k + 1]
            sol[k - 1] = la.solve(c.A_at(k - 1), rhs)
    return phi, theta


def recurrence_residual(c: JacobiCoeffs, z: complex, sol: Solution, k: int) -> float:
    eye = identity(c.m)
    lhs = c.A_at(k) @ sol[k + 1] + c.A_at(k - 1) @ sol[k - 1] + (c.B_at(k) - z * eye) @ sol[k]
    return op_norm(lhs)


def wronskian(c: JacobiCoeffs, f: Solution, g: Solution, k: int) -> CMatrix:
    return f[k] @ c.A_at(k) @ g[k + 1] - f[k + 1] @ c.A_at(k) @ g[k]


def weyl_m_profile(
    c: JacobiCoeffs, z: complex, k_lo: int, k_hi: int
) -> Tuple[Solution, Solution]:
    """M+(z, k) and M-(z, k) for every k in [k_lo, k_hi]"""
    z = _require_offaxis(z)
    eye = identity(c.m)
    top = max(c.k_max, k_hi) + 1
    bottom = min(c.k_min, k_lo) - 1

    plus: Solution = {top: weyl_m_tail(z, Side.PLUS, c.m)}
    for k in range(top, k_lo, -1):
        a = c.A_at(k - 1)
        plus[k - 1] = a @ inverse(c.B_at(k) - z * eye - plus[k]) @ a

    minus: Solution = {bottom: weyl_m_tail(z, Side.MINUS, c.m)}
    for k in range(bottom + 1, k_hi + 1):
        a = c.A_at(k - 1)
        minus[k] = c.B_at(k) - z * eye - a @ inverse(minus[k - 1]) @ a

    return (
        {k: plus[k] for k in range(k_lo, k_hi + 1)},
        {k: minus[k] for k in range(k_lo, k_hi + 1)},
    )


def riccati_residual(c: JacobiCoeffs, z: complex, M: Solution, k: int) -> float:
    """|M(k) + A(k-1) M(k-1)^-1 A(k-1) - B(k) + z|"""
    a = c.A_at(k - 1)
    return op_norm(M[k] + a @ inverse(M[k - 1]) @ a - c.B_at(k) + z * identity(c.m))


def weyl_m(c: JacobiCoeffs, z: complex, k0: int) -> WeylPair:
    plus, minus = weyl_m_profile(c, z, k0, k0)
    return WeylPair(complex(z), k0, plus[k0], minus[k0])


def weyl_m_truncated(c: JacobiCoeffs, z: complex, k0: int, N: int) -> CMatrix:
    """The M for which theta - phi A(k0)^-1 M vanishes at N, A(k0) phi(N)^-1 theta(N).

    Tends to M+ as N -> +inf and to M- as N -> -inf.
    """
    _require_offaxis(z)
    if N == k0:
        raise ValidationError("truncation site must differ from k0")
    phi, theta = fundamental_solutions(c, z, k0, min(k0, N), max(k0 + 1, N))
    return c.A_at(k0) @ inverse(phi[N]) @ theta[N]


def weyl_solutions(
    c: JacobiCoeffs, pair: WeylPair, k_lo: int, k_hi: int
) -> Tuple[Solution, Solution]:
    """psi+/- = theta - phi A(k0)^-1 M+/- on [k_lo, k_hi]"""
    k0 = int(pair.k0)
    phi, theta = fundamental_solutions(c, pair.z, k0, min(k_lo, k0), max(k_hi, k0 + 1))
    a_inv = inverse(c.A_at(k0))
    plus_coef = a_inv @ pair.M_plus
    minus_coef = a_inv @ pair.M_minus
    psi_plus = {k: theta[k] - phi[k] @ plus_coef for k in phi}
    psi_minus = {k: theta[k] - phi[k] @ minus_coef for k in phi}
    return psi_plus, psi_minus


class GreensKernel:
    """Weyl solutions at z and conj(z) around k0, evaluated once per window"""

    def __init__(self, c: JacobiCoeffs, z: complex, k0: int, k_lo: int, k_hi: int):
        self.c = c
        self.z = _require_offaxis(z)
        self.pair = weyl_m(c, self.z, k0)
        self.g = self.pair.g
        self.psi_plus, self.psi_minus = weyl_solutions(c, self.pair, k_lo, k_hi)
        self.psi_plus_bar, self.psi_minus_bar = weyl_solutions(c, self.pair.conj(), k_lo, k_hi)

    def entry(self, k: int, l: int) -> CMatrix:
        if l <= k:
            return self.psi_plus[k] @ self.g @ adjoint(self.psi_minus_bar[l])
        return self.psi_minus[k] @ self.g @ adjoint(self.psi_plus_bar[l])

    def diagonal_alt(self, k: int) -> CMatrix:
        """psi-(z, k) g psi+(conj z, k)*, the second reading of the diagonal"""
        return self.psi_minus[k] @ self.g @ adjoint(self.psi_plus_bar[k])

    def jump(self, k: int) -> CMatrix:
        a = self.c.A_at(k)
        return a @ (
            self.psi_plus[k + 1] @ self.g @ adjoint(self.psi_minus_bar[k])
            - self.psi_minus[k + 1] @ self.g @ adjoint(self.psi_plus_bar[k])
        )


def greens_matrix(c: JacobiCoeffs, z: complex, k0: int, k: int, l: int) -> CMatrix:
    kernel = GreensKernel(c, z, k0, min(k, l, k0), max(k, l, k0 + 1))
    return kernel.entry(k, l)


def greens_sample(c: JacobiCoeffs, z: complex, k0: int) -> GreensSample:
    kernel = GreensKernel(c, z, k0, k0, k0 + 1)
    return GreensSample(
        z=complex(z),
        k0=k0,
        g0=kernel.g,
        g1=kernel.entry(k0 + 1, k0 + 1),
        G01=kernel.entry(k0, k0 + 1),
        G10=kernel.entry(k0 + 1, k0),
    )


def greens_identity_residual(c: JacobiCoeffs, z: complex, k0: int, k: int) -> float:
    """Both diagonal readings against [M-(z, k) - M+(z, k)]^-1"""
    kernel = GreensKernel(c, z, k0, min(k, k0), max(k, k0) + 1)
    plus, minus = weyl_m_profile(c, z, k, k)
    local = inverse(minus[k] - plus[k])
    return max(op_norm(kernel.entry(k, k) - local), op_norm(kernel.diagonal_alt(k) - local))


def jump_identity_residual(c: JacobiCoeffs, z: complex, k0: int, k: int) -> float:
    kernel = GreensKernel(c, z, k0, min(k, k0), max(k, k0) + 1)
    return op_norm(kernel.jump(k) - identity(c.m))


def halfline_m(c: JacobiCoeffs, z: complex, k0: int, sign: Side) -> CMatrix:
    pair = weyl_m(c, z, k0)
    if Side(sign) == Side.PLUS:
        return inverse(c.B_at(k0) - pair.z * identity(c.m) - pair.M_plus)
    return inverse(pair.M_minus)


def big_M(c: JacobiCoeffs, z: complex, k0: int) -> CMatrix:
    """2m x 2m Weyl-Titchmarsh matrix, checked against its Green's-matrix form"""
    pair = weyl_m(c, z, k0)
    g = pair.g
    total = pair.M_minus + pair.M_plus
    M = np.block([
        [g, g @ total / 2],
        [total @ g / 2, pair.M_plus @ g @ pair.M_minus],
    ])
    from_greens = big_M_from_greens(c, greens_sample(c, z, k0))
    gap = op_norm(M - from_greens)
    if gap > 1e-9 * max(1.0, op_norm(M)):
        raise ConsistencyError(f"Weyl matrix and Green's-matrix form differ by {gap:.3e}")
    return M


def big_M_from_greens(c: JacobiCoeffs, s: GreensSample) -> CMatrix:
    """diag(I, -A(k0)) [[g0, G01], [G10, g1]] diag(I, -A(k0)) + antidiag(I, I)/2"""
    m = c.m
    scale = np.block([
        [identity(m), np.zeros((m, m))],
        [np.zeros((m, m)), -c.A_at(s.k0)],
    ])
    blocks = np.block([[s.g0, s.G01], [s.G10, s.g1]])
    swap = np.block([
        [np.zeros((m, m)), identity(m)],
        [identity(m), np.zeros((m, m))],
    ])
    return scale @ blocks @ scale + swap / 2


def dense_operator(c: JacobiCoeffs, k_lo: int, k_hi: int) -> np.ndarray:
    """Dirichlet truncation of H to the sites k_lo..k_hi"""
    m = c.m
    n = k_hi - k_lo + 1
    H = np.zeros((n * m, n * m), dtype=complex)
    for i, k in enumerate(range(k_lo, k_hi + 1)):
        H[i * m:(i + 1) * m, i * m:(i + 1) * m] = c.B_at(k)
        if i + 1 < n:
            a = c.A_at(k)
            H[i * m:(i + 1) * m, (i + 1) * m:(i + 2) * m] = a
            H[(i + 1) * m:(i + 2) * m, i * m:(i + 1) * m] = adjoint(a)
    return H


def _resolvent_block(c: JacobiCoeffs, z: complex, k_lo: int, k_hi: int, k: int, l: int) -> CMatrix:
    m = c.m
    H = dense_operator(c, k_lo, k_hi)
    rhs = np.zeros((H.shape[0], m), dtype=complex)
    j = l - k_lo
    rhs[j * m:(j + 1) * m, :] = identity(m)
    X = la.solve(H - z * np.eye(H.shape[0]), rhs)
    i = k - k_lo
    return X[i * m:(i + 1) * m, :]


def dense_resolvent_block(
    c: JacobiCoeffs,
    z: complex,
    k: int,
    l: int,
    margin: int = TRUNCATION_MARGIN,
    tol: float = 1e-9,
    max_margin: int = 2560,
) -> CMatrix:
    """G(z, k, l) from dense truncations, margin doubled until successive values settle"""
    z = _require_offaxis(z)

    def block(pad: int) -> CMatrix:
        return _resolvent_block(c, z, min(c.k_min, k, l) - pad, max(c.k_max, k, l) + pad, k, l)

    current = block(margin)
    while margin < max_margin:
        margin *= 2
        refined = block(margin)
        if op_norm(refined - current) <= tol * max(op_norm(refined), 1e-300):
            return refined
        current = refined
    raise NonConvergence(f"dense resolvent did not settle by margin {max_margin}")


def dense_halfline_m(c: JacobiCoeffs, z: complex, k0: int, sign: Side, L: int) -> CMatrix:
    """(k0, k0) block of the resolvent of the half-line truncation with L sites"""
    z = _require_offaxis(z)
    if Side(sign) == Side.PLUS:
        return _resolvent_block(c, z, k0, k0 + L - 1, k0, k0)
    return _resolvent_block(c, z, k0 - L + 1, k0, k0, k0)
