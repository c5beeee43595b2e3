"""
Matrix Schrödinger (-psi'' + Q psi = z psi) and Dirac-type operators on a uniform grid.

Coefficients vanish outside [x0 - R, x0 + R], so the Weyl matrices are known exactly at
the grid ends (i sqrt(z) I and i I up to sign) and are carried inward by their Riccati
equations. From the fields we form the diagonal Green's matrix g and its derivative,
recover M+ and M- from (g, g') at a point, square Dirac operators into Schrödinger ones
and probe how fast the data of two locally equal models come together.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import simpson, solve_ivp
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from config import (
    BLOWUP_LIMIT,
    MAX_WORKERS,
    NOISE_FACTOR,
    ODE_ATOL,
    ODE_METHOD,
    ODE_RTOL,
)
from errors import (
    ConsistencyError,
    InsufficientDecades,
    RealAxis,
    SeparationFailed,
    SpectraOverlap,
    StepFailure,
    ValidationError,
)
from jacobi_forward import WeylPair
from matalg import CMatrix, adjoint, identity, imag_part, inverse, is_hermitian, op_norm
from mateq import SpectrumLocation, SylvesterProblem, herglotz_spectrum_check, sylvester_direct

logger = logging.getLogger(__name__)

SCHRODINGER = "schrodinger"
DIRAC = "dirac"


def _grid_size(R: float, h: float) -> int:
    if not (R > 0 and h > 0):
        raise ValidationError(f"grid needs R > 0 and h > 0, got R={R}, h={h}")
    n = int(round(2 * R / h)) + 1
    if abs((n - 1) * h - 2 * R) > 1e-9 * R:
        raise ValidationError(f"step {h} does not divide the interval length {2 * R}")
    if n < 5:
        raise ValidationError("grid needs at least five points")
    return n


def _check_field(values, m: int, n: int, name: str, grid: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=complex)
    if arr.shape != (n, m, m):
        raise ValidationError(f"{name} must have shape {(n, m, m)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    for x, M in zip(grid, arr):
        if not is_hermitian(M):
            raise ValidationError(f"{name}(x={x:.6g}) is not Hermitian")
    arr.setflags(write=False)
    return arr


def _hermite(grid: np.ndarray, values: np.ndarray, h: float) -> CubicHermiteSpline:
    """Local C1 interpolant; slopes from second-order differences"""
    return CubicHermiteSpline(grid, values, np.gradient(values, h, axis=0), axis=0)


@dataclass(frozen=True)
class _GridModel:
    m: int
    x0: float
    R: float
    h: float

    @property
    def size(self) -> int:
        return _grid_size(self.R, self.h)

    @property
    def grid(self) -> np.ndarray:
        return self.x0 + np.linspace(-self.R, self.R, self.size)

    @property
    def fine_grid(self) -> np.ndarray:
        """Gridpoints interleaved with subinterval midpoints"""
        return self.x0 + np.linspace(-self.R, self.R, 2 * self.size - 1)

    def index(self, x: float) -> int:
        j = int(round((x - self.grid[0]) / self.h))
        if not 0 <= j < self.size or abs(self.grid[j] - x) > 1e-9 * max(1.0, self.h):
            raise ValidationError(f"x = {x} is not a gridpoint")
        return j

    def same_grid(self, other: "_GridModel") -> bool:
        return (self.m, self.x0, self.R, self.h) == (other.m, other.x0, other.R, other.h)

    @staticmethod
    def _sample(fn: Callable[[float], CMatrix], m: int, x0: float, R: float, h: float) -> np.ndarray:
        xs = x0 + np.linspace(-R, R, _grid_size(R, h))
        return np.array([np.broadcast_to(np.asarray(fn(x), dtype=complex), (m, m)) for x in xs])


@dataclass(frozen=True)
class SchrodingerModel(_GridModel):
    """Hermitian potential Q sampled on x0 - R ... x0 + R"""

    Q: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "Q", _check_field(self.Q, self.m, self.size, "Q", self.grid))

    @classmethod
    def from_function(cls, fn: Callable[[float], CMatrix], m: int, x0: float, R: float, h: float):
        return cls(m=m, x0=x0, R=R, h=h, Q=cls._sample(fn, m, x0, R, h))

    @classmethod
    def free(cls, m: int, x0: float = 0.0, R: float = 1.0, h: float = 0.05):
        return cls.from_function(lambda x: np.zeros((m, m)), m, x0, R, h)

    @cached_property
    def potential(self) -> CubicHermiteSpline:
        return _hermite(self.grid, self.Q, self.h)

    @property
    def scale(self) -> float:
        return max(op_norm(Q) for Q in self.Q)


@dataclass(frozen=True)
class DiracModel(_GridModel):
    """Normal-form Dirac coefficient [[B11, B12], [B12, -B11]] on x0 - R ... x0 + R"""

    B11: np.ndarray = field(default=None, repr=False)
    B12: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "B11", _check_field(self.B11, self.m, self.size, "B11", self.grid))
        object.__setattr__(self, "B12", _check_field(self.B12, self.m, self.size, "B12", self.grid))

    @classmethod
    def from_function(
        cls,
        b11: Callable[[float], CMatrix],
        b12: Callable[[float], CMatrix],
        m: int,
        x0: float,
        R: float,
        h: float,
    ):
        return cls(
            m=m, x0=x0, R=R, h=h,
            B11=cls._sample(b11, m, x0, R, h),
            B12=cls._sample(b12, m, x0, R, h),
        )

    @classmethod
    def free(cls, m: int, x0: float = 0.0, R: float = 1.0, h: float = 0.05):
        zero = lambda x: np.zeros((m, m))  # noqa: E731
        return cls.from_function(zero, zero, m, x0, R, h)

    @cached_property
    def potential(self) -> Tuple[CubicHermiteSpline, CubicHermiteSpline]:
        return _hermite(self.grid, self.B11, self.h), _hermite(self.grid, self.B12, self.h)

    @property
    def scale(self) -> float:
        return max(op_norm(a) + op_norm(b) for a, b in zip(self.B11, self.B12))


Model = Union[SchrodingerModel, DiracModel]


@dataclass(frozen=True)
class WeylField:
    """M+(z, x) and M-(z, x) at gridpoints, with midpoint values for residual checks"""

    z: complex
    kind: str
    x: np.ndarray
    M_plus: np.ndarray
    M_minus: np.ndarray
    M_plus_mid: np.ndarray
    M_minus_mid: np.ndarray
    branch: complex
    metadata: Dict[str, object] = field(default_factory=dict, compare=False)

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def index(self, x: float) -> int:
        j = int(round((x - self.x[0]) / self.h))
        if not 0 <= j < self.x.size or abs(self.x[j] - x) > 1e-9 * max(1.0, self.h):
            raise ValidationError(f"x = {x} is not a gridpoint")
        return j

    def at(self, x: float) -> WeylPair:
        j = self.index(x)
        return WeylPair(self.z, float(self.x[j]), self.M_plus[j], self.M_minus[j])

    def fine(self, side: str) -> Tuple[np.ndarray, np.ndarray]:
        grid_vals, mid_vals = (
            (self.M_plus, self.M_plus_mid) if side == "+" else (self.M_minus, self.M_minus_mid)
        )
        xs = np.linspace(self.x[0], self.x[-1], 2 * self.x.size - 1)
        values = np.empty((xs.size,) + grid_vals.shape[1:], dtype=complex)
        values[::2] = grid_vals
        values[1::2] = mid_vals
        return xs, values

    def herglotz_margin(self) -> float:
        return min(self.at(x).herglotz_margin() for x in self.x)


@dataclass(frozen=True)
class DiagonalGreen:
    """g(z, x) and g'(z, x) at gridpoints"""

    z: complex
    kind: str
    x: np.ndarray
    g: np.ndarray
    gprime: np.ndarray

    def at(self, x: float) -> Tuple[CMatrix, CMatrix]:
        j = int(round((x - self.x[0]) / (self.x[1] - self.x[0])))
        if not 0 <= j < self.x.size or abs(self.x[j] - x) > 1e-9:
            raise ValidationError(f"x = {x} is not a gridpoint")
        return self.g[j], self.gprime[j]


@dataclass
class ClosenessEstimate:
    a_fit: float
    slope: float
    points_used: int
    variable: str
    flags: List[str] = field(default_factory=list)


def _offaxis(z: complex) -> complex:
    z = complex(z)
    if z.imag == 0:
        raise RealAxis(f"spectral parameter {z} lies on the real axis")
    return z


def decaying_root(z: complex) -> complex:
    """k with k^2 = z and Im k > 0, so exp(ikx) decays at +infinity"""
    k = np.sqrt(_offaxis(z))
    return k if k.imag > 0 else -k


def _evolve(
    rhs: Callable[[float, CMatrix], CMatrix],
    m: int,
    start: CMatrix,
    t_eval: np.ndarray,
    label: str,
) -> np.ndarray:
    def fun(x, y):
        return rhs(x, y.reshape(m, m)).ravel()

    def blowup(x, y):
        return BLOWUP_LIMIT - np.max(np.abs(y))

    blowup.terminal = True
    sol = solve_ivp(
        fun,
        (t_eval[0], t_eval[-1]),
        np.asarray(start, dtype=complex).ravel(),
        method=ODE_METHOD,
        t_eval=t_eval,
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
        events=blowup,
    )
    if sol.status == 1:
        raise StepFailure(f"{label}: Riccati solution exceeded {BLOWUP_LIMIT:.0e} near x = {sol.t[-1]:.4g}")
    if sol.status != 0:
        raise StepFailure(f"{label}: {sol.message}")
    logger.debug(f"{label}: {sol.nfev} right-hand side evaluations")
    return sol.y.T.reshape(-1, m, m)


def _assemble(
    mdl: Model, z: complex, kind: str, rhs, plus_start: CMatrix, minus_start: CMatrix, branch: complex
) -> WeylField:
    fine = mdl.fine_grid
    plus = _evolve(rhs, mdl.m, plus_start, fine[::-1], f"{kind} M+ at z={z:.4g}")[::-1]
    minus = _evolve(rhs, mdl.m, minus_start, fine, f"{kind} M- at z={z:.4g}")
    return WeylField(
        z=z,
        kind=kind,
        x=mdl.grid,
        M_plus=plus[::2],
        M_minus=minus[::2],
        M_plus_mid=plus[1::2],
        M_minus_mid=minus[1::2],
        branch=branch,
        metadata={"method": ODE_METHOD, "rtol": ODE_RTOL, "atol": ODE_ATOL, "h": mdl.h},
    )


def _schrodinger_rhs(mdl: SchrodingerModel, z: complex):
    eye = identity(mdl.m)

    def rhs(x, M):
        return mdl.potential(x) - z * eye - M @ M

    return rhs


def _dirac_rhs(mdl: DiracModel, z: complex):
    eye = identity(mdl.m)
    b11, b12 = mdl.potential

    def rhs(x, M):
        B11, B12 = b11(x), b12(x)
        return -B11 - z * eye - z * M @ M + M @ B11 @ M - B12 @ M - M @ B12

    return rhs


def riccati_evolve_schrodinger(mdl: SchrodingerModel, z: complex) -> WeylField:
    """M' + M^2 = Q - z; M+ from i k I at the right end, M- from -i k I at the left"""
    z = _offaxis(z)
    k = decaying_root(z)
    eye = identity(mdl.m)
    return _assemble(mdl, z, SCHRODINGER, _schrodinger_rhs(mdl, z), 1j * k * eye, -1j * k * eye, k)


def riccati_evolve_dirac(mdl: DiracModel, z: complex) -> WeylField:
    """M' + zM^2 - M B11 M + B12 M + M B12 = -B11 - z from +/- i sign(Im z) I at the ends"""
    z = _offaxis(z)
    s = 1j * np.sign(z.imag)
    eye = identity(mdl.m)
    return _assemble(mdl, z, DIRAC, _dirac_rhs(mdl, z), s * eye, -s * eye, s)


def riccati_evolve(mdl: Model, z: complex) -> WeylField:
    if isinstance(mdl, DiracModel):
        return riccati_evolve_dirac(mdl, z)
    return riccati_evolve_schrodinger(mdl, z)


def evolve_many(mdl: Model, zs: Sequence[complex]) -> List[WeylField]:
    """Independent evolutions on the worker pool, returned in input order"""
    with ThreadPoolExecutor(max_workers=MAX_WORKERS) as executor:
        return list(executor.map(lambda z: riccati_evolve(mdl, z), zs))


def weyl_field_at(fld: WeylField, x: float) -> WeylPair:
    return fld.at(x)


def _batched_rhs(mdl: Model, z: complex, xs: np.ndarray, M: np.ndarray) -> np.ndarray:
    eye = identity(mdl.m)
    if isinstance(mdl, DiracModel):
        b11, b12 = mdl.potential
        B11, B12 = b11(xs), b12(xs)
        return -B11 - z * eye - z * M @ M + M @ B11 @ M - B12 @ M - M @ B12
    return mdl.potential(xs) - z * eye - M @ M


def _require_grid(mdl: Model, fld: WeylField) -> None:
    if fld.x.size != mdl.size or not np.allclose(fld.x, mdl.grid, rtol=0, atol=1e-9 * max(1.0, mdl.R)):
        raise ValidationError("field and model live on different grids")


def _simpson_residual(mdl: Model, fld: WeylField) -> float:
    """Worst |M(x_{j+1}) - M(x_j) - Simpson(F)| / h over subintervals and both sides"""
    _require_grid(mdl, fld)
    worst = 0.0
    for side in ("+", "-"):
        xs, M = fld.fine(side)
        F = _batched_rhs(mdl, fld.z, xs, M)
        left, mid, right = slice(0, -2, 2), slice(1, -1, 2), slice(2, None, 2)
        increment = M[right] - M[left]
        rule = mdl.h / 6 * (F[left] + 4 * F[mid] + F[right])
        defect = np.linalg.norm(increment - rule, ord=2, axis=(1, 2)) / mdl.h
        worst = max(worst, float(np.max(defect)))
    return worst


def riccati_residual_schrodinger(mdl: SchrodingerModel, fld: WeylField) -> float:
    return _simpson_residual(mdl, fld)


def riccati_residual_dirac(mdl: DiracModel, fld: WeylField) -> float:
    return _simpson_residual(mdl, fld)


def residual_scale(mdl: Model, z: complex) -> float:
    return abs(z) + mdl.scale


def diag_green(fld: WeylField, mdl: Optional[Model] = None) -> DiagonalGreen:
    """g = [M- - M+]^-1 with g' from the algebraic identities"""
    Mp, Mm = fld.M_plus, fld.M_minus
    g = np.array([inverse(d) for d in Mm - Mp])
    if fld.kind == SCHRODINGER:
        gprime = g @ Mp + Mm @ g
    else:
        if not isinstance(mdl, DiracModel):
            raise ValidationError("the Dirac g' identity needs the model coefficients")
        z = fld.z
        B11, B12 = mdl.B11, mdl.B12
        gprime = z * g @ Mp + z * Mm @ g - g @ Mp @ B11 - B11 @ Mm @ g + g @ B12 + B12 @ g
    return DiagonalGreen(z=fld.z, kind=fld.kind, x=fld.x, g=g, gprime=gprime)


def dual_identity_residual(dg: DiagonalGreen, fld: WeylField) -> float:
    """max of |g' - I - (gM+ + M+g)| and |g' + I - (gM- + M-g)|"""
    eye = identity(dg.g.shape[-1])
    plus = dg.gprime - eye - (dg.g @ fld.M_plus + fld.M_plus @ dg.g)
    minus = dg.gprime + eye - (dg.g @ fld.M_minus + fld.M_minus @ dg.g)
    return float(max(
        np.max(np.linalg.norm(plus, ord=2, axis=(1, 2))),
        np.max(np.linalg.norm(minus, ord=2, axis=(1, 2))),
    ))


def recover_M_schrodinger(g: CMatrix, gprime: CMatrix, z: complex, x: float = 0.0) -> WeylPair:
    """Solve gM + Mg = g' -/+ I for M+ and M-"""
    z = _offaxis(z)
    orient = g if z.imag > 0 else -g
    if herglotz_spectrum_check(orient) != SpectrumLocation.STRICTLY_UPPER:
        raise SpectraOverlap(f"spectrum of g is not off the real axis at z={z:.4g}")
    eye = identity(g.shape[0])
    M_plus = sylvester_direct(SylvesterProblem(g, -g, gprime - eye))
    M_minus = sylvester_direct(SylvesterProblem(g, -g, gprime + eye))
    gap = op_norm(inverse(M_minus - M_plus) - g) / op_norm(g)
    if gap > 1e-9:
        logger.warning(f"recovered pair reproduces g only to {gap:.2e} at z={z:.4g}")
    return WeylPair(z, x, M_plus, M_minus)


def dirac_gprime(pair: WeylPair, B11: CMatrix, B12: CMatrix) -> CMatrix:
    z, Mp, Mm = pair.z, pair.M_plus, pair.M_minus
    g = pair.g
    return z * g @ Mp + z * Mm @ g - g @ Mp @ B11 - B11 @ Mm @ g + g @ B12 + B12 @ g


def recover_M_dirac(
    g: CMatrix, gprime: CMatrix, B11: CMatrix, B12: CMatrix, z: complex, x: float = 0.0
) -> WeylPair:
    """M+ from the Sylvester form of the Dirac g' identity, M- = M+ + g^-1"""
    z = _offaxis(z)
    eye = identity(g.shape[0])
    g_inv = inverse(g)
    damp = eye - B11 / z
    A_s = g_inv @ damp
    B_s = -damp @ g_inv
    orient = -A_s if z.imag > 0 else A_s
    if herglotz_spectrum_check(orient) != SpectrumLocation.STRICTLY_UPPER:
        raise SeparationFailed(f"g^-1 (I - B11/z) does not separate from its negative at z={z:.4g}; raise Im z")
    C = (g_inv @ gprime @ g_inv - B12 @ g_inv - g_inv @ B12 - z * g_inv @ g_inv + g_inv @ B11 @ g_inv) / z
    M_plus = sylvester_direct(SylvesterProblem(A_s, B_s, C))
    pair = WeylPair(z, x, M_plus, M_plus + g_inv)
    gap = op_norm(dirac_gprime(pair, B11, B12) - gprime) / max(op_norm(gprime), op_norm(g))
    if gap > 1e-8:
        raise ConsistencyError(f"recovered Dirac pair reproduces g' only to {gap:.2e}")
    return pair


def dirac_square(mdl: DiracModel) -> SchrodingerModel:
    """2m x 2m potential B^2 - J B' of the squared Dirac operator"""
    B11, B12 = np.asarray(mdl.B11), np.asarray(mdl.B12)
    d11 = np.gradient(B11, mdl.h, axis=0, edge_order=1)
    d12 = np.gradient(B12, mdl.h, axis=0, edge_order=1)
    square = B11 @ B11 + B12 @ B12
    comm = B11 @ B12 - B12 @ B11
    Q = np.block([
        [square + d12, comm - d11],
        [-comm - d11, square - d12],
    ])
    Q = (Q + adjoint(Q)) / 2
    return SchrodingerModel(m=2 * mdl.m, x0=mdl.x0, R=mdl.R, h=mdl.h, Q=Q)


def evolve_squared(mdl: DiracModel, z: complex) -> WeylField:
    """Schrödinger field of the squared model at z^2"""
    return riccati_evolve_schrodinger(dirac_square(mdl), complex(z) ** 2)


def _phi_assembly(P: CMatrix, N: CMatrix, B11: CMatrix, B12: CMatrix, z: complex) -> CMatrix:
    """Phi' Phi^-1 with Phi = [[I, I], [M(z), M(-z)]] and Phi' from the Dirac system"""
    eye = identity(P.shape[0])
    phi = np.block([[eye, eye], [P, N]])
    dphi = np.block([
        [B12 + (z * eye - B11) @ P, B12 - (z * eye + B11) @ N],
        [-B11 - z * eye - B12 @ P, -B11 + z * eye - B12 @ N],
    ])
    return dphi @ inverse(phi)


def dirac_to_schrodinger_M(
    M_z: CMatrix, M_minus_z: CMatrix, B11: CMatrix, B12: CMatrix, z: complex
) -> CMatrix:
    """Schrödinger M+ of the squared operator at z^2 from the Dirac M+ at z and -z"""
    z = complex(z)
    if not 0 < np.angle(z) < np.pi / 2:
        raise ValidationError(f"arg z must lie in (0, pi/2), got {np.angle(z):.4f}")
    P, N = np.asarray(M_z, dtype=complex), np.asarray(M_minus_z, dtype=complex)
    D_inv = inverse(N - P)
    total = N + P
    M = np.block([
        [B12 + 2 * z * P @ D_inv @ N, -B11 - z * total @ D_inv],
        [-B11 - z * D_inv @ total, -B12 + 2 * z * D_inv],
    ])
    check = _phi_assembly(P, N, B11, B12, z)
    gap = op_norm(M - check) / max(1.0, op_norm(M))
    if gap > 1e-9:
        raise ConsistencyError(f"block formulas and Phi' Phi^-1 differ by {gap:.2e}")
    return M


def _energy_pieces(mdl: Model, fld: WeylField, x_start: float):
    _require_grid(mdl, fld)
    xs, Mp = fld.fine("+")
    j = 2 * mdl.index(x_start)
    xs, Mp = xs[j:], Mp[j:]
    if xs.size < 3:
        raise ValidationError("energy identity needs at least one subinterval to the right")
    spline = CubicSpline(xs, Mp, axis=0)
    m = mdl.m
    z = fld.z
    eye = identity(m)
    if isinstance(mdl, DiracModel):
        b11, b12 = mdl.potential

        def drift(x):
            return b12(x) + (z * eye - b11(x)) @ spline(x)
    else:
        drift = spline

    psi = _evolve(lambda x, Y: drift(x) @ Y, m, eye, xs, f"energy identity at z={z:.4g}")
    return xs, Mp, psi


def energy_identity_schrodinger(mdl: SchrodingerModel, fld: WeylField, x_start: Optional[float] = None) -> float:
    """Relative gap in Im M+(x) = Im z (int_x^inf psi* psi), psi' = M+ psi, psi(x) = I"""
    x_start = mdl.x0 if x_start is None else x_start
    xs, Mp, psi = _energy_pieces(mdl, fld, x_start)
    density = adjoint(psi) @ psi
    tail = adjoint(psi[-1]) @ psi[-1] / (2 * decaying_root(fld.z).imag)
    total = simpson(density, x=xs, axis=0) + tail
    lhs = imag_part(Mp[0])
    return op_norm(lhs - fld.z.imag * total) / op_norm(lhs)


def energy_identity_dirac(mdl: DiracModel, fld: WeylField, x_start: Optional[float] = None) -> float:
    """Same identity with psi = [psi1; M+ psi1] and the free tail psi1* psi1 / Im z"""
    x_start = mdl.x0 if x_start is None else x_start
    xs, Mp, psi = _energy_pieces(mdl, fld, x_start)
    density = adjoint(psi) @ (identity(mdl.m) + adjoint(Mp) @ Mp) @ psi
    tail = adjoint(psi[-1]) @ psi[-1] / abs(fld.z.imag)
    total = simpson(density, x=xs, axis=0) + tail
    lhs = imag_part(Mp[0])
    return op_norm(lhs - fld.z.imag * total) / op_norm(lhs)


def local_closeness_probe(
    mdl1: Model,
    mdl2: Model,
    x0: float,
    a: float,
    ray_angle: float,
    moduli: Sequence[float],
) -> ClosenessEstimate:
    """Fit log(|dg| + |dg'|) at x0 against -2 Im sqrt(z) (Schrödinger) or -2 Im z (Dirac)"""
    if type(mdl1) is not type(mdl2) or not mdl1.same_grid(mdl2):
        raise ValidationError("models must be of one kind on one grid")
    j = mdl1.index(x0)
    if not 0 < math.sin(ray_angle):
        raise ValidationError(f"ray angle {ray_angle} is not in (0, pi)")
    moduli = np.sort(np.asarray(moduli, dtype=float))
    if moduli.size < 3 or np.log10(moduli[-1] / moduli[0]) < 2 - 1e-9:
        raise InsufficientDecades("moduli must number at least three and span two decades")
    lo, hi = mdl1.index(x0 - a) if a > 0 else j, mdl1.index(x0 + a) if a > 0 else j
    names = ("B11", "B12") if isinstance(mdl1, DiracModel) else ("Q",)
    same = all(
        np.array_equal(getattr(mdl1, name)[lo:hi + 1], getattr(mdl2, name)[lo:hi + 1]) for name in names
    )
    if not same:
        raise ValidationError(f"models differ inside [{x0 - a}, {x0 + a}]")

    zs = moduli * np.exp(1j * ray_angle)
    fields1, fields2 = evolve_many(mdl1, zs), evolve_many(mdl2, zs)
    dirac = isinstance(mdl1, DiracModel)
    # the fields carry the integrator's relative error, not machine epsilon
    noise = NOISE_FACTOR * max(ODE_RTOL, np.finfo(float).eps)
    xs, ys = [], []
    for z, f1, f2 in zip(zs, fields1, fields2):
        g1, d1 = diag_green(f1, mdl1).at(x0)
        g2, d2 = diag_green(f2, mdl2).at(x0)
        pair = f1.at(x0)
        delta = op_norm(g1 - g2) + op_norm(d1 - d2)
        scale = op_norm(g1) * (1 + op_norm(pair.M_plus) + op_norm(pair.M_minus)) + op_norm(d1)
        if delta <= noise * scale:
            break
        xs.append(-2 * (z.imag if dirac else decaying_root(z).imag))
        ys.append(math.log(delta))
    # a last point that no longer decreases sits on the noise plateau
    while len(ys) >= 2 and ys[-1] >= ys[-2]:
        xs.pop()
        ys.pop()
    variable = "-2 Im z" if dirac else "-2 Im sqrt(z)"
    if not xs:
        logger.info("model data agree to integrator noise along the ray")
        return ClosenessEstimate(math.inf, math.inf, 0, variable, ["identical to noise"])
    if len(xs) < 3:
        raise InsufficientDecades(f"only {len(xs)} samples rise above the noise floor")
    slope = float(np.polyfit(xs, ys, 1)[0])
    flags = [] if slope >= 0.9 * a else ["decays slower than the agreement interval predicts"]
    logger.debug(f"closeness probe: slope {slope:.3f} from {len(xs)} points ({variable})")
    return ClosenessEstimate(slope, slope, len(xs), variable, flags)
