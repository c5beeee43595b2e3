"""
Inverse theory for matrix Jacobi operators: recover M+ and M- at a site from
Green's-matrix data, pass to the half-line m-functions and their spectral measures,
and rebuild A(k), B(k) with matrix orthogonal polynomials.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la

from config import (
    HALFLINE_MAX_L,
    MOMENT_CAP,
    NOISE_FACTOR,
    PIVOT_TOL,
    RAY_LEVEL_TOL,
    RAY_MOMENTS,
)
from errors import (
    ContractionViolated,
    DegenerateMeasure,
    InsufficientDecades,
    NoDecay,
    NotPositiveDefinite,
    RealAxis,
    SingularMatrix,
    SpectraMisplaced,
    SpectraOverlap,
    UsageError,
    ValidationError,
    WindowTooSmall,
)
from jacobi_forward import (
    GreensSample,
    JacobiCoeffs,
    Side,
    WeylPair,
    dense_operator,
    greens_sample,
)
from matalg import (
    CMatrix,
    adjoint,
    herm_sqrt,
    hermitian_part,
    identity,
    inverse,
    op_norm,
)
from mateq import (
    RiccatiProblem,
    SpectrumLocation,
    SylvesterProblem,
    herglotz_spectrum_check,
    riccati_fixed_point,
    sylvester_contour,
    sylvester_direct,
)

logger = logging.getLogger(__name__)

Window = Optional[Tuple[int, int]]
# window value when the data agree to noise: every site on the compared sides agrees
UNBOUNDED = "unbounded"


class Case(str, Enum):
    I = "i"
    II = "ii"
    III = "iii"


class AgreementMode(str, Enum):
    MINUS = "minus"
    PLUS = "plus"
    CASE_I = "case_i"
    CASE_II = "case_ii"
    CASE_III = "case_iii"


@dataclass(frozen=True)
class SpectralMeasure:
    """Finite point-mass matrix measure sum_j W_j delta(lambda_j), sum_j W_j = I"""

    m: int
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=complex).reshape(points.size, self.m, self.m)
        if points.size == 0:
            raise ValidationError("spectral measure needs at least one atom")
        if np.any(np.diff(points) <= 0):
            raise ValidationError("atoms must be strictly increasing")
        for j, W in enumerate(weights):
            if np.max(np.abs(W - adjoint(W))) > 1e-12:
                raise ValidationError(f"weight {j} is not Hermitian")
            if la.eigvalsh(hermitian_part(W))[0] < -1e-12:
                raise ValidationError(f"weight {j} is not positive semidefinite")
        total = weights.sum(axis=0)
        if op_norm(total - identity(self.m)) > 1e-10:
            raise ValidationError("weights must sum to the identity")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def atoms(self) -> List[Tuple[float, CMatrix]]:
        return list(zip(self.points.tolist(), self.weights))

    def stieltjes(self, z: complex) -> CMatrix:
        return np.einsum("n,nij->ij", 1 / (self.points - z), self.weights)


@dataclass
class ReconstructionReport:
    A: Dict[int, CMatrix]
    B: Dict[int, CMatrix]
    valid_A_range: Window
    valid_B_range: Window
    residuals: Dict[str, float] = field(default_factory=dict)
    metadata: Dict[str, object] = field(default_factory=dict)

    def to_coeffs(self) -> JacobiCoeffs:
        m = next(iter(self.B.values())).shape[0]
        return JacobiCoeffs.from_maps(self.A, self.B, m=m)

    def max_error(self, c: JacobiCoeffs) -> float:
        """Largest coefficient error against a known operator over the valid windows"""
        errors = [op_norm(self.A[k] - c.A_at(k)) for k in self.A]
        errors += [op_norm(self.B[k] - c.B_at(k)) for k in self.B]
        return max(errors, default=0.0)


@dataclass
class AgreementEstimate:
    """Fitted agreement order and the sites it certifies.

    A window is a closed site range, None when nothing is certified, or UNBOUNDED when
    the data difference never rises above the noise floor.
    """

    n_est: float
    order: Optional[int]
    slope: float
    windows: Dict[str, Union[Window, str]]
    points_used: int
    flags: List[str] = field(default_factory=list)


# Sampling geometry

def ray_points(angle: float, lo: float, hi: float, count: int) -> np.ndarray:
    return np.geomspace(lo, hi, count) * np.exp(1j * angle)


def ring_points(radius: float, count: int) -> np.ndarray:
    """Upper semicircle nodes; with their conjugates they form an equispaced full circle"""
    return radius * np.exp(1j * np.pi * (np.arange(count) + 0.5) / count)


def sample_geometry(zs: Sequence[complex]) -> str:
    zs = np.asarray(zs, dtype=complex)
    if zs.size >= 2:
        angles = np.angle(zs)
        if np.ptp(angles) <= 1e-9:
            return "ray"
        radii = np.abs(zs)
        if np.ptp(radii) <= 1e-9 * np.max(radii):
            return "ring"
    return "list"


def _decades(zs: Sequence[complex]) -> float:
    radii = np.abs(np.asarray(zs, dtype=complex))
    return float(np.log10(radii.max() / radii.min()))


def _require_ray(zs: Sequence[complex], minimum: int = 3) -> None:
    if len(zs) < minimum:
        raise InsufficientDecades(f"need at least {minimum} samples, got {len(zs)}")
    if sample_geometry(zs) != "ray":
        raise ValidationError("samples are not on a single ray")
    if _decades(zs) < 2 - 1e-9:
        raise InsufficientDecades(f"|z| spans {_decades(zs):.2f} decades, need 2")


def _richardson(zs: Sequence[complex], values: Sequence[CMatrix]) -> CMatrix:
    """Constant term of a + c/z from the two largest |z|"""
    order = np.argsort(np.abs(np.asarray(zs)))[::-1]
    z1, z2 = zs[order[0]], zs[order[1]]
    return (z1 * values[order[0]] - z2 * values[order[1]]) / (z1 - z2)


# Weyl matrices from Green's data

def extract_A0(samples: Sequence[GreensSample], symmetrized: bool = False) -> CMatrix:
    """A(k0) as the limit of -z^2 G(z, k0, k0+1) along a ray, one Richardson step"""
    zs = [s.z for s in samples]
    _require_ray(zs)
    if symmetrized:
        values = [-(s.z ** 2) * (s.G01 + s.G10) / 2 for s in samples]
    else:
        values = [-(s.z ** 2) * s.G01 for s in samples]
    A0 = hermitian_part(_richardson(zs, values))
    low = la.eigvalsh(A0)[0]
    if low <= 0:
        raise NotPositiveDefinite(f"estimated A(k0) has eigenvalue {low:.3e}")
    return A0


def recover_weyl_case_i(s: GreensSample, A0: CMatrix) -> WeylPair:
    g_inv = inverse(s.g0)
    M_plus = -g_inv @ s.G01 @ A0
    return WeylPair(s.z, s.k0, M_plus, M_plus + g_inv)


def recover_weyl_case_ii(s: GreensSample, A0: CMatrix) -> WeylPair:
    """Solve -A0^-1 M+ g0 - g0 M+ A0^-1 = G01 + G10 in the separated form h X + X h = C"""
    root = herm_sqrt(A0)
    h = root @ s.g0 @ root
    if herglotz_spectrum_check(h) != SpectrumLocation.STRICTLY_UPPER:
        raise SpectraOverlap(f"A0^1/2 g0 A0^1/2 is not spectrally in the upper half-plane at z={s.z:.4g}")
    problem = SylvesterProblem(h, -h, -root @ (s.G01 + s.G10) @ root)
    X = sylvester_direct(problem)
    try:
        X_contour = sylvester_contour(problem)
        gap = op_norm(X - X_contour)
        if gap > 1e-8 * max(op_norm(X), 1e-300):
            logger.warning(f"case ii: direct and contour solutions differ by {gap:.2e} at z={s.z:.4g}")
    except SpectraMisplaced as exc:
        logger.warning(f"case ii: no separating circle at z={s.z:.4g} ({exc}); using direct solve")
    M_plus = root @ X @ root
    return WeylPair(s.z, s.k0, M_plus, M_plus + inverse(s.g0))


def recover_weyl_case_iii(
    g0: CMatrix, g1: CMatrix, A0: CMatrix, z: complex, k0: int = 0
) -> WeylPair:
    """Unit-ball solution of M+ + M+ g0 M+ = A0 g1 A0"""
    z = complex(z)
    if z.imag <= 0:
        raise RealAxis(f"case iii needs Im z > 0, got {z}")
    rhs = A0 @ g1 @ A0
    if op_norm(g0) >= 0.5 or op_norm(rhs) >= 0.5:
        raise ContractionViolated(
            f"|g0| = {op_norm(g0):.3f}, |A0 g1 A0| = {op_norm(rhs):.3f} at z={z:.4g}; increase |z|"
        )
    M_plus = riccati_fixed_point(RiccatiProblem(-g0, rhs))
    return WeylPair(z, k0, M_plus, M_plus + inverse(g0))


def recover_weyl(s: GreensSample, case: Case, A0: CMatrix) -> WeylPair:
    case = Case(case)
    if case == Case.I:
        return recover_weyl_case_i(s, A0)
    if case == Case.II:
        return recover_weyl_case_ii(s, A0)
    return recover_weyl_case_iii(s.g0, s.g1, A0, s.z, s.k0)


def estimate_B0(pairs: Sequence[WeylPair]) -> CMatrix:
    """B(k0) as the limit of M-(z) + z"""
    zs = [p.z for p in pairs]
    values = [p.M_minus + p.z * identity(p.M_minus.shape[0]) for p in pairs]
    return hermitian_part(_richardson(zs, values))


# Spectral measures and moments

def measure_from_halfline(c: JacobiCoeffs, k0: int, sign: Side, L: int) -> SpectralMeasure:
    """Spectral measure of the Dirichlet half-line truncation with L sites, seen from k0"""
    sign = Side(sign)
    extent = max(0, c.k_max - k0 + 1) if sign == Side.PLUS else max(0, k0 - c.k_min + 1)
    if L < extent + 20:
        raise ValidationError(f"truncation length {L} is shorter than support extent {extent} + 20")
    m = c.m
    if sign == Side.PLUS:
        H = dense_operator(c, k0, k0 + L - 1)
    else:
        H = dense_operator(c, k0 - L + 1, k0)
    evals, evecs = la.eigh(H)
    block = evecs[:m, :] if sign == Side.PLUS else evecs[-m:, :]

    points: List[float] = []
    weights: List[CMatrix] = []
    for lam, v in zip(evals, block.T):
        W = np.outer(v, np.conj(v))
        if points and abs(lam - points[-1]) <= 1e-10 * max(1.0, abs(lam)):
            weights[-1] = weights[-1] + W
        else:
            points.append(float(lam))
            weights.append(W)
    weights_arr = np.array([hermitian_part(W) for W in weights])
    correction = inverse(herm_sqrt(weights_arr.sum(axis=0)))
    weights_arr = correction @ weights_arr @ correction
    return SpectralMeasure(m=m, points=np.array(points), weights=weights_arr)


def matrix_moments(mu: SpectralMeasure, N: int) -> List[CMatrix]:
    if N < 0:
        raise ValidationError("moment order must be non-negative")
    return [hermitian_part(np.einsum("n,nij->ij", mu.points ** n, mu.weights)) for n in range(N + 1)]


def stabilize_halfline_measure(
    c: JacobiCoeffs,
    k0: int,
    sign: Side,
    K: int,
    L: Optional[int] = None,
    tol: float = 1e-9,
    max_L: int = HALFLINE_MAX_L,
) -> SpectralMeasure:
    """Double the truncation length until the first 2K+2 moments settle"""
    sign = Side(sign)
    extent = max(0, c.k_max - k0 + 1) if sign == Side.PLUS else max(0, k0 - c.k_min + 1)
    L = max(L or 0, extent + 20, K + 2)
    current = measure_from_halfline(c, k0, sign, L)
    while 2 * L <= max_L:
        L *= 2
        refined = measure_from_halfline(c, k0, sign, L)
        old, new = matrix_moments(current, 2 * K + 2), matrix_moments(refined, 2 * K + 2)
        gap = max(op_norm(a - b) / max(1.0, op_norm(b)) for a, b in zip(old, new))
        if gap <= tol:
            logger.debug(f"half-line measure settled at L={L}")
            return refined
        current = refined
    raise DegenerateMeasure(f"moments of order {2 * K + 2} did not settle by L={L} (cap {max_L})")


class _AtomBasis:
    """Matrix polynomials represented by their values at the atoms"""

    def __init__(self, mu: SpectralMeasure):
        self.mu = mu
        self.m = mu.m
        self.scale = max(1.0, float(np.max(np.abs(mu.points))) ** 2)

    def one(self) -> np.ndarray:
        return np.broadcast_to(identity(self.m), self.mu.weights.shape).copy()

    def zero(self) -> np.ndarray:
        return np.zeros_like(self.mu.weights)

    def times_lambda(self, P: np.ndarray) -> np.ndarray:
        return self.mu.points[:, None, None] * P

    def inner(self, P: np.ndarray, Q: np.ndarray) -> CMatrix:
        return np.einsum("nab,nbc,ndc->ad", P, self.mu.weights, np.conj(Q))


class _MomentBasis:
    """Matrix polynomials as coefficient stacks; the functional acts through Hankel moments"""

    def __init__(self, moments: Sequence[CMatrix]):
        self.m = moments[0].shape[0]
        self.N = len(moments) - 1
        self.size = self.N + 1
        padded = np.zeros((2 * self.size - 1, self.m, self.m), dtype=complex)
        padded[: self.N + 1] = moments
        idx = np.add.outer(np.arange(self.size), np.arange(self.size))
        self.hankel = padded[idx]
        self.scale = 1.0

    def one(self) -> np.ndarray:
        P = self.zero()
        P[0] = identity(self.m)
        return P

    def zero(self) -> np.ndarray:
        return np.zeros((self.size, self.m, self.m), dtype=complex)

    def times_lambda(self, P: np.ndarray) -> np.ndarray:
        out = self.zero()
        out[1:] = P[:-1]
        return out

    def inner(self, P: np.ndarray, Q: np.ndarray) -> CMatrix:
        return np.einsum("iab,ijbc,jdc->ad", P, self.hankel, np.conj(Q))


def _block_stieltjes(basis, n_B: int, n_A: int, pivot_tol: float = PIVOT_TOL):
    """Recurrence coefficients B_0..B_{n_B-1}, A_0..A_{n_A-1} with re-orthogonalization"""
    m = basis.m
    P_prev, A_prev = basis.zero(), np.zeros((m, m), dtype=complex)
    P = basis.one()
    polys = [P]
    Bs: List[CMatrix] = []
    As: List[CMatrix] = []
    for k in range(n_B):
        lam_P = basis.times_lambda(P)
        B_k = hermitian_part(basis.inner(lam_P, P))
        Bs.append(B_k)
        if k >= n_A:
            break
        R = lam_P - B_k @ P - A_prev @ P_prev
        for Pj in polys:
            R = R - basis.inner(R, Pj) @ Pj
        gram = hermitian_part(basis.inner(R, R))
        low = la.eigvalsh(gram)[0]
        if low <= pivot_tol * basis.scale:
            raise DegenerateMeasure(f"Gram block at degree {k + 1} is singular (eigenvalue {low:.3e})")
        A_k = herm_sqrt(gram)
        As.append(A_k)
        P_prev, A_prev = P, A_k
        P = inverse(A_k) @ R
        polys.append(P)
    defect = max(
        (op_norm(basis.inner(Pi, Pj) - (identity(m) if i == j else 0))
         for i, Pi in enumerate(polys) for j, Pj in enumerate(polys)),
        default=0.0,
    )
    return Bs, As, defect


def _place(
    Bs: Sequence[CMatrix], As: Sequence[CMatrix], k0: int, sign: Side
) -> Tuple[Dict[int, CMatrix], Dict[int, CMatrix], Window, Window]:
    if Side(sign) == Side.PLUS:
        B = {k0 + k: b for k, b in enumerate(Bs)}
        A = {k0 + k: a for k, a in enumerate(As)}
    else:
        B = {k0 - k: b for k, b in enumerate(Bs)}
        A = {k0 - k - 1: a for k, a in enumerate(As)}
    window = lambda d: (min(d), max(d)) if d else None  # noqa: E731
    return A, B, window(A), window(B)


def reconstruct_coeffs(mu: SpectralMeasure, K: int, k0: int, sign: Side) -> ReconstructionReport:
    """B(k0 +/- k) for k <= K and A for k < K from the atoms of a half-line measure"""
    Bs, As, defect = _block_stieltjes(_AtomBasis(mu), K + 1, K)
    A, B, wa, wb = _place(Bs, As, k0, sign)
    return ReconstructionReport(
        A=A, B=B, valid_A_range=wa, valid_B_range=wb,
        residuals={"orthonormality": defect},
        metadata={"side": Side(sign).value, "atoms": int(mu.points.size), "K": K},
    )


def reconstruct_from_moments(
    moments: Sequence[CMatrix], k0: int, sign: Side
) -> ReconstructionReport:
    """Same recursion driven by S_0..S_N; windows follow from N"""
    N = len(moments) - 1
    n_B, n_A = (N + 1) // 2, N // 2
    scale = math.sqrt(op_norm(moments[2])) if N >= 2 and op_norm(moments[2]) > 0 else 1.0
    scaled = [S / scale ** n for n, S in enumerate(moments)]
    Bs, As, defect = _block_stieltjes(_MomentBasis(scaled), n_B, n_A)
    A, B, wa, wb = _place([b * scale for b in Bs], [a * scale for a in As], k0, sign)
    return ReconstructionReport(
        A=A, B=B, valid_A_range=wa, valid_B_range=wb,
        residuals={"orthonormality": defect},
        metadata={"side": Side(sign).value, "moments": N, "scale": scale},
    )


def fit_laurent(
    zs: Sequence[complex],
    values: Sequence[CMatrix],
    powers: Sequence[int],
    hermitian: bool = True,
) -> List[CMatrix]:
    """Least-squares coefficients c_n of sum_n c_n z^-n over the given powers.

    With ``hermitian`` the conjugate points carry the adjoint values, so a ring of
    samples becomes an equispaced full circle and the fit is the trapezoid rule.
    """
    zs = np.asarray(zs, dtype=complex)
    vals = np.asarray(values, dtype=complex)
    m = vals.shape[-1]
    if hermitian:
        zs = np.concatenate([zs, np.conj(zs)])
        vals = np.concatenate([vals, np.conj(np.swapaxes(vals, -1, -2))])
    rho = float(np.min(np.abs(zs)))
    powers = list(powers)
    t = rho / zs
    design = np.stack([t ** n for n in powers], axis=1)
    coef, *_ = np.linalg.lstsq(design, vals.reshape(len(zs), m * m), rcond=None)
    return [coef[i].reshape(m, m) * rho ** n for i, n in enumerate(powers)]


def fit_moments(zs: Sequence[complex], m_values: Sequence[CMatrix], N: int) -> List[CMatrix]:
    """S_0 = I and S_1..S_N from z m(z) = -sum_n S_n z^-n"""
    m = np.asarray(m_values[0]).shape[0]
    eye = identity(m)
    shifted = [z * v + eye for z, v in zip(zs, m_values)]
    fitted = fit_laurent(zs, shifted, range(1, N + 1))
    return [eye] + [hermitian_part(-c) for c in fitted]


def _default_moment_count(geometry: str, count: int) -> int:
    if geometry == "ray":
        return max(2, min(RAY_MOMENTS, count - 2))
    return max(2, min(MOMENT_CAP, 2 * count - 2))


def _estimate_A0(samples: Sequence[GreensSample], geometry: str) -> CMatrix:
    if geometry == "ray":
        return extract_A0(samples)
    zs = [s.z for s in samples]
    values = [-(s.z ** 2) * s.G01 for s in samples]
    # G01(conj z) = G10(z)*, so the fit sees G01 on the full circle
    full_z = zs + [np.conj(z) for z in zs]
    full_v = values + [-(np.conj(s.z) ** 2) * adjoint(s.G10) for s in samples]
    powers = range(0, _default_moment_count(geometry, len(samples)) + 1)
    A0 = hermitian_part(fit_laurent(full_z, full_v, powers, hermitian=False)[0])
    low = la.eigvalsh(A0)[0]
    if low <= 0:
        raise NotPositiveDefinite(f"estimated A(k0) has eigenvalue {low:.3e}")
    return A0


def _half_line_reports(
    zs: Sequence[complex], pairs: Sequence[WeylPair], B0: CMatrix, N: int, k0: int
) -> Tuple[ReconstructionReport, ReconstructionReport]:
    eye = identity(B0.shape[0])
    S_minus = fit_moments(zs, [inverse(p.M_minus) for p in pairs], N)
    S_plus = fit_moments(zs, [inverse(B0 - p.z * eye - p.M_plus) for p in pairs], N)
    return reconstruct_from_moments(S_minus, k0, Side.MINUS), reconstruct_from_moments(S_plus, k0, Side.PLUS)


def _settled_levels(
    fine: ReconstructionReport, coarse: ReconstructionReport, k0: int, sign: Side, tol: float
) -> Tuple[Dict[int, CMatrix], Dict[int, CMatrix]]:
    """Levels of ``fine``, nearest k0 first, up to the first one ``coarse`` does not reproduce"""
    plus = Side(sign) == Side.PLUS

    def depth(level: Tuple[str, int]) -> int:
        name, k = level
        if name == "B":
            return 2 * abs(k - k0)
        return 2 * (k - k0) + 1 if plus else 2 * (k0 - k) - 1

    levels = sorted([("A", k) for k in fine.A] + [("B", k) for k in fine.B], key=depth)
    A: Dict[int, CMatrix] = {}
    B: Dict[int, CMatrix] = {}
    for name, k in levels:
        ours, theirs = (fine.A, coarse.A) if name == "A" else (fine.B, coarse.B)
        if k not in theirs or op_norm(ours[k] - theirs[k]) > tol * max(1.0, op_norm(ours[k])):
            break
        (A if name == "A" else B)[k] = ours[k]
    return A, B


def _window(levels: Dict[int, CMatrix]) -> Window:
    return (min(levels), max(levels)) if levels else None


def invert_from_greens(
    samples: Sequence[GreensSample],
    case: Case,
    A0_hint: Optional[CMatrix] = None,
    n_moments: Optional[int] = None,
) -> ReconstructionReport:
    """Coefficients around k0 from Green's data at k0 (and k0 + 1).

    Rings are integrated by the trapezoid rule and every fitted level is reported. On a
    ray A(k0) and B(k0) come from Richardson limits at the largest |z|; a deeper level is
    kept only while fits with N and N - 1 moments agree on it to RAY_LEVEL_TOL, walking
    outward from k0 and stopping at the first level that moves.
    """
    case = Case(case)
    if not samples:
        raise ValidationError("no samples")
    k0 = samples[0].k0
    if any(s.k0 != k0 for s in samples):
        raise ValidationError("samples refer to different sites")
    if case == Case.III and A0_hint is None:
        raise UsageError("case iii needs A(k0) as data: supply an A0 hint")
    zs = [s.z for s in samples]
    if len(set(zs)) != len(zs):
        raise ValidationError("sample points must be distinct")
    geometry = sample_geometry(zs)
    if geometry == "list":
        raise ValidationError("sample points lie neither on one ray nor on one circle")
    if geometry == "ray":
        _require_ray(zs)
    N = n_moments if n_moments is not None else _default_moment_count(geometry, len(samples))
    if N < 2:
        raise WindowTooSmall(f"{N} moments recover fewer than two coefficients")

    A0 = np.asarray(A0_hint, dtype=complex) if A0_hint is not None else _estimate_A0(samples, geometry)
    pairs = [recover_weyl(s, case, A0) for s in samples]
    residuals: Dict[str, float] = {}

    if geometry == "ring":
        B0 = fit_moments(zs, [inverse(p.M_minus) for p in pairs], N)[1]
        minus, plus = _half_line_reports(zs, pairs, B0, N, k0)
        A = {**minus.A, **plus.A}
        B = {**minus.B, **plus.B}
        B[k0] = B0
        residuals["A0_consistency"] = op_norm(A.get(k0, A0) - A0)
    else:
        B0 = estimate_B0(pairs)
        A, B = {k0: A0}, {k0: B0}
        try:
            minus, plus = _half_line_reports(zs, pairs, B0, N, k0)
            coarse_minus, coarse_plus = _half_line_reports(zs, pairs, B0, N - 1, k0)
        except (DegenerateMeasure, NotPositiveDefinite, SingularMatrix) as exc:
            logger.warning(f"ray moments resolve nothing beyond k0 = {k0}: {exc}")
            minus = plus = None
        if minus is not None:
            for fine, coarse, side in ((minus, coarse_minus, Side.MINUS), (plus, coarse_plus, Side.PLUS)):
                levels_A, levels_B = _settled_levels(fine, coarse, k0, side, RAY_LEVEL_TOL)
                A.update({k: v for k, v in levels_A.items() if k != k0})
                B.update({k: v for k, v in levels_B.items() if k != k0})
            residuals["A0_consistency"] = op_norm(plus.A.get(k0, A0) - A0)
        logger.debug(f"ray reconstruction settled {len(A)} A and {len(B)} B levels with N = {N}")

    if minus is not None:
        residuals["orthonormality_minus"] = minus.residuals["orthonormality"]
        residuals["orthonormality_plus"] = plus.residuals["orthonormality"]
        residuals["B0_sides"] = op_norm(plus.B[k0] - B0)
    valid_A, valid_B = _window(A), _window(B)
    report = ReconstructionReport(
        A=A,
        B=B,
        valid_A_range=valid_A,
        valid_B_range=valid_B,
        residuals=residuals,
        metadata={
            "case": case.value,
            "geometry": geometry,
            "moments": N,
            "samples": len(samples),
            "k0": k0,
            "A0_source": "hint" if A0_hint is not None else f"{geometry} fit",
            "level_tol": RAY_LEVEL_TOL if geometry == "ray" else None,
        },
    )
    report.residuals["greens_reproduction"] = greens_reproduction_error(report, samples)
    logger.info(
        f"reconstructed A on {valid_A}, B on {valid_B} from {len(samples)} {geometry} samples "
        f"(case {case.value}, reproduction error {report.residuals['greens_reproduction']:.2e})"
    )
    return report


def greens_reproduction_error(report: ReconstructionReport, samples: Sequence[GreensSample]) -> float:
    """Relative mismatch between the samples and Green's data of the reconstructed operator"""
    coeffs = report.to_coeffs()
    worst = 0.0
    for s in samples:
        rebuilt = greens_sample(coeffs, s.z, s.k0)
        for name in ("g0", "g1", "G01", "G10"):
            ref = getattr(s, name)
            worst = max(worst, op_norm(getattr(rebuilt, name) - ref) / max(op_norm(ref), 1e-300))
    return worst


# Local agreement

def agreement_windows(N: int, k0: int, sides: Sequence[Side]) -> Dict[str, Window]:
    """Sites where A and B must agree once the data agree to order N"""
    n_A = max(0, N // 2)
    n_B = (N - 1) // 2 + 1 if N >= 1 else 0
    windows: Dict[str, Window] = {}
    for side in sides:
        if side == Side.MINUS:
            windows["A_minus"] = (k0 - n_A, k0 - 1) if n_A else None
            windows["B_minus"] = (k0 - n_B + 1, k0) if n_B else None
        else:
            windows["A_plus"] = (k0, k0 + n_A - 1) if n_A else None
            windows["B_plus"] = (k0, k0 + n_B - 1) if n_B else None
    return windows


def _data_difference(
    mode: AgreementMode, s1: GreensSample, s2: GreensSample, p1: Optional[WeylPair], p2: Optional[WeylPair]
) -> Tuple[float, float]:
    if mode == AgreementMode.MINUS:
        return op_norm(p1.M_minus - p2.M_minus), op_norm(p1.M_minus)
    if mode == AgreementMode.PLUS:
        return op_norm(p1.M_plus - p2.M_plus), op_norm(p1.M_plus)
    if mode == AgreementMode.CASE_I:
        other = s1.G01, s2.G01
    elif mode == AgreementMode.CASE_II:
        other = s1.G01 + s1.G10, s2.G01 + s2.G10
    else:
        other = s1.g1, s2.g1
    delta = op_norm(s1.g0 - s2.g0) + op_norm(other[0] - other[1])
    return delta, op_norm(s1.g0) + op_norm(other[0])


def local_agreement_order(
    samples1: Sequence[GreensSample],
    samples2: Sequence[GreensSample],
    mode: AgreementMode,
    A0: Optional[CMatrix] = None,
) -> AgreementEstimate:
    """Decay order of the data difference along a ray and the implied agreement windows"""
    mode = AgreementMode(mode)
    if len(samples1) != len(samples2):
        raise ValidationError("sample sets differ in length")
    zs = np.array([s.z for s in samples1])
    if np.max(np.abs(zs - np.array([s.z for s in samples2]))) > 1e-12 * np.max(np.abs(zs)):
        raise ValidationError("sample sets are not paired at identical z")
    _require_ray(list(zs))
    k0 = samples1[0].k0

    pairs1 = pairs2 = [None] * len(samples1)
    if mode in (AgreementMode.MINUS, AgreementMode.PLUS):
        a1 = A0 if A0 is not None else extract_A0(samples1)
        a2 = A0 if A0 is not None else extract_A0(samples2)
        if op_norm(a1 - a2) <= 1e-6 * op_norm(a1):
            # one estimate for both, so its extrapolation error cancels in the difference
            a2 = a1
        pairs1 = [recover_weyl_case_i(s, a1) for s in samples1]
        pairs2 = [recover_weyl_case_i(s, a2) for s in samples2]

    eps = np.finfo(float).eps
    logs_z, logs_d = [], []
    for s1, s2, p1, p2 in zip(samples1, samples2, pairs1, pairs2):
        delta, scale = _data_difference(mode, s1, s2, p1, p2)
        if delta > NOISE_FACTOR * eps * scale:
            logs_z.append(math.log(abs(s1.z)))
            logs_d.append(math.log(delta))

    sides = {
        AgreementMode.MINUS: [Side.MINUS],
        AgreementMode.PLUS: [Side.PLUS],
    }.get(mode, [Side.MINUS, Side.PLUS])

    flags: List[str] = []
    if mode == AgreementMode.PLUS:
        # M+ does not see B(k0); compare the M- limits instead
        b1, b2 = estimate_B0(pairs1), estimate_B0(pairs2)
        if op_norm(b1 - b2) > 1e-6 * (1 + op_norm(b1)):
            flags.append("B(k0) differs between the operators")

    if not logs_z:
        logger.info("data differences are at machine noise; agreement order unbounded")
        windows = {key: UNBOUNDED for key in agreement_windows(2, k0, sides)}
        if flags:
            windows = {key: None for key in windows}
        return AgreementEstimate(
            n_est=math.inf, order=None, slope=-math.inf, windows=windows,
            points_used=0, flags=["identical to noise"] + flags,
        )
    if len(logs_z) < 3:
        raise InsufficientDecades(f"only {len(logs_z)} samples rise above the noise floor")

    slope = float(np.polyfit(logs_z, logs_d, 1)[0])
    if slope >= -1:
        raise NoDecay(f"data difference decays with slope {slope:.3f}")
    offset = 0 if mode in (AgreementMode.MINUS, AgreementMode.PLUS) else 2
    n_est = -slope - offset
    order = int(round(n_est))
    windows = agreement_windows(order, k0, sides)
    if flags:
        windows = {key: None for key in windows}
    logger.debug(f"local agreement ({mode.value}): slope {slope:.3f}, N = {n_est:.2f}")
    return AgreementEstimate(
        n_est=n_est, order=order, slope=slope, windows=windows,
        points_used=len(logs_z), flags=flags,
    )
