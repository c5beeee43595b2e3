"""
Matrix equations: Sylvester AX - XB = C (direct and contour solutions, accretive
norm bound), the contractive Riccati equation Y = YAY + B and its perturbation
bound, and the Herglotz spectrum-location predicate.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np
import scipy.linalg as la

from config import RICCATI_MAX_ITER, RICCATI_TOL
from errors import (
    ContractionViolated,
    IterationBudgetExceeded,
    NotAccretive,
    NotASolution,
    SingularMatrix,
    SpectraMisplaced,
    SpectraOnContour,
    SpectraOverlap,
    ValidationError,
)
from matalg import (
    CMatrix,
    Contour,
    as_cmatrix,
    contour_quadrature,
    hermitian_part,
    identity,
    op_norm,
    separating_circle,
    spectrum,
)

logger = logging.getLogger(__name__)

SEPARATION_TOL = 1e-8


def _coerce(obj, names):
    mats = [as_cmatrix(getattr(obj, name), name) for name in names]
    if len({M.shape for M in mats}) != 1:
        raise ValidationError(f"{', '.join(names)} must share one dimension")
    for name, M in zip(names, mats):
        object.__setattr__(obj, name, M)


@dataclass(frozen=True)
class SylvesterProblem:
    A: CMatrix
    B: CMatrix
    C: CMatrix

    def __post_init__(self):
        _coerce(self, ("A", "B", "C"))

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class RiccatiProblem:
    """Y = YAY + B; contractive when both norms are below 1/2"""

    A: CMatrix
    B: CMatrix

    def __post_init__(self):
        _coerce(self, ("A", "B"))

    @property
    def is_contractive(self) -> bool:
        return op_norm(self.A) < 0.5 and op_norm(self.B) < 0.5


class SpectrumLocation(str, Enum):
    STRICTLY_UPPER = "strictly_upper"
    ON_OR_BELOW = "on_or_below"


def sylvester_residual(p: SylvesterProblem, X: CMatrix) -> float:
    return op_norm(p.A @ X - X @ p.B - p.C)


def spectral_gap(A: CMatrix, B: CMatrix) -> float:
    ea, eb = spectrum(A), spectrum(B)
    return float(np.min(np.abs(ea[:, None] - eb[None, :])))


def sylvester_direct(p: SylvesterProblem) -> CMatrix:
    """Solve the n^2 x n^2 Kronecker system (I (x) A - B^T (x) I) vec X = vec C"""
    gap = spectral_gap(p.A, p.B)
    if gap <= SEPARATION_TOL * (op_norm(p.A) + op_norm(p.B)):
        raise SpectraOverlap(f"spectra of A and B are {gap:.3e} apart")
    n = p.n
    eye = identity(n)
    kron = np.kron(eye, p.A) - np.kron(p.B.T, eye)
    try:
        vec = la.solve(kron, p.C.reshape(-1, order="F"))
    except la.LinAlgError as exc:
        raise SingularMatrix(f"Kronecker system is singular: {exc}") from exc
    X = vec.reshape(n, n, order="F")
    residual = sylvester_residual(p, X)
    if residual > 1e-10 * (1 + op_norm(p.C)):
        logger.warning(f"Sylvester residual {residual:.2e} above target (gap {gap:.2e})")
    return X


def sylvester_contour(p: SylvesterProblem, contour: Optional[Contour] = None) -> CMatrix:
    """X = (2 pi i)^-1 times the integral of (A - z)^-1 C (B - z)^-1 over a circle around spec(A)"""
    ea, eb = spectrum(p.A), spectrum(p.B)
    if contour is None:
        contour = separating_circle(ea, eb)
    for lam in np.concatenate([ea, eb]):
        if contour.distance(lam) <= 1e-6 * contour.radius:
            raise SpectraOnContour(f"eigenvalue {lam:.6g} lies on the contour")
    if any(contour.winding(lam) != 1 for lam in ea):
        raise SpectraMisplaced("spectrum of A is not enclosed counterclockwise")
    if any(contour.winding(lam) != 0 for lam in eb):
        raise SpectraMisplaced("spectrum of B meets the contour interior")

    n = p.n
    eye = identity(n)

    def integrand(points: np.ndarray) -> np.ndarray:
        shift = points[:, None, None] * eye
        left = np.linalg.solve(p.A - shift, np.broadcast_to(p.C, shift.shape))
        right_t = np.linalg.solve(np.swapaxes(p.B - shift, -1, -2), np.swapaxes(left, -1, -2))
        return np.swapaxes(right_t, -1, -2)

    X, nodes = contour_quadrature(integrand, contour)
    logger.debug(f"sylvester_contour: radius {contour.radius:.3e}, {nodes} nodes")
    return X


def accretive_bound_check(p: SylvesterProblem, delta: float, X: CMatrix) -> bool:
    """|||X||| <= |||C|||/delta for the spectral and Frobenius norms"""
    if delta <= 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    slack = 1e-12 * max(1.0, op_norm(p.A), op_norm(p.B))
    low_a = la.eigvalsh(hermitian_part(p.A))[0] - delta / 2
    low_b = la.eigvalsh(hermitian_part(-p.B))[0] - delta / 2
    if low_a < -slack or low_b < -slack:
        raise NotAccretive(f"A - delta/2 or -B - delta/2 not accretive (margins {low_a:.3e}, {low_b:.3e})")
    rel = 1 + 1e-12
    spectral_ok = op_norm(X) <= rel * op_norm(p.C) / delta + 1e-15
    frobenius_ok = la.norm(X, "fro") <= rel * la.norm(p.C, "fro") / delta + 1e-15
    return bool(spectral_ok and frobenius_ok)


def riccati_residual(p: RiccatiProblem, X: CMatrix) -> float:
    return op_norm(X - X @ p.A @ X - p.B)


def riccati_fixed_point(
    p: RiccatiProblem,
    tol: float = RICCATI_TOL,
    max_iter: int = RICCATI_MAX_ITER,
    history: Optional[List[CMatrix]] = None,
) -> CMatrix:
    """Unit-ball solution of Y = YAY + B by the iteration B_{k+1} = B_k A B_k + B.

    Pass a list as ``history`` to collect the iterates B_0, B_1, ...
    """
    norm_a, norm_b = op_norm(p.A), op_norm(p.B)
    if norm_a >= 0.5 or norm_b >= 0.5:
        raise ContractionViolated(f"norms |A| = {norm_a:.4f}, |B| = {norm_b:.4f} must be below 1/2")
    X = p.B.copy()
    if history is not None:
        history.append(X)
    for step in range(max_iter):
        nxt = X @ p.A @ X + p.B
        if history is not None:
            history.append(nxt)
        if op_norm(X - nxt) <= tol:
            logger.debug(f"riccati_fixed_point converged after {step} steps")
            return X
        X = nxt
    residual = riccati_residual(p, X)
    if residual <= tol:
        return X
    raise IterationBudgetExceeded(f"residual {residual:.3e} after {max_iter} iterations")


def riccati_perturbation_gap(
    p1: RiccatiProblem, p2: RiccatiProblem, X1: CMatrix, X2: CMatrix
) -> float:
    """Slack of |X1 - X2| <= (|A1 - A2| + |B1 - B2|) / (1 - 2 min(|A1|, |A2|))"""
    for label, p, X in (("X1", p1, X1), ("X2", p2, X2)):
        residual = riccati_residual(p, X)
        if residual > 1e-10 or op_norm(X) > 1 + 1e-12:
            raise NotASolution(f"{label} is not a unit-ball solution (residual {residual:.3e})")
    bound = (op_norm(p1.A - p2.A) + op_norm(p1.B - p2.B)) / (
        1 - 2 * min(op_norm(p1.A), op_norm(p2.A))
    )
    return bound - op_norm(X1 - X2)


def herglotz_spectrum_check(M: CMatrix, tol: Optional[float] = None) -> SpectrumLocation:
    if tol is None:
        tol = 1e-10 * max(1.0, op_norm(M))
    if np.all(spectrum(M).imag > tol):
        return SpectrumLocation.STRICTLY_UPPER
    return SpectrumLocation.ON_OR_BELOW
