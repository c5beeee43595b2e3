"""
Dense complex matrix kernel: imaginary parts, spectra, norms, guarded inversion
and trapezoid quadrature on circles.
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import scipy.linalg as la

import config
from config import COND_LIMIT, EIG_TOL
from errors import (
    NonConvergence,
    NotPositiveDefinite,
    SingularMatrix,
    SpectraMisplaced,
    ValidationError,
)

logger = logging.getLogger(__name__)

CMatrix = npt.NDArray[np.complex128]


def as_cmatrix(M, name: str = "matrix") -> CMatrix:
    """Coerce to a finite square complex matrix (scalars become 1x1)"""
    arr = np.array(M, dtype=complex)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise ValidationError(f"{name} must be a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    return arr


def identity(m: int) -> CMatrix:
    return np.eye(m, dtype=complex)


def adjoint(M: CMatrix) -> CMatrix:
    return np.conj(np.swapaxes(M, -1, -2))


def imag_part(M: CMatrix) -> CMatrix:
    """(M - M*)/(2i), Hermitian by construction"""
    return (M - adjoint(M)) / 2j


def hermitian_part(M: CMatrix) -> CMatrix:
    return (M + adjoint(M)) / 2


def is_hermitian(M: CMatrix, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(M - adjoint(M)), initial=0.0) <= tol * max(1.0, op_norm(M)))


def op_norm(M: CMatrix) -> float:
    """Spectral norm (largest singular value)"""
    return float(la.norm(M, 2))


def spectrum(M: CMatrix, tol: float = EIG_TOL) -> npt.NDArray[np.complex128]:
    """Eigenvalues with multiplicity, certified by eigenpair residuals"""
    try:
        w, v = la.eig(M)
    except la.LinAlgError as exc:
        raise NonConvergence(f"eigensolver failed: {exc}") from exc
    scale = op_norm(M)
    residuals = np.linalg.norm(M @ v - v * w, axis=0) / np.linalg.norm(v, axis=0)
    worst = float(np.max(residuals, initial=0.0))
    if worst > tol * scale + np.finfo(float).tiny:
        raise NonConvergence(f"eigenpair residual {worst:.3e} exceeds {tol:.1e} x {scale:.3e}")
    return w


def inverse(M: CMatrix, cond_limit: float = COND_LIMIT) -> CMatrix:
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMatrix(f"condition estimate {cond:.3e} exceeds limit {cond_limit:.1e}")
    return la.inv(M)


def herm_sqrt(M: CMatrix) -> CMatrix:
    """Positive square root of a Hermitian positive definite matrix"""
    w, v = la.eigh(hermitian_part(M))
    if w[0] <= 0:
        raise NotPositiveDefinite(f"smallest eigenvalue {w[0]:.3e} is not positive")
    return (v * np.sqrt(w)) @ adjoint(v)


class Orientation(str, Enum):
    COUNTERCLOCKWISE = "counterclockwise"
    CLOCKWISE = "clockwise"


@dataclass(frozen=True)
class Contour:
    """Circle used for trapezoid Cauchy integrals"""

    center: complex
    radius: float
    nodes: int = field(default_factory=lambda: config.CONTOUR_NODES)
    orientation: Orientation = Orientation.COUNTERCLOCKWISE

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError(f"contour radius must be positive, got {self.radius}")
        if self.nodes < 16:
            raise ValidationError(f"contour needs at least 16 nodes, got {self.nodes}")

    @property
    def sign(self) -> int:
        return 1 if self.orientation == Orientation.COUNTERCLOCKWISE else -1

    def with_nodes(self, nodes: int) -> "Contour":
        return replace(self, nodes=nodes)

    def winding(self, point: complex) -> int:
        return self.sign if abs(point - self.center) < self.radius else 0

    def distance(self, point: complex) -> float:
        return abs(abs(point - self.center) - self.radius)


def contour_nodes(c: Contour) -> Tuple[npt.NDArray[np.complex128], npt.NDArray[np.complex128]]:
    """Points and weights so that sum(w * f(p)) approximates (2 pi i)^-1 of the contour integral"""
    theta = 2 * np.pi * np.arange(c.nodes) / c.nodes
    offsets = c.radius * np.exp(1j * theta)
    return c.center + offsets, c.sign * offsets / c.nodes


def contour_quadrature(
    integrand: Callable[[np.ndarray], np.ndarray],
    c: Contour,
    tol: Optional[float] = None,
    max_nodes: Optional[int] = None,
) -> Tuple[np.ndarray, int]:
    """Trapezoid rule with node doubling until two successive values agree.

    ``integrand`` maps an array of points to an array whose leading axis runs over the
    points. Returns the value and the node count that achieved agreement.
    """
    tol = config.CONTOUR_TOL if tol is None else tol
    max_nodes = config.CONTOUR_MAX_NODES if max_nodes is None else max_nodes

    def rule(contour: Contour) -> Tuple[np.ndarray, float]:
        points, weights = contour_nodes(contour)
        values = integrand(points)
        size = np.linalg.norm(np.tensordot(np.abs(weights), np.abs(values), axes=(0, 0)))
        return np.tensordot(weights, values, axes=(0, 0)), float(size)

    current, _ = rule(c)
    nodes = c.nodes
    while nodes < max_nodes:
        nodes *= 2
        refined, size = rule(c.with_nodes(nodes))
        gap = np.linalg.norm(refined - current)
        # gap measured against the integrand size as well as the value
        if gap <= tol * max(np.linalg.norm(refined), size, np.finfo(float).tiny):
            logger.debug(f"contour quadrature converged with {nodes} nodes (gap {gap:.2e})")
            return refined, nodes
        current = refined
    raise NonConvergence(f"contour quadrature did not settle within {max_nodes} nodes")


def separating_circle(
    inside: Sequence[complex],
    outside: Sequence[complex],
    nodes: Optional[int] = None,
) -> Contour:
    """Circle about the mean of ``inside`` halfway between its spread and ``outside``"""
    nodes = config.CONTOUR_NODES if nodes is None else nodes
    inside = np.asarray(inside, dtype=complex)
    outside = np.asarray(outside, dtype=complex)
    center = complex(np.mean(inside))
    spread = float(np.max(np.abs(inside - center)))
    gap = float(np.min(np.abs(outside - center))) if outside.size else np.inf
    if gap <= spread:
        raise SpectraMisplaced(
            f"no circle about {center:.4g} separates spectra (spread {spread:.3e}, nearest outside {gap:.3e})"
        )
    if not np.isfinite(gap):
        gap = 2 * spread + 1.0
    return Contour(center=center, radius=(spread + gap) / 2, nodes=nodes)
