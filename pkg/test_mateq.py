"""
Sylvester and Riccati solvers against scipy and closed forms.
"""
import math

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_hermitian, random_pd
from errors import (
    ContractionViolated,
    NotAccretive,
    NotASolution,
    SpectraMisplaced,
    SpectraOnContour,
    SpectraOverlap,
)
from matalg import Contour, op_norm
from mateq import (
    RiccatiProblem,
    SpectrumLocation,
    SylvesterProblem,
    accretive_bound_check,
    herglotz_spectrum_check,
    riccati_fixed_point,
    riccati_perturbation_gap,
    riccati_residual,
    sylvester_contour,
    sylvester_direct,
    sylvester_residual,
)


def separated_problem(rng: np.random.Generator, n: int) -> SylvesterProblem:
    A = 0.3 * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) + 3j * np.eye(n)
    B = 0.3 * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) - 3j * np.eye(n)
    C = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return SylvesterProblem(A, B, C)


def contractive_problem(rng: np.random.Generator, n: int, norm: float = 0.4) -> RiccatiProblem:
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return RiccatiProblem(norm * A / op_norm(A), norm * B / op_norm(B))


def test_sylvester_direct_matches_scipy(rng):
    p = separated_problem(rng, 4)
    X = sylvester_direct(p)
    reference = la.solve_sylvester(p.A, -p.B, p.C)
    assert op_norm(X - reference) <= 1e-10 * op_norm(reference)
    assert sylvester_residual(p, X) <= 1e-10 * (1 + op_norm(p.C))


def test_sylvester_scalar_closed_form():
    p = SylvesterProblem(2j, -1j, 3.0)
    assert complex(sylvester_direct(p)[0, 0]) == pytest.approx(1.0 / 1j)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4))
def test_sylvester_contour_agrees_with_direct(seed, n):
    p = separated_problem(np.random.default_rng(seed), n)
    direct = sylvester_direct(p)
    contour = sylvester_contour(p)
    assert op_norm(direct - contour) <= 1e-8 * max(1.0, op_norm(direct))


def test_sylvester_overlapping_spectra():
    A = np.diag([1.0 + 1j, 2.0])
    with pytest.raises(SpectraOverlap):
        sylvester_direct(SylvesterProblem(A, A, np.eye(2)))


def test_sylvester_contour_through_eigenvalue():
    p = SylvesterProblem(np.diag([1j, 0.5j]), -2j * np.eye(2), np.eye(2))
    with pytest.raises(SpectraOnContour):
        sylvester_contour(p, Contour(center=0, radius=1.0))


def test_sylvester_contour_missing_spectrum():
    p = SylvesterProblem(np.diag([1j, 0.5j]), -2j * np.eye(2), np.eye(2))
    with pytest.raises(SpectraMisplaced):
        sylvester_contour(p, Contour(center=5.0, radius=1.0))


def test_accretive_bound_holds(rng):
    delta = 0.7
    n = 3
    A = delta / 2 * np.eye(n) + random_pd(rng, n, 0.0, 1.0) + 1j * random_hermitian(rng, n)
    B = -(delta / 2 * np.eye(n) + random_pd(rng, n, 0.0, 1.0)) + 1j * random_hermitian(rng, n)
    C = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    p = SylvesterProblem(A, B, C)
    assert accretive_bound_check(p, delta, sylvester_direct(p))


def test_accretive_bound_rejects_large_delta(rng):
    p = SylvesterProblem(0.1 * np.eye(2), -0.1 * np.eye(2), np.eye(2))
    with pytest.raises(NotAccretive):
        accretive_bound_check(p, 1.0, np.eye(2))


def test_riccati_scalar_closed_form():
    # x = x^2/4 + 1/4 has the unit-ball root 2 - sqrt(3)
    X = riccati_fixed_point(RiccatiProblem(0.25, 0.25))
    assert complex(X[0, 0]) == pytest.approx(2 - math.sqrt(3), abs=1e-11)


def test_riccati_iterates_contract(rng):
    p = contractive_problem(rng, 3)
    history = []
    X = riccati_fixed_point(p, history=history)
    assert riccati_residual(p, X) <= 1e-11
    assert op_norm(X) < 1
    steps = [op_norm(b - a) for a, b in zip(history, history[1:])]
    for previous, current in zip(steps, steps[1:]):
        assert current <= 0.9 * previous + 1e-15


def test_riccati_refuses_non_contractive():
    with pytest.raises(ContractionViolated):
        riccati_fixed_point(RiccatiProblem(0.6 * np.eye(2), 0.1 * np.eye(2)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3), size=st.floats(1e-4, 0.05))
def test_riccati_perturbation_bound(seed, n, size):
    rng = np.random.default_rng(seed)
    p1 = contractive_problem(rng, n, 0.3)
    p2 = RiccatiProblem(
        p1.A + size * random_hermitian(rng, n) / n,
        p1.B + size * random_hermitian(rng, n) / n,
    )
    X1, X2 = riccati_fixed_point(p1), riccati_fixed_point(p2)
    assert riccati_perturbation_gap(p1, p2, X1, X2) >= -1e-12


def test_riccati_perturbation_needs_solutions(rng):
    p = contractive_problem(rng, 2)
    X = riccati_fixed_point(p)
    with pytest.raises(NotASolution):
        riccati_perturbation_gap(p, p, X, X + 0.1)


def test_herglotz_spectrum_check():
    assert herglotz_spectrum_check(1j * np.eye(2)) == SpectrumLocation.STRICTLY_UPPER
    assert herglotz_spectrum_check(np.diag([1j, 0.0])) == SpectrumLocation.ON_OR_BELOW
    assert herglotz_spectrum_check(np.diag([1j, -1j])) == SpectrumLocation.ON_OR_BELOW
