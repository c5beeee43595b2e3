"""
Shared fixtures: seeded generators, random Hermitian / positive-definite matrices and
the bundled demo operators.
"""
from pathlib import Path

import numpy as np
import pytest

from cli_io import load_operator
from jacobi_forward import JacobiCoeffs

DEMO_DIR = Path(__file__).parent / "demo"


def random_hermitian(rng: np.random.Generator, m: int, scale: float = 1.0) -> np.ndarray:
    X = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    return scale * (X + X.conj().T) / 2


def random_pd(rng: np.random.Generator, m: int, low: float = 0.5, high: float = 1.5) -> np.ndarray:
    """Hermitian with spectrum in [low, high]"""
    Q, _ = np.linalg.qr(rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m)))
    return (Q * rng.uniform(low, high, m)) @ Q.conj().T


def random_jacobi(rng: np.random.Generator, m: int, k_min: int, k_max: int) -> JacobiCoeffs:
    """Mild perturbation of the free operator on [k_min, k_max]"""
    A = {k: random_pd(rng, m, 0.8, 1.3) for k in range(k_min, k_max + 1)}
    B = {k: random_hermitian(rng, m, 0.3) for k in range(k_min, k_max + 1)}
    return JacobiCoeffs.from_maps(A, B, m=m)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def demo_dir() -> Path:
    return DEMO_DIR


@pytest.fixture
def free_jacobi() -> JacobiCoeffs:
    return JacobiCoeffs.free(1)


@pytest.fixture
def jacobi_2x2() -> JacobiCoeffs:
    return load_operator(DEMO_DIR / "jacobi_2x2.json")


@pytest.fixture
def schrodinger_bump():
    return load_operator(DEMO_DIR / "schrodinger_bump.json")


@pytest.fixture
def dirac_bump():
    return load_operator(DEMO_DIR / "dirac_bump.json")


@pytest.fixture
def workdir(tmp_path, monkeypatch) -> Path:
    """Run in a scratch directory so the CLI's log directory lands there"""
    monkeypatch.chdir(tmp_path)
    return tmp_path
