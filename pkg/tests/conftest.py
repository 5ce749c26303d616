import numpy as np
import pytest

from loccest import Geometry, make_quadrature


@pytest.fixture(scope="session")
def full_rule_deg7():
    return make_quadrature(Geometry.FULL, 7)


@pytest.fixture(scope="session")
def planar_rule_deg7():
    return make_quadrature(Geometry.PLANAR, 7)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random proper rotation via QR of a Gaussian matrix."""
    mat, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(mat) < 0:
        mat[:, 0] = -mat[:, 0]
    return mat


def random_unit(rng: np.random.Generator, geometry: Geometry) -> np.ndarray:
    if geometry is Geometry.PLANAR:
        angle = rng.uniform(0, 2 * np.pi)
        return np.array([np.cos(angle), np.sin(angle), 0.0])
    z = rng.uniform(-1, 1)
    angle = rng.uniform(0, 2 * np.pi)
    r = np.sqrt(1 - z * z)
    return np.array([r * np.cos(angle), r * np.sin(angle), z])
