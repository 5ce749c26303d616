"""Bloch-sphere geometry, the uniform prior, and exact polynomial quadrature.

States live on the unit sphere (``Geometry.FULL``) or on the equatorial
unit circle in the xy-plane (``Geometry.PLANAR``).  All vectors are plain
numpy arrays of shape (3,); planar vectors carry an exactly-zero z
component.  The prior measure is normalized to total mass 1 in both
geometries, so probabilities over measurement outcomes sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ResourceLimitError, ValidationError

UNIT_NORM_TOL = 1e-12
# Node-count guard for make_quadrature; generous for every in-scope run.
MAX_QUADRATURE_NODES = 4_000_000
# Pairing enumeration grows factorially; cap the number of dotted factors.
MAX_MOMENT_FACTORS = 10


class Geometry(Enum):
    """State space: full Bloch sphere or the equatorial circle."""

    PLANAR = "planar"
    FULL = "full"

    @property
    def dimension(self) -> int:
        """Euclidean dimension of the state manifold's ambient space."""
        return 2 if self is Geometry.PLANAR else 3

    @property
    def axes(self) -> np.ndarray:
        """Canonical measurement axes: e1, e2 (planar) or e1, e2, e3."""
        return np.eye(3)[: self.dimension]

    @property
    def fallback_axis(self) -> np.ndarray:
        """Deterministic stand-in direction for degenerate guesses."""
        return np.array([1.0, 0.0, 0.0])

    @classmethod
    def parse(cls, name: str) -> "Geometry":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValidationError(
                f"unknown geometry {name!r}; expected 'planar' or 'full'"
            ) from None


def validate_bloch_vector(geometry: Geometry, v: np.ndarray,
                          tol: float = UNIT_NORM_TOL) -> np.ndarray:
    """Check unit norm and, for planar geometry, the in-plane constraint."""
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValidationError(f"Bloch vector must have 3 components, got {v.shape}")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > tol:
        raise ValidationError(f"Bloch vector norm {norm!r} is not 1 within {tol}")
    if geometry is Geometry.PLANAR and v[2] != 0.0:
        raise ValidationError(
            f"planar Bloch vector must have exactly zero z component, got {v[2]!r}"
        )
    return v


def angles_to_vector(geometry: Geometry, polar: float, azimuth: float) -> np.ndarray:
    """Unit vector from (polar, azimuth); planar geometry ignores polar."""
    if geometry is Geometry.PLANAR:
        return np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
    st = math.sin(polar)
    return np.array([st * math.cos(azimuth), st * math.sin(azimuth),
                     math.cos(polar)])


def vector_to_angles(geometry: Geometry, v: np.ndarray) -> tuple[float, float]:
    """Inverse of :func:`angles_to_vector`; azimuth is 0 at the poles."""
    v = np.asarray(v, dtype=float)
    if geometry is Geometry.PLANAR:
        return math.pi / 2, math.atan2(v[1], v[0])
    rho = math.hypot(v[0], v[1])
    polar = math.atan2(rho, v[2])
    azimuth = math.atan2(v[1], v[0]) if rho > 0.0 else 0.0
    return polar, azimuth


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights integrating polynomials in n exactly.

    Exact for every monomial in the components of n of total degree
    <= ``exact_degree`` against the normalized uniform measure.
    """

    geometry: Geometry
    nodes: np.ndarray   # (Q, 3)
    weights: np.ndarray  # (Q,), nonnegative, sums to 1
    exact_degree: int

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def node_count(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> float | np.ndarray:
        """Weighted sum of per-node integrand values (first axis = node)."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def make_quadrature(geometry: Geometry, exact_degree: int) -> QuadratureRule:
    """Build the product rule exact up to the requested polynomial degree.

    Planar: uniform grid of exact_degree+1 points on the circle (exact for
    trigonometric polynomials of that degree).  Full: Gauss-Legendre in
    cos(theta) times a uniform azimuthal grid; a monomial of total degree d
    reduces, after the azimuthal sum kills unmatched harmonics, to a
    polynomial of degree d in cos(theta), which Gauss-Legendre handles.
    """
    if exact_degree < 0:
        raise ValidationError("exact_degree must be >= 0")
    n_azimuth = exact_degree + 1
    if geometry is Geometry.PLANAR:
        if n_azimuth > MAX_QUADRATURE_NODES:
            raise ResourceLimitError("quadrature node count over budget",
                                     required=n_azimuth,
                                     allowed=MAX_QUADRATURE_NODES)
        phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
        nodes = np.stack([np.cos(phi), np.sin(phi), np.zeros(n_azimuth)], axis=1)
        weights = np.full(n_azimuth, 1.0 / n_azimuth)
        return QuadratureRule(geometry, nodes, weights, exact_degree)

    n_polar = (exact_degree + 2) // 2
    total = n_polar * n_azimuth
    if total > MAX_QUADRATURE_NODES:
        raise ResourceLimitError("quadrature node count over budget",
                                 required=total, allowed=MAX_QUADRATURE_NODES)
    ct, gl_weights = leggauss(n_polar)
    st = np.sqrt(np.clip(1.0 - ct**2, 0.0, None))
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    cp, sp = np.cos(phi), np.sin(phi)
    nodes = np.stack([np.outer(st, cp).ravel(),
                      np.outer(st, sp).ravel(),
                      np.repeat(ct, n_azimuth)], axis=1)
    weights = np.repeat(gl_weights / 2.0, n_azimuth) / n_azimuth
    return QuadratureRule(geometry, nodes, weights, exact_degree)


def _pairing_sum(dots: np.ndarray, items: list[int]) -> float:
    """Sum over perfect pairings of ``items`` of products of dot products."""
    if not items:
        return 1.0
    first, rest = items[0], items[1:]
    total = 0.0
    for j, partner in enumerate(rest):
        total += dots[first, partner] * _pairing_sum(dots, rest[:j] + rest[j + 1:])
    return total


def moment_oracle(geometry: Geometry,
                  directions: list[np.ndarray]) -> np.ndarray:
    """Closed-form value of the moment integral of n times dotted factors.

    Computes the integral of n * prod_j (n . a_j) over the uniform measure
    by the pairing rule for isotropic moments: odd orders vanish; an
    order-2p moment tensor is the pairing sum of Kronecker deltas divided
    by d (d+2) ... (d+2p-2), with d the geometry dimension.  Serves as an
    independent oracle for the quadrature-based branch integrals.
    """
    k = len(directions)
    if k > MAX_MOMENT_FACTORS:
        raise ResourceLimitError("too many dotted factors for pairing oracle",
                                 required=k, allowed=MAX_MOMENT_FACTORS)
    if k % 2 == 0:
        return np.zeros(3)
    dirs = [validate_bloch_vector(geometry, a) for a in directions]
    mat = np.stack(dirs)
    dots = mat @ mat.T
    d = geometry.dimension
    p = (k + 1) // 2
    denom = 1.0
    for i in range(p):
        denom *= d + 2 * i
    result = np.zeros(3)
    indices = list(range(k))
    for j in range(k):
        rest = indices[:j] + indices[j + 1:]
        result += dirs[j] * _pairing_sum(dots, rest)
    return result / denom
