"""Dirac-matrix basis and the Hamiltonians built from parameter points.

The model is a four-level system controlled by a five-component vector q,
H = q . Gamma, made non-Hermitian by an anti-Hermitian term i*kappa*Gamma4
that encodes balanced gain and loss on the level pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

# Explicit constants: exactness matters for the algebra checks, so the five
# matrices are written out rather than generated from tensor products.
GAMMA1 = np.array(
    [
        [0, 0, 0, -1],
        [0, 0, 1, 0],
        [0, 1, 0, 0],
        [-1, 0, 0, 0],
    ],
    dtype=complex,
)
GAMMA2 = np.array(
    [
        [0, 1, 0, 0],
        [1, 0, 0, 0],
        [0, 0, 0, 1],
        [0, 0, 1, 0],
    ],
    dtype=complex,
)
GAMMA3 = np.array(
    [
        [0, 1j, 0, 0],
        [-1j, 0, 0, 0],
        [0, 0, 0, -1j],
        [0, 0, 1j, 0],
    ],
    dtype=complex,
)
GAMMA4 = np.array(
    [
        [1, 0, 0, 0],
        [0, -1, 0, 0],
        [0, 0, 1, 0],
        [0, 0, 0, -1],
    ],
    dtype=complex,
)
GAMMA5 = np.array(
    [
        [0, 0, 0, -1j],
        [0, 0, 1j, 0],
        [0, -1j, 0, 0],
        [1j, 0, 0, 0],
    ],
    dtype=complex,
)

IDENTITY4 = np.eye(4, dtype=complex)


@dataclass(frozen=True)
class DiracBasis:
    """The five mutually anticommuting 4x4 Hermitian matrices."""

    gamma: Tuple[np.ndarray, ...]

    def __iter__(self):
        return iter(self.gamma)

    def __getitem__(self, i):
        return self.gamma[i]

    def __len__(self):
        return len(self.gamma)


def dirac_basis() -> DiracBasis:
    """Return the Dirac basis (Gamma1..Gamma5) as exact constants."""
    return DiracBasis(gamma=(GAMMA1, GAMMA2, GAMMA3, GAMMA4, GAMMA5))


def spherical_to_cartesian(r, theta1, theta2, phi1, phi2) -> np.ndarray:
    """Map hyperspherical angles to the 5-vector q.

    q = R (sin t1 sin t2 cos p2, sin t1 cos t2 cos p1, sin t1 cos t2 sin p1,
           cos t1, sin t1 sin t2 sin p2)

    Broadcasts over array-valued angles; |q| = R in every case.
    """
    s1, c1 = np.sin(theta1), np.cos(theta1)
    s2, c2 = np.sin(theta2), np.cos(theta2)
    q = np.stack(
        np.broadcast_arrays(
            r * s1 * s2 * np.cos(phi2),
            r * s1 * c2 * np.cos(phi1),
            r * s1 * c2 * np.sin(phi1),
            r * c1,
            r * s1 * s2 * np.sin(phi2),
        ),
        axis=-1,
    )
    return q


@dataclass(frozen=True)
class SphericalForm:
    r: float
    theta1: float
    theta2: float
    phi1: float
    phi2: float


@dataclass(frozen=True)
class ParameterPoint:
    """A point of the 5D control manifold plus the dissipation rate.

    The Cartesian vector q is the source of truth; the spherical form is
    optional metadata (loop families such as the Moebius path are not
    globally spherical).
    """

    q: np.ndarray
    kappa: float = 0.0
    spherical: Optional[SphericalForm] = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (5,):
            raise ValueError(f"q must be a 5-vector, got shape {q.shape}")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        object.__setattr__(self, "q", q)

    @classmethod
    def from_spherical(cls, r, theta1, theta2, phi1, phi2, kappa=0.0):
        q = spherical_to_cartesian(r, theta1, theta2, phi1, phi2)
        return cls(q=q, kappa=kappa,
                   spherical=SphericalForm(r, theta1, theta2, phi1, phi2))

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.q))


def build_hamiltonian(point: ParameterPoint) -> np.ndarray:
    """Return H = q . Gamma + i kappa Gamma4 as a dense 4x4 complex matrix."""
    q = point.q
    h = (
        q[0] * GAMMA1
        + q[1] * GAMMA2
        + q[2] * GAMMA3
        + q[3] * GAMMA4
        + q[4] * GAMMA5
    )
    if point.kappa:
        h = h + 1j * point.kappa * GAMMA4
    return h


def moebius_q(r, delta, theta1) -> np.ndarray:
    """Control vector of the tilted loop in the (q12, q4) plane.

    The loop has radius r, sits at in-plane offset delta along the
    (1,1,0,0,0)/sqrt(2) direction, and is swept by theta1.
    """
    g = (r * np.sin(theta1) + delta) / np.sqrt(2.0)
    c = r * np.cos(theta1)
    return np.stack(np.broadcast_arrays(g, g, np.zeros_like(g), c, np.zeros_like(g)), axis=-1)


def build_moebius_hamiltonian(r, delta, theta1, kappa=1.0) -> np.ndarray:
    """Hamiltonian of the loop family that interlinks the exceptional ring."""
    point = ParameterPoint(q=moebius_q(r, delta, theta1), kappa=kappa)
    return build_hamiltonian(point)
