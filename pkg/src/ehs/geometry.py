"""Non-Abelian geometry of the degenerate lower band.

The connection is evaluated by central finite differences of a smooth
2-frame section of the band bundle; the curvature adds the commutator
term with the sign pairing A = -i L^dag dR, F = dA - dA + i[A, A]; and the
second Chern number is a midpoint tensor quadrature of
eps^{mu nu lam xi} tr(F F) / (32 pi^2) over the four angles.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .clifford import ParameterPoint, spherical_to_cartesian
from .errors import (
    FrameMismatch,
    NotConverged,
    OnEhs,
    SingularOverlap,
    TransitionPoint,
)
from .spectral import energy_squared, lower_band_energy

DIRECTIONS = ("theta1", "theta2", "phi1", "phi2")
ANGLE_RANGES = {
    "theta1": (0.0, np.pi),
    "theta2": (0.0, np.pi / 2),
    "phi1": (0.0, 2 * np.pi),
    "phi2": (0.0, 2 * np.pi),
}
GAP_FLOOR = 1e-6  # evaluation refused closer to the exceptional set


@dataclass(frozen=True)
class QuadratureGrid:
    """Midpoint tensor grid over (theta1, theta2, phi1, phi2)."""

    n_theta1: int = 24
    n_theta2: int = 24
    n_phi1: int = 24
    n_phi2: int = 24
    fd_step: float = 1e-4

    def __post_init__(self):
        counts = self.counts
        if min(counts) < 8:
            raise ValueError("all grid counts must be at least 8")
        if self.fd_step <= 0 or self.fd_step >= 0.5 * min(self.spacings):
            raise ValueError("fd_step must sit below half the grid spacing")

    @property
    def counts(self) -> Tuple[int, int, int, int]:
        return (self.n_theta1, self.n_theta2, self.n_phi1, self.n_phi2)

    @property
    def spacings(self) -> Tuple[float, float, float, float]:
        return tuple(
            (hi - lo) / n
            for (lo, hi), n in zip(
                (ANGLE_RANGES[d] for d in DIRECTIONS), self.counts
            )
        )

    def midpoints(self) -> Tuple[np.ndarray, ...]:
        out = []
        for (lo, hi), n in zip((ANGLE_RANGES[d] for d in DIRECTIONS), self.counts):
            step = (hi - lo) / n
            out.append(lo + step * (np.arange(n) + 0.5))
        return tuple(out)

    def doubled(self) -> "QuadratureGrid":
        return QuadratureGrid(
            2 * self.n_theta1,
            2 * self.n_theta2,
            2 * self.n_phi1,
            2 * self.n_phi2,
            self.fd_step,
        )


@dataclass
class ConnectionMatrix:
    direction: str
    a: np.ndarray  # 2x2 complex


@dataclass
class CurvatureMatrix:
    pair: Tuple[str, str]
    f: np.ndarray  # 2x2 complex


@dataclass
class ChernResult:
    c2: float
    grid: QuadratureGrid
    defect: float
    integrand_samples: Optional[np.ndarray] = None

    @property
    def quantized(self) -> int:
        return int(round(self.c2))


class SphericalFrameSection:
    """Smooth closed-form 2-frame section of one band over the radius-r
    spherical manifold.

    Frames are orthonormal under the Hermitian inner product.  The section
    is smooth away from the coordinate poles sin(theta1) = 0 and the
    exceptional set, which the midpoint grids avoid by construction.
    """

    def __init__(self, r: float, kappa: float, band: str = "minus"):
        if band not in ("minus", "plus"):
            raise ValueError("band must be 'minus' or 'plus'")
        self.r = float(r)
        self.kappa = float(kappa)
        self.band = band

    def energy(self, theta1):
        e = lower_band_energy(self.r, self.kappa, theta1)
        return -e if self.band == "plus" else e

    def _raw_pair(self, t1, t2, p1, p2):
        q = spherical_to_cartesian(self.r, t1, t2, p1, p2)
        e = self.energy(t1)
        gap = 2.0 * np.abs(e)
        if np.any(gap <= GAP_FLOOR * max(self.r, self.kappa, 1.0)):
            raise OnEhs("frame evaluation requested on the exceptional set")
        d = e - q[..., 3] - 1j * self.kappa
        q1, q2, q3, q5 = q[..., 0], q[..., 1], q[..., 2], q[..., 4]
        rho2 = q1 * q1 + q2 * q2 + q3 * q3 + q5 * q5
        zero = np.zeros_like(d)
        ua = np.stack([rho2 + zero, d * (q2 - 1j * q3), zero, -d * (q1 - 1j * q5)], axis=-1)
        ub = np.stack([zero, d * (q1 + 1j * q5), rho2 + zero, d * (q2 + 1j * q3)], axis=-1)
        return ua, ub, d, rho2

    def __call__(self, t1, t2, p1, p2) -> np.ndarray:
        ua, ub, _, _ = self._raw_pair(t1, t2, p1, p2)
        na = np.linalg.norm(ua, axis=-1, keepdims=True)
        nb = np.linalg.norm(ub, axis=-1, keepdims=True)
        return np.stack([ua / na, ub / nb], axis=-1)

    def left(self, t1, t2, p1, p2) -> np.ndarray:
        """Bilinear-dual left frames L (kets) with L^dag V = I for the
        right frames returned by __call__."""
        ua, ub, d, rho2 = self._raw_pair(t1, t2, p1, p2)
        e = self.energy(t1)
        # left rows are the right formulas at (q3, q5) -> (-q3, -q5); in
        # the stacked component form this conjugates the transverse factors
        q = spherical_to_cartesian(self.r, t1, t2, p1, p2)
        q1, q2, q3, q5 = q[..., 0], q[..., 1], q[..., 2], q[..., 4]
        zero = np.zeros_like(d)
        wa = np.stack([rho2 + zero, d * (q2 + 1j * q3), zero, -d * (q1 + 1j * q5)], axis=-1)
        wb = np.stack([zero, d * (q1 - 1j * q5), rho2 + zero, d * (q2 - 1j * q3)], axis=-1)
        pairing = 2.0 * rho2 * d * e  # <w|u> for the polynomial pair
        na = np.linalg.norm(ua, axis=-1)
        nb = np.linalg.norm(ub, axis=-1)
        la = np.conj(wa) * (na / np.conj(pairing))[..., None]
        lb = np.conj(wb) * (nb / np.conj(pairing))[..., None]
        return np.stack([la, lb], axis=-1)


FrameField = Callable[..., np.ndarray]


def align_frames(frames: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Rotate 4x2 frames by the unitary polar factor of their overlap with
    the reference frame(s); batched over leading axes."""
    m = np.einsum("...ai,...aj->...ij", frames.conj(), reference)
    u, s, vh = np.linalg.svd(m)
    if np.any(s[..., -1] < 1e-8):
        raise SingularOverlap("frame overlap is rank deficient")
    return frames @ (u @ vh)


def _shift(angles, direction, amount):
    t1, t2, p1, p2 = angles
    idx = DIRECTIONS.index(direction)
    shifted = [np.asarray(a, dtype=float) for a in (t1, t2, p1, p2)]
    shifted[idx] = shifted[idx] + amount
    return tuple(shifted)


class ConnectionEvaluator:
    """Finite-difference connection/curvature machine over a frame field.

    ``section`` maps four angle arrays to right frames (..., 4, 2).  With
    ``align_to_center`` every evaluation is gauge-aligned to the raw
    center frame first, which is required for fields without a built-in
    smooth gauge (numeric or fitted eigenvectors); the closed-form section
    is already smooth and is used as-is.  ``left_section``, when given,
    switches the pairing from Hermitian to bilinear (biorthogonal).
    """

    def __init__(
        self,
        section: FrameField,
        fd_step: float = 1e-4,
        align_to_center: bool = False,
        left_section: Optional[FrameField] = None,
    ):
        self.section = section
        self.h = float(fd_step)
        self.align_to_center = align_to_center
        self.left_section = left_section

    def _frames(self, angles, reference=None):
        v = self.section(*angles)
        if self.align_to_center and reference is not None:
            v = align_frames(v, reference)
        return v

    def _left(self, angles, right):
        if self.left_section is None:
            return right
        l = self.left_section(*angles)
        # renormalize the dual pairing against the (possibly re-gauged) right
        pairing = np.einsum("...ai,...aj->...ij", l.conj(), right)
        return l @ np.linalg.inv(pairing).conj().swapaxes(-1, -2)

    def connection(self, angles, direction, reference=None):
        h = self.h
        vp = self._frames(_shift(angles, direction, +h), reference)
        vm = self._frames(_shift(angles, direction, -h), reference)
        v0 = self._frames(angles, reference)
        l0 = self._left(angles, v0)
        dv = (vp - vm) / (2.0 * h)
        return -1j * np.einsum("...ai,...aj->...ij", l0.conj(), dv)

    def curvature(self, angles, mu, nu, reference=None):
        h = self.h
        a_mu = self.connection(angles, mu, reference)
        a_nu = self.connection(angles, nu, reference)
        danu = (
            self.connection(_shift(angles, mu, +h), nu, reference)
            - self.connection(_shift(angles, mu, -h), nu, reference)
        ) / (2.0 * h)
        damu = (
            self.connection(_shift(angles, nu, +h), mu, reference)
            - self.connection(_shift(angles, nu, -h), mu, reference)
        ) / (2.0 * h)
        return danu - damu + 1j * (a_mu @ a_nu - a_nu @ a_mu)

    def curvatures(self, angles, reference=None):
        """All six independent F_{mu nu}, sharing frame evaluations."""
        h = self.h
        a_center = {d: self.connection(angles, d, reference) for d in DIRECTIONS}
        a_disp = {}
        for mu in DIRECTIONS:
            for sign in (+1, -1):
                shifted = _shift(angles, mu, sign * h)
                for nu in DIRECTIONS:
                    if nu == mu:
                        continue
                    a_disp[(mu, sign, nu)] = self.connection(shifted, nu, reference)
        f = {}
        for i, mu in enumerate(DIRECTIONS):
            for nu in DIRECTIONS[i + 1 :]:
                danu = (a_disp[(mu, +1, nu)] - a_disp[(mu, -1, nu)]) / (2.0 * h)
                damu = (a_disp[(nu, +1, mu)] - a_disp[(nu, -1, mu)]) / (2.0 * h)
                comm = a_center[mu] @ a_center[nu] - a_center[nu] @ a_center[mu]
                f[(mu, nu)] = danu - damu + 1j * comm
        return f


def _eps_contraction(f: dict) -> np.ndarray:
    """8 [tr(F01 F23) - tr(F02 F13) + tr(F03 F12)] for index order
    (theta1, theta2, phi1, phi2); equals the full 24-permutation sum."""
    t = lambda a, b: np.einsum("...ij,...ji->...", f[a], f[b])
    d = DIRECTIONS
    return 8.0 * (
        t((d[0], d[1]), (d[2], d[3]))
        - t((d[0], d[2]), (d[1], d[3]))
        + t((d[0], d[3]), (d[1], d[2]))
    )


def _eps_contraction_literal(f: dict) -> np.ndarray:
    """Direct Levi-Civita sum over all 24 index permutations."""

    def entry(a, b):
        if (a, b) in f:
            return f[(a, b)]
        return -f[(b, a)]

    total = 0.0
    for perm in itertools.permutations(range(4)):
        sign = _permutation_sign(perm)
        mu, nu, lam, xi = (DIRECTIONS[i] for i in perm)
        total = total + sign * np.einsum(
            "...ij,...ji->...", entry(mu, nu), entry(lam, xi)
        )
    return total


def _permutation_sign(perm) -> int:
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


def chern_integrand(
    evaluator: ConnectionEvaluator,
    angles,
    reference=None,
    literal_eps: bool = False,
) -> np.ndarray:
    """eps^{mu nu lam xi} tr(F F) / (32 pi^2) at the given angle batch."""
    f = evaluator.curvatures(angles, reference)
    contraction = _eps_contraction_literal(f) if literal_eps else _eps_contraction(f)
    return np.real(contraction) / (32.0 * np.pi**2)


def _point_angles(point: ParameterPoint):
    if point.spherical is None:
        raise ValueError("angle-space geometry needs a spherical-form point")
    s = point.spherical
    return s, (np.asarray(s.theta1), np.asarray(s.theta2), np.asarray(s.phi1), np.asarray(s.phi2))


def _section_for_point(point: ParameterPoint, band="minus"):
    s, angles = _point_angles(point)
    return SphericalFrameSection(s.r, point.kappa, band=band), angles


def berry_connection(
    point: ParameterPoint,
    direction: str,
    frame: Optional[np.ndarray] = None,
    pairing: str = "hermitian",
    fd_step: float = 1e-4,
) -> ConnectionMatrix:
    """Connection A = -i L^dag dR of the lower band at a spherical point.

    The derivative is a central finite difference of the smooth closed-form
    section.  A supplied ``frame`` (a gauge-fixed basis of the same
    subspace) rotates the answer into that basis; it must pair to the
    identity against its dual to tolerance.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    section, angles = _section_for_point(point)
    evaluator = ConnectionEvaluator(
        section,
        fd_step=fd_step,
        left_section=section.left if pairing == "biorthogonal" else None,
    )
    a = np.asarray(evaluator.connection(angles, direction))
    if frame is not None:
        v0 = section(*angles)
        g = v0.conj().T @ frame
        if abs(np.linalg.det(g)) < 1e-6:
            raise FrameMismatch("frame does not span the lower band")
        if pairing == "hermitian" and np.linalg.norm(frame.conj().T @ frame - np.eye(2)) > 1e-6:
            raise FrameMismatch("frame is not orthonormal to tolerance")
        a = np.linalg.inv(g) @ a @ g
    return ConnectionMatrix(direction=direction, a=a)


def berry_curvature(
    point: ParameterPoint,
    mu: str,
    nu: str,
    grid: Optional[QuadratureGrid] = None,
    pairing: str = "hermitian",
) -> CurvatureMatrix:
    """Curvature F_{mu nu} with the main-sign commutator +i[A, A]."""
    if mu not in DIRECTIONS or nu not in DIRECTIONS:
        raise ValueError(f"directions must be among {DIRECTIONS}")
    fd = grid.fd_step if grid is not None else 1e-4
    section, angles = _section_for_point(point)
    evaluator = ConnectionEvaluator(
        section,
        fd_step=fd,
        left_section=section.left if pairing == "biorthogonal" else None,
    )
    if mu == nu:
        return CurvatureMatrix(pair=(mu, nu), f=np.zeros((2, 2), dtype=complex))
    f = np.asarray(evaluator.curvature(angles, mu, nu))
    return CurvatureMatrix(pair=(mu, nu), f=f)


def chern_integrand_at(
    point: ParameterPoint,
    grid: Optional[QuadratureGrid] = None,
    pairing: str = "hermitian",
    literal_eps: bool = False,
) -> float:
    """Scalar integrand at one spherical point (test and diagnostic path)."""
    fd = grid.fd_step if grid is not None else 1e-4
    section, angles = _section_for_point(point)
    evaluator = ConnectionEvaluator(
        section,
        fd_step=fd,
        left_section=section.left if pairing == "biorthogonal" else None,
    )
    return float(chern_integrand(evaluator, angles, literal_eps=literal_eps))


def integrate_section(
    evaluator: ConnectionEvaluator,
    grid: QuadratureGrid,
    threads: int = 1,
    keep_samples: bool = False,
    reference_field: Optional[FrameField] = None,
):
    """Midpoint quadrature of the Chern integrand over the full grid."""
    axes = grid.midpoints()
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = [m.reshape(-1) for m in mesh]
    n = flat[0].size
    weight = float(np.prod(grid.spacings))
    chunk = 4096
    starts = list(range(0, n, chunk))

    def run(start):
        sl = slice(start, min(start + chunk, n))
        angles = tuple(a[sl] for a in flat)
        reference = reference_field(*angles) if reference_field is not None else (
            evaluator.section(*angles) if evaluator.align_to_center else None
        )
        return chern_integrand(evaluator, angles, reference=reference)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    values = np.concatenate(parts)
    total = float(values.sum() * weight)
    samples = values.reshape(grid.counts) if keep_samples else None
    return total, samples


def second_chern(
    r: float,
    kappa: float,
    grid: Optional[QuadratureGrid] = None,
    band: str = "minus",
    pairing: str = "hermitian",
    threads: int = 1,
    keep_samples: bool = False,
    max_refinements: int = 0,
) -> ChernResult:
    """Second Chern number of one band over the radius-r manifold."""
    grid = grid or QuadratureGrid()
    if abs(r - kappa) < 1e-3:
        raise TransitionPoint(
            f"radius {r} within 1e-3 of kappa {kappa}; the quadrature is "
            "refused at the topological transition"
        )
    current = grid
    for attempt in range(max_refinements + 1):
        section = SphericalFrameSection(r, kappa, band=band)
        evaluator = ConnectionEvaluator(
            section,
            fd_step=current.fd_step,
            left_section=section.left if pairing == "biorthogonal" else None,
        )
        c2, samples = integrate_section(
            evaluator, current, threads=threads, keep_samples=keep_samples
        )
        defect = abs(c2 - round(c2))
        if defect <= 0.05 or attempt == max_refinements:
            break
        current = current.doubled()
    if defect > 0.05:
        raise NotConverged(
            f"quantization defect {defect:.4f} above 0.05 after "
            f"{max_refinements} refinement(s)"
        )
    return ChernResult(c2=c2, grid=current, defect=defect, integrand_samples=samples)


def gauge_fix(frames: np.ndarray, order: str = "C") -> np.ndarray:
    """Smooth a grid of 2-frames by discrete parallel transport.

    Sweeps the flattened grid in the requested memory order, aligning each
    frame to its predecessor by the unitary polar factor of the overlap;
    the aligned overlaps are Hermitian positive, so their determinants sit
    in the right half-plane.  Idempotent on already-fixed grids.
    """
    frames = np.asarray(frames, dtype=complex)
    if frames.shape[-2:] != (4, 2):
        raise ValueError("expected frames shaped (..., 4, 2)")
    lead = frames.shape[:-2]
    if order == "F":
        work = np.transpose(
            frames, tuple(reversed(range(len(lead)))) + (len(lead), len(lead) + 1)
        ).copy()
    else:
        work = frames.copy()
    flat = work.reshape(-1, 4, 2)
    for k in range(1, flat.shape[0]):
        flat[k] = align_frames(flat[k], flat[k - 1])
    out = flat.reshape(work.shape)
    if order == "F":
        out = np.transpose(
            out, tuple(reversed(range(len(lead)))) + (len(lead), len(lead) + 1)
        )
    return out
