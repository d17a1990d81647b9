"""Eigenstructure of the non-Hermitian four-level model.

Everything here revolves around the identity H^2 = (|q|^2 - kappa^2
+ 2 i kappa q4) I, which makes the spectrum two doubly degenerate branches
+-E and puts the exceptional set on the 3-sphere {q4 = 0, |q_perp| = kappa}.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .clifford import ParameterPoint, build_hamiltonian
from .errors import (
    AmbiguousContinuation,
    DegenerateFormula,
    EpTooClose,
    NonDegenerate,
)

GROUPING_REL_TOL = 1e-6  # pair-grouping threshold, relative to spectral radius


def energy_squared(q: np.ndarray, kappa: float):
    """Scalar w with H^2 = w I; the spectrum is +-sqrt(w)."""
    q = np.asarray(q, dtype=float)
    return (q * q).sum(axis=-1) - kappa**2 + 2j * kappa * q[..., 3]


def eigenvalues_closed_form(r, kappa, theta1) -> Tuple[complex, complex]:
    """Principal-branch pair (+E, -E) on the radius-r spherical manifold.

    Branch continuity along paths is track_branches' job, not this one's.
    """
    e = np.sqrt(r**2 - kappa**2 + 2j * kappa * r * np.cos(theta1))
    return e, -e


def lower_band_energy(r, kappa, theta1):
    """Smooth lower-branch section over the spherical manifold.

    Outside the exceptional hypersphere (r > kappa) the branch with
    Re E < 0 is smooth; inside, the branch with Im E < 0 is.  Both agree
    with analytic continuation from theta1 = 0.
    """
    w = r**2 - kappa**2 + 2j * kappa * r * np.cos(theta1)
    e = np.sqrt(w)
    if r > kappa:
        return -e
    return np.where(np.imag(e) > 0, -e, e) if np.ndim(e) else (-e if e.imag > 0 else e)


@dataclass
class EigenSystem:
    """Two doubly degenerate branches with biorthogonal left/right pairs.

    right/left are 4x4 arrays whose columns are ordered
    (plus_a, plus_b, minus_a, minus_b).  Columns satisfy
    left[:, m]^dagger . right[:, n] = delta_mn.
    """

    e_plus: complex
    e_minus: complex
    right: np.ndarray
    left: np.ndarray

    @property
    def gap(self) -> float:
        return abs(self.e_plus - self.e_minus)

    def band(self, which: str) -> np.ndarray:
        """Right 4x2 frame of the requested degenerate pair."""
        if which == "plus":
            return self.right[:, :2]
        if which == "minus":
            return self.right[:, 2:]
        raise ValueError("band must be 'plus' or 'minus'")

    def left_band(self, which: str) -> np.ndarray:
        if which == "plus":
            return self.left[:, :2]
        if which == "minus":
            return self.left[:, 2:]
        raise ValueError("band must be 'plus' or 'minus'")


def _group_into_pairs(values: np.ndarray, rel_tol: float):
    """Split four eigenvalues into two proximity pairs.

    Returns (idx_pair_a, idx_pair_b) or raises NonDegenerate when no
    two-plus-two clustering exists at the given tolerance.
    """
    scale = max(np.abs(values).max(), 1e-300)
    order = np.argsort(values.real + 1e-9 * values.imag)
    v = values[order]
    # candidate pairings of a sorted 4-tuple: (01)(23), (02)(13), (03)(12)
    candidates = [((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2))]
    spreads = [
        max(abs(v[a[0]] - v[a[1]]), abs(v[b[0]] - v[b[1]])) for a, b in candidates
    ]
    best = int(np.argmin(spreads))
    if spreads[best] > rel_tol * scale:
        raise NonDegenerate(
            f"eigenvalues {values} do not form two degenerate pairs "
            f"(best pair spread {spreads[best]:.3e} at scale {scale:.3e})"
        )
    a, b = candidates[best]
    return order[list(a)], order[list(b)]


def _align_frame(frame: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Rotate a 4x2 frame by the unitary polar factor of its overlap with
    the reference, so the aligned overlap is Hermitian positive."""
    m = frame.conj().T @ reference
    u, _, vh = np.linalg.svd(m)
    return frame @ (u @ vh)


def eigensystem(
    h: np.ndarray,
    tol: float = 1e-8,
    frame: Optional[np.ndarray] = None,
) -> EigenSystem:
    """Numeric decomposition with biorthogonal normalization.

    The four eigenvalues are grouped into two degenerate pairs by
    proximity.  Left vectors are the rows of the inverse eigenvector
    matrix (the bilinear dual basis), rescaled so left and right columns
    carry equal norms.  When ``frame`` is given, the minus-band right
    basis is gauge-aligned to it by the polar rule used on grids.
    """
    h = np.asarray(h, dtype=complex)
    if h.shape != (4, 4):
        raise ValueError("expected a 4x4 matrix")
    values, vectors = np.linalg.eig(h)
    idx_a, idx_b = _group_into_pairs(values, GROUPING_REL_TOL)
    ea = values[idx_a].mean()
    eb = values[idx_b].mean()
    # order bands as (plus, minus): outside the shell by real part, inside
    # (purely imaginary branches) by imaginary part
    if abs(ea.real - eb.real) >= abs(ea.imag - eb.imag):
        plus_first = ea.real > eb.real
    else:
        plus_first = ea.imag > eb.imag
    if not plus_first:
        idx_a, idx_b, ea, eb = idx_b, idx_a, eb, ea
    gap = abs(ea - eb)
    scale = max(np.abs(values).max(), 1e-300)
    if gap < tol * max(scale, 1.0):
        raise EpTooClose(
            f"band gap {gap:.3e} below tolerance; biorthogonal "
            "normalization diverges near the exceptional set"
        )
    order = np.concatenate([idx_a, idx_b])
    right = vectors[:, order]
    left_rows = np.linalg.inv(right)
    # balance: split the dual-basis magnitude evenly between the sides
    g = np.sqrt(np.linalg.norm(left_rows, axis=1) / np.linalg.norm(right, axis=0))
    right = right * g
    left_rows = left_rows / g[:, None]
    left = left_rows.conj().T  # kets: left^dagger . right = I exactly
    if frame is not None:
        ref = np.asarray(frame, dtype=complex)
        if ref.shape != (4, 2):
            raise ValueError("reference frame must be 4x2")
        v_old = right[:, 2:]
        v_new = _align_frame(v_old, ref)
        # carry the same gauge rotation to the left partners so the
        # pairing stays the identity
        rot = np.linalg.lstsq(v_old, v_new, rcond=None)[0]
        right[:, 2:] = v_new
        left[:, 2:] = left[:, 2:] @ np.linalg.inv(rot).conj().T
    return EigenSystem(e_plus=ea, e_minus=eb, right=right, left=left)


def _unnormalized_closed_pair(q: np.ndarray, kappa: float, e):
    """Polynomial right eigenvectors for eigenvalue branch e at point q.

    Valid whenever the transverse radius rho = |(q1,q2,q3,q5)| and the
    factor d = e - q4 - i kappa are both nonzero.
    """
    q1, q2, q3, q4, q5 = (q[..., i] for i in range(5))
    rho2 = q1 * q1 + q2 * q2 + q3 * q3 + q5 * q5
    d = e - q4 - 1j * kappa
    zero = np.zeros_like(d)
    ua = np.stack([rho2 + zero, d * (q2 - 1j * q3), zero, -d * (q1 - 1j * q5)], axis=-1)
    ub = np.stack([zero, d * (q1 + 1j * q5), rho2 + zero, d * (q2 + 1j * q3)], axis=-1)
    return ua, ub


def right_eigenvectors_closed_form(point: ParameterPoint, formula_tol: float = 1e-12):
    """Closed-form right eigenvectors (plus_a, plus_b, minus_a, minus_b).

    Each vector is scaled so its bilinear left partner gives unit pairing,
    with the normalization split evenly between the two sides.  The raw
    expressions degenerate when the transverse radius vanishes or on the
    exceptional hypersphere.
    """
    q = point.q
    kappa = point.kappa
    w = energy_squared(q, kappa)
    e_plus = np.sqrt(w)
    rho2 = q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[4] ** 2
    scale = max(np.linalg.norm(q), kappa, 1e-300)
    if np.sqrt(rho2) < formula_tol * scale or abs(e_plus) < formula_tol * scale:
        raise DegenerateFormula(
            "closed-form eigenvectors degenerate (transverse radius or gap vanishes)"
        )
    out = []
    for e in (e_plus, -e_plus):
        ua, ub = _unnormalized_closed_pair(q, kappa, e)
        # bilinear pairing of the polynomial form: <w|u> = 2 rho^2 d e
        d = e - q[3] - 1j * kappa
        pairing = 2.0 * rho2 * d * e
        norm = np.sqrt(pairing)
        out.append(ua / norm)
        out.append(ub / norm)
    return tuple(out)


def left_eigenvectors_closed_form(point: ParameterPoint, formula_tol: float = 1e-12):
    """Bilinear left partners of the closed-form right eigenvectors.

    Returned as kets l with l^dagger . r = delta; obtained from the right
    formulas at the sign-flipped point (q3, q5 -> -q3, -q5), which
    realizes the transpose decomposition.
    """
    q = point.q.copy()
    q[2] = -q[2]
    q[4] = -q[4]
    flipped = ParameterPoint(q=q, kappa=point.kappa)
    rows = right_eigenvectors_closed_form(flipped, formula_tol)
    return tuple(np.conj(v) for v in rows)


@dataclass
class EpReport:
    gap: float
    coalescence: float
    is_ep: bool


def detect_ep(point: ParameterPoint, tol: float = 1e-6) -> EpReport:
    """Exceptional-set membership, verified spectrally and geometrically.

    gap is |E+ - E-| from the numeric spectrum; coalescence is the
    principal angle between the two band subspaces (it closes to zero when
    the eigenvectors merge).  Both must collapse for is_ep, not just the
    algebraic shell condition.
    """
    h = build_hamiltonian(point)
    values, vectors = np.linalg.eig(h)
    idx_a, idx_b = _group_into_pairs(values, 0.5)  # loose: always split 2+2
    gap = abs(values[idx_a].mean() - values[idx_b].mean())
    va, _ = np.linalg.qr(vectors[:, idx_a])
    vb, _ = np.linalg.qr(vectors[:, idx_b])
    sigma = np.linalg.svd(va.conj().T @ vb, compute_uv=False)
    coalescence = float(np.arccos(min(sigma.max(), 1.0)))
    scale = max(np.linalg.norm(point.q), point.kappa, 1e-300)
    gap_thr = 2.0 * np.sqrt(4.0 * max(point.kappa, tol) * tol * scale)
    coal_thr = np.sqrt(tol)
    is_ep = bool(gap <= gap_thr * scale and coalescence <= coal_thr)
    return EpReport(gap=float(gap), coalescence=coalescence, is_ep=is_ep)


@dataclass
class BranchTrack:
    path: List[ParameterPoint]
    energies: np.ndarray  # (n_steps, 2), branch-continuous
    permutation: str  # "identity" or "swap"


def track_branches(loop: Sequence[ParameterPoint]) -> BranchTrack:
    """Assign the two eigenvalue branches along a closed path by
    nearest-continuation and report the closing permutation."""
    points = list(loop)
    if len(points) < 2:
        raise ValueError("loop needs at least two points")
    if np.linalg.norm(points[0].q - points[-1].q) > 1e-12 or points[0].kappa != points[-1].kappa:
        raise ValueError("loop must be closed (first point equals last)")
    energies = np.empty((len(points), 2), dtype=complex)
    w0 = energy_squared(points[0].q, points[0].kappa)
    e0 = np.sqrt(w0)
    energies[0] = (e0, -e0)
    for k in range(1, len(points)):
        w = energy_squared(points[k].q, points[k].kappa)
        e = np.sqrt(w)
        prev = energies[k - 1]
        keep = abs(e - prev[0]) + abs(-e - prev[1])
        swap = abs(-e - prev[0]) + abs(e - prev[1])
        pair = (e, -e) if keep <= swap else (-e, e)
        displacement = max(abs(pair[0] - prev[0]), abs(pair[1] - prev[1]))
        local_gap = min(abs(prev[0] - prev[1]), 2.0 * abs(e))
        if displacement >= 0.5 * local_gap:
            raise AmbiguousContinuation(
                f"step {k}: eigenvalue displacement {displacement:.3e} not "
                f"small against local gap {local_gap:.3e}; refine the path"
            )
        energies[k] = pair
    end_gap = abs(energies[0, 0] - energies[0, 1])
    if abs(energies[-1, 0] - energies[0, 0]) < 0.25 * end_gap:
        permutation = "identity"
    elif abs(energies[-1, 0] - energies[0, 1]) < 0.25 * end_gap:
        permutation = "swap"
    else:
        raise AmbiguousContinuation("closing point matches neither branch")
    return BranchTrack(path=points, energies=energies, permutation=permutation)


@dataclass
class SpectrumScan:
    axes: Tuple[str, ...]
    grids: Tuple[np.ndarray, ...]
    e_plus: np.ndarray
    e_minus: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.e_plus - self.e_minus)


_AXIS_INDEX = {"q1": 0, "q2": 1, "q3": 2, "q5": 4}


def spectrum_scan(
    axes: Sequence[str],
    grids: Sequence[np.ndarray],
    kappa: float,
    fixed: Optional[dict] = None,
) -> SpectrumScan:
    """Eigenvalue sheets over a 2D or 3D slice of the (q1,q2,q3,q5) space.

    The remaining components (including q4) sit at the values supplied in
    ``fixed`` (default zero).  The zero-gap locus is the radius-kappa
    circle or sphere of the slice when q4 = 0.
    """
    if len(axes) not in (2, 3):
        raise ValueError("scan needs 2 or 3 axes")
    for name in axes:
        if name not in _AXIS_INDEX:
            raise ValueError(f"axis {name!r} not one of q1,q2,q3,q5")
    fixed = dict(fixed or {})
    base = np.zeros(5)
    for name, value in fixed.items():
        idx = 3 if name == "q4" else _AXIS_INDEX[name]
        base[idx] = value
    mesh = np.meshgrid(*grids, indexing="ij")
    q = np.broadcast_to(base, mesh[0].shape + (5,)).copy()
    for name, values in zip(axes, mesh):
        q[..., _AXIS_INDEX[name]] = values
    w = energy_squared(q, kappa)
    e = np.sqrt(w)
    return SpectrumScan(
        axes=tuple(axes),
        grids=tuple(np.asarray(g) for g in grids),
        e_plus=e,
        e_minus=-e,
    )
