"""Wilczek-Zee holonomy along the two loop families of the model.

Loops of the first family fix theta1 = pi/2 and phi2 = 0 and sweep phi1
around the equatorial slice at polar angle theta2; the second family is a
tilted circle in the (q12, q4) plane that can interlink the exceptional
ring, where transport closes only after two parameter cycles.

The transported frame is the ordinarily normalized right-eigenvector
pair; the biorthogonal (left/right) pairing is exposed as an alternative
for the expectation-value transport, where it is the one that produces
the non-Abelian signature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .clifford import GAMMA1, GAMMA2, GAMMA3, GAMMA4, GAMMA5, moebius_q
from .errors import EhsCrossing, NoConvergence

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

GAP_FLOOR = 1e-6


@dataclass(frozen=True)
class LoopSpec:
    """A closed loop in parameter space.

    kind 'theta2_slice': phi1 sweeps 0 -> 2 pi cycles at fixed (r, theta2).
    kind 'moebius': theta1 sweeps 0 -> 2 pi cycles at fixed (r, delta); the
    parameter loop closes after one cycle but the eigenframe may not.
    """

    kind: str
    r: float
    theta2: float = 0.0
    delta: float = 0.0
    steps: int = 256
    cycles: int = 1

    def __post_init__(self):
        if self.kind not in ("theta2_slice", "moebius"):
            raise ValueError("kind must be 'theta2_slice' or 'moebius'")
        if self.steps < 64:
            raise ValueError("steps must be at least 64")
        if self.r < 0:
            raise ValueError("r must be nonnegative")


@dataclass
class HolonomyResult:
    u: np.ndarray
    w: complex
    det_u: complex
    step_count: int


def slice_lower_energy(r: float, kappa: float) -> complex:
    """Lower-branch eigenvalue on the theta1 = pi/2 slice."""
    w = r**2 - kappa**2
    if w >= 0:
        return complex(-np.sqrt(w))
    return complex(0.0, -np.sqrt(-w))


def slice_normalization(r: float, kappa: float, band: str = "minus") -> complex:
    """Squared norm of the unnormalized slice eigenvectors.

    Equals 2 exactly whenever the slice eigenvalues are real (outside the
    exceptional shell), which pins the Wilson-loop plateau at -2.
    """
    e = slice_lower_energy(r, kappa)
    if band == "plus":
        e = -e
    return float(abs(e + 1j * kappa) ** 2 / r**2 + 1.0)


def slice_biorthogonal_pairing(r: float, kappa: float, band: str = "minus") -> complex:
    """Bilinear left/right pairing of the same slice eigenvectors."""
    e = slice_lower_energy(r, kappa)
    if band == "plus":
        e = -e
    return 2.0 * e * (e + 1j * kappa) / r**2


def connection_slice_closed_form(
    theta2: float,
    phi1: float,
    r: float = 2.0,
    kappa: float = 1.0,
    n_squared: Optional[complex] = None,
    pairing: str = "hermitian",
) -> np.ndarray:
    """Closed-form 2x2 connection of the lower band along phi1.

    The normalization constant is computed from the eigenvectors, not
    assumed: the Hermitian pairing divides by the squared norm, the
    biorthogonal pairing by the bilinear left/right overlap.
    """
    if n_squared is None:
        if pairing == "hermitian":
            n_squared = slice_normalization(r, kappa)
        elif pairing == "biorthogonal":
            n_squared = slice_biorthogonal_pairing(r, kappa)
        else:
            raise ValueError("pairing must be 'hermitian' or 'biorthogonal'")
    c2, s2 = np.cos(theta2), np.sin(theta2)
    phase = np.exp(1j * phi1)
    return (
        np.array(
            [
                [c2 * c2, c2 * s2 * phase],
                [c2 * s2 / phase, -c2 * c2],
            ],
            dtype=complex,
        )
        / n_squared
    )


def _rk4_holonomy(a_func: Callable[[np.ndarray], np.ndarray], s0: float, s1: float, n: int) -> np.ndarray:
    """One fixed-step RK4 pass; A is evaluated vectorized on all nodes."""
    h = (s1 - s0) / n
    nodes = s0 + 0.5 * h * np.arange(2 * n + 1)
    ia = 1j * a_func(nodes)
    u = np.eye(2, dtype=complex)
    for k in range(n):
        a0 = ia[2 * k]
        am = ia[2 * k + 1]
        a1 = ia[2 * k + 2]
        k1 = a0 @ u
        k2 = am @ (u + 0.5 * h * k1)
        k3 = am @ (u + 0.5 * h * k2)
        k4 = a1 @ (u + h * k3)
        u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


def integrate_transport(
    a_func: Callable[[float], np.ndarray],
    s0: float,
    s1: float,
    steps: int = 256,
    tol: float = 1e-8,
    max_halvings: int = 16,
) -> Tuple[np.ndarray, int]:
    """Path-ordered exponential of i A along [s0, s1].

    Classical fourth-order stepper with step halving until successive
    solutions agree to ``tol`` in the max norm.
    """
    n = steps
    u_prev = _rk4_holonomy(a_func, s0, s1, n)
    for _ in range(max_halvings):
        n *= 2
        u = _rk4_holonomy(a_func, s0, s1, n)
        if np.abs(u - u_prev).max() < tol:
            return u, n
        u_prev = u
    raise NoConvergence(f"holonomy not converged to {tol} after {n} steps")


def _slice_a_func(r, kappa, theta2, pairing="hermitian"):
    if abs(r - kappa) * max(r, kappa, 1.0) < 0.5 * GAP_FLOOR:
        raise EhsCrossing("slice loop sits on the exceptional shell")
    if pairing == "hermitian":
        n2 = slice_normalization(r, kappa)
    else:
        n2 = slice_biorthogonal_pairing(r, kappa)
    c2, s2 = np.cos(theta2), np.sin(theta2)

    def a_func(phi):
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        phase = np.exp(1j * phi)
        out = np.empty(phi.shape + (2, 2), dtype=complex)
        out[..., 0, 0] = c2 * c2
        out[..., 0, 1] = c2 * s2 * phase
        out[..., 1, 0] = c2 * s2 / phase
        out[..., 1, 1] = -c2 * c2
        return out / n2

    return a_func


def _moebius_w(r, delta, kappa, theta):
    """Squared eigenvalue along the tilted loop."""
    g = (r * np.sin(theta) + delta) / np.sqrt(2.0)
    q4 = r * np.cos(theta)
    return 2.0 * g * g + q4 * q4 - kappa**2 + 2j * kappa * q4


def _moebius_branch_sign(r, delta, kappa):
    """Sign function s(theta) with E(theta) = s * principal_sqrt(w).

    The squared eigenvalue crosses the negative real axis only where
    cos(theta) = 0; the crossing at theta = pi/2 (mod 2 pi) is active iff
    (r + delta)^2 < kappa^2 and the one at 3 pi/2 iff (delta - r)^2 <
    kappa^2.  Flipping the branch there keeps E continuous.
    """
    flip_half = (r + delta) ** 2 < kappa**2
    flip_three_half = (delta - r) ** 2 < kappa**2

    def sign(theta):
        # near a boundary the pass/not-passed decision follows the sign of
        # cos(theta), the same floating-point quantity that sets Im(w), so
        # the selected branch is always the one continuous with both sides
        theta = np.asarray(theta, dtype=float)
        u = np.mod(theta, 2 * np.pi)
        periods = np.floor_divide(theta, 2 * np.pi).astype(int)
        c = np.cos(theta)
        flips = np.zeros_like(periods)
        if flip_half:
            near = np.abs(u - np.pi / 2) < 0.3
            passed = np.where(near, c <= 0, u > np.pi / 2)
            flips += periods + passed.astype(int)
        if flip_three_half:
            near = np.abs(u - 3 * np.pi / 2) < 0.3
            passed = np.where(near, c >= 0, u > 3 * np.pi / 2)
            flips += periods + passed.astype(int)
        return np.where(flips % 2 == 0, 1.0, -1.0)

    return sign


def moebius_branch_swaps(r: float, delta: float, kappa: float) -> bool:
    """Whether one theta1 cycle swaps the eigenvalue branches."""
    sign = _moebius_branch_sign(r, delta, kappa)
    return bool(sign(2 * np.pi - 1e-12) < 0)


def _moebius_tracked_energies(r, delta, kappa, theta):
    """Branch-continued lower-band eigenvalue along the tilted loop."""
    sign = _moebius_branch_sign(r, delta, kappa)
    w = _moebius_w(r, delta, kappa, theta)
    return -sign(theta) * np.sqrt(w)


def _moebius_transport_once(r, delta, kappa, n, cycles):
    """Path-ordered product of bilinear band projectors along the loop.

    The branch-tracked spectral projector (H + E)/(2E) is regular
    everywhere off the exceptional set, so the biorthogonal transport
    needs no gauge patching; the 2x2 result pairs the transported frame
    against the bilinear-normalized start frame.
    """
    theta = np.linspace(0.0, 2 * np.pi * cycles, n + 1)
    e = _moebius_tracked_energies(r, delta, kappa, theta)
    q = moebius_q(r, delta, theta)
    gammas = np.stack([GAMMA1, GAMMA2, GAMMA3, GAMMA4, GAMMA5])
    h = np.einsum("nk,kij->nij", q, gammas) + 1j * kappa * GAMMA4
    eye = np.eye(4, dtype=complex)
    proj = (h + e[:, None, None] * eye) / (2.0 * e[:, None, None])
    t = eye.copy()
    for k in range(1, n + 1):
        t = proj[k] @ t
    g0 = delta / np.sqrt(2.0)
    d0 = e[0] - r - 1j * kappa
    wa = np.array([2 * g0, d0, 0.0, -d0], dtype=complex)
    wb = np.array([0.0, d0, 2 * g0, d0], dtype=complex)
    s0 = np.sqrt(complex(4 * g0 * g0 + 2 * d0 * d0))
    frame = np.stack([wa, wb], axis=1) / s0
    return (frame.T @ t @ frame), theta.size - 1


def _moebius_transport(r, delta, kappa, steps, tol=1e-6, max_doublings=10):
    """Projector-product transport with step doubling and Richardson
    extrapolation of the leading 1/n error; convergence is judged on
    successive extrapolants, which gain two orders per doubling."""
    n = steps
    u_prev, _ = _moebius_transport_once(r, delta, kappa, n, 2)
    ext_prev = None
    for _ in range(max_doublings):
        n *= 2
        u, _ = _moebius_transport_once(r, delta, kappa, n, 2)
        ext = 2.0 * u - u_prev
        if ext_prev is not None and np.abs(ext - ext_prev).max() < tol:
            return ext, n
        u_prev = u
        ext_prev = ext
    raise NoConvergence(f"projector transport not converged after {n} steps")


def _check_moebius_gap(r, delta, kappa):
    theta = np.linspace(0.0, 2 * np.pi, 4096)
    gap = 2.0 * np.sqrt(np.abs(_moebius_w(r, delta, kappa, theta)))
    if gap.min() <= GAP_FLOOR * max(r, kappa, 1.0):
        raise EhsCrossing(
            f"loop gap floor {gap.min():.3e}; path crosses the exceptional ring"
        )


def holonomy(
    loop: LoopSpec,
    kappa: float,
    band: str = "minus",
    pairing: str = "hermitian",
    tol: float = 1e-8,
) -> HolonomyResult:
    """Wilczek-Zee transport matrix around a closed loop.

    Slice loops integrate dU/ds = i A(s) U from the identity with a
    fourth-order stepper and step halving.  The tilted-loop family
    transports with the branch-tracked bilinear band projectors instead:
    its frames are only defined up to the swap after one cycle, and the
    projector product evaluates the same path-ordered integral without
    gauge patching.  Transport is generally non-unitary for dissipative
    loops, so det U is reported as a diagnostic and no re-unitarization
    is applied.
    """
    if loop.kind == "theta2_slice":
        a_func = _slice_a_func(loop.r, kappa, loop.theta2, pairing=pairing)
        span = 2 * np.pi * loop.cycles
        u, steps = integrate_transport(a_func, 0.0, span, steps=loop.steps, tol=tol)
    else:
        _check_moebius_gap(loop.r, loop.delta, kappa)
        if loop.cycles == 2:
            u, steps = _moebius_transport(
                loop.r, loop.delta, kappa, steps=loop.steps, tol=max(tol, 1e-6)
            )
        else:
            u, steps = _moebius_transport_once(
                loop.r, loop.delta, kappa, 32 * loop.steps, loop.cycles
            )
    return HolonomyResult(
        u=u, w=complex(np.trace(u)), det_u=complex(np.linalg.det(u)), step_count=steps
    )


def holonomy_closed_form(
    theta2: float,
    r: float = 2.0,
    kappa: float = 1.0,
    n_squared: Optional[float] = None,
) -> np.ndarray:
    """Exact one-cycle transport matrix of the equatorial-slice loop.

    With A(phi) = exp(i phi sz/2) A0 exp(-i phi sz/2) the rotating frame
    reduces the transport to a constant generator:
    U = -exp(2 pi i (A0 - sz/2)).
    """
    if n_squared is None:
        n_squared = slice_normalization(r, kappa)
    c2, s2 = np.cos(theta2), np.sin(theta2)
    a = c2 * c2 / n_squared
    b = c2 * s2 / n_squared
    m = np.array([[a - 0.5, b], [b, -(a - 0.5)]], dtype=complex)
    mm = np.sqrt(complex((a - 0.5) ** 2 + b * b))
    if abs(mm) < 1e-30:
        return -(np.eye(2, dtype=complex) + 2j * np.pi * m)
    return -(
        np.cos(2 * np.pi * mm) * np.eye(2, dtype=complex)
        + 1j * np.sin(2 * np.pi * mm) / mm * m
    )


def wilson_closed_form(
    theta2: float,
    n_squared: Optional[float] = None,
    r: float = 2.0,
    kappa: float = 1.0,
) -> complex:
    """Closed-form Wilson loop W(theta2) = tr U of the slice transport."""
    u = holonomy_closed_form(theta2, r=r, kappa=kappa, n_squared=n_squared)
    return complex(np.trace(u))


def wilson_scan(
    r: float,
    kappa: float,
    theta2_grid: np.ndarray,
    steps: int = 256,
    tol: float = 1e-8,
):
    """W(theta2) over a grid via the transport ODE."""
    theta2_grid = np.asarray(theta2_grid, dtype=float)
    values = np.empty(theta2_grid.shape, dtype=complex)
    for i, t2 in enumerate(theta2_grid.ravel()):
        res = holonomy(
            LoopSpec(kind="theta2_slice", r=r, theta2=float(t2), steps=steps),
            kappa,
            tol=tol,
        )
        values.ravel()[i] = res.w
    return values


def min_wilson_vs_radius(
    kappa: float,
    r_grid: np.ndarray,
    n_theta2: int = 41,
    steps: int = 256,
):
    """Minimum over theta2 of Re W per manifold radius."""
    r_grid = np.asarray(r_grid, dtype=float)
    theta2 = np.linspace(0.0, np.pi, n_theta2)
    out = np.empty(r_grid.shape, dtype=float)
    for i, r in enumerate(r_grid.ravel()):
        w = wilson_scan(float(r), kappa, theta2, steps=steps)
        out.ravel()[i] = w.real.min()
    return out


def moebius_wilson(
    r: float,
    delta: float,
    kappa: float,
    steps: int = 512,
    tol: float = 1e-6,
) -> complex:
    """Wilson loop of the double cycle around the tilted loop.

    Frames follow eigenvector continuation across the branch swap, so the
    transport is accumulated over theta1 in [0, 4 pi].
    """
    res = holonomy(
        LoopSpec(kind="moebius", r=r, delta=delta, steps=steps, cycles=2),
        kappa,
        tol=tol,
    )
    return res.w


def moebius_wilson_winding(r: float, delta: float, kappa: float, samples: int = 200000) -> complex:
    """Double-cycle Wilson loop via the abelian structure of the transport.

    Along the tilted loop the branch-tracked connection is proportional to
    the identity, so U over two cycles equals sigma I with sigma the
    closure sign of the bilinear frame normalization, i.e. the parity of
    the winding of 4 D E around the origin.  Valid whenever the pairing
    never vanishes (delta > r keeps the loop off the D = 0 points), which
    covers the transition neighborhood; the projector-product transport is
    the general-purpose route and cross-checks this one away from it.
    """
    if delta <= r:
        raise ValueError("winding evaluation needs delta > r")
    theta = np.linspace(0.0, 4 * np.pi, samples + 1)
    e = _moebius_tracked_energies(r, delta, kappa, theta)
    d = e - r * np.cos(theta) - 1j * kappa
    phase = np.unwrap(np.angle(d * e))
    m = (phase[-1] - phase[0]) / (2 * np.pi)
    m_int = int(round(m))
    if abs(m - m_int) > 0.1:
        raise NoConvergence(f"pairing winding {m:.3f} did not quantize")
    return complex(2.0 * (-1.0) ** m_int)


def moebius_transition_delta(
    r: float,
    kappa: float,
    bracket: Tuple[float, float] = None,
    tol: float = 1e-3,
) -> float:
    """Locate the jump of the double-cycle Wilson loop by bisection.

    Near the jump the loop grazes the projected exceptional point, where
    the product transport converges too slowly, so the bisection runs on
    the winding-number evaluation of the same quantized Wilson loop.
    """
    if bracket is None:
        bracket = (max(r, kappa) + 0.2 * min(r, kappa, 1.0), r + kappa + 1.0)
    lo, hi = bracket
    f_lo = moebius_wilson_winding(r, lo, kappa).real
    f_hi = moebius_wilson_winding(r, hi, kappa).real
    if f_lo * f_hi > 0:
        raise ValueError("bracket does not straddle the Wilson-loop jump")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = moebius_wilson_winding(r, mid, kappa).real
        if f_lo * f_mid <= 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


@dataclass
class TransportSeries:
    phi1: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    s2: np.ndarray


def transport_expectations(
    r: float,
    kappa: float,
    theta2: float,
    initial: int = 0,
    n_phi: int = 201,
    steps: int = 512,
    tol: float = 1e-8,
) -> TransportSeries:
    """Pauli expectations of a transported lower-band state.

    The coefficients evolve under the biorthogonal slice connection,
    dc/dphi1 = i A c, together with their dual partner.  The pairing of
    the two defines a complex Bloch vector n_j = c~^dag sigma_j c whose
    squares always sum to one; the reported expectations are its real
    part normalized by its full complex magnitude,
    <sigma_j> = Re(n_j) / sqrt(sum |n_k|^2).  The squared sum then equals
    one exactly whenever n is real (diagonal transport, or any purely
    Hermitian connection) and dips below one when the dissipative
    non-Abelian mixing drives n complex.
    """
    if initial not in (0, 1):
        raise ValueError("initial index must be 0 or 1")
    a_func = _slice_a_func(r, kappa, theta2, pairing="biorthogonal")
    phi = np.linspace(0.0, 2 * np.pi, n_phi)
    c0 = np.zeros(2, dtype=complex)
    c0[initial] = 1.0
    sx = np.empty(n_phi)
    sy = np.empty(n_phi)
    sz = np.empty(n_phi)
    u = np.eye(2, dtype=complex)
    for i in range(n_phi):
        if i > 0:
            seg, _ = integrate_transport(
                a_func, phi[i - 1], phi[i], steps=64, tol=tol
            )
            u = seg @ u
        c = u @ c0
        dual = np.linalg.inv(u).conj().T @ c0
        n = np.array(
            [dual.conj() @ sigma @ c for sigma in (SIGMA_X, SIGMA_Y, SIGMA_Z)]
        )
        n /= dual.conj() @ c
        scale = np.sqrt((np.abs(n) ** 2).sum())
        sx[i], sy[i], sz[i] = np.real(n) / scale
    s2 = sx * sx + sy * sy + sz * sz
    return TransportSeries(phi1=phi, sx=sx, sy=sy, sz=sz, s2=s2)
