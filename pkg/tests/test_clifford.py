import numpy as np
import pytest

from ehs.clifford import (
    IDENTITY4,
    ParameterPoint,
    build_hamiltonian,
    build_moebius_hamiltonian,
    dirac_basis,
    moebius_q,
    spherical_to_cartesian,
)


def test_gamma4_entries():
    basis = dirac_basis()
    assert np.array_equal(basis[3], np.diag([1, -1, 1, -1]).astype(complex))


def test_clifford_algebra_exact():
    basis = dirac_basis()
    for i in range(5):
        for j in range(5):
            anti = basis[i] @ basis[j] + basis[j] @ basis[i]
            expected = 2 * IDENTITY4 if i == j else np.zeros((4, 4))
            assert np.array_equal(anti, expected)


def test_gammas_hermitian_involutory():
    for g in dirac_basis():
        assert np.array_equal(g, g.conj().T)
        assert np.array_equal(g @ g, IDENTITY4)


def test_anticommutator_gamma2_gamma3():
    basis = dirac_basis()
    assert np.array_equal(basis[1] @ basis[2] + basis[2] @ basis[1], np.zeros((4, 4)))


def test_spherical_north_pole():
    q = spherical_to_cartesian(1.0, 0.0, 0.83, 2.1, 5.5)
    np.testing.assert_allclose(q, [0, 0, 0, 1, 0], atol=1e-15)


def test_spherical_symmetry_case():
    q = spherical_to_cartesian(1.0, np.pi / 2, np.pi / 2, 0.0, 0.0)
    np.testing.assert_allclose(q, [1, 0, 0, 0, 0], atol=1e-15)


def test_spherical_norm_and_components():
    q = spherical_to_cartesian(2.0, np.pi / 3, np.pi / 4, np.pi / 2, np.pi)
    assert abs(np.linalg.norm(q) - 2.0) < 1e-14
    # evaluate the mapping independently
    s1, c1 = np.sin(np.pi / 3), np.cos(np.pi / 3)
    s2, c2 = np.sin(np.pi / 4), np.cos(np.pi / 4)
    expected = 2.0 * np.array([s1 * s2 * np.cos(np.pi), 0.0, s1 * c2, c1, s1 * s2 * np.sin(np.pi)])
    np.testing.assert_allclose(q, expected, atol=1e-14)


def test_spherical_norm_random():
    rng = np.random.default_rng(1)
    for _ in range(50):
        r = rng.uniform(0, 3)
        q = spherical_to_cartesian(
            r,
            rng.uniform(0, np.pi),
            rng.uniform(0, 2 * np.pi),
            rng.uniform(0, 2 * np.pi),
            rng.uniform(0, 2 * np.pi),
        )
        assert abs(np.linalg.norm(q) - r) < 1e-12


def test_parameter_point_spherical_consistency():
    p = ParameterPoint.from_spherical(1.7, 0.9, 1.2, 0.4, 5.1, kappa=0.8)
    assert abs(p.radius - 1.7) < 1e-12
    np.testing.assert_allclose(
        p.q, spherical_to_cartesian(1.7, 0.9, 1.2, 0.4, 5.1), atol=1e-15
    )


def test_parameter_point_validation():
    with pytest.raises(ValueError):
        ParameterPoint(q=np.zeros(4))
    with pytest.raises(ValueError):
        ParameterPoint(q=np.zeros(5), kappa=-0.1)


def test_build_hamiltonian_gamma4_case():
    p = ParameterPoint(q=np.array([0, 0, 0, 1.0, 0]), kappa=0.0)
    assert np.array_equal(build_hamiltonian(p), np.diag([1, -1, 1, -1]).astype(complex))


def test_build_hamiltonian_pure_gain_loss():
    p = ParameterPoint(q=np.zeros(5), kappa=1.0)
    h = build_hamiltonian(p)
    values = np.sort_complex(np.linalg.eigvals(h))
    np.testing.assert_allclose(values, [-1j, -1j, 1j, 1j], atol=1e-14)


def test_build_hamiltonian_matches_angular_form():
    r, t1, t2, p1, p2, kappa = 2.0, 0.7, 1.1, 0.3, 2.2, 1.0
    point = ParameterPoint.from_spherical(r, t1, t2, p1, p2, kappa=kappa)
    h = build_hamiltonian(point)
    s1, c1 = np.sin(t1), np.cos(t1)
    s2, c2 = np.sin(t2), np.cos(t2)
    e1, e2 = np.exp(1j * p1), np.exp(1j * p2)
    reference = np.array(
        [
            [r * c1 + 1j * kappa, r * s1 * c2 * e1, 0, -r * s1 * s2 * e2],
            [r * s1 * c2 / e1, -r * c1 - 1j * kappa, r * s1 * s2 * e2, 0],
            [0, r * s1 * s2 / e2, r * c1 + 1j * kappa, r * s1 * c2 / e1],
            [-r * s1 * s2 / e2, 0, r * s1 * c2 * e1, -r * c1 - 1j * kappa],
        ]
    )
    np.testing.assert_allclose(h, reference, atol=1e-14)


def test_nh_term_is_exactly_ikgamma4():
    rng = np.random.default_rng(2)
    for _ in range(20):
        q = rng.normal(size=5)
        kappa = rng.uniform(0, 2)
        h_nh = build_hamiltonian(ParameterPoint(q=q, kappa=kappa))
        h_h = build_hamiltonian(ParameterPoint(q=q, kappa=0.0))
        assert np.array_equal(h_nh - h_h, 1j * kappa * np.diag([1, -1, 1, -1]))


def test_hermitian_eigenvalues_pm_norm():
    rng = np.random.default_rng(3)
    for _ in range(30):
        q = rng.normal(size=5)
        h = build_hamiltonian(ParameterPoint(q=q, kappa=0.0))
        values = np.sort(np.linalg.eigvalsh(h))
        r = np.linalg.norm(q)
        np.testing.assert_allclose(values, [-r, -r, r, r], atol=1e-12)


def test_moebius_diagonal_case():
    h = build_moebius_hamiltonian(1.0, 0.0, 0.0, 1.0)
    np.testing.assert_allclose(np.diag(h), [1 + 1j, -1 - 1j, 1 + 1j, -1 - 1j])


def test_moebius_zero_matrix():
    assert np.allclose(build_moebius_hamiltonian(0.0, 0.0, 0.7, 0.0), 0.0)


def test_moebius_matches_general_build():
    rng = np.random.default_rng(4)
    for _ in range(100):
        r = rng.uniform(0, 3)
        delta = rng.uniform(-2, 3)
        theta1 = rng.uniform(0, 4 * np.pi)
        h1 = build_moebius_hamiltonian(r, delta, theta1, 1.0)
        q = moebius_q(r, delta, theta1)
        h2 = build_hamiltonian(ParameterPoint(q=q, kappa=1.0))
        np.testing.assert_allclose(h1, h2, atol=1e-14)


def test_moebius_entrywise_structure():
    r, delta, theta1, kappa = 1.3, 0.4, 2.1, 1.0
    g = (r * np.sin(theta1) + delta) / np.sqrt(2)
    c = r * np.cos(theta1)
    h = build_moebius_hamiltonian(r, delta, theta1, kappa)
    reference = np.array(
        [
            [c + 1j, g, 0, -g],
            [g, -c - 1j, g, 0],
            [0, g, c + 1j, g],
            [-g, 0, g, -c - 1j],
        ]
    )
    np.testing.assert_allclose(h, reference, atol=1e-14)
