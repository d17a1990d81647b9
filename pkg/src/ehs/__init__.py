"""Numerical toolkit for a dissipative four-level model whose degeneracies
form an exceptional hypersphere: spectra, second Chern numbers,
Wilczek-Zee holonomies, and a circuit-QED measurement simulation."""

__version__ = "0.1.0"

from .clifford import (
    DiracBasis,
    ParameterPoint,
    build_hamiltonian,
    build_moebius_hamiltonian,
    dirac_basis,
    spherical_to_cartesian,
)
from .geometry import QuadratureGrid, berry_connection, berry_curvature, second_chern
from .spectral import (
    EigenSystem,
    detect_ep,
    eigensystem,
    eigenvalues_closed_form,
    right_eigenvectors_closed_form,
    spectrum_scan,
    track_branches,
)
from .wilson import (
    LoopSpec,
    holonomy,
    moebius_wilson,
    transport_expectations,
    wilson_closed_form,
    wilson_scan,
)
from .cqed import (
    CqedConfig,
    build_full_hamiltonian,
    effective_hamiltonian,
    fit_eigenstates,
    lindblad_evolve,
    nh_hamiltonian,
    no_jump_evolve,
    postselect,
    protocol_chern,
    validate_mapping,
)

__all__ = [
    "__version__",
    "DiracBasis",
    "ParameterPoint",
    "build_hamiltonian",
    "build_moebius_hamiltonian",
    "dirac_basis",
    "spherical_to_cartesian",
    "QuadratureGrid",
    "berry_connection",
    "berry_curvature",
    "second_chern",
    "EigenSystem",
    "detect_ep",
    "eigensystem",
    "eigenvalues_closed_form",
    "right_eigenvectors_closed_form",
    "spectrum_scan",
    "track_branches",
    "LoopSpec",
    "holonomy",
    "moebius_wilson",
    "transport_expectations",
    "wilson_closed_form",
    "wilson_scan",
    "CqedConfig",
    "build_full_hamiltonian",
    "effective_hamiltonian",
    "fit_eigenstates",
    "lindblad_evolve",
    "nh_hamiltonian",
    "no_jump_evolve",
    "postselect",
    "protocol_chern",
    "validate_mapping",
]
