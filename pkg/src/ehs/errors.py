"""Exception types shared across the package."""


class EhsError(Exception):
    """Base class for all package-specific errors."""


class EpTooClose(EhsError):
    """Spectral gap below tolerance; biorthogonal normalization diverges."""


class NonDegenerate(EhsError):
    """Four well-separated eigenvalues; input is outside the model family."""


class DegenerateFormula(EhsError):
    """Closed-form eigenvector expressions degenerate at this point."""


class AmbiguousContinuation(EhsError):
    """Adjacent gap smaller than eigenvalue displacement; refine the path."""


class OnEhs(EhsError):
    """Parameter point lies on (or too close to) the exceptional hypersphere."""


class FrameMismatch(EhsError):
    """Supplied frame is not biorthogonal to tolerance."""


class SingularOverlap(EhsError):
    """Frame overlap matrix is rank deficient; grid too coarse near a degeneracy."""


class TransitionPoint(EhsError):
    """Radius too close to kappa; the quadrature is refused at the transition."""


class NotConverged(EhsError):
    """Quantization defect above threshold after maximum refinement."""


class EhsCrossing(EhsError):
    """Loop passes too close to the exceptional hypersphere."""


class NoConvergence(EhsError):
    """Step-halving failed to reach the requested integrator tolerance."""


class CutoffTooSmall(EhsError):
    """Population leaked into the top Fock level beyond tolerance."""


class StepRejected(EhsError):
    """Adaptive time stepper failed to take an acceptable step."""


class EmptySupport(EhsError):
    """State has no weight inside the working subspace."""


class IllConditioned(EhsError):
    """Sample matrix numerically rank deficient; fit is not determined."""


class AmbiguousLog(EhsError):
    """Eigenvalue phases too close to the log branch cut; sampling too sparse."""


class ResidualTooLarge(EhsError):
    """Projected Hamiltonian does not fit the four-level model form."""


class ConfigError(EhsError):
    """Invalid run configuration."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field '{field}': {message}")
