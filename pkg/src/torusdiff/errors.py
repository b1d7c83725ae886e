"""Exception and warning types shared across the package."""


class TorusdiffError(Exception):
    """Base class for all package errors."""


class StateSpaceTooLarge(TorusdiffError):
    """State count exceeds the configured cap."""

    def __init__(self, count, cap):
        super().__init__(f"state space has {count} states, exceeds cap {cap}")
        self.count = count
        self.cap = cap


class NotElliptic(TorusdiffError):
    """Diffusion coefficient is not bounded away from zero."""


class MeshTooCoarse(TorusdiffError):
    """h * drift bound >= ellipticity bound; off-diagonal signs not guaranteed."""


class DegenerateMeasure(TorusdiffError):
    """Measure weight at or below the positivity floor; adjoints undefined."""


class NonPositiveMeasure(TorusdiffError):
    """Solved stationary vector has negative entries beyond the clamp tolerance."""


class NonUniqueKernel(TorusdiffError):
    """Generator kernel dimension differs from one."""


class NoConvergence(TorusdiffError):
    """Iterative solve failed; carries the residual trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class SolvabilityViolated(TorusdiffError):
    """Recurrence right-hand side not orthogonal to the kernel."""


class ContourHitsSpectrum(TorusdiffError):
    """A resolvent node is numerically singular."""


class QuadratureNotConverged(TorusdiffError):
    """Doubling the contour nodes keeps changing the projector."""


class DegenerateSeries(TorusdiffError):
    """All series coefficients below floor: infinite empirical radius."""


class StepTooLarge(TorusdiffError):
    """Euler-Maruyama step violates the drift heuristic bound."""


class UnsupportedObservable(TorusdiffError):
    """Observable reads sites outside the box it must be supported on."""


class NoHamiltonian(TorusdiffError):
    """Holley-Stroock estimate requested on a spec without a Hamiltonian."""


class NonPositiveConstant(TorusdiffError):
    """epsilon_c inputs must be strictly positive."""


class ConfigError(TorusdiffError):
    """Bad run configuration (syntax, unknown key, or invalid value)."""


class NegativeDensityWarning(UserWarning):
    """Truncated series density went negative (expected for |eps| too large)."""
