"""Exception types shared across the package."""


class UspasError(Exception):
    """Base class for all package errors."""


class OutOfDomainError(UspasError):
    """Evaluation outside a function's domain with extrapolation disabled."""


class RangeError(UspasError):
    """Inversion target above the range of a bounded function."""


class KindError(UspasError):
    """Operation requested on an incompatible comparison-function kind."""


class StabilityAtZeroError(UspasError):
    """An envelope sample at radius 0 has a positive value, so no class-K
    function can dominate it (stability at zero is violated)."""


class IntegrationError(UspasError):
    """Base class for integrator failures."""


class DivergenceError(IntegrationError):
    """Trajectory escaped (non-finite rhs or norm above the escape
    threshold). Carries the last valid time/state."""

    def __init__(self, message, t, state, partial=None):
        super().__init__(message)
        self.t = t
        self.state = state
        self.partial = partial


class StiffnessError(IntegrationError):
    """Adaptive step size underflowed; the problem is too stiff for the
    explicit solver."""


class PreconditionError(UspasError):
    """A documented precondition of an operation does not hold."""


class TransformError(UspasError):
    """Lyapunov-function transformation failed (quadrature breakdown or the
    post-construction invariance check did not pass)."""


class RootFindError(UspasError):
    """Monotone root finding failed within the search horizon."""


class DegenerateEstimateError(UspasError):
    """A synthesized estimate came out with delta >= Delta; the certificate
    inputs are too coarse to produce a usable ball pair."""


class GainConfigError(UspasError):
    """Controller gain combination violates a structural constraint."""


class ScenarioError(UspasError):
    """Scenario file is malformed. Carries the offending field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
