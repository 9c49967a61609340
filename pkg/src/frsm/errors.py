"""Exception types shared across the package."""


class FrsmError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FrsmError):
    """Inconsistent sizes, parameters out of range, malformed config."""


class InvariantViolationError(FrsmError):
    """A structural invariant (e.g. Hermitian symmetry) does not hold."""


class DomainError(FrsmError):
    """Input outside the mathematical domain of the operation."""


class NotAttractingError(FrsmError):
    """The linearization at the base point is not uniformly negative."""


class NewtonError(FrsmError):
    """Pointwise Newton solve diverged or converged to a repelling branch."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class BlowUpError(FrsmError):
    """Time integration produced a non-finite state."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class DivergenceError(FrsmError):
    """Fixed-point iteration failed to contract."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class TruncationError(FrsmError):
    """Backward-horizon truncation exceeds the requested tolerance."""


class RegimeError(FrsmError):
    """Parameters violate the slow/fast regime checks under --strict."""
