"""Exception hierarchy shared by all modules."""


class EmflowError(Exception):
    """Base class for every error raised by the package."""


class ChartDomainError(EmflowError, ValueError):
    """A point lies outside the validity domain of a chart."""


class CausalityError(EmflowError, ValueError):
    """A vector or segment has the wrong causal character."""


class ConfigurationError(EmflowError, ValueError):
    """A model or scene is inconsistent with what the operation needs."""


class IntegrationError(EmflowError, RuntimeError):
    """Numerical integration stopped early.

    The trajectory computed up to the failure is kept in ``partial``
    (possibly ``None`` if not a single step succeeded).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NotLFESolutionError(EmflowError, ValueError):
    """No single charge-to-mass ratio explains the curve's acceleration."""

    def __init__(self, message, ratio=None, residual=None):
        super().__init__(message)
        self.ratio = ratio
        self.residual = residual


class StuckError(EmflowError, RuntimeError):
    """The curve optimizer found no admissible (causal) descent step."""

    def __init__(self, message, curve=None, gradient_norm=None):
        super().__init__(message)
        self.curve = curve
        self.gradient_norm = gradient_norm


class ShootError(EmflowError, RuntimeError):
    """A shooting evaluation failed; ``partial`` holds the last trajectory."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NotConnectedError(EmflowError, RuntimeError):
    """No connecting curve was found between two events."""
