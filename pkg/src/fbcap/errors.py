"""Exception types raised across the toolkit."""


class FbcapError(Exception):
    """Base class for all toolkit errors."""


class UnitCirclePoleError(FbcapError, ValueError):
    """A transfer function was evaluated at a pole on the unit circle."""

    def __init__(self, theta, message=None):
        self.theta = theta
        super().__init__(message or f"pole on the unit circle at theta={theta!r}")


class DegeneracyError(FbcapError, ValueError):
    """An eigenvalue or zero sits on (or numerically at) the unit circle."""


class NotProperError(FbcapError, ValueError):
    """The filter has no causal state-space realization."""


class PreconditionError(FbcapError, ValueError):
    """Inputs violate a documented precondition."""


class WhiteNoiseError(FbcapError, ValueError):
    """The noise spectrum is flat; feedback does not increase capacity."""


class NonConvergenceError(FbcapError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    ``best`` holds the best iterate found and ``residual`` its residual.
    """

    def __init__(self, message, best=None, residual=None):
        self.best = best
        self.residual = residual
        super().__init__(message)


class ZeroRateError(FbcapError, ValueError):
    """The constructed controller has no unstable modes to carry a message."""


class CodebookTooLargeError(FbcapError, ValueError):
    """The requested codebook exceeds the supported message count."""
