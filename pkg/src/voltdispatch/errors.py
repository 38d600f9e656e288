"""Exception hierarchy shared across the package."""


class VoltDispatchError(Exception):
    """Base class for all errors raised by this package."""


# --- network construction ---

class BadBusId(VoltDispatchError):
    """Bus ids are not unique/contiguous, or a reference is out of range."""


class CycleDetected(VoltDispatchError):
    """The line graph contains a cycle; feeders must be radial."""


class DisconnectedBus(VoltDispatchError):
    """Some bus is not reachable from the feeder head (bus 0)."""


class DuplicateLine(VoltDispatchError):
    """Two lines connect the same pair of buses."""


class DimensionMismatch(VoltDispatchError):
    """Vector or matrix dimensions are inconsistent."""


# --- covariance / scaling ---

class NotSymmetric(VoltDispatchError):
    """Covariance matrix is not symmetric within tolerance."""


class NotPositiveDefinite(VoltDispatchError):
    """Matrix is not strictly positive definite (Cholesky failed)."""


class NonPositiveScale(VoltDispatchError):
    """A scaling vector has a zero or negative entry."""


# --- probability engine / problem assembly ---

class NumericalFailure(VoltDispatchError):
    """The probability estimator could not reach the requested accuracy."""


class DegenerateBounds(VoltDispatchError):
    """Voltage band has zero or negative width at some bus."""


# --- feeder files ---

class ParseError(VoltDispatchError):
    """Feeder document is malformed; message names the offending field."""


class ValidationError(VoltDispatchError):
    """Feeder document parsed but violates a named invariant."""
