"""Exception types raised across the package.

Validation problems derive from :class:`ValidationError` (a ``ValueError``) so
callers and the CLI can map them to a single exit code.
"""


class PulseDDEError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PulseDDEError, ValueError):
    """Inputs violate a documented precondition or invariant."""


class NonOscillatoryRegime(ValidationError):
    """Raw rates do not straddle the threshold, so no relaxation cycle exists."""


class OutOfRange(ValidationError):
    """An evaluation point lies outside the supported domain."""


class BelowThreshold(ValidationError):
    """Pulse amplitude is below the 1:1 locking threshold."""


class Infeasible(ValidationError):
    """A dosing target cannot be met with positive rest interval."""


class Undefined(ValidationError):
    """A closed-form quantity is undefined for the given parameters."""


class InfiniteResetting(PulseDDEError):
    """Pulse onset sits on the unstable rapid cycle; the solution never returns."""


class EventStall(PulseDDEError, RuntimeError):
    """Breaking points accumulated without time advancing (chatter guard)."""


class NoConvergence(PulseDDEError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""
