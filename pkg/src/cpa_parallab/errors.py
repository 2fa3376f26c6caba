"""Exception types raised across the package."""


class ParallabError(Exception):
    """Base class for all package-specific errors."""


class OperandRangeError(ParallabError, ValueError):
    """A weight or input value lies outside the configured integer range."""


class UndefinedCorrelationError(ParallabError, ArithmeticError):
    """Pearson correlation is undefined because one vector has zero variance."""


class HypothesisCapacityError(ParallabError, ValueError):
    """A hypothesis space exceeds the configured enumeration cap."""


class TraceFormatError(ParallabError, ValueError):
    """Trace file magic, version or field encoding is not recognized."""


class TraceTruncationError(ParallabError, ValueError):
    """Trace file is shorter than its header claims."""


class DimensionError(ParallabError, ValueError):
    """Array dimensions are inconsistent with the declared geometry."""


class UnusableForCpaError(ParallabError, ValueError):
    """Imported traces lack the per-trace inputs needed to build hypotheses."""


class FitDegenerateError(ParallabError, ValueError):
    """Decay fit is unidentifiable (e.g. all ordinates equal)."""


class FitConvergenceError(ParallabError, RuntimeError):
    """Decay fit did not converge; carries the last iterate for diagnosis."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class OutputLockError(ParallabError, RuntimeError):
    """Another process holds the lock on the requested output directory."""
