"""
Error types raised by the reconstruction models
"""


class ReconstructionError(Exception):
    """Base class for every error raised by this package"""


class InvalidConfigError(ReconstructionError, ValueError):
    """A parameter set violates its invariants"""


class SpecError(InvalidConfigError):
    """An experiment spec file is invalid; carries the offending line"""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class InvalidQueryError(ReconstructionError, ValueError):
    """A correlation query is malformed (negative lag, unknown sensor)"""


class DomainError(ReconstructionError, ValueError):
    """An argument lies outside the domain of a formula"""


class UndefinedMSSCError(ReconstructionError):
    """MSSC needs at least two sensors"""


class DecompositionError(ReconstructionError):
    """Covariance factorization failed even after jitter"""


class RegionDegenerateError(ReconstructionError):
    """The asyn-over-syn threshold has a non-positive denominator"""

    def __init__(self, message, asyn_always_better):
        self.asyn_always_better = asyn_always_better
        super().__init__(message)


class NumericBracketError(ReconstructionError):
    """A root could not be bracketed"""


class ScaleLimitError(ReconstructionError):
    """A request exceeds the tractable problem size"""
