"""Exception types shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; anything else surfaces as ValueError from the offending call.
"""


class BubblekitError(Exception):
    """Base class for package-specific failures."""


class ConfigError(BubblekitError):
    """Malformed or inconsistent configuration input (TOML/CSV/CLI)."""


class QuadratureError(BubblekitError):
    """An adaptive integral did not reach the requested tolerance.

    Carries the achieved absolute-error estimate in ``residual``.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SupportHintError(BubblekitError):
    """A kernel's declared support window failed to bracket its mass."""


class TailMassError(BubblekitError):
    """Kernel mass escapes the solver grid beyond the allowed budget.

    Carries the offending grid point and the escaping mass estimate.
    """

    def __init__(self, message, x=None, mass=None):
        super().__init__(message)
        self.x = x
        self.mass = mass


class KernelInvariantError(BubblekitError):
    """A kernel violates a structural invariant (mass, mean, positivity)."""


class MonotonicityViolationError(BubblekitError):
    """A Picard iterate moved the wrong way; carries the offending index."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class HypothesisViolationError(BubblekitError):
    """Contraction preconditions (down-move floor / recovery cap) failed."""


class NonConvergenceError(BubblekitError):
    """An iteration hit its cap before meeting tolerance.

    Carries the best iterate's report so callers can inspect the trend.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CertificateRejectionError(BubblekitError):
    """A user-declared bound was falsified at a checked point.

    Carries the point and the observed/claimed values.
    """

    def __init__(self, message, point=None, observed=None, claimed=None):
        super().__init__(message)
        self.point = point
        self.observed = observed
        self.claimed = claimed


class DegenerateModelError(BubblekitError):
    """An input model is degenerate for the requested computation."""
