"""Exception types shared across the package."""


class SwitchstabError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SwitchstabError, ValueError):
    pass


class NonFiniteMatrix(SwitchstabError, ValueError):
    pass


class NoExactFit(SwitchstabError):
    """Recorded data admits no exactly consistent linear system (corrupt input)."""


class NotInformative(SwitchstabError):
    """Synthesis LMI is infeasible: the data certify no common stabilizing gain."""


class SynthesisInconclusive(SwitchstabError):
    """Feasibility engine returned Unknown; callers must treat this as failure."""


class EmptyMatchSet(SwitchstabError):
    """Online data became incompatible with every recorded mode."""


class NoExcitationDirection(SwitchstabError):
    """No kernel direction with a nonzero input component is available."""


class GenerationFailed(SwitchstabError):
    """Random mode generation exhausted its retry budget."""


class ExcitationFailed(SwitchstabError):
    """Initialization trajectory never reached the requested regressor rank."""


class RecurrenceViolated(SwitchstabError):
    """A constructed timer sequence broke its defining recurrence (fit bug)."""


class CertificateViolated(SwitchstabError):
    """Per-step contraction certificate failed on a run where it was asserted."""

    def __init__(self, message, step=None, case=None):
        super().__init__(message)
        self.step = step
        self.case = case


class ConditionUnsatisfied(SwitchstabError):
    """Dwell/activation condition fails (contraction factor >= 1)."""
