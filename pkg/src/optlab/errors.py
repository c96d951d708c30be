"""Exception hierarchy shared across the lab."""


class OptlabError(Exception):
    """Base class for all optlab-specific failures."""


class DivergedError(OptlabError):
    """An iterate or gradient became non-finite; the run must be aborted."""


class SingularPreconditionerError(OptlabError):
    """A zero preconditioner entry would have to divide a nonzero quantity."""


class UnsupportedPresetError(OptlabError):
    """The requested framework/method default combination does not exist."""


class LemmaPreconditionError(OptlabError):
    """A closed-form shortcut was requested for data that does not admit it."""


class SingularKernelError(OptlabError):
    """The row Gram matrix is singular; rows are linearly dependent."""


class DataGenerationError(OptlabError):
    """The synthetic generator exhausted its redraw budget."""


class AllTrialsDivergedError(OptlabError):
    """Every step size in a tuning grid diverged, extensions included."""
