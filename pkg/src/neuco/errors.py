"""Exception hierarchy shared across the pipeline.

Every stage raises subclasses of :class:`NeucoError` so the CLI can map
failures to exit codes uniformly.
"""


class NeucoError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(NeucoError):
    """Input violates a documented precondition or invariant."""


class FormatError(NeucoError):
    """A binary file has a wrong magic number or unsupported version."""


class CorruptionError(NeucoError):
    """A binary file is truncated or internally inconsistent."""


class TrainingError(NeucoError):
    """Training produced a non-finite loss or otherwise diverged."""
