"""Exception taxonomy shared across the package.

CLI exit-code mapping: ConfigError -> 2, DataError -> 3,
CheckpointMismatchError -> 4.
"""


class SpeechScrubError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SpeechScrubError, ValueError):
    """An argument violates an operation's preconditions."""


class DegenerateInputError(InvalidInputError):
    """Input is structurally valid but degenerate (e.g. all-zero reference)."""


class StateError(SpeechScrubError, RuntimeError):
    """Operation applied to an object in the wrong state (e.g. double warp)."""


class ConfigError(SpeechScrubError):
    """Bad or inconsistent run configuration."""


class DataError(SpeechScrubError):
    """Corpus / file-format problem (unreadable alignment, bad WAV, ...)."""


class AlignmentFormatError(DataError):
    """Malformed alignment file (overlaps, negative times, bad syntax)."""


class CheckpointMismatchError(SpeechScrubError):
    """Checkpoint fingerprint disagrees with the active configuration."""
