"""Exception taxonomy shared across the toolkit."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    """Array/tensor has an incompatible shape for the requested operation."""


class ConfigurationError(ValueError):
    """A run-level configuration cannot be satisfied (corpus, config file)."""


class DataError(RuntimeError):
    """The data source cannot produce what the caller asked for."""


class SegmentTooShortError(DataError):
    """Utterance has fewer frames than the requested segment length.

    Callers are expected to skip or concatenate; this is distinct from a
    generic validation failure so they can react programmatically.
    """


class AudioReadError(OSError):
    """Audio file exists but could not be decoded."""


class UnknownSpeakerError(LookupError):
    """Speaker index or code has no entry in the active speaker table."""


class DuplicateChoiceError(RuntimeError):
    """A (session, section, part, subject) tuple was already answered."""


class TrainingDivergedError(RuntimeError):
    """A loss became non-finite; a diagnostic checkpoint was written."""
