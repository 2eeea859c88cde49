"""Exception types shared across the package."""


class MderError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MderError):
    """Invalid configuration value, grammar, or input file."""


class AnnotationError(MderError):
    """Annotated sentence or tag sequence violates its invariants."""


class CorpusSizeError(MderError):
    """A corpus is too small (or empty) for the requested operation."""


class LexiconError(MderError):
    """Rule lexicon is malformed (missing file, cross-list duplicate)."""


class VocabularyError(MderError):
    """Character or rule-tag index out of table bounds."""


class ShapeError(MderError):
    """Tensor or sequence shape mismatch."""


class CountError(MderError):
    """Metric counts violate their preconditions."""


class OracleSizeError(MderError):
    """Brute-force oracle asked to enumerate too large an instance."""


class TrainingDivergedError(MderError):
    """Training produced a non-finite loss."""


class CheckpointError(MderError):
    """Model checkpoint is missing pieces or fails shape validation."""
