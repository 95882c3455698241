"""Error taxonomy shared across the engine.

Every failure mode named in the file format, matcher, trainer, and evaluator
contracts maps to its own class so callers (and the CLI) can react per kind.
"""


class OriginIdError(Exception):
    """Base class for all engine errors."""


class FormatError(OriginIdError):
    """Malformed embedding file."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class FlagMismatchError(FormatError):
    """File flags do not match the expected payload kind (embeddings vs projection)."""


class TruncatedPayloadError(FormatError):
    pass


class ChecksumMismatchError(FormatError):
    pass


class NonFiniteValueError(OriginIdError):
    """A NaN or Inf appeared where only finite values are allowed."""


class DuplicateIdError(OriginIdError):
    pass


class DegenerateVectorError(OriginIdError):
    """Vector norm below the degeneracy threshold; direction is undefined."""


class DimensionMismatchError(OriginIdError):
    pass


class LabelError(OriginIdError):
    """A label index points outside the batch."""


class MissingGroundTruthError(OriginIdError):
    pass


class NumericalError(OriginIdError):
    """A numerical routine failed to converge or verify (e.g. SVD reconstruction)."""


class ConfigError(OriginIdError):
    """Config file rejected; message names the offending line."""
