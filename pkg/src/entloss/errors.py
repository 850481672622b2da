"""Exception types shared across the package.

Kept in one flat module so callers (and the CLI's exit-code mapping) can
distinguish failure classes without import cycles.
"""


class InvalidInputError(ValueError):
    """An operation received arguments outside its contract."""


class InvalidConfigError(ValueError):
    """Configuration value out of range, or unknown config key."""


class DegenerateTargetError(ValueError):
    """Swapped cross entropy with an unsmoothed (one-hot) target: log p(y|x) = log 0."""


class ForwardCacheError(RuntimeError):
    """Backward pass invoked with a missing or stale forward cache."""


class IdxParseError(ValueError):
    """Base class for IDX container parse failures."""


class BadMagicError(IdxParseError):
    """Magic number does not start 0x0000 or declares rank 0."""


class UnsupportedTypeError(IdxParseError):
    """Element-type code other than u8 (0x08)."""


class TruncatedPayloadError(IdxParseError):
    """Header or payload shorter than the declared sizes."""


class DataIntegrityError(ValueError):
    """Decoded dataset violates its contract (label range, count mismatch, ...)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss, gradient, or parameter."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an incompatible format version."""


class CheckpointShapeError(CheckpointError):
    """Tensor shapes disagree with the manifest or the network config."""


class CheckpointCorruptError(CheckpointError):
    """Missing files, wrong tensor count, or unparseable manifest."""
