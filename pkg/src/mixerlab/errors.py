"""Exception taxonomy shared across the package."""


class MixerLabError(Exception):
    """Base class for package-specific failures."""


class ShapeError(MixerLabError, ValueError):
    """Tensor dimensions do not satisfy an operation's contract."""


class ConfigError(MixerLabError, ValueError):
    """Invalid configuration value, unknown key, or inconsistent model setup."""


class ContractError(MixerLabError, ValueError):
    """A call violated an interface contract (e.g. wrong mask count)."""


class EmptyFilterError(MixerLabError, ValueError):
    """Sample filtering produced an empty subset."""


class IdxFormatError(MixerLabError, ValueError):
    """Base class for IDX dataset file problems."""


class IdxBadMagicError(IdxFormatError):
    """IDX magic number mismatch; message names the file offset."""


class IdxTruncatedError(IdxFormatError):
    """IDX payload shorter than the header promises."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files disagree on sample count."""


class CheckpointError(MixerLabError, ValueError):
    """Base class for checkpoint container problems."""


class CheckpointBadMagicError(CheckpointError):
    """Checkpoint file does not start with the container magic."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version not supported by this build."""


class CheckpointKindError(CheckpointError):
    """Checkpoint holds a different model kind than requested."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint payload truncated or otherwise inconsistent."""
