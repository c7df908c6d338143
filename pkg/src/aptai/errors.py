"""Error classes shared across the toolkit.

All domain errors derive from AptaiError so the CLI can catch one base
class and exit nonzero with the message.
"""


class AptaiError(Exception):
    pass


class ParameterError(AptaiError, ValueError):
    """An argument or configuration value is out of its valid range."""


class ShapeError(AptaiError, ValueError):
    """Array shapes of paired inputs do not agree."""


class SchemaError(AptaiError, ValueError):
    """A file is missing required named columns or sensors."""


class FormatError(AptaiError, ValueError):
    """A file is structurally malformed (ragged rows, gapped intervals, ...)."""


class FeasibilityError(AptaiError, ValueError):
    """No valid alignment path exists for the given lengths."""


class UnitsError(AptaiError, ValueError):
    """Normalized and raw-unit trajectories were mixed."""


class EmptyUtteranceError(AptaiError, ValueError):
    """The input is too short to produce a single frame."""


class UnrecoverableChannelError(AptaiError, ValueError):
    """A sensor channel has no finite samples to interpolate from."""


class DataError(AptaiError, ValueError):
    """A dataset split is empty or otherwise unusable."""


class TrainingError(AptaiError, RuntimeError):
    """Training diverged (non-finite loss or gradient)."""


class CheckpointError(AptaiError, ValueError):
    """Checkpoint magic/version/shape does not match expectations."""
