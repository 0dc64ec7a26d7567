"""Error taxonomy shared across the package.

Exit-code mapping used by the CLI: ShapeError/ContractError -> 1
(validation failure), ConfigError/IoError -> 2, everything else bubbles.
"""


class SketchStyleError(Exception):
    """Base class for package errors."""


class ShapeError(SketchStyleError):
    """Tensor shapes are incompatible with an operation's contract."""


class ContractError(SketchStyleError):
    """A precondition other than shape was violated (non-binary mask,
    non-scalar loss, unconfigured resolution, ...)."""


class ConfigError(SketchStyleError):
    """Invalid configuration or corpus specification."""


class IoError(SketchStyleError):
    """File could not be read, written, or parsed."""


class NumericError(SketchStyleError):
    """A numerical routine failed to converge or produced non-finite values."""


class TrainingFailure(SketchStyleError):
    """Training did not reach its contracted quality bar within budget."""
