from typing import Iterable, Optional, Tuple


class TSCondError(Exception):
    """Base class for every error raised by tscond."""

    default_message = "tscond failed"

    def __init__(self, message: Optional[str] = None):
        if message is None:
            message = self.default_message

        super().__init__(message)


class ParseError(TSCondError):
    """A CSV cell could not be read as a finite real number."""

    default_message = "Could not parse cell"

    def __init__(self, row: int, column: str, value: str = ""):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"Could not parse {value!r} at row {row}, column {column!r}")


class EmptyFile(TSCondError):
    default_message = "The file holds no data rows"


class SplitTooShort(TSCondError):
    default_message = "Train or test split is shorter than one window"


class ConstantChannel(TSCondError):
    def __init__(self, channel: str):
        self.channel = channel
        super().__init__(f"Channel {channel!r} is constant on the train split")


class SeriesTooShort(TSCondError):
    default_message = "Series is shorter than lookback + horizon"


class TrainTooShort(TSCondError):
    default_message = "Train series is shorter than the requested synthetic length"


class KEven(TSCondError):
    default_message = "Moving-average kernel must be odd"


class ShapeMismatch(TSCondError):
    default_message = "Array shapes do not match"


class NoPairs(TSCondError):
    default_message = "Training needs at least one window pair"


class DivergedLoss(TSCondError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"Training loss became non-finite ({loss}) at epoch {epoch}")


class LayoutMismatch(TSCondError):
    default_message = "Parameter layout does not match the architecture"


class NoSyntheticPairs(TSCondError):
    default_message = "Synthetic series yields no training pair"


class NonFiniteDuringUnroll(TSCondError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"Student parameters became non-finite at unroll step {step}")


class DegenerateExpert(TSCondError):
    default_message = "Expert final parameters equal its initial parameters"

    def __init__(self, message: Optional[str] = None, index: Optional[int] = None):
        self.index = index
        if message is None and index is not None:
            message = f"Expert {index} did not move away from its initialization"
        super().__init__(message)


class TapeInvalid(TSCondError):
    default_message = "Unroll tape was already consumed or is empty"


class BadMagic(TSCondError):
    default_message = "Not a tscond buffer file"


class VersionMismatch(TSCondError):
    def __init__(self, found: int, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(f"Buffer format version {found} is not supported (expected {expected})")


class FingerprintMismatch(TSCondError):
    default_message = "Buffer was generated from a different dataset"


class TruncatedFile(TSCondError):
    default_message = "Buffer file ended unexpectedly"


class SingleExpert(TSCondError):
    default_message = "Consistency needs at least two experts"


class NoBlocks(TSCondError):
    default_message = "Synthetic series holds no complete lookback + horizon block"


class NonFiniteSynthetic(TSCondError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"Synthetic series became non-finite at epoch {epoch}")


class TrainingFailed(TSCondError):
    """Wraps a training error with the expert or trial that raised it."""

    def __init__(self, what: str, index: int, error: Exception):
        self.what = what
        self.index = index
        self.error = error
        super().__init__(f"{what} {index}: {error}")


class MissingArtifact(TSCondError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"Required artifact not found: {path}")


class ConfigError(TSCondError):
    """Every violation found while resolving a run configuration."""

    def __init__(self, violations: Iterable[Tuple[str, str]]):
        self.violations = list(violations)
        lines = [f"{key}: {reason}" for key, reason in self.violations]
        super().__init__("Invalid configuration:\n  " + "\n  ".join(lines))


class MissingColumn(TSCondError):
    def __init__(self, column: str, path: str = ""):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"Column {column!r} not found{where}")


class MalformedFile(TSCondError):
    default_message = "The file is not a well-formed CSV table"
