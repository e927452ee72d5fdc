"""Exception types shared across the pipeline.

Everything derives from SickfuseError so callers (notably the CLI) can map
whole failure families to exit codes without enumerating leaf classes.
"""


class SickfuseError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SickfuseError):
    """Invalid configuration value or combination."""


class ContractError(SickfuseError):
    """An API precondition was violated (e.g. non-scalar loss for backward)."""


class ShapeError(SickfuseError):
    """Tensor/image shapes are inconsistent with the requested operation."""


class DegenerateBatch(SickfuseError):
    """Batch statistics requested on a batch too small to provide them."""


class DataError(SickfuseError):
    """Base class for data validation failures (CLI exit code 3)."""


class MissingStream(DataError):
    """A required session file (eye/head/fms/frames) is absent."""


class ParseError(DataError):
    """A session file row could not be parsed; carries the line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" [{path}{':' + str(line) if line is not None else ''}]"
        super().__init__(f"{message}{where}")


class OrderError(DataError):
    """Timestamps in a stream are not strictly increasing."""


class GapError(DataError):
    """A stream has a gap of valid data too long to interpolate."""

    def __init__(self, stream, start, end):
        self.stream = stream
        self.interval = (start, end)
        super().__init__(f"{stream}: gap of valid data in [{start:.3f} s, {end:.3f} s]")


class ZeroVariance(DataError):
    """Normalization requested on a constant sequence."""


class EmptyError(DataError):
    """An operation that needs data received an empty input."""


class RangeError(DataError):
    """A value lies outside its documented domain."""


class ShortWindow(DataError):
    """A window holds fewer samples than the model timestep needs."""


class DegenerateError(DataError):
    """A statistic is undefined for the given input (e.g. zero-variance t-test)."""


class DivergenceError(SickfuseError):
    """Training produced a non-finite loss; carries epoch/batch coordinates."""

    def __init__(self, epoch, batch, message="non-finite training loss"):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} at epoch {epoch}, batch {batch}")
