from __future__ import annotations

from collections.abc import Iterable


class AirexError(Exception):
    """Base class for errors raised by the air-quality app."""


class ShapeError(AirexError, ValueError):
    pass


class ConfigError(AirexError, ValueError):
    pass


class DataError(AirexError, ValueError):
    def __init__(self, message: str, errors: Iterable[str] = ()) -> None:
        self.errors = list(errors)
        if self.errors:
            message = message + "\n" + "\n".join(f"  {e}" for e in self.errors)
        super().__init__(message)


class DatasetParseError(DataError):
    pass


class DatasetIntegrityError(DataError):
    pass


class MissingDataError(DataError):
    pass


class VocabularyError(DataError):
    pass


class DivergenceError(AirexError, ArithmeticError):
    def __init__(self, epoch: int, batch: int, value: float) -> None:
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(
            f"Non-finite loss {value!r} at epoch {epoch}, batch {batch}."
        )


class CheckpointError(AirexError):
    pass
