from contextlib import contextmanager
from pathlib import Path
from loguru import logger
import uuid
from pydantic import BaseModel
from typing import Type, Any, Iterator, TypeVar

ModelT = TypeVar("ModelT", bound=BaseModel)


class GruAunetError(Exception):
    """Base class of every error raised by the package."""

    exit_code = 2


class InvalidInputError(GruAunetError, ValueError):
    """Configuration, option or data contract violated. Reported with exit code 1."""

    exit_code = 1


class ShapeError(GruAunetError, ValueError):
    pass


class NonFiniteError(GruAunetError, FloatingPointError):
    pass


class GraphError(GruAunetError, RuntimeError):
    pass


class ManifestError(InvalidInputError):
    def __init__(self, message: str, offenders: list[str] | None = None):
        self.offenders = offenders or []
        if self.offenders:
            message = message + "\n" + "\n".join(f"  {o}" for o in self.offenders)
        super().__init__(message)


class CheckpointError(GruAunetError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class UnknownTensorError(CheckpointError):
    pass


class MetricsError(GruAunetError, ValueError):
    pass


class ProtocolError(InvalidInputError):
    pass


class TrainingError(GruAunetError, RuntimeError):
    pass


class OutputError(GruAunetError, OSError):
    """A result file or directory could not be written. Runtime failure, exit code 2."""


@contextmanager
def writing(target: Path | str) -> Iterator[None]:
    """Turn OS failures while producing `target` into `OutputError`."""
    try:
        yield
    except OutputError:
        raise
    except OSError as e:
        logger.error(f"Cannot write {target}: {e}")
        raise OutputError(f"Cannot write {target}: {e}") from e


def handle_validation_error(model: Type[ModelT], **kwargs: Any) -> ModelT:
    try:
        return model(**kwargs)
    except Exception as e:
        uid = uuid.uuid4()
        logger.error("Invalid input format: {}, - Error UUID : {}".format(e, uid))
        raise InvalidInputError(
            "Invalid {} input. Error code {}: {}".format(model.__name__, uid, e)
        ) from e
