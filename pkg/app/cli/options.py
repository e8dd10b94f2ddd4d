from pathlib import Path
from typing import Optional, Type, TypeVar
import json

from loguru import logger
from pydantic import BaseModel, ValidationError

from app.models.config import RunConfig
from app.models.metrics import ThresholdPolicy
from app.utils.error import InvalidInputError, handle_validation_error

ModelT = TypeVar("ModelT", bound=BaseModel)


def load_json_model(model: Type[ModelT], path: Path) -> ModelT:
    try:
        with open(path, "r") as file:
            payload = json.load(file)
    except FileNotFoundError:
        logger.error("File {} not found".format(path))
        raise InvalidInputError(f"File not found: {path}")
    except json.JSONDecodeError as e:
        logger.error("Invalid JSON file {}".format(path))
        raise InvalidInputError(f"Invalid JSON in {path}: {e}")
    if not isinstance(payload, dict):
        raise InvalidInputError(f"{path} must hold a JSON object")
    return handle_validation_error(model, **payload)


def load_config(path: Optional[Path], preset: str = "toy") -> RunConfig:
    if path is None:
        return RunConfig.toy() if preset == "toy" else RunConfig.default()
    return load_json_model(RunConfig, path)


def parse_policy(text: str) -> ThresholdPolicy:
    try:
        return ThresholdPolicy.parse(text)
    except (ValueError, ValidationError) as e:
        raise InvalidInputError(str(e)) from e


def add_config_options(parser) -> None:
    parser.add_argument("--config", type=Path, help="RunConfig JSON file")
    parser.add_argument(
        "--preset",
        choices=["toy", "default"],
        default="toy",
        help="built-in configuration used when --config is absent",
    )
