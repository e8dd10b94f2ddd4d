from typing import Optional, Sequence
import os
import sys
import uuid

from loguru import logger
from pydantic import ValidationError

from app.cli.router import build_parser
from app.utils.error import GruAunetError, InvalidInputError

# Read the environment variable for the log level
log_level = os.getenv("GRUAUNET_LOG_LEVEL", "INFO").upper()


def configure_logging(level: str = log_level) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except (InvalidInputError, ValidationError) as e:
        logger.error(f"{e}")
        return InvalidInputError.exit_code
    except GruAunetError as e:
        uid = uuid.uuid4()
        logger.error(f"{type(e).__name__}: {e} - Error UUID : {uid}")
        return e.exit_code
    except OSError as e:
        uid = uuid.uuid4()
        logger.error(f"{type(e).__name__}: {e} - Error UUID : {uid}")
        return GruAunetError.exit_code


if __name__ == "__main__":
    sys.exit(main())
