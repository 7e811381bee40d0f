from __future__ import annotations

import logging
import os
import typing as T

logger = logging.getLogger(__name__)

MAX_SIZE = 1_000_000

# planar domains only
DIMENSION = 2

FLOAT_FORMAT = ".17g"


CHOLESKY_BACKEND_ENV = "SPDELAB_CHOLESKY_BACKEND"
CHOLESKY_BACKEND_DEFAULT = "auto"
CHOLESKY_BACKEND = os.getenv(CHOLESKY_BACKEND_ENV, CHOLESKY_BACKEND_DEFAULT)

WORKERS_ENV = "SPDELAB_WORKERS"
WORKERS = os.getenv(WORKERS_ENV)


class SpdeLabException(Exception):
    exit_code = 1


class SpdeLabConfigException(SpdeLabException):
    exit_code = 2


class SpdeLabNumericException(SpdeLabException):
    exit_code = 3


def error_raise(exception: type[SpdeLabException], msg: str, **kwargs) -> T.NoReturn:
    logger.error(f"exit condition: {msg}")
    exc = exception(msg)
    for key, value in kwargs.items():
        setattr(exc, key, value)
    raise exc


def worker_count() -> int:
    if WORKERS:
        return max(1, int(WORKERS))
    import psutil

    count = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    logger.debug(f"Using {count} worker threads")
    return count


def set_logging(debug: bool, file=None):
    global logging
    import logging.handlers

    level = logging.DEBUG if debug else logging.INFO
    BASIC_FORMAT = dict(
        fmt="{name}:{funcName}:{lineno}:{levelno}:{message}",
        style="{",
        datefmt="%Y-%m-%d %H:%M:%S",
        validate=True,
    )
    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    while root_logger.handlers:
        root_logger.handlers.pop()
    if file:
        file_handler = logging.handlers.RotatingFileHandler(
            file,
            maxBytes=MAX_SIZE,
            backupCount=1,
        )
        file_handler.setFormatter(logging.Formatter(**BASIC_FORMAT))
        file_handler.setLevel(logging.DEBUG)
        root_logger.addHandler(file_handler)
        return
    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(logging.Formatter(**BASIC_FORMAT))
    root_logger.addHandler(stream_handler)
    logging.debug("Log level set to debug")
