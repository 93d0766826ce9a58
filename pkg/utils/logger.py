import os
import logging
from typing import Optional

LOGGER_NAME = "owdet"


def setup_logger(log_dir: Optional[str] = None, level: int = logging.INFO, log_name: str = LOGGER_NAME):
    """
    Set up the package logger with a console handler and, when a directory is
    given, a file handler writing <log_dir>/<log_name>.log.

    The log file is truncated on every call, so rerunning a command in the
    same directory replaces its log instead of adding another one.

    Args:
        log_dir: Directory to store log files (no file handler when None)
        level: Logging level
        log_name: Log file stem

    Returns:
        Configured logger
    """
    handlers = [logging.StreamHandler()]

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, f"{log_name}.log")
        handlers.append(logging.FileHandler(log_file, mode="w", encoding="utf-8"))

    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True
    )

    return logging.getLogger(LOGGER_NAME)


# Default logger; handlers are attached by setup_logger
logger = logging.getLogger(LOGGER_NAME)
