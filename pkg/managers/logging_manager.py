import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
import sys

from utils import LogFunction


def create_logger(
    log_dir: Path, logger_name: str, verbose: bool, console: bool = True
) -> logging.Logger:
    log_dir.mkdir(parents=True, exist_ok=True)

    logger = logging.getLogger(logger_name)
    if logger.handlers:
        return logger

    log_level = logging.DEBUG if verbose else logging.INFO
    logger.setLevel(log_level)

    handler = RotatingFileHandler(log_dir / 'application.log', maxBytes=1_000_000, backupCount=3)
    handler.setLevel(log_level)
    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s', datefmt='%m/%d %H:%M:%S'
    )
    handler.setFormatter(formatter)
    logger.addHandler(handler)

    if console:
        # Warnings and errors also reach the terminal.
        stderr = logging.StreamHandler(sys.stderr)
        stderr.setLevel(logging.WARNING)
        stderr.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
        logger.addHandler(stderr)
    return logger


def close_logger(logger: logging.Logger) -> None:
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)


def create_log_function(logger: logging.Logger) -> LogFunction:
    def log_message(message: str, level: str) -> None:
        log_func = getattr(logger, level.lower(), logger.info)
        log_func(message)

    return log_message
