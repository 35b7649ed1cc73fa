from typing import Callable

from managers.config_manager import ConfigError
from managers.fit_manager import InsufficientGrowthError
from utils import LogFunction
from validation import Errors, ValidationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_ORACLE_MISMATCH = 4
EXIT_PROPERTY_VIOLATION = 5
EXIT_INSUFFICIENT_GROWTH = 6


class OracleMismatchError(ValidationError):
    pass


class PropertyViolationError(ValidationError):
    pass


class ReplayMismatchError(ValidationError):
    pass


def build_validation_on_errors(action: str, logger: LogFunction) -> Callable[[Errors], None]:
    def on_errors(errors: Errors) -> None:
        messages: list[str] = []
        for err in errors:
            text = str(err).strip()
            if not text:
                continue
            for line in text.splitlines():
                line = line.strip()
                if line:
                    messages.append(line)

        count = len(messages) if messages else len(errors)
        error_summary = f'{count} Validation errors in {action}:'

        logger(error_summary, 'error')
        for msg in messages if messages else (str(e) for e in errors):
            logger(f'- {msg}', 'error')

    return on_errors


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, BaseExceptionGroup):
        codes = [exit_code_for(inner) for inner in error.exceptions]
        return EXIT_CONFIG if EXIT_CONFIG in codes else max(codes)
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, InsufficientGrowthError):
        return EXIT_INSUFFICIENT_GROWTH
    if isinstance(error, OracleMismatchError):
        return EXIT_ORACLE_MISMATCH
    if isinstance(error, PropertyViolationError):
        return EXIT_PROPERTY_VIOLATION
    return EXIT_VALIDATION


def error_lines(error: BaseException) -> list[str]:
    if isinstance(error, BaseExceptionGroup):
        return [line for inner in error.exceptions for line in error_lines(inner)]
    name = type(error).__name__
    return [f'{name}: {line}' for line in str(error).splitlines() or ['']]


def report_error(
    error: BaseException, logger: LogFunction, echo: Callable[[str], None]
) -> int:
    """Log and print ``error``; returns its exit code."""
    code = exit_code_for(error)
    for line in error_lines(error):
        logger(f'CliRunner: {line}', 'debug')
        echo(f'error: {line}')
    return code
