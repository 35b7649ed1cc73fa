from __future__ import annotations

from functools import partial
import sys
from typing import Callable

from managers.config_manager import load_config
from managers.dynamics_manager import step_w2
from managers.logging_manager import close_logger, create_log_function, create_logger
from managers.storage_manager import StorageManager
from protocols import StepRule
from ui.cli.context import CliContext, CliOptions
from ui.cli.error_handlers import report_error
from ui.cli.handlers import HANDLERS
from validation import ValidationError

LOGGER_NAME = 'harness'
COMMANDS = tuple(HANDLERS)

print_error = partial(print, file=sys.stderr)


def run_cli(
    command: str,
    options: CliOptions,
    step: StepRule = step_w2,
    echo: Callable[[str], None] = print,
    echo_error: Callable[[str], None] = print_error,
) -> int:
    """
    Load the config, run one subcommand and map failures to an exit code.

    Logs go to ``<out-dir>/logs/application.log``. ``step`` replaces the
    engine's step rule, which is how tests plant a broken engine.
    """
    if command not in HANDLERS:
        echo_error(f'error: unknown command {command!r}')
        return 1

    options.out_dir.mkdir(parents=True, exist_ok=True)
    logger = create_logger(options.out_dir / 'logs', LOGGER_NAME, options.verbose)
    log = create_log_function(logger)
    log(f'CliRunner: {command} started, out-dir {options.out_dir}', 'info')
    try:
        settings = load_config(options.config, options.overrides(), log)
        context = CliContext(
            settings=settings,
            options=options,
            storage=StorageManager(options.out_dir, log),
            logger=log,
            step=step,
            echo=echo,
        )
        code = HANDLERS[command](context)
        log(f'CliRunner: {command} finished', 'info')
    except (ValidationError, ExceptionGroup) as e:
        code = report_error(e, log, echo_error)
        log(f'CliRunner: {command} failed with exit code {code}', 'info')
    finally:
        close_logger(logger)
    return code
