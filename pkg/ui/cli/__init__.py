from ui.cli.app import COMMANDS, run_cli
from ui.cli.context import CliContext, CliOptions

__all__ = [
    'COMMANDS',
    'CliContext',
    'CliOptions',
    'run_cli',
]
