from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from managers.config_manager import HarnessSettings
from managers.dynamics_manager import step_w2
from managers.storage_manager import StorageManager
from protocols import StepRule
from utils import NOOP_LOG, LogFunction

DEFAULT_OUT_DIR = Path('out')


@dataclass
class CliOptions:
    """Command-line flags; ``None`` leaves the config file (or its default) in charge."""

    config: Path | None = None
    out_dir: Path = DEFAULT_OUT_DIR
    seed: int | None = None
    replicates: int | None = None
    threads: int | None = None
    mode: str | None = None
    steps: int | None = None
    trials: int | None = None
    verbose: bool = False
    curve: str | None = None
    manifest: str | None = None

    def overrides(self) -> dict[str, Any]:
        return {
            'run.seed': self.seed,
            'run.replicates': self.replicates,
            'run.threads': self.threads,
            'run.mode': self.mode,
            'run.steps': self.steps,
            'run.trials': self.trials,
        }


@dataclass
class CliContext:
    settings: HarnessSettings
    options: CliOptions
    storage: StorageManager
    logger: LogFunction = NOOP_LOG
    step: StepRule = step_w2
    echo: Callable[[str], None] = print
