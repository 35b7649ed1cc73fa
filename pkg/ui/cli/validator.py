from __future__ import annotations

from pathlib import Path
from typing import Callable

from managers.config_manager import (
    ConfigError,
    HarnessSettings,
    RunMode,
    build_kernel,
    build_noise,
)
from managers.dynamics_manager import ExactDomainError
from managers.kernel_manager import KernelError, KernelSpec
from utils import NOOP_LOG, LogFunction
from validation import BaseValidator, Errors, ValidationError, is_exact_domain, noop_on_errors


class CliValidationError(ConfigError):
    pass


class InputPathError(ValidationError):
    pass


class ConfigValidator(BaseValidator):
    """Checks a loaded config before any subcommand touches the engine."""

    def __init__(
        self,
        settings: HarnessSettings,
        raises: bool | type[Exception] = True,
        on_errors: Callable[[Errors], None] = noop_on_errors,
        logger: LogFunction = NOOP_LOG,
    ):
        super().__init__(raises, on_errors)
        self._settings = settings
        self._logger = logger
        self._kernel: KernelSpec | None = None

    def get_kernel(self) -> KernelSpec:
        if self._kernel is None:
            raise ValueError('Kernel not validated')
        return self._kernel

    def kernel(self) -> ConfigValidator:
        try:
            self._kernel = build_kernel(self._settings)
        except (KernelError, ConfigError) as e:
            self._add_error(e)
        return self

    def exact_domain(self, steps: int) -> ConfigValidator:
        """In exact mode an explicit ``run.side`` must satisfy L > 2vn."""
        side = self._settings.run.side
        if self._kernel is None or side is None or self._settings.run.mode is not RunMode.EXACT:
            return self
        if not is_exact_domain(side, self._kernel.range, steps):
            self._add_error(
                ExactDomainError(
                    f'run.side: exact mode needs L > 2vn = {2 * self._kernel.range * steps} '
                    f'for n = {steps}, got L = {side}'
                )
            )
        return self

    def alpha_range(self) -> ConfigValidator:
        alpha = build_noise(self._settings).tail_exponent
        if alpha <= 1:
            self._logger(
                f'ConfigValidator: noise tail exponent alpha = {alpha} <= 1; '
                'only the lower-bound claims apply',
                'warning',
            )
        return self

    def sweep(self) -> ConfigValidator:
        sweep = self._settings.sweep
        if not sweep.key:
            self._add_error(CliValidationError("sweep needs 'sweep.key'", key='sweep.key'))
        if not sweep.values:
            self._add_error(CliValidationError("sweep needs 'sweep.values'", key='sweep.values'))
        return self


def validate_config(
    settings: HarnessSettings,
    steps: int,
    on_errors: Callable[[Errors], None] = noop_on_errors,
    logger: LogFunction = NOOP_LOG,
) -> KernelSpec:
    validator = ConfigValidator(settings, raises=True, on_errors=on_errors, logger=logger)
    validator.kernel().execute()
    validator.exact_domain(steps).alpha_range().execute()
    return validator.get_kernel()


def parse_input_path(value: str | None, what: str) -> Path:
    if not value:
        raise InputPathError(f'{what} path is required')
    path = Path(value)
    if not path.is_file():
        raise InputPathError(f'{what} {path} does not exist')
    return path
