"""
Run configuration.

Config files are flat ``key = value`` text with dotted sections::

    kernel = "srw"
    kernel.dim = 3
    noise.family = gaussian
    wall.family = stretched_exponential
    wall.theta = 0.5
    run.steps = 256

Values not set in the file come from ``HARNESS_*`` environment variables
(``HARNESS_RUN__SEED=7``) or a ``.env`` file, then from the defaults below.
"""

from __future__ import annotations

from enum import StrEnum
from pathlib import Path
import re
from typing import Any

from pydantic import BaseModel, Field
from pydantic import ValidationError as PydanticValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from managers.dynamics_manager import Initial, InitKind
from managers.experiment_manager import ExperimentSetup
from managers.kernel_manager import KernelSpec, parse_weights, srw_kernel, validate_kernel
from managers.noise_manager import NOISE_TAG, NoiseFamily, NoiseSpec, NoiseStream
from managers.wall_manager import WALL_TAG, WallFamily, WallSpec
from utils import NOOP_LOG, LogFunction, derive_seed, format_float, pick, sha256_bytes
from validation import ValidationError

SECTIONS = ('kernel', 'noise', 'wall', 'run', 'sweep')
QUOTE_PATTERN = re.compile(r'[\s#;=,"]')
# Default exact domains above this many sites fall back to a torus of at most this size.
EXACT_SITE_CAP = 1 << 24


class ConfigError(ValidationError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class KernelType(StrEnum):
    SRW = 'srw'
    TABLE = 'table'


class RunMode(StrEnum):
    EXACT = 'exact'
    TORUS = 'torus'


class KernelSettings(BaseModel):
    type: KernelType = KernelType.SRW
    dim: int = Field(default=3, ge=1)
    weights: str | None = None


class NoiseSettings(BaseModel):
    family: NoiseFamily = NoiseFamily.GAUSSIAN
    alpha: float = Field(default=2.0, gt=0)
    sigma: float = Field(default=1.0, gt=0)
    seed: int | None = None


class WallSettings(BaseModel):
    family: WallFamily = WallFamily.NEG_INFINITY
    theta: float = Field(default=1.0, gt=0)
    sigma: float = Field(default=1.0, gt=0)
    height: float = 0.0
    q_neginf: float = Field(default=0.0, ge=0, lt=1)
    seed: int | None = None


class RunSettings(BaseModel):
    seed: int = 0
    steps: int = Field(default=256, ge=1)
    replicates: int = Field(default=100, ge=1)
    side: int | None = Field(default=None, ge=3)
    mode: RunMode = RunMode.EXACT
    threads: int = Field(default=1, ge=1)
    init: InitKind = InitKind.ZERO_JOIN_WALL
    level: float = 0.0
    quenched: bool = False
    export_trajectory: bool = False
    trials: int = Field(default=100, ge=0)
    horizon: int = Field(default=2000, ge=1)


class SweepSettings(BaseModel):
    key: str | None = None
    values: str | None = None
    k_values: str = '1,2,4'
    c0_values: str = '0,0.5,1,2,5,10'


class HarnessSettings(BaseSettings):
    kernel: KernelSettings = Field(default_factory=KernelSettings)
    noise: NoiseSettings = Field(default_factory=NoiseSettings)
    wall: WallSettings = Field(default_factory=WallSettings)
    run: RunSettings = Field(default_factory=RunSettings)
    sweep: SweepSettings = Field(default_factory=SweepSettings)

    model_config = SettingsConfigDict(
        env_prefix='HARNESS_',
        env_nested_delimiter='__',
        env_file='.env',
        env_file_encoding='utf-8',
        extra='ignore',
    )


def _strip_comment(line: str) -> str:
    quoted = False
    for k, char in enumerate(line):
        if char == '"':
            quoted = not quoted
        elif char == '#' and not quoted:
            return line[:k]
    return line


def _unquote(value: str) -> str:
    if len(value) >= 2 and value[0] == value[-1] == '"':
        return value[1:-1]
    return value


def parse_config_text(text: str) -> dict[str, dict[str, str]]:
    """
    Flat ``section.key = value`` lines into nested raw strings.

    A bare ``kernel = x`` line sets ``kernel.type``.
    """
    values: dict[str, dict[str, str]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"Line {number}: expected 'key = value', got '{line}'")
        key, value = (part.strip() for part in line.split('=', 1))
        if key == 'kernel':
            key = 'kernel.type'
        section, _, name = key.partition('.')
        if section not in SECTIONS or not name:
            raise ConfigError(f"Line {number}: unknown config key '{key}'", key=key)
        fields = _section_fields(section)
        if name not in fields:
            raise ConfigError(f"Line {number}: unknown config key '{key}'", key=key)
        values.setdefault(section, {})[name] = _unquote(value)
    return values


def _section_fields(section: str) -> dict[str, Any]:
    model = HarnessSettings.model_fields[section].annotation
    return model.model_fields  # type: ignore[union-attr]


def settings_from_values(values: dict[str, dict[str, Any]]) -> HarnessSettings:
    try:
        return HarnessSettings(**values)
    except PydanticValidationError as e:
        error = e.errors()[0]
        key = '.'.join(str(part) for part in error['loc'])
        raise ConfigError(f"Invalid value for '{key}': {error['msg']}", key=key) from e


def set_dotted(values: dict[str, dict[str, Any]], key: str, value: Any) -> None:
    if key == 'kernel':
        key = 'kernel.type'
    section, _, name = key.partition('.')
    if section not in SECTIONS or name not in _section_fields(section):
        raise ConfigError(f"Unknown config key '{key}'", key=key)
    values.setdefault(section, {})[name] = value


def load_config(
    path: Path | None,
    overrides: dict[str, Any] | None = None,
    logger: LogFunction = NOOP_LOG,
) -> HarnessSettings:
    """Config file, then CLI overrides on top; unset keys fall back to env and defaults."""
    values: dict[str, dict[str, Any]] = {}
    if path is not None:
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as e:
            raise ConfigError(f'Cannot read config file {path}: {e}') from e
        values = parse_config_text(text)
        logger(f'ConfigManager: loaded {path}', 'info')
    for key, value in (overrides or {}).items():
        if value is not None:
            set_dotted(values, key, value)
    return settings_from_values(values)


def with_override(settings: HarnessSettings, key: str, value: Any) -> HarnessSettings:
    values = {section: getattr(settings, section).model_dump() for section in SECTIONS}
    set_dotted(values, key, value)
    return settings_from_values(values)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, StrEnum):
        return value.value
    if isinstance(value, float):
        return format_float(value)
    text = str(value)
    return f'"{text}"' if QUOTE_PATTERN.search(text) or not text else text


def serialize_config(settings: HarnessSettings) -> str:
    """Inverse of ``parse_config_text``; unset optional keys are left out."""
    lines = []
    for section in SECTIONS:
        for name, value in getattr(settings, section).model_dump().items():
            if value is not None:
                lines.append(f'{section}.{name} = {_format_value(value)}')
    return '\n'.join(lines) + '\n'


def config_hash(settings: HarnessSettings) -> str:
    return sha256_bytes(serialize_config(settings).encode())


def noise_seed(settings: HarnessSettings) -> int:
    if settings.noise.seed is not None:
        return settings.noise.seed
    return derive_seed(settings.run.seed, NOISE_TAG)


def wall_seed(settings: HarnessSettings) -> int:
    if settings.wall.seed is not None:
        return settings.wall.seed
    return derive_seed(settings.run.seed, WALL_TAG)


def build_kernel(settings: HarnessSettings) -> KernelSpec:
    kernel = settings.kernel
    if kernel.type is KernelType.SRW:
        return srw_kernel(kernel.dim)
    if not kernel.weights:
        raise ConfigError("kernel.type = table needs 'kernel.weights'", key='kernel.weights')
    return validate_kernel(parse_weights(kernel.weights, kernel.dim))


def build_noise(settings: HarnessSettings) -> NoiseSpec:
    return NoiseSpec(**pick(settings.noise.model_dump(), ['family', 'alpha', 'sigma']))


def build_wall(settings: HarnessSettings) -> WallSpec:
    return WallSpec(
        **pick(settings.wall.model_dump(), ['family', 'theta', 'sigma', 'height', 'q_neginf'])
    )


def domain_side(settings: HarnessSettings, kernel: KernelSpec, steps: int | None = None) -> int:
    """``run.side`` when set, otherwise the smallest exact side 2vn + 1."""
    if settings.run.side is not None:
        return settings.run.side
    return 2 * kernel.range * (steps or settings.run.steps) + 1


def capped_side(dim: int, cap: int = EXACT_SITE_CAP) -> int:
    """Largest odd side L with L^d <= cap."""
    side = round(cap ** (1.0 / dim))
    while side**dim > cap:
        side -= 1
    return side if side % 2 else side - 1


def build_setup(settings: HarnessSettings, steps: int | None = None) -> ExperimentSetup:
    """
    The experiment described by ``settings``.

    Without ``run.side``, exact mode uses the smallest exact side 2vn + 1 while
    that stays within ``EXACT_SITE_CAP`` sites; beyond it the run becomes a torus
    approximation of side ``capped_side(d)``.
    """
    kernel = build_kernel(settings)
    side = domain_side(settings, kernel, steps)
    exact = settings.run.mode is RunMode.EXACT
    if exact and settings.run.side is None and side**kernel.dim > EXACT_SITE_CAP:
        side, exact = capped_side(kernel.dim), False
    return ExperimentSetup(
        kernel=kernel,
        noise=NoiseStream(seed=noise_seed(settings), spec=build_noise(settings)),
        wall=build_wall(settings),
        wall_seed=wall_seed(settings),
        shape=(side,) * kernel.dim,
        exact=exact,
        init=Initial(settings.run.init, settings.run.level),
    )


def parse_number_list(text: str, key: str) -> list[float]:
    try:
        return [float(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        raise ConfigError(f"'{key}' must be a comma-separated list of numbers", key=key) from e
