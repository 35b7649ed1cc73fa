from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum
import math
from typing import Iterator, Sequence

import numpy as np

from managers.kernel_manager import KernelSpec, Offset, apply_kernel, origin, site_index
from managers.noise_manager import NoiseStream
from managers.wall_manager import decompose_at
from protocols import StepRule
from utils import NOOP_LOG, LogFunction
from validation import ValidationError, is_exact_domain

MAX_FIELD_DIM = 3
MAX_FIELD_SIDE = 129


class DynamicsError(ValidationError):
    pass


class MismatchedConfigsError(DynamicsError):
    pass


class ExactDomainError(DynamicsError):
    pass


class FieldModeError(DynamicsError):
    pass


class InitKind(StrEnum):
    ZERO_JOIN_WALL = 'zero_join_wall'
    LEVEL = 'level'
    FREE_LEVEL = 'free_level'


@dataclass(frozen=True)
class Initial:
    kind: InitKind = InitKind.ZERO_JOIN_WALL
    level: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.level):
            raise DynamicsError(f'Initial level must be finite, got {self.level}')


@dataclass
class ProcessConfig:
    """
    One harness process. ``wall`` is None for the free process, a field of
    shape ``shape`` for a wall shared by all replicates, or (R, *shape) for
    one wall per replicate.
    """

    kernel: KernelSpec
    noise: NoiseStream
    shape: tuple[int, ...]
    steps: int
    wall: np.ndarray | None = None
    init: Initial = field(default_factory=Initial)
    replicates: range = range(1)
    exact: bool = False
    keep_fields: bool = False

    def wall_field(self) -> np.ndarray:
        if self.wall is None:
            return np.full(self.shape, -np.inf)
        return self.wall


@dataclass
class Trajectory:
    """Origin time series for every replicate, plus full fields when requested."""

    origin: np.ndarray
    final: np.ndarray
    wall: np.ndarray
    fields: list[np.ndarray] | None = None
    metadata: dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.origin.shape[0]


def initial_field(init: Initial, wall: np.ndarray, batch_shape: tuple[int, ...]) -> np.ndarray:
    """X_0: 0 ∨ W, r ∨ W or ≡ r; a −∞ wall site starts at 0 (resp. r)."""
    if init.kind is InitKind.ZERO_JOIN_WALL:
        start = np.maximum(wall, 0.0)
    elif init.kind is InitKind.LEVEL:
        start = np.maximum(wall, init.level)
    else:
        start = np.full(wall.shape, init.level)
    return np.array(np.broadcast_to(start, batch_shape), dtype=np.float64)


def step_w2(
    prev: np.ndarray, wall: np.ndarray, kernel: KernelSpec, noise: np.ndarray
) -> np.ndarray:
    """
    W + (𝒫X + ε − W)^+ at finite walls, 𝒫X + ε where the wall is −∞.

    Written as a selection so that no arithmetic touches −∞ and an unbinding
    wall leaves the free value bit-for-bit unchanged.
    """
    free = apply_kernel(kernel, prev) + noise
    wall = np.broadcast_to(wall, free.shape)
    return np.where(free >= wall, free, wall)


def step_w3(
    prev: np.ndarray, wall: np.ndarray, kernel: KernelSpec, noise: np.ndarray
) -> np.ndarray:
    """𝒫X + ε + (W − 𝒫X − ε)^+, sharing the −∞ branch with step_w2."""
    free = apply_kernel(kernel, prev) + noise
    wall = np.broadcast_to(wall, free.shape)
    finite_wall = np.where(np.isneginf(wall), free, wall)
    return free + np.maximum(finite_wall - free, 0.0)


def _check_coupled(configs: Sequence[ProcessConfig]) -> None:
    if not configs:
        raise MismatchedConfigsError('No process configurations given')
    head = configs[0]
    for other in configs[1:]:
        mismatched = [
            name
            for name in ('kernel', 'noise', 'shape', 'steps', 'replicates')
            if getattr(other, name) != getattr(head, name)
        ]
        if mismatched:
            raise MismatchedConfigsError(f'Coupled processes differ in {", ".join(mismatched)}')


def _check_domain(config: ProcessConfig) -> None:
    side = min(config.shape)
    if config.exact and not is_exact_domain(side, config.kernel.range, config.steps):
        raise ExactDomainError(
            f'Exact mode needs L > 2vn = {2 * config.kernel.range * config.steps}, got L = {side}'
        )
    if config.keep_fields and (
        len(config.shape) > MAX_FIELD_DIM or max(config.shape) > MAX_FIELD_SIDE
    ):
        raise FieldModeError(
            f'Full-field mode is limited to d <= {MAX_FIELD_DIM}, L <= {MAX_FIELD_SIDE}'
        )


def iterate_coupled(
    configs: Sequence[ProcessConfig], step: StepRule = step_w2
) -> Iterator[tuple[int, np.ndarray | None, list[np.ndarray]]]:
    """
    Advance several processes on one noise realization.

    Yields (n, ε_n, states) for n = 0..steps; ε_0 is None. States have shape
    (R, *shape) and must not be mutated by the consumer.
    """
    _check_coupled(configs)
    for config in configs:
        _check_domain(config)

    head = configs[0]
    batch = (len(head.replicates), *head.shape)
    walls = [config.wall_field() for config in configs]
    states = [initial_field(c.init, w, batch) for c, w in zip(configs, walls)]
    yield 0, None, states

    for n in range(1, head.steps + 1):
        noise = head.noise.field(n, head.shape, head.replicates)
        states = [step(x, w, head.kernel, noise) for x, w in zip(states, walls)]
        yield n, noise, states


def run_coupled(
    configs: Sequence[ProcessConfig], step: StepRule = step_w2, logger: LogFunction = NOOP_LOG
) -> list[Trajectory]:
    head_index = origin(len(configs[0].shape)) if configs else ()
    origins: list[list[np.ndarray]] = [[] for _ in configs]
    fields: list[list[np.ndarray]] = [[] for _ in configs]
    states: list[np.ndarray] = []

    for n, _, states in iterate_coupled(configs, step):
        for k, (config, x) in enumerate(zip(configs, states)):
            origins[k].append(x[(slice(None), *head_index)].copy())
            if config.keep_fields:
                fields[k].append(x.copy())
        if n and n % 256 == 0:
            logger(f'DynamicsManager: advanced {len(configs)} coupled processes to n={n}', 'debug')

    return [
        Trajectory(
            origin=np.stack(origins[k]),
            final=states[k],
            wall=config.wall_field(),
            fields=fields[k] if config.keep_fields else None,
            metadata={'init': config.init.kind.value, 'steps': config.steps},
        )
        for k, config in enumerate(configs)
    ]


def run(
    config: ProcessConfig, step: StepRule = step_w2, logger: LogFunction = NOOP_LOG
) -> Trajectory:
    return run_coupled([config], step, logger)[0]


def estimate_conditional_mean(
    config: ProcessConfig, site: Offset, step: StepRule = step_w2
) -> tuple[float, float]:
    """Monte Carlo μ^𝔚_n(i) with the wall frozen: (mean, standard error) over replicates."""
    trajectory = run(config, step)
    values = trajectory.final[(slice(None), *site_index(site, config.shape))]
    se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else math.inf
    return float(values.mean()), se


def nu_init(wall: np.ndarray) -> np.ndarray:
    """ν_0 = 0 ∨ W, with 0 ∨ −∞ = 0."""
    return np.maximum(wall, 0.0)


def nu_step(prev: np.ndarray, wall: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """𝒫ν + (W − 𝒫ν)^+ = W ∨ 𝒫ν at finite walls, 𝒫ν where the wall is −∞."""
    propagated = apply_kernel(kernel, prev)
    return np.where(propagated >= wall, propagated, wall)


def iterate_nu(wall: np.ndarray, kernel: KernelSpec, steps: int) -> Iterator[np.ndarray]:
    nu = nu_init(wall)
    yield nu
    for _ in range(steps):
        nu = nu_step(nu, wall, kernel)
        yield nu


def nu_run(wall: np.ndarray, kernel: KernelSpec, steps: int) -> np.ndarray:
    nu = nu_init(wall)
    for _ in range(steps):
        nu = nu_step(nu, wall, kernel)
    return nu


@dataclass
class SandwichReport:
    steps: int
    lower_violation: float = 0.0
    upper_violation: float = 0.0
    worst_step: int | None = None
    worst_site: tuple[int, ...] | None = None

    @property
    def max_violation(self) -> float:
        return max(self.lower_violation, self.upper_violation)

    def passed(self, tol: float = 1e-12) -> bool:
        return self.max_violation <= tol


def nu_sandwich_check(
    wall: np.ndarray, site: Offset, steps: int, kernel: KernelSpec
) -> SandwichReport:
    """
    ν^{W̃^i} ∨ ν^{W̃_i} ≤ ν^{W̃} ≤ ν^{W̃^i} + ν^{W̃_i} at every site and step ≤ n.

    Violations are measured, not raised.
    """
    without, only = decompose_at(wall, site)
    report = SandwichReport(steps=steps)
    runs = zip(
        iterate_nu(wall, kernel, steps),
        iterate_nu(without, kernel, steps),
        iterate_nu(only, kernel, steps),
    )
    for n, (full, nu_without, nu_only) in enumerate(runs):
        lower = np.maximum(nu_without, nu_only) - full
        upper = full - (nu_without + nu_only)
        report.lower_violation = max(report.lower_violation, float(lower.max()))
        report.upper_violation = max(report.upper_violation, float(upper.max()))
        excess = np.maximum(lower, upper)
        worst = int(np.argmax(excess))
        if report.worst_step is None or excess.flat[worst] >= report.max_violation:
            report.worst_step = n
            report.worst_site = tuple(int(k) for k in np.unravel_index(worst, wall.shape))
    return report
