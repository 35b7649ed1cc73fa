"""
Pathwise property suites for the harness engine.

Every suite runs ``trials`` randomized instances (one per replicate index, so
wall and noise differ between trials) and records how often a proven
inequality fails, together with the first failure found.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable

import numpy as np

from managers.dynamics_manager import (
    Initial,
    InitKind,
    ProcessConfig,
    iterate_coupled,
    iterate_nu,
    nu_sandwich_check,
    run,
    step_w2,
    step_w3,
)
from managers.experiment_manager import ExperimentSetup, geometric_times, replicate_chunks
from managers.kernel_manager import apply_kernel, origin, srw_kernel
from managers.wall_manager import (
    WallFamily,
    WallSpec,
    hat_transform,
    sample_walls,
    tilde_transform,
)
from protocols import StepRule
from utils import NOOP_LOG, LogFunction, derive_seed

PATHWISE_TOL = 1e-12
SUM_TOL = 1e-9
SECOND_WALL_TAG = 'property-wall'


@dataclass
class PropertyViolation:
    property: str
    seed: int
    wall_seed: int
    trial: int
    site: tuple[int, ...]
    step: int
    excess: float

    def describe(self) -> str:
        return (
            f'{self.property}: seed={self.seed} wall_seed={self.wall_seed} trial={self.trial} '
            f'site={self.site} step={self.step} excess={self.excess:.3e}'
        )


@dataclass
class PropertyReport:
    name: str
    trials: int
    tol: float = PATHWISE_TOL
    checked: int = 0
    violations: int = 0
    max_excess: float = -math.inf
    first: PropertyViolation | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def observe(self, excess: np.ndarray, n: int, chunk: range, setup: ExperimentSetup) -> None:
        """``excess`` has shape (R, *shape); entries above ``tol`` are violations."""
        self.checked += excess.size
        if excess.size:
            self.max_excess = max(self.max_excess, float(np.nanmax(excess)))
        bad = excess > self.tol
        count = int(bad.sum())
        if not count:
            return
        self.violations += count
        if self.first is None:
            index = np.unravel_index(int(np.argmax(bad)), excess.shape)
            self.first = PropertyViolation(
                property=self.name,
                seed=setup.noise.seed,
                wall_seed=setup.wall_seed,
                trial=chunk.start + int(index[0]),
                site=tuple(int(k) for k in index[1:]),
                step=n,
                excess=float(excess[index]),
            )


def property_wall(spec: WallSpec) -> WallSpec:
    """Walls used by the suites; an all −∞ law would make them vacuous."""
    if spec.family is WallFamily.NEG_INFINITY:
        return WallSpec(family=WallFamily.GAUSSIAN, q_neginf=0.25)
    return spec


def _walls(setup: ExperimentSetup, chunk: range) -> np.ndarray:
    return sample_walls(property_wall(setup.wall), setup.wall_seed, setup.shape, chunk)


def _chunks(setup: ExperimentSetup, trials: int) -> list[range]:
    return replicate_chunks(trials, setup.shape) if trials > 0 else []


def check_wall_monotonicity(
    setup: ExperimentSetup, steps: int, trials: int, step: StepRule = step_w2
) -> PropertyReport:
    """W ≤ W′ ⇒ X^W_n ≤ X^{W′}_n, with W′ = W ∨ (an independent wall)."""
    report = PropertyReport('wall_monotonicity', trials)
    other_seed = derive_seed(setup.wall_seed, SECOND_WALL_TAG)
    for chunk in _chunks(setup, trials):
        low = _walls(setup, chunk)
        other = sample_walls(property_wall(setup.wall), other_seed, setup.shape, chunk)
        high = np.maximum(low, other)
        configs = [setup.process(steps, chunk, low), setup.process(steps, chunk, high)]
        for n, _, (x_low, x_high) in iterate_coupled(configs, step):
            report.observe(x_low - x_high, n, chunk, setup)
    return report


def check_initial_monotonicity(
    setup: ExperimentSetup, steps: int, trials: int, level: float = 1.0, step: StepRule = step_w2
) -> PropertyReport:
    """X_0 = 0 ∨ W ≤ X′_0 = r ∨ W ⇒ X_n ≤ X′_n."""
    report = PropertyReport('initial_monotonicity', trials)
    high_init = Initial(InitKind.LEVEL, max(level, 0.0))
    for chunk in _chunks(setup, trials):
        walls = _walls(setup, chunk)
        configs = [
            setup.process(steps, chunk, walls, Initial()),
            setup.process(steps, chunk, walls, high_init),
        ]
        for n, _, (x_low, x_high) in iterate_coupled(configs, step):
            report.observe(x_low - x_high, n, chunk, setup)
    return report


def check_wall_domination(
    setup: ExperimentSetup, steps: int, trials: int, step: StepRule = step_w2
) -> PropertyReport:
    """X_n ≥ W and X_n ≥ 𝒫X_{n−1} + ε_n at every site."""
    report = PropertyReport('wall_domination', trials)
    for chunk in _chunks(setup, trials):
        walls = _walls(setup, chunk)
        prev: np.ndarray | None = None
        for n, noise, (x,) in iterate_coupled([setup.process(steps, chunk, walls)], step):
            excess = walls - x
            if prev is not None and noise is not None:
                excess = np.maximum(excess, apply_kernel(setup.kernel, prev) + noise - x)
            report.observe(excess, n, chunk, setup)
            prev = x
    return report


def _hat_configs(setup: ExperimentSetup, steps: int, chunk: range) -> list[ProcessConfig]:
    hat = hat_transform(_walls(setup, chunk))
    hat0 = hat.copy()
    hat0[(..., *origin(setup.dim))] = 0.0
    return [
        setup.process(steps, chunk, hat0),
        setup.process(steps, chunk, hat),
        setup.process(steps, chunk, None),
    ]


def check_hat_chain(
    setup: ExperimentSetup, steps: int, trials: int, step: StepRule = step_w2
) -> PropertyReport:
    """X^{Ŵ⁰}_n ≥ X^Ŵ_n ≥ Y_n on the same noise."""
    report = PropertyReport('hat_chain', trials)
    for chunk in _chunks(setup, trials):
        for n, _, (x_hat0, x_hat, y) in iterate_coupled(_hat_configs(setup, steps, chunk), step):
            report.observe(np.maximum(x_hat - x_hat0, y - x_hat), n, chunk, setup)
    return report


def check_difference_bound(
    setup: ExperimentSetup, steps: int, trials: int, step: StepRule = step_w2
) -> PropertyReport:
    """
    D_n = X^{Ŵ⁰}_n − X^Ŵ_n against one step and against the iterated bound.

    One step: D_n ≤ 𝒫D_{n−1} + b_n δ_0 with b_n = ε_n(0)^− + (𝒫Y_{n−1})^−(0).
    Iterated: D_n ≤ S_n where S_n = 𝒫S_{n−1} + b_n δ_0, S_0 = 0.
    """
    report = PropertyReport('difference_bound', trials, tol=SUM_TOL)
    zero = origin(setup.dim)
    at_origin = (slice(None), *zero)
    for chunk in _chunks(setup, trials):
        prev_diff: np.ndarray | None = None
        prev_free: np.ndarray | None = None
        bound = np.zeros((len(chunk), *setup.shape))
        configs = _hat_configs(setup, steps, chunk)
        for n, noise, (x_hat0, x_hat, y) in iterate_coupled(configs, step):
            diff = x_hat0 - x_hat
            if prev_diff is not None and prev_free is not None and noise is not None:
                b_n = np.maximum(-noise[at_origin], 0.0) + np.maximum(
                    -apply_kernel(setup.kernel, prev_free)[at_origin], 0.0
                )
                one_step = apply_kernel(setup.kernel, prev_diff)
                one_step[at_origin] += b_n
                bound = apply_kernel(setup.kernel, bound)
                bound[at_origin] += b_n
                report.observe(np.maximum(diff - one_step, diff - bound), n, chunk, setup)
            else:
                report.observe(diff - bound, n, chunk, setup)
            prev_diff, prev_free = diff, y
    return report


def check_step_identity(
    setup: ExperimentSetup, steps: int, trials: int, step: StepRule = step_w2
) -> PropertyReport:
    """step_w2 and step_w3 agree on every state the engine visits."""
    report = PropertyReport('w2_w3_identity', trials)
    for chunk in _chunks(setup, trials):
        walls = _walls(setup, chunk)
        prev: np.ndarray | None = None
        for n, noise, (x,) in iterate_coupled([setup.process(steps, chunk, walls)], step):
            if prev is not None and noise is not None:
                w2 = step_w2(prev, walls, setup.kernel, noise)
                w3 = step_w3(prev, walls, setup.kernel, noise)
                report.observe(np.abs(w2 - w3), n, chunk, setup)
            prev = x
    return report


def random_step_identity(
    samples: int, seed: int, dims: tuple[int, ...] = (1, 2, 3), side: int = 5
) -> PropertyReport:
    """
    step_w2 against step_w3 on random (state, wall, noise) triples.

    About ``samples`` sites are drawn, split evenly over ``dims``; a fifth of
    the wall sites are −∞.
    """
    report = PropertyReport('w2_w3_identity', samples)
    rng = np.random.default_rng(seed)
    for dim in dims:
        kernel = srw_kernel(dim)
        shape = (side,) * dim
        count = max(1, -(-samples // (len(dims) * math.prod(shape))))
        prev = rng.normal(scale=3.0, size=(count, *shape))
        noise = rng.normal(size=(count, *shape))
        wall = rng.normal(scale=3.0, size=(count, *shape))
        wall[rng.random(size=wall.shape) < 0.2] = -np.inf
        diff = np.abs(step_w2(prev, wall, kernel, noise) - step_w3(prev, wall, kernel, noise))
        report.checked += diff.size
        report.max_excess = max(report.max_excess, float(diff.max()))
        report.violations += int((diff > report.tol).sum())
    return report


def check_nu_sandwich(
    setup: ExperimentSetup, steps: int, trials: int, site: tuple[int, ...] | None = None
) -> PropertyReport:
    """ν^{W̃^i} ∨ ν^{W̃_i} ≤ ν^{W̃} ≤ ν^{W̃^i} + ν^{W̃_i} for tilde walls."""
    report = PropertyReport('nu_sandwich', trials, tol=SUM_TOL)
    site = site or origin(setup.dim)
    for chunk in _chunks(setup, trials):
        walls = tilde_transform(_walls(setup, chunk))
        for k, wall in enumerate(walls):
            result = nu_sandwich_check(wall, site, steps, setup.kernel)
            report.checked += 1
            report.max_excess = max(report.max_excess, result.max_violation)
            if result.passed(report.tol):
                continue
            report.violations += 1
            if report.first is None:
                report.first = PropertyViolation(
                    property=report.name,
                    seed=setup.noise.seed,
                    wall_seed=setup.wall_seed,
                    trial=chunk.start + k,
                    site=result.worst_site or site,
                    step=result.worst_step or 0,
                    excess=result.max_violation,
                )
    return report


def check_nu_domination(
    setup: ExperimentSetup,
    steps: int,
    trials: int,
    noise_replicates: int = 64,
    side: int = 9,
    step: StepRule = step_w2,
) -> PropertyReport:
    """
    Monte Carlo μ^𝔚_n(0) ≥ ν^𝔚_n(0) − 3·SE with the wall frozen, at n = 1, 2, 4, ...

    Runs on a torus of side ``side``; the inequality holds on any torus.
    """
    report = PropertyReport('nu_domination', trials)
    times = set(geometric_times(steps)) if steps > 0 else set()
    side = max(side, 2 * setup.kernel.range + 1)
    small = ExperimentSetup(
        kernel=setup.kernel,
        noise=setup.noise,
        wall=property_wall(setup.wall),
        wall_seed=setup.wall_seed,
        shape=(side,) * setup.dim,
    )
    zero = origin(setup.dim)
    cell = (1,) * (setup.dim + 1)
    for trial in range(trials):
        wall = sample_walls(small.wall, small.wall_seed, small.shape, range(trial, trial + 1))[0]
        config = small.process(steps, range(noise_replicates), wall)
        origin_series = run(config, step).origin
        means = origin_series.mean(axis=1)
        ses = origin_series.std(axis=1, ddof=1) / math.sqrt(noise_replicates)
        for n, nu in enumerate(iterate_nu(wall, small.kernel, steps)):
            if n not in times:
                continue
            excess = nu[zero] - means[n] - 3.0 * ses[n]
            report.observe(np.full(cell, excess), n, range(trial, trial + 1), small)
    return report


SUITES: dict[str, Callable[..., PropertyReport]] = {
    'wall_monotonicity': check_wall_monotonicity,
    'initial_monotonicity': check_initial_monotonicity,
    'wall_domination': check_wall_domination,
    'hat_chain': check_hat_chain,
    'difference_bound': check_difference_bound,
    'w2_w3_identity': check_step_identity,
}


def run_property_suite(
    setup: ExperimentSetup,
    steps: int,
    trials: int,
    step: StepRule = step_w2,
    nu_trials: int | None = None,
    logger: LogFunction = NOOP_LOG,
) -> list[PropertyReport]:
    """All suites in a fixed order; the ν suites use ``nu_trials`` (default: ``trials``)."""
    if trials == 0:
        logger('PropertyManager: zero trials requested, every property passes vacuously', 'warning')
    reports = []
    for name, suite in SUITES.items():
        logger(f'PropertyManager: running {name} over {trials} trials', 'info')
        reports.append(suite(setup, steps, trials, step=step))
    nu_count = trials if nu_trials is None else nu_trials
    reports.append(check_nu_sandwich(setup, steps, nu_count))
    reports.append(check_nu_domination(setup, steps, nu_count, step=step))

    for report in reports:
        if not report.passed and report.first is not None:
            logger(f'PropertyManager: violation {report.first.describe()}', 'error')
    return reports


def first_violation(reports: list[PropertyReport]) -> PropertyViolation | None:
    for report in reports:
        if report.first is not None:
            return report.first
    return None
