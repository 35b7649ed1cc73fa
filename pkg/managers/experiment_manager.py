"""
Monte Carlo experiments on top of the dynamics engine.

Replicates are split into contiguous chunks and handed to a process pool;
results are concatenated in chunk order, and since noise and walls are
counter-based the numbers do not depend on the chunking or thread count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
import math
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

import numpy as np
from pydantic import BaseModel

from managers.dynamics_manager import (
    Initial,
    InitKind,
    ProcessConfig,
    iterate_coupled,
    iterate_nu,
)
from managers.fit_manager import (
    ExponentFit,
    GrowthCurve,
    InsufficientGrowthError,
    fit_exponent,
    intervals_separate,
    lower_exponent,
    threshold_a_n,
)
from managers.kernel_manager import KernelSpec, origin, site_index
from managers.noise_manager import NoiseStream, expected_excess
from managers.oracle_manager import return_sum
from managers.wall_manager import (
    WallFamily,
    WallSpec,
    hat_transform,
    nonnegative_probability,
    running_max,
    sample_wall,
    sample_walls,
    tilde_transform,
)
from utils import NOOP_LOG, LogFunction
from validation import ValidationError, is_exact_domain

CHUNK_SITES = 1 << 22
SE_TOLERANCE = 3.0

T = TypeVar('T')


class ExperimentError(ValidationError):
    pass


class AlphaOutOfRangeError(ExperimentError):
    pass


@dataclass(frozen=True)
class ExperimentSetup:
    kernel: KernelSpec
    noise: NoiseStream
    wall: WallSpec
    wall_seed: int
    shape: tuple[int, ...]
    exact: bool = False
    init: Initial = field(default_factory=Initial)

    @property
    def dim(self) -> int:
        return len(self.shape)

    def fingerprint(self) -> str:
        return (
            f'kernel[{self.kernel.fingerprint()}] noise[{self.noise.fingerprint()}] '
            f'wall[seed={self.wall_seed},{self.wall.fingerprint()}] L={self.shape[0]} '
            f'mode={"exact" if self.exact else "torus"}'
        )

    def process(
        self, steps: int, chunk: range, wall: np.ndarray | None, init: Initial | None = None
    ) -> ProcessConfig:
        return ProcessConfig(
            kernel=self.kernel,
            noise=self.noise,
            shape=self.shape,
            steps=steps,
            wall=wall,
            replicates=chunk,
            exact=self.exact,
            init=init if init is not None else self.init,
        )


def geometric_times(steps: int) -> list[int]:
    """n = 2^0, 2^1, ... up to ``steps``."""
    if steps < 1:
        raise ExperimentError(f'Need at least one step, got {steps}')
    return [1 << k for k in range(steps.bit_length()) if 1 << k <= steps]


def replicate_chunks(
    replicates: int, shape: tuple[int, ...], chunk: int | None = None
) -> list[range]:
    if replicates < 1:
        raise ExperimentError(f'Need at least one replicate, got {replicates}')
    size = chunk or max(1, CHUNK_SITES // math.prod(shape))
    return [range(start, min(start + size, replicates)) for start in range(0, replicates, size)]


def map_chunks(fn: Callable[[range], T], chunks: Sequence[range], threads: int = 1) -> list[T]:
    if threads <= 1 or len(chunks) <= 1:
        return [fn(chunk) for chunk in chunks]
    with ProcessPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(fn, chunks))


def _check_mode(setup: ExperimentSetup, steps: int, logger: LogFunction) -> None:
    if not setup.exact and not is_exact_domain(min(setup.shape), setup.kernel.range, steps):
        logger(
            f'ExperimentManager: torus L={min(setup.shape)} is below 2vn+1 for n={steps}, '
            'results are a torus approximation',
            'warning',
        )


def _walls(setup: ExperimentSetup, chunk: range, quenched: bool = False) -> np.ndarray:
    if quenched:
        return sample_wall(setup.wall, setup.wall_seed, setup.shape)
    return sample_walls(setup.wall, setup.wall_seed, setup.shape, chunk)


def _with_origin_zero(wall: np.ndarray, dim: int) -> np.ndarray:
    out = wall.copy()
    out[(..., *origin(dim))] = 0.0
    return out


def _origin(x: np.ndarray, dim: int) -> np.ndarray:
    return x[(slice(None), *origin(dim))]


def _summarize(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    count = samples.shape[0]
    means = samples.mean(axis=0)
    if count < 2:
        return means, np.full(means.shape, math.inf), np.zeros(means.shape)
    variances = samples.var(axis=0, ddof=1)
    return means, np.sqrt(variances / count), variances


# growth


def _growth_chunk(
    setup: ExperimentSetup, times: tuple[int, ...], quenched: bool, chunk: range
) -> np.ndarray:
    column = {n: k for k, n in enumerate(times)}
    config = setup.process(max(times), chunk, _walls(setup, chunk, quenched))
    out = np.empty((len(chunk), len(times)))
    for n, _, (x,) in iterate_coupled([config]):
        if n in column:
            out[:, column[n]] = _origin(x, setup.dim)
    return out


def estimate_growth(
    setup: ExperimentSetup,
    times: Sequence[int],
    replicates: int,
    quenched: bool = False,
    threads: int = 1,
    chunk: int | None = None,
    logger: LogFunction = NOOP_LOG,
) -> GrowthCurve:
    """
    Mean and SE of X_n(0) on ``times``.

    Annealed by default: replicate r draws its own wall and noise. Quenched
    mode freezes the wall of replicate 0 and only varies the noise.
    """
    times = sorted(set(times))
    if not times or times[0] < 1:
        raise ExperimentError('Growth times must be positive')
    _check_mode(setup, times[-1], logger)

    chunks = replicate_chunks(replicates, setup.shape, chunk)
    worker = partial(_growth_chunk, setup, tuple(times), quenched)
    logger(
        f'ExperimentManager: growth curve over {len(times)} times, {replicates} replicates, '
        f'{len(chunks)} chunks',
        'info',
    )
    samples = np.concatenate(map_chunks(worker, chunks, threads))
    means, ses, variances = _summarize(samples)
    fingerprint = setup.fingerprint() + (' quenched' if quenched else ' annealed')
    return GrowthCurve(
        times=list(times),
        means=means.tolist(),
        ses=ses.tolist(),
        variances=variances.tolist(),
        replicates=replicates,
        fingerprint=fingerprint,
        samples=samples,
    )


# lower-bound chain


class ChainRow(BaseModel):
    n: int
    wall_mean: float
    hat_mean: float
    free_mean: float
    free_se: float
    pathwise_violations: int
    passed: bool


def _chain_chunk(setup: ExperimentSetup, times: tuple[int, ...], chunk: range) -> np.ndarray:
    column = {n: k for k, n in enumerate(times)}
    walls = _walls(setup, chunk)
    configs = [
        setup.process(max(times), chunk, walls),
        setup.process(max(times), chunk, hat_transform(walls)),
        setup.process(max(times), chunk, None),
    ]
    out = np.empty((3, len(chunk), len(times)))
    violations = np.zeros((len(chunk), len(times)))
    for n, _, (x, x_hat, y) in iterate_coupled(configs):
        if n in column:
            for k, state in enumerate((x, x_hat, y)):
                out[k, :, column[n]] = _origin(state, setup.dim)
            spatial = tuple(range(1, x.ndim))
            bad = (x < x_hat) | (x_hat < y)
            violations[:, column[n]] = bad.sum(axis=spatial)
    return np.concatenate([out, violations[None]], axis=0)


def lower_bound_chain(
    setup: ExperimentSetup,
    times: Sequence[int],
    replicates: int,
    threads: int = 1,
    logger: LogFunction = NOOP_LOG,
) -> list[ChainRow]:
    """Coupled E X^𝔚_n(0) ≥ E X^Ŵ_n(0) ≥ E Y_n(0) = 0, each within 3 SE."""
    times = tuple(sorted(set(times)))
    _check_mode(setup, times[-1], logger)
    chunks = replicate_chunks(replicates, setup.shape)
    parts = map_chunks(partial(_chain_chunk, setup, times), chunks, threads)
    stacked = np.concatenate(parts, axis=1)
    x, x_hat, y, violations = stacked

    rows = []
    for k, n in enumerate(times):
        upper_gap = _summarize((x[:, k] - x_hat[:, k])[:, None])
        lower_gap = _summarize((x_hat[:, k] - y[:, k])[:, None])
        free_mean, free_se, _ = _summarize(y[:, k][:, None])
        passed = (
            upper_gap[0][0] >= -SE_TOLERANCE * upper_gap[1][0]
            and lower_gap[0][0] >= -SE_TOLERANCE * lower_gap[1][0]
            and abs(free_mean[0]) <= SE_TOLERANCE * free_se[0]
            and violations[:, k].sum() == 0
        )
        rows.append(
            ChainRow(
                n=n,
                wall_mean=float(x[:, k].mean()),
                hat_mean=float(x_hat[:, k].mean()),
                free_mean=float(free_mean[0]),
                free_se=float(free_se[0]),
                pathwise_violations=int(violations[:, k].sum()),
                passed=bool(passed),
            )
        )
    logger(
        f'ExperimentManager: lower-bound chain passed at {sum(r.passed for r in rows)}/{len(rows)}',
        'info',
    )
    return rows


# mu recursion


class MuCheckReport(BaseModel):
    times: list[int]
    means: list[float]
    step_ses: list[float]
    q: float
    c0_estimate: float
    c0_values: list[float]
    passing_c0: list[float]
    smallest_passing_c0: float | None
    largest_passing_c0: float | None
    jensen_step_passed: bool
    worst_n: int | None = None


def _hat_pair_chunk(setup: ExperimentSetup, steps: int, chunk: range) -> np.ndarray:
    """Per replicate and n: X^Ŵ_n(0), X^{Ŵ⁰}_n(0) and 𝒫X^{Ŵ⁰}_n(0)."""
    hat = hat_transform(_walls(setup, chunk))
    configs = [
        setup.process(steps, chunk, hat),
        setup.process(steps, chunk, _with_origin_zero(hat, setup.dim)),
    ]
    kernel = setup.kernel
    out = np.empty((3, len(chunk), steps + 1))
    for n, _, (x_hat, x_hat0) in iterate_coupled(configs):
        out[0, :, n] = _origin(x_hat, setup.dim)
        out[1, :, n] = _origin(x_hat0, setup.dim)
        propagated = np.zeros(len(chunk))
        for offset, p in zip(kernel.offsets, kernel.probs):
            propagated += p * x_hat0[(slice(None), *site_index(offset, setup.shape))]
        out[2, :, n] = propagated
    return out


def _hat_pair_samples(
    setup: ExperimentSetup, steps: int, replicates: int, threads: int
) -> np.ndarray:
    chunks = replicate_chunks(replicates, setup.shape)
    parts = map_chunks(partial(_hat_pair_chunk, setup, steps), chunks, threads)
    return np.concatenate(parts, axis=1)


def _c0_from_samples(samples: np.ndarray) -> float:
    mu = samples[0].mean(axis=0)
    direct = samples[1].mean(axis=0) - mu
    propagated = samples[2].mean(axis=0) - mu
    return float(max(direct.max(), propagated.max()))


def estimate_c0(
    setup: ExperimentSetup,
    steps: int,
    replicates: int,
    threads: int = 1,
    logger: LogFunction = NOOP_LOG,
) -> float:
    """sup_n of E X^{Ŵ⁰}_n − E X^Ŵ_n(0), at the origin and after one kernel step."""
    c0 = _c0_from_samples(_hat_pair_samples(setup, steps, replicates, threads))
    logger(f'ExperimentManager: empirical C0 = {c0:.6f} over n <= {steps}', 'info')
    return c0


def mu_recursion_check(
    setup: ExperimentSetup,
    steps: int,
    replicates: int,
    c0_values: Iterable[float],
    threads: int = 1,
    logger: LogFunction = NOOP_LOG,
) -> MuCheckReport:
    """
    μ_n = E X^Ŵ_n(0) against μ_n ≥ μ_{n−1} + G(μ_{n−1} + C₀)q − 3·SE.

    SE is the standard error of the per-replicate increment. The step before
    C₀ enters, μ_n ≥ μ_{n−1} + G(𝒫E X^{Ŵ⁰}_{n−1}(0))q, is checked as well.
    """
    _check_mode(setup, steps, logger)
    samples = _hat_pair_samples(setup, steps, replicates, threads)
    law = setup.noise.spec
    q = nonnegative_probability(setup.wall)

    mu = samples[0].mean(axis=0)
    increments = np.diff(samples[0], axis=1)
    _, step_ses, _ = _summarize(increments)
    slack = mu[1:] - mu[:-1] + SE_TOLERANCE * step_ses

    propagated = samples[2].mean(axis=0)
    jensen = np.array([expected_excess(law, x) * q for x in propagated[:-1]])
    jensen_ok = slack >= jensen
    worst = None if jensen_ok.all() else int(np.argmin(slack - jensen)) + 1

    candidates = sorted(c0_values)
    passing = []
    for c0 in candidates:
        drift = np.array([expected_excess(law, x + c0) * q for x in mu[:-1]])
        if (slack >= drift).all():
            passing.append(c0)

    report = MuCheckReport(
        times=list(range(steps + 1)),
        means=mu.tolist(),
        step_ses=[0.0, *step_ses.tolist()],
        q=q,
        c0_estimate=_c0_from_samples(samples),
        c0_values=candidates,
        passing_c0=passing,
        smallest_passing_c0=passing[0] if passing else None,
        largest_passing_c0=passing[-1] if passing else None,
        jensen_step_passed=bool(jensen_ok.all()),
        worst_n=worst,
    )
    logger(
        f'ExperimentManager: mu recursion q={q}, C0 estimate {report.c0_estimate:.4f}, '
        f'passing C0 from {report.smallest_passing_c0} to {report.largest_passing_c0}',
        'info',
    )
    return report


# nu mean recursion


class NuCheckReport(BaseModel):
    steps: int
    a_upper: float
    means: list[float]
    ses: list[float]
    violations: list[int]

    @property
    def passed(self) -> bool:
        return not self.violations


def nu_drift(wall: WallSpec, a: float, x: float) -> float:
    """𝔾(x) = E((1−a)W̃ − x)^+, where W̃ = W on {W ≥ 0} and −∞ otherwise."""
    keep = 1.0 - wall.q_neginf
    scale = 1.0 - a
    if wall.family is WallFamily.NEG_INFINITY:
        return 0.0
    if wall.family is WallFamily.FLAT:
        return keep * max(scale * wall.height - x, 0.0) if wall.height >= 0 else 0.0
    law = wall.finite_law
    if law is None:
        return 0.0
    if scale <= 0:
        return keep * 0.5 * max(-x, 0.0)
    if x >= 0:
        return keep * scale * expected_excess(law, x / scale)
    return keep * (scale * expected_excess(law, 0.0) - 0.5 * x)


def _nu_chunk(setup: ExperimentSetup, steps: int, chunk: range) -> np.ndarray:
    walls = tilde_transform(_walls(setup, chunk))
    out = np.empty((len(chunk), steps + 1))
    for k in range(len(chunk)):
        for n, nu in enumerate(iterate_nu(walls[k], setup.kernel, steps)):
            out[k, n] = nu[origin(setup.dim)]
    return out


def nu_mean_recursion_check(
    setup: ExperimentSetup,
    steps: int,
    replicates: int,
    horizon: int = 2000,
    threads: int = 1,
    logger: LogFunction = NOOP_LOG,
) -> NuCheckReport:
    """ν_n = E ν^{W̃}_n(0) against ν_n ≥ ν_{n−1} + 𝔾(ν_{n−1}) − 3·SE."""
    bracket = return_sum(setup.kernel, horizon, logger)
    chunks = replicate_chunks(replicates, setup.shape)
    samples = np.concatenate(map_chunks(partial(_nu_chunk, setup, steps), chunks, threads))
    means, ses, _ = _summarize(samples)
    _, step_ses, _ = _summarize(np.diff(samples, axis=1))

    violations = [
        n
        for n in range(1, steps + 1)
        if means[n] + SE_TOLERANCE * step_ses[n - 1]
        < means[n - 1] + nu_drift(setup.wall, bracket.upper, float(means[n - 1]))
    ]
    if violations:
        logger(f'ExperimentManager: nu recursion fails at n = {violations[:5]}', 'warning')
    return NuCheckReport(
        steps=steps,
        a_upper=bracket.upper,
        means=means.tolist(),
        ses=ses.tolist(),
        violations=violations,
    )


# upper bound


class UpperBoundRow(BaseModel):
    n: int
    k: float
    a_n: float
    r_n: float
    p_exceed: float
    p_decouple: float
    p_rn: float
    domination_violations: int
    replicates: int


def _upper_chunk(
    setup: ExperimentSetup, n: int, r_n: float, rn_radius: int, chunk: range
) -> np.ndarray:
    walls = _walls(setup, chunk)
    configs = [
        setup.process(n, chunk, walls),
        setup.process(n, chunk, walls, init=Initial(InitKind.LEVEL, r_n)),
        setup.process(n, chunk, None, init=Initial(InitKind.FREE_LEVEL, r_n)),
    ]
    dominated = np.zeros(len(chunk))
    states: list[np.ndarray] = []
    for _, _, states in iterate_coupled(configs):
        spatial = tuple(range(1, states[0].ndim))
        dominated += (states[0] > states[1]).sum(axis=spatial)
    x, x_high, y_high = (_origin(s, setup.dim) for s in states)
    r_max = np.array([running_max(wall, rn_radius, setup.kernel.range) for wall in walls])
    return np.stack([x, x_high, y_high, r_max, dominated])


def upper_bound_experiment(
    setup: ExperimentSetup,
    k_values: Iterable[float],
    n: int,
    replicates: int,
    threads: int = 1,
    logger: LogFunction = NOOP_LOG,
) -> list[UpperBoundRow]:
    """
    Compare X^𝔚 with X^{𝔚,r_n} and Y^{r_n} started at r_n = a_n/2, for each K.

    The same seeds are used for every K, so the decoupling frequencies are
    comparable across K.
    """
    alpha = setup.noise.spec.tail_exponent
    if alpha <= 1:
        raise AlphaOutOfRangeError(f'Upper-bound comparison needs alpha > 1, got {alpha}')
    _check_mode(setup, n, logger)

    side = min(setup.shape)
    rn_radius = min(n, (side - 1) // (2 * setup.kernel.range))
    if rn_radius < n:
        logger(
            f'ExperimentManager: R_n ball clipped to radius {rn_radius * setup.kernel.range} '
            f'on a torus of side {side}',
            'warning',
        )
    theta = setup.wall.tail_exponent
    wall_scale = 1.0 if math.isinf(theta) else math.log(n) ** (1.0 / theta)
    chunks = replicate_chunks(replicates, setup.shape)

    rows = []
    for k in k_values:
        a_n = threshold_a_n(n, k, alpha, theta, setup.dim)
        r_n = a_n / 2.0
        worker = partial(_upper_chunk, setup, n, r_n, rn_radius)
        x, x_high, y_high, r_max, dominated = np.concatenate(
            map_chunks(worker, chunks, threads), axis=1
        )
        rows.append(
            UpperBoundRow(
                n=n,
                k=k,
                a_n=a_n,
                r_n=r_n,
                p_exceed=float(np.mean(x >= a_n)),
                p_decouple=float(np.mean(x_high != y_high)),
                p_rn=float(np.mean(r_max > k * wall_scale)),
                domination_violations=int(dominated.sum()),
                replicates=replicates,
            )
        )
        logger(
            f'ExperimentManager: K={k} a_n={a_n:.4f} p_decouple={rows[-1].p_decouple:.4f}',
            'info',
        )
    return rows


# trajectory export


@dataclass
class CoupledOrigins:
    """X^𝔚_n(0) and the coupled Y_n(0) with shape (steps + 1, R), plus W(0) per replicate."""

    x: np.ndarray
    y: np.ndarray
    wall: np.ndarray
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)


def coupled_origin_trajectory(
    setup: ExperimentSetup,
    steps: int,
    replicates: int,
    snapshot_times: Iterable[int] = (),
    logger: LogFunction = NOOP_LOG,
) -> CoupledOrigins:
    """
    Origin series of the wall process next to the free process on the same noise.

    Full fields of replicate 0 are copied at ``snapshot_times``; that needs the
    domain to fit full-field mode.
    """
    _check_mode(setup, steps, logger)
    wanted = set(snapshot_times)
    xs, ys, walls_at_origin = [], [], []
    snapshots: dict[int, np.ndarray] = {}
    for chunk in replicate_chunks(replicates, setup.shape):
        walls = _walls(setup, chunk)
        configs = [
            setup.process(steps, chunk, walls),
            setup.process(steps, chunk, None),
        ]
        if wanted and chunk.start == 0:
            configs[0].keep_fields = True
        x_series, y_series = [], []
        for n, _, (x, y) in iterate_coupled(configs):
            x_series.append(_origin(x, setup.dim))
            y_series.append(_origin(y, setup.dim))
            if n in wanted and chunk.start == 0:
                snapshots[n] = x[0].copy()
        xs.append(np.stack(x_series))
        ys.append(np.stack(y_series))
        walls_at_origin.append(_origin(walls, setup.dim))
    return CoupledOrigins(
        x=np.concatenate(xs, axis=1),
        y=np.concatenate(ys, axis=1),
        wall=np.concatenate(walls_at_origin),
        snapshots=snapshots,
    )


# sweeps


class SweepRow(BaseModel):
    label: str
    curve: GrowthCurve
    fit: ExponentFit | None = None
    error: str | None = None
    predicted_lower: float | None = None
    separates_next: bool | None = None


def predicted_lower_exponent(setup: ExperimentSetup) -> float:
    return lower_exponent(setup.noise.spec.tail_exponent, setup.wall.tail_exponent)


def mark_separation(rows: Sequence[SweepRow]) -> None:
    """
    Sets ``separates_next`` on neighbouring fitted rows with different predictions.

    True when the bootstrap interval of the row with the larger predicted lower
    exponent lies strictly above the other row's interval.
    """
    for row, following in zip(rows, rows[1:]):
        if row.fit is None or following.fit is None:
            continue
        if row.predicted_lower is None or following.predicted_lower is None:
            continue
        if row.predicted_lower == following.predicted_lower:
            continue
        if row.predicted_lower > following.predicted_lower:
            row.separates_next = intervals_separate(row.fit, following.fit)
        else:
            row.separates_next = intervals_separate(following.fit, row.fit)


def run_sweep(
    setups: Mapping[str, ExperimentSetup],
    times: Sequence[int],
    replicates: int,
    threads: int = 1,
    logger: LogFunction = NOOP_LOG,
) -> list[SweepRow]:
    """One growth curve and exponent fit per labelled setup, in the given order."""
    rows = []
    for label, setup in setups.items():
        logger(f'ExperimentManager: sweep point {label}', 'info')
        curve = estimate_growth(setup, times, replicates, threads=threads, logger=logger)
        predicted = predicted_lower_exponent(setup)
        try:
            fit = fit_exponent(curve, logger=logger)
        except InsufficientGrowthError as e:
            logger(f'ExperimentManager: no fit for {label}: {e}', 'warning')
            rows.append(SweepRow(label=label, curve=curve, error=str(e), predicted_lower=predicted))
            continue
        fit.predicted_lower = predicted
        rows.append(SweepRow(label=label, curve=curve, fit=fit, predicted_lower=predicted))
    mark_separation(rows)
    return rows
