"""
Random-walk ground truth for the dynamics engine.

First-return probabilities come from a dynamic program for the walk killed at
the origin; return probabilities p_k(0) come either from an exact product
formula (nearest-neighbour walks) or from m-step convolutions, and feed the
renewal equation for the origin's first-return sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Iterator

import numpy as np
from scipy import stats

from managers.kernel_manager import (
    KernelSpec,
    Offset,
    apply_kernel,
    m_step_probs,
    origin,
    site_index,
)
from utils import NOOP_LOG, LogFunction
from validation import ValidationError

POLYA_RETURN_3D = 0.340537329550999


class OracleError(ValidationError):
    pass


class NonpositiveSpikeError(OracleError):
    pass


@dataclass
class FirstReturnTable:
    """
    f_k(j): probability that the walk from j first hits 0 at step k.

    ``origin`` holds p_k^{0}(0,0) for k = 0..N (index 0 is 0), ``cumulative``
    the field Σ_{k≤N} f_k(j) over the box, ``history`` every f_k when kept.
    """

    kernel: KernelSpec
    horizon: int
    shape: tuple[int, ...]
    origin: np.ndarray
    cumulative: np.ndarray
    history: np.ndarray | None = None

    def value(self, k: int, site: Offset) -> float:
        if self.history is None:
            raise OracleError('First-return history was not kept for this table')
        if k < 1 or k > self.horizon:
            return 0.0
        return float(self.history[k][site_index(site, self.shape)])

    def cumulative_at(self, site: Offset) -> float:
        return float(self.cumulative[site_index(site, self.shape)])


def _box_shape(kernel: KernelSpec, horizon: int) -> tuple[int, ...]:
    side = 2 * kernel.range * max(horizon, 1) + 1
    return (side,) * kernel.dim


def iterate_first_returns(kernel: KernelSpec, shape: tuple[int, ...]) -> Iterator[np.ndarray]:
    """f_1, f_2, ... over ``shape``; f_k = 𝒫(f_{k−1} with the origin removed)."""
    zero = origin(kernel.dim)
    current = np.zeros(shape)
    current[zero] = 1.0
    current = apply_kernel(kernel, current)
    while True:
        yield current
        killed = current.copy()
        killed[zero] = 0.0
        current = apply_kernel(kernel, killed)


def first_return_probs(
    kernel: KernelSpec,
    horizon: int,
    shape: tuple[int, ...] | None = None,
    keep_history: bool = False,
) -> FirstReturnTable:
    """
    The killed-walk table up to ``horizon``.

    The default box has radius v·N, so nothing wraps and the table is exact
    for the lattice walk; a smaller ``shape`` gives the torus walk.
    """
    if horizon < 1:
        raise OracleError(f'Horizon must be at least 1, got {horizon}')
    shape = shape or _box_shape(kernel, horizon)
    zero = origin(kernel.dim)

    cumulative = np.zeros(shape)
    origin_series = np.zeros(horizon + 1)
    history = [np.zeros(shape)] if keep_history else None
    for k, current in enumerate(iterate_first_returns(kernel, shape), start=1):
        cumulative += current
        origin_series[k] = current[zero]
        if history is not None:
            history.append(current.copy())
        if k == horizon:
            break

    return FirstReturnTable(
        kernel=kernel,
        horizon=horizon,
        shape=shape,
        origin=origin_series,
        cumulative=cumulative,
        history=np.stack(history) if history is not None else None,
    )


def killed_walk_masses(
    kernel: KernelSpec, start: Offset, horizon: int
) -> tuple[np.ndarray, np.ndarray]:
    """Forward walk from ``start`` killed at 0: (absorbed at step k, surviving after k)."""
    shape = _box_shape(kernel, horizon + max(abs(c) for c in start))
    zero = origin(kernel.dim)
    mass = np.zeros(shape)
    mass[site_index(start, shape)] = 1.0
    absorbed, surviving = [0.0], [1.0]
    for _ in range(horizon):
        mass = apply_kernel(kernel, mass)
        absorbed.append(float(mass[zero]))
        mass[zero] = 0.0
        surviving.append(float(mass.sum()))
    return np.array(absorbed), np.array(surviving)


def is_nearest_neighbour(kernel: KernelSpec) -> bool:
    if kernel.range != 1 or len(kernel.offsets) != 2 * kernel.dim:
        return False
    expected = 1.0 / (2 * kernel.dim)
    return all(
        sum(map(abs, j)) == 1 and abs(p - expected) < 1e-15
        for j, p in zip(kernel.offsets, kernel.probs)
    )


def _nearest_neighbour_return_probs(dim: int, horizon: int) -> np.ndarray:
    """
    p_k(0) for the simple random walk in ``dim`` dimensions.

    Each step picks an axis uniformly, so the step counts per block of axes are
    binomial and each axis performs a 1-d walk; blocks combine by a binomial
    convolution.
    """
    ks = np.arange(horizon + 1)
    line = np.where(ks % 2 == 0, stats.binom.pmf(ks // 2, ks, 0.5), 0.0)
    combined = line
    for axes in range(2, dim + 1):
        share = (axes - 1) / axes
        mixed = np.zeros(horizon + 1)
        for k in range(horizon + 1):
            m = np.arange(k + 1)
            weights = stats.binom.pmf(m, k, share)
            mixed[k] = float(np.dot(weights, combined[m] * line[k - m]))
        combined = mixed
    return combined


def _convolution_return_probs(kernel: KernelSpec, horizon: int) -> np.ndarray:
    """p_k(0) = Σ_x p_m(x) p_{k−m}(x) with m = ⌈k/2⌉, from m-step distributions."""
    half = -(-horizon // 2)
    side = 2 * kernel.range * max(half, 1) + 1
    shape = (side,) * kernel.dim
    dist = np.zeros(shape)
    dist[origin(kernel.dim)] = 1.0
    steps = [dist]
    for _ in range(half):
        dist = apply_kernel(kernel, dist)
        steps.append(dist)

    probs = np.zeros(horizon + 1)
    for k in range(horizon + 1):
        m = -(-k // 2)
        probs[k] = float(np.sum(steps[m] * steps[k - m]))
    return probs


def return_probs(kernel: KernelSpec, horizon: int) -> np.ndarray:
    """p_k(0) for k = 0..N."""
    if is_nearest_neighbour(kernel):
        return _nearest_neighbour_return_probs(kernel.dim, horizon)
    return _convolution_return_probs(kernel, horizon)


def first_returns_from_returns(returns: np.ndarray) -> np.ndarray:
    """Renewal equation p_k(0) = Σ_{m=1}^k f_m p_{k−m}(0), solved for f (f_0 = 0)."""
    first = np.zeros_like(returns)
    for k in range(1, len(returns)):
        first[k] = returns[k] - float(np.dot(first[1:k], returns[k - 1 : 0 : -1]))
    return first


@dataclass
class ReturnSum:
    """Bracket [a_N, a_N + tail] for the total return probability a."""

    horizon: int
    a_n: float
    tail: float
    decay_exponent: float
    heuristic: bool = True

    @property
    def upper(self) -> float:
        return self.a_n + self.tail

    def contains(self, value: float) -> bool:
        return self.a_n <= value <= self.upper


def _fit_tail(returns: np.ndarray) -> tuple[float, float]:
    """Σ_{k>N} p_k(0) from a power law fitted over the last decade of k; (tail, slope)."""
    horizon = len(returns) - 1
    ks = np.arange(max(horizon // 10, 1), horizon + 1)
    window = returns[ks]
    positive = window > 0
    if positive.sum() < 2:
        return 0.0, -math.inf
    slope, intercept = np.polyfit(np.log(ks[positive]), np.log(window[positive]), 1)
    if slope >= -1.0:
        return math.inf, float(slope)
    density = positive.mean()
    tail = density * math.exp(intercept) * horizon ** (slope + 1.0) / (-slope - 1.0)
    return float(tail), float(slope)


def return_sum(kernel: KernelSpec, horizon: int, logger: LogFunction = NOOP_LOG) -> ReturnSum:
    """
    a_N = Σ_{k≤N} p_k^{0}(0,0) with a heuristic upper end.

    With G_N = Σ_{k≤N} p_k(0) and a fitted tail T ≈ Σ_{k>N} p_k(0), the total
    return probability is a = 1 − 1/G ≤ 1 − 1/(G_N + T).
    """
    if horizon < 1:
        raise OracleError(f'Horizon must be at least 1, got {horizon}')
    returns = return_probs(kernel, horizon)
    first = first_returns_from_returns(returns)
    a_n = float(np.sum(first[1:]))

    tail, slope = _fit_tail(returns)
    green = float(np.sum(returns))
    upper = 1.0 if math.isinf(tail) else 1.0 - 1.0 / (green + tail)
    upper = max(upper, a_n)
    logger(
        f'OracleManager: a_{horizon} = {a_n:.6f}, upper = {upper:.6f}, p_k(0) ~ k^{slope:.3f}',
        'info',
    )
    return ReturnSum(horizon=horizon, a_n=a_n, tail=upper - a_n, decay_exponent=slope)


def nu_closed_form(kernel: KernelSpec, height: float, site: Offset, n: int) -> float:
    """ν^{W̃_0}_n(i) = W Σ_{k=1}^n p_k^{0}(i,0) for a single spike W > 0 at the origin."""
    if height <= 0:
        raise NonpositiveSpikeError(f'Spike height must be positive, got {height}')
    if not any(site) or n == 0:
        return height if not any(site) else 0.0
    reach = max(n, max(abs(c) for c in site))
    table = first_return_probs(kernel, n, shape=_box_shape(kernel, reach))
    return height * table.cumulative_at(site)


def nu_closed_form_field(
    kernel: KernelSpec, height: float, n: int, shape: tuple[int, ...]
) -> np.ndarray:
    """The closed form over a whole torus; W at the origin, W Σ_k f_k(i) elsewhere."""
    if height <= 0:
        raise NonpositiveSpikeError(f'Spike height must be positive, got {height}')
    field = np.zeros(shape)
    if n > 0:
        field = height * first_return_probs(kernel, n, shape=shape).cumulative
    field[origin(kernel.dim)] = height
    return field


def iterate_nu_closed_form(
    kernel: KernelSpec, height: float, shape: tuple[int, ...]
) -> Iterator[np.ndarray]:
    """``nu_closed_form_field`` for n = 0, 1, 2, ... with one kernel application per step."""
    if height <= 0:
        raise NonpositiveSpikeError(f'Spike height must be positive, got {height}')
    zero = origin(kernel.dim)
    cumulative = np.zeros(shape)
    field = cumulative.copy()
    field[zero] = height
    yield field
    for current in iterate_first_returns(kernel, shape):
        cumulative += current
        field = height * cumulative
        field[zero] = height
        yield field


def propagated_spike(kernel: KernelSpec, height: float, n: int) -> float:
    """𝒫ν_n(0) = W Σ_{k=1}^{n+1} p_k^{0}(0,0)."""
    if height <= 0:
        raise NonpositiveSpikeError(f'Spike height must be positive, got {height}')
    first = first_returns_from_returns(return_probs(kernel, n + 1))
    return height * float(np.sum(first[1 : n + 2]))


def m_step_origin(kernel: KernelSpec, m: int) -> float:
    """p_m(0) straight from the m-step distribution."""
    return m_step_probs(kernel, m, kernel.range * m).get(origin(kernel.dim), 0.0)
