from __future__ import annotations

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from utils import NOOP_LOG, LogFunction
from validation import ValidationError

FIT_MIN_TIME = 16
FIT_MIN_POINTS = 5
BOOTSTRAP_RESAMPLES = 200
LOGLOG_NOTE = 'log log n corrections are not resolved at this scale'


class FitError(ValidationError):
    pass


class InsufficientGrowthError(FitError):
    pass


class GrowthCurve(BaseModel):
    """
    Mean origin height over a time grid.

    ``samples`` keeps the per-replicate values (replicate x time) when the curve
    came from a simulation; curves read back from CSV only carry mean and SE.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: list[int]
    means: list[float]
    ses: list[float]
    replicates: int
    fingerprint: str = ''
    variances: list[float] = Field(default_factory=list)
    samples: np.ndarray | None = Field(default=None, exclude=True)

    def __len__(self) -> int:
        return len(self.times)


class ExponentFit(BaseModel):
    gamma_inv: float
    c: float
    r2: float
    window: tuple[int, int]
    points: int
    ci_low: float | None = None
    ci_high: float | None = None
    predicted_lower: float | None = None
    note: str = LOGLOG_NOTE


def lower_exponent(alpha: float, theta: float) -> float:
    """1/α ∨ 1/θ; an infinite θ (no wall tail) contributes 0."""
    return max(1.0 / alpha, 0.0 if math.isinf(theta) else 1.0 / theta)


def _critical(alpha: float, dim: int) -> bool:
    return math.isclose(alpha, 1.0 + dim / 2.0)


def noise_envelope(n: int, alpha: float, dim: int) -> float:
    """A_n: (log n)^{1/α ∨ 2/(2+d)}, with a (log log n)^{d/(d+2)} factor when α = 1 + d/2."""
    log_n = math.log(n)
    if _critical(alpha, dim):
        return log_n ** (2.0 / (2 + dim)) * math.log(log_n) ** (dim / (dim + 2.0))
    return log_n ** max(1.0 / alpha, 2.0 / (2 + dim))


def upper_envelope(n: int, alpha: float, theta: float, dim: int) -> float:
    wall_part = 0.0 if math.isinf(theta) else math.log(n) ** (1.0 / theta)
    return noise_envelope(n, alpha, dim) + wall_part


def threshold_a_n(n: int, k: float, alpha: float, theta: float, dim: int) -> float:
    """a_n = 2K(A_n + (log n)^{1/θ}); needs n ≥ 3 so that log log n > 0."""
    if n < 3:
        raise FitError(f'a_n needs n >= 3, got {n}')
    return 2.0 * k * upper_envelope(n, alpha, theta, dim)


def _weighted_fit(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(x, y, 1, w=w)
    weights = w**2
    residual = y - (slope * x + intercept)
    centre = np.average(y, weights=weights)
    total = float(np.sum(weights * (y - centre) ** 2))
    r2 = 1.0 - float(np.sum(weights * residual**2)) / total if total > 0 else 1.0
    return float(slope), float(intercept), r2


def _window(curve: GrowthCurve, min_time: int) -> np.ndarray:
    times = np.asarray(curve.times)
    means = np.asarray(curve.means, dtype=np.float64)
    selected = np.flatnonzero(times >= min_time)
    if len(selected) < FIT_MIN_POINTS:
        raise InsufficientGrowthError(
            f'Need at least {FIT_MIN_POINTS} time points with n >= {min_time}, '
            f'got {len(selected)}'
        )
    window_means = means[selected]
    if (window_means <= 0).any():
        raise InsufficientGrowthError('Mean height is not positive over the fit window')
    if window_means[-1] <= window_means[0]:
        raise InsufficientGrowthError('Mean height does not grow over the fit window')
    return selected


def fit_exponent(
    curve: GrowthCurve,
    min_time: int = FIT_MIN_TIME,
    resamples: int = BOOTSTRAP_RESAMPLES,
    seed: int = 0,
    logger: LogFunction = NOOP_LOG,
) -> ExponentFit:
    """
    Weighted least squares of log(mean) on log(log n).

    The slope estimates 1/γ in E X_n(0) ≈ c (log n)^{1/γ}. Weights are mean/SE,
    the inverse SE of log(mean). With per-replicate samples a percentile
    bootstrap over replicates gives a 95% interval.
    """
    selected = _window(curve, min_time)
    times = np.asarray(curve.times)[selected]
    means = np.asarray(curve.means, dtype=np.float64)[selected]
    ses = np.asarray(curve.ses, dtype=np.float64)[selected]

    x = np.log(np.log(times))
    y = np.log(means)
    floor = float(ses[ses > 0].min()) if (ses > 0).any() else 1.0
    w = means / np.where(ses > 0, ses, floor)
    slope, intercept, r2 = _weighted_fit(x, y, w)

    fit = ExponentFit(
        gamma_inv=slope,
        c=math.exp(intercept),
        r2=r2,
        window=(int(times[0]), int(times[-1])),
        points=len(times),
    )
    if curve.samples is not None and resamples > 0:
        fit.ci_low, fit.ci_high = _bootstrap(curve.samples[:, selected], x, resamples, seed)

    logger(
        f'FitManager: gamma_inv = {fit.gamma_inv:.4f} over n in {fit.window}, r2 = {fit.r2:.4f}',
        'info',
    )
    return fit


def _bootstrap(
    samples: np.ndarray, x: np.ndarray, resamples: int, seed: int
) -> tuple[float | None, float | None]:
    rng = np.random.default_rng(seed)
    count = samples.shape[0]
    slopes = []
    for _ in range(resamples):
        picked = samples[rng.integers(0, count, size=count)]
        means = picked.mean(axis=0)
        if (means <= 0).any():
            continue
        ses = picked.std(axis=0, ddof=1) / math.sqrt(count)
        w = means / np.where(ses > 0, ses, 1.0)
        slopes.append(_weighted_fit(x, np.log(means), w)[0])
    if not slopes:
        return None, None
    low, high = np.percentile(slopes, [2.5, 97.5])
    return float(low), float(high)


def intervals_separate(upper: ExponentFit, lower: ExponentFit) -> bool:
    """True when ``upper``'s bootstrap interval lies strictly above ``lower``'s."""
    if upper.ci_low is None or lower.ci_high is None:
        return upper.gamma_inv > lower.gamma_inv
    return upper.ci_low > lower.ci_high
