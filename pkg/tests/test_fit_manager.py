import math

import numpy as np
import pytest

from managers.fit_manager import (
    LOGLOG_NOTE,
    ExponentFit,
    FitError,
    GrowthCurve,
    InsufficientGrowthError,
    fit_exponent,
    intervals_separate,
    lower_exponent,
    noise_envelope,
    threshold_a_n,
)

TIMES = [1 << k for k in range(21)]


def planted(fn, times=TIMES) -> GrowthCurve:
    means = [fn(n) for n in times]
    return GrowthCurve(
        times=times, means=means, ses=[0.01 * m + 1e-3 for m in means], replicates=100
    )


def test_planted_square_root_of_log():
    fit = fit_exponent(planted(lambda n: 2.0 * math.log(max(n, 2)) ** 0.5))
    assert fit.gamma_inv == pytest.approx(0.5, abs=0.02)
    assert fit.c == pytest.approx(2.0, rel=0.05)
    assert fit.window == (16, 1 << 20)
    assert fit.points == 17
    assert fit.r2 > 0.99
    assert fit.note == LOGLOG_NOTE


def test_log_log_correction_biases_the_exponent():
    def corrected(n: int) -> float:
        log_n = math.log(max(n, 3))
        return log_n**0.4 * math.log(log_n) ** 0.6 + 1e-9

    fit = fit_exponent(planted(corrected))
    assert 0.4 < fit.gamma_inv < 0.9


def test_flat_curve_has_no_growth():
    with pytest.raises(InsufficientGrowthError):
        fit_exponent(planted(lambda n: 1.0))


def test_short_curve_is_rejected():
    with pytest.raises(InsufficientGrowthError, match='time points'):
        fit_exponent(planted(lambda n: 1.0 + n, times=[1, 2, 4, 8, 16, 32]))


def test_decreasing_curve_is_rejected():
    with pytest.raises(InsufficientGrowthError):
        fit_exponent(planted(lambda n: 10.0 / math.log(n + 2)))


def test_nonpositive_means_are_rejected():
    with pytest.raises(InsufficientGrowthError, match='positive'):
        fit_exponent(planted(lambda n: math.log(n + 1) - 5.0))


def test_envelopes():
    assert threshold_a_n(100, 1.0, 2.0, math.inf, 3) == pytest.approx(2 * math.sqrt(math.log(100)))
    with pytest.raises(FitError):
        threshold_a_n(2, 1.0, 2.0, math.inf, 3)
    log_n = math.log(100)
    assert noise_envelope(100, 2.5, 3) == pytest.approx(log_n**0.4 * math.log(log_n) ** 0.6)
    assert noise_envelope(100, 4.0, 1) == pytest.approx(log_n ** (2 / 3))


def test_lower_exponent():
    assert lower_exponent(2.0, math.inf) == 0.5
    assert lower_exponent(2.0, 1.0) == 1.0


def test_bootstrap_interval_covers_planted_exponent():
    rng = np.random.default_rng(3)
    base = np.array([math.log(max(n, 2)) ** 0.5 for n in TIMES])
    samples = base * (1.0 + 0.05 * rng.standard_normal((400, len(TIMES))))
    curve = GrowthCurve(
        times=TIMES,
        means=samples.mean(axis=0).tolist(),
        ses=(samples.std(axis=0, ddof=1) / 20).tolist(),
        replicates=400,
        samples=samples,
    )
    fit = fit_exponent(curve, resamples=100, seed=1)
    assert fit.ci_low is not None and fit.ci_high is not None
    assert fit.gamma_inv == pytest.approx(0.5, abs=0.01)
    assert fit.ci_low < 0.52 and fit.ci_high > 0.48
    assert 0 < fit.ci_high - fit.ci_low < 0.05


def fitted(gamma_inv: float, ci: tuple[float, float] | None = None) -> ExponentFit:
    low, high = ci or (None, None)
    return ExponentFit(
        gamma_inv=gamma_inv, c=1.0, r2=1.0, window=(16, 64), points=5, ci_low=low, ci_high=high
    )


def test_intervals_separate():
    upper, lower = fitted(0.65, (0.6, 0.7)), fitted(0.45, (0.4, 0.5))
    assert intervals_separate(upper, lower)
    assert not intervals_separate(lower, upper)
    assert intervals_separate(fitted(0.55), fitted(0.45))
    assert not intervals_separate(fitted(0.62, (0.48, 0.7)), lower)
