import math

from hypothesis import given, settings
from hypothesis import strategies as st
import numpy as np
import pytest

from managers.noise_manager import (
    NoiseError,
    NoiseFamily,
    NoiseSpec,
    NoiseStream,
    expected_excess,
    inverse_cdf,
    sample_noise,
    upper_tail,
)

LAPLACE = NoiseSpec(family=NoiseFamily.LAPLACE)


def test_same_query_gives_same_values(gaussian_stream):
    first = gaussian_stream.field(3, (4, 4), range(5))
    again = NoiseStream(seed=11, spec=NoiseSpec()).field(3, (4, 4), range(5))
    np.testing.assert_array_equal(first, again)


def test_values_do_not_depend_on_chunking(gaussian_stream):
    whole = gaussian_stream.field(7, (5, 5), range(0, 6))
    head = gaussian_stream.field(7, (5, 5), range(0, 2))
    tail = gaussian_stream.field(7, (5, 5), range(2, 6))
    parts = np.concatenate([head, tail])
    np.testing.assert_array_equal(whole, parts)


def test_steps_and_seeds_give_independent_fields(gaussian_stream):
    base = gaussian_stream.field(1, (9,), range(3))
    assert not np.array_equal(base, gaussian_stream.field(2, (9,), range(3)))
    other = NoiseStream(seed=12, spec=NoiseSpec())
    assert not np.array_equal(base, other.field(1, (9,), range(3)))


def test_single_site_matches_field(gaussian_stream):
    field = gaussian_stream.field(4, (5, 5), range(3))
    for replicate, site in [(0, (0, 0)), (1, (2, 3)), (2, (-1, -1))]:
        index = tuple(c % 5 for c in site)
        value = sample_noise(gaussian_stream, 4, site, (5, 5), replicate)
        assert value == field[(replicate, *index)]


def test_noise_is_indexed_from_one(gaussian_stream):
    with pytest.raises(NoiseError):
        sample_noise(gaussian_stream, 0, (0,), (5,))


def test_stretched_exponential_is_symmetric():
    spec = NoiseSpec(family=NoiseFamily.STRETCHED_EXPONENTIAL, alpha=1.0)
    values = NoiseStream(seed=3, spec=spec).field(1, (1000,), range(1000))
    assert np.mean(values > 0) == pytest.approx(0.5, abs=0.002)


def test_stretched_exponential_median_of_magnitude():
    spec = NoiseSpec(family=NoiseFamily.STRETCHED_EXPONENTIAL, alpha=2.0)
    values = NoiseStream(seed=5, spec=spec).field(1, (1000,), range(1000))
    assert np.mean(np.abs(values) > math.sqrt(math.log(2))) == pytest.approx(0.5, abs=0.002)


def test_inverse_cdf_is_monotone():
    u = np.linspace(1e-9, 1 - 1e-9, 1001)
    stretched = NoiseSpec(family=NoiseFamily.STRETCHED_EXPONENTIAL, alpha=0.5)
    for spec in (NoiseSpec(), LAPLACE, stretched):
        assert (np.diff(inverse_cdf(spec, u)) > 0).all()


def test_upper_tail():
    stretched = NoiseSpec(family=NoiseFamily.STRETCHED_EXPONENTIAL, alpha=0.7, sigma=2.0)
    assert upper_tail(stretched, 0.0) == 0.5
    assert upper_tail(LAPLACE, 1.0) == pytest.approx(0.5 * math.exp(-1.0))
    assert upper_tail(NoiseSpec(), 1.0) == pytest.approx(0.158655, abs=1e-6)
    with pytest.raises(NoiseError):
        upper_tail(LAPLACE, -1.0)


def test_expected_excess_closed_forms():
    assert expected_excess(NoiseSpec(), 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert expected_excess(LAPLACE, 2.0) == pytest.approx(math.exp(-2.0) / 2, rel=1e-9)
    gaussian_numeric = expected_excess(NoiseSpec(), 0.7, method='quad')
    assert gaussian_numeric == pytest.approx(expected_excess(NoiseSpec(), 0.7), rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(
    x=st.floats(0.0, 5.0),
    spec=st.sampled_from(
        [NoiseSpec(), LAPLACE, NoiseSpec(family=NoiseFamily.STRETCHED_EXPONENTIAL, alpha=1.5)]
    ),
)
def test_expected_excess_symmetry(x, spec):
    assert expected_excess(spec, -x) - expected_excess(spec, x) == pytest.approx(x, abs=1e-9)


ALL_FAMILIES = [
    NoiseSpec(),
    NoiseSpec(sigma=2.5),
    LAPLACE,
    NoiseSpec(family=NoiseFamily.STRETCHED_EXPONENTIAL, alpha=0.5),
    NoiseSpec(family=NoiseFamily.STRETCHED_EXPONENTIAL, alpha=1.5),
    NoiseSpec(family=NoiseFamily.STRETCHED_EXPONENTIAL, alpha=3.0, sigma=0.7),
]


@pytest.mark.parametrize('spec', ALL_FAMILIES, ids=lambda spec: spec.fingerprint())
def test_million_samples_are_centred(spec):
    values = NoiseStream(seed=21, spec=spec).field(1, (1000,), range(1000)).ravel()
    assert values.size == 10**6
    se = values.std(ddof=1) / math.sqrt(values.size)
    assert abs(values.mean()) < 4 * se


def test_sampled_tail_matches_upper_tail():
    spec = NoiseSpec(family=NoiseFamily.STRETCHED_EXPONENTIAL, alpha=1.0)
    values = NoiseStream(seed=8, spec=spec).field(1, (1000,), range(1000))
    expected = upper_tail(spec, 1.0)
    se = math.sqrt(expected * (1 - expected) / values.size)
    assert abs(np.mean(values > 1.0) - expected) < 4 * se


@pytest.mark.parametrize('spec', ALL_FAMILIES, ids=lambda spec: spec.fingerprint())
def test_expected_excess_is_nonincreasing_and_convex(spec):
    grid = np.linspace(-5.0, 5.0, 100)
    values = np.array([expected_excess(spec, x) for x in grid])
    assert (values >= 0).all()
    assert (np.diff(values) <= 1e-10).all()
    assert (np.diff(values, 2) >= -1e-9).all()


@pytest.mark.parametrize('x', np.linspace(-5.0, 5.0, 41))
def test_gaussian_quadrature_matches_closed_form(x):
    for spec in (NoiseSpec(), NoiseSpec(sigma=0.4)):
        numeric = expected_excess(spec, x, method='quad')
        assert numeric == pytest.approx(expected_excess(spec, x), abs=1e-8)


@pytest.mark.parametrize('alpha, sigma', [(2.0, 0.5), (1.0, 0.1), (1.5, 0.3)])
def test_tail_class_ratio(alpha, sigma):
    spec = NoiseSpec(family=NoiseFamily.STRETCHED_EXPONENTIAL, alpha=alpha, sigma=sigma)
    limit = -(sigma**-alpha)
    for x in (2.0, 4.0, 8.0):
        ratio = math.log(upper_tail(spec, x)) / x**alpha
        assert ratio == pytest.approx(limit, rel=0.05)


def test_tail_class_ratio_converges():
    spec = NoiseSpec(family=NoiseFamily.STRETCHED_EXPONENTIAL, alpha=0.5)
    errors = [abs(math.log(upper_tail(spec, x)) / math.sqrt(x) + 1.0) for x in (2.0, 4.0, 8.0)]
    assert errors == sorted(errors, reverse=True)
