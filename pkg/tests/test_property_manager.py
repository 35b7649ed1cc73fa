import pytest

from managers.property_manager import (
    PropertyViolation,
    check_nu_sandwich,
    check_wall_domination,
    first_violation,
    property_wall,
    random_step_identity,
    run_property_suite,
)
from managers.wall_manager import WallFamily, WallSpec
from tests.conftest import make_setup, reflecting_step, wall_free_step

SUITE_ORDER = [
    'wall_monotonicity',
    'initial_monotonicity',
    'wall_domination',
    'hat_chain',
    'difference_bound',
    'w2_w3_identity',
    'nu_sandwich',
    'nu_domination',
]


def test_suite_passes_for_the_engine(srw2):
    reports = run_property_suite(make_setup(srw2, 9), 6, 8)
    assert [report.name for report in reports] == SUITE_ORDER
    for report in reports:
        assert report.passed, report.first and report.first.describe()
        assert report.checked > 0
    assert first_violation(reports) is None


def test_reflecting_engine_breaks_monotonicity_first(srw2):
    reports = run_property_suite(make_setup(srw2, 9), 6, 8, step=reflecting_step)
    violation = first_violation(reports)
    assert violation is not None
    assert violation.property == 'wall_monotonicity'
    assert violation.trial in range(8)
    assert 1 <= violation.step <= 6


def test_dropping_the_wall_breaks_domination(srw2):
    suite = run_property_suite(make_setup(srw2, 9), 6, 8, step=wall_free_step)
    reports = {report.name: report for report in suite}
    assert reports['wall_monotonicity'].passed
    assert reports['initial_monotonicity'].passed
    assert not reports['wall_domination'].passed
    assert first_violation(suite).property == 'wall_domination'


def test_zero_trials_pass_vacuously(srw1):
    reports = run_property_suite(make_setup(srw1, 9), 6, 0)
    assert all(report.passed and report.checked == 0 for report in reports)


def test_single_suite_uses_the_given_step(srw1):
    setup = make_setup(srw1, 9)
    assert check_wall_domination(setup, 4, 3).passed
    assert not check_wall_domination(setup, 4, 3, step=wall_free_step).passed


def test_nu_sandwich_away_from_the_origin(srw2):
    report = check_nu_sandwich(make_setup(srw2, 9), 4, 5, site=(1, 2))
    assert report.passed
    assert report.checked == 5


def test_random_step_identity():
    report = random_step_identity(100_000, seed=7)
    assert report.passed
    assert report.checked >= 100_000
    assert report.max_excess <= report.tol


def test_property_wall():
    substitute = property_wall(WallSpec())
    assert substitute.family is WallFamily.GAUSSIAN
    assert substitute.q_neginf == 0.25
    flat = WallSpec(family=WallFamily.FLAT, height=2.0)
    assert property_wall(flat) is flat


def test_violation_description():
    violation = PropertyViolation(
        property='hat_chain', seed=3, wall_seed=4, trial=2, site=(0, 1), step=5, excess=0.25
    )
    text = violation.describe()
    assert text.startswith('hat_chain:')
    assert 'trial=2' in text
    assert 'site=(0, 1)' in text
    assert 'excess=2.500e-01' in text


@pytest.mark.parametrize('side', [5, 9])
def test_suite_runs_on_small_tori(srw1, side):
    reports = run_property_suite(make_setup(srw1, side), 4, 3, nu_trials=1)
    assert all(report.passed for report in reports)
