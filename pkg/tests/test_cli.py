import json
import math
from pathlib import Path

import pytest

from managers.config_manager import ConfigError
from managers.dynamics_manager import step_w2
from managers.fit_manager import GrowthCurve, InsufficientGrowthError
from managers.storage_manager import StorageError, StorageManager, read_manifest
from protocols import StepRule
from ui.cli import CliOptions, run_cli
from ui.cli.error_handlers import (
    EXIT_CONFIG,
    EXIT_INSUFFICIENT_GROWTH,
    EXIT_OK,
    EXIT_ORACLE_MISMATCH,
    EXIT_PROPERTY_VIOLATION,
    EXIT_VALIDATION,
    OracleMismatchError,
    PropertyViolationError,
    exit_code_for,
)
from tests.conftest import reflecting_step

TORUS_3D = """
kernel.dim = 3
wall.family = flat
wall.height = 0
run.mode = torus
run.side = 9
run.steps = 256
run.replicates = 4
"""

SMALL_2D = """
kernel.dim = 2
wall.family = gaussian
run.mode = torus
run.side = 9
run.steps = 8
run.replicates = 6
"""


class Cli:
    """Runs subcommands in-process and keeps what they print."""

    def __init__(self, tmp_path: Path):
        self.tmp_path = tmp_path
        self.out: list[str] = []
        self.err: list[str] = []

    def __call__(
        self, command: str, config: str | None = None, step: StepRule = step_w2, **options
    ) -> int:
        options.setdefault('out_dir', self.tmp_path / 'out')
        if config is not None:
            path = self.tmp_path / 'run.cfg'
            path.write_text(config, encoding='utf-8')
            options['config'] = path
        return run_cli(
            command,
            CliOptions(**options),
            step=step,
            echo=self.out.append,
            echo_error=self.err.append,
        )

    @property
    def errors(self) -> str:
        return '\n'.join(self.err)


@pytest.fixture
def cli(tmp_path):
    return Cli(tmp_path)


def write_curve(tmp_path: Path, means: list[float]) -> Path:
    times = [1 << k for k in range(len(means))]
    curve = GrowthCurve(times=times, means=means, ses=[0.01] * len(means), replicates=10)
    return StorageManager(tmp_path).write_growth_curve(curve, 'curve.csv')


def test_simulate_on_a_three_dimensional_torus(cli, tmp_path):
    assert cli('simulate', TORUS_3D) == EXIT_OK
    lines = (tmp_path / 'out' / 'growth.csv').read_text(encoding='utf-8').splitlines()
    assert lines[0] == 'n,mean,se,replicates'
    assert len(lines) == 10
    assert lines[-1].startswith('256,')
    manifest = read_manifest(tmp_path / 'out' / 'simulate.manifest.json')
    assert manifest.subcommand == 'simulate'
    assert 'growth.csv' in manifest.outputs
    assert (tmp_path / 'out' / 'logs' / 'application.log').is_file()
    assert cli.out[-1].startswith('simulate: 9 time points')


def test_simulate_is_reproducible(cli, tmp_path):
    assert cli('simulate', TORUS_3D, out_dir=tmp_path / 'first') == EXIT_OK
    assert cli('simulate', TORUS_3D, out_dir=tmp_path / 'second', threads=2) == EXIT_OK
    first = (tmp_path / 'first' / 'growth.csv').read_bytes()
    assert first == (tmp_path / 'second' / 'growth.csv').read_bytes()


def test_exact_mode_rejects_a_small_side(cli):
    config = 'kernel.dim = 1\nrun.side = 5\nrun.steps = 8\n'
    assert cli('simulate', config) == EXIT_VALIDATION
    assert 'L > 2vn' in cli.errors


def test_flags_override_the_config(cli, tmp_path):
    assert cli('simulate', TORUS_3D, steps=16, seed=3) == EXIT_OK
    manifest = read_manifest(tmp_path / 'out' / 'simulate.manifest.json')
    assert 'run.steps = 16' in manifest.config_text
    assert manifest.seeds['master'] == 3


def test_replay_reproduces_outputs(cli, tmp_path):
    assert cli('simulate', SMALL_2D) == EXIT_OK
    manifest = tmp_path / 'out' / 'simulate.manifest.json'
    assert cli('replay', manifest=str(manifest)) == EXIT_OK
    assert (tmp_path / 'out' / 'replay' / 'simulate' / 'growth.csv').is_file()
    assert cli.out[-1].startswith('replay: 1 outputs of simulate')


def test_replay_detects_tampered_outputs(cli, tmp_path):
    assert cli('simulate', SMALL_2D) == EXIT_OK
    path = tmp_path / 'out' / 'simulate.manifest.json'
    payload = json.loads(path.read_text(encoding='utf-8'))
    payload['outputs']['growth.csv'] = '0' * 64
    path.write_text(json.dumps(payload), encoding='utf-8')
    assert cli('replay', manifest=str(path)) == EXIT_VALIDATION
    assert 'growth.csv' in cli.errors


def test_replay_needs_a_manifest(cli, tmp_path):
    assert cli('replay', manifest=str(tmp_path / 'missing.json')) == EXIT_VALIDATION


def test_trajectory_export(cli, tmp_path):
    assert cli('simulate', SMALL_2D + 'run.export_trajectory = true\n') == EXIT_OK
    out = tmp_path / 'out'
    lines = (out / 'trajectory.csv').read_text(encoding='utf-8').splitlines()
    assert lines[0] == 'replicate,n,X_origin,Y_origin_coupled,wall_origin'
    assert len(lines) == 1 + 6 * 9
    snapshots = sorted(p.name for p in (out / 'snapshots').iterdir())
    assert snapshots == [f'step_{n:06d}.bin' for n in (0, 1, 2, 4, 8)]


@pytest.mark.parametrize(
    'config',
    ['run.stepz = 3\n', 'noise.alpha = -1\n', 'run.steps\n', 'kernel = table\n'],
)
def test_config_errors_exit_with_config_code(cli, config):
    assert cli('simulate', config) == EXIT_CONFIG
    assert cli.errors.startswith('error: ')


def test_missing_config_file(tmp_path):
    errors: list[str] = []
    options = CliOptions(config=tmp_path / 'nope.cfg', out_dir=tmp_path / 'out')
    assert run_cli('simulate', options, echo_error=errors.append) == EXIT_CONFIG
    assert 'nope.cfg' in errors[0]


@pytest.mark.parametrize('dim, steps', [(1, 20), (3, 10)])
def test_oracle_check_passes(cli, tmp_path, dim, steps):
    config = f'kernel.dim = {dim}\nrun.steps = {steps}\nrun.horizon = 200\nwall.height = 2.5\n'
    assert cli('oracle-check', config) == EXIT_OK
    report = json.loads((tmp_path / 'out' / 'oracle_report.json').read_text(encoding='utf-8'))
    assert report['passed']
    assert report['height'] == 2.5
    assert report['max_deviation'] <= 1e-10
    assert report['a_n'] <= report['a_upper']
    assert (tmp_path / 'out' / 'oracle.csv').is_file()


def test_oracle_check_rejects_an_asymmetric_kernel(cli):
    config = 'kernel = table\nkernel.dim = 1\nkernel.weights = "1:0.6; -1:0.4"\n'
    assert cli('oracle-check', config) == EXIT_VALIDATION
    assert 'AsymmetricError' in cli.errors


def test_property_check_passes(cli, tmp_path):
    assert cli('property-check', SMALL_2D, steps=6, trials=4) == EXIT_OK
    records = json.loads((tmp_path / 'out' / 'properties.json').read_text(encoding='utf-8'))
    assert all(record['violations'] == 0 for record in records)
    assert records[-1]['name'] == 'w2_w3_identity'
    assert records[-1]['checked'] >= 4000


def test_property_check_catches_a_broken_engine(cli):
    code = cli('property-check', SMALL_2D, step=reflecting_step, steps=6, trials=4)
    assert code == EXIT_PROPERTY_VIOLATION
    assert 'monotonicity' in cli.errors


def test_property_check_with_zero_trials(cli):
    assert cli('property-check', SMALL_2D, trials=0) == EXIT_OK
    assert cli.out[-1] == 'warning: zero trials, every property passes vacuously'


def test_fit_of_a_planted_curve(cli, tmp_path):
    path = write_curve(tmp_path, [2 * math.log(max(1 << k, 2)) ** 0.5 for k in range(16)])
    assert cli('fit', curve=str(path)) == EXIT_OK
    fit = json.loads((tmp_path / 'out' / 'fit.json').read_text(encoding='utf-8'))
    assert fit['gamma_inv'] == pytest.approx(0.5, abs=0.02)


def test_fit_with_a_config_reports_the_predicted_exponent(cli, tmp_path):
    path = write_curve(tmp_path, [2 * math.log(max(1 << k, 2)) ** 0.5 for k in range(16)])
    config = 'wall.family = stretched_exponential\nwall.theta = 0.25\n'
    assert cli('fit', config, curve=str(path)) == EXIT_OK
    fit = json.loads((tmp_path / 'out' / 'fit.json').read_text(encoding='utf-8'))
    assert fit['predicted_lower'] == pytest.approx(4.0)
    assert cli.out[-1] == 'fit: predicted lower exponent 4.0000'


def test_fit_of_a_flat_curve(cli, tmp_path):
    path = write_curve(tmp_path, [1.0] * 16)
    assert cli('fit', curve=str(path)) == EXIT_INSUFFICIENT_GROWTH


def test_fit_of_a_missing_file(cli, tmp_path):
    assert cli('fit', curve=str(tmp_path / 'missing.csv')) == EXIT_VALIDATION


def test_sweep_needs_a_key(cli):
    assert cli('sweep', SMALL_2D) == EXIT_CONFIG
    assert 'sweep.key' in cli.errors


def test_sweep_over_wall_tails(cli, tmp_path):
    config = SMALL_2D + 'sweep.key = wall.theta\nsweep.values = "0.5,2"\n'
    assert cli('sweep', config, replicates=2) == EXIT_OK
    lines = (tmp_path / 'out' / 'sweep.csv').read_text(encoding='utf-8').splitlines()
    assert [line.split(',')[0] for line in lines[1:]] == ['wall.theta=0.5', 'wall.theta=2']
    assert len(cli.out) == 2


def test_upper_bound_rejects_laplace_noise(cli):
    assert cli('upper-bound', SMALL_2D + 'noise.family = laplace\n') == EXIT_VALIDATION
    assert 'alpha' in cli.errors


def test_upper_bound_table(cli, tmp_path):
    config = 'kernel.dim = 1\nwall.family = gaussian\nrun.steps = 16\nrun.replicates = 10\n'
    assert cli('upper-bound', config) == EXIT_OK
    lines = (tmp_path / 'out' / 'upper_bound.csv').read_text(encoding='utf-8').splitlines()
    assert len(lines) == 4


def test_mu_check(cli, tmp_path):
    config = 'kernel.dim = 1\nwall.family = gaussian\nrun.steps = 8\nrun.replicates = 50\n'
    assert cli('mu-check', config + 'run.horizon = 200\n') == EXIT_OK
    report = json.loads((tmp_path / 'out' / 'mu_check.json').read_text(encoding='utf-8'))
    assert report['mu']['q'] == 0.5
    assert all(row['pathwise_violations'] == 0 for row in report['chain'])
    assert report['nu']['a_upper'] == 1.0
    mu = report['mu']
    assert 'largest_passing_c0' in mu
    if mu['passing_c0']:
        assert mu['largest_passing_c0'] == max(mu['passing_c0'])


def test_unknown_command(cli):
    assert cli('wobble') == 1
    assert 'wobble' in cli.errors


def test_exit_codes():
    assert exit_code_for(ConfigError('bad')) == EXIT_CONFIG
    assert exit_code_for(StorageError('bad')) == EXIT_VALIDATION
    assert exit_code_for(OracleMismatchError('bad')) == EXIT_ORACLE_MISMATCH
    assert exit_code_for(PropertyViolationError('bad')) == EXIT_PROPERTY_VIOLATION
    assert exit_code_for(InsufficientGrowthError('bad')) == EXIT_INSUFFICIENT_GROWTH
    mixed = ExceptionGroup('errors', [StorageError('a'), ConfigError('b')])
    assert exit_code_for(mixed) == EXIT_CONFIG
    oracle = ExceptionGroup('errors', [StorageError('a'), OracleMismatchError('b')])
    assert exit_code_for(oracle) == EXIT_ORACLE_MISMATCH
