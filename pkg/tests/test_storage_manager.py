import json

import numpy as np
import pytest

from managers.experiment_manager import SweepRow, UpperBoundRow
from managers.fit_manager import ExponentFit, GrowthCurve
from managers.storage_manager import (
    GROWTH_COLUMNS,
    SWEEP_COLUMNS,
    UPPER_BOUND_COLUMNS,
    RunManifest,
    StorageError,
    StorageManager,
    file_sha256,
    read_growth_curve,
    read_manifest,
    read_snapshot,
)

CURVE = GrowthCurve(times=[1, 2, 4], means=[0.1, 0.25, 1 / 3], ses=[0.01, 0.02, 0.03], replicates=8)


@pytest.fixture
def storage(tmp_path):
    return StorageManager(tmp_path / 'out')


def header(path):
    return path.read_text(encoding='utf-8').splitlines()[0].split(',')


def test_growth_curve_round_trip(storage):
    path = storage.write_growth_curve(CURVE)
    assert header(path) == GROWTH_COLUMNS
    restored = read_growth_curve(path)
    assert restored.times == CURVE.times
    assert restored.means == CURVE.means
    assert restored.ses == CURVE.ses
    assert restored.replicates == 8
    assert storage.outputs['growth.csv'] == file_sha256(path)


def test_trajectory_writes_negative_infinity(storage):
    x = np.array([[0.0, 1.0], [0.5, 1.5]])
    y = np.array([[0.0, 0.0], [-0.5, 0.25]])
    path = storage.write_trajectory(x, y, np.array([-np.inf, 1.0]))
    lines = path.read_text(encoding='utf-8').splitlines()
    assert lines[0] == 'replicate,n,X_origin,Y_origin_coupled,wall_origin'
    assert lines[1] == '0,0,0.0,0.0,-inf'
    assert lines[4] == '1,1,1.5,0.25,1.0'


def test_snapshot_round_trip(storage):
    field = np.arange(27, dtype=np.float64).reshape(3, 3, 3)
    field[0, 0, 0] = -np.inf
    path = storage.write_snapshot(field, 12, 'snapshots/step_000012.bin')
    step, restored = read_snapshot(path)
    assert step == 12
    np.testing.assert_array_equal(restored, field)


def test_snapshot_needs_a_cubic_field(storage):
    with pytest.raises(StorageError, match='cubic'):
        storage.write_snapshot(np.zeros((3, 4)), 0, 'bad.bin')


def test_manifest_lists_output_hashes(storage):
    storage.write_growth_curve(CURVE)
    storage.write_json('report.json', {'passed': True})
    manifest = RunManifest(subcommand='simulate', config_hash='abc', config_text='run.seed = 1\n')
    path = storage.write_manifest(manifest, 'simulate.manifest.json')
    restored = read_manifest(path)
    assert list(restored.outputs) == ['growth.csv', 'report.json']
    for name, digest in restored.outputs.items():
        assert digest == file_sha256(storage.path(name))
    assert restored.config_text == 'run.seed = 1\n'


def test_readers_reject_bad_input(tmp_path):
    with pytest.raises(StorageError):
        read_growth_curve(tmp_path / 'missing.csv')
    empty = tmp_path / 'empty.csv'
    empty.write_text('n,mean,se,replicates\n', encoding='utf-8')
    with pytest.raises(StorageError, match='no rows'):
        read_growth_curve(empty)
    narrow = tmp_path / 'narrow.csv'
    narrow.write_text('n,mean\n1,0.5\n', encoding='utf-8')
    with pytest.raises(StorageError, match='missing columns'):
        read_growth_curve(narrow)
    broken = tmp_path / 'broken.csv'
    broken.write_text('n,mean,se\n1,abc,0.1\n', encoding='utf-8')
    with pytest.raises(StorageError, match='malformed'):
        read_growth_curve(broken)
    junk = tmp_path / 'junk.bin'
    junk.write_bytes(b'not a snapshot')
    with pytest.raises(StorageError):
        read_snapshot(junk)
    with pytest.raises(StorageError):
        read_snapshot(tmp_path / 'missing.bin')
    with pytest.raises(StorageError):
        read_manifest(junk)


def test_upper_bound_and_sweep_tables(storage):
    row = UpperBoundRow(
        n=16,
        k=1.0,
        a_n=4.0,
        r_n=2.0,
        p_exceed=0.0,
        p_decouple=0.5,
        p_rn=0.25,
        domination_violations=0,
        replicates=4,
    )
    assert header(storage.write_upper_bound([row])) == UPPER_BOUND_COLUMNS

    fit = ExponentFit(gamma_inv=0.5, c=2.0, r2=0.99, window=(16, 256), points=5)
    rows = [
        SweepRow(label='0.5', curve=CURVE, fit=fit),
        SweepRow(label='2', curve=CURVE, error='Mean height does not grow'),
    ]
    path = storage.write_sweep(rows)
    lines = path.read_text(encoding='utf-8').splitlines()
    assert lines[0].split(',') == SWEEP_COLUMNS
    assert lines[1] == '0.5,0.5,2.0,0.99,,,,,'
    assert lines[2] == '2,,,,,,,,Mean height does not grow'

    marked = SweepRow(
        label='wall.theta=0.5', curve=CURVE, fit=fit, predicted_lower=2.0, separates_next=True
    )
    lines = storage.write_sweep([marked]).read_text(encoding='utf-8').splitlines()
    assert lines[1] == 'wall.theta=0.5,0.5,2.0,0.99,,,2.0,true,'
    assert storage.path('sweep/growth_001.csv').is_file()


def test_json_payloads(storage):
    fit = ExponentFit(gamma_inv=0.5, c=2.0, r2=0.99, window=(16, 256), points=5)
    payload = json.loads(storage.write_fit(fit).read_text(encoding='utf-8'))
    assert payload['gamma_inv'] == 0.5
    assert payload['window'] == [16, 256]
