from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from pydantic import BaseModel, Field
from pydantic import ValidationError as PydanticValidationError

from managers.experiment_manager import SweepRow, UpperBoundRow
from managers.fit_manager import ExponentFit, GrowthCurve
from utils import ENGINE_VERSION, NOOP_LOG, LogFunction, format_float, sha256_bytes
from validation import ValidationError

SNAPSHOT_MAGIC = b'HARNESSF'
GROWTH_COLUMNS = ['n', 'mean', 'se', 'replicates']
UPPER_BOUND_COLUMNS = [
    'n',
    'K',
    'a_n',
    'r_n',
    'p_exceed',
    'p_decouple',
    'p_Rn',
    'domination_violations',
    'replicates',
]
ORACLE_COLUMNS = ['k', 'first_return', 'a_k']
TRAJECTORY_COLUMNS = ['replicate', 'n', 'X_origin', 'Y_origin_coupled', 'wall_origin']
SWEEP_COLUMNS = [
    'label',
    'gamma_inv',
    'c',
    'r2',
    'ci_low',
    'ci_high',
    'predicted_lower',
    'separates_next',
    'error',
]


class StorageError(ValidationError):
    pass


class RunManifest(BaseModel):
    """Everything needed to re-run one CLI invocation and check its outputs."""

    engine_version: str = ENGINE_VERSION
    subcommand: str
    config_hash: str
    config_text: str
    seeds: dict[str, int] = Field(default_factory=dict)
    args: dict[str, Any] = Field(default_factory=dict)
    fingerprints: dict[str, str] = Field(default_factory=dict)
    outputs: dict[str, str] = Field(default_factory=dict)


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float | np.floating):
        return format_float(float(value))
    return str(value)


def file_sha256(path: Path) -> str:
    return sha256_bytes(path.read_bytes())


class StorageManager:
    """Writes run outputs under ``out_dir`` and remembers their hashes for the manifest."""

    def __init__(self, out_dir: Path, logger: LogFunction = NOOP_LOG):
        self.out_dir = out_dir
        self.outputs: dict[str, str] = {}
        self._logger = logger

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _save(self, name: str, data: bytes) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.outputs[name] = sha256_bytes(data)
        self._logger(f'StorageManager: wrote {path} ({len(data)} bytes)', 'debug')
        return path

    def write_csv(self, name: str, fieldnames: list[str], rows: Iterable[dict[str, Any]]) -> Path:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(row[key]) for key in fieldnames})
        return self._save(name, buffer.getvalue().encode())

    def write_json(self, name: str, payload: BaseModel | dict[str, Any] | list[Any]) -> Path:
        data = payload.model_dump(mode='json') if isinstance(payload, BaseModel) else payload
        text = json.dumps(data, indent=2, sort_keys=True, allow_nan=True)
        return self._save(name, (text + '\n').encode())

    def write_growth_curve(self, curve: GrowthCurve, name: str = 'growth.csv') -> Path:
        rows = (
            {'n': n, 'mean': mean, 'se': se, 'replicates': curve.replicates}
            for n, mean, se in zip(curve.times, curve.means, curve.ses)
        )
        return self.write_csv(name, GROWTH_COLUMNS, rows)

    def write_fit(self, fit: ExponentFit, name: str = 'fit.json') -> Path:
        return self.write_json(name, fit)

    def write_upper_bound(self, rows: list[UpperBoundRow], name: str = 'upper_bound.csv') -> Path:
        records = (
            {
                'n': row.n,
                'K': row.k,
                'a_n': row.a_n,
                'r_n': row.r_n,
                'p_exceed': row.p_exceed,
                'p_decouple': row.p_decouple,
                'p_Rn': row.p_rn,
                'domination_violations': row.domination_violations,
                'replicates': row.replicates,
            }
            for row in rows
        )
        return self.write_csv(name, UPPER_BOUND_COLUMNS, records)

    def write_sweep(self, rows: list[SweepRow], name: str = 'sweep.csv') -> Path:
        """One summary row per sweep point; growth curves go to sweep/growth_<k>.csv."""
        records = []
        for k, row in enumerate(rows):
            self.write_growth_curve(row.curve, f'sweep/growth_{k:03d}.csv')
            fit = row.fit
            records.append(
                {
                    'label': row.label,
                    'gamma_inv': fit.gamma_inv if fit else '',
                    'c': fit.c if fit else '',
                    'r2': fit.r2 if fit else '',
                    'ci_low': fit.ci_low if fit and fit.ci_low is not None else '',
                    'ci_high': fit.ci_high if fit and fit.ci_high is not None else '',
                    'predicted_lower': '' if row.predicted_lower is None else row.predicted_lower,
                    'separates_next': '' if row.separates_next is None else row.separates_next,
                    'error': row.error or '',
                }
            )
        return self.write_csv(name, SWEEP_COLUMNS, records)

    def write_oracle(self, first_returns: np.ndarray, name: str = 'oracle.csv') -> Path:
        """Rows (k, p_k^{0}(0,0), a_k) for k ≥ 1."""
        partial_sums = np.cumsum(first_returns)
        rows = (
            {'k': k, 'first_return': first_returns[k], 'a_k': partial_sums[k]}
            for k in range(1, len(first_returns))
        )
        return self.write_csv(name, ORACLE_COLUMNS, rows)

    def write_trajectory(
        self,
        x_origin: np.ndarray,
        y_origin: np.ndarray,
        wall_origin: np.ndarray,
        name: str = 'trajectory.csv',
    ) -> Path:
        """Origin series of shape (steps + 1, R), wall process next to its coupled free process."""
        count, replicates = x_origin.shape
        rows = (
            {
                'replicate': r,
                'n': n,
                'X_origin': x_origin[n, r],
                'Y_origin_coupled': y_origin[n, r],
                'wall_origin': wall_origin[r],
            }
            for r in range(replicates)
            for n in range(count)
        )
        return self.write_csv(name, TRAJECTORY_COLUMNS, rows)

    def write_snapshot(self, field: np.ndarray, step: int, name: str) -> Path:
        """Header: magic, dims and L as little-endian u32, step as u64; then float64 values."""
        if len(set(field.shape)) != 1:
            raise StorageError(f'Snapshots need a cubic field, got shape {field.shape}')
        header = (
            SNAPSHOT_MAGIC
            + np.array([field.ndim, field.shape[0]], dtype='<u4').tobytes()
            + np.array([step], dtype='<u8').tobytes()
        )
        return self._save(name, header + np.ascontiguousarray(field, dtype='<f8').tobytes())

    def write_manifest(self, manifest: RunManifest, name: str) -> Path:
        manifest.outputs = dict(sorted(self.outputs.items()))
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2) + '\n', encoding='utf-8')
        self._logger(f'StorageManager: manifest {path} lists {len(self.outputs)} outputs', 'info')
        return path


def read_growth_curve(path: Path) -> GrowthCurve:
    try:
        with path.open(encoding='utf-8', newline='') as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise StorageError(f'Cannot read growth curve {path}: {e}') from e
    if not rows:
        raise StorageError(f'Growth curve {path} has no rows')
    missing = [column for column in GROWTH_COLUMNS[:3] if column not in rows[0]]
    if missing:
        raise StorageError(f'Growth curve {path} is missing columns {missing}')
    try:
        return GrowthCurve(
            times=[int(row['n']) for row in rows],
            means=[float(row['mean']) for row in rows],
            ses=[float(row['se']) for row in rows],
            replicates=int(rows[0].get('replicates') or 0),
        )
    except ValueError as e:
        raise StorageError(f'Growth curve {path} has a malformed value: {e}') from e


def read_snapshot(path: Path) -> tuple[int, np.ndarray]:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise StorageError(f'Cannot read snapshot {path}: {e}') from e
    if data[:8] != SNAPSHOT_MAGIC:
        raise StorageError(f'{path} is not a field snapshot')
    dims, side = (int(v) for v in np.frombuffer(data, dtype='<u4', count=2, offset=8))
    step = int(np.frombuffer(data, dtype='<u8', count=1, offset=16)[0])
    values = np.frombuffer(data, dtype='<f8', offset=24)
    if values.size != side**dims:
        raise StorageError(f'{path} holds {values.size} values, expected {side}^{dims}')
    return step, values.reshape((side,) * dims).copy()


def read_manifest(path: Path) -> RunManifest:
    try:
        return RunManifest.model_validate_json(path.read_text(encoding='utf-8'))
    except (OSError, PydanticValidationError) as e:
        raise StorageError(f'Cannot read manifest {path}: {e}') from e
