from __future__ import annotations

from dataclasses import replace
import math
from typing import Any, Callable

import numpy as np

from managers.config_manager import (
    HarnessSettings,
    build_noise,
    build_setup,
    build_wall,
    config_hash,
    domain_side,
    noise_seed,
    parse_config_text,
    parse_number_list,
    serialize_config,
    settings_from_values,
    wall_seed,
    with_override,
)
from managers.dynamics_manager import MAX_FIELD_DIM, MAX_FIELD_SIDE, iterate_nu
from managers.experiment_manager import (
    ExperimentSetup,
    coupled_origin_trajectory,
    estimate_growth,
    geometric_times,
    lower_bound_chain,
    mu_recursion_check,
    nu_mean_recursion_check,
    run_sweep,
    upper_bound_experiment,
)
from managers.fit_manager import fit_exponent, lower_exponent
from managers.kernel_manager import KernelSpec, apply_kernel, origin
from managers.oracle_manager import (
    first_returns_from_returns,
    iterate_nu_closed_form,
    propagated_spike,
    return_probs,
    return_sum,
)
from managers.property_manager import (
    PropertyReport,
    first_violation,
    random_step_identity,
    run_property_suite,
)
from managers.storage_manager import (
    RunManifest,
    StorageError,
    StorageManager,
    read_growth_curve,
    read_manifest,
)
from managers.wall_manager import NEG_INF
from ui.cli.context import CliContext
from ui.cli.error_handlers import (
    EXIT_OK,
    OracleMismatchError,
    PropertyViolationError,
    ReplayMismatchError,
    build_validation_on_errors,
)
from ui.cli.validator import ConfigValidator, parse_input_path, validate_config
from utils import ENGINE_VERSION, derive_seed, format_float

ORACLE_MAX_STEPS = 100
ORACLE_TOL = 1e-10
IDENTITY_SAMPLES_PER_TRIAL = 1000
IDENTITY_TAG = 'identity'


def _seeds(settings: HarnessSettings) -> dict[str, int]:
    return {
        'master': settings.run.seed,
        'noise': noise_seed(settings),
        'wall': wall_seed(settings),
    }


def _fingerprints(setup: ExperimentSetup) -> dict[str, str]:
    return {
        'kernel': setup.kernel.fingerprint(),
        'noise': setup.noise.fingerprint(),
        'wall': f'seed={setup.wall_seed},{setup.wall.fingerprint()}',
        'setup': setup.fingerprint(),
    }


def _finish(
    context: CliContext,
    subcommand: str,
    fingerprints: dict[str, str],
    args: dict[str, Any] | None = None,
) -> None:
    manifest = RunManifest(
        subcommand=subcommand,
        config_hash=config_hash(context.settings),
        config_text=serialize_config(context.settings),
        seeds=_seeds(context.settings),
        args=args or {},
        fingerprints=fingerprints,
    )
    context.storage.write_manifest(manifest, f'{subcommand}.manifest.json')


def _validated_kernel(context: CliContext, action: str, steps: int) -> KernelSpec:
    return validate_config(
        context.settings,
        steps,
        on_errors=build_validation_on_errors(action, context.logger),
        logger=context.logger,
    )


# simulate


def _full_field_allowed(shape: tuple[int, ...]) -> bool:
    return len(shape) <= MAX_FIELD_DIM and max(shape) <= MAX_FIELD_SIDE


def _export_trajectory(context: CliContext, setup: ExperimentSetup) -> None:
    run = context.settings.run
    snapshot_times: list[int] = []
    if _full_field_allowed(setup.shape):
        snapshot_times = [0, *geometric_times(run.steps)]
    else:
        context.logger(
            f'CliRunner: no field snapshots for shape {setup.shape}, full-field mode is limited '
            f'to d <= {MAX_FIELD_DIM}, L <= {MAX_FIELD_SIDE}',
            'warning',
        )
    origins = coupled_origin_trajectory(
        setup, run.steps, run.replicates, snapshot_times=snapshot_times, logger=context.logger
    )
    context.storage.write_trajectory(origins.x, origins.y, origins.wall)
    for n, field in sorted(origins.snapshots.items()):
        context.storage.write_snapshot(field, n, f'snapshots/step_{n:06d}.bin')


def cmd_simulate(context: CliContext) -> int:
    run = context.settings.run
    _validated_kernel(context, 'simulate', run.steps)
    setup = build_setup(context.settings)
    curve = estimate_growth(
        setup,
        geometric_times(run.steps),
        run.replicates,
        quenched=run.quenched,
        threads=run.threads,
        logger=context.logger,
    )
    context.storage.write_growth_curve(curve)
    if run.export_trajectory:
        _export_trajectory(context, setup)
    _finish(context, 'simulate', _fingerprints(setup))

    context.echo(
        f'simulate: {len(curve)} time points, E X_n(0) = {curve.means[-1]:.6f} '
        f'± {curve.ses[-1]:.6f} at n = {curve.times[-1]}'
    )
    return EXIT_OK


# oracle-check


def _spike_wall(kernel: KernelSpec, height: float, shape: tuple[int, ...]) -> np.ndarray:
    wall = np.full(shape, NEG_INF)
    wall[origin(kernel.dim)] = height
    return wall


def cmd_oracle_check(context: CliContext) -> int:
    """
    Engine ν against the closed form for a single spike, then the return-sum bracket.

    The spike height is ``wall.height`` when positive, 1 otherwise. The engine
    runs n ≤ 100 steps on a domain of side 2vn + 1 and is compared at every step.
    """
    settings = context.settings
    steps = min(settings.run.steps, ORACLE_MAX_STEPS)
    kernel = _validated_kernel(context, 'oracle-check', steps)
    height = settings.wall.height if settings.wall.height > 0 else 1.0
    side = domain_side(settings, kernel, steps)
    shape = (side,) * kernel.dim
    zero = origin(kernel.dim)

    max_deviation, worst_step, worst_site = 0.0, 0, zero
    nu = wall = _spike_wall(kernel, height, shape)
    closed_forms = iterate_nu_closed_form(kernel, height, shape)
    for n, (nu, closed) in enumerate(zip(iterate_nu(wall, kernel, steps), closed_forms)):
        deviation = np.abs(nu - closed)
        index = int(np.argmax(deviation))
        if deviation.flat[index] > max_deviation:
            max_deviation = float(deviation.flat[index])
            worst_step = n
            worst_site = tuple(int(k) for k in np.unravel_index(index, shape))
        context.logger(f'CliRunner: oracle n={n} deviation {deviation.max():.3e}', 'debug')

    bracket = return_sum(kernel, settings.run.horizon, context.logger)
    closed_ratio = propagated_spike(kernel, height, steps) / height
    engine_ratio = float(apply_kernel(kernel, nu)[zero]) / height
    bracket_ok = (
        bracket.a_n <= bracket.upper
        and closed_ratio <= bracket.upper + ORACLE_TOL
        and abs(engine_ratio - closed_ratio) <= ORACLE_TOL
    )
    passed = max_deviation <= ORACLE_TOL and bracket_ok

    context.storage.write_oracle(
        first_returns_from_returns(return_probs(kernel, settings.run.horizon))
    )
    context.storage.write_json(
        'oracle_report.json',
        {
            'steps': steps,
            'height': height,
            'side': side,
            'max_deviation': max_deviation,
            'worst_step': worst_step,
            'worst_site': list(worst_site),
            'a_n': bracket.a_n,
            'a_upper': bracket.upper,
            'horizon': bracket.horizon,
            'propagated_ratio': closed_ratio,
            'engine_propagated_ratio': engine_ratio,
            'passed': passed,
        },
    )
    _finish(context, 'oracle-check', {'kernel': kernel.fingerprint()})

    context.echo(
        f'oracle-check: max |nu - closed form| = {max_deviation:.3e} over n <= {steps}; '
        f'a_{bracket.horizon} = {bracket.a_n:.6f} <= a <= {bracket.upper:.6f}; '
        f'P nu_n(0) / W = {closed_ratio:.6f}'
    )
    if max_deviation > ORACLE_TOL:
        raise OracleMismatchError(
            f'Engine and closed form differ by {max_deviation:.3e} at site {worst_site}, '
            f'step {worst_step}'
        )
    if not bracket_ok:
        raise OracleMismatchError(
            f'Return-sum bracket inconsistent: P nu_n(0) / W = {closed_ratio!r} (engine '
            f'{engine_ratio!r}) against a in [{bracket.a_n!r}, {bracket.upper!r}]'
        )
    return EXIT_OK


# property-check


def _report_record(report: PropertyReport) -> dict[str, Any]:
    return {
        'name': report.name,
        'trials': report.trials,
        'tol': report.tol,
        'checked': report.checked,
        'violations': report.violations,
        'max_excess': report.max_excess if math.isfinite(report.max_excess) else None,
        'first': report.first.describe() if report.first else None,
    }


def cmd_property_check(context: CliContext) -> int:
    run = context.settings.run
    _validated_kernel(context, 'property-check', run.steps)
    setup = build_setup(context.settings)
    reports = run_property_suite(
        setup, run.steps, run.trials, step=context.step, logger=context.logger
    )
    if run.trials > 0:
        reports.append(
            random_step_identity(
                run.trials * IDENTITY_SAMPLES_PER_TRIAL, derive_seed(run.seed, IDENTITY_TAG)
            )
        )
    context.storage.write_json('properties.json', [_report_record(r) for r in reports])
    _finish(context, 'property-check', _fingerprints(setup))

    for report in reports:
        context.echo(f'{report.name}: {report.checked} checked, {report.violations} violations')
    failed = [report for report in reports if not report.passed]
    if failed:
        violation = first_violation(failed)
        if violation is not None:
            raise PropertyViolationError(violation.describe())
        raise PropertyViolationError(f'{failed[0].name}: {failed[0].violations} violations')
    if run.trials == 0:
        context.echo('warning: zero trials, every property passes vacuously')
    return EXIT_OK


# fit


def cmd_fit(context: CliContext) -> int:
    """With ``--config`` the fit also carries the predicted lower exponent 1/α ∨ 1/θ."""
    path = parse_input_path(context.options.curve, 'Growth curve')
    curve = read_growth_curve(path)
    fit = fit_exponent(curve, logger=context.logger)
    if context.options.config is not None:
        settings = context.settings
        fit.predicted_lower = lower_exponent(
            build_noise(settings).tail_exponent, build_wall(settings).tail_exponent
        )
    context.storage.write_fit(fit)
    _finish(context, 'fit', {}, args={'curve': str(path.resolve())})

    context.echo(
        f'fit: gamma_inv = {fit.gamma_inv:.4f}, c = {fit.c:.4f}, r2 = {fit.r2:.4f} '
        f'over n in [{fit.window[0]}, {fit.window[1]}] ({fit.note})'
    )
    if fit.predicted_lower is not None:
        context.echo(f'fit: predicted lower exponent {fit.predicted_lower:.4f}')
    return EXIT_OK


# sweep


def cmd_sweep(context: CliContext) -> int:
    settings = context.settings
    on_errors = build_validation_on_errors('sweep', context.logger)
    ConfigValidator(settings, on_errors=on_errors, logger=context.logger).sweep().execute()
    key = settings.sweep.key or ''
    values = [value.strip() for value in (settings.sweep.values or '').split(',')]

    setups: dict[str, ExperimentSetup] = {}
    for value in filter(None, values):
        point = with_override(settings, key, value)
        validate_config(point, point.run.steps, on_errors=on_errors, logger=context.logger)
        setups[f'{key}={value}'] = build_setup(point)

    run = settings.run
    rows = run_sweep(
        setups,
        geometric_times(run.steps),
        run.replicates,
        threads=run.threads,
        logger=context.logger,
    )
    context.storage.write_sweep(rows)
    _finish(context, 'sweep', {label: setup.fingerprint() for label, setup in setups.items()})

    for row in rows:
        outcome = f'gamma_inv = {row.fit.gamma_inv:.4f}' if row.fit else f'no fit ({row.error})'
        outcome += f', predicted lower exponent {row.predicted_lower:.4f}'
        if row.separates_next is not None:
            verdict = 'separates' if row.separates_next else 'overlaps'
            outcome += f', interval {verdict} from the next point'
        context.echo(f'sweep {row.label}: {outcome}')
    return EXIT_OK


# upper-bound


def cmd_upper_bound(context: CliContext) -> int:
    settings = context.settings
    run = settings.run
    _validated_kernel(context, 'upper-bound', run.steps)
    setup = build_setup(settings)
    k_values = parse_number_list(settings.sweep.k_values, 'sweep.k_values')
    rows = upper_bound_experiment(
        setup, k_values, run.steps, run.replicates, threads=run.threads, logger=context.logger
    )
    context.storage.write_upper_bound(rows)
    _finish(context, 'upper-bound', _fingerprints(setup))

    for row in rows:
        context.echo(
            f'upper-bound K={format_float(row.k)}: a_n = {row.a_n:.4f}, '
            f'P(X_n(0) >= a_n) = {row.p_exceed:.4f}, P(decouple) = {row.p_decouple:.4f}, '
            f'P(R_n > K log^(1/theta) n) = {row.p_rn:.4f}'
        )
    return EXIT_OK


# mu-check


def cmd_mu_check(context: CliContext) -> int:
    settings = context.settings
    run = settings.run
    _validated_kernel(context, 'mu-check', run.steps)
    setup = build_setup(settings)
    c0_values = parse_number_list(settings.sweep.c0_values, 'sweep.c0_values')

    mu = mu_recursion_check(
        setup, run.steps, run.replicates, c0_values, threads=run.threads, logger=context.logger
    )
    chain = lower_bound_chain(
        setup,
        geometric_times(run.steps),
        run.replicates,
        threads=run.threads,
        logger=context.logger,
    )
    nu = nu_mean_recursion_check(
        setup,
        run.steps,
        run.replicates,
        horizon=run.horizon,
        threads=run.threads,
        logger=context.logger,
    )
    context.storage.write_json(
        'mu_check.json',
        {
            'mu': mu.model_dump(mode='json'),
            'chain': [row.model_dump(mode='json') for row in chain],
            'nu': {**nu.model_dump(mode='json'), 'passed': nu.passed},
        },
    )
    _finish(context, 'mu-check', _fingerprints(setup))

    context.echo(
        f'mu-check: q = {mu.q}, C0 estimate = {mu.c0_estimate:.4f}, '
        f'passing C0 smallest = {mu.smallest_passing_c0}, largest = {mu.largest_passing_c0}, '
        f'Jensen step {"passed" if mu.jensen_step_passed else "failed"}'
    )
    context.echo(
        f'mu-check: lower-bound chain passed at {sum(row.passed for row in chain)}/{len(chain)} '
        f'times; nu recursion {"passed" if nu.passed else f"failed at n = {nu.violations[:5]}"}'
    )
    violations = sum(row.pathwise_violations for row in chain)
    if violations:
        raise PropertyViolationError(
            f'hat_chain: {violations} pathwise violations of X >= X^hat >= Y'
        )
    return EXIT_OK


# replay


def cmd_replay(context: CliContext) -> int:
    """Re-run a manifest under ``<out-dir>/replay/<subcommand>`` and compare output hashes."""
    path = parse_input_path(context.options.manifest, 'Manifest')
    manifest = read_manifest(path)
    handler = HANDLERS.get(manifest.subcommand)
    if handler is None or handler is cmd_replay:
        raise StorageError(f'{path} records subcommand {manifest.subcommand!r}, cannot replay it')
    if manifest.engine_version != ENGINE_VERSION:
        context.logger(
            f'CliRunner: manifest engine {manifest.engine_version}, running {ENGINE_VERSION}',
            'warning',
        )

    settings = settings_from_values(parse_config_text(manifest.config_text))
    if config_hash(settings) != manifest.config_hash:
        raise ReplayMismatchError(f'Config text in {path} does not match its hash')

    out_dir = context.storage.path(f'replay/{manifest.subcommand}')
    replay_context = replace(
        context,
        settings=settings,
        options=replace(context.options, out_dir=out_dir, curve=manifest.args.get('curve')),
        storage=StorageManager(out_dir, context.logger),
    )
    try:
        handler(replay_context)
    except (OracleMismatchError, PropertyViolationError) as e:
        context.logger(f'CliRunner: replayed run fails as recorded: {e}', 'warning')

    produced = replay_context.storage.outputs
    mismatched = sorted(
        name
        for name in set(manifest.outputs) | set(produced)
        if manifest.outputs.get(name) != produced.get(name)
    )
    if mismatched:
        raise ReplayMismatchError(f'Outputs differ from {path}: {", ".join(mismatched)}')
    context.echo(
        f'replay: {len(produced)} outputs of {manifest.subcommand} reproduced byte-for-byte'
    )
    return EXIT_OK


HANDLERS: dict[str, Callable[[CliContext], int]] = {
    'simulate': cmd_simulate,
    'oracle-check': cmd_oracle_check,
    'property-check': cmd_property_check,
    'fit': cmd_fit,
    'sweep': cmd_sweep,
    'upper-bound': cmd_upper_bound,
    'mu-check': cmd_mu_check,
    'replay': cmd_replay,
}
