import argparse
from pathlib import Path
import sys

from ui.cli import CliOptions, run_cli
from ui.cli.context import DEFAULT_OUT_DIR
from utils import pick

OPTION_FIELDS = [
    'config',
    'out_dir',
    'seed',
    'replicates',
    'threads',
    'mode',
    'steps',
    'trials',
    'verbose',
    'curve',
    'manifest',
]


def options_from_args(args: argparse.Namespace) -> CliOptions:
    return CliOptions(**pick(vars(args), OPTION_FIELDS))


def cmd_run(args: argparse.Namespace) -> int:
    """Run the selected subcommand."""
    return run_cli(args.command, options_from_args(args))


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', type=Path, help='Config file (key = value lines)')
    parser.add_argument(
        '--out-dir', type=Path, default=DEFAULT_OUT_DIR, help='Directory for outputs and logs'
    )
    parser.add_argument('--seed', type=int, help='Master seed (run.seed)')
    parser.add_argument('--replicates', type=int, help='Monte Carlo replicates (run.replicates)')
    parser.add_argument('--threads', type=int, help='Worker processes (run.threads)')
    parser.add_argument(
        '--mode', choices=['exact', 'torus'], help='exact needs L > 2vn; torus allows any L'
    )
    parser.add_argument('--steps', type=int, help='Time horizon n (run.steps)')
    parser.add_argument('--verbose', action='store_true', help='Debug-level file logging')


def main():
    parser = argparse.ArgumentParser(
        description='Harness processes with walls: simulation, oracles and property checks'
    )
    subparsers = parser.add_subparsers(dest='command', help='Available commands')
    subparsers.required = True

    # Simulate command
    parser_simulate = subparsers.add_parser('simulate', help='Growth curve of E X_n(0)')
    add_common_arguments(parser_simulate)
    parser_simulate.set_defaults(func=cmd_run)

    # Oracle command
    parser_oracle = subparsers.add_parser(
        'oracle-check', help='Engine against closed-form walk oracles'
    )
    add_common_arguments(parser_oracle)
    parser_oracle.set_defaults(func=cmd_run)

    # Property command
    parser_property = subparsers.add_parser(
        'property-check', help='Pathwise inequalities over randomized instances'
    )
    add_common_arguments(parser_property)
    parser_property.add_argument('--trials', type=int, help='Randomized instances (run.trials)')
    parser_property.set_defaults(func=cmd_run)

    # Fit command
    parser_fit = subparsers.add_parser('fit', help='Exponent fit of a growth-curve CSV')
    add_common_arguments(parser_fit)
    parser_fit.add_argument('curve', help='Growth-curve CSV (n, mean, se, replicates)')
    parser_fit.set_defaults(func=cmd_run)

    # Sweep command
    parser_sweep = subparsers.add_parser(
        'sweep', help='Growth curve and fit per value of sweep.key'
    )
    add_common_arguments(parser_sweep)
    parser_sweep.set_defaults(func=cmd_run)

    # Upper-bound command
    parser_upper = subparsers.add_parser(
        'upper-bound', help='Exceedance and decoupling frequencies per K'
    )
    add_common_arguments(parser_upper)
    parser_upper.set_defaults(func=cmd_run)

    # Mu-check command
    parser_mu = subparsers.add_parser(
        'mu-check', help='Mean recursions, C0 estimate and the lower-bound chain'
    )
    add_common_arguments(parser_mu)
    parser_mu.set_defaults(func=cmd_run)

    # Replay command
    parser_replay = subparsers.add_parser(
        'replay', help='Re-run a manifest and compare output hashes'
    )
    add_common_arguments(parser_replay)
    parser_replay.add_argument('manifest', help='Manifest JSON written by an earlier run')
    parser_replay.set_defaults(func=cmd_run)

    args = parser.parse_args()

    if hasattr(args, 'func'):
        sys.exit(args.func(args))
    else:
        parser.print_help()
        sys.exit(1)


if __name__ == '__main__':
    main()
