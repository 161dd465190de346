import sys

if sys.stdout and hasattr(sys.stdout, 'reconfigure'):
    sys.stdout.reconfigure(encoding='utf-8', errors='replace')
if sys.stderr and hasattr(sys.stderr, 'reconfigure'):
    sys.stderr.reconfigure(encoding='utf-8', errors='replace')

# -- Logging must be initialised FIRST so all subsequent imports/errors are captured --
from logger import setup_logging, log
setup_logging()

import argparse
import csv
from dataclasses import replace

import settings as settings_module
from api import Api, UnknownParameter
from pipeline.kernel import KernelError
from pipeline.scenario import IoError, LayoutInvalid, SchemaError, load_scenario
from version import VERSION

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_MISSION_FAILED = 3
EXIT_FAULT = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='sc3sim',
        description='Deterministic simulator for agentic drone missions on a partitioned edge accelerator.',
    )
    parser.add_argument('--version', action='version', version=f'sc3sim {VERSION}')
    parser.add_argument('--log-level', default=None, help='console log level (default from settings.json)')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('run', help='run one mission and write its trace and tables')
    p.add_argument('scenario')
    p.add_argument('--seed', type=int, default=None, help='override the scenario seed')
    p.add_argument('--out', default=None, help='output directory')

    p = sub.add_parser('sweep', help='one run per parameter value')
    p.add_argument('scenario')
    p.add_argument('--param', required=True, help='tier | strategy | seed | b0_mbps | per_mbps_mib')
    p.add_argument('--values', required=True, help='comma-separated values, e.g. Low,Mid,High')
    p.add_argument('--out', default=None, help='directory for the sweep table')

    p = sub.add_parser('compare', help='run the scenario under every built-in partitioning strategy')
    p.add_argument('scenario')
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--out', default=None, help='directory for the comparison table')

    p = sub.add_parser('validate', help='check a scenario file without running it')
    p.add_argument('scenario')
    return parser


def _print_table(rows: list[dict]) -> None:
    if not rows:
        return
    writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator='\n')
    writer.writeheader()
    writer.writerows(rows)


def _dispatch(args: argparse.Namespace, api: Api) -> int:
    if args.command == 'validate':
        info = api.validate(args.scenario)
        print(f'{info["name"]}: ok ({info["strategy"]}, {info["isolation_mode"]}, tier {info["tier"]})')
        return EXIT_OK

    scenario = load_scenario(args.scenario)
    if getattr(args, 'seed', None) is not None:
        scenario = replace(scenario, seed=args.seed)

    if args.command == 'run':
        result, exported = api.run(scenario, args.out)
        print(exported.digest)
        outcome = result.summary.outcome
        log.info(f'Outcome {outcome.value}; artefacts in {exported.out_dir}')
        return EXIT_MISSION_FAILED if outcome.failed else EXIT_OK

    if args.command == 'sweep':
        values = [v.strip() for v in args.values.split(',') if v.strip()]
        if not values:
            raise SchemaError('--values', 'no values given')
        _print_table(api.sweep(scenario, args.param, values, args.out))
        return EXIT_OK

    if args.command == 'compare':
        _print_table(api.compare_strategies(scenario, args.out))
        return EXIT_OK

    raise ValueError(f'unknown command {args.command!r}')


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    s = settings_module.load()
    setup_logging((args.log_level or s.log_level).upper())
    log.debug(f'SC3Sim v{VERSION} starting: {args.command} {args.scenario}')
    api = Api(s)

    try:
        return _dispatch(args, api)
    except (SchemaError, LayoutInvalid, UnknownParameter) as e:
        log.error(f'Invalid scenario: {e}')
        return EXIT_INVALID
    except (IoError, OSError) as e:
        log.error(f'I/O error: {e}')
        return EXIT_INVALID
    except KernelError as e:
        log.critical(f'Simulation fault: {e}')
        return EXIT_FAULT


if __name__ == '__main__':
    try:
        sys.exit(main())
    except Exception:
        import traceback
        log.critical(f'Unhandled exception in main():\n{traceback.format_exc()}')
        sys.exit(EXIT_FAULT)
