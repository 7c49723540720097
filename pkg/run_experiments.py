import argparse
import dataclasses
import os
import sys
from datetime import datetime
from typing import List, Optional

from branchfit.errors import (EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, BranchfitError, ConfigError,
                              EnumerationLimitError, InvalidParameterError, NumericalError, TreeFormatError)
from branchfit.experiments import ExperimentConfig, TreeSpec, run_experiment
from utils.config_manager import get_config
from utils import logger

log = logger.customLogger()

SUBCOMMANDS = {
    'error-scaling': 'Estimation error against sample size',
    'convergence': 'Per-sweep objective gap of the coordinate ascent',
    'landscape': 'Hessian eigenvalue scan of the estimation box',
    'steel-demo': 'Multi-start search for separated global maxima on a quartet',
    'bernstein': 'Empirical Hessian deviation next to the matrix Bernstein bound',
    'simulate': 'Draw leaf samples at the true parameters',
    'fit': 'Fit branch parameters to a samples CSV',
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='CFN branch-parameter estimation experiments')
    parser.add_argument('--env', default=None, help='Settings environment (.env.<env>); default BRANCHFIT_ENV or dev')
    sub = parser.add_subparsers(dest='command', required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--config', help='Experiment JSON config')
        p.add_argument('--seed', type=int, help='Override the master seed')
        p.add_argument('--out', help='Override the output directory')
        p.add_argument('--tree', help='Newick file overriding the configured tree')
        p.add_argument('--workers', type=int, help='Thread pool size for independent trials')
        if name == 'fit':
            p.add_argument('--samples', help='Samples CSV (default: <out>/samples.csv)')
    return parser


def load_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_json(args.config)
        if config.kind != args.command:
            if args.command not in ('simulate', 'fit'):
                raise ConfigError(f"Config kind '{config.kind}' does not match subcommand '{args.command}'")
            config = dataclasses.replace(config, kind=args.command)
    elif args.tree:
        config = ExperimentConfig(kind=args.command, tree=TreeSpec(path=args.tree))
    else:
        raise ConfigError("Either --config or --tree is required")
    output_dir = args.out or (None if args.config else get_config().get_run_config()['output_dir'])
    return config.with_overrides(seed=args.seed, tree_path=args.tree, output_dir=output_dir)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.env:
        os.environ['BRANCHFIT_ENV'] = args.env
    logger.set_level(get_config(args.env).get_run_config()['log_level'])

    started = datetime.now()
    try:
        config = load_config(args)
        log.info(f"Running '{config.kind}' (config {config.hash[:12]}, seed {config.seed}) into {config.output_dir}")
        kwargs = {'workers': args.workers}
        if args.command == 'fit':
            kwargs['samples_path'] = args.samples
        result = run_experiment(config, **kwargs)
    except (ConfigError, TreeFormatError, InvalidParameterError, EnumerationLimitError) as e:
        log.error(f"Configuration error: {e}")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        log.error(f"Numerical failure: {e}")
        print(f"❌ numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BranchfitError as e:
        log.error(f"{type(e).__name__}: {e}")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG

    elapsed = (datetime.now() - started).total_seconds()
    for report in result.reports:
        print(f"📄 {report.path} ({len(report.rows)} rows)")
    if result.summary_path:
        print(f"📝 {result.summary_path}")
    print(f"✅ {result.kind} finished in {elapsed:.1f}s")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
