#!/usr/bin/env python3
"""
PhaseStep CLI - Semi-implicit viscous Cahn-Hilliard runs, refinement studies and checks

Usage:
  python phasestep_cli.py run scenario.cfg --out results/
  python phasestep_cli.py converge scenario.cfg --format excel
  python phasestep_cli.py check

Exit codes: 0 ok, 1 numerical failure, 2 configuration error. Failures print one
line `FAIL <tag>: <message>` on stderr.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
from dotenv import load_dotenv

from phasestep_checks import InvariantSuite
from phasestep_config import ConfigError, RunConfig, build_initial_data, load_config, parse_config
from phasestep_diagnostics import diagnostics_table
from phasestep_harness import StudyError, convergence_study
from phasestep_stepper import StepFailure, run, step_count

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2
DEFAULT_OUTPUT_DIR = 'phasestep_output'
FLOAT_FORMAT = '%.17g'


def failure_tag(error: Exception) -> str:
    cause = getattr(error, 'cause', None)
    if isinstance(error, (StepFailure, StudyError)) and cause is not None:
        return failure_tag(cause)
    return getattr(error, 'tag', 'error')


class PhaseStepCLI:
    def __init__(self, out_dir: Optional[str] = None, output_format: Optional[str] = None,
                 quiet: bool = False, base_dir: Optional[Path] = None):
        self.out_dir = out_dir
        self.output_format = output_format
        self.quiet = quiet
        self.base_dir = Path(base_dir) if base_dir else Path('.')
        self.logger = logging.getLogger(__name__)

    def say(self, message: str):
        if not self.quiet:
            print(message)

    def fail(self, error: Exception, code: int, tag: Optional[str] = None) -> int:
        print(f"FAIL {tag or failure_tag(error)}: {error}", file=sys.stderr)
        return code

    def output_dir(self, config: RunConfig) -> Path:
        directory = self.out_dir or config.output.dir or os.getenv('PHASESTEP_OUTPUT_DIR') or DEFAULT_OUTPUT_DIR
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def write_tables(self, config: RunConfig, name: str, tables: Dict[str, pd.DataFrame]) -> List[Path]:
        """One CSV per table, or one workbook with a sheet per table"""
        directory = self.output_dir(config)
        fmt = self.output_format or config.output.format
        if fmt == 'excel':
            path = directory / f"{name}.xlsx"
            with pd.ExcelWriter(path, engine='openpyxl') as writer:
                for sheet, table in tables.items():
                    table.to_excel(writer, sheet_name=sheet, index=False)
            return [path]
        written = []
        for table_name, table in tables.items():
            path = directory / f"{table_name}.csv"
            table.to_csv(path, index=False, float_format=FLOAT_FORMAT, encoding='utf-8')
            written.append(path)
        return written

    def cmd_run(self, config: RunConfig) -> int:
        """One trajectory: per-step CSV, diagnostics CSV and field snapshots"""
        try:
            grid = config.build_grid()
            ps = config.build_potentials()
            init = build_initial_data(config, grid, self.base_dir)
            n_steps = step_count(config.time.T, config.time.tau)
        except ValueError as e:
            return self.fail(e, EXIT_CONFIG)

        shape = 'two-well' if config.logistic_params().has_two_wells else 'convex'
        self.say(f"🚀 Running {n_steps} steps of tau = {config.time.tau:.6g} on {grid.describe()} ({shape} potential)")
        directory = self.output_dir(config)

        try:
            trajectory = run(grid, ps, init, config.time.tau, config.time.T,
                             store_every=config.output.store_every, settings=config.solver_settings())
        except StepFailure as e:
            self.write_tables(config, 'run', {'steps': e.trajectory.to_dataframe()})
            e.trajectory.write_snapshots(directory / 'snapshots')
            return self.fail(e, EXIT_NUMERICAL)

        tables = {'steps': trajectory.to_dataframe()}
        if trajectory.stores_every_step:
            tables['diagnostics'] = diagnostics_table(trajectory, ps)
        else:
            self.logger.warning("Diagnostics need every step stored; skipped for store_every > 1")
        self.write_tables(config, 'run', tables)
        snapshots = trajectory.write_snapshots(directory / 'snapshots')

        self.say(f"✅ Run finished: {len(trajectory.states)} stored states, {len(snapshots)} snapshot files")
        self.say(f"📊 Interiority margin {trajectory.interiority_margin:.4g}; results in {directory}")
        return EXIT_OK

    def cmd_converge(self, config: RunConfig) -> int:
        """Ladder of time steps against one fine reference run"""
        if not config.time.T > 0:
            return self.fail(ConfigError("a refinement study needs T > 0", key='time.T', tag='bad-value'),
                             EXIT_CONFIG)
        try:
            grid = config.build_grid()
            ps = config.build_potentials()
            init = build_initial_data(config, grid, self.base_dir)
        except ValueError as e:
            return self.fail(e, EXIT_CONFIG)

        taus = config.ladder_taus()
        self.say(f"🔬 Refinement study: tau = T/{{{', '.join(str(n) for n in config.time.ladder)}}}, "
                 f"reference tau = T/{config.time.ref_steps}")
        try:
            table = convergence_study(grid, ps, init, config.time.T, taus, config.reference_tau(),
                                      settings=config.solver_settings())
        except StudyError as e:
            self.write_tables(config, 'converge', {'errors': e.table.to_dataframe()})
            return self.fail(e, EXIT_NUMERICAL)
        except ValueError as e:
            return self.fail(e, EXIT_CONFIG)

        self.write_tables(config, 'converge', {'errors': table.to_dataframe(), 'rates': table.rates_frame()})
        self.say("📊 Observed orders of the combined error:")
        self.say(table.summary())
        if config.init.preset == 'rough':
            self.say("ℹ️  Rough initial data: orders near 1/2 are expected; recorded, not asserted")
        self.say(f"✅ Error report written to {self.output_dir(config)}")
        return EXIT_OK

    def cmd_check(self, config: RunConfig) -> int:
        """Full invariant suite; nonzero exit when any check fails"""
        try:
            step_count(config.time.T, config.time.tau)
        except ValueError as e:
            return self.fail(e, EXIT_CONFIG)

        suite = InvariantSuite(config)
        results = suite.run_all()
        for result in results:
            self.say(result.line())
        self.write_tables(config, 'check', {'checks': suite.to_dataframe()})

        failed = [result.name for result in results if not result.passed]
        if failed:
            print(f"FAIL check-failed: {', '.join(failed)}", file=sys.stderr)
            return EXIT_NUMERICAL
        self.say(f"✅ All {len(results)} checks passed")
        return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='PhaseStep - semi-implicit viscous Cahn-Hilliard solver',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # One trajectory with the default scenario
  python phasestep_cli.py run

  # Refinement study, Excel report
  python phasestep_cli.py converge scenario.cfg --format excel

  # Invariant suite
  python phasestep_cli.py check --quiet
        """
    )
    parser.add_argument('command', choices=['run', 'converge', 'check'],
                        help='What to do')
    parser.add_argument('config', nargs='?',
                        help='Configuration file (defaults apply when omitted)')
    parser.add_argument('--out', '-o',
                        help='Output directory (overrides output.dir and PHASESTEP_OUTPUT_DIR)')
    parser.add_argument('--format', '-f', choices=['csv', 'excel'],
                        help='Table format (overrides output.format)')
    parser.add_argument('--quiet', '-q', action='store_true',
                        help='Only warnings and failure lines')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point"""
    load_dotenv()
    args = build_parser().parse_args(argv)

    level = logging.WARNING if args.quiet else os.getenv('PHASESTEP_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')

    base_dir = None
    try:
        if args.config:
            config = load_config(args.config)
            base_dir = Path(args.config).resolve().parent
        else:
            config = parse_config('')
    except ConfigError as e:
        print(f"FAIL {e.tag}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"FAIL config-error: cannot read {args.config}: {e}", file=sys.stderr)
        return EXIT_CONFIG

    cli = PhaseStepCLI(out_dir=args.out, output_format=args.format, quiet=args.quiet, base_dir=base_dir)
    commands = {'run': cli.cmd_run, 'converge': cli.cmd_converge, 'check': cli.cmd_check}
    return commands[args.command](config)


if __name__ == "__main__":
    sys.exit(main())
