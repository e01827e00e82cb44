#!/usr/bin/env python
"""
SBITE Command Line Interface

Fits, risk surfaces, wavelet denoising, universal thresholds and Monte-Carlo
experiments from the shell.

Usage:
    sbite fit --input prostate.csv --rule sure
    sbite sure-grid --input prostate.csv --nus 1 2 4 -o surface.csv
    sbite denoise --input noisy.csv --output clean.csv --rule sure
    sbite threshold --n 1000 --q 2
    sbite simulate js04 --cells 5:7 --replicates 20 --seed 1

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 1 other errors.
"""

import argparse
import logging
import sys
from typing import List, Optional

import numpy as np

from sbite.config import EXPERIMENTS, load_config, build_config
from sbite.core.canonical import CANONICAL_RULES, universal_threshold
from sbite.core.risk import (
    CRITERIA, DEFAULT_NUS, SearchGrid, lambda_max, risk_surface, search_hyperparameters,
)
from sbite.errors import ConfigError, DomainError, NumericalError, SBITEError
from sbite.experiments import run_experiment
from sbite.formats import (
    fit_report, read_regression_csv, read_series, results_csv, surface_csv,
    write_fit_report, write_series, write_surface_csv,
)
from sbite.models.problem import ProblemInstance, as_partition
from sbite.wavelet import DEFAULT_FAMILY, DEFAULT_J0, BlockWaveletDenoiser

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _instance(args) -> tuple:
    X, y, names = read_regression_csv(args.input)
    try:
        partition = as_partition(args.blocks, X.shape[1])
        return ProblemInstance.from_data(X, y, partition), names
    except DomainError as e:
        raise ConfigError(str(e)) from e


def _grid(args) -> SearchGrid:
    try:
        return SearchGrid(nus=args.nus or DEFAULT_NUS, n_lambda=args.n_lambda,
                          stage2_points=args.stage2_points)
    except DomainError as e:
        raise ConfigError(str(e)) from e


def cmd_fit(args):
    """Handle fit command"""
    instance, names = _instance(args)
    hp, report = search_hyperparameters(instance, args.rule, _grid(args), grouped=args.grouped)

    beta = report.solution.beta
    coefficients = instance.coefficients_in_original_basis(beta)
    result = fit_report(coefficients, instance.intercept(beta), report, names)

    if args.output:
        write_fit_report(args.output, result)
        print(f"Selected {hp} by {args.rule.upper()}")
        print("=" * 80)
        print(f"  Active set: {result['active_set']}")
        print(f"  SURE: {report.sure:.6g} | GSURE: {report.gsure:.6g} | edf: {report.edf:.4g}")
        print(f"\nFit report saved to: {args.output}")
    else:
        write_fit_report(sys.stdout, result)


def cmd_sure_grid(args):
    """Handle sure-grid command"""
    instance, _ = _instance(args)
    nus = args.nus or DEFAULT_NUS
    if args.lambdas:
        lambdas = np.asarray(args.lambdas, dtype=float)
    else:
        upper = args.lambda_max or max(lambda_max(instance, nu, args.grouped) for nu in nus)
        lambdas = np.geomspace(args.lambda_min, upper, args.n_lambda)
    s = None if args.s == "auto" else float(args.s)

    surface = risk_surface(instance, lambdas, nus, s=s, grouped=args.grouped)
    if args.output:
        write_surface_csv(args.output, surface)
        skipped = sum(report is None for _, report in surface)
        print(f"Wrote {len(surface)} grid points ({skipped} skipped) to: {args.output}")
    else:
        sys.stdout.write(surface_csv(surface))


def cmd_denoise(args):
    """Handle denoise command"""
    try:
        series = read_series(args.input)
        denoiser = BlockWaveletDenoiser(rule=args.rule, family=args.family, j0=args.j0,
                                        nu=args.nu, blockwise=not args.coordinatewise)
        clean, reports = denoiser.denoise(series)
    except DomainError as e:
        raise ConfigError(str(e)) from e
    write_series(args.output, clean)

    print(f"Denoised {series.Q} channels x {series.T} samples with rule '{args.rule}'")
    print("=" * 80)
    for report in reports:
        channel = "" if report.channel is None else f" ch{report.channel + 1}"
        note = " (noiseless)" if report.noiseless else " (fallback)" if report.fallback else ""
        print(f"  level {report.level}{channel}: {report.n_blocks} blocks, "
              f"{report.active_count} kept, {report.hp}{note}")
    print(f"\nOutput saved to: {args.output}")


def cmd_threshold(args):
    """Handle threshold command"""
    try:
        threshold = universal_threshold(args.n, args.q)
    except DomainError as e:
        raise ConfigError(str(e)) from e
    print(f"Universal thresholds for N={args.n}, Q={args.q}")
    print("=" * 80)
    print(f"  d_N:                {threshold.d_N:.12g}")
    print(f"  finite-sample:      {threshold.lambda_finite:.12g}")
    print(f"  asymptotic:         {threshold.lambda_asymptotic:.12g}")


def cmd_simulate(args):
    """Handle simulate command"""
    overrides = dict(
        experiment=args.experiment,
        seed=args.seed,
        replicates=args.replicates,
        cells=args.cells,
        rules=args.rules,
        nus=args.nus,
        n_lambda=args.n_lambda,
        stage2_points=args.stage2_points,
        output=args.output,
        threads=args.threads,
    )
    if args.config:
        config = load_config(args.config, **overrides)
    else:
        config = build_config(**{k: v for k, v in overrides.items() if v is not None})

    table = run_experiment(config)
    if config.output:
        print(f"Wrote {len(table)} rows to: {config.output}")
    else:
        sys.stdout.write(results_csv(table))


def _cell_list(value: str) -> List[str]:
    return [cell.strip() for cell in value.split(",") if cell.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbite",
        description="SBITE - smooth blockwise iterative thresholding",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  # Select (lambda, nu, s) by SURE and write the fit report
  sbite fit --input prostate.csv --rule sure -o fit.json

  # SURE surface over lambda x nu at s = 1
  sbite sure-grid --input prostate.csv --nus 1 2 4 8 -o surface.csv

  # Denoise a multichannel series (channel CSV or SBW1 raw)
  sbite denoise --input noisy.sbw --output clean.sbw --rule universal

  # Universal thresholds, and a reproducible Monte-Carlo cell
  sbite threshold --n 1000 --q 2
  sbite simulate js04 --cells 5:7 --replicates 20 --seed 1
        '''
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='Enable debug logging')
    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    def grid_options(p, stage2=True):
        p.add_argument('--nus', nargs='+', type=float, help='nu grid (default: 1 1.5 2 3 4 6 8)')
        p.add_argument('--n-lambda', type=int, default=50, help='lambda grid size (default: 50)')
        if stage2:
            p.add_argument('--stage2-points', type=int, default=30,
                           help='Stage-2 lambda grid size (default: 30)')

    def regression_options(p):
        p.add_argument('--input', '-i', required=True, help='CSV with header y,x1..xP')
        p.add_argument('--blocks', type=lambda v: [int(b) for b in v.split(",")],
                       help='Comma-separated block sizes (default: one block per variable)')
        p.add_argument('--grouped', action='store_true',
                       help='Orthonormalized group update (smooth adaptive group lasso)')

    # Fit command
    fit_parser = subparsers.add_parser('fit', help='Fit SBITE with hyperparameters selected by SURE/GSURE')
    regression_options(fit_parser)
    fit_parser.add_argument('--rule', choices=CRITERIA, default='sure', help='Selection criterion')
    grid_options(fit_parser)
    fit_parser.add_argument('--output', '-o', help='Save the JSON fit report (default: stdout)')
    fit_parser.set_defaults(func=cmd_fit)

    # SURE surface command
    grid_parser = subparsers.add_parser('sure-grid', help='Emit the SURE surface over lambda x nu as CSV')
    regression_options(grid_parser)
    grid_options(grid_parser, stage2=False)
    grid_parser.add_argument('--lambdas', nargs='+', type=float, help='Explicit lambda grid')
    grid_parser.add_argument('--lambda-min', type=float, default=1e-3, help='Lower end of the lambda grid')
    grid_parser.add_argument('--lambda-max', type=float, help="Upper end (default: max |x_i'y|)")
    grid_parser.add_argument('--s', default='1', help="Smoothness s, or 'auto' for 2 ln nu + 1 (default: 1)")
    grid_parser.add_argument('--output', '-o', help='Save the surface CSV (default: stdout)')
    grid_parser.set_defaults(func=cmd_sure_grid)

    # Denoise command
    dn_parser = subparsers.add_parser('denoise', help='Multichannel wavelet block denoising')
    dn_parser.add_argument('--input', '-i', required=True, help='Channel CSV (ch1..chQ) or SBW1 raw file')
    dn_parser.add_argument('--output', '-o', required=True, help='Output path (.csv for CSV, else SBW1)')
    dn_parser.add_argument('--rule', choices=CANONICAL_RULES, default='sure', help='Per-level selection rule')
    dn_parser.add_argument('--family', default=DEFAULT_FAMILY, help=f'Wavelet family (default: {DEFAULT_FAMILY})')
    dn_parser.add_argument('--j0', type=int, default=DEFAULT_J0, help=f'Coarse level (default: {DEFAULT_J0})')
    dn_parser.add_argument('--nu', type=float, default=2.0, help='nu of the universal rule (default: 2)')
    dn_parser.add_argument('--coordinatewise', action='store_true',
                           help='Denoise every channel separately instead of in blocks')
    dn_parser.set_defaults(func=cmd_denoise)

    # Threshold command
    th_parser = subparsers.add_parser('threshold', help='Print universal thresholds for N blocks of size Q')
    th_parser.add_argument('--n', type=int, required=True, help='Number of blocks N')
    th_parser.add_argument('--q', type=int, default=1, help='Block size Q (default: 1)')
    th_parser.set_defaults(func=cmd_threshold)

    # Simulate command
    sim_parser = subparsers.add_parser('simulate', help='Run a Monte-Carlo experiment')
    sim_parser.add_argument('experiment', choices=EXPERIMENTS, help='Experiment id')
    sim_parser.add_argument('--seed', type=int, required=True, help='Master seed')
    sim_parser.add_argument('--replicates', '-r', type=int, help='Replicates per cell')
    sim_parser.add_argument('--cells', type=_cell_list, help='Comma-separated cells, e.g. "5:7,50:5"')
    sim_parser.add_argument('--rules', nargs='+', help='Selection rules to run')
    sim_parser.add_argument('--nus', nargs='+', type=float, help='nu grid of the searches')
    sim_parser.add_argument('--n-lambda', type=int, help='Stage-1 lambda grid size')
    sim_parser.add_argument('--stage2-points', type=int, help='Stage-2 lambda grid size')
    sim_parser.add_argument('--threads', type=int, help='Thread cap (overrides SBITE_THREADS)')
    sim_parser.add_argument('--config', '-c', help='YAML or JSON experiment configuration')
    sim_parser.add_argument('--output', '-o', help='Save the results CSV (default: stdout)')
    sim_parser.set_defaults(func=cmd_simulate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point; returns the exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    if not args.command:
        parser.print_help()
        return EXIT_CONFIG

    try:
        args.func(args)
    except KeyboardInterrupt:
        print("\n\nOperation cancelled by user.", file=sys.stderr)
        return EXIT_ERROR
    except ConfigError as e:
        print(f"\nConfiguration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"\nNumerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SBITEError, OSError) as e:
        print(f"\nError: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
