"""
BHT lab command line.

    python -m src.main predict  --config lab.ini --out results/
    python -m src.main ensemble --config lab.ini --out results/ --seed 7 --threads 4
    python -m src.main verify   --config lab.ini --out results/

Exit status: 0 when every check passes, 1 when a check fails, 2 on a lab error
(bad config, out-of-theory parameters, a failed sample, ...).
"""

import argparse
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv
from loguru import logger

from src.core.assembly import ANNULUS_COLUMNS, CHECK_COLUMNS, PREDICTION_COLUMNS, STATS_COLUMNS, ResultAssembler
from src.core.config import EnsembleConfig, load_config, with_overrides
from src.core.errors import LabError
from src.core.predictor import predict_bands, smallness_diagnostics
from src.core.validator import CheckReport, validate_and_log
from src.core.verification import run_verification
from src.worker import resolve_threads, run_ensemble

load_dotenv()

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_ERROR = 2

COLUMNS_HELP = f"""
result files (floats with 17 significant digits):
  predictions.csv     {",".join(PREDICTION_COLUMNS)}
  ensemble_stats.csv  {",".join(STATS_COLUMNS)}
  checks.csv          {",".join(CHECK_COLUMNS)}
  samples.csv         sample,kappa_<k>... (one band power per band)
  fits.csv            convention,slope,stderr,intercept,bands
  annulus.csv         {",".join(ANNULUS_COLUMNS)}
  verdict.json, manifest.json, band_power.gp
"""


def configure_logging(level: Optional[str] = None):
    logger.remove()
    logger.add(sys.stderr, level=(level or os.getenv("BHT_LAB_LOG_LEVEL", "INFO")).upper())


def _load(args) -> EnsembleConfig:
    config = load_config(args.config) if args.config else EnsembleConfig()
    return with_overrides(config, seed=args.seed, threads=args.threads)


def _exit_code(report: CheckReport) -> int:
    return EXIT_PASS if report.is_passing() else EXIT_FAIL


def cmd_predict(args) -> int:
    config = _load(args)
    assembler = ResultAssembler(args.out, args.label)
    manifest = assembler.start_manifest("predict", config)
    prediction = predict_bands(config.velocity, config.source, config.bands.kappas)
    report = CheckReport("predictions")
    for band in prediction.bands:
        for flag in band.flags:
            report.add_warning(f"kappa={band.kappa:g}: {flag}")
    smallness = smallness_diagnostics(config.velocity, config.source)
    if not smallness.passes:
        report.add_warning("smallness conditions fail; predictions are outside the perturbative regime")
    assembler.write_predictions(prediction)
    assembler.write_verdict(validate_and_log(report))
    assembler.finish_manifest(manifest, report)
    return _exit_code(report)


def cmd_ensemble(args) -> int:
    config = _load(args)
    threads = resolve_threads(config.ensemble.threads)
    assembler = ResultAssembler(args.out, args.label)
    manifest = assembler.start_manifest("ensemble", config, threads)
    result = run_ensemble(config, threads)
    assembler.write_predictions(result.prediction)
    stats_file = assembler.write_ensemble_stats(result)
    assembler.write_samples(result)
    if result.fits:
        assembler.write_fits(result.fits)
    assembler.write_checks(result.checks)
    assembler.write_plot_script(stats_file, f"{result.mode} ensemble, beta={config.velocity.beta:g}")
    assembler.write_verdict(result.checks)
    assembler.finish_manifest(manifest, result.checks)
    print(result.checks)
    return _exit_code(result.checks)


def cmd_verify(args) -> int:
    config = _load(args)
    assembler = ResultAssembler(args.out, args.label)
    manifest = assembler.start_manifest("verify", config)
    result = run_verification(config, oracle_k_max=args.oracle_k_max, oracle_seeds=args.oracle_seeds)
    validate_and_log(result.report)
    assembler.write_annulus(result.annulus_rows)
    assembler.write_checks(result.report)
    assembler.write_verdict(result.report)
    assembler.finish_manifest(manifest, result.report)
    for check in result.report.checks:
        print(check)
    print(result.report)
    return _exit_code(result.report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bht-lab",
        description="Passive tracer spectra in random flows: predictions, ensembles and verification.",
        epilog=COLUMNS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file (defaults are used when omitted)")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--seed", type=int, help="override [ensemble] seed")
        p.add_argument("--threads", type=int, help="worker threads (fallback: BHT_LAB_THREADS)")
        p.add_argument("--label", default="", help="prefix for the result file names")
        p.add_argument("--log-level", help="loguru level (fallback: BHT_LAB_LOG_LEVEL)")

    p = sub.add_parser("predict", help="write the analytic band predictions",
                       epilog=COLUMNS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("ensemble", help="run a static or time-dependent ensemble and compare",
                       epilog=COLUMNS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p.set_defaults(handler=cmd_ensemble)

    p = sub.add_parser("verify", help="run the deterministic verification suites",
                       epilog=COLUMNS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p.add_argument("--oracle-k-max", type=int, default=32, help="truncation for the dense-solve comparison")
    p.add_argument("--oracle-seeds", type=int, default=20, help="samples for the dense-solve comparison")
    p.set_defaults(handler=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except LabError as e:
        logger.error(f"[Main] {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
