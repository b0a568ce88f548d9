# main.py
# Local Tb Verification Harness — Entry Point
# HOW TO RUN:
#   python main.py verify-kernel --kernel hilbert
#   python main.py pipeline --config default.json --depth 8
#   python main.py report --merge runs/*/report.json
#
# Exit codes: 0 pass, 1 tolerance fail, 2 config error, 3 internal error.

import argparse
import logging
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from config import PERF_LOGGING_ENABLED
from src.errors import ConfigError, HarnessError
from src.reports import VerificationReport, merge_reports
from src.run_config import STAGES, load_config
from verifier import verify

logger = logging.getLogger("localtb")

EXIT_PASS = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3

# subcommand -> stages that produce its records
COMMAND_STAGES = {
    "verify-kernel": ("kernel",),
    "decompose": ("decompose",),
    "stopping": ("preparatory", "stopping"),
    "suppress": ("suppress",),
    "martingale": ("martingale",),
    "bilinear": ("wbp", "baby_tb", "bilinear"),
    "pipeline": None,  # keep config.stages
}


def build_parser():
    parser = argparse.ArgumentParser(prog="localtb", description="Local Tb verification harness")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    for name in COMMAND_STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--depth", type=int)
        p.add_argument("--dim", type=int, choices=[1, 2])
        p.add_argument("--kernel")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory for the report and artifacts")
        p.add_argument("--stage", action="append", choices=STAGES,
                       help="restrict the records to this stage (repeatable)")
        p.add_argument("--single-depth", action="store_true", help="skip the N+1 stability run")

    report = sub.add_parser("report")
    report.add_argument("--merge", nargs="+", required=True, metavar="REPORT", help="report JSON files")
    report.add_argument("--out", help="directory for merged.json / merged.csv")
    return parser


def _overrides(args):
    stages = tuple(args.stage) if args.stage else COMMAND_STAGES[args.command]
    overrides = {
        "dim": args.dim,
        "depth": args.depth,
        "kernel": args.kernel,
        "seed": args.seed,
        "output_dir": args.out,
        "stages": stages,
    }
    if args.single_depth:
        overrides["two_depths"] = False
    return overrides


def _print_records(records):
    for r in records:
        mark = "✓" if r.status == "PASS" else "✗"
        n1 = "" if r.value_n1 is None else f"{r.value_n1:.4g}"
        ratio = "" if r.stability is None else f"{r.stability:.3f}"
        n = "" if r.value_n is None else f"{r.value_n:.4g}"
        print(f"  {mark}  {r.name:<40} {n:>12} {n1:>12} {ratio:>8}")


def run_command(args):
    config = load_config(args.config, _overrides(args))
    result = verify(config, config.output_dir)

    print("\n" + "-" * 50)
    print(f"  {args.command}  (d={config.dim}, N={config.depth}, kernel={config.kernel})")
    print("-" * 50)
    if result["reason"] in ("SUCCESS", "TOLERANCE_FAILED"):
        _print_records(VerificationReport.from_dict(result["details"]).records)
        print("-" * 50)
    print(f"  Valid  : {result['valid']}")
    print(f"  Reason : {result['reason']}")
    print(f"  Message: {result['message']}")
    if result["reason"] not in ("SUCCESS", "TOLERANCE_FAILED"):
        print(f"  Stage  : {result['details'].get('stage')}")
        print(f"  Error  : {result['details'].get('error')}")
    if PERF_LOGGING_ENABLED:
        print(f"  Time   : {result.get('inference_time_ms', 'N/A')} ms")
    print("-" * 50 + "\n")

    if result["reason"] == "SUCCESS":
        return EXIT_PASS
    if result["reason"] == "TOLERANCE_FAILED":
        return EXIT_TOLERANCE
    if result["reason"] == "CONFIG_ERROR":
        return EXIT_CONFIG
    return EXIT_INTERNAL


def merge_command(args):
    summary = merge_reports(args.merge)
    if args.out:
        summary.save(args.out, stem="merged")
    print("\n" + "-" * 50)
    print(f"  Merged {summary.provenance['runs']} report(s)")
    print("-" * 50)
    _print_records(summary.records)
    print("-" * 50 + "\n")
    return EXIT_PASS if summary.passed else EXIT_TOLERANCE


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return merge_command(args)
        return run_command(args)
    except ConfigError as exc:
        print(f"\n  Config error: {exc}\n", file=sys.stderr)
        return EXIT_CONFIG
    except HarnessError as exc:
        print(f"\n  {exc.code}: {exc}\n", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:
        logger.exception("unexpected error")
        print(f"\n  INTERNAL_ERROR: {exc}\n", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
