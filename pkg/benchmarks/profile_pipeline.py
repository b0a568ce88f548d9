# ─────────────────────────────────────────────────────────────
# benchmarks/profile_pipeline.py
# Stage-Time Profiler for the Local Tb Verification Pipeline
#
# Runs verify() N times on a config and reports per-stage and
# total latency statistics (min, p50, p95, max) for each depth.
#
# Usage:
#   python benchmarks/profile_pipeline.py
#   python benchmarks/profile_pipeline.py --runs 5 --depth 6
#   python benchmarks/profile_pipeline.py --config default.json
# ─────────────────────────────────────────────────────────────

import argparse
import os
import sys
import time

import numpy as np

# ── Ensure project root is on sys.path ────────────────────────
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, PROJECT_ROOT)

from src.run_config import STAGES, load_config
from verifier import verify

# Budget for one full two-depth run at the default depth.
TARGET_MS = 10 * 60 * 1000


def profile_verify(config):
    """Run verify() once and return its stage timings plus the total."""
    t0 = time.perf_counter()
    result = verify(config)
    total = (time.perf_counter() - t0) * 1000
    timings = {}
    for depth, stages in result.get("stage_times_ms", {}).items():
        for stage, ms in stages.items():
            timings[(depth, stage)] = ms
    return timings, total, result["reason"]


def run_benchmark(config, runs=3, label="BASELINE"):
    """Run the pipeline `runs` times after one warm-up and print a report."""
    print(f"\n{'=' * 70}")
    print(f"  PIPELINE BENCHMARK -- {label}")
    print(f"  d={config.dim}  N={config.depth}  kernel={config.kernel}  runs={runs}")
    print(f"{'=' * 70}\n")

    profile_verify(config)  # warm-up, excluded

    samples, totals, reason = {}, [], None
    for _ in range(runs):
        timings, total, reason = profile_verify(config)
        totals.append(total)
        for key, ms in timings.items():
            samples.setdefault(key, []).append(ms)

    print(f"  {'Depth':<6} {'Stage':<13} {'Min':>10} {'p50':>10} {'p95':>10} {'Max':>10}")
    print(f"  {'-' * 64}")
    for depth in sorted({d for d, _ in samples}, key=int):
        for stage in STAGES:
            data = samples.get((depth, stage))
            if not data:
                continue
            print(f"  {depth:<6} {stage:<13} {min(data):>8.1f}ms {np.percentile(data, 50):>8.1f}ms "
                  f"{np.percentile(data, 95):>8.1f}ms {max(data):>8.1f}ms")

    p50, p95 = np.percentile(totals, 50), np.percentile(totals, 95)
    print(f"\n{'=' * 70}")
    print(f"  SUMMARY ({label})   pipeline result: {reason}")
    print(f"  {'-' * 60}")
    print(f"  Overall p50:  {p50:>10.1f} ms")
    print(f"  Overall p95:  {p95:>10.1f} ms")
    print(f"  Within {TARGET_MS // 60000} min: {'YES' if p95 < TARGET_MS else 'NO'}")
    print(f"{'=' * 70}\n")
    return totals


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Profile the verification pipeline")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--depth", type=int)
    parser.add_argument("--dim", type=int, choices=[1, 2])
    parser.add_argument("--runs", type=int, default=3, help="Timed runs (default: 3)")
    parser.add_argument("--label", type=str, default="BASELINE", help="Label for the report")
    args = parser.parse_args()

    cfg = load_config(args.config, {"depth": args.depth, "dim": args.dim})
    run_benchmark(cfg, runs=args.runs, label=args.label)
