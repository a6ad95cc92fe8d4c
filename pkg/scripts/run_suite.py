"""Run the loop-invariant suite and print the per-program table.

    python scripts/run_suite.py [--programs fig8,gcd] [--runs 2000] [--seed 0] [--workdir DIR]
"""

from __future__ import annotations

import argparse
import sys
import time

from neurosym.harness import TaskConfig, format_table, loop_suite, run_suite


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--programs", help="comma-separated subset")
    ap.add_argument("--runs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workdir")
    args = ap.parse_args()
    programs = loop_suite()
    if args.programs:
        wanted = set(args.programs.split(","))
        programs = [p for p in programs if p.name in wanted]
    started = time.perf_counter()
    reports = run_suite(programs, TaskConfig(runs=args.runs, seed=args.seed, workdir=args.workdir),
                        progress=lambda r: print(f"{r.program}: {r.verdict}", file=sys.stderr, flush=True))
    sys.stdout.write(format_table(reports))
    sat = sum(r.verdict == "SAT" and r.t_ns is not None and r.t_ns <= 3 for r in reports)
    valid = sum(r.validated for r in reports)
    good = sum(r.accuracy >= 0.8 for r in reports)
    print(f"\nSAT within 3: {sat}/{len(reports)}  validated: {valid}/{len(reports)}  "
          f"accuracy>=0.8: {good}/{len(reports)}  elapsed: {time.perf_counter() - started:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
