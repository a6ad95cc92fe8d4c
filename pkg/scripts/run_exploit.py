"""Learn the request parser's write index and synthesize an overflowing request.

    python scripts/run_exploit.py [--runs 2000] [--seed 0] [--vuln "ptr > 99"]
"""

from __future__ import annotations

import argparse
import sys

from neurosym.harness import TaskConfig, run_exploit_task


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--vuln", default="ptr > 99", help="condition at the write site")
    ap.add_argument("--workdir")
    args = ap.parse_args()
    r = run_exploit_task(vuln=args.vuln, cfg=TaskConfig(runs=args.runs, seed=args.seed, workdir=args.workdir))
    sys.stdout.write(r.to_kv())
    return 0 if r.validated else 1


if __name__ == "__main__":
    sys.exit(main())
