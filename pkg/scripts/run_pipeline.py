#!/usr/bin/env python3
"""gendata -> train -> sweep -> report for one config file.

Example:
    python3 scripts/run_pipeline.py scripts/configs/basic.cfg --out runs/basic --jobs 4
"""

import argparse
import sys
import time

from wiretap_dp import cli


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    args = p.parse_args()
    common = ["--config", args.config, "--out", args.out]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]
    steps = [["gendata"], ["train"], ["sweep", "--jobs", str(args.jobs)], ["report"]]
    for step in steps:
        t0 = time.perf_counter()
        code = cli.run(step[:1] + common + step[1:])
        print(f"{step[0]}: exit {code} in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
