"""Run every stability audit with the default desk settings and print one line each.

    python scripts/run_audits.py [--trials 1000] [--seed 0] [--threads 0]
"""
import argparse
import sys
import time
from dataclasses import replace

from condlab.lab.cli import AUDITS, run_audits
from condlab.lab.config import AuditConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=0)
    args = ap.parse_args(argv)
    acfg = replace(AuditConfig(), trials=args.trials, seed=args.seed)
    bad = 0
    for name in AUDITS + ("product_extension",):
        t0 = time.perf_counter()
        rep = run_audits(acfg, [name], threads=args.threads)[0]
        bad += rep.violations
        print(f"{rep.summary_line()} rejected={rep.rejected} degenerate={rep.degenerate} "
              f"({time.perf_counter() - t0:.1f}s)", flush=True)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
