"""Train the desk-profile operator model and compare it with plug-in KDE conditioning.

    python scripts/run_desk.py --out runs/desk [--config my.ini] [--threads 4]
"""
import argparse
import os
import sys
import time

from condlab.lab.config import load_config
from condlab.lab.experiments import amortization_check, desk_datasets, train_run
from condlab.lab.formats import model_checkpoint, write_checkpoint


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--profile", default="desk")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--threads", type=int, default=0)
    args = ap.parse_args(argv)
    cfg = load_config(args.config, args.profile)
    os.makedirs(args.out, exist_ok=True)

    t0 = time.perf_counter()
    data = desk_datasets(cfg, args.threads)
    print(f"data: {time.perf_counter() - t0:.1f}s", flush=True)
    run = train_run(cfg, data, log=lambda s: print(s, flush=True))
    write_checkpoint(os.path.join(args.out, "model.cnop"), model_checkpoint(run.model))
    with open(os.path.join(args.out, "history.csv"), "w") as fh:
        fh.write(run.history.to_csv())
    print(f"trained {run.epochs} epochs in {run.seconds:.0f}s")
    print(f"test median {run.test.median:.4f}  mean {run.test.mean:.4f}  max {run.test.max:.4f}")

    am = amortization_check(run.model, cfg, args.threads)
    print(f"kde inputs: plug-in median {am.plugin_median:.4f}  model median {am.model_median:.4f}"
          f"  (floored records {am.flagged})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
