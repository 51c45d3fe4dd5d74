"""Plug-in KDE conditioning error on a fixed correlated Gaussian, by sample count.

    python scripts/kde_consistency.py [--n 64] [--instances 50] [--xi 0.5]
"""
import argparse
import time

from condlab.grid import make_grid
from condlab.lab.experiments import kde_plugin_medians
from condlab.mixture import MixtureParams


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64, help="grid nodes per axis")
    ap.add_argument("--instances", type=int, default=50)
    ap.add_argument("--xi", type=float, default=0.5)
    ap.add_argument("--sizes", default="500,2000,20000")
    args = ap.parse_args(argv)
    g = make_grid(-6, 6, args.n, -6, 6, args.n)
    sizes = tuple(int(s) for s in args.sizes.split(","))
    t0 = time.perf_counter()
    med = kde_plugin_medians(MixtureParams.single(xi=args.xi), g, sizes, args.instances)
    print("n_samples,median_rel_l1")
    for n in sizes:
        print(f"{n},{med[n]:.6f}")
    print(f"# {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
