"""``condlab`` command line.

Exit codes: 0 ok, 1 usage, 2 validation/domain (including rejected audit
trials), 3 I/O, 4 audit violations.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import replace

import numpy as np

from .. import audit as au
from ..condition import DEFAULT_SCHEDULE
from ..errors import CondlabError, FormatError, GridMismatch
from ..grid import make_grid
from ..nop.model import NOModel
from ..nop.train import ArrayDataset, evaluate, predict_dataset, train
from .config import ConfigError, ExperimentConfig, family_tag, load_config
from .formats import (
    Checkpoint,
    checkpoint_from_bytes,
    checkpoint_grid,
    dataset_from_bytes,
    load_predictor,
    model_checkpoint,
    read_checkpoint,
    read_dataset,
    write_bytes,
    write_checkpoint,
    write_dataset,
)
from .experiments import kernel_errors, plugin_errors
from .generate import generate

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_IO, EXIT_VIOLATION = 0, 1, 2, 3, 4
AUDITS = ("kernel_lipschitz", "l1_lipschitz", "holder_incontext", "truncation")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out(msg=""):
    print(msg, flush=True)


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr, flush=True)


def _path(cfg: ExperimentConfig, name: str) -> str:
    return name if os.path.isabs(name) else os.path.join(cfg.data.root(), name)


def _split_paths(cfg):
    return {s: _path(cfg, f"{s}.cndd") for s in ("train", "val", "test")}


# -- subcommands ----------------------------------------------------------------

def cmd_gen_data(cfg, args):
    d = cfg.data
    seeds = {"train": d.seed_train, "val": d.seed_val, "test": d.seed_test}
    if args.seed is not None:
        seeds = {k: args.seed + i for i, k in enumerate(seeds)}
    counts = {"train": d.n_train, "val": d.n_val, "test": d.n_test}
    os.makedirs(d.root(), exist_ok=True)
    tag = family_tag(replace(d, family="gmm"))
    for split, path in _split_paths(cfg).items():
        ds = generate(tag, d.K, d.ranges(), d.grid(), seeds[split], counts[split], threads=args.threads)
        write_dataset(path, ds)
        _out(f"wrote {path}: {ds.header.describe()}")
    return EXIT_OK


def cmd_gen_kde(cfg, args):
    d = cfg.data
    seed = d.kde_seed if args.seed is None else args.seed
    os.makedirs(d.root(), exist_ok=True)
    path = args.out or _path(cfg, "kde.cndd")
    ds = generate("kde", d.K, d.ranges(), d.grid(), seed, d.kde_records, d.kde_samples, args.threads)
    write_dataset(path, ds)
    _out(f"wrote {path}: {ds.header.describe()}")
    return EXIT_OK


def cmd_train(cfg, args):
    paths = _split_paths(cfg)
    tr = read_dataset(paths["train"], args.strict)
    va = read_dataset(paths["val"], args.strict) if os.path.exists(paths["val"]) else None
    tcfg = cfg.train
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    tcfg = replace(tcfg, threads=args.threads)
    model = NOModel.from_config(cfg.model, tr.header.grid, seed=tcfg.seed)
    _out(f"model: {model.n_params()} parameters on a {tr.header.grid.nx}x{tr.header.grid.ny} grid")
    model, hist = train(tcfg, model, tr.arrays(), va.arrays() if va is not None else None, log=_out)
    ck_path = _path(cfg, cfg.eval.checkpoint)
    write_checkpoint(ck_path, model_checkpoint(model, {"train_seed": tcfg.seed}))
    hist_path = _path(cfg, cfg.eval.history)
    write_bytes(hist_path, hist.to_csv().encode("ascii"))
    _out(f"wrote {ck_path} and {hist_path}")
    return EXIT_OK


def _refuse_mismatch(ck: Checkpoint, ds, ck_path, ds_path):
    grid = checkpoint_grid(ck)
    if grid != ds.header.grid:
        print(f"checkpoint {ck_path}: grid {grid.key()} version {ck.meta.get('kind')}", file=sys.stderr)
        print(f"dataset {ds_path}: {ds.header.describe()}", file=sys.stderr)
        raise GridMismatch("checkpoint and dataset grids differ; refusing to evaluate")


def _predict(predictor, data: ArrayDataset, threads: int) -> np.ndarray:
    if predictor == "oracle":
        return data.targets.copy()
    return predict_dataset(predictor, data, threads=threads)


def _summary_rows(errs) -> list[tuple[str, float]]:
    return [("median", float(np.median(errs))), ("max", float(np.max(errs))), ("mean", float(np.mean(errs)))]


def cmd_eval(cfg, args):
    ck_path = args.checkpoint or _path(cfg, cfg.eval.checkpoint)
    ds_path = args.dataset or _split_paths(cfg)["test"]
    ck = read_checkpoint(ck_path)
    ds = read_dataset(ds_path, args.strict)
    _refuse_mismatch(ck, ds, ck_path, ds_path)
    predictor = load_predictor(ck)
    errs = kernel_errors(ds.header.grid, _predict(predictor, ds.arrays(), args.threads), ds.kernels)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record", "rel_l1"])
    for i, e in enumerate(errs):
        w.writerow([i, repr(float(e))])
    for name, v in _summary_rows(errs):
        w.writerow([name, repr(v)])
    out = args.out or _path(cfg, cfg.eval.report)
    write_bytes(out, buf.getvalue().encode("ascii"))
    _out(f"{'dataset':<28}{'records':>8}{'median':>12}{'max':>12}{'mean':>12}")
    s = dict(_summary_rows(errs))
    _out(f"{os.path.basename(ds_path):<28}{len(errs):>8}{s['median']:>12.4f}{s['max']:>12.4f}{s['mean']:>12.4f}")
    _out(f"wrote {out}")
    return EXIT_OK


def cmd_baseline_kde(cfg, args):
    ds_path = args.dataset or _path(cfg, "kde.cndd")
    ds = read_dataset(ds_path, args.strict)
    plug, flagged = plugin_errors(ds, cfg.eval.delta_floor)
    ck_path = args.checkpoint or _path(cfg, cfg.eval.checkpoint)
    model_err = None
    if os.path.exists(ck_path):
        ck = read_checkpoint(ck_path)
        _refuse_mismatch(ck, ds, ck_path, ds_path)
        model_err = kernel_errors(ds.header.grid, _predict(load_predictor(ck), ds.arrays(), args.threads),
                            ds.kernels)
    else:
        _warn(f"no checkpoint at {ck_path}; reporting the plug-in baseline only")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record", "plugin_err", "model_err"])
    for i in range(len(ds)):
        w.writerow([i, repr(float(plug[i])), "" if model_err is None else repr(float(model_err[i]))])
    out = args.out or _path(cfg, cfg.eval.baseline_report)
    write_bytes(out, buf.getvalue().encode("ascii"))
    _out(f"plug-in: median {np.median(plug):.4f} max {np.max(plug):.4f} "
         f"({flagged} records with floored slices)")
    if model_err is not None:
        _out(f"model:   median {np.median(model_err):.4f} max {np.max(model_err):.4f}")
    _out(f"wrote {out}")
    return EXIT_OK


def run_audits(acfg, which, seed=None, threads=0) -> list[au.AuditReport]:
    seed = acfg.seed if seed is None else seed
    grid = make_grid(-6, 6, acfg.grid_n, -6, 6, acfg.grid_n)
    small = make_grid(-6, 6, acfg.holder_n, -6, 6, acfg.holder_n)
    reports = []
    for name in which:
        if name == "kernel_lipschitz":
            s = au.perturbed_pairs(au.floored_mixture(grid, acfg.K, floor=acfg.floor))
            reports.append(au.audit_kernel_lipschitz(s, acfg.trials, acfg.delta, acfg.tol, seed, threads))
        elif name == "l1_lipschitz":
            s = au.perturbed_pairs(au.floored_mixture(grid, acfg.K, floor=acfg.floor))
            reports.append(au.audit_l1_lipschitz(s, acfg.trials, acfg.delta, acfg.y_bounds, acfg.tol,
                                                 seed, threads))
        elif name == "holder_incontext":
            s = au.perturbed_pairs(au.floored_mixture(small, acfg.K, floor=acfg.floor))
            reports.append(au.audit_holder_incontext(s, acfg.trials, acfg.alpha, acfg.R, acfg.delta,
                                                     acfg.tol, seed, threads=threads))
        elif name == "truncation":
            reports.append(au.audit_truncation(au.random_field(grid, (0.1, 5.0)), acfg.trials,
                                               acfg.M_values, acfg.tol, seed))
        elif name == "product_extension":
            reports.append(au.audit_product_extension(default_extension_cases(grid), DEFAULT_SCHEDULE,
                                                      tol=acfg.tol))
        else:
            raise UsageError(f"unknown audit {name!r}")
    return reports


def default_extension_cases(grid):
    """Smooth f against marginals with and without zeros."""
    def bump2(x):
        return np.exp(-0.5 * (x + 1.5) ** 2) + 0.5 * np.exp(-0.5 * ((x - 2.0) / 0.7) ** 2)

    def gauss(x):
        return np.exp(-0.5 * x ** 2)

    def flat(y):
        return np.ones_like(y)

    def ramp2(y):
        return np.maximum(0.0, y) ** 2

    return [(grid, gauss, flat, 0.5), (grid, gauss, ramp2, -2.0), (grid, bump2, gauss, 1.0),
            (grid, bump2, ramp2, -3.0)]


def cmd_audit(cfg, args):
    which = AUDITS if args.which == "all" else tuple(args.which.split(","))
    reports = run_audits(cfg.audit, which, args.seed, args.threads)
    os.makedirs(cfg.data.root(), exist_ok=True)
    violations = rejected = 0
    for rep in reports:
        path = _path(cfg, f"audit_{rep.name}.csv")
        write_bytes(path, rep.to_csv().encode("utf-8"))
        _out(rep.summary_line())
        if rep.rejected:
            _out(f"  {rep.rejected} sampled trials rejected by the precondition")
        violations += rep.violations
        rejected += rep.rejected
    if violations:
        return EXIT_VIOLATION
    return EXIT_DOMAIN if rejected else EXIT_OK


def cmd_dump(cfg, args):
    ds = read_dataset(args.dataset, args.strict)
    if not 0 <= args.index < len(ds):
        raise IndexError(f"record {args.index} out of range for {len(ds)} records")
    g = ds.header.grid
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if args.field == "params":
        w.writerow(["w", "mu_x", "mu_y", "sigma_x", "sigma_y", "xi"])
        for row in ds.params[args.index]:
            w.writerow([repr(float(v)) for v in row])
    else:
        vals = (ds.joints if args.field == "joint" else ds.kernels)[args.index]
        w.writerow(["x", "y", args.field])
        for i, x in enumerate(g.x_nodes):
            for j, y in enumerate(g.y_nodes):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(vals[i, j]))])
    if args.out:
        write_bytes(args.out, buf.getvalue().encode("ascii"))
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_inspect(cfg, args):
    with open(args.path, "rb") as fh:
        raw = fh.read()
    magic = raw[:4]
    if magic == b"CNDD":
        ds = dataset_from_bytes(raw, args.strict)
        _out(f"dataset {args.path}: {ds.header.describe()}")
    elif magic == b"CNOP":
        ck = checkpoint_from_bytes(raw)
        _out(f"checkpoint {args.path}: kind={ck.meta.get('kind')} params={ck.flat.size}")
        if ck.meta.get("kind") == "no":
            m = load_predictor(ck)
            for spec in m.layers:
                _out(f"  {spec}")
    elif raw.startswith(b"# name="):
        rep = au.AuditReport.from_csv(raw.decode("utf-8"))
        _out(rep.summary_line())
    else:
        raise FormatError(f"{args.path}: unrecognized file type (magic {magic!r})")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data, "gen-kde": cmd_gen_kde, "train": cmd_train, "eval": cmd_eval,
    "audit": cmd_audit, "baseline-kde": cmd_baseline_kde, "dump": cmd_dump, "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--profile", choices=("desk", "paper"))
    common.add_argument("--seed", type=int)
    common.add_argument("--strict", action="store_true", help="validate every record on load")
    common.add_argument("--threads", type=int, default=0, help="0 = serial reference mode")
    p = _Parser(prog="condlab", description="Conditioning-operator experiments.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "gen-kde":
            sp.add_argument("--out")
        if name in ("eval", "baseline-kde"):
            sp.add_argument("--checkpoint")
            sp.add_argument("--dataset")
            sp.add_argument("--out")
        if name == "audit":
            sp.add_argument("--which", default="all",
                            help="comma list of " + ", ".join(AUDITS + ("product_extension",)))
        if name == "dump":
            sp.add_argument("dataset")
            sp.add_argument("--index", type=int, default=0)
            sp.add_argument("--field", choices=("joint", "kernel", "params"), default="joint")
            sp.add_argument("--out")
        if name == "inspect":
            sp.add_argument("path")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("condlab: a subcommand is required")
        if args.threads < 0:
            raise UsageError("--threads must be >= 0")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, args.profile)
        if cfg.profile == "paper":
            _warn("paper profile: full-scale data and model, expect a very long run")
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CondlabError, ValueError, IndexError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
