"""Randomized certification of the conditioning stability inequalities.

Every audit draws trials from per-trial RNG streams, evaluates both sides of
an inequality on the grid with the same quadrature and sup conventions, and
collects the ratios in an ``AuditReport``.  In the discrete system these
inequalities are theorems, so any ratio above 1 + tol points at a bug.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .condition import (
    DEFAULT_SCHEDULE,
    MollifierSchedule,
    _query_slice,
    extension_limit,
    incontext_condition,
    kernel_condition,
    truncate_tm,
)
from .errors import DegenerateQuery, InvalidArgument
from .grid import Grid2D, GridDensity2D, GridField2D, delta_of, sup_distance
from .mixture import ParamRanges, gmm_joint_pdf, sample_params

DEFAULT_TOL = 1e-9
MAX_RESAMPLES = 1000


@dataclass(frozen=True)
class AuditRow:
    trial: int
    kind: str
    lhs: float
    rhs: float
    ratio: float

    def __post_init__(self):
        object.__setattr__(self, "trial", int(self.trial))
        for name in ("lhs", "rhs", "ratio"):
            object.__setattr__(self, name, float(getattr(self, name)))


def _ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs == 0 else math.inf


@dataclass
class AuditReport:
    name: str
    tol: float
    rows: list[AuditRow] = field(default_factory=list)
    rejected: int = 0
    degenerate: int = 0
    config: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return len({r.trial for r in self.rows})

    @property
    def violations(self) -> int:
        return sum(1 for r in self.rows if not r.ratio <= 1.0 + self.tol)

    @property
    def max_ratio(self) -> float:
        return max((r.ratio for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def summary_line(self) -> str:
        return (f"audit {self.name}: trials={self.trials} violations={self.violations} "
                f"max_ratio={self.max_ratio!r}")

    def sorted(self) -> "AuditReport":
        rows = sorted(self.rows, key=lambda r: r.trial)
        return AuditReport(self.name, self.tol, rows, self.rejected, self.degenerate, dict(self.config))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# name={self.name}\n# tol={self.tol!r}\n# rejected={self.rejected}\n")
        buf.write(f"# degenerate={self.degenerate}\n# config={json.dumps(self.config, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "kind", "lhs", "rhs", "ratio"])
        for r in self.sorted().rows:
            w.writerow([r.trial, r.kind, repr(r.lhs), repr(r.rhs), repr(r.ratio)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "AuditReport":
        meta, body = {}, []
        for line in text.splitlines():
            if line.startswith("# "):
                k, _, v = line[2:].partition("=")
                meta[k] = v
            elif line:
                body.append(line)
        try:
            rows = [AuditRow(int(t), k, float(l), float(r), float(q))
                    for t, k, l, r, q in csv.reader(body[1:])]
            return cls(meta["name"], float(meta["tol"]), rows, int(meta["rejected"]),
                       int(meta["degenerate"]), json.loads(meta["config"]))
        except (KeyError, ValueError) as exc:
            raise InvalidArgument(f"malformed audit report: {exc}") from exc

    def __eq__(self, other):
        if not isinstance(other, AuditReport):
            return NotImplemented
        a, b = self.sorted(), other.sorted()
        return (a.name, a.tol, a.rows, a.rejected, a.degenerate, a.config) == \
            (b.name, b.tol, b.rows, b.rejected, b.degenerate, b.config)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(trial,))))


# -- samplers -----------------------------------------------------------------

Sampler = Callable[[np.random.Generator], object]


def floored_mixture(grid: Grid2D, K: int = 3, ranges: ParamRanges = ParamRanges(),
                    floor: float = 0.1) -> Sampler:
    """(1 - floor) * random mixture + floor * uniform, renormalized on the grid.

    The uniform part keeps every marginal away from zero, so densities land
    in a nontrivial X_delta.
    """
    if not 0 <= floor <= 1:
        raise InvalidArgument("floor weight must lie in [0, 1]")
    area = grid.x_length * grid.y_length
    X, Y = grid.mesh()

    def draw(rng):
        p = sample_params(K, ranges, rng)
        v = (1.0 - floor) * gmm_joint_pdf(p, X, Y) + floor / area
        return GridDensity2D.normalized(grid, v)

    return draw


def perturbed_pairs(base: Sampler, log10_range: tuple[float, float] = (-4.0, 0.0)) -> Sampler:
    """p from ``base``; q blends p with a fresh draw at a log-uniform weight."""

    def draw(rng):
        p, other = base(rng), base(rng)
        t = 10.0 ** rng.uniform(*log10_range)
        q = GridDensity2D.normalized(p.grid, (1.0 - t) * p.values + t * other.values)
        return p, q

    return draw


def _pair_delta(p: GridField2D, q: GridField2D, cols=slice(None)) -> float:
    mp = (p.grid.wx @ p.values)[cols]
    mq = (q.grid.wx @ q.values)[cols]
    return float(min(mp.min(), mq.min()))


def _draw_valid(sampler, rng, accept):
    """Resample until ``accept`` returns None; count rejections."""
    for n in range(MAX_RESAMPLES):
        item = sampler(rng)
        reason = accept(item)
        if reason is None:
            return item, n
    raise InvalidArgument(f"sampler failed the precondition {MAX_RESAMPLES} times in a row: {reason}")


def _run(name, trials, seed, tol, config, body, threads=0):
    if trials < 0:
        raise InvalidArgument("trial count must be nonnegative")
    report = AuditReport(name, tol, config=config)

    def one(i):
        return body(i, trial_rng(seed, i))

    if threads:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(trials)))
    else:
        results = [one(i) for i in range(trials)]
    for rows, rejected, degenerate in results:
        report.rows.extend(rows)
        report.rejected += rejected
        report.degenerate += degenerate
    return report.sorted()


# -- audits ---------------------------------------------------------------

def kernel_lipschitz_bound(p: GridField2D, q: GridField2D, delta: float) -> float:
    """(1/d)(1 + |D| min(|p|, |q|)/d) |p - q| in the sup norm."""
    D = p.grid.x_length
    small = min(np.max(np.abs(p.values)), np.max(np.abs(q.values)))
    return (1.0 / delta) * (1.0 + D * small / delta) * sup_distance(p, q)


def audit_kernel_lipschitz(sampler: Sampler, trials: int, delta: float, tol: float = DEFAULT_TOL,
                           seed: int = 0, threads: int = 0) -> AuditReport:
    """Sup-distance of kernels vs the local Lipschitz bound.

    ``sampler(rng)`` returns a pair (p, q); pairs whose measured delta falls
    below ``delta`` are rejected and redrawn.  The bound uses the measured
    pairwise delta, the sharpest admissible constant.
    """
    def accept(pair):
        d = _pair_delta(*pair)
        return None if d >= delta else f"delta {d:.3e} < {delta:.3e}"

    def body(i, rng):
        (p, q), rej = _draw_valid(sampler, rng, accept)
        d = _pair_delta(p, q)
        lhs = sup_distance(kernel_condition(p, d), kernel_condition(q, d))
        rhs = kernel_lipschitz_bound(p, q, d)
        return [AuditRow(i, "sup", lhs, rhs, _ratio(lhs, rhs))], rej, 0

    return _run("kernel_lipschitz", trials, seed, tol, {"delta": delta}, body, threads)


def l1_lipschitz_sides(p: GridField2D, q: GridField2D, j0: int, j1: int) -> tuple[float, float, float]:
    """(lhs, rhs, delta) for the L1 bound restricted to y columns [j0, j1)."""
    g = p.grid
    cols = slice(j0, j1)
    d = _pair_delta(p, q, cols)
    mp = (g.wx @ p.values)[cols]
    mq = (g.wx @ q.values)[cols]
    diff = np.abs(p.values[:, cols] / mp - q.values[:, cols] / mq)
    sub = g.subgrid(slice(None), cols)
    lhs = float(sub.wy @ (g.wx @ diff))
    rhs = (2.0 / d) * float(g.wy @ (g.wx @ np.abs(p.values - q.values)))
    return lhs, rhs, d


def audit_l1_lipschitz(sampler: Sampler, trials: int, delta: float, y_bounds=(-3.0, 3.0),
                       tol: float = DEFAULT_TOL, seed: int = 0, threads: int = 0,
                       grid: Grid2D | None = None) -> AuditReport:
    """L1 distance of kernels on D x B vs (2/delta) times the full L1 distance."""
    def columns(g):
        j = np.flatnonzero((g.y_nodes >= y_bounds[0]) & (g.y_nodes <= y_bounds[1]))
        if j.size < 2:
            raise InvalidArgument(f"y range {y_bounds} covers fewer than 2 nodes")
        return int(j[0]), int(j[-1]) + 1

    def accept(pair):
        j0, j1 = columns(pair[0].grid)
        d = _pair_delta(*pair, slice(j0, j1))
        return None if d >= delta else f"delta {d:.3e} < {delta:.3e}"

    def body(i, rng):
        (p, q), rej = _draw_valid(sampler, rng, accept)
        lhs, rhs, _ = l1_lipschitz_sides(p, q, *columns(p.grid))
        return [AuditRow(i, "l1", lhs, rhs, _ratio(lhs, rhs))], rej, 0

    return _run("l1_lipschitz", trials, seed, tol, {"delta": delta, "y_bounds": list(y_bounds)},
                body, threads)


def holder_seminorm(f: GridField2D, alpha: float, max_pairs: int | None = None,
                    rng: np.random.Generator | None = None) -> float:
    """max |f(a) - f(b)| / |a - b|^alpha over node pairs (Euclidean distance).

    Exhaustive when the pair count is at most ``max_pairs`` (or no limit is
    given); otherwise a uniform random subset of ``max_pairs`` pairs, which
    only bounds the seminorm from below.
    """
    X, Y = f.grid.mesh()
    pts = np.column_stack([X.ravel(), Y.ravel()])
    v = f.values.ravel()
    n = v.size
    if max_pairs is None or n * (n - 1) // 2 <= max_pairs:
        best = 0.0
        for a in range(0, n, 256):
            s = slice(a, min(a + 256, n))
            dist = np.hypot(pts[s, None, 0] - pts[None, :, 0], pts[s, None, 1] - pts[None, :, 1])
            dv = np.abs(v[s, None] - v[None, :])
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(dist > 0, dv / dist ** alpha, 0.0)
            best = max(best, float(r.max()))
        return best
    rng = np.random.default_rng(0) if rng is None else rng
    a = rng.integers(0, n, max_pairs)
    b = rng.integers(0, n, max_pairs)
    keep = a != b
    a, b = a[keep], b[keep]
    dist = np.hypot(pts[a, 0] - pts[b, 0], pts[a, 1] - pts[b, 1])
    return float(np.max(np.abs(v[a] - v[b]) / dist ** alpha))


def holder_bound(R: float, delta: float, D: float, dist: float, alpha: float) -> float:
    return ((1.0 + 2.0 * R) / delta) * (1.0 + D * R / delta) * dist ** alpha


def audit_holder_incontext(sampler: Sampler, trials: int, alpha: float, R: float, delta: float,
                           tol: float = DEFAULT_TOL, seed: int = 0, max_pairs: int | None = None,
                           threads: int = 0, query_shift_only: bool = False) -> AuditReport:
    """In-context conditioning vs the Hoelder bound with product norm
    max(|p - q|_sup, |y - y'|).

    A pair is admitted when both densities have sup <= R, node-pair seminorm
    <= R and the y-rows at the two queries differ by at most R|y - y'|^alpha;
    otherwise it is rejected and redrawn.  ``query_shift_only`` sets q = p.
    """
    if not 0 < alpha <= 1:
        raise InvalidArgument("alpha must lie in (0, 1]")
    if not R > 0:
        raise InvalidArgument("R must be positive")

    def body(i, rng):
        rejected = 0
        for _ in range(MAX_RESAMPLES):
            p, q = sampler(rng)
            if query_shift_only:
                q = p
            g = p.grid
            y, y2 = rng.uniform(g.y_min, g.y_max, 2)
            reason = _holder_reject(p, q, y, y2, alpha, R, delta, max_pairs, rng)
            if reason is None:
                break
            rejected += 1
        else:
            raise InvalidArgument(f"Hoelder certificate failed {MAX_RESAMPLES} times: {reason}")
        d = _pair_delta(p, q)
        a = incontext_condition(p, y, d).values
        b = incontext_condition(q, y2, d).values
        lhs = float(np.max(np.abs(a - b)))
        dist = max(sup_distance(p, q), abs(y - y2))
        rhs = holder_bound(R, d, g.x_length, dist, alpha)
        return [AuditRow(i, "holder", lhs, rhs, _ratio(lhs, rhs))], rejected, 0

    cfg = {"alpha": alpha, "R": R, "delta": delta, "query_shift_only": query_shift_only}
    return _run("holder_incontext", trials, seed, tol, cfg, body, threads)


def _holder_reject(p, q, y, y2, alpha, R, delta, max_pairs, rng):
    if _pair_delta(p, q) < delta:
        return "delta below the declared level"
    for f in (p, q):
        if np.max(np.abs(f.values)) > R:
            return f"sup {np.max(np.abs(f.values)):.3e} > R"
        row_a, _ = _query_slice(f.grid, f.values, y)
        row_b, _ = _query_slice(f.grid, f.values, y2)
        if y != y2 and np.max(np.abs(row_a - row_b)) > R * abs(y - y2) ** alpha:
            return "query rows exceed the Hoelder modulus"
        s = holder_seminorm(f, alpha, max_pairs, rng)
        if s > R:
            return f"seminorm {s:.3e} > R"
    return None


def audit_truncation(sampler: Sampler, trials: int, M_values, tol: float = DEFAULT_TOL,
                     seed: int = 0, gap_tol: float = 1e-12) -> AuditReport:
    """T_M: sup bound, monotone L1 gap, and vanishing gap once M >= sup|f|.

    Rows per (trial, M): "sup" compares sup|T_M f| with M; "mono" compares
    the gap with the previous (smaller) M's gap; "tail" compares the gap with
    ``gap_tol`` when M >= sup|f|.
    """
    Ms = [float(m) for m in M_values]
    if not Ms or any(m <= 0 for m in Ms) or any(b <= a for a, b in zip(Ms, Ms[1:])):
        raise InvalidArgument("M values must be positive and increasing")

    def body(i, rng):
        f = sampler(rng)
        g = f.grid
        top = float(np.max(np.abs(f.values)))
        rows, prev = [], None
        for M in Ms:
            t = truncate_tm(f, M)
            s = float(np.max(np.abs(t.values)))
            rows.append(AuditRow(i, "sup", s, M, _ratio(s, M)))
            gap = float(g.wy @ (g.wx @ np.abs(f.values - t.values)))
            if prev is not None:
                rows.append(AuditRow(i, "mono", gap, prev, _ratio(gap, prev)))
            if M >= top:
                rows.append(AuditRow(i, "tail", gap, gap_tol, _ratio(gap, gap_tol)))
            prev = gap
        return rows, 0, 0

    return _run("truncation", trials, seed, tol, {"M": Ms, "gap_tol": gap_tol}, body)


def random_field(grid: Grid2D, scale_range=(0.1, 10.0)) -> Sampler:
    """Smooth signed fields: a random mixture minus another, rescaled."""
    X, Y = grid.mesh()

    def draw(rng):
        a = gmm_joint_pdf(sample_params(2, ParamRanges(), rng), X, Y)
        b = gmm_joint_pdf(sample_params(2, ParamRanges(), rng), X, Y)
        v = a - b
        v = v / max(np.max(np.abs(v)), 1e-300)
        return GridField2D(grid, v * rng.uniform(*scale_range))

    return draw


def product_density(grid: Grid2D, f, g) -> GridDensity2D:
    fx = np.asarray(f(grid.x_nodes), dtype=np.float64)
    gy = np.asarray(g(grid.y_nodes), dtype=np.float64)
    return GridDensity2D.normalized(grid, np.outer(fx, gy))


def extension_errors(grid: Grid2D, f, g, y: float, schedule: MollifierSchedule = DEFAULT_SCHEDULE,
                     method: str = "direct") -> list[float]:
    """Sup-error of every mollified iterate against f normalized on D."""
    rho = product_density(grid, f, g)
    fx = np.asarray(f(grid.x_nodes), dtype=np.float64)
    target = fx / (grid.wx @ fx)
    _, diag = extension_limit(rho, y, schedule, method)
    return [float(np.max(np.abs(it - target))) for it in diag.iterates]


def audit_product_extension(cases, schedule: MollifierSchedule = DEFAULT_SCHEDULE,
                            bound: float = 5e-3, tol: float = DEFAULT_TOL,
                            method: str = "direct") -> AuditReport:
    """Extension limit on product densities f(x) g(y) vs normalized f.

    ``cases`` is a sequence of (grid, f, g, y).  Rows: "final" compares the
    last iterate's error with ``bound``; "step" compares each of the last
    three errors with its predecessor (decrease along the schedule).
    Degenerate queries are counted, not failed.
    """
    report = AuditReport("product_extension", tol, config={
        "epsilons": list(schedule.epsilons), "bound": bound, "method": method})
    for i, (grid, f, g, y) in enumerate(cases):
        try:
            errs = extension_errors(grid, f, g, y, schedule, method)
        except DegenerateQuery:
            report.degenerate += 1
            continue
        report.rows.append(AuditRow(i, "final", errs[-1], bound, _ratio(errs[-1], bound)))
        for a, b in zip(errs[-3:], errs[-2:]):
            report.rows.append(AuditRow(i, "step", b, a, _ratio(b, a)))
    return report
