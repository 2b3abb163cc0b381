"""Test functions, data generation, coverage studies and rate diagnostics."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kvfile, rng
from .bands import Box, bands_batch, region_mask
from .calibration import Calibration, cached_calibration, default_threads
from .engine import tstar_batch
from .grid import BandwidthPolicy, Field, GridDesign, make_grid
from .kernels import KernelPair, ShapeClass, kernel_pair

ISO, CVX = ShapeClass.ISOTONIC, ShapeClass.CONVEX
CHUNK = 25


@dataclass(frozen=True, eq=False)
class TestFunction:
    id: str
    formula: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    classes: frozenset
    variables: tuple[int, ...]          # 0-based axes the function depends on
    gradient: Callable | None = field(default=None, repr=False)
    hessian: Callable | None = field(default=None, repr=False)
    breakpoints: tuple | None = None     # per axis: coordinates of jumps or kinks

    __test__ = False  # not a pytest class

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] <= max(self.variables, default=-1):
            raise ValueError(f"{self.id} needs at least {max(self.variables) + 1} dimensions")
        return np.asarray(self.func(X), dtype=float) * np.ones(X.shape[:-1])

    @property
    def intrinsic_dim(self) -> int:
        return len(self.variables)

    def has_class(self, shape_class) -> bool:
        return ShapeClass(shape_class) in self.classes

    def on_grid(self, grid: GridDesign) -> Field:
        return Field(grid, self(grid.mesh()))


def _affine(c: float):
    return dict(func=lambda X: c * (X[..., 0] + X[..., 1]),
                gradient=lambda x: np.array([c, c] + [0.0] * (len(x) - 2)),
                hessian=lambda x: np.zeros((len(x), len(x))))


def _bowl(c: float):
    def hess(x):
        H = np.zeros((len(x), len(x)))
        H[0, 0] = H[1, 1] = 2 * c
        return H
    return dict(func=lambda X: c * ((X[..., 0] - 0.5) ** 2 + (X[..., 1] - 0.5) ** 2),
                gradient=lambda x: np.array([2 * c * (x[0] - 0.5), 2 * c * (x[1] - 0.5)]
                                            + [0.0] * (len(x) - 2)),
                hessian=hess)


def builtin_functions() -> dict[str, TestFunction]:
    both = frozenset({ISO, CVX})
    fns = [
        TestFunction("zero", "0", lambda X: np.zeros(X.shape[:-1]), both, (),
                     gradient=lambda x: np.zeros(len(x)), hessian=lambda x: np.zeros((len(x),) * 2)),
        TestFunction("sum", "x1+x2", classes=both, variables=(0, 1), **_affine(1.0)),
        TestFunction("sum20", "20(x1+x2)", classes=both, variables=(0, 1),
                     **_affine(20.0)),
        TestFunction("indicator", "1{x1>=0.5}", lambda X: (X[..., 0] >= 0.5).astype(float),
                     frozenset({ISO}), (0,), breakpoints=((0.5,),)),
        TestFunction("sum10", "10(x1+x2)", classes=both, variables=(0, 1),
                     **_affine(10.0)),
        TestFunction("quad", "(x1-0.5)^2+(x2-0.5)^2", classes=frozenset({CVX}), variables=(0, 1),
                     **_bowl(1.0)),
        TestFunction("absx1", "|x1-0.5|", lambda X: np.abs(X[..., 0] - 0.5), frozenset({CVX}),
                     (0,), breakpoints=((0.5,),)),
        TestFunction("quad40", "40((x1-0.5)^2+(x2-0.5)^2)", classes=frozenset({CVX}),
                     variables=(0, 1), **_bowl(40.0)),
    ]
    return {f.id: f for f in fns}


# (function id, class, grid size, reference coverage)
REFERENCE_ROWS = [
    ("zero", ISO, 50, 0.95), ("sum", ISO, 50, 0.97), ("sum20", ISO, 50, 1.00),
    ("indicator", ISO, 50, 0.97), ("zero", CVX, 50, 0.95), ("sum", CVX, 50, 0.96),
    ("sum10", CVX, 50, 0.95), ("quad", CVX, 40, 0.98),
]


def verify_class(fn: TestFunction, grid: GridDesign, shape_class, tol: float = 1e-12) -> bool:
    """Isotonic: nondecreasing along every axis.  Convex: second differences
    along every grid line are non-negative."""
    v = fn.on_grid(grid).values
    if ShapeClass(shape_class) is ISO:
        return all(np.all(np.diff(v, axis=a) >= -tol) for a in range(grid.d))
    return all(np.all(np.diff(v, n=2, axis=a) >= -tol) for a in range(grid.d))


def generate_data(fn: Callable, grid: GridDesign, sigma: float = 1.0, seed: int = 0,
                  index: int = 0, tag: int = rng.DATA) -> Field:
    """``Y = f(x) + sigma * eps`` with ``eps`` from stream ``(seed, tag, index)``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    f = np.asarray(fn(grid.mesh()), dtype=float) * np.ones(grid.shape)
    if sigma == 0:
        return Field(grid, f)
    return Field(grid, f + sigma * rng.normal_field(seed, tag, index, grid.shape))


# -- coverage -----------------------------------------------------------------

@dataclass(frozen=True)
class CoverageReport:
    function: str
    shape_class: str
    m: int
    alpha: float
    replicates: int
    covered: int
    mean_width: float
    median_width: float
    kappa: float

    @property
    def coverage(self) -> float:
        return self.covered / self.replicates

    @property
    def se(self) -> float:
        p = self.coverage
        return math.sqrt(max(p * (1 - p), 0.0) / self.replicates)

    def to_fields(self) -> dict[str, str]:
        return {"function": self.function, "class": self.shape_class, "m": str(self.m),
                "alpha": repr(self.alpha), "replicates": str(self.replicates),
                "covered": str(self.covered), "coverage": f"{self.coverage:.4f}",
                "se": f"{self.se:.4f}", "mean_width": repr(self.mean_width),
                "median_width": repr(self.median_width), "kappa": repr(self.kappa)}

    @classmethod
    def from_fields(cls, f: dict[str, str]) -> "CoverageReport":
        return cls(f["function"], f["class"], int(f["m"]), float(f["alpha"]),
                   int(f["replicates"]), int(f["covered"]), float(f["mean_width"]),
                   float(f["median_width"]), float(f["kappa"]))


def format_report_line(rep: CoverageReport) -> str:
    return " ".join(f"{k}={v}" for k, v in rep.to_fields().items())


def parse_report_line(line: str) -> CoverageReport:
    return CoverageReport.from_fields(dict(tok.split("=", 1) for tok in line.split()))


def write_reports(path, reports: Sequence[CoverageReport]) -> None:
    fields = {f"study{i}": format_report_line(r) for i, r in enumerate(reports)}
    kvfile.write(path, "shapeband-coverage", 1, fields)


def read_reports(path) -> list[CoverageReport]:
    f = kvfile.read(path, "shapeband-coverage", 1)
    keys = sorted(f, key=lambda k: int(k[5:]))
    return [parse_report_line(f[k]) for k in keys]


@dataclass
class ReplicateOutcome:
    covered: np.ndarray
    event: np.ndarray          # T(psi_lower; eps) <= kappa and T(-psi_upper; eps) <= kappa
    median_width: np.ndarray
    mean_width: np.ndarray


def run_replicates(fn: Callable, pair: KernelPair, grid: GridDesign, kappa: float,
                   indices: range, seed: int, policy=BandwidthPolicy.FULL, sigma: float = 1.0,
                   with_event: bool = False, region=None) -> ReplicateOutcome:
    f = np.asarray(fn(grid.mesh()), dtype=float) * np.ones(grid.shape)
    eps = np.stack([rng.normal_field(seed, rng.COVERAGE, i, grid.shape) for i in indices])
    Y = f + sigma * eps
    lo, up, alo, _ = bands_batch(grid, pair, kappa, Y, policy, sigma)
    vac = alo < 0
    covered = np.all(vac | ((lo <= f) & (f <= up)), axis=tuple(range(1, grid.d + 1)))
    mask = region_mask(grid, region)
    width = up - lo
    med = np.array([np.median(w[mask & ~v]) for w, v in zip(width, vac)])
    mean = np.array([np.mean(w[mask & ~v]) for w, v in zip(width, vac)])
    event = np.zeros(len(indices), dtype=bool)
    if with_event:
        tl, tu = tstar_batch(grid, pair.lower, pair.upper, eps, policy)
        event = (tl <= kappa) & (tu <= kappa)
    return ReplicateOutcome(covered, event, med, mean)


def _parallel(work, ranges, threads):
    threads = threads or default_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(work, ranges))
    return [work(r) for r in ranges]


def coverage_study(fn: TestFunction, shape_class, grid: GridDesign, alpha: float,
                   replicates: int, cal: Calibration, seed: int, policy=None,
                   sigma: float = 1.0, threads: int | None = None,
                   min_replicates: int = 100) -> CoverageReport:
    """Fresh noise per replicate, bands from ``cal``, coverage of ``f`` on the grid."""
    if replicates < min_replicates:
        raise ValueError(f"replicates must be at least {min_replicates}")
    pair = kernel_pair(shape_class, grid.d)
    policy = BandwidthPolicy(policy or cal.policy)
    cal.check_context(m=grid.m, d=grid.d, kernel_pair=pair.id, policy=policy, alpha=alpha)
    ranges = [range(a, min(a + CHUNK, replicates)) for a in range(0, replicates, CHUNK)]
    parts = _parallel(lambda r: run_replicates(fn, pair, grid, cal.kappa, r, seed, policy, sigma),
                      ranges, threads)
    covered = np.concatenate([p.covered for p in parts])
    med = np.concatenate([p.median_width for p in parts])
    mean = np.concatenate([p.mean_width for p in parts])
    return CoverageReport(getattr(fn, "id", "custom"), ShapeClass(shape_class).value, grid.m,
                          alpha, replicates, int(covered.sum()), float(mean.mean()),
                          float(np.median(med)), cal.kappa)


def coverage_table(reports: Sequence[CoverageReport], reference: dict | None = None) -> str:
    """Aligned text table: function, class, m, coverage, se (and reference value)."""
    fns = builtin_functions()
    head = f"{'f(x1,x2)':<28}{'class':<10}{'m':>4}{'reps':>6}{'coverage':>10}{'se':>8}"
    if reference:
        head += f"{'ref':>8}"
    lines = [head, "-" * len(head)]
    for r in reports:
        label = fns[r.function].formula if r.function in fns else r.function
        line = (f"{label:<28}{r.shape_class:<10}{r.m:>4}{r.replicates:>6}"
                f"{r.coverage:>10.3f}{r.se:>8.3f}")
        if reference:
            ref = reference.get((r.function, r.shape_class))
            line += f"{ref:>8.2f}" if ref is not None else f"{'':>8}"
        lines.append(line)
    return "\n".join(lines)


def reference_coverage() -> dict:
    return {(fid, sc.value): cov for fid, sc, _, cov in REFERENCE_ROWS}


# -- rates --------------------------------------------------------------------

@dataclass
class RateTable:
    function: str
    shape_class: str
    region: str
    ms: list[int]
    ns: list[int]
    widths: list[float]
    slope: float
    intercept: float

    def format(self) -> str:
        lines = [f"function={self.function} class={self.shape_class} region={self.region}",
                 f"{'m':>5}{'n':>8}{'median_width':>16}"]
        for m, n, w in zip(self.ms, self.ns, self.widths):
            lines.append(f"{m:>5}{n:>8}{w:>16.6f}")
        lines.append(f"slope(log width ~ log n) = {self.slope:.4f}")
        return "\n".join(lines)


def fit_loglog(ns: Sequence[float], widths: Sequence[float]) -> tuple[float, float]:
    slope, intercept = np.polyfit(np.log(ns), np.log(widths), 1)
    return float(slope), float(intercept)


def rate_diagnostic(fn: TestFunction, shape_class, grids: Sequence[int], alpha: float,
                    region, seed: int, d: int = 2, replicates: int = 10, nsim: int | None = None,
                    policy=None, cache_dir=None, threads: int | None = None) -> RateTable:
    """Median band width over ``region`` for each grid size and the log-log slope.

    Each grid size averages the per-replicate medians over ``replicates`` noise draws.
    """
    if len(grids) < 3:
        raise ValueError("need at least three grid sizes")
    pair = kernel_pair(shape_class, d)
    widths, ns = [], []
    for m in grids:
        grid = make_grid(m, d)
        pol = BandwidthPolicy(policy or BandwidthPolicy.default_for(m, d))
        cal = cached_calibration(cache_dir, grid, pair, pol, alpha, nsim, seed, threads)
        ranges = [range(a, min(a + CHUNK, replicates)) for a in range(0, replicates, CHUNK)]
        parts = _parallel(lambda r: run_replicates(fn, pair, grid, cal.kappa, r, seed + m, pol,
                                                   region=region), ranges, threads)
        med = np.concatenate([p.median_width for p in parts])
        widths.append(float(np.mean(med)))
        ns.append(grid.n)
    slope, intercept = fit_loglog(ns, widths)
    return RateTable(fn.id, ShapeClass(shape_class).value, str(region), list(grids), ns, widths,
                     slope, intercept)
