"""Simultaneous confidence bands from per-window kernel bounds.

For every grid point the lower limit is the largest, over usable windows
centred there, of ``f_lower(t) - sigma * (kappa + penalty) * sqrt(sum w^2) / sum w``,
and the upper limit the smallest ``f_upper(t) + ...``.  Points with no usable
window get the vacuous limits ``(-inf, +inf)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .calibration import Calibration
from .engine import DataBatch, ScanPlan, get_plan
from .grid import BandwidthPolicy, Field, GridDesign, GridMismatchError, bandwidths
from .kernels import KernelPair


class BandError(ValueError):
    pass


@dataclass(frozen=True)
class BandResult:
    design: GridDesign
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    lower_k: np.ndarray = field(repr=False)   # (m,)*d + (d,) half-widths, 0 where vacuous
    upper_k: np.ndarray = field(repr=False)
    vacuous: np.ndarray = field(repr=False)
    kappa: float = math.nan
    sigma: float = 1.0

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def lower_field(self) -> Field:
        return Field(self.design, self.lower)

    def upper_field(self) -> Field:
        return Field(self.design, self.upper)


def _pair_plans(grid: GridDesign, pair: KernelPair, policy) -> tuple[ScanPlan, ScanPlan]:
    if pair.d != grid.d:
        raise GridMismatchError("kernel pair dimension does not match the grid")
    policy = BandwidthPolicy(policy)
    return get_plan(grid, pair.lower, policy), get_plan(grid, pair.upper, policy)


def _admissible_mask(grid: GridDesign, policy) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    for bw in bandwidths(grid, policy):
        mask[tuple(slice(k, grid.m - k) for k in bw.k)] = True
    return mask


def _optimize(plan: ScanPlan, batch: DataBatch, kappa: float, sigma: float, upper: bool):
    """Per-point best bound over bandwidths for every field in ``batch``."""
    grid = plan.grid
    B = batch.values.shape[0]
    init = np.inf if upper else -np.inf
    best = np.full((B,) + grid.shape, init)
    arg = np.full((B,) + grid.shape, -1)
    for i, e in plan.usable:
        sl = (slice(None),) + tuple(slice(k, grid.m - k) for k in e.k)
        est = plan.window_sums(i, batch) / e.sum_w
        half = sigma * (kappa + e.penalty) * e.scale / e.sum_w
        cand = est + half if upper else est - half
        cur = best[sl]
        better = cand < cur if upper else cand > cur
        best[sl] = np.where(better, cand, cur)
        arg[sl] = np.where(better, i, arg[sl])
    return best, arg


def _k_array(plan: ScanPlan, arg: np.ndarray) -> np.ndarray:
    table = np.array([e.k for e in plan.entries] + [(0,) * plan.grid.d])
    return table[np.where(arg < 0, len(plan.entries), arg)]


def bands_batch(grid: GridDesign, pair: KernelPair, kappa: float, values: np.ndarray,
                policy=BandwidthPolicy.FULL, sigma: float = 1.0):
    """Lower/upper limits for a stack of fields ``(B, m, ..., m)``.

    Returns ``(lower, upper, lower_arg, upper_arg)`` where the arg arrays hold
    bandwidth indices into the plans (``-1`` where no window applies).
    """
    if not sigma > 0:
        raise BandError("sigma must be positive")
    pl, pu = _pair_plans(grid, pair, policy)
    batch = DataBatch(grid, values)
    lo, alo = _optimize(pl, batch, kappa, sigma, upper=False)
    up, aup = _optimize(pu, batch, kappa, sigma, upper=True)
    vac = (alo < 0) | (aup < 0)
    lo[vac] = -np.inf
    up[vac] = np.inf
    return lo, up, np.where(vac, -1, alo), np.where(vac, -1, aup)


def build_bands_kappa(values: Field, pair: KernelPair, kappa: float,
                      policy=BandwidthPolicy.FULL, sigma: float = 1.0) -> BandResult:
    """Bands for an explicit critical value (no calibration record)."""
    grid = values.design
    policy = BandwidthPolicy(policy)
    lo, up, alo, aup = bands_batch(grid, pair, kappa, values.values[None], policy, sigma)
    vacuous = alo[0] < 0
    stranded = vacuous & _admissible_mask(grid, policy)
    if stranded.any():
        idx = tuple(int(i) + 1 for i in np.argwhere(stranded)[0])
        raise BandError(f"every window at grid point {grid.coordinate(idx)} is unusable")
    pl, pu = _pair_plans(grid, pair, policy)
    return BandResult(grid, lo[0], up[0], _k_array(pl, alo[0]), _k_array(pu, aup[0]),
                      vacuous, float(kappa), float(sigma))


def build_bands(values: Field, pair: KernelPair, cal: Calibration, policy=None,
                sigma: float = 1.0) -> BandResult:
    grid = values.design
    policy = BandwidthPolicy(policy or cal.policy)
    cal.check_context(m=grid.m, d=grid.d, kernel_pair=pair.id, policy=policy)
    return build_bands_kappa(values, pair, cal.kappa, policy, sigma)


# -- coverage and widths ------------------------------------------------------

@dataclass
class CoverageCheck:
    covered: bool
    violations: list[dict]


def check_coverage(band: BandResult, truth: Field) -> CoverageCheck:
    """Whether ``lower <= truth <= upper`` at every non-vacuous grid point."""
    if truth.design != band.design:
        raise GridMismatchError("truth and band live on different grids")
    f = truth.values
    below = f - band.lower      # negative where the lower limit is above the truth
    above = band.upper - f
    bad = ~band.vacuous & ((below < 0) | (above < 0))
    violations = []
    for pos in np.argwhere(bad):
        p = tuple(pos)
        violations.append(dict(index=tuple(int(i) + 1 for i in p), lower=float(band.lower[p]),
                               truth=float(f[p]), upper=float(band.upper[p]),
                               margin=float(min(below[p], above[p]))))
    return CoverageCheck(not violations, violations)


@dataclass(frozen=True)
class Box:
    """Axis-aligned region ``lo_i <= x_i <= hi_i``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        d = X.shape[-1]
        lo = np.array(self.lo[:d]) if len(self.lo) >= d else np.resize(-np.inf, d)
        hi = np.array(self.hi[:d]) if len(self.hi) >= d else np.resize(np.inf, d)
        return np.all((X >= lo - 1e-12) & (X <= hi + 1e-12), axis=-1)

    @classmethod
    def parse(cls, text: str, d: int) -> "Box":
        """Parse constraints such as ``"x1<=0.3"`` or ``"0.45<=x1<=0.55, x2>=0.2"``."""
        lo, hi = [-math.inf] * d, [math.inf] * d
        for part in filter(None, (p.strip() for p in text.replace(";", ",").split(","))):
            tokens = [t.strip() for t in part.replace(">=", "<=").split("<=")]
            flipped = ">=" in part
            if flipped:
                tokens = tokens[::-1]
            if len(tokens) not in (2, 3):
                raise ValueError(f"cannot parse region constraint {part!r}")
            var_pos = [i for i, t in enumerate(tokens) if t.startswith("x")]
            if len(var_pos) != 1:
                raise ValueError(f"region constraint {part!r} needs exactly one variable")
            axis = int(tokens[var_pos[0]][1:]) - 1
            if not 0 <= axis < d:
                raise ValueError(f"variable {tokens[var_pos[0]]} outside dimension {d}")
            j = var_pos[0]
            if j > 0:
                lo[axis] = max(lo[axis], float(tokens[j - 1]))
            if j < len(tokens) - 1:
                hi[axis] = min(hi[axis], float(tokens[j + 1]))
        return cls(tuple(lo), tuple(hi))

    def __str__(self):
        parts = []
        for i, (a, b) in enumerate(zip(self.lo, self.hi)):
            if a > -math.inf and b < math.inf:
                parts.append(f"{a:g}<=x{i + 1}<={b:g}")
            elif a > -math.inf:
                parts.append(f"x{i + 1}>={a:g}")
            elif b < math.inf:
                parts.append(f"x{i + 1}<={b:g}")
        return ",".join(parts) or "all"


@dataclass(frozen=True)
class WidthSummary:
    mean: float
    median: float
    max: float
    count: int


def region_mask(design: GridDesign, region: Callable[[np.ndarray], np.ndarray] | None
                ) -> np.ndarray:
    if region is None:
        return np.ones(design.shape, dtype=bool)
    return np.asarray(region(design.mesh()), dtype=bool)


def width_profile(band: BandResult, region: Callable[[np.ndarray], np.ndarray] | None = None
                  ) -> WidthSummary:
    """Summaries of ``upper - lower`` over the non-vacuous points of ``region``."""
    mask = region_mask(band.design, region) & ~band.vacuous
    if not mask.any():
        raise BandError("region has no non-vacuous grid points")
    w = band.width[mask]
    return WidthSummary(float(np.mean(w)), float(np.median(w)), float(np.max(w)), int(w.size))


def difference_sigma(values: Field) -> float:
    """Noise sd from first differences along every axis.

    Only a convenience: the coverage guarantee assumes a known sd.
    """
    diffs = [np.diff(values.values, axis=a).ravel() for a in range(values.design.d)]
    return float(np.sqrt(np.mean(np.concatenate(diffs) ** 2) / 2.0))


# -- output -------------------------------------------------------------------

def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def write_band_csv(path, band: BandResult) -> None:
    """Columns ``x1..xd, lower, upper, width, argmax_h*_lower, argmin_h*_upper``."""
    g = band.design
    d, m = g.d, g.m
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(d)] + ["lower", "upper", "width"]
                   + [f"argmax_h{i + 1}_lower" for i in range(d)]
                   + [f"argmin_h{i + 1}_upper" for i in range(d)])
        for idx in g.indices():
            p = tuple(k - 1 for k in idx)
            lo, up = float(band.lower[p]), float(band.upper[p])
            hs = ["nan"] * (2 * d) if band.vacuous[p] else (
                [repr(int(k) / m) for k in band.lower_k[p]]
                + [repr(int(k) / m) for k in band.upper_k[p]])
            w.writerow([repr(c) for c in g.coordinate(idx)] + [_fmt(lo), _fmt(up), _fmt(up - lo)]
                       + hs)


def read_band_csv(path, design: GridDesign) -> BandResult:
    d, m = design.d, design.m
    lower = np.full(design.shape, np.nan)
    upper = np.full(design.shape, np.nan)
    lk = np.zeros(design.shape + (d,), dtype=int)
    uk = np.zeros(design.shape + (d,), dtype=int)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:d] != [f"x{i + 1}" for i in range(d)] or header[d:d + 2] != ["lower", "upper"]:
            raise ValueError(f"{path}: not a band file for d={d}")
        for row in reader:
            p = tuple(k - 1 for k in design.index_of([float(x) for x in row[:d]]))
            lower[p], upper[p] = float(row[d]), float(row[d + 1])
            hs = row[d + 3:]
            if hs[0] != "nan":
                lk[p] = [round(float(x) * m) for x in hs[:d]]
                uk[p] = [round(float(x) * m) for x in hs[d:]]
    if np.isnan(lower).any():
        raise ValueError(f"{path}: band file does not cover the grid")
    vac = np.isinf(lower) & np.isinf(upper)
    return BandResult(design, lower, upper, lk, uk, vac)


def _json_grid(a: np.ndarray):
    return [[None if not math.isfinite(v) else float(v) for v in row] for row in
            np.atleast_2d(a).reshape(a.shape[0], -1)]


def write_plot_data(path, band: BandResult, truth: Field | None = None) -> None:
    """JSON grids of lower/upper (and truth) for external plotting; infinities become null."""
    g = band.design
    doc = {"m": g.m, "d": g.d, "axis": [float(x) for x in g.axis()],
           "lower": _json_grid(band.lower), "upper": _json_grid(band.upper)}
    if truth is not None:
        doc["truth"] = _json_grid(truth.values)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
