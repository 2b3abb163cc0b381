"""Penalized multiscale scan statistics.

On a uniform grid every admissible window with the same bandwidth carries the
same weight pattern, so for a fixed bandwidth the weighted window sums over all
centers form one cross-correlation of the data with the weight tensor.  The
fast path evaluates it by shifted-slice accumulation for small tensors and by a
circular FFT on the ``m^d`` torus otherwise; admissible windows never wrap, so
no padding is needed.  The brute-force path visits windows one at a time and
serves as the reference.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np
from scipy import fft as sfft

from .grid import (Bandwidth, BandwidthPolicy, Field, GridDesign, GridMismatchError, Window,
                   bandwidths, enumerate_windows)
from .kernels import Kernel, min_count, offset_weights, window_weights

DEFAULT_CROSSOVER = 64


class DegenerateWindowError(ValueError):
    pass


def gamma_penalty(r):
    """``sqrt(2 log(e / r))`` for ``0 < r <= e``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r > math.e):
        raise ValueError("penalty argument must lie in (0, e]")
    out = np.sqrt(np.maximum(2.0 * (1.0 - np.log(r)), 0.0))
    return float(out) if out.ndim == 0 else out


def window_penalty(count: int, n: int) -> float:
    return gamma_penalty(count / n)


@dataclass(frozen=True)
class BandwidthEntry:
    bandwidth: Bandwidth
    weights: np.ndarray = field(repr=False)
    sum_w: float
    sum_w2: float
    penalty: float
    usable: bool

    @property
    def k(self) -> tuple[int, ...]:
        return self.bandwidth.k

    @property
    def count(self) -> int:
        return self.bandwidth.count

    @property
    def scale(self) -> float:
        """``sqrt(sum w^2)``, the noise sd of a window sum."""
        return math.sqrt(self.sum_w2)


class ScanPlan:
    """Per-bandwidth weight tensors for one (grid, kernel, policy)."""

    def __init__(self, grid: GridDesign, kernel: Kernel,
                 policy: BandwidthPolicy = BandwidthPolicy.FULL,
                 crossover: int = DEFAULT_CROSSOVER):
        if kernel.d != grid.d:
            raise GridMismatchError(f"kernel dimension {kernel.d} != grid dimension {grid.d}")
        self.grid = grid
        self.kernel = kernel
        self.policy = BandwidthPolicy(policy)
        self.crossover = crossover
        self.entries: list[BandwidthEntry] = []
        for bw in bandwidths(grid, self.policy):
            w = offset_weights(kernel, bw.k)
            s, s2 = float(w.sum()), float(np.sum(w * w))
            usable = s > 0 and s2 > 0 and bw.count >= min_count(grid.d)
            self.entries.append(BandwidthEntry(bw, w, s, s2, window_penalty(bw.count, grid.n),
                                               usable))
        self._spectra: dict[int, np.ndarray] = {}
        self._taps: dict[int, list] = {}

    @property
    def usable(self) -> list[tuple[int, BandwidthEntry]]:
        return [(i, e) for i, e in enumerate(self.entries) if e.usable]

    def uses_fft(self, entry: BandwidthEntry) -> bool:
        return entry.weights.size > self.crossover

    def _spectrum(self, i: int) -> np.ndarray:
        if i not in self._spectra:
            e = self.entries[i]
            m, d = self.grid.m, self.grid.d
            torus = np.zeros(self.grid.shape)
            idx = np.ix_(*[np.arange(-k, k + 1) % m for k in e.k])
            torus[idx] = e.weights
            self._spectra[i] = np.conj(sfft.rfftn(torus, axes=tuple(range(d))))
        return self._spectra[i]

    def _tap_list(self, i: int) -> list:
        if i not in self._taps:
            e = self.entries[i]
            nz = np.argwhere(e.weights != 0)
            self._taps[i] = [(tuple(int(a) for a in pos), float(e.weights[tuple(pos)]))
                             for pos in nz]
        return self._taps[i]

    def window_sums(self, i: int, batch: "DataBatch") -> np.ndarray:
        """``sum_j w_j Y[c + j]`` for every admissible center ``c``.

        Returns shape ``(B,) + (m - 2k_1, ..., m - 2k_d)``; position ``p`` on axis
        ``a`` is the center with grid index ``k_a + 1 + p``.
        """
        e = self.entries[i]
        m, d = self.grid.m, self.grid.d
        if self.uses_fft(e):
            full = sfft.irfftn(batch.spectrum() * self._spectrum(i), s=self.grid.shape,
                               axes=tuple(range(1, d + 1)))
            return full[(slice(None),) + tuple(slice(k, m - k) for k in e.k)]
        Y = batch.values
        out = np.zeros((Y.shape[0],) + tuple(m - 2 * k for k in e.k))
        for pos, w in self._tap_list(i):
            # tap position p in [0, 2k] is offset p - k; window of center c starts at c - k
            sl = (slice(None),) + tuple(slice(p, p + m - 2 * k) for p, k in zip(pos, e.k))
            out += w * Y[sl]
        return out


@lru_cache(maxsize=64)
def get_plan(grid: GridDesign, kernel: Kernel, policy: BandwidthPolicy = BandwidthPolicy.FULL,
             crossover: int = DEFAULT_CROSSOVER) -> ScanPlan:
    return ScanPlan(grid, kernel, BandwidthPolicy(policy), crossover)


class DataBatch:
    """A stack of fields ``(B, m, ..., m)`` with its spectrum computed on demand."""

    def __init__(self, grid: GridDesign, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape[1:] != grid.shape:
            values = values.reshape((-1,) + grid.shape)
        self.grid = grid
        self.values = values
        self._spec = None

    def spectrum(self) -> np.ndarray:
        if self._spec is None:
            self._spec = sfft.rfftn(self.values, axes=tuple(range(1, self.grid.d + 1)))
        return self._spec

    @classmethod
    def of(cls, values: Field | np.ndarray, grid: GridDesign | None = None) -> "DataBatch":
        if isinstance(values, Field):
            return cls(values.design, values.values[None])
        return cls(grid, values)


@dataclass
class ScanRecord:
    window: Window
    standardized: float
    penalty: float

    @property
    def score(self) -> float:
        return self.standardized - self.penalty


@dataclass
class ScanResult:
    value: float
    argmax: Window
    sign: int
    records: list[ScanRecord] | None = None


def standardized_average(values: Field, kernel: Kernel, window: Window) -> float:
    """``sum Y_i w_i / sqrt(sum w_i^2)`` over the window's members."""
    ww = window_weights(kernel, window, values.design)
    if ww.sum_w2 <= 0:
        raise DegenerateWindowError(f"window {window} has zero kernel energy")
    y = np.array([values.at(idx) for idx in ww.members])
    return float(np.dot(y, ww.weights) / math.sqrt(ww.sum_w2))


def _check_grid(values: Field, kernel: Kernel):
    if kernel.d != values.design.d:
        raise GridMismatchError(f"kernel dimension {kernel.d} != field dimension {values.design.d}")


def scan_brute(values: Field, kernel: Kernel, sign: int,
               policy: BandwidthPolicy = BandwidthPolicy.FULL,
               keep_records: bool = False) -> ScanResult:
    """Reference scan: one window at a time, in enumeration order."""
    _check_grid(values, kernel)
    grid = values.design
    best, best_w = -math.inf, None
    records = [] if keep_records else None
    for win in enumerate_windows(grid, policy):
        ww = window_weights(kernel, win, grid)
        if not ww.usable:
            continue
        y = np.array([values.at(idx) for idx in ww.members])
        z = float(np.dot(y, ww.weights) / math.sqrt(ww.sum_w2))
        pen = gamma_penalty(win.count / grid.n)
        score = sign * z - pen
        if keep_records:
            records.append(ScanRecord(win, z, pen))
        if score > best:
            best, best_w = score, win
    return ScanResult(best, best_w, sign, records)


def scan_batch(plan: ScanPlan, batch: DataBatch, sign: int
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized scan of every field in ``batch``.

    Returns ``(T, bandwidth_index, center_flat_index)`` per field; the center
    index is flat within that bandwidth's admissible-center block.
    """
    B = batch.values.shape[0]
    best = np.full(B, -np.inf)
    arg_bw = np.full(B, -1)
    arg_c = np.full(B, -1)
    for i, e in plan.usable:
        z = plan.window_sums(i, batch).reshape(B, -1) * (sign / e.scale)
        c = np.argmax(z, axis=1)
        score = z[np.arange(B), c] - e.penalty
        better = score > best
        best = np.where(better, score, best)
        arg_bw = np.where(better, i, arg_bw)
        arg_c = np.where(better, c, arg_c)
    return best, arg_bw, arg_c


def _window_at(plan: ScanPlan, i: int, flat: int) -> Window:
    e = plan.entries[i]
    m = plan.grid.m
    pos = np.unravel_index(flat, tuple(m - 2 * k for k in e.k))
    return Window(tuple(int(p) + k + 1 for p, k in zip(pos, e.k)), e.bandwidth)


def scan_records(plan: ScanPlan, values: Field, sign: int) -> list[ScanRecord]:
    batch = DataBatch.of(values)
    out = []
    for i, e in plan.usable:
        z = plan.window_sums(i, batch)[0] / e.scale
        for flat, val in enumerate(z.ravel()):
            out.append(ScanRecord(_window_at(plan, i, flat), float(val), e.penalty))
    return out


def multiscale_statistic(values: Field, kernel: Kernel, sign: int = 1,
                         policy: BandwidthPolicy = BandwidthPolicy.FULL,
                         method: str = "fast", keep_records: bool = False,
                         crossover: int = DEFAULT_CROSSOVER) -> ScanResult:
    """``max over windows of (sign * standardized average - penalty)``.

    Ties go to the first window in (bandwidth, center) lexicographic order.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if method == "brute":
        return scan_brute(values, kernel, sign, policy, keep_records)
    if method != "fast":
        raise ValueError(f"unknown method {method!r}")
    _check_grid(values, kernel)
    plan = get_plan(values.design, kernel, BandwidthPolicy(policy), crossover)
    T, bw, c = scan_batch(plan, DataBatch.of(values), sign)
    if bw[0] < 0:
        raise DegenerateWindowError("no usable windows on this grid")
    records = scan_records(plan, values, sign) if keep_records else None
    return ScanResult(float(T[0]), _window_at(plan, int(bw[0]), int(c[0])), sign, records)


def two_sided_statistic(values: Field, kernel: Kernel,
                        policy: BandwidthPolicy = BandwidthPolicy.FULL) -> float:
    """``max over windows of |standardized average| - penalty`` (exploratory use)."""
    return max(multiscale_statistic(values, kernel, s, policy).value for s in (1, -1))


def tstar_batch(grid: GridDesign, lower: Kernel, upper: Kernel, values: np.ndarray,
                policy: BandwidthPolicy = BandwidthPolicy.FULL,
                crossover: int = DEFAULT_CROSSOVER) -> tuple[np.ndarray, np.ndarray]:
    """``(T(lower, +1), T(upper, -1))`` for a stack of fields sharing one spectrum."""
    batch = DataBatch(grid, values)
    pl = get_plan(grid, lower, BandwidthPolicy(policy), crossover)
    pu = get_plan(grid, upper, BandwidthPolicy(policy), crossover)
    return scan_batch(pl, batch, 1)[0], scan_batch(pu, batch, -1)[0]


def tstar(values: Field, lower: Kernel, upper: Kernel,
          policy: BandwidthPolicy = BandwidthPolicy.FULL, method: str = "fast") -> float:
    """``T* = max(T(psi_lower), T(-psi_upper))``."""
    if method == "brute":
        return max(scan_brute(values, lower, 1, policy).value,
                   scan_brute(values, upper, -1, policy).value)
    tl, tu = tstar_batch(values.design, lower, upper, values.values[None], policy)
    return float(max(tl[0], tu[0]))


def write_scan_trace(path, records: Sequence[ScanRecord], sign: int = 1) -> None:
    """CSV trace with columns ``h1..hd, t1..td, count, standardized_value, penalty, score``."""
    if not records:
        raise ValueError("no records to write")
    d = len(records[0].window.center)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"h{i + 1}" for i in range(d)] + [f"t{i + 1}" for i in range(d)]
                   + ["count", "standardized_value", "penalty", "score"])
        for r in records:
            w.writerow([repr(x) for x in r.window.h] + [repr(x) for x in r.window.t]
                       + [r.window.count, repr(r.standardized), repr(r.penalty),
                          repr(sign * r.standardized - r.penalty)])
