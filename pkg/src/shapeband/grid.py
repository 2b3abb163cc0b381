"""Uniform grid designs, fields over them, and admissible windows.

Grid indices are 1-based tuples ``(k_1, ..., k_d)`` with ``k_i`` in ``1..m``;
the coordinate of an index is ``k / m``.  Bandwidths are stored as integer
half-widths ``k_h`` so that ``h = k_h / m``.  Field values live in a numpy
array of shape ``(m,) * d`` where index ``k`` sits at array position ``k - 1``.
"""

from __future__ import annotations

import csv
import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

DEFAULT_POINT_BUDGET = 10**7
COORD_TOL = 1e-9


class CapacityError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


class FieldFormatError(ValueError):
    pass


class BandwidthPolicy(str, enum.Enum):
    FULL = "full"
    DYADIC = "dyadic"

    @classmethod
    def default_for(cls, m: int, d: int) -> "BandwidthPolicy":
        return cls.FULL if (m <= 64 and d <= 2) else cls.DYADIC


@dataclass(frozen=True)
class GridDesign:
    m: int
    d: int

    def __post_init__(self):
        if self.m < 1 or self.d < 1:
            raise ValueError("m and d must be positive")

    @property
    def n(self) -> int:
        return self.m**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.m,) * self.d

    def coordinate(self, index: Sequence[int]) -> tuple[float, ...]:
        if len(index) != self.d or any(not 1 <= k <= self.m for k in index):
            raise IndexError(f"grid index {tuple(index)} outside 1..{self.m} in d={self.d}")
        return tuple(k / self.m for k in index)

    def index_of(self, coord: Sequence[float], tol: float = COORD_TOL) -> tuple[int, ...]:
        if len(coord) != self.d:
            raise IndexError("coordinate has wrong dimension")
        out = []
        for c in coord:
            k = round(c * self.m)
            if not 1 <= k <= self.m or abs(k / self.m - c) > tol:
                raise KeyError(f"coordinate {tuple(coord)} is not a grid point")
            out.append(k)
        return tuple(out)

    def indices(self) -> Iterator[tuple[int, ...]]:
        """All grid indices in row-major order."""
        return itertools.product(range(1, self.m + 1), repeat=self.d)

    def axis(self) -> np.ndarray:
        return np.arange(1, self.m + 1) / self.m

    def mesh(self) -> np.ndarray:
        """Coordinates of every point, shape ``(m,)*d + (d,)``."""
        axes = [self.axis()] * self.d
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def max_halfwidth(self) -> int:
        return self.m // 2


def make_grid(m: int, d: int, point_budget: int = DEFAULT_POINT_BUDGET) -> GridDesign:
    if m < 4:
        raise ValueError(f"m must be at least 4 (got {m})")
    if d < 1:
        raise ValueError(f"d must be at least 1 (got {d})")
    if m**d > point_budget:
        raise CapacityError(f"grid {m}^{d} = {m**d} points exceeds budget {point_budget}")
    return GridDesign(m, d)


@dataclass(frozen=True)
class Field:
    design: GridDesign
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.design.n:
            raise GridMismatchError(f"expected {self.design.n} values, got {v.size}")
        v = v.reshape(self.design.shape)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def at(self, index: Sequence[int]) -> float:
        self.design.coordinate(index)
        return float(self.values[tuple(k - 1 for k in index)])

    def __eq__(self, other):
        if not isinstance(other, Field):
            return NotImplemented
        return self.design == other.design and np.array_equal(self.values, other.values)

    __hash__ = None


def field_from_function(design: GridDesign, fn) -> Field:
    """Evaluate a vectorized ``fn(X)`` (X of shape ``(..., d)``) on the grid."""
    return Field(design, fn(design.mesh()))


@dataclass(frozen=True)
class Bandwidth:
    """Per-axis half-widths in grid units (``h_i = k[i] / m``)."""

    k: tuple[int, ...]
    m: int

    def __post_init__(self):
        if any(ki < 1 or 2 * ki > self.m for ki in self.k):
            raise ValueError(f"bandwidth {self.k} outside [1/m, 1/2] for m={self.m}")

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(ki / self.m for ki in self.k)

    @property
    def count(self) -> int:
        return math.prod(2 * ki + 1 for ki in self.k)


def axis_halfwidths(m: int, policy: BandwidthPolicy) -> list[int]:
    top = m // 2
    if BandwidthPolicy(policy) is BandwidthPolicy.FULL:
        return list(range(1, top + 1))
    out, k = [], 1
    while k <= top:
        out.append(k)
        k *= 2
    return out


def bandwidths(design: GridDesign, policy: BandwidthPolicy) -> list[Bandwidth]:
    """Bandwidths with at least one admissible center, in lexicographic order."""
    ks = [k for k in axis_halfwidths(design.m, policy) if 2 * k + 1 <= design.m]
    return [Bandwidth(k, design.m) for k in itertools.product(ks, repeat=design.d)]


@dataclass(frozen=True)
class Window:
    center: tuple[int, ...]
    bandwidth: Bandwidth

    @property
    def t(self) -> tuple[float, ...]:
        return tuple(c / self.bandwidth.m for c in self.center)

    @property
    def h(self) -> tuple[float, ...]:
        return self.bandwidth.h

    @property
    def count(self) -> int:
        return self.bandwidth.count

    def members(self) -> list[tuple[int, ...]]:
        ranges = [range(c - k, c + k + 1) for c, k in zip(self.center, self.bandwidth.k)]
        return list(itertools.product(*ranges))


def is_admissible(center: Sequence[int], bw: Bandwidth) -> bool:
    return all(c - k >= 1 and c + k <= bw.m for c, k in zip(center, bw.k))


def centers(design: GridDesign, bw: Bandwidth) -> Iterator[tuple[int, ...]]:
    ranges = [range(k + 1, design.m - k + 1) for k in bw.k]
    return itertools.product(*ranges)


def enumerate_windows(design: GridDesign, policy: BandwidthPolicy = BandwidthPolicy.FULL
                      ) -> Iterator[Window]:
    """Every admissible window once, ordered by bandwidth then center."""
    for bw in bandwidths(design, policy):
        for c in centers(design, bw):
            yield Window(c, bw)


def read_field_csv(path, design: GridDesign) -> Field:
    """Read a field written as ``x1,...,xd,y`` rows covering the grid exactly."""
    values = np.full(design.shape, np.nan)
    seen = np.zeros(design.shape, dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FieldFormatError(f"{path}: empty file") from None
        expected = [f"x{i + 1}" for i in range(design.d)] + ["y"]
        if [h.strip() for h in header] != expected:
            raise FieldFormatError(f"{path}: row 1: header {header} != {expected}")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != design.d + 1:
                raise FieldFormatError(f"{path}: row {rowno}: expected {design.d + 1} columns")
            try:
                nums = [float(x) for x in row]
            except ValueError:
                raise FieldFormatError(f"{path}: row {rowno}: non-numeric value") from None
            try:
                idx = design.index_of(nums[:-1])
            except KeyError as exc:
                raise FieldFormatError(f"{path}: row {rowno}: {exc.args[0]}") from None
            pos = tuple(k - 1 for k in idx)
            if seen[pos]:
                raise FieldFormatError(f"{path}: row {rowno}: duplicate point {design.coordinate(idx)}")
            if not math.isfinite(nums[-1]):
                raise FieldFormatError(f"{path}: row {rowno}: non-finite y")
            seen[pos] = True
            values[pos] = nums[-1]
    if not seen.all():
        missing = tuple(int(i) + 1 for i in np.argwhere(~seen)[0])
        raise FieldFormatError(
            f"{path}: {int((~seen).sum())} grid point(s) missing, e.g. {design.coordinate(missing)}")
    return Field(design, values)


def write_field_csv(path, fld: Field) -> None:
    design = fld.design
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(design.d)] + ["y"])
        for idx in design.indices():
            w.writerow([repr(c) for c in design.coordinate(idx)]
                       + [repr(float(fld.values[tuple(k - 1 for k in idx)]))])
