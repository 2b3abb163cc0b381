"""Shape-restricted kernels and their functionals.

Four built-in kernels, all vanishing outside ``[-1, 1]^d``:

* ``ISO_UPPER``  ``(1 - sum x) 1{x >= 0, sum x <= 1}``
* ``ISO_LOWER``  ``ISO_UPPER(-x)``
* ``CVX_UPPER``  ``(1 - |x|^2) 1{|x| <= 1}``
* ``CVX_LOWER``  ``(1 - a|x| + b|x|^2) 1{|x| <= 1}``, ``a = (2d+4)/(d+1)``,
  ``b = (d+3)/(d+1)``; negative for ``(d+1)/(d+3) < |x| < 1``.

The isotonic pair brackets every coordinate-wise nondecreasing function and the
convex pair every convex function: the lower kernel's smoothed mean never
exceeds ``f(t)`` and the upper kernel's is never below it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .grid import GridDesign, Window
from .quadrature import ball_rule, box_rule, integrate_adaptive, simplex_rule

QUAD_TOL = 1e-8
VIOLATION_TOL = 1e-6


class KernelError(ValueError):
    pass


class KernelId(str, enum.Enum):
    ISO_LOWER = "iso_lower"
    ISO_UPPER = "iso_upper"
    CVX_LOWER = "cvx_lower"
    CVX_UPPER = "cvx_upper"
    CUSTOM = "custom"


class ShapeClass(str, enum.Enum):
    ISOTONIC = "isotonic"
    CONVEX = "convex"


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def _cvx_lower_coeffs(d: int) -> tuple[float, float]:
    return (2 * d + 4) / (d + 1), (d + 3) / (d + 1)


@dataclass(frozen=True)
class KernelFunctionals:
    l2_norm_sq: float
    mean: float

    @property
    def l2_norm(self) -> float:
        return math.sqrt(self.l2_norm_sq)


@dataclass(frozen=True, eq=False)
class Kernel:
    id: KernelId
    d: int
    func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    name: str = ""

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.id is KernelId.CUSTOM and self.func is None:
            raise ValueError("custom kernels need an evaluation function")
        if self.mean() <= 0:
            raise KernelError(f"kernel {self.label} has non-positive mean {self.mean()}")

    def __eq__(self, other):
        if not isinstance(other, Kernel):
            return NotImplemented
        if self.id is KernelId.CUSTOM or other.id is KernelId.CUSTOM:
            return self is other
        return (self.id, self.d) == (other.id, other.d)

    def __hash__(self):
        return hash((self.id, self.d, id(self) if self.id is KernelId.CUSTOM else 0))

    @property
    def label(self) -> str:
        return self.name or self.id.value

    @property
    def bias_verified(self) -> bool:
        """Built-ins satisfy the two-sided bias condition; custom kernels are unchecked."""
        return self.id is not KernelId.CUSTOM

    @property
    def is_radial(self) -> bool:
        return self.id in (KernelId.CVX_LOWER, KernelId.CVX_UPPER)

    # -- evaluation -------------------------------------------------------

    def radial(self, r):
        """Profile of a radial kernel as a function of ``|x|``."""
        r = np.asarray(r, dtype=float)
        inside = r <= 1.0
        if self.id is KernelId.CVX_UPPER:
            return np.where(inside, 1.0 - r * r, 0.0)
        if self.id is KernelId.CVX_LOWER:
            a, b = _cvx_lower_coeffs(self.d)
            return np.where(inside, 1.0 - a * r + b * r * r, 0.0)
        raise TypeError(f"{self.label} is not radial")

    def __call__(self, x) -> np.ndarray:
        """Evaluate at points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError(f"expected trailing dimension {self.d}, got {x.shape}")
        if self.id is KernelId.ISO_UPPER:
            s = x.sum(axis=-1)
            return np.where(np.all(x >= 0, axis=-1) & (s <= 1.0), 1.0 - s, 0.0)
        if self.id is KernelId.ISO_LOWER:
            s = x.sum(axis=-1)
            return np.where(np.all(x <= 0, axis=-1) & (s >= -1.0), 1.0 + s, 0.0)
        if self.is_radial:
            return self.radial(np.sqrt(np.sum(x * x, axis=-1)))
        inside = np.all(np.abs(x) <= 1.0, axis=-1)
        return np.where(inside, self.func(x), 0.0)

    def eval(self, x) -> float:
        return float(self(np.asarray(x, dtype=float)))

    # -- integration over the support -----------------------------------

    def integrate(self, g: Callable[[np.ndarray], np.ndarray], P: int = 1, breaks=None,
                  tol: float = QUAD_TOL, max_level: int = 6) -> tuple[np.ndarray, np.ndarray]:
        """Batch of ``P`` integrals ``int psi(x) g(x) dx``.

        ``g`` receives nodes of shape ``(P, Q, d)``.  ``breaks[i]`` holds
        per-integral breakpoints of ``g`` along axis ``i`` (kernel coordinates).
        Returns ``(values, error_estimates)``.
        """
        d = self.d
        if self.id is KernelId.ISO_UPPER:
            return integrate_adaptive(simplex_rule, lambda X: (1.0 - X.sum(-1)) * g(X), P, d,
                                      breaks, tol, max_level)
        if self.id is KernelId.ISO_LOWER:
            flipped = None if breaks is None else [-np.asarray(b, dtype=float) for b in breaks]
            return integrate_adaptive(simplex_rule, lambda X: (1.0 - X.sum(-1)) * g(-X), P, d,
                                      flipped, tol, max_level)
        if self.is_radial:
            return integrate_adaptive(
                ball_rule, lambda X: self.radial(np.sqrt(np.sum(X * X, -1))) * g(X), P, d,
                breaks, tol, max_level)
        return integrate_adaptive(box_rule, lambda X: self(X) * g(X), P, d, breaks, tol,
                                  max_level)

    # -- functionals -----------------------------------------------------

    def _radial_moment(self, fn: Callable[[float], float]) -> float:
        val, _ = integrate.quad(lambda r: fn(r) * r ** (self.d - 1), 0.0, 1.0,
                                epsabs=1e-13, epsrel=1e-13)
        return sphere_area(self.d) * val

    def l2_norm_sq(self) -> float:
        return self.functionals.l2_norm_sq

    def mean(self) -> float:
        return self.functionals.mean

    @cached_property
    def functionals(self) -> KernelFunctionals:
        d = self.d
        if self.id in (KernelId.ISO_UPPER, KernelId.ISO_LOWER):
            return KernelFunctionals(2.0 / math.factorial(d + 2), 1.0 / math.factorial(d + 1))
        if self.is_radial:
            prof = lambda r: float(self.radial(r))
            return KernelFunctionals(self._radial_moment(lambda r: prof(r) ** 2),
                                     self._radial_moment(prof))
        norm, _ = self.integrate(lambda X: self(X), max_level=8)
        mass, _ = self.integrate(lambda X: np.ones(X.shape[:-1]), max_level=8)
        return KernelFunctionals(float(norm[0]), float(mass[0]))


_KERNEL_CACHE: dict[tuple[KernelId, int], Kernel] = {}


def get_kernel(kid: KernelId | str, d: int) -> Kernel:
    kid = KernelId(kid)
    if kid is KernelId.CUSTOM:
        raise ValueError("build custom kernels with custom_kernel()")
    key = (kid, d)
    if key not in _KERNEL_CACHE:
        _KERNEL_CACHE[key] = Kernel(kid, d)
    return _KERNEL_CACHE[key]


def custom_kernel(func: Callable[[np.ndarray], np.ndarray], d: int, name: str = "custom"
                  ) -> Kernel:
    return Kernel(KernelId.CUSTOM, d, func, name)


@dataclass(frozen=True)
class KernelPair:
    lower: Kernel
    upper: Kernel
    shape_class: ShapeClass | None = None

    @property
    def id(self) -> str:
        if self.shape_class is not None:
            return f"{self.shape_class.value}-d{self.lower.d}"
        return f"{self.lower.label}/{self.upper.label}-d{self.lower.d}"

    @property
    def d(self) -> int:
        return self.lower.d


def kernel_pair(shape_class: ShapeClass | str, d: int) -> KernelPair:
    sc = ShapeClass(shape_class)
    if sc is ShapeClass.ISOTONIC:
        return KernelPair(get_kernel(KernelId.ISO_LOWER, d), get_kernel(KernelId.ISO_UPPER, d), sc)
    return KernelPair(get_kernel(KernelId.CVX_LOWER, d), get_kernel(KernelId.CVX_UPPER, d), sc)


# -- discretized windows -----------------------------------------------------

def min_count(d: int) -> int:
    return 3**d


@dataclass(frozen=True)
class WindowWeights:
    members: tuple[tuple[int, ...], ...]
    weights: np.ndarray = field(repr=False)
    sum_w: float
    sum_w2: float
    usable: bool


def window_weights(kernel: Kernel, window: Window, grid: GridDesign) -> WindowWeights:
    """Kernel weights ``psi((x_i - t) / h)`` for the members of ``window``.

    The window is unusable for estimation when the weights sum to a
    non-positive number or the window has fewer than ``3**d`` points.
    """
    members = window.members()
    x = np.array([grid.coordinate(idx) for idx in members])
    t = np.array(window.t)
    h = np.array(window.h)
    w = kernel((x - t) / h)
    s, s2 = float(w.sum()), float(np.sum(w * w))
    usable = s > 0 and len(members) >= min_count(grid.d)
    return WindowWeights(tuple(members), w, s, s2, usable)


def offset_weights(kernel: Kernel, k: Sequence[int]) -> np.ndarray:
    """Weight tensor over integer offsets ``[-k_i, k_i]`` for half-widths ``k``."""
    axes = [np.arange(-ki, ki + 1) / ki for ki in k]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return kernel(mesh)


# -- two-sided bias condition ----------------------------------------------

@dataclass
class BiasReport:
    t: np.ndarray
    h: np.ndarray
    f_t: np.ndarray
    lower_mean: np.ndarray
    upper_mean: np.ndarray
    quad_error: np.ndarray

    @property
    def lower_margin(self) -> np.ndarray:
        """``f(t) - E f_lower``; must be non-negative."""
        return self.f_t - self.lower_mean

    @property
    def upper_margin(self) -> np.ndarray:
        """``E f_upper - f(t)``; must be non-negative."""
        return self.upper_mean - self.f_t

    @property
    def worst_lower(self) -> float:
        return float(self.lower_margin.min())

    @property
    def worst_upper(self) -> float:
        return float(self.upper_margin.min())

    @property
    def worst(self) -> float:
        return min(self.worst_lower, self.worst_upper)

    def violations(self, tol: float = VIOLATION_TOL) -> list[dict]:
        bad = np.flatnonzero((self.lower_margin < -tol) | (self.upper_margin < -tol))
        return [dict(t=tuple(self.t[i]), h=tuple(self.h[i]),
                     lower_margin=float(self.lower_margin[i]),
                     upper_margin=float(self.upper_margin[i])) for i in bad]

    def passed(self, tol: float = VIOLATION_TOL) -> bool:
        return not self.violations(tol)


def smoothed_mean(kernel: Kernel, fn: Callable[[np.ndarray], np.ndarray], t: np.ndarray,
                  h: np.ndarray, breakpoints=None, tol: float = QUAD_TOL,
                  max_level: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """``<f(t + h * .), psi> / <1, psi>`` for a batch of probes ``(t, h)``.

    ``breakpoints`` lists, per axis, the coordinates where ``fn`` jumps or kinks.
    """
    t = np.atleast_2d(np.asarray(t, dtype=float))
    h = np.atleast_2d(np.asarray(h, dtype=float))
    P = t.shape[0]
    breaks = None
    if breakpoints is not None:
        breaks = [(np.asarray(breakpoints[i], dtype=float)[None, :] - t[:, i:i + 1]) / h[:, i:i + 1]
                  for i in range(kernel.d)]
    g = lambda X: fn(t[:, None, :] + h[:, None, :] * X)
    val, err = kernel.integrate(g, P, breaks, tol, max_level)
    mass = kernel.mean()
    return val / mass, err / abs(mass)


def check_bias_condition(pair: KernelPair, fn, t, h, breakpoints=None,
                         tol: float = QUAD_TOL) -> BiasReport:
    """Evaluate both smoothed means at probes ``(t, h)`` and compare with ``f(t)``.

    ``fn`` is a vectorized callable on ``(..., d)`` arrays; objects exposing
    ``breakpoints`` (such as the simulation test functions) supply their own.
    Use :meth:`BiasReport.passed` / :meth:`BiasReport.violations` on the result.
    """
    if breakpoints is None:
        breakpoints = getattr(fn, "breakpoints", None)
    t = np.atleast_2d(np.asarray(t, dtype=float))
    h = np.atleast_2d(np.asarray(h, dtype=float))
    if np.any(h <= 0) or np.any(h > 0.5) or np.any(t < h - 1e-12) or np.any(t > 1 - h + 1e-12):
        raise ValueError("probes must satisfy h in (0, 1/2] and h <= t <= 1 - h")
    lo, elo = smoothed_mean(pair.lower, fn, t, h, breakpoints, tol)
    up, eup = smoothed_mean(pair.upper, fn, t, h, breakpoints, tol)
    return BiasReport(t, h, np.asarray(fn(t), dtype=float), lo, up, np.maximum(elo, eup))
