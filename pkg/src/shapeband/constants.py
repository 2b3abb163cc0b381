"""Leading constants of the optimal band widths and local width predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import KernelId, ShapeClass, get_kernel


class ZeroCurvatureError(ValueError):
    pass


@dataclass(frozen=True)
class OptimalityConstants:
    shape_class: ShapeClass
    d: int
    exponent: float          # rho_n = (log(en)/n) ** exponent
    lower: float
    upper: float
    lower_star: float | None = None
    upper_star: float | None = None
    alpha_d: float | None = None

    def rho(self, n: int) -> float:
        return (math.log(math.e * n) / n) ** self.exponent


def optimal_constants(shape_class: ShapeClass | str, d: int) -> OptimalityConstants:
    sc = ShapeClass(shape_class)
    if d < 1:
        raise ValueError("d must be positive")
    if sc is ShapeClass.ISOTONIC:
        def delta(kid):
            return ((d + 2) / (2 * d) * get_kernel(kid, d).l2_norm_sq()) ** (-1.0 / (2 + d))
        return OptimalityConstants(sc, d, 1.0 / (2 + d), delta(KernelId.ISO_LOWER),
                                   delta(KernelId.ISO_UPPER))
    alpha_d = math.sqrt(2 * (d + 3) / (d + 1))
    p = -2.0 / (4 + d)
    lower = ((d + 4) / (2 * d) * alpha_d**d * get_kernel(KernelId.CVX_LOWER, d).l2_norm_sq()) ** p
    upper = ((d + 4) / (2 * d) * math.sqrt(2) ** d
             * get_kernel(KernelId.CVX_UPPER, d).l2_norm_sq()) ** p
    inflate = d ** (d / (d + 4))
    return OptimalityConstants(sc, d, 2.0 / (4 + d), lower, upper, lower * inflate,
                               upper * inflate, alpha_d)


@dataclass(frozen=True)
class LocalCurvature:
    L1: float | None = None
    L2: float | None = None
    L2_star: float | None = None
    diagonal: bool | None = None


def local_curvature(fn, t0, shape_class) -> LocalCurvature:
    """Geometric mean of the gradient (isotonic) or of the Hessian spectrum and
    diagonal (convex) at ``t0``."""
    t0 = np.asarray(t0, dtype=float)
    if ShapeClass(shape_class) is ShapeClass.ISOTONIC:
        if fn.gradient is None:
            raise ValueError(f"{fn.id} has no analytic gradient")
        g = np.asarray(fn.gradient(t0), dtype=float)
        if np.any(g <= 0):
            raise ZeroCurvatureError(f"gradient {g} of {fn.id} at {tuple(t0)} has a zero component")
        return LocalCurvature(L1=float(np.prod(g) ** (1 / g.size)))
    if fn.hessian is None:
        raise ValueError(f"{fn.id} has no analytic Hessian")
    H = np.asarray(fn.hessian(t0), dtype=float)
    d = H.shape[0]
    det = float(np.linalg.det(H))
    diag = np.diag(H)
    if det <= 0 or np.any(diag <= 0):
        raise ZeroCurvatureError(f"Hessian of {fn.id} at {tuple(t0)} is singular")
    off = H - np.diag(diag)
    return LocalCurvature(L2=det ** (1 / d), L2_star=float(np.prod(diag) ** (1 / d)),
                          diagonal=bool(np.all(np.abs(off) <= 1e-12 * np.abs(diag).max())))


def predicted_width(fn, t0, n: int, shape_class) -> dict:
    """Leading-order one-sided deviations ``f - lower`` and ``upper - f`` at ``t0``.

    Diagnostic only: the bands themselves never use these values.
    """
    sc = ShapeClass(shape_class)
    d = len(t0)
    c = optimal_constants(sc, d)
    rho = c.rho(n)
    curv = local_curvature(fn, t0, sc)
    if sc is ShapeClass.ISOTONIC:
        scale = curv.L1 ** (d / (2 + d)) * rho
        return {"lower": c.lower * scale, "upper": c.upper * scale, "case": "isotonic"}
    if curv.diagonal:
        scale = curv.L2 ** (d / (4 + d)) * rho
        return {"lower": c.lower * scale, "upper": c.upper * scale, "case": "diagonal"}
    scale = curv.L2_star ** (d / (4 + d)) * rho
    return {"lower": c.lower_star * scale, "upper": c.upper_star * scale, "case": "general"}


def format_constants(c: OptimalityConstants) -> str:
    rows = [("class", c.shape_class.value), ("d", str(c.d)), ("exponent", f"{c.exponent:.6g}"),
            ("delta_lower", f"{c.lower:.5f}"), ("delta_upper", f"{c.upper:.5f}")]
    if c.lower_star is not None:
        rows += [("delta_lower_star", f"{c.lower_star:.5f}"),
                 ("delta_upper_star", f"{c.upper_star:.5f}"), ("alpha_d", f"{c.alpha_d:.6g}")]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)
