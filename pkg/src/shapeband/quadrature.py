"""Vectorized composite Gauss rules over kernel supports.

Rules are built for a batch of ``P`` integrals at once; each rule returns nodes
``X`` with shape ``(P, Q, d)`` and weights ``W`` with shape ``(P, Q)``.  A rule
is parameterized by a refinement level: every elementary piece is split into
``2**level`` equal parts.  :func:`integrate_adaptive` raises the level until two
consecutive estimates agree to the requested absolute tolerance.

Breakpoints (per axis, per integral) let piecewise-smooth integrands, such as
step functions, be integrated without error: pieces are cut at every
breakpoint so the Gauss rule only ever sees a polynomial on each piece.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

GAUSS_POINTS = 4


@lru_cache(maxsize=None)
def _legendre(p: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(p)
    return (x + 1.0) / 2.0, w / 2.0


def composite_nodes(edges: np.ndarray, p: int, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes on each interval of sorted ``edges`` (last axis).

    ``edges`` has shape ``(..., K + 1)``; the result has shape ``(..., K * s * p)``
    with ``s = 2**level``.  Zero-length intervals get zero weight.
    """
    s = 2**level
    u, w = _legendre(p)
    lo, hi = edges[..., :-1], edges[..., 1:]
    frac = np.arange(s) / s
    sub_lo = lo[..., :, None] + (hi - lo)[..., :, None] * frac
    sub_len = ((hi - lo) / s)[..., :, None]
    nodes = sub_lo[..., None] + sub_len[..., None] * u
    weights = np.broadcast_to(sub_len[..., None] * w, nodes.shape)
    shape = nodes.shape[:-3] + (-1,)
    return nodes.reshape(shape), np.array(weights).reshape(shape)


def _as_breaks(breaks, P: int) -> np.ndarray:
    if breaks is None:
        return np.zeros((P, 0))
    b = np.asarray(breaks, dtype=float)
    if b.ndim == 1:
        b = np.broadcast_to(b, (P, b.size))
    return b


def simplex_rule(P: int, d: int, level: int, breaks: Sequence | None = None,
                 p: int = GAUSS_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Rule for the standard simplex ``{x >= 0, sum(x) <= 1}``.

    Integration is nested axis by axis; axis ``i`` runs over
    ``[0, 1 - x_1 - ... - x_{i-1}]``.  ``breaks[i]`` (shape ``(P, K_i)``) cuts
    the pieces of axis ``i``; the points where a later axis' upper limit crosses
    one of its breakpoints are added to earlier axes as well.
    """
    bl = [_as_breaks(None if breaks is None else breaks[i], P) for i in range(d)]
    X = np.zeros((P, 1, 0))
    W = np.ones((P, 1))
    for i in range(d):
        used = X.sum(axis=-1) if i else np.zeros((P, 1))
        upper = 1.0 - used                                   # (P, Q)
        extra = [upper[..., None] - bl[k][:, None, :] for k in range(i + 1, d)]
        cuts = np.concatenate(
            [np.zeros(upper.shape + (1,)),
             np.broadcast_to(bl[i][:, None, :], upper.shape + (bl[i].shape[1],)),
             *extra, np.ones(upper.shape + (1,))], axis=-1)
        cuts = np.clip(np.sort(cuts, axis=-1), 0.0, np.maximum(upper, 0.0)[..., None])
        nodes, weights = composite_nodes(cuts, p, level)       # (P, Q, R)
        Q, R = nodes.shape[1], nodes.shape[2]
        X = np.concatenate([np.repeat(X[:, :, None, :], R, axis=2), nodes[..., None]],
                           axis=-1).reshape(P, Q * R, i + 1)
        W = (W[:, :, None] * weights).reshape(P, Q * R)
    return X, W


def ball_rule(P: int, d: int, level: int, breaks: Sequence | None = None,
              p: int = GAUSS_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Rule for the closed unit ball in spherical coordinates (d <= 3).

    The radial direction uses composite Gauss-Legendre, angles use the
    periodic trapezoid rule (azimuth) and Gauss-Legendre in ``cos(polar)``.
    ``breaks`` is honoured in d=1 only.
    """
    if d == 1:
        b = _as_breaks(None if breaks is None else breaks[0], P)
        cuts = np.concatenate([np.full((P, 1), -1.0), np.zeros((P, 1)), b,
                               np.ones((P, 1))], axis=-1)
        cuts = np.clip(np.sort(cuts, axis=-1), -1.0, 1.0)
        x, w = composite_nodes(cuts, p, level)
        return x[..., None], w
    r, wr = composite_nodes(np.array([0.0, 1.0]), p, level)
    M = 8 * 2**level
    phi = 2 * np.pi * np.arange(M) / M
    wphi = np.full(M, 2 * np.pi / M)
    if d == 2:
        R, PH = np.meshgrid(r, phi, indexing="ij")
        X = np.stack([R * np.cos(PH), R * np.sin(PH)], axis=-1).reshape(-1, 2)
        W = (np.outer(wr * r, wphi)).reshape(-1)
    elif d == 3:
        c, wc = composite_nodes(np.array([-1.0, 1.0]), p, level)
        R, C, PH = np.meshgrid(r, c, phi, indexing="ij")
        S = np.sqrt(1.0 - C**2)
        X = np.stack([R * S * np.cos(PH), R * S * np.sin(PH), R * C], axis=-1).reshape(-1, 3)
        W = (wr[:, None, None] * r[:, None, None] ** 2 * wc[None, :, None]
             * wphi[None, None, :]).reshape(-1)
    else:
        raise NotImplementedError("ball quadrature is implemented for d <= 3")
    return np.broadcast_to(X, (P,) + X.shape), np.broadcast_to(W, (P,) + W.shape)


def box_rule(P: int, d: int, level: int, breaks: Sequence | None = None,
             p: int = GAUSS_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Tensor rule over ``[-1, 1]^d`` (used for user-supplied kernels)."""
    axes = []
    for i in range(d):
        b = _as_breaks(None if breaks is None else breaks[i], P)
        cuts = np.concatenate([np.full((P, 1), -1.0), np.zeros((P, 1)), b, np.ones((P, 1))], -1)
        axes.append(composite_nodes(np.clip(np.sort(cuts, -1), -1.0, 1.0), p, level))
    X = np.zeros((P, 1, 0))
    W = np.ones((P, 1))
    for nodes, weights in axes:
        R = nodes.shape[1]
        Q = X.shape[1]
        X = np.concatenate([np.repeat(X[:, :, None, :], R, axis=2),
                            np.broadcast_to(nodes[:, None, :, None], (P, Q, R, 1))],
                           axis=-1).reshape(P, Q * R, -1)
        W = (W[:, :, None] * weights[:, None, :]).reshape(P, Q * R)
    return X, W


Rule = Callable[..., tuple[np.ndarray, np.ndarray]]


def integrate_adaptive(rule: Rule, integrand: Callable[[np.ndarray], np.ndarray], P: int,
                       d: int, breaks=None, tol: float = 1e-8, max_level: int = 6,
                       min_level: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Integrate ``integrand(X) -> (P, Q)`` with successive refinement.

    Returns ``(values, error_estimates)``; the error estimate is the absolute
    difference between the last two levels.  Refinement stops once every
    integral in the batch meets ``tol`` or ``max_level`` is reached.
    """

    def estimate(level):
        X, W = rule(P, d, level, breaks)
        return np.sum(integrand(X) * W, axis=-1)

    prev = estimate(min_level)
    for level in range(min_level + 1, max_level + 1):
        cur = estimate(level)
        err = np.abs(cur - prev)
        if np.all(err <= tol):
            return cur, err
        prev = cur
    return prev, err
