"""Monte Carlo critical values for the combined statistic ``T*``.

Under pure noise ``T* = max(T(psi_lower), T(-psi_upper))`` does not depend on
the regression function, so its ``1 - alpha`` quantile can be simulated once
per (grid, kernel pair, bandwidth policy).  Replicate ``i`` always draws its
noise from the counter-based stream ``(seed, CALIBRATION, i)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kvfile, rng
from .engine import tstar_batch
from .grid import BandwidthPolicy, GridDesign
from .kernels import KernelPair

FORMAT = "shapeband-calibration"
VERSION = 1
CHUNK = 50
BOOTSTRAP_RESAMPLES = 500
MIN_NSIM = 100


class CalibrationError(ValueError):
    pass


class ContextMismatchError(CalibrationError):
    def __init__(self, field_name: str, stored, expected):
        super().__init__(f"calibration context mismatch in {field_name}: "
                         f"stored {stored!r}, expected {expected!r}")
        self.field = field_name


def default_nsim(m: int) -> int:
    return 2000 if m <= 30 else 1000


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("SHAPEBAND_THREADS", "1")))
    except ValueError:
        return 1


def upper_order_statistic(samples: np.ndarray, alpha: float) -> float:
    """The ``ceil((1 - alpha) * n)``-th smallest value (1-based)."""
    s = np.sort(np.asarray(samples, dtype=float))
    # guard against 0.95 * 2000 = 1900.0000000000002 style round-up
    rank = math.ceil(round((1.0 - alpha) * s.size, 9))
    return float(s[min(max(rank, 1), s.size) - 1])


def bootstrap_se(samples: np.ndarray, alpha: float, seed: int,
                 resamples: int = BOOTSTRAP_RESAMPLES) -> float:
    s = np.asarray(samples, dtype=float)
    gen = rng.stream(seed, rng.BOOTSTRAP, 0)
    idx = gen.integers(0, s.size, size=(resamples, s.size))
    rank = min(max(math.ceil(round((1.0 - alpha) * s.size, 9)), 1), s.size) - 1
    q = np.partition(s[idx], rank, axis=1)[:, rank]
    return float(np.std(q, ddof=1))


@dataclass(frozen=True)
class Calibration:
    alpha: float
    kappa: float
    nsim: int
    seed: int
    m: int
    d: int
    kernel_pair: str
    policy: str
    se: float
    samples: tuple[float, ...] = field(default=(), repr=False)

    def context(self) -> dict:
        return dict(m=self.m, d=self.d, kernel_pair=self.kernel_pair, policy=self.policy,
                    alpha=self.alpha)

    def at_alpha(self, alpha: float) -> "Calibration":
        """Same replicates, different level."""
        if not self.samples:
            raise CalibrationError("replicate values were not retained")
        s = np.array(self.samples)
        return replace(self, alpha=alpha, kappa=upper_order_statistic(s, alpha),
                       se=bootstrap_se(s, alpha, self.seed))

    def check_context(self, **expected) -> None:
        stored = self.context()
        for key, value in expected.items():
            if value is None:
                continue
            if key == "policy":
                value = BandwidthPolicy(value).value
            if stored[key] != value:
                raise ContextMismatchError(key, stored[key], value)


def replicate_tstar(grid: GridDesign, pair: KernelPair, policy: BandwidthPolicy, seed: int,
                    indices: range) -> np.ndarray:
    noise = np.stack([rng.normal_field(seed, rng.CALIBRATION, i, grid.shape) for i in indices])
    tl, tu = tstar_batch(grid, pair.lower, pair.upper, noise, policy)
    return np.maximum(tl, tu)


def simulate_tstar(grid: GridDesign, pair: KernelPair, policy: BandwidthPolicy, nsim: int,
                   seed: int, threads: int | None = None) -> np.ndarray:
    """``T*`` for replicates ``0..nsim-1``; chunking is fixed, so the values do
    not depend on the number of threads."""
    policy = BandwidthPolicy(policy)
    chunks = [range(a, min(a + CHUNK, nsim)) for a in range(0, nsim, CHUNK)]
    threads = threads or default_threads()
    work = lambda r: replicate_tstar(grid, pair, policy, seed, r)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(r) for r in chunks]
    return np.concatenate(parts)


def calibrate(grid: GridDesign, pair: KernelPair, policy: BandwidthPolicy | str = None,
              alpha: float = 0.05, nsim: int | None = None, seed: int = 0,
              threads: int | None = None) -> Calibration:
    if not 0.001 < alpha <= 0.5:
        raise CalibrationError(f"alpha must lie in (0.001, 0.5], got {alpha}")
    nsim = default_nsim(grid.m) if nsim is None else nsim
    if nsim < MIN_NSIM:
        raise CalibrationError(f"nsim must be at least {MIN_NSIM}, got {nsim}")
    if pair.d != grid.d:
        raise CalibrationError("kernel pair dimension does not match the grid")
    policy = BandwidthPolicy(policy or BandwidthPolicy.default_for(grid.m, grid.d))
    samples = simulate_tstar(grid, pair, policy, nsim, seed, threads)
    if not np.all(np.isfinite(samples)):
        raise CalibrationError("non-finite replicate statistic")
    return Calibration(alpha=alpha, kappa=upper_order_statistic(samples, alpha), nsim=nsim,
                       seed=seed, m=grid.m, d=grid.d, kernel_pair=pair.id, policy=policy.value,
                       se=bootstrap_se(samples, alpha, seed),
                       samples=tuple(float(x) for x in samples))


def save_calibration(cal: Calibration, path) -> None:
    fields = {
        "alpha": cal.alpha.hex(),
        "kappa": cal.kappa.hex(),
        "kappa_decimal": repr(cal.kappa),
        "nsim": str(cal.nsim),
        "seed": str(cal.seed),
        "m": str(cal.m),
        "d": str(cal.d),
        "kernel_pair": cal.kernel_pair,
        "policy": cal.policy,
        "se": cal.se.hex(),
        "samples": ",".join(float(x).hex() for x in cal.samples),
    }
    kvfile.write(path, FORMAT, VERSION, fields)


def load_calibration(path, **expected) -> Calibration:
    """Load a calibration record; keyword arguments (``m``, ``d``,
    ``kernel_pair``, ``policy``, ``alpha``) must match the stored context."""
    f = kvfile.read(path, FORMAT, VERSION)
    try:
        samples = tuple(float.fromhex(x) for x in f["samples"].split(",")) if f["samples"] else ()
        cal = Calibration(alpha=float.fromhex(f["alpha"]), kappa=float.fromhex(f["kappa"]),
                          nsim=int(f["nsim"]), seed=int(f["seed"]), m=int(f["m"]), d=int(f["d"]),
                          kernel_pair=f["kernel_pair"], policy=f["policy"],
                          se=float.fromhex(f["se"]), samples=samples)
    except (KeyError, ValueError) as exc:
        raise kvfile.IntegrityError(f"malformed calibration record: {exc}") from None
    cal.check_context(**expected)
    return cal


def cache_path(cache_dir, grid: GridDesign, pair: KernelPair, policy, alpha: float, nsim: int,
               seed: int) -> Path:
    name = (f"cal_{pair.id}_m{grid.m}_d{grid.d}_{BandwidthPolicy(policy).value}"
            f"_a{alpha:g}_n{nsim}_s{seed}.kv")
    return Path(cache_dir) / name


def cached_calibration(cache_dir, grid: GridDesign, pair: KernelPair, policy=None,
                       alpha: float = 0.05, nsim: int | None = None, seed: int = 0,
                       threads: int | None = None) -> Calibration:
    """Load from ``cache_dir`` when a matching record exists, else compute and store."""
    policy = BandwidthPolicy(policy or BandwidthPolicy.default_for(grid.m, grid.d))
    nsim = default_nsim(grid.m) if nsim is None else nsim
    if cache_dir is None:
        return calibrate(grid, pair, policy, alpha, nsim, seed, threads)
    path = cache_path(cache_dir, grid, pair, policy, alpha, nsim, seed)
    if path.exists():
        try:
            cal = load_calibration(path, m=grid.m, d=grid.d, kernel_pair=pair.id,
                                   policy=policy, alpha=alpha)
            if cal.nsim == nsim and cal.seed == seed:
                return cal
        except (kvfile.IntegrityError, CalibrationError):
            pass
    cal = calibrate(grid, pair, policy, alpha, nsim, seed, threads)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_calibration(cal, path)
    return cal
