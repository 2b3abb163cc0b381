"""Command line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bands as bands_mod
from . import calibration as cal_mod
from . import constants as const_mod
from . import sim
from .grid import (BandwidthPolicy, FieldFormatError, GridMismatchError, make_grid, read_field_csv,
                   write_field_csv)
from .kernels import ShapeClass, kernel_pair


class ValidationError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"invalid {field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    subcommand: str
    shape_class: str | None = None
    m: int | None = None
    d: int = 2
    alpha: float = 0.05
    nsim: int | None = None
    replicates: int = 200
    seed: int = 0
    policy: str | None = None
    sigma: float = 1.0
    threads: int | None = None
    function: str | None = None
    data: str | None = None
    cal: str | None = None
    out: str | None = None
    plot_data: str | None = None
    cache_dir: str | None = None
    grids: tuple[int, ...] = ()
    regions: tuple[str, ...] = ()
    all_builtins: bool = False

    def validate(self) -> "RunConfig":
        if self.shape_class is not None and self.shape_class not in ("isotonic", "convex"):
            raise ValidationError("class", f"{self.shape_class!r} is not isotonic or convex")
        if self.m is not None and self.m < 4:
            raise ValidationError("m", "must be at least 4")
        if self.d < 1:
            raise ValidationError("d", "must be at least 1")
        if not 0.001 < self.alpha <= 0.5:
            raise ValidationError("alpha", f"{self.alpha} outside (0.001, 0.5]")
        if self.nsim is not None and self.nsim < cal_mod.MIN_NSIM:
            raise ValidationError("nsim", f"must be at least {cal_mod.MIN_NSIM}")
        if self.replicates < 1:
            raise ValidationError("reps", "must be positive")
        if self.seed < 0:
            raise ValidationError("seed", "must be non-negative")
        if not self.sigma > 0:
            raise ValidationError("sigma", "must be positive")
        if self.threads is not None and self.threads < 1:
            raise ValidationError("threads", "must be positive")
        if self.policy is not None and self.policy not in ("full", "dyadic"):
            raise ValidationError("policy", f"{self.policy!r} is not full or dyadic")
        if self.function is not None and self.function not in sim.builtin_functions():
            raise ValidationError("function", f"unknown function {self.function!r}")
        if any(g < 4 for g in self.grids):
            raise ValidationError("grids", "every grid size must be at least 4")
        return self

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ";".join(str(x) for x in v)
            lines.append(f"{f.name}={'' if v is None else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        raw = dict(line.split("=", 1) for line in text.splitlines() if line)
        kw = {}
        for f in dataclasses.fields(cls):
            s = raw.get(f.name, "")
            if f.name in ("grids", "regions"):
                parts = [p for p in s.split(";") if p]
                kw[f.name] = tuple(int(p) for p in parts) if f.name == "grids" else tuple(parts)
            elif f.name == "all_builtins":
                kw[f.name] = s == "True"
            elif s == "":
                kw[f.name] = None if f.default is None else f.default
            elif f.type in ("int", "int | None"):
                kw[f.name] = int(s)
            elif f.type in ("float", "float | None"):
                kw[f.name] = float(s)
            else:
                kw[f.name] = s
        return cls(**kw)


def _policy(cfg: RunConfig, m: int, d: int) -> BandwidthPolicy:
    return BandwidthPolicy(cfg.policy) if cfg.policy else BandwidthPolicy.default_for(m, d)


def _require(cfg: RunConfig, *names):
    for name in names:
        if getattr(cfg, name) is None:
            raise ValidationError(name.replace("_", "-"), "is required")


def cmd_calibrate(cfg: RunConfig) -> int:
    _require(cfg, "shape_class", "m", "out")
    grid = make_grid(cfg.m, cfg.d)
    pair = kernel_pair(cfg.shape_class, cfg.d)
    cal = cal_mod.calibrate(grid, pair, _policy(cfg, cfg.m, cfg.d), cfg.alpha, cfg.nsim,
                            cfg.seed, cfg.threads)
    cal_mod.save_calibration(cal, cfg.out)
    print(f"kappa={cal.kappa!r} se={cal.se:.4g} nsim={cal.nsim} grid={cal.m}^{cal.d} "
          f"pair={cal.kernel_pair} policy={cal.policy} -> {cfg.out}")
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    _require(cfg, "function", "m", "out")
    grid = make_grid(cfg.m, cfg.d)
    fn = sim.builtin_functions()[cfg.function]
    data = sim.generate_data(fn, grid, cfg.sigma, cfg.seed)
    write_field_csv(cfg.out, data)
    print(f"wrote {grid.n} observations of {fn.formula} (sigma={cfg.sigma}) -> {cfg.out}")
    return 0


def cmd_band(cfg: RunConfig) -> int:
    _require(cfg, "data", "cal", "out", "shape_class")
    cal = cal_mod.load_calibration(cfg.cal)
    grid = make_grid(cal.m, cal.d)
    values = read_field_csv(cfg.data, grid)
    pair = kernel_pair(cfg.shape_class, grid.d)
    band = bands_mod.build_bands(values, pair, cal, cfg.policy, cfg.sigma)
    bands_mod.write_band_csv(cfg.out, band)
    truth = None
    if cfg.function:
        truth = sim.builtin_functions()[cfg.function].on_grid(grid)
    if cfg.plot_data:
        bands_mod.write_plot_data(cfg.plot_data, band, truth)
    w = bands_mod.width_profile(band)
    w_min = float(band.width[~band.vacuous].min())
    line = f"width min={w_min:.6g} median={w.median:.6g} max={w.max:.6g} points={w.count}"
    if truth is not None:
        line += f" covered={bands_mod.check_coverage(band, truth).covered}"
    print(line)
    return 0


def _row_grid(cfg: RunConfig, default_m: int):
    return make_grid(cfg.m or default_m, cfg.d)


def cmd_coverage(cfg: RunConfig) -> int:
    fns = sim.builtin_functions()
    if cfg.all_builtins:
        rows = [(fid, sc.value, m) for fid, sc, m, _ in sim.REFERENCE_ROWS]
    else:
        _require(cfg, "function", "shape_class")
        rows = [(cfg.function, cfg.shape_class, 50)]
    reports = []
    for fid, sc, default_m in rows:
        grid = _row_grid(cfg, default_m)
        pair = kernel_pair(sc, grid.d)
        policy = _policy(cfg, grid.m, grid.d)
        cal = cal_mod.cached_calibration(cfg.cache_dir, grid, pair, policy, cfg.alpha, cfg.nsim,
                                         cfg.seed, cfg.threads)
        reports.append(sim.coverage_study(fns[fid], sc, grid, cfg.alpha, cfg.replicates, cal,
                                          cfg.seed, policy, cfg.sigma, cfg.threads,
                                          min_replicates=1))
    print(sim.coverage_table(reports, sim.reference_coverage() if cfg.all_builtins else None))
    if cfg.out:
        sim.write_reports(cfg.out, reports)
    return 0


def cmd_rates(cfg: RunConfig) -> int:
    _require(cfg, "function", "shape_class")
    grids = cfg.grids or (16, 24, 32, 48)
    region = (bands_mod.Box.parse(cfg.regions[0], cfg.d) if cfg.regions else
              bands_mod.Box((0.25,) * cfg.d, (0.75,) * cfg.d))
    fn = sim.builtin_functions()[cfg.function]
    table = sim.rate_diagnostic(fn, cfg.shape_class, grids, cfg.alpha, region, cfg.seed, cfg.d,
                                cfg.replicates, cfg.nsim, cfg.policy, cfg.cache_dir, cfg.threads)
    print(table.format())
    if cfg.out:
        with open(cfg.out, "w") as fh:
            json.dump(dataclasses.asdict(table), fh, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_constants(cfg: RunConfig, fmt: str = "text") -> int:
    _require(cfg, "shape_class")
    c = const_mod.optimal_constants(cfg.shape_class, cfg.d)
    if fmt == "json":
        doc = {k: (v.value if isinstance(v, ShapeClass) else v)
               for k, v in dataclasses.asdict(c).items()}
        print(json.dumps(doc, sort_keys=True))
    else:
        print(const_mod.format_constants(c))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapeband",
                                description="Honest confidence bands for monotone and convex "
                                            "regression on gridded designs.")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp, *, need_class=False, grid=True):
        sp.add_argument("--class", dest="shape_class", choices=["isotonic", "convex"],
                        required=need_class)
        if grid:
            sp.add_argument("--m", type=int)
            sp.add_argument("--d", type=int, default=2)
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--policy", choices=["full", "dyadic"])
        sp.add_argument("--threads", type=int)
        sp.add_argument("--sigma", type=float, default=1.0)

    sp = sub.add_parser("calibrate", help="simulate the critical value and cache it")
    common(sp, need_class=True)
    sp.add_argument("--nsim", type=int)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("simulate", help="write gridded data for a built-in function")
    common(sp)
    sp.add_argument("--function", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("band", help="confidence band for a data CSV")
    common(sp, need_class=True, grid=False)
    sp.add_argument("--data", required=True)
    sp.add_argument("--cal", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--plot-data", dest="plot_data")
    sp.add_argument("--function", help="built-in truth for the plot data and coverage line")

    sp = sub.add_parser("coverage", help="coverage study (reference-row layout)")
    common(sp)
    sp.add_argument("--function")
    sp.add_argument("--all-builtins", action="store_true", dest="all_builtins")
    sp.add_argument("--reps", type=int, default=200, dest="replicates")
    sp.add_argument("--nsim", type=int)
    sp.add_argument("--cache-dir", dest="cache_dir")
    sp.add_argument("--out")

    sp = sub.add_parser("rates", help="band width versus sample size")
    common(sp, need_class=True)
    sp.add_argument("--function", required=True)
    sp.add_argument("--grids", default="16,24,32,48")
    sp.add_argument("--region", action="append", dest="regions", default=[])
    sp.add_argument("--reps", type=int, default=10, dest="replicates")
    sp.add_argument("--nsim", type=int)
    sp.add_argument("--cache-dir", dest="cache_dir")
    sp.add_argument("--out")

    sp = sub.add_parser("constants", help="optimal width constants")
    sp.add_argument("--class", dest="shape_class", choices=["isotonic", "convex"], required=True)
    sp.add_argument("--d", type=int, default=2)
    sp.add_argument("--format", choices=["text", "json"], default="text")
    return p


COMMANDS = {"calibrate": cmd_calibrate, "simulate": cmd_simulate, "band": cmd_band,
            "coverage": cmd_coverage, "rates": cmd_rates}


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    kw = {f.name: getattr(ns, f.name) for f in dataclasses.fields(RunConfig)
          if hasattr(ns, f.name) and f.name not in ("grids", "regions")}
    if getattr(ns, "grids", None):
        try:
            kw["grids"] = tuple(int(g) for g in ns.grids.split(","))
        except ValueError:
            raise ValidationError("grids", f"{ns.grids!r} is not a comma-separated list") from None
    kw["regions"] = tuple(getattr(ns, "regions", ()) or ())
    if kw.get("d") is None:
        kw["d"] = 2
    return RunConfig(**kw)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns).validate()
        if ns.subcommand == "constants":
            return cmd_constants(cfg, ns.format)
        return COMMANDS[ns.subcommand](cfg)
    except (ValidationError, FieldFormatError, GridMismatchError,
            cal_mod.ContextMismatchError) as exc:
        print(f"shapeband {ns.subcommand}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # single-line diagnostic, exit 1
        print(f"shapeband {ns.subcommand}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
