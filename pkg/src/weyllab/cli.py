"""Command line entry point: ``weyllab <subcommand> [flags]``.

Exit status: 0 on success, 2 when a built-in check fails, 3 on a configuration
error, 1 for any other library error (printed with its module-qualified code).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import BACKEND, __version__
from .box import ResonanceProblem, amplitude_check, find_resonant_lambda, schedule_parameters
from .config import ExperimentConfig, load_config
from .dynamics import attach_det_terms, separation_report
from .errors import ConfigError, WeylLabError
from .fuchsian import (
    build_length_spectrum,
    bump_metric,
    cache_dir,
    cache_key,
    read_spectrum_csv,
    resolve_surface,
    store_spectrum,
    verify_spectrum,
    write_spectrum_csv,
)
from .report import write_csv, write_json, write_plot_data
from .spectral import (
    CountingRemainder,
    TimeCutoff,
    TraceRecord,
    counting_and_remainders,
    kappa_spectral,
    l1_average,
    make_kernel,
    model_spectrum,
    riesz_mean,
    sigma_geometric,
)
from .thermo import entropy_fit, exponent_ratio, grid_from_spec, orbit_sums, pressure_fit, write_series_csv

SUBCOMMANDS = ("spectrum", "pressure", "trace", "box", "riesz", "separation", "report")


class CheckFailed(Exception):
    pass


# ---------------------------------------------------------------- shared steps

class Context:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self._gs = None
        self._metric = None
        self._spectra = {}

    @property
    def group(self):
        if self._gs is None:
            try:
                self._gs = resolve_surface(self.cfg.surface)
            except (OSError, KeyError, ValueError) as exc:
                raise ConfigError(f"cannot resolve surface {self.cfg.surface!r}: {exc}") from None
        return self._gs

    @property
    def metric(self):
        if self.cfg.amplitude == 0.0:
            return None
        if self._metric is None:
            c = self.cfg
            self._metric = bump_metric(self.group, c.amplitude, c.bump_radius, valid_radius=c.valid_radius)
        return self._metric

    @property
    def metric_tag(self):
        c = self.cfg
        if c.amplitude == 0.0:
            return "hyperbolic+det"
        return f"bump(a={c.amplitude!r},r={c.bump_radius!r},R={c.valid_radius!r})+det"

    def spectrum(self, T, conjugates=False):
        """Length spectrum to T with detTerms, from the cache when allowed."""
        key = (T, conjugates)
        if key in self._spectra:
            return self._spectra[key]
        gs = self.group
        ck = cache_key(gs, T, self.metric_tag)
        d = cache_dir()
        csv_path, meta_path = d / f"{ck}.csv", d / f"{ck}.json"
        ls = None
        if self.cfg.cache and not conjugates and csv_path.exists() and meta_path.exists():
            meta = json.loads(meta_path.read_text())
            ls = read_spectrum_csv(csv_path, meta["cutoff"], meta["certificate"], gs)
        if ls is None:
            base = build_length_spectrum(gs, T)
            ls, _, _ = attach_det_terms(base, self.metric, threads=self.cfg.threads)
            if self.cfg.cache:
                store_spectrum(ls, ck)
        self._spectra[key] = (ls, ck)
        return ls, ck

    def kernel(self):
        return make_kernel(self.cfg.resolution)

    def time_cutoff(self, ls):
        k = self.kernel()
        if self.cfg.T0 is not None:
            return TimeCutoff(self.cfg.T0, k)
        K1 = 1.0 if self.metric is None else self.metric.K1
        return TimeCutoff.from_geometry(k, float(ls.lengths.min()), K1=K1)

    def meta(self, **extra):
        d = {"configHash": self.cfg.hash(), "surface": self.cfg.surface}
        d.update(extra)
        return d


def _grid(text):
    return grid_from_spec(text)


# ---------------------------------------------------------------- subcommands

def cmd_spectrum(ctx: Context):
    T = ctx.cfg.T
    ls, ck = ctx.spectrum(T)
    write_spectrum_csv(ls, ctx.out / "spectrum.csv")
    err = verify_spectrum(ctx.group, ls) if ctx.metric is None else None
    L = ls.lengths
    summary = ctx.meta(T=T, cacheKey=ck, count=len(ls), systole=float(L.min()) if L.size else None,
                       distinct=int(len(ls.distinctLengths[0])), verifyError=err,
                       certificate=ls.certificate)
    write_json(summary, ctx.out / "spectrum.json")
    print(f"spectrum: {len(ls)} classes with L <= {T:g}, systole {summary['systole']:.12g}")
    if err is not None and err > 1e-9:
        raise CheckFailed(f"cached lengths disagree with the generators by {err:.3g}")


def _pressure(ctx: Context):
    grid = _grid(ctx.cfg.Tgrid)
    ls, ck = ctx.spectrum(float(grid.max()))
    series = orbit_sums(ls, grid)
    p = pressure_fit(series, ctx.cfg.window)
    h = entropy_fit(series, ctx.cfg.entropy_window)
    return series, p, h, ck


def cmd_pressure(ctx: Context):
    series, p, h, ck = _pressure(ctx)
    write_series_csv(series, ctx.out / "series.csv")
    res = ctx.meta(cacheKey=ck, slope=p.slope, intercept=p.intercept, residual=p.residual,
                   window=list(p.window), entropySlope=h.slope, entropyRawSlope=h.raw_slope,
                   entropyWindow=list(h.window), entropyFlags=list(h.flags),
                   ratio=exponent_ratio(p, h))
    if ctx.metric is not None:
        res["K1"], res["K2"] = ctx.metric.K1, ctx.metric.K2
        res["ratioBound"] = ctx.metric.K2 / (2 * ctx.metric.K1)
    write_json(res, ctx.out / "pressure.json")
    print(f"pressure: slope {p.slope:.12g}  entropy slope {h.slope:.12g}  ratio {res['ratio']:.12g}")
    return res, series, p, h


def _eigen_source(ctx: Context, coverage):
    spec = ctx.cfg.trace_spectrum
    if spec in ("none", ""):
        return None
    if spec == "circle":
        return model_spectrum("circle", coverage=coverage)
    if spec.startswith("torus"):
        n = int(spec[5:] or 2)
        return model_spectrum("torus", coverage=coverage, n=n)
    if spec == "sphere3":
        return model_spectrum("sphere3", coverage=coverage)
    return model_spectrum("file", path=spec)


def cmd_trace(ctx: Context):
    T = ctx.cfg.T
    lams = _grid(ctx.cfg.lambda_grid)
    k = ctx.kernel()
    sd = _eigen_source(ctx, float(lams.max()) + k.x_tail / T + 1.0)
    ls = tc = None
    if ctx.cfg.surface not in ("none", ""):
        ls, _ = ctx.spectrum(T)
        tc = ctx.time_cutoff(ls)
    recs = []
    for lam in lams:
        r = TraceRecord(float(lam), T)
        if sd is not None:
            if sd.dimension in (1, 2):
                r.kappa = kappa_spectral(sd, k, lam, T)
            r.N, r.R, r.Rosc = (float(x) for x in counting_and_remainders(sd, lam))
        if ls is not None:
            r.sigma = sigma_geometric(ls, tc, k, lam, T)
        recs.append(r)
    rows = [r.as_dict() for r in recs]
    write_json(ctx.meta(T=T, T0=None if tc is None else tc.T0, records=rows), ctx.out / "trace.json")
    cols = ["lambda", "T", "kappa", "sigma", "N", "R", "Rosc"]
    write_csv(cols, [[d[c] for c in cols] for d in rows], ctx.out / "trace.csv")
    print(f"trace: {len(recs)} records at T = {T:g}")


def _box(ctx: Context):
    c = ctx.cfg
    T = c.box_T if c.box_T is not None else c.T
    ls, _ = ctx.spectrum(T)
    tc = ctx.time_cutoff(ls)
    h = c.h if c.h is not None else 1.0
    sch = schedule_parameters(T, c.eps, h, c.P_half, M1_override=c.M1)
    rp = ResonanceProblem.from_spectrum(ls, T, sch.M1, T0=tc.T0, tolerance=c.tolerance)
    lam = find_resonant_lambda(rp)
    rep = amplitude_check(ls, lam, T, c.eps, tc, ctx.kernel(), rp, P_half=c.P_half)
    d = rep.as_dict()
    d.update(ctx.meta(T=T, T0=tc.T0, eps=c.eps, h=h, alpha=sch.alpha, scheduleFlags=list(sch.flags)))
    return d


def cmd_box(ctx: Context):
    d = _box(ctx)
    write_json(d, ctx.out / "box.json")
    print(f"box: lambda {d['lambda']!r} maxPhase {d['maxPhase']!r} sigma {d['sigmaValue']!r}"
          f" >= {d['lowerBound']!r}: {'pass' if d['pass'] else 'FAIL'}")
    if not d["pass"]:
        raise CheckFailed("amplitude inequality failed")


def cmd_riesz(ctx: Context):
    c = ctx.cfg
    lams = _grid(c.riesz_grid)
    model = c.riesz_model
    cov = float(lams.max()) + 1.0
    if model == "sphere3":
        sd = model_spectrum("sphere3", coverage=cov)
    elif model.startswith("torus"):
        sd = model_spectrum("torus", coverage=cov, n=int(model[5:] or 3))
    elif model.startswith("file:"):
        sd = model_spectrum("file", path=model[5:])
    else:
        raise ConfigError(f"unknown riesz.model {model!r}")
    R = CountingRemainder(sd, "weyl")
    p = sd.dimension - 2
    rows = []
    ratios = []
    for lam in lams:
        N, Rw, Ro = counting_and_remainders(sd, lam)
        rk = riesz_mean(R, lam, c.riesz_order)
        ratio = rk / lam**p
        ratios.append(ratio)
        rows.append([lam, int(N), Rw, Ro, rk, ratio, l1_average(R, lam)])
    cols = ["lambda", "N", "R", "Rosc", "RkR", "RkR_scaled", "L1avg"]
    write_csv(cols, rows, ctx.out / "riesz.csv")
    r = np.array(ratios)
    mean = float(r.mean())
    summ = ctx.meta(model=model, dimension=sd.dimension, order=c.riesz_order, heatA1=sd.heatA1,
                    meanScaled=mean, relStd=float(r.std() / abs(mean)) if mean else None)
    write_json(summ, ctx.out / "riesz.json")
    print(f"riesz: {model} mean R_{c.riesz_order}R/lambda^{p} = {mean:.12g}")


def cmd_separation(ctx: Context):
    c = ctx.cfg
    ls, _ = ctx.spectrum(c.T, conjugates=True)
    inj = float(ls.lengths.min()) / 2.0
    dp = c.delta_prime if c.delta_prime is not None else inj / 4.0
    rep = separation_report(ls, c.T, dp, c.B, step=c.sep_step)
    d = ctx.meta(T=c.T, deltaPrime=dp, B=c.B, minDistance=rep.minDistance, threshold=rep.threshold,
                 passed=rep.passed, window=list(rep.window), geodesics=rep.n_geodesics,
                 pairs=rep.n_pairs)
    write_json(d, ctx.out / "separation.json")
    print(f"separation: min distance {rep.minDistance:.12g} vs threshold {rep.threshold:.12g}")
    if not rep.passed:
        raise CheckFailed("closed geodesics closer than the separation threshold")


def cmd_report(ctx: Context):
    res, series, p, h = cmd_pressure(ctx)
    T = series.grid
    with np.errstate(divide="ignore"):
        lnS = np.where(series.S > 0, np.log(series.S), np.nan)
    write_plot_data(["T", "lnS", "fit"],
                    zip(T, lnS, p.slope * T + p.intercept), ctx.out / "pressure.dat",
                    "ln S(T) and its least-squares line")
    cnt = series.counts.astype(float)
    with np.errstate(divide="ignore"):
        lnc = np.where(cnt > 0, np.log(cnt * T), np.nan)
    write_plot_data(["T", "lnCountT", "fit"], zip(T, lnc, h.slope * T + h.intercept),
                    ctx.out / "entropy.dat", "ln(count * T) and its least-squares line")
    agg = ctx.meta(version=__version__, backend=BACKEND, pressure=res)
    for name in ("spectrum", "box", "separation", "trace", "riesz"):
        f = ctx.out / f"{name}.json"
        if f.exists():
            agg[name] = json.loads(f.read_text())
    write_json(agg, ctx.out / "report.json")
    rows = [["pressure_slope", p.slope], ["entropy_slope", h.slope], ["ratio", res["ratio"]]]
    write_csv(["quantity", "value"], rows, ctx.out / "report.csv")
    print(f"report: {ctx.out / 'report.json'}")


COMMANDS = {"spectrum": cmd_spectrum, "pressure": cmd_pressure, "trace": cmd_trace, "box": cmd_box,
            "riesz": cmd_riesz, "separation": cmd_separation, "report": cmd_report}


# ---------------------------------------------------------------- argument handling

FLAG_KEYS = {"surface": "surface.name", "T": "surface.T", "Tgrid": "surface.Tgrid",
             "eps": "box.eps", "window": "thermo.pressure_window",
             "lambda_grid": "trace.lambda_grid", "threads": "run.threads", "out": "run.out"}


def build_parser():
    ap = argparse.ArgumentParser(prog="weyllab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"weyllab {__version__} ({BACKEND})")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--surface", help="builtin name or generator file")
        sp.add_argument("--T")
        sp.add_argument("--Tgrid", metavar="a:b:step")
        sp.add_argument("--eps")
        sp.add_argument("--window", metavar="a:b")
        sp.add_argument("--lambda-grid", dest="lambda_grid", metavar="a:b:step")
        sp.add_argument("--threads")
        sp.add_argument("--no-cache", action="store_true")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    return ap


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        load_config(args.config, cfg)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value.strip(), "--set")
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag)
        if v is not None:
            cfg.set(key, v, f"--{flag.replace('_', '-')}")
    if args.no_cache:
        cfg.cache = False
    return cfg.validate()


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 3 if exc.code else 0
    try:
        cfg = config_from_args(args)
        ctx = Context(cfg)
        ctx.out.mkdir(parents=True, exist_ok=True)
        (ctx.out / "config.txt").write_text(cfg.canonical())
        COMMANDS[args.command](ctx)
    except ConfigError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 3
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 2
    except WeylLabError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
