"""Orbit sums over the length spectrum and exponential growth fits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWindow, MissingDetTerm
from .fuchsian import LengthSpectrum, cluster_lengths


@dataclass(frozen=True)
class OrbitSumSeries:
    grid: np.ndarray
    S: np.ndarray
    Sprim: np.ndarray
    counts: np.ndarray
    nuDistinct: np.ndarray
    imprimitive: np.ndarray = field(default=None)   # share of S from k >= 2 entries


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    residual: float
    window: tuple
    flags: tuple = ()
    raw_slope: float | None = None

    @property
    def C0(self) -> float:
        return math.exp(self.intercept)


def _terms(ls: LengthSpectrum, Tmax):
    """Sorted (length, L/sqrt(det), L#/sqrt(det), power) arrays for entries up to Tmax."""
    ents = [e for e in ls.entries if e.length <= Tmax]
    if any(not math.isfinite(e.detTerm) for e in ents):
        raise MissingDetTerm("orbit sums need detTerm for every entry below the grid maximum")
    # deterministic order: length, then canonical word
    ents.sort(key=lambda e: (e.length, e.canonicalWord.sort_key()))
    L = np.array([e.length for e in ents])
    sq = np.sqrt(np.array([e.detTerm for e in ents]))
    Lp = np.array([e.primitiveLength for e in ents])
    k = np.array([e.power for e in ents], dtype=int)
    return L, L / sq if len(ents) else L, Lp / sq if len(ents) else L, k


def orbit_sums(ls: LengthSpectrum, grid) -> OrbitSumSeries:
    """S(T) = sum L/sqrt(det), Sprim(T) = sum L#/sqrt(det) over L <= T, with counts.

    Sums are accumulated with math.fsum over the length-sorted terms, so the
    result does not depend on the order the spectrum was produced in.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size and grid.max() > ls.cutoff + 1e-12:
        raise ValueError(f"grid reaches {grid.max()} beyond the spectrum cutoff {ls.cutoff}")
    L, w, wp, k = _terms(ls, grid.max() if grid.size else 0.0)
    S = np.empty(grid.size)
    Sp = np.empty(grid.size)
    imp = np.empty(grid.size)
    cnt = np.empty(grid.size, dtype=int)
    nu = np.empty(grid.size, dtype=int)
    for j, T in enumerate(grid):
        n = int(np.searchsorted(L, T, side="right"))
        S[j] = math.fsum(w[:n])
        Sp[j] = math.fsum(wp[:n])
        imp[j] = math.fsum(w[:n][k[:n] > 1])
        cnt[j] = n
        nu[j] = cluster_lengths(L[:n])[0].size
    return OrbitSumSeries(grid, S, Sp, cnt, nu, imp)


def _window_mask(grid, window):
    lo, hi = window
    return (grid >= lo - 1e-12) & (grid <= hi + 1e-12)


def linear_fit(x, y, window) -> ExponentFit:
    if x.size < 5:
        raise DegenerateWindow(f"need at least 5 grid points in {window}, have {x.size}")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.abs(y - (slope * x + icpt)).max())
    return ExponentFit(float(slope), float(icpt), res, tuple(window))


def pressure_fit(series: OrbitSumSeries, window=(3.5, 8.0)) -> ExponentFit:
    """Least-squares slope of ln S(T) against T: the growth exponent of S."""
    m = _window_mask(series.grid, window)
    x, y = series.grid[m], series.S[m]
    if np.any(y <= 0):
        raise DegenerateWindow("S(T) vanishes inside the fit window")
    return linear_fit(x, np.log(y), window)


def entropy_fit(series: OrbitSumSeries, window=(4.0, 8.0), margulis=True) -> ExponentFit:
    """Slope of ln(count) (or ln(count * T) with ``margulis``) against T.

    The counting asymptotic carries a 1/(hT) factor; with ``margulis`` it is
    absorbed by fitting ln(count * T), which removes the logarithmic bias at
    small T.  The plain ln(count) slope is reported as ``raw_slope``.
    """
    m = _window_mask(series.grid, window)
    x, c = series.grid[m], series.counts[m].astype(float)
    if np.any(c <= 0):
        raise DegenerateWindow("no closed geodesics at some grid point in the window")
    raw = linear_fit(x, np.log(c), window)
    if not margulis:
        return raw
    fit = linear_fit(x, np.log(c * x), window)
    return ExponentFit(fit.slope, fit.intercept, fit.residual, fit.window,
                       ("log(count*T)",), raw.slope)


def exponent_ratio(p: ExponentFit, h: ExponentFit) -> float:
    return p.slope / h.slope


def write_series_csv(series: OrbitSumSeries, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "S", "Sprim", "count", "nu"])
        for T, S, Sp, c, n in zip(series.grid, series.S, series.Sprim, series.counts,
                                  series.nuDistinct):
            w.writerow([f"{T:.12g}", f"{S:.12g}", f"{Sp:.12g}", int(c), int(n)])


def grid_from_spec(text) -> np.ndarray:
    """'a:b:step' -> inclusive grid."""
    a, b, st = (float(t) for t in text.split(":"))
    n = int(math.floor((b - a) / st + 1e-9)) + 1
    return a + st * np.arange(n)
