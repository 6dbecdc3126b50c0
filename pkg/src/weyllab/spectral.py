"""Smoothing kernels, windowed trace functionals, Weyl counting and Riesz means.

Fourier convention: rho(x) = int rhoHat(s) e^{i x s} ds, so int rho = 2 pi rhoHat(0)
and rho(0) = int rhoHat.  The kernel is rho = g^2 with gHat a normalised bump on
[-1/2, 1/2]; then rho >= 0 and rhoHat = gHat * gHat is supported in [-1, 1].
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.special import gamma as Gamma
from scipy.special import roots_legendre

from .errors import (
    CoverageExceeded,
    FileFormat,
    IncompleteSpectrum,
    MissingDetTerm,
    SpectrumTruncated,
)
from .fuchsian import LengthSpectrum

TAIL_EPS = 1e-18


# ---------------------------------------------------------------- kernel

def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 0.5
    out[m] = np.exp(-1.0 / (0.25 - s[m] ** 2))
    return out


@lru_cache(maxsize=1)
def _bump_mass():
    return quad(lambda s: math.exp(-1.0 / (0.25 - s * s)), -0.5, 0.5, epsabs=1e-16, epsrel=1e-14)[0]


@dataclass(frozen=True, eq=False)
class SmoothingKernel:
    """The pair (rho, rhoHat).  ``scale`` multiplies both (a normalisation of rho)."""

    resolution: int
    x_step: float
    x_tail: float
    g_spline: CubicSpline
    scale: float = 1.0
    quad_order: int = 400

    def gHat(self, s):
        return _bump(s) / _bump_mass()

    def g(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        m = x <= self.x_tail
        out[m] = self.g_spline(x[m])
        return out

    def rho(self, x):
        """rho(x) = g(x)^2 (times ``scale``); zero beyond the tabulated tail."""
        return self.scale * self.g(x) ** 2

    @property
    def rho0(self) -> float:
        return float(self.rho(0.0))

    def rhoHat(self, s):
        """(gHat * gHat)(s) by Gauss-Legendre quadrature over the overlap interval."""
        s = np.abs(np.atleast_1d(np.asarray(s, dtype=float)))
        out = np.zeros_like(s)
        m = s < 1.0
        if np.any(m):
            t, w = _gl_nodes(self.quad_order)
            sm = s[m][:, None]
            lo, hi = sm - 0.5, 0.5
            tt = lo + (hi - lo) * (t[None, :] + 1.0) / 2.0
            f = self.gHat(tt) * self.gHat(sm - tt)
            out[m] = (f * w[None, :]).sum(axis=1) * (hi - lo)[:, 0] / 2.0
        return self.scale * out

    def scaled(self, c) -> "SmoothingKernel":
        return SmoothingKernel(self.resolution, self.x_step, self.x_tail, self.g_spline,
                               self.scale * c, self.quad_order)

    def table(self):
        """(x, rho(x)) on the tabulation grid."""
        x = self.g_spline.x
        return x, self.scale * self.g_spline(x) ** 2

    def mass(self) -> float:
        """int rho over the line, by quadrature of the table."""
        x, r = self.table()
        cs = CubicSpline(x, r)
        return 2.0 * float(cs.integrate(0.0, x[-1]))


@lru_cache(maxsize=8)
def _gl_nodes(n):
    return roots_legendre(n)


@lru_cache(maxsize=4)
def make_kernel(resolution: int = 2**12) -> SmoothingKernel:
    """Tabulate g = inverse transform of the bump by FFT (trapezoid rule in s).

    The bump is flat to all orders at +-1/2, so the trapezoid rule with
    ``resolution`` nodes per unit is accurate far below double precision; the
    table spacing is 2 pi resolution / M for an FFT of length M.
    """
    if resolution < 2**12:
        raise ValueError("resolution must be at least 2**12")
    N = int(resolution)
    M = 1 << int(math.ceil(math.log2(2 * math.pi * N / 0.0065)))
    ds = 1.0 / N
    j = np.arange(M)
    s = np.where(j < M // 2, j, j - M) * ds
    gh = _bump(s) / _bump_mass()
    g = np.fft.fft(gh).real * ds
    dx = 2.0 * math.pi / (M * ds)
    half = g[: M // 2]
    big = np.nonzero(half**2 > TAIL_EPS)[0]
    n_tail = min(len(half) - 1, int(big[-1]) + 64)
    x = np.arange(n_tail + 1) * dx
    spline = CubicSpline(x, half[: n_tail + 1], bc_type=((1, 0.0), "not-a-knot"))
    return SmoothingKernel(N, dx, float(x[-1]), spline)


def rho_by_quadrature(k: SmoothingKernel, x, order=None):
    """rho(x) = 2 int_0^1 rhoHat(s) cos(x s) ds (independent route through rhoHat)."""
    order = order or 2 * k.resolution
    t, w = _gl_nodes(order)
    s = (t + 1.0) / 2.0
    rh = k.rhoHat(s)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.array([float(np.sum(w * rh * np.cos(xx * s))) for xx in x])


@dataclass(frozen=True)
class TimeCutoff:
    """psi = 1 on [-T0, T0], 0 off [-2 T0, 2 T0]; chi(t, T) = (1 - psi(t)) rhoHat(t / T)."""

    T0: float
    kernel: SmoothingKernel

    def psi(self, t):
        x = (np.abs(np.asarray(t, dtype=float)) - self.T0) / self.T0
        return 1.0 - _smooth_step(x)

    def chi(self, t, T):
        return (1.0 - self.psi(t)) * self.kernel.rhoHat(np.asarray(t, dtype=float) / T)

    @classmethod
    def from_geometry(cls, kernel, systole, K1=1.0, delta_prime=None) -> "TimeCutoff":
        """T0 = ln(2 / dp) / K1 with dp = inj / 4 (inj = systole / 2) by default."""
        dp = delta_prime if delta_prime is not None else systole / 8.0
        return cls(math.log(2.0 / dp) / K1, kernel)


def _smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def window_H(k: SmoothingKernel, lam, T, r):
    """H(r) = [rho(T(lam - r)) + rho(T(lam + r))] / 2, both terms kept."""
    r = np.asarray(r, dtype=float)
    return 0.5 * (k.rho(T * (lam - r)) + k.rho(T * (lam + r)))


# ---------------------------------------------------------------- spectra

@dataclass(frozen=True, eq=False)
class SpectrumData:
    """Laplace eigenvalues as distinct sorted values with multiplicities.

    ``coverage`` is the largest sqrt-eigenvalue up to which the list is complete.
    """

    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    dimension: int
    volume: float
    inttau: float = 0.0
    coverage: float = math.inf
    source: str = "list"

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        mu = np.asarray(self.multiplicities, dtype=np.int64)
        if ev.shape != mu.shape:
            raise ValueError("eigenvalues and multiplicities differ in length")
        if np.any(np.diff(ev) < 0):
            raise ValueError("eigenvalues must be sorted")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        object.__setattr__(self, "eigenvalues", ev)
        object.__setattr__(self, "multiplicities", mu)

    @property
    def heatA0(self) -> float:
        return self.volume

    @property
    def heatA1(self) -> float:
        return self.inttau / 6.0

    @property
    def sqrt_values(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.eigenvalues, 0.0))

    def union(self, other: "SpectrumData") -> "SpectrumData":
        """Disjoint union (same dimension): merged spectrum, added volume and curvature."""
        if other.dimension != self.dimension:
            raise ValueError("dimensions differ")
        ev = np.concatenate([self.eigenvalues, other.eigenvalues])
        mu = np.concatenate([self.multiplicities, other.multiplicities])
        order = np.argsort(ev, kind="stable")
        return SpectrumData(ev[order], mu[order], self.dimension, self.volume + other.volume,
                            self.inttau + other.inttau, min(self.coverage, other.coverage), "union")

    def expanded(self) -> np.ndarray:
        return np.repeat(self.eigenvalues, self.multiplicities)


def weyl_density(sd: SpectrumData, r):
    """d/dr of the leading Weyl term (4 pi)^{-n/2} vol r^n / Gamma(n/2 + 1)."""
    n = sd.dimension
    c = (4.0 * math.pi) ** (-n / 2.0) * sd.volume / Gamma(n / 2.0 + 1.0)
    return c * n * np.asarray(r, dtype=float) ** (n - 1)


def _heat_coefficients(sd: SpectrumData):
    n = sd.dimension
    jmax = (n - 1) // 2
    a = [sd.heatA0, sd.heatA1]
    if jmax >= len(a):
        raise NotImplementedError("heat invariants beyond a1 are not available")
    return [(j, a[j]) for j in range(jmax + 1)]


def weyl_main(sd: SpectrumData, lam):
    n = sd.dimension
    return (4.0 * math.pi) ** (-n / 2.0) * sd.volume * np.asarray(lam, float) ** n / Gamma(n / 2.0 + 1.0)


def osc_main(sd: SpectrumData, lam):
    n = sd.dimension
    lam = np.asarray(lam, dtype=float)
    tot = np.zeros_like(lam)
    for j, a in _heat_coefficients(sd):
        tot = tot + (4.0 * math.pi) ** (-n / 2.0) * a * lam ** (n - 2 * j) / Gamma(n / 2.0 - j + 1.0)
    return tot


def counting(sd: SpectrumData, lam):
    lam = np.asarray(lam, dtype=float)
    cum = np.concatenate([[0], np.cumsum(sd.multiplicities)])
    idx = np.searchsorted(sd.sqrt_values, lam, side="right")
    return cum[idx]


def counting_and_remainders(sd: SpectrumData, lam):
    """(N, R, Rosc) at lam, with N counting sqrt-eigenvalues <= lam."""
    if np.max(lam) > sd.coverage + 1e-12:
        raise CoverageExceeded(f"lambda {np.max(lam)} beyond spectrum coverage {sd.coverage}")
    N = counting(sd, lam)
    return N, N - weyl_main(sd, lam), N - osc_main(sd, lam)


def kappa_spectral(sd: SpectrumData, k: SmoothingKernel, lam, T):
    """Sum_i H(sqrt(lam_i)) minus the Weyl-density integral of H.

    Supported for surfaces (n = 2) and the circle (n = 1) variant.
    """
    if sd.dimension not in (1, 2):
        raise ValueError("kappa is defined for surfaces (and the circle oracle variant)")
    reach = k.x_tail / T
    if lam + reach > sd.coverage + 1e-12:
        raise SpectrumTruncated(
            f"need eigenvalues up to sqrt = {lam + reach:.4f}, spectrum covers {sd.coverage:.4f}")
    r = sd.sqrt_values
    lo, hi = np.searchsorted(r, max(0.0, lam - reach)), np.searchsorted(r, lam + reach, side="right")
    vals = window_H(k, lam, T, r[lo:hi]) * sd.multiplicities[lo:hi]
    spec = math.fsum(vals.tolist())
    main = main_term(sd, k, lam, T)
    return spec - main


def main_term(sd: SpectrumData, k: SmoothingKernel, lam, T):
    """int_0^inf H(r) dN_Weyl(r) by adaptive quadrature on pieces of the window."""
    reach = k.x_tail / T
    a, b = max(0.0, lam - reach), lam + reach
    f = lambda r: float(window_H(k, lam, T, r) * weyl_density(sd, r))  # noqa: E731
    edges = np.linspace(a, b, 2 * int(math.ceil(2 * reach * T / 4.0)) + 1)
    parts = [quad(f, u, v, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
             for u, v in zip(edges[:-1], edges[1:])]
    if a > 0.0:
        # the lam - r term has decayed; only rho(T(lam + r)) can survive below a
        parts.append(quad(f, 0.0, a, epsabs=1e-13, limit=200)[0])
    return math.fsum(parts)


def poisson_oracle_circle(k: SmoothingKernel, lam, T, L=2.0 * math.pi):
    """Closed form of kappa for the circle of length L via Poisson summation.

    sum_m rho(T(lam - 2 pi m / L)) = (L/T) sum_n e^{-i n lam L} rhoHat(n L / T); the
    n = 0 term is the Weyl integral, so kappa = (2L/T) sum_{n >= 1} cos(n lam L) rhoHat(nL/T).
    """
    n = np.arange(1, int(math.floor(T / L)) + 1)
    if n.size == 0:
        return 0.0
    terms = np.cos(n * lam * L) * k.rhoHat(n * L / T)
    return 2.0 * L / T * math.fsum(terms.tolist())


def sigma_geometric(ls: LengthSpectrum, tc: TimeCutoff, k: SmoothingKernel, lam, T, tqq=False):
    """sum_{L <= T} L# cos(lam L) chi(L, T) / (T sqrt(detTerm)); ``tqq`` drops the 1/T."""
    if ls.cutoff < T - 1e-12:
        raise IncompleteSpectrum(f"spectrum cutoff {ls.cutoff} below T = {T}")
    ents = sorted((e for e in ls.entries if tc.T0 < e.length <= T),
                  key=lambda e: (e.length, e.canonicalWord.sort_key()))
    if any(not math.isfinite(e.detTerm) for e in ents):
        raise MissingDetTerm("sigma needs detTerm for every entry in the window")
    if not ents:
        return 0.0
    L = np.array([e.length for e in ents])
    Lp = np.array([e.primitiveLength for e in ents])
    sq = np.sqrt(np.array([e.detTerm for e in ents]))
    chi = tc.chi(L, T)
    terms = Lp * np.cos(lam * L) * chi / sq
    tot = math.fsum(terms[chi != 0.0].tolist())
    return tot if tqq else tot / T


# ---------------------------------------------------------------- model spectra

def model_spectrum(kind, coverage=None, **kw) -> SpectrumData:
    """'circle' (L), 'torus' (n, side or basis), 'sphere3', or 'file' (path)."""
    if kind == "circle":
        L = kw.get("L", 2.0 * math.pi)
        cov = float(coverage)
        m = np.arange(0, int(math.floor(cov * L / (2 * math.pi))) + 1)
        mult = np.where(m == 0, 1, 2)
        return SpectrumData((2 * math.pi * m / L) ** 2, mult, 1, L, 0.0, cov, f"circle(L={L!r})")
    if kind == "torus":
        n = kw.get("n", 2)
        if "basis" in kw:
            return _torus_lattice(np.asarray(kw["basis"], dtype=float), float(coverage))
        side = kw.get("side", 2.0 * math.pi)
        return _torus_cubic(n, side, float(coverage))
    if kind == "sphere3":
        cov = float(coverage)
        kmax = int(math.floor(math.sqrt(cov * cov + 1.0) - 1.0)) + 1
        kk = np.arange(0, kmax + 1)
        ev = (kk * (kk + 2)).astype(float)
        keep = np.sqrt(ev) <= cov + 1e-12
        return SpectrumData(ev[keep], ((kk + 1) ** 2)[keep], 3, 2 * math.pi**2, 12 * math.pi**2,
                            cov, "sphere3")
    if kind == "file":
        return read_spectrum_file(kw["path"])
    raise ValueError(f"unknown model spectrum {kind!r}")


def _rn_counts(n, M):
    """r_n(j) = #{m in Z^n : |m|^2 = j} for j <= M, by FFT convolution of square indicators."""
    sq = np.zeros(M + 1)
    m = np.arange(0, int(math.isqrt(M)) + 1)
    np.add.at(sq, m * m, np.where(m == 0, 1.0, 2.0))
    size = 1 << int(math.ceil(math.log2(n * (M + 1) + 1)))
    f = np.fft.rfft(sq, size)
    out = np.fft.irfft(f**n, size)[: M + 1]
    return np.rint(out).astype(np.int64)


def _torus_cubic(n, side, cov):
    # eigenvalues (2 pi / side)^2 |m|^2
    scale = 2 * math.pi / side
    M = int(math.floor((cov / scale) ** 2 + 1e-9))
    r = _rn_counts(n, M)
    j = np.nonzero(r)[0]
    return SpectrumData(scale**2 * j.astype(float), r[j], n, side**n, 0.0, cov,
                        f"torus(n={n}, side={side!r})")


def _torus_lattice(B, cov):
    """Flat torus R^n / B Z^n: eigenvalues |2 pi xi|^2 over the dual lattice."""
    n = B.shape[0]
    D = 2 * math.pi * np.linalg.inv(B).T
    smin = np.linalg.svd(D, compute_uv=False).min()
    R = int(math.ceil(cov / smin)) + 1
    grids = np.meshgrid(*[np.arange(-R, R + 1)] * n, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1) @ D.T
    ev = np.sum(pts**2, axis=1)
    ev = np.sort(ev[np.sqrt(ev) <= cov + 1e-12])
    vals, mult = _group_values(ev)
    return SpectrumData(vals, mult, n, abs(np.linalg.det(B)), 0.0, cov, "torus(lattice)")


def _group_values(ev, tol=1e-9):
    if ev.size == 0:
        return ev, np.zeros(0, dtype=np.int64)
    brk = np.nonzero(np.diff(ev) > tol * np.maximum(1.0, ev[1:]))[0] + 1
    groups = np.split(ev, brk)
    return np.array([g[0] for g in groups]), np.array([len(g) for g in groups], dtype=np.int64)


def read_spectrum_file(path) -> SpectrumData:
    header = {}
    vals = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if ":" in line:
                key, _, v = line.partition(":")
                key = key.strip()
                if key not in ("dim", "volume", "inttau", "coverage", "source"):
                    raise FileFormat(f"unknown header {key!r}", lineno)
                if vals:
                    raise FileFormat("header line after eigenvalues", lineno)
                header[key] = v.strip()
                continue
            try:
                x = float(line)
            except ValueError:
                raise FileFormat(f"not a number: {line!r}", lineno) from None
            if vals and x < vals[-1]:
                raise FileFormat(f"eigenvalue {x!r} smaller than its predecessor {vals[-1]!r}", lineno)
            vals.append(x)
    for key in ("dim", "volume"):
        if key not in header:
            raise FileFormat(f"missing header {key!r}")
    try:
        n = int(header["dim"])
        vol = float(header["volume"])
        tau = float(header.get("inttau", 0.0))
    except ValueError as exc:
        raise FileFormat(str(exc)) from None
    ev = np.array(vals)
    cov = float(header["coverage"]) if "coverage" in header else (
        float(np.sqrt(ev[-1])) if ev.size else 0.0)
    v, m = _group_values(ev, tol=0.0) if ev.size else (ev, np.zeros(0, dtype=np.int64))
    return SpectrumData(v, m, n, vol, tau, cov, header.get("source", f"file({path})"))


def write_spectrum_file(sd: SpectrumData, path):
    lines = [f"dim: {sd.dimension}", f"volume: {sd.volume!r}", f"inttau: {sd.inttau!r}"]
    if math.isfinite(sd.coverage):
        lines.append(f"coverage: {sd.coverage!r}")
    lines += [repr(float(v)) for v in sd.expanded()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


ingest_spectrum_file = read_spectrum_file


# ---------------------------------------------------------------- Riesz means

@dataclass(frozen=True)
class CountingRemainder:
    """t -> N(t) - P(t) where P is the Weyl ('weyl') or heat-invariant ('osc') polynomial."""

    sd: SpectrumData
    kind: str = "weyl"

    def main(self, t):
        return osc_main(self.sd, t) if self.kind == "osc" else weyl_main(self.sd, t)

    def __call__(self, t):
        return counting(self.sd, t) - self.main(t)

    def jumps(self, lam):
        r = self.sd.sqrt_values
        return r[(r > 0.0) & (r < lam)]


def riesz_mean(f, lam, k=2, points=None):
    """R_k f(lam) = (k / lam) int_0^lam (1 - t/lam)^{k-1} f(t) dt.

    A CountingRemainder is integrated exactly piecewise between its jumps
    (Gauss-Legendre of order 8 on each polynomial piece).  Other callables use
    adaptive quadrature with optional break ``points``.
    """
    if not lam > 0 or k < 1:
        raise ValueError("need lam > 0 and k >= 1")
    if isinstance(f, CountingRemainder):
        edges = np.concatenate([[0.0], f.jumps(lam), [lam]])
        t, w = _gl_nodes(8)
        a, b = edges[:-1], edges[1:]
        tt = a[:, None] + (b - a)[:, None] * (t[None, :] + 1.0) / 2.0
        Nc = counting(f.sd, a)[:, None]   # N is constant on [a, b)
        vals = (k / lam) * (1.0 - tt / lam) ** (k - 1) * (Nc - f.main(tt))
        parts = (vals * w[None, :]).sum(axis=1) * (b - a) / 2.0
        return math.fsum(parts.tolist())
    g = lambda t: (k / lam) * (1.0 - t / lam) ** (k - 1) * float(f(t))  # noqa: E731
    pts = None if points is None else [p for p in points if 0 < p < lam]
    return quad(g, 0.0, lam, points=pts, limit=max(200, 4 * len(pts or [])), epsabs=1e-10)[0]


def l1_average(R, lam):
    """(1/lam) int_0^lam |R(t)| dt.

    For a CountingRemainder each piece between jumps is split at its sign
    change (the main term is increasing, so there is at most one, located by
    vectorised bisection) and integrated exactly by Gauss-Legendre.
    """
    if not isinstance(R, CountingRemainder):
        return quad(lambda x: abs(float(R(x))), 0.0, lam, limit=400)[0] / lam
    edges = np.concatenate([[0.0], R.jumps(lam), [lam]])
    a, b = edges[:-1], edges[1:]
    Nc = counting(R.sd, a).astype(float)
    lo, hi = a.copy(), b.copy()
    change = (Nc - R.main(a)) * (Nc - R.main(b)) < 0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        pos = (Nc - R.main(mid)) * (Nc - R.main(lo)) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    cut = np.where(change, 0.5 * (lo + hi), b)
    t, w = _gl_nodes(8)

    def piece(u, v):
        x = u[:, None] + (v - u)[:, None] * (t[None, :] + 1.0) / 2.0
        return np.abs(((Nc[:, None] - R.main(x)) * w[None, :]).sum(axis=1)) * (v - u) / 2.0

    parts = np.concatenate([piece(a, cut), piece(cut, b)])
    return math.fsum(parts.tolist()) / lam


# ---------------------------------------------------------------- export

@dataclass
class TraceRecord:
    lam: float
    T: float
    kappa: float | None = None
    sigma: float | None = None
    N: float | None = None
    R: float | None = None
    Rosc: float | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        d = {"lambda": self.lam, "T": self.T, "kappa": self.kappa, "sigma": self.sigma,
             "N": self.N, "R": self.R, "Rosc": self.Rosc}
        return {key: _fmt(v) for key, v in d.items()}


def _fmt(v):
    if v is None:
        return None
    if isinstance(v, (int, np.integer)):
        return int(v)
    return float(f"{float(v):.12g}")


def export_records(records, path):
    with open(path, "w") as fh:
        json.dump([r.as_dict() for r in records], fh, indent=1)
        fh.write("\n")
