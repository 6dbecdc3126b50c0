"""Resonant frequency search by the box principle, the proof schedule, and the amplitude check."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SearchExhausted, WindowEmpty
from .fuchsian import LengthSpectrum, cluster_lengths
from .spectral import SmoothingKernel, TimeCutoff, sigma_geometric

TWO_PI = 2.0 * math.pi
DEFAULT_TOLERANCE = 0.5      # cos(1/2) > 1/2, so the phase radius alone gives cos >= 1/2
NU_LIMIT = 26
SCAN_BUDGET = 20_000_000
SCAN_PHASE_STEP = 0.05       # max phase advance of any length between scan points


@dataclass(frozen=True)
class ProofSchedule:
    T: float
    eps: float
    h: float
    alpha: float
    M1: float
    b: float | None
    flags: tuple = ()

    @property
    def alpha_bound(self) -> float:
        return self.h * self.eps / (2.0 * (1.0 - self.eps))

    def window(self):
        """(lower, upper) bounds for ln ln lambda: alpha T and (h + alpha) T - ln(h T)."""
        up = (self.h + self.alpha) * self.T - (math.log(self.h * self.T) if self.T > 0 else 0.0)
        return self.alpha * self.T, up

    def coefficient_gap(self) -> float:
        """h (1 - eps/2)/(1 - eps) - (h + alpha), positive by construction."""
        return self.h * (1 - self.eps / 2) / (1 - self.eps) - (self.h + self.alpha)


def schedule_parameters(T, eps, h, P_half=None, alpha=None, M1_override=None) -> ProofSchedule:
    """alpha defaults to 0.9 of its bound h eps / (2 (1 - eps)); M1 = exp(exp(alpha T))."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if not h > 0.0:
        raise ValueError("h must be positive")
    if T < 0:
        raise ValueError("T must be nonnegative")
    bound = h * eps / (2.0 * (1.0 - eps))
    a = 0.9 * bound if alpha is None else float(alpha)
    if not 0.0 < a < bound:
        raise ValueError(f"alpha must lie in (0, {bound})")
    flags = []
    inner = math.exp(a * T)
    if inner < 709.0:
        M1 = math.exp(inner)
    else:
        M1 = math.inf
        flags.append("M1_overflow")
    if T == 0:
        flags.append("degenerate:T=0")
    if M1_override is not None:
        M1 = float(M1_override)
        flags.append(f"M1_override={M1!r}")
    b = None if P_half is None else P_half * (1.0 - eps) / h
    return ProofSchedule(float(T), float(eps), float(h), a, M1, b, tuple(flags))


@dataclass(frozen=True)
class ResonanceProblem:
    lengths: tuple
    M1: float
    cap: float
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        L = np.asarray(self.lengths, dtype=float)
        if L.size < 1:
            raise ValueError("need at least one length")
        if np.any(np.diff(L) <= 0) or np.any(L <= 0):
            raise ValueError("lengths must be positive, distinct and ascending")
        if not self.cap >= self.M1 > 0:
            raise ValueError("need 0 < M1 <= cap")
        object.__setattr__(self, "lengths", tuple(float(x) for x in L))

    @property
    def nu(self) -> int:
        return len(self.lengths)

    @classmethod
    def from_spectrum(cls, ls: LengthSpectrum, T, M1, T0=0.0, tolerance=DEFAULT_TOLERANCE):
        L = ls.lengths
        L = L[(L > T0) & (L <= T + 1e-12)]
        reps, _ = cluster_lengths(np.sort(L))
        if reps.size == 0:
            raise WindowEmpty(f"no closed geodesics with {T0} < L <= {T}")
        return cls(tuple(reps), M1, M1 * 2.0 ** reps.size, tolerance)


def phase_distances(lam, lengths):
    """dist(lam L_j, 2 pi Z) for every j (vectorised in lam)."""
    x = np.multiply.outer(np.asarray(lam, dtype=float), np.asarray(lengths, dtype=float))
    return np.abs(x - TWO_PI * np.rint(x / TWO_PI))


def _polish(lam, L, lo, hi):
    """Least-squares resonance with the integer vector of lam held fixed."""
    n = np.rint(lam * L / TWO_PI)
    cand = TWO_PI * float(np.dot(n, L)) / float(np.dot(L, L))
    if lo <= cand <= hi and phase_distances(cand, L).max() <= phase_distances(lam, L).max():
        return cand
    return lam


def _scan(rp: ResonanceProblem, L):
    step = SCAN_PHASE_STEP / L.max()
    n = int(math.ceil((rp.cap - rp.M1) / step)) + 1
    best = (math.inf, None)
    chunk = 1 << 18
    for start in range(0, n, chunk):
        lam = rp.M1 + step * np.arange(start, min(n, start + chunk))
        lam = lam[lam <= rp.cap]
        ph = phase_distances(lam, L).max(axis=1)
        j = int(np.argmin(ph))
        if ph[j] < best[0]:
            best = (float(ph[j]), float(lam[j]))
        ok = np.nonzero(ph <= rp.tolerance)[0]
        if ok.size:
            return float(lam[ok[0]]), best
    return None, best


def _pigeonhole(rp: ResonanceProblem, L, budget):
    """Samples k M1; two samples in the same phase cell differ by a resonant multiple of M1."""
    m = int(math.ceil(TWO_PI / rp.tolerance))
    side = TWO_PI / m
    seen = {}
    best = (math.inf, None)
    kmax = min(budget, int(math.floor(rp.cap / rp.M1)))
    for k in range(kmax + 1):
        if k:
            ph = float(phase_distances(k * rp.M1, L).max())
            if ph <= rp.tolerance:
                return k * rp.M1, (ph, k * rp.M1)
            if ph < best[0]:
                best = (ph, k * rp.M1)
        cell = tuple(np.floor(np.mod(k * rp.M1 * L, TWO_PI) / side).astype(np.int64).tolist())
        if cell in seen:
            lam = (k - seen[cell]) * rp.M1
            ph = float(phase_distances(lam, L).max())
            if ph < best[0]:
                best = (ph, lam)
            if ph <= rp.tolerance and rp.M1 <= lam <= rp.cap:
                return lam, best
        seen[cell] = k
    return None, best


def find_resonant_lambda(rp: ResonanceProblem, budget=None) -> float:
    """Return lam in [M1, cap] with dist(lam L_j, 2 pi Z) <= tolerance for all j.

    A dense scan (the lowest qualifying grid point, then polished) is used when
    the interval fits the scan budget; otherwise the pigeonhole sampling over
    phase cells of side <= tolerance.  The result is re-verified before return.
    """
    if rp.nu > NU_LIMIT:
        raise SearchExhausted(f"nu = {rp.nu} exceeds the table limit {NU_LIMIT}")
    L = np.asarray(rp.lengths)
    if rp.cap * L.max() * np.finfo(float).eps > 1e-6 * rp.tolerance:
        raise SearchExhausted(f"phases of lambda up to {rp.cap:.3g} are not resolved in double precision")
    npts = (rp.cap - rp.M1) * L.max() / SCAN_PHASE_STEP
    if npts <= (budget or SCAN_BUDGET):
        lam, best = _scan(rp, L)
    else:
        lam, best = _pigeonhole(rp, L, budget or SCAN_BUDGET)
    if lam is None:
        raise SearchExhausted(
            f"no resonant lambda in [{rp.M1}, {rp.cap}]; best phase radius {best[0]:.6g}"
            f" at lambda = {best[1]}", best_phase=best[0])
    lam = _polish(lam, L, rp.M1, rp.cap)
    if not verify_resonance(rp, lam):
        raise SearchExhausted("candidate failed re-verification", best_phase=best[0])
    return lam


def verify_resonance(rp: ResonanceProblem, lam, slack=1e-9) -> bool:
    """Independent direct check of the postcondition (scalar loop, math module only)."""
    if not rp.M1 - slack <= lam <= rp.cap + slack:
        return False
    for Lj in rp.lengths:
        x = lam * Lj
        if abs(x - TWO_PI * round(x / TWO_PI)) > rp.tolerance + slack:
            return False
    return True


@dataclass
class AmplitudeReport:
    lam: float
    phases: list
    maxPhase: float
    M1: float
    cap: float
    nu: int
    sigmaValue: float
    lowerBound: float
    passed: bool
    retained: int = 0
    premise_holds: bool = True
    kernel_scale: float = 1.0
    lnSigma: float | None = None
    line: float | None = None
    C3: float | None = None
    flags: list = field(default_factory=list)

    def as_dict(self):
        f = _g12
        return {
            "lambda": f(self.lam), "phases": [f(p) for p in self.phases],
            "maxPhase": f(self.maxPhase), "M1": f(self.M1), "cap": f(self.cap), "nu": self.nu,
            "sigmaValue": f(self.sigmaValue), "lowerBound": f(self.lowerBound),
            "pass": bool(self.passed), "retained": self.retained,
            "premiseHolds": bool(self.premise_holds), "kernelScale": f(self.kernel_scale),
            "lnSigma": f(self.lnSigma), "fitLine": f(self.line), "C3": f(self.C3),
            "flags": list(self.flags),
        }

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=1)
            fh.write("\n")


def _g12(v):
    return None if v is None else float(f"{float(v):.12g}")


def amplitude_kernel(k: SmoothingKernel, eps) -> SmoothingKernel:
    """Rescale rho so that rhoHat >= 1/2 on [0, 1 - eps/2] (rhoHat decreases on [0, 1])."""
    c = 1.0 / (2.0 * float(k.rhoHat(1.0 - eps / 2.0)[0]))
    return k.scaled(c)


def amplitude_check(ls: LengthSpectrum, lam, T, eps, tc: TimeCutoff, k: SmoothingKernel,
                    rp: ResonanceProblem | None = None, P_half=None, normalize=True):
    """Sigma(lam, T) against (1 / 4T) sum over T0 < L <= T(1 - eps/2) of L# / sqrt(det).

    With ``normalize`` the kernel is rescaled (see amplitude_kernel), which is
    the normalisation under which chi >= 1/2 on the retained window.  Whether
    cos >= 1/2 and chi >= 1/2 actually hold on every retained term is recorded
    in ``premise_holds``; the inequality itself is evaluated regardless.
    """
    flags = []
    if normalize:
        k = amplitude_kernel(k, eps)
        tc = TimeCutoff(tc.T0, k)
        flags.append("kernel_normalized")
    top = T * (1.0 - eps / 2.0)
    ret = [e for e in ls.entries if tc.T0 < e.length <= top]
    if not ret:
        raise WindowEmpty(f"no closed geodesics with {tc.T0:.6g} < L <= {top:.6g}")
    ret.sort(key=lambda e: (e.length, e.canonicalWord.sort_key()))
    Lr = np.array([e.length for e in ret])
    bound = math.fsum(e.primitiveLength / math.sqrt(e.detTerm) for e in ret) / (4.0 * T)
    chi = tc.chi(Lr, T)
    premise = bool(np.all(chi >= 0.5) and np.all(np.cos(lam * Lr) >= 0.5))
    sigma = sigma_geometric(ls, tc, k, lam, T)
    if rp is None:
        reps, _ = cluster_lengths(np.sort(ls.lengths[(ls.lengths > tc.T0) & (ls.lengths <= T)]))
        phases = phase_distances(lam, reps)
        M1 = cap = float("nan")
        nu = int(reps.size)
    else:
        phases = phase_distances(lam, rp.lengths)
        M1, cap, nu = rp.M1, rp.cap, rp.nu
    rep = AmplitudeReport(float(lam), [float(p) for p in phases], float(np.max(phases)), M1, cap, nu,
                          sigma, bound, sigma >= bound, len(ret), premise, float(k.scale),
                          flags=flags)
    if sigma > 0:
        rep.lnSigma = math.log(sigma)
        if P_half is not None:
            rep.line = P_half * T * (1 - eps / 2) - math.log(T)
            rep.C3 = rep.lnSigma - rep.line
    return rep
