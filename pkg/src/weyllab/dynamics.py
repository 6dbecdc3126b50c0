"""Closed geodesics as curves, unstable Riccati weights and the separation check."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .errors import EmptyWindow, NoConvergence, RelaxationFailed
from .fuchsian import (
    LengthSpectrum,
    _hyperbolic_data,
    dirichlet_domain,
)
from .geometry import (
    TWO_PI,
    ConformalMetric,
    MoebiusElement,
    hyp_distance_arrays,
    moebius_arrays,
    sasaki_proxy,
    translation_length,
)

DEFAULT_STEPS = 4096


def exp_point(z0, angle, s):
    """Point at hyperbolic distance s from z0 along Euclidean direction ``angle``."""
    w = math.tanh(s / 2.0) * complex(math.cos(angle - math.pi / 2), math.sin(angle - math.pi / 2))
    return z0.real + z0.imag * (1j * (1 + w) / (1 - w))


def _arg_derivative(g: MoebiusElement, z):
    """arg g'(z) = -2 arg(cz + d)."""
    return -2.0 * np.angle(g.c * z + g.d)


@dataclass
class ClosedGeodesic:
    """Samples z[j], theta[j] at arclength j L / n, j = 0..n (both ends included)."""

    z: np.ndarray
    theta: np.ndarray
    length: float
    element: MoebiusElement
    metric: ConformalMetric | None = None
    word: object = None

    @property
    def n(self) -> int:
        return len(self.z) - 1

    def closure_error(self) -> float:
        """Distance between g applied to the first sample and the last sample (plus angle)."""
        g = self.element
        gz = moebius_arrays(g.matrix, self.z[0])
        ga = self.theta[0] + _arg_derivative(g, self.z[0])
        d = float(hyp_distance_arrays(gz, self.z[-1]))
        da = abs((self.theta[-1] - ga + math.pi) % TWO_PI - math.pi)
        return max(d, da)

    def step_residual(self) -> float:
        """Max defect of one RK4 step of the geodesic equation between samples."""
        phi = _phi_arrays(self.metric)
        h = self.length / self.n
        err = 0.0
        for j in range(self.n):
            out = kernels.geodesic_rk4(self.z[j].real, self.z[j].imag, self.theta[j], h, 1, *phi)
            err = max(err, abs(complex(out[1, 0], out[1, 1]) - self.z[j + 1]) / self.z[j + 1].imag,
                      abs(out[1, 2] - self.theta[j + 1]))
        return err


def _phi_arrays(metric, near=None, reach=0.6):
    if metric is None or metric.is_base:
        e = np.zeros(0)
        return e, e, 0.0, 1.0
    phi = metric.phi if near is None else metric.phi.restricted(near, reach)
    return phi.cx, phi.cy, phi.amplitude, phi.ubm1


def axis_geodesic(g: MoebiusElement, nSamples: int = DEFAULT_STEPS, start="foot") -> ClosedGeodesic:
    """Samples of the axis of g; ``start`` is 'foot' (nearest point to i) or 'centered'.

    'centered' places the foot point in the middle of the period, which keeps the
    whole period within d(i, axis) + L/2 of i.
    """
    L = translation_length(g)
    h = g.axis_frame()
    hinv = h.inverse()
    w = moebius_arrays(hinv.matrix, 1j)
    s0 = math.log(abs(w))
    if start == "centered":
        s0 -= L / 2.0
    elif start != "foot":
        raise ValueError(f"unknown start {start!r}")
    t = s0 + np.linspace(0.0, L, nSamples + 1)
    zi = 1j * np.exp(t)
    z = moebius_arrays(h.matrix, zi)
    theta = (math.pi / 2.0 + _arg_derivative(h, zi)) % TWO_PI
    return ClosedGeodesic(z, theta, L, g)


def _wrap(a):
    return (a + math.pi) % TWO_PI - math.pi


def refine_closed_geodesic(m: ConformalMetric, init: ClosedGeodesic, nsteps=None, segments=16,
                           tol=1e-11, max_iter=40, fd_step=1e-7) -> ClosedGeodesic:
    """Closed geodesic of metric m in the class of init.element, by multiple shooting.

    The period is cut into ``segments`` pieces of equal length.  Unknowns are
    the start state of every piece and the total length; the first start point
    may only move along the normal of ``init`` at its first sample (this fixes
    the parametrisation).  Residuals are the mismatches at the junctions and
    between the last end state and g applied to the first start state.  Newton
    with a finite-difference Jacobian and step halving.  Short pieces keep the
    exponential sensitivity of the flow out of the Jacobian.
    """
    g = init.element
    n = nsteps or init.n
    M = segments
    if n % M:
        raise ValueError("number of steps must be a multiple of the number of segments")
    per = n // M
    if m is not None and not m.is_base:
        far = float(hyp_distance_arrays(init.z, 1j).max())
        if far + 0.6 > m.valid_radius:
            raise NoConvergence(f"curve reaches distance {far:.2f} from i, beyond the "
                                f"metric's valid radius {m.valid_radius:.2f}")
    phi = _phi_arrays(m, near=init.z[:: max(1, init.n // 256)], reach=0.6)
    zc, tc = init.z[0], init.theta[0]
    nrm = tc + math.pi / 2.0
    idx = (np.arange(M) * init.n) // M

    # x = [s, th0, (x_k, y_k, th_k) for k = 1..M-1, ell]
    x = np.concatenate([[0.0, tc], np.column_stack([init.z[idx[1:]].real, init.z[idx[1:]].imag,
                                                    init.theta[idx[1:]]]).ravel(), [init.length]])

    def starts(x):
        z0 = exp_point(zc, nrm, x[0]) if x[0] else zc
        zs = [z0] + [complex(x[2 + 3 * k], x[3 + 3 * k]) for k in range(M - 1)]
        ts = [x[1]] + [x[4 + 3 * k] for k in range(M - 1)]
        return zs, ts

    def seg_end(z, th, ell):
        out = kernels.geodesic_rk4(z.real, z.imag, th, ell / M, per, *phi)
        return out

    def residual_from(ends, zs, ts):
        r = np.empty(3 * M)
        for k in range(M):
            e = ends[k]
            ze = complex(e[0], e[1])
            if k < M - 1:
                zt, at = zs[k + 1], ts[k + 1]
            else:
                zt = complex(moebius_arrays(g.matrix, zs[0]))
                at = ts[0] + float(_arg_derivative(g, zs[0]))
            d = (ze - zt) / zt.imag
            r[3 * k: 3 * k + 3] = d.real, d.imag, _wrap(e[2] - at)
        return r

    def evaluate(x):
        zs, ts = starts(x)
        outs = [seg_end(zs[k], ts[k], x[-1]) for k in range(M)]
        return residual_from([o[-1] for o in outs], zs, ts), outs

    def jacobian(x, outs):
        nx = len(x)
        J = np.empty((3 * M, nx))
        base_zs, base_ts = starts(x)
        for c in range(nx):
            h = fd_step
            if 2 <= c < nx - 1 and (c - 2) % 3 in (0, 1):
                h = fd_step * max(1e-3, x[3 + 3 * ((c - 2) // 3)])
            cols = []
            for sgn in (1.0, -1.0):
                xp = x.copy()
                xp[c] += sgn * h
                zs, ts = starts(xp)
                if c == nx - 1:
                    ends = [seg_end(zs[k], ts[k], xp[-1])[-1] for k in range(M)]
                else:
                    k = 0 if c < 2 else 1 + (c - 2) // 3
                    ends = [o[-1] for o in outs]
                    ends[k] = seg_end(zs[k], ts[k], xp[-1])[-1]
                cols.append(residual_from(ends, zs, ts))
            J[:, c] = (cols[0] - cols[1]) / (2 * h)
        return J

    r, outs = evaluate(x)
    nr = np.abs(r).max()
    it = 0
    while nr > tol:
        if it >= max_iter:
            raise NoConvergence(f"shooting residual {nr:.3e} after {max_iter} Newton steps")
        J = jacobian(x, outs)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            raise NoConvergence("singular shooting Jacobian") from None
        lam = 1.0
        while True:
            xn = x + lam * dx
            if min(xn[3::3][: M - 1].min(initial=1.0), 1.0) <= 0.0:
                rn, on = np.full_like(r, np.inf), None
            else:
                rn, on = evaluate(xn)
            if np.abs(rn).max() < nr or lam < 1e-6:
                break
            lam *= 0.5
        if on is None:
            raise NoConvergence("shooting left the half-plane")
        x, r, outs = xn, rn, on
        nr = np.abs(r).max()
        it += 1
    traj = np.concatenate([outs[0]] + [o[1:] for o in outs[1:]])
    z = traj[:, 0] + 1j * traj[:, 1]
    return ClosedGeodesic(z, traj[:, 2].copy(), float(x[-1]), g, m, init.word)


# ---------------------------------------------------------------- Riccati

@dataclass(frozen=True)
class PoincareData:
    logMu: float
    mu: float
    detTerm: float
    periods: int = 0

    @classmethod
    def from_log(cls, logMu, periods=0) -> "PoincareData":
        mu = math.exp(logMu)
        return cls(logMu, mu, mu - 2.0 + 1.0 / mu, periods)


@dataclass(frozen=True)
class RiccatiState:
    u: float
    t: float


def integrate_unstable(geo: ClosedGeodesic, m: ConformalMetric | None = None,
                       max_periods=50, tol=1e-10, u0=None) -> PoincareData:
    """Relax u' = -u^2 - K(t) to its periodic solution; logMu = integral of u.

    The curve samples must be at half-step spacing for the Riccati step, i.e.
    ``geo.n`` even; the Riccati step is 2 L / n.
    """
    m = m if m is not None else geo.metric
    if geo.n % 2:
        raise ValueError("need an even number of sample intervals")
    if m is None or m.is_base:
        K = np.full(geo.n + 1, -1.0)
        K2 = 1.0
    else:
        mm = ConformalMetric(m.phi.restricted(geo.z[:: max(1, geo.n // 256)], 0.6), m.K1, m.K2)
        K = mm.curvature(geo.z)
        K2 = m.K2
    h = 2.0 * geo.length / geo.n
    conv, ustart, v, periods = kernels.riccati_relax(np.ascontiguousarray(K), h,
                                                     K2 if u0 is None else u0, max_periods, tol)
    if not conv:
        raise RelaxationFailed(f"no periodic Riccati solution within {max_periods} periods")
    return PoincareData.from_log(float(v), int(periods))


def riccati_profile(geo: ClosedGeodesic, m, ustart):
    """u along one period starting from the relaxed value (for plotting and bounds)."""
    K = np.full(geo.n + 1, -1.0) if (m is None or m.is_base) else m.curvature(geo.z)
    h = 2.0 * geo.length / geo.n
    u = np.empty(geo.n // 2 + 1)
    u[0] = ustart
    for j in range(geo.n // 2):
        a1 = -u[j] ** 2 - K[2 * j]
        ua = u[j] + 0.5 * h * a1
        a2 = -ua**2 - K[2 * j + 1]
        ua = u[j] + 0.5 * h * a2
        a3 = -ua**2 - K[2 * j + 1]
        ua = u[j] + h * a3
        a4 = -ua**2 - K[2 * j + 2]
        u[j + 1] = u[j] + h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    return [RiccatiState(float(x), float(j * h)) for j, x in enumerate(u)]


# ---------------------------------------------------------------- spectrum weights

def representative_element(ls: LengthSpectrum, j) -> MoebiusElement:
    """Retained conjugate of entry j whose axis passes closest to i."""
    mats = ls.conjugates[j]
    _, _, cdelta = _hyperbolic_data(mats)
    return MoebiusElement.from_matrix(mats[int(np.argmin(cdelta))])


def _geodesic_for(ls, j, metric, nsteps):
    g = representative_element(ls, j)
    init = axis_geodesic(g, nsteps, start="centered")
    init.word = ls.entries[j].canonicalWord
    if metric is None or metric.is_base:
        init.metric = metric
        return init
    return refine_closed_geodesic(metric, init)


def attach_det_terms(ls: LengthSpectrum, metric: ConformalMetric | None = None,
                     nsteps=DEFAULT_STEPS, threads=1):
    """Fill detTerm for every entry; returns (spectrum, lengths in metric, PoincareData list).

    Only primitive classes are integrated, and only one of each inverse pair;
    a k-th power reuses its root with logMu multiplied by k.  In a perturbed
    metric the entry lengths are replaced by the refined metric lengths.
    """
    if ls.conjugates is None:
        raise ValueError("spectrum has no retained conjugates; rebuild it instead of loading the cache")
    ents = ls.entries
    index = {e.canonicalWord: j for j, e in enumerate(ents)}
    todo = []
    partner = {}
    for j, e in enumerate(ents):
        if e.power != 1:
            continue
        inv = index.get(e.canonicalWord.inverse().canonical())
        if inv is not None and inv in partner:
            partner[j] = partner[inv]
            continue
        partner[j] = j
        todo.append(j)

    def work(j):
        geo = _geodesic_for(ls, j, metric, nsteps)
        return geo.length, integrate_unstable(geo, metric)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(work, todo))
    else:
        res = [work(j) for j in todo]
    done = dict(zip(todo, res))
    lengths = np.empty(len(ents))
    data = []
    root = ls.root_index
    for j, e in enumerate(ents):
        r = j if e.power == 1 else int(root[j])
        Lr, pd = done[partner[r]]
        lengths[j] = e.power * Lr
        data.append(pd if e.power == 1 else PoincareData.from_log(e.power * pd.logMu, pd.periods))
    out = ls.with_det_terms([d.detTerm for d in data])
    if metric is not None and not metric.is_base:
        prim = np.array([lengths[j if e.power == 1 else int(root[j])] for j, e in enumerate(ents)])
        out = replace(out, entries=tuple(
            replace(e, length=float(lengths[j]), primitiveLength=float(prim[j]))
            for j, e in enumerate(out.entries)), certificate=dict(ls.certificate, metric=metric.certificate))
    return out, lengths, data


# ---------------------------------------------------------------- separation

def _axis_param(g: MoebiusElement):
    """(frame h, s_foot): the axis is s -> h(i e^s); s_foot is the foot point of i."""
    h = g.axis_frame()
    w = moebius_arrays(h.inverse().matrix, 1j)
    return h, math.log(abs(w))


def _axis_points(h, s):
    zi = 1j * np.exp(s)
    z = moebius_arrays(h.matrix, zi)
    return z, math.pi / 2.0 + _arg_derivative(h, zi)


def _expand_conjugates(mats, letter_mats, cosh_max, cap=5000):
    """Close a set of conjugates under single-letter conjugation inside the tube."""
    from .fuchsian import ElementIndex

    idx = ElementIndex()
    idx.add(mats, 0)
    allm = [m for m in mats]
    frontier = np.asarray(mats)
    inv = np.array([[[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]] for m in letter_mats])
    while len(frontier) and len(allm) < cap:
        new = []
        for s, si in zip(letter_mats, inv):
            c = np.einsum("ij,njk,kl->nil", si, frontier, s)
            _, _, cd = _hyperbolic_data(c)
            c = c[cd <= cosh_max]
            if len(c):
                ids, fresh = idx.add(c, len(allm) + sum(len(x) for x in new))
                if fresh.any():
                    new.append(c[fresh])
        frontier = np.concatenate(new) if new else np.zeros((0, 2, 2))
        allm.extend(frontier)
    return np.array(allm)


@dataclass
class SeparationReport:
    minDistance: float
    threshold: float
    passed: bool
    window: tuple
    n_geodesics: int
    n_pairs: int
    closest: tuple | None = None

    def as_tuple(self):
        return self.minDistance, self.threshold, self.passed


def _segment_grid(h, s_lo, s_hi, step):
    n = max(2, int(math.ceil((s_hi - s_lo) / step)) + 1)
    s = np.linspace(s_lo, s_hi, n)
    z, a = _axis_points(h, s)
    return s, z, a


def separation_report(ls: LengthSpectrum, T: float, deltaPrime: float, B: float,
                      step=0.05, reach=1.0, refine_top=400, domain=None) -> SeparationReport:
    """Minimum Sasaki-proxy distance between distinct closed geodesics in [T - dp, T].

    Every point of a closed geodesic has a lift in the Dirichlet domain F, so
    one side of each pair runs over the lifts whose axis meets the disc of the
    covering radius; the other side over all lifts within ``reach`` more.
    Pairs are screened by the closed-form distance (or crossing angle) of the
    two axes and the most promising ones are minimised on a grid of spacing
    ``step`` followed by a local optimiser.
    """
    threshold = 2.0 * math.exp(-B * T)
    if ls.conjugates is None:
        raise ValueError("spectrum has no retained conjugates")
    sel = [j for j, e in enumerate(ls.entries) if T - deltaPrime <= e.length <= T]
    if not sel:
        raise EmptyWindow(f"no closed geodesics with length in [{T - deltaPrime}, {T}]")
    if len(sel) == 1:
        return SeparationReport(math.inf, threshold, True, (T - deltaPrime, T), 1, 0)
    dom = domain or dirichlet_domain(ls.group)
    rho = dom.covering_radius
    inner, outer = [], []
    for j in sel:
        mats = _expand_conjugates(ls.conjugates[j], dom.letter_mats, math.cosh(rho + reach))
        _, _, cd = _hyperbolic_data(mats)
        for m, c in zip(mats, cd):
            g = MoebiusElement.from_matrix(m)
            h, sf = _axis_param(g)
            rec = (j, g, h, sf, math.acosh(max(c, 1.0)))
            outer.append(rec)
            if c <= math.cosh(rho + 1e-9):
                inner.append(rec)

    # screening: hyperbolic distance between axes or crossing angle
    cand = []
    for ia, a in enumerate(inner):
        for ib, b in enumerate(outer):
            if a[0] == b[0]:
                continue
            cand.append((_axis_gap(a[1], b[1]), ia, ib))
    cand.sort()   # ties broken by position, so the refined set is reproducible
    best = (math.inf, None)
    n_done = 0
    for est, ia, ib in cand:
        a, b = inner[ia], outer[ib]
        if n_done >= refine_top and est > best[0]:
            break
        val, where = _pair_minimum(a, b, rho, reach, step)
        n_done += 1
        if val < best[0]:
            best = (val, (a[0], b[0], where))
    return SeparationReport(best[0], threshold, bool(best[0] > threshold), (T - deltaPrime, T),
                            len(sel), n_done, best[1])


def _axis_gap(g1: MoebiusElement, g2: MoebiusElement) -> float:
    """Distance between two axes, or their crossing angle in [0, pi/2] if they meet.

    Axis 1 is moved to the imaginary axis; axis 2 then has real endpoints u, v.
    Crossing: cos(angle) = |u + v| / |v - u|.  Disjoint: cosh(d) = |v + u| / |v - u|.
    A shared axis (the inverse class) returns pi.
    """
    hinv = g1.axis_frame().inverse()
    ends = []
    for x in g2.fixed_points():
        if math.isinf(x):
            ends.append(hinv.a / hinv.c if hinv.c != 0 else math.inf)
        else:
            den = hinv.c * x + hinv.d
            ends.append((hinv.a * x + hinv.b) / den if den != 0 else math.inf)
    u, v = ends
    if any(math.isinf(e) or abs(e) < 1e-12 for e in ends):
        finite = [e for e in ends if not (math.isinf(e) or abs(e) < 1e-12)]
        return math.pi if not finite else 0.0
    q = abs(u + v) / abs(v - u)
    if u * v < 0:
        return math.acos(min(1.0, q))
    return math.acosh(max(1.0, q))


def _pair_minimum(a, b, rho, reach, step):
    """Grid then local minimisation of the proxy over the two axis parameters."""
    _, _, ha, sfa, da = a
    _, _, hb, sfb, db = b
    wa = math.acosh(max(1.0, math.cosh(rho + 0.05) / math.cosh(da)))
    wb = math.acosh(max(1.0, math.cosh(rho + reach + 0.05) / math.cosh(db)))
    sa, za, aa = _segment_grid(ha, sfa - wa, sfa + wa, step)
    sb, zb, ab = _segment_grid(hb, sfb - wb, sfb + wb, step)
    D = sasaki_proxy(za[:, None], aa[:, None], zb[None, :], ab[None, :])
    i, k = np.unravel_index(int(np.argmin(D)), D.shape)

    def f(x):
        z1, a1 = _axis_points(ha, np.array([x[0]]))
        z2, a2 = _axis_points(hb, np.array([x[1]]))
        return float(sasaki_proxy(z1, a1, z2, a2)[0])

    res = minimize(f, np.array([sa[i], sb[k]]), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
    val = min(float(res.fun), float(D[i, k]))
    return val, tuple(res.x)
