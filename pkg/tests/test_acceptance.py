"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every quantity is computed by ``compute_all(threads)``; the last criterion reruns
it with 8 worker threads and compares the cleaned JSON byte for byte.
Run ``python3 tests/test_acceptance.py`` to see only these lines.
"""
import dataclasses
import json
import math

import numpy as np
import pytest

from weyllab import box as Bx
from weyllab import dynamics as D
from weyllab import spectral as S
from weyllab import thermo as Th
from weyllab.geometry import ConformalMetric, moebius_arrays
from weyllab.report import clean

GRID = "3.0:8.0:0.05"


def _thermo(ls):
    s = Th.orbit_sums(ls, Th.grid_from_spec(GRID))
    p = Th.pressure_fit(s, (3.5, 8.0))
    h = Th.entropy_fit(s, (4.0, 8.0))
    return {"slope": p.slope, "entropySlope": h.slope, "entropyRaw": h.raw_slope,
            "ratio": Th.exponent_ratio(p, h)}


def _riccati(ls8, threads):
    ls, _, _ = D.attach_det_terms(ls8, threads=threads)
    ref = 4 * np.sinh(ls.lengths / 2) ** 2
    return ls, {"maxRelErr": float(np.max(np.abs(ls.det_terms - ref) / ref)), "count": len(ls)}


def _kappa(k):
    rows = []
    for lam in (50.0, 100.0, 200.0):
        for T in (5.0, 10.0):
            sd = S.model_spectrum("circle", lam + k.x_tail / T + 1.0)
            kap = S.kappa_spectral(sd, k, lam, T)
            rows.append({"lambda": lam, "T": T, "kappa": kap,
                         "err": abs(kap - S.poisson_oracle_circle(k, lam, T))})
    return rows


def _box(ls8, k):
    T, eps = 4.5, 0.5
    ls = ls8.truncated(T)
    tc = S.TimeCutoff.from_geometry(k, float(ls.lengths.min()))
    sch = Bx.schedule_parameters(T, eps, 1.0)
    rp = Bx.ResonanceProblem.from_spectrum(ls, T, sch.M1, T0=tc.T0)
    lam = Bx.find_resonant_lambda(rp)
    rep = Bx.amplitude_check(ls, lam, T, eps, tc, k, rp)
    return rep.as_dict()


def _separation(ls6, domain):
    dp = float(ls6.lengths.min()) / 2 / 4
    rep = D.separation_report(ls6, 6.0, dp, 2.0, domain=domain)
    return {"minDistance": rep.minDistance, "threshold": rep.threshold, "passed": rep.passed,
            "pairs": rep.n_pairs}


def _riesz():
    lams = np.arange(100.0, 400.0 + 1e-9, 10.0)
    s3 = S.model_spectrum("sphere3", 401.0)
    R = S.CountingRemainder(s3)
    r = np.array([S.riesz_mean(R, lam, 2) / lam for lam in lams])
    t3 = S.model_spectrum("torus", 401.0, n=3)
    Rt = S.CountingRemainder(t3)
    a, b = (abs(S.riesz_mean(Rt, lam, 2)) / lam for lam in (50.0, 400.0))
    return {"sphereMean": float(r.mean()), "sphereRelStd": float(r.std() / abs(r.mean())),
            "torus50": a, "torus400": b}


def _zero_metric_refinement(ls6):
    rng = np.random.default_rng(7)
    m0 = ConformalMetric()
    worst_axis = worst_len = 0.0
    n = 0
    for j, e in enumerate(ls6.entries):
        if e.power != 1:
            continue
        g = D.representative_element(ls6, j)
        ax = D.axis_geodesic(g, 1024, start="centered")
        noise = rng.normal(size=ax.z.size)
        init = dataclasses.replace(ax, z=ax.z + 1e-3 * noise, theta=ax.theta + 1e-3 * noise,
                                   length=ax.length * 1.001)
        r = D.refine_closed_geodesic(m0, init)
        w = moebius_arrays(g.axis_frame().inverse().matrix, r.z)
        worst_axis = max(worst_axis, float(np.abs(np.arcsinh(w.real / w.imag)).max()))
        worst_len = max(worst_len, abs(r.length - e.length))
        n += 1
    return {"axes": n, "maxAxisDistance": worst_axis, "maxLengthError": worst_len}


def _perturbed(ls8, bump, threads):
    ls, lengths, data = D.attach_det_terms(ls8, bump, threads=threads)
    six = [(L, pd.logMu) for L, pd in zip(lengths, data) if L <= 6.0]
    lo = min(mu - bump.K2 * L for L, mu in six)
    hi = min(bump.K1 * L - mu for L, mu in six)
    th = _thermo(ls)
    return {"K1": bump.K1, "K2": bump.K2, "checked": len(six), "lowerSlack": lo, "upperSlack": hi,
            "ratio": th["ratio"], "slope": th["slope"], "entropySlope": th["entropySlope"],
            "ratioBound": bump.K2 / (2 * bump.K1)}


def _kernel(k):
    x = np.linspace(-k.x_tail - 5, k.x_tail + 5, 400001)
    s = np.concatenate([np.linspace(1.0 + 1e-12, 20.0, 4001), -np.linspace(1.0 + 1e-12, 20.0, 4001)])
    # second route: trapezoid cosine transform of the tabulated rho, which does not
    # know about the support of rhoHat
    xt, rt = k.table()
    w = np.full(xt.size, xt[1] - xt[0])
    w[0] /= 2
    st = np.linspace(1.0, 20.0, 1901)
    table_hat = np.array([np.dot(w * rt, np.cos(xt * v)) / math.pi for v in st])
    return {"minRho": float(min(k.rho(x).min(), rt.min())),
            "maxRhoHatOutside": float(np.abs(k.rhoHat(s)).max()),
            "maxTableHatOutside": float(np.abs(table_hat).max())}


def compute_all(spec6, spec8, bump, domain, threads):
    k = S.make_kernel()
    ls8, ric = _riccati(spec8, threads)
    return {
        "thermo": _thermo(ls8),
        "riccati": ric,
        "kappa": _kappa(k),
        "box": _box(ls8, k),
        "separation": _separation(spec6, domain),
        "riesz": _riesz(),
        "zeroMetric": _zero_metric_refinement(spec6),
        "perturbed": _perturbed(spec8, bump, threads),
        "kernel": _kernel(k),
    }


@pytest.fixture(scope="module")
def results(spec6, spec8, bump, bolza_domain):
    return compute_all(spec6, spec8, bump, bolza_domain, threads=1)


@pytest.fixture
def say(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return emit


def test_criterion_01_pressure_slope(results, say):
    p = results["thermo"]["slope"]
    say(1, abs(p - 0.5) <= 0.1, f"ln S slope over [3.5, 8] = {p:.6f} (target 0.5 +- 0.1)")


def test_criterion_02_entropy_and_ratio(results, say):
    t = results["thermo"]
    ok = abs(t["entropySlope"] - 1.0) <= 0.15 and 0.38 <= t["ratio"] <= 0.62
    say(2, ok, f"entropy slope over [4, 8] = {t['entropySlope']:.6f} (1 +- 0.15),"
               f" ratio = {t['ratio']:.6f} (in [0.38, 0.62])")


def test_criterion_03_riccati_det_terms(results, say):
    r = results["riccati"]
    say(3, r["maxRelErr"] <= 1e-6,
        f"max relative detTerm error over {r['count']} classes with L <= 8 = {r['maxRelErr']:.3e} (<= 1e-6)")


def test_criterion_04_kappa_poisson(results, say):
    worst = max(r["err"] for r in results["kappa"])
    say(4, worst < 1e-6, f"max |kappa - Poisson| over lambda in {{50,100,200}} x T in {{5,10}} = {worst:.3e}"
                         " (< 1e-6)")


def test_criterion_05_box_amplitude(results, say):
    b = results["box"]
    ok = b["M1"] <= b["lambda"] <= b["M1"] * 2 ** b["nu"] and b["maxPhase"] <= 0.5 and b["pass"]
    say(5, ok, f"lambda = {b['lambda']:.6f} in [{b['M1']:.4f}, {b['cap']:.4f}] (nu = {b['nu']}),"
               f" max phase = {b['maxPhase']:.3e}, Sigma = {b['sigmaValue']:.6g} >= {b['lowerBound']:.6g}")


def test_criterion_06_separation(results, say):
    s = results["separation"]
    ok = s["minDistance"] > 1.23e-5 and s["passed"]
    say(6, ok, f"min distance at T = 6 = {s['minDistance']:.6g} (> 1.23e-5, threshold {s['threshold']:.6g})")


def test_criterion_07_riesz(results, say):
    r = results["riesz"]
    ok = r["sphereRelStd"] < 0.1 and r["torus400"] < 0.1 * r["torus50"]
    say(7, ok, f"S^3 R_2R/lambda mean {r['sphereMean']:.6f} rel std {r['sphereRelStd']:.3e} (< 0.1);"
               f" torus |R_2R|/lambda {r['torus400']:.3e} at 400 vs {r['torus50']:.3e} at 50")


def test_criterion_08a_zero_metric(results, say):
    z = results["zeroMetric"]
    ok = z["maxAxisDistance"] < 1e-8 and z["maxLengthError"] < 1e-8
    say("8a", ok, f"{z['axes']} primitive axes recovered to {z['maxAxisDistance']:.3e}"
                  f" (length error {z['maxLengthError']:.3e}, target 1e-8)")


def test_criterion_08b_pinching_bounds(results, say):
    p = results["perturbed"]
    ok = p["lowerSlack"] >= 0 and p["upperSlack"] >= 0
    say("8b", ok, f"K2 L <= logMu <= K1 L on {p['checked']} classes with L <= 6"
                  f" (K1 = {p['K1']:.6f}, K2 = {p['K2']:.6f}, slacks {p['lowerSlack']:.4g}, {p['upperSlack']:.4g})")


def test_criterion_08c_perturbed_ratio(results, say):
    p = results["perturbed"]
    ok = p["ratio"] >= p["ratioBound"] - 0.05
    say("8c", ok, f"P/h = {p['ratio']:.6f} >= K2/(2 K1) - 0.05 = {p['ratioBound'] - 0.05:.6f}")


def test_criterion_09_kernel(results, say):
    k = results["kernel"]
    ok = k["minRho"] >= -1e-12 and max(k["maxRhoHatOutside"], k["maxTableHatOutside"]) < 1e-10
    say(9, ok, f"min rho = {k['minRho']:.3e} (>= -1e-12), max |rhoHat| for |s| > 1 = "
               f"{k['maxRhoHatOutside']:.3e}, from the rho table {k['maxTableHatOutside']:.3e} (< 1e-10)")


@pytest.mark.slow
def test_criterion_10_threads(results, spec6, spec8, bump, bolza_domain, say):
    a = json.dumps(clean(results), sort_keys=True)
    b = json.dumps(clean(compute_all(spec6, spec8, bump, bolza_domain, threads=8)), sort_keys=True)
    say(10, a == b, f"criteria 1-9 results byte-identical for 1 and 8 threads ({len(a)} bytes)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
