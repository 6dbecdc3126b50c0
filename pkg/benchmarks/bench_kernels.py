"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Inputs are drawn from a bump-metric setup comparable to a refinement of a
closed geodesic on the Bolza surface (a few dozen bump centres in reach).
"""
import argparse
import json
import math
import timeit

import numpy as np

from weyllab.kernels import get_backend


def inputs(seed=0, n_centers=30, n_points=2000, n_steps=4096):
    rng = np.random.default_rng(seed)
    cx = rng.uniform(-2, 2, n_centers)
    cy = np.exp(rng.uniform(-1, 1, n_centers))
    x = rng.uniform(-1, 1, n_points)
    y = np.exp(rng.uniform(-0.5, 0.5, n_points))
    K = -1.0 - 0.3 * np.cos(np.linspace(0, 2 * math.pi, n_steps, endpoint=False)) ** 2
    return dict(cx=cx, cy=cy, x=x, y=y, K=K, steps=n_steps, eps=0.05, ubm1=math.cosh(1.0) - 1.0)


def cases(mod, d):
    return {
        "bump_fields": lambda: mod.bump_fields(d["x"], d["y"], d["cx"], d["cy"], d["eps"], d["ubm1"]),
        "geodesic_rk4": lambda: mod.geodesic_rk4(0.1, 1.0, 0.3, 6.0, d["steps"], d["cx"], d["cy"],
                                                 d["eps"], d["ubm1"]),
        "riccati_relax": lambda: mod.riccati_relax(d["K"], 6.0 / d["steps"], 1.0, 50, 1e-12),
    }


def run(repeat=3):
    d = inputs()
    out = {}
    mods = {"python": get_backend("python")}
    try:
        mods["cython"] = get_backend("cython")
    except ImportError:
        print("compiled backend not built; timing the fallback only")
    for name in cases(mods["python"], d):
        row = {}
        for b, mod in mods.items():
            fn = cases(mod, d)[name]
            n = 1 if b == "python" else 20
            row[b] = min(timeit.repeat(fn, number=n, repeat=repeat)) / n
        if "cython" in row:
            ref = np.asarray(cases(mods["python"], d)[name](), dtype=object)
            row["speedup"] = row["python"] / row["cython"]
            row["agree"] = bool(np.allclose(np.asarray(cases(mods["cython"], d)[name](), dtype=float),
                                            np.asarray(ref, dtype=float), rtol=1e-10, atol=1e-12))
        out[name] = row
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json")
    a = ap.parse_args()
    res = run(a.repeat)
    print(f"{'kernel':<16}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}  agree")
    for k, r in res.items():
        cy = r.get("cython", float("nan"))
        print(f"{k:<16}{r['python']:>12.4g}{cy:>12.4g}{r.get('speedup', float('nan')):>10.1f}  {r.get('agree', '-')}")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(res, fh, indent=1)


if __name__ == "__main__":
    main()
