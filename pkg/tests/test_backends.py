import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weyllab import kernels

py = kernels.get_backend("python")
try:
    cy = kernels.get_backend("cython")
except ImportError:  # extension not built
    cy = None

needs_cython = pytest.mark.skipif(cy is None, reason="compiled backend not built")
UB = math.cosh(1.0) - 1.0
NONE = np.zeros(0)


def centres(seed, n=8):
    r = np.random.default_rng(seed)
    return r.uniform(-1, 1, n), np.exp(r.uniform(-0.6, 0.6, n))


def test_active_backend_is_reported():
    assert kernels.BACKEND in ("python", "cython")
    assert kernels.get_backend() is kernels._impl
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@pytest.mark.parametrize("name", ["python", "cython"])
def test_flat_oracles(name):
    if name == "cython" and cy is None:
        pytest.skip("compiled backend not built")
    mod = kernels.get_backend(name)
    # vertical geodesic y = e^t with no bumps
    out = mod.geodesic_rk4(0.0, 1.0, math.pi / 2, 2.0, 400, NONE, NONE, 0.0, UB)
    assert np.allclose(out[:, 1], np.exp(np.linspace(0, 2, 401)), rtol=1e-10)
    assert np.abs(out[:, 0]).max() < 1e-14
    # constant K = -1: the periodic solution is u = 1 and its integral is the period
    ok, u, v, periods = mod.riccati_relax(-np.ones(201), 0.02, 0.5, 60, 1e-13)
    assert ok and u == pytest.approx(1.0, abs=1e-12) and v == pytest.approx(2.0, rel=1e-12)
    assert np.all(mod.bump_fields(np.array([5.0]), np.array([1.0]), *centres(0), 0.1, UB) == 0.0)


@needs_cython
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(-0.2, 0.2))
def test_bump_fields_parity(seed, eps):
    cx, cyy = centres(seed)
    r = np.random.default_rng(seed + 1)
    x, y = r.uniform(-1.5, 1.5, 64), np.exp(r.uniform(-1, 1, 64))
    a = cy.bump_fields(x, y, cx, cyy, eps, UB)
    b = py.bump_fields(x, y, cx, cyy, eps, UB)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


@needs_cython
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(-0.1, 0.1), st.floats(0, 2 * math.pi))
def test_geodesic_parity(seed, eps, th):
    cx, cyy = centres(seed)
    a = cy.geodesic_rk4(0.0, 1.0, th, 2.0, 200, cx, cyy, eps, UB)
    b = py.geodesic_rk4(0.0, 1.0, th, 2.0, 200, cx, cyy, eps, UB)
    assert np.abs(a - b).max() < 1e-11


@needs_cython
@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.5, 2.0), st.integers(50, 400))
def test_riccati_parity(amp, u0, n):
    K = -1.0 - amp * np.sin(np.linspace(0, 2 * math.pi, 2 * n + 1)) ** 2
    a = cy.riccati_relax(K, 4.0 / n, u0, 80, 1e-12)
    b = py.riccati_relax(K, 4.0 / n, u0, 80, 1e-12)
    assert a[0] == b[0] and a[3] == b[3]
    assert a[1] == pytest.approx(b[1], rel=1e-12) and a[2] == pytest.approx(b[2], rel=1e-12)
