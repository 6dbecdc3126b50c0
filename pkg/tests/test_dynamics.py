import dataclasses
import math

import numpy as np
import pytest

from weyllab import dynamics as D
from weyllab import kernels
from weyllab.errors import EmptyWindow
from weyllab.fuchsian import GroupWord, LengthSpectrum, LengthSpectrumEntry
from weyllab.geometry import ConformalMetric, MoebiusElement, moebius_arrays


def diag(L):
    return MoebiusElement.dilation(math.exp(L))


# ---------------------------------------------------------------- axes

def test_axis_of_diagonal_element():
    geo = D.axis_geodesic(diag(2.0), 64)
    assert np.allclose(geo.z.real, 0.0, atol=1e-15)
    assert np.allclose(geo.z.imag, np.exp(np.linspace(0, 2, 65)), rtol=1e-14)
    assert geo.length == pytest.approx(2.0, abs=1e-14)
    assert geo.closure_error() < 1e-10


def test_axis_equivariance(bolza, spec6):
    h = MoebiusElement.from_matrix([[1.3, 0.4], [0.2, 0.83846153846]])
    g = diag(1.5)
    geo = D.axis_geodesic(h @ g @ h.inverse(), 128, start="foot")
    ref = moebius_arrays(h.matrix, 1j * np.exp(np.linspace(-5, 5, 20001)))
    d = np.abs(geo.z[:, None] - ref[None, :]).min(axis=1)
    assert d.max() < 1e-3     # lies on the image of the vertical axis (grid resolution)
    for j in range(0, len(spec6), 23):
        geo = D.axis_geodesic(D.representative_element(spec6, j), 256)
        assert geo.closure_error() < 1e-10
        # g maps the sample list to itself shifted by one period
        gz = moebius_arrays(geo.element.matrix, geo.z[:1])
        assert abs(gz[0] - geo.z[-1]) / geo.z[-1].imag < 1e-8


def test_axis_step_residual(backend, spec6):
    geo = D.axis_geodesic(D.representative_element(spec6, 0), 512)
    assert geo.step_residual() < 1e-8


# ---------------------------------------------------------------- refinement

def test_refine_flat_returns_axis(spec6):
    g = D.representative_element(spec6, 30)
    ax = D.axis_geodesic(g, 1024, start="centered")
    rng = np.random.default_rng(1)
    init = dataclasses.replace(ax, z=ax.z + 1e-3 * rng.normal(size=ax.z.size), length=ax.length * 1.001)
    out = D.refine_closed_geodesic(ConformalMetric(), init)
    w = moebius_arrays(g.axis_frame().inverse().matrix, out.z)
    assert np.abs(np.arcsinh(w.real / w.imag)).max() < 1e-8
    assert out.length == pytest.approx(ax.length, abs=1e-8)


@pytest.mark.slow
def test_refine_bump(bump, spec6):
    g = D.representative_element(spec6, 0)
    ax = D.axis_geodesic(g, 2048, start="centered")
    r = D.refine_closed_geodesic(bump, ax)
    assert abs(r.length - ax.length) < 0.2 and r.length != ax.length
    assert r.closure_error() < 1e-8
    # idempotent
    r2 = D.refine_closed_geodesic(bump, r)
    assert abs(r2.length - r.length) < 1e-10
    # step halving
    r4 = D.refine_closed_geodesic(bump, D.axis_geodesic(g, 4096, start="centered"))
    assert abs(r4.length - r.length) < 1e-6


# ---------------------------------------------------------------- Riccati

def test_riccati_constant_curvature(backend):
    pd = D.integrate_unstable(D.axis_geodesic(diag(2.0), 512))
    assert pd.logMu == pytest.approx(2.0, rel=1e-12)
    assert pd.detTerm == pytest.approx(4 * math.sinh(1.0) ** 2, rel=1e-12)
    assert pd.detTerm == pytest.approx(5.524391, abs=1e-6)
    for L in (0.7, 3.0, 6.5):
        pd = D.integrate_unstable(D.axis_geodesic(diag(L), 256))
        assert pd.logMu == pytest.approx(L, rel=1e-12)


def test_poincare_identity():
    for x in (0.1, 2.0, 11.0):
        pd = D.PoincareData.from_log(x)
        assert pd.detTerm == pytest.approx(pd.mu - 2 + 1 / pd.mu, rel=1e-15)
        assert pd.detTerm == pytest.approx(4 * math.sinh(x / 2) ** 2, rel=1e-12)


def test_det_terms_constant_curvature(spec6):
    ls, lengths, data = D.attach_det_terms(spec6)
    assert np.allclose(ls.det_terms, 4 * np.sinh(ls.lengths / 2) ** 2, rtol=1e-6)
    assert np.allclose(lengths, spec6.lengths, rtol=1e-12)


@pytest.mark.slow
def test_det_terms_perturbed(bump, spec6):
    ls, lengths, data = D.attach_det_terms(spec6.truncated(5.0), bump)
    for e, pd in zip(ls.entries, data):
        assert bump.K2 * e.length - 1e-9 <= pd.logMu <= bump.K1 * e.length + 1e-9
        assert pd.detTerm == pytest.approx(pd.mu - 2 + 1 / pd.mu, rel=1e-14)
    assert np.all(ls.lengths >= spec6.truncated(5.0).lengths - 1e-9)


def test_riccati_step_halving(bump, spec6):
    g = D.representative_element(spec6, 0)
    r = D.refine_closed_geodesic(bump, D.axis_geodesic(g, 2048, start="centered"))
    a = D.integrate_unstable(r, bump)
    b = D.integrate_unstable(D.refine_closed_geodesic(bump, D.axis_geodesic(g, 4096, start="centered")),
                             bump)
    assert abs(a.logMu - b.logMu) / b.logMu < 1e-8


# ---------------------------------------------------------------- backend parity

def test_backend_parity(rng):
    try:
        cy = kernels.get_backend("cython")
    except ImportError:
        pytest.skip("compiled backend not built")
    py = kernels.get_backend("python")
    cx = rng.uniform(-1, 1, 12)
    cy_ = np.exp(rng.uniform(-0.5, 0.5, 12))
    x = rng.uniform(-1, 1, 300)
    y = np.exp(rng.uniform(-0.5, 0.5, 300))
    ub = math.cosh(1.0) - 1
    assert np.allclose(cy.bump_fields(x, y, cx, cy_, 0.05, ub), py.bump_fields(x, y, cx, cy_, 0.05, ub),
                       rtol=1e-12, atol=1e-14)
    a = cy.geodesic_rk4(0.1, 1.0, 0.4, 3.0, 400, cx, cy_, 0.05, ub)
    b = py.geodesic_rk4(0.1, 1.0, 0.4, 3.0, 400, cx, cy_, 0.05, ub)
    assert np.abs(a - b).max() < 1e-12
    K = -1.0 - 0.2 * np.sin(np.linspace(0, 6.28, 801)) ** 2
    ra = cy.riccati_relax(K, 0.01, 1.0, 50, 1e-12)
    rb = py.riccati_relax(K, 0.01, 1.0, 50, 1e-12)
    assert ra[0] == rb[0] and ra[3] == rb[3]
    assert ra[1] == pytest.approx(rb[1], rel=1e-12) and ra[2] == pytest.approx(rb[2], rel=1e-12)


# ---------------------------------------------------------------- separation

def test_axis_gap_closed_forms():
    g = diag(1.0)
    # h sends the imaginary axis to the semicircle over [h(0), h(inf)] = [-1/4, 1], which crosses it
    h = MoebiusElement.from_matrix(np.array([[1.0, -0.5], [1.0, 2.0]]) / math.sqrt(2.5))
    cross = D._axis_gap(g, h @ g @ h.inverse())
    u, v = -0.5 / 2.0, 1.0
    assert cross == pytest.approx(math.acos(abs(u + v) / abs(v - u)), abs=1e-12)
    assert D._axis_gap(g, g.inverse()) == pytest.approx(math.pi)
    # disjoint axes: semicircle over [1, 3]; cosh d = (3 + 1)/(3 - 1) = 2
    k = MoebiusElement.from_matrix(np.array([[3.0, 1.0], [1.0, 1.0]]) / math.sqrt(2.0))
    assert D._axis_gap(g, k @ g @ k.inverse()) == pytest.approx(math.acosh(2.0), abs=1e-12)


def test_separation_single_and_empty(spec6):
    e = spec6.entries[0]
    one = LengthSpectrum((e,), 6.0, conjugates=[spec6.conjugates[0]], group=spec6.group)
    rep = D.separation_report(one, e.length + 0.01, 0.1, 2.0)
    assert rep.passed and math.isinf(rep.minDistance)
    with pytest.raises(EmptyWindow):
        D.separation_report(spec6, 4.0, 0.1, 2.0)


def test_separation_inverse_pair(spec6, bolza_domain):
    # a class together with its inverse: the tangents are opposite, the distance stays large
    j = 0
    e = spec6.entries[j]
    inv = np.linalg.inv(spec6.conjugates[j])
    fake = LengthSpectrumEntry(e.length, e.length, 1, GroupWord((9,)))
    pair = LengthSpectrum((e, fake), 6.0, conjugates=[spec6.conjugates[j], inv], group=spec6.group)
    rep = D.separation_report(pair, e.length + 0.01, 0.1, 2.0, domain=bolza_domain)
    assert rep.passed and rep.minDistance > 1.0
