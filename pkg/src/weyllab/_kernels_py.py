"""Reference implementations of the hot loops (numpy + plain Python).

The bump is a radial function of ``u = cosh d(p, c)``::

    w = (u - 1) / (u_b - 1),    F(u) = exp(1 - 1/(1 - w))  for w < 1, else 0

so it is smooth at the centre and compactly supported in the hyperbolic disc of
radius ``arccosh(u_b)``.  For a radial function of ``u`` the hyperbolic Laplacian
``y^2 (d_xx + d_yy)`` is ``F''(u) (u^2 - 1) + 2 u F'(u)``.

The geodesic equations are written for the conformal metric
``exp(2 phi) |dz|^2 / y^2`` with unit speed and Euclidean tangent angle ``theta``.
"""
import math

import numpy as np


def _bump_terms(x, y, cx, cy, ubm1, want_lap=True):
    dx = x - cx
    dy = y - cy
    q = dx * dx + dy * dy
    um1 = q / (2.0 * y * cy)
    w = um1 / ubm1
    inside = w < 1.0
    if not np.any(inside):
        return 0.0, 0.0, 0.0, 0.0
    dx, cyi, um1, w = dx[inside], cy[inside], um1[inside], w[inside]
    s = 1.0 / (1.0 - w)
    F = np.exp(1.0 - s)
    dF = -F * s * s / ubm1
    px = dF * dx / (y * cyi)
    py = dF * (y * y - cyi * cyi - dx * dx) / (2.0 * y * y * cyi)
    lap = 0.0
    if want_lap:
        u = 1.0 + um1
        d2F = F * (s**4 - 2.0 * s**3) / ubm1**2
        lap = float(np.sum(d2F * (u * u - 1.0) + 2.0 * u * dF))
    return float(np.sum(F)), float(np.sum(px)), float(np.sum(py)), lap


def bump_fields(x, y, cx, cy, eps, ubm1):
    """Return a (4, n) array: phi, d phi/dx, d phi/dy, hyperbolic Laplacian of phi."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros((4, x.shape[0]))
    for i in range(x.shape[0]):
        out[:, i] = _bump_terms(x[i], y[i], cx, cy, ubm1)
    return eps * out


def _rhs(x, y, th, cx, cy, eps, ubm1):
    if cx.shape[0]:
        p, px, py, _ = _bump_terms(x, y, cx, cy, ubm1, want_lap=False)
        p, px, py = eps * p, eps * px, eps * py
    else:
        p = px = py = 0.0
    e = y * math.exp(-p)
    c, s = math.cos(th), math.sin(th)
    return e * c, e * s, e * ((py - 1.0 / y) * c - px * s)


def geodesic_rk4(x0, y0, th0, length, nsteps, cx, cy, eps, ubm1):
    """Fixed-step RK4 of the unit-speed geodesic; returns (nsteps + 1, 3) states."""
    out = np.empty((nsteps + 1, 3))
    h = length / nsteps
    x, y, th = x0, y0, th0
    out[0] = x, y, th
    for i in range(nsteps):
        k1 = _rhs(x, y, th, cx, cy, eps, ubm1)
        k2 = _rhs(x + 0.5 * h * k1[0], y + 0.5 * h * k1[1], th + 0.5 * h * k1[2], cx, cy, eps, ubm1)
        k3 = _rhs(x + 0.5 * h * k2[0], y + 0.5 * h * k2[1], th + 0.5 * h * k2[2], cx, cy, eps, ubm1)
        k4 = _rhs(x + h * k3[0], y + h * k3[1], th + h * k3[2], cx, cy, eps, ubm1)
        x += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        y += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        th += h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        out[i + 1] = x, y, th
    return out


def riccati_relax(K, h, u0, max_periods, tol):
    """Relax ``u' = -u^2 - K`` to its periodic (unstable) solution.

    ``K`` holds curvature at half-step spacing over one period (``2n + 1`` values,
    first equal to last).  Returns ``(converged, u_start, integral_of_u, periods)``;
    the integral is taken over one extra period with the same RK4 stages.
    """
    K = np.asarray(K, dtype=float)
    n = (K.shape[0] - 1) // 2
    u = u0
    period = 0
    converged = False
    for period in range(max_periods):
        ustart = u
        for j in range(n):
            a1 = -u * u - K[2 * j]
            ua = u + 0.5 * h * a1
            a2 = -ua * ua - K[2 * j + 1]
            ua = u + 0.5 * h * a2
            a3 = -ua * ua - K[2 * j + 1]
            ua = u + h * a3
            a4 = -ua * ua - K[2 * j + 2]
            u += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        if abs(u - ustart) < tol:
            converged = True
            break
    v = 0.0
    if converged:
        ustart = u
        for j in range(n):
            a1 = -u * u - K[2 * j]
            u2 = u + 0.5 * h * a1
            a2 = -u2 * u2 - K[2 * j + 1]
            u3 = u + 0.5 * h * a2
            a3 = -u3 * u3 - K[2 * j + 1]
            u4 = u + h * a3
            a4 = -u4 * u4 - K[2 * j + 2]
            v += h / 6.0 * (u + 2.0 * u2 + 2.0 * u3 + u4)
            u += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return converged, ustart, v, period + 1
