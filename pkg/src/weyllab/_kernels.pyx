# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: bump-field sums, conformal geodesic RK4, Riccati relaxation.

Signatures mirror :mod:`weyllab._kernels_py` exactly; see that module for the math.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, cos, sin, fabs

cnp.import_array()


cdef inline void _bump_sum(double x, double y, const double[::1] cx, const double[::1] cy,
                           double ubm1, double* phi, double* phix, double* phiy,
                           double* lap, bint want_lap) noexcept nogil:
    cdef Py_ssize_t j, m = cx.shape[0]
    cdef double dx, dy, q, yc, u, um1, w, s, F, dF, d2F, inv = 1.0 / ubm1
    cdef double p = 0.0, px = 0.0, py = 0.0, lp = 0.0
    for j in range(m):
        yc = cy[j]
        dx = x - cx[j]
        dy = y - yc
        q = dx * dx + dy * dy
        um1 = q / (2.0 * y * yc)
        w = um1 * inv
        if w >= 1.0:
            continue
        s = 1.0 / (1.0 - w)
        F = exp(1.0 - s)
        dF = -F * s * s * inv
        p += F
        px += dF * dx / (y * yc)
        py += dF * (y * y - yc * yc - dx * dx) / (2.0 * y * y * yc)
        if want_lap:
            u = 1.0 + um1
            d2F = F * (s * s * s * s - 2.0 * s * s * s) * inv * inv
            lp += d2F * (u * u - 1.0) + 2.0 * u * dF
    phi[0] = p
    phix[0] = px
    phiy[0] = py
    lap[0] = lp


def bump_fields(double[::1] x, double[::1] y, double[::1] cx, double[::1] cy,
                double eps, double ubm1):
    cdef Py_ssize_t i, n = x.shape[0]
    out = np.zeros((4, n))
    cdef double[:, ::1] o = out
    cdef double p, px, py, lp
    with nogil:
        for i in range(n):
            _bump_sum(x[i], y[i], cx, cy, ubm1, &p, &px, &py, &lp, True)
            o[0, i] = eps * p
            o[1, i] = eps * px
            o[2, i] = eps * py
            o[3, i] = eps * lp
    return out


cdef inline void _rhs(double x, double y, double th, const double[::1] cx,
                      const double[::1] cy, double eps, double ubm1,
                      double* fx, double* fy, double* fth) noexcept nogil:
    cdef double p = 0.0, px = 0.0, py = 0.0, lp = 0.0, e, c, s
    if cx.shape[0] > 0:
        _bump_sum(x, y, cx, cy, ubm1, &p, &px, &py, &lp, False)
    p *= eps
    px *= eps
    py *= eps
    e = y * exp(-p)
    c = cos(th)
    s = sin(th)
    fx[0] = e * c
    fy[0] = e * s
    fth[0] = e * ((py - 1.0 / y) * c - px * s)


def geodesic_rk4(double x0, double y0, double th0, double length, Py_ssize_t nsteps,
                 double[::1] cx, double[::1] cy, double eps, double ubm1):
    out = np.empty((nsteps + 1, 3))
    cdef double[:, ::1] o = out
    cdef double h = length / nsteps
    cdef double x = x0, y = y0, th = th0
    cdef double k1x, k1y, k1t, k2x, k2y, k2t, k3x, k3y, k3t, k4x, k4y, k4t
    cdef Py_ssize_t i
    with nogil:
        o[0, 0] = x
        o[0, 1] = y
        o[0, 2] = th
        for i in range(nsteps):
            _rhs(x, y, th, cx, cy, eps, ubm1, &k1x, &k1y, &k1t)
            _rhs(x + 0.5 * h * k1x, y + 0.5 * h * k1y, th + 0.5 * h * k1t,
                 cx, cy, eps, ubm1, &k2x, &k2y, &k2t)
            _rhs(x + 0.5 * h * k2x, y + 0.5 * h * k2y, th + 0.5 * h * k2t,
                 cx, cy, eps, ubm1, &k3x, &k3y, &k3t)
            _rhs(x + h * k3x, y + h * k3y, th + h * k3t,
                 cx, cy, eps, ubm1, &k4x, &k4y, &k4t)
            x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            th += h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
            o[i + 1, 0] = x
            o[i + 1, 1] = y
            o[i + 1, 2] = th
    return out


def riccati_relax(double[::1] K, double h, double u0, Py_ssize_t max_periods, double tol):
    cdef Py_ssize_t nhalf = K.shape[0] - 1
    cdef Py_ssize_t n = nhalf // 2
    cdef Py_ssize_t j, period
    cdef double u = u0, ustart, a1, a2, a3, a4, ua, v = 0.0
    cdef bint converged = False
    with nogil:
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
            if fabs(u - ustart) < tol:
                converged = True
                break
        if converged:
            ustart = u
            for j in range(n):
                a1 = -u * u - K[2 * j]
                ua = u + 0.5 * h * a1
                a2 = -ua * ua - K[2 * j + 1]
                v += h / 6.0 * (u + 2.0 * ua)
                ua = u + 0.5 * h * a2
                a3 = -ua * ua - K[2 * j + 1]
                v += h / 6.0 * (2.0 * ua)
                ua = u + h * a3
                a4 = -ua * ua - K[2 * j + 2]
                v += h / 6.0 * ua
                u += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return converged, ustart, v, period + 1
