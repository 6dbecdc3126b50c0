"""Upper half-plane geometry, Moebius isometries and conformally perturbed metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EllipticElement, IdentityElement, NotNegativelyCurved, ParabolicElement

PARABOLIC_TOL = 1e-9
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PlanePoint:
    x: float
    y: float

    def __post_init__(self):
        if not self.y > 0.0:
            raise ValueError(f"half-plane point needs y > 0, got y={self.y!r}")

    @property
    def z(self) -> complex:
        return complex(self.x, self.y)

    @classmethod
    def from_complex(cls, z) -> "PlanePoint":
        return cls(float(z.real), float(z.imag))


I = PlanePoint(0.0, 1.0)


@dataclass(frozen=True)
class UnitTangent:
    """Unit tangent vector; ``angle`` is the Euclidean direction in the half-plane chart."""

    base: PlanePoint
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % TWO_PI)


@dataclass(frozen=True, eq=False)
class MoebiusElement:
    """z -> (az + b)/(cz + d) with ad - bc = 1; g and -g are the same element."""

    a: float
    b: float
    c: float
    d: float

    @classmethod
    def from_matrix(cls, m, normalize=True) -> "MoebiusElement":
        m = np.asarray(m, dtype=float)
        if normalize:
            det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            if det <= 0.0:
                raise ValueError("orientation-preserving element needs det > 0")
            m = m / math.sqrt(det)
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]))

    @classmethod
    def identity(cls) -> "MoebiusElement":
        return cls(1.0, 0.0, 0.0, 1.0)

    @classmethod
    def dilation(cls, lam) -> "MoebiusElement":
        """z -> lam z; translation length ln(lam) along the imaginary axis."""
        r = math.sqrt(lam)
        return cls(r, 0.0, 0.0, 1.0 / r)

    @classmethod
    def rotation(cls, t) -> "MoebiusElement":
        """Matrix [[cos t, -sin t], [sin t, cos t]]: rotation about i by angle 2t."""
        return cls(math.cos(t), -math.sin(t), math.sin(t), math.cos(t))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    @property
    def trace(self) -> float:
        return self.a + self.d

    def inverse(self) -> "MoebiusElement":
        return MoebiusElement(self.d, -self.b, -self.c, self.a)

    def __matmul__(self, other: "MoebiusElement") -> "MoebiusElement":
        return MoebiusElement.from_matrix(self.matrix @ other.matrix)

    def __call__(self, p):
        return apply_moebius(self, p)

    def canonical(self) -> "MoebiusElement":
        """Representative of +-g with positive trace (largest entry positive if traceless)."""
        m = self.matrix
        t = self.trace
        if abs(t) > 1e-6:
            s = 1.0 if t > 0 else -1.0
        else:
            flat = m.ravel()
            s = 1.0 if flat[np.argmax(np.abs(flat))] > 0 else -1.0
        return MoebiusElement(*(s * m).ravel().tolist())

    def isclose(self, other: "MoebiusElement", tol=1e-12) -> bool:
        m, n = self.matrix, other.matrix
        scale = max(1.0, float(np.abs(m).max()))
        return bool(min(np.abs(m - n).max(), np.abs(m + n).max()) <= tol * scale)

    def __eq__(self, other):
        if not isinstance(other, MoebiusElement):
            return NotImplemented
        return self.isclose(other)

    __hash__ = None

    def fixed_points(self):
        """(repelling, attracting) boundary fixed points of a hyperbolic element.

        Points are real numbers or ``math.inf``.
        """
        g = self.canonical()
        a, b, c, d = g.a, g.b, g.c, g.d
        t = a + d
        disc = math.sqrt(max(t * t - 4.0, 0.0))
        if abs(c) < 1e-300:
            # upper triangular: fixed points b/(d - a) and infinity
            fin = b / (d - a)
            return (fin, math.inf) if a > d else (math.inf, fin)
        # roots of c z^2 + (d - a) z - b = 0; g'(z) = (cz + d)^-2, so the
        # attracting one has |cz + d| > 1
        r1 = ((a - d) + disc) / (2.0 * c)
        r2 = ((a - d) - disc) / (2.0 * c)
        if abs(c * r1 + d) > 1.0:
            return r2, r1
        return r1, r2

    def axis_frame(self) -> "MoebiusElement":
        """An isometry h with h(0) = repelling, h(inf) = attracting fixed point.

        h maps the upward imaginary axis onto the oriented axis of ``self``.
        """
        rep, att = self.fixed_points()
        if math.isinf(att):
            m = np.array([[1.0, rep], [0.0, 1.0]])
        elif math.isinf(rep):
            m = np.array([[att, -1.0], [1.0, 0.0]])
        else:
            # z -> (att z + rep) / (z + 1) has det att - rep; fix orientation by sign
            m = np.array([[att, rep], [1.0, 1.0]])
            if att - rep < 0:
                m = np.array([[-att, rep], [-1.0, 1.0]])
        return MoebiusElement.from_matrix(m)


def hyp_distance(p: PlanePoint, q: PlanePoint) -> float:
    """cosh d = 1 + |p - q|^2 / (2 p.y q.y), evaluated via the half-distance sinh."""
    e = math.hypot(p.x - q.x, p.y - q.y)
    return 2.0 * math.asinh(e / (2.0 * math.sqrt(p.y * q.y)))


def hyp_distance_arrays(z1, z2):
    """Vectorised distance between complex arrays of half-plane points."""
    z1 = np.asarray(z1)
    z2 = np.asarray(z2)
    return 2.0 * np.arcsinh(np.abs(z1 - z2) / (2.0 * np.sqrt(z1.imag * z2.imag)))


def apply_moebius(g: MoebiusElement, p: PlanePoint) -> PlanePoint:
    z = p.z
    den = g.c * z + g.d
    assert den != 0, "cz + d vanished for a half-plane point"
    return PlanePoint.from_complex((g.a * z + g.b) / den)


def moebius_arrays(m, z):
    """Apply a 2x2 real matrix to a complex array."""
    return (m[0, 0] * z + m[0, 1]) / (m[1, 0] * z + m[1, 1])


def translation_length(g: MoebiusElement) -> float:
    """L = 2 arccosh(|tr g| / 2) for hyperbolic g; otherwise raise by class."""
    t = abs(g.trace)
    if abs(t - 2.0) < PARABOLIC_TOL:
        m = g.matrix
        e = np.eye(2)
        if min(np.abs(m - e).max(), np.abs(m + e).max()) < PARABOLIC_TOL:
            raise IdentityElement("identity element has no translation length")
        raise ParabolicElement(f"parabolic element (|tr| = {t!r})")
    if t < 2.0:
        raise EllipticElement(f"elliptic element (|tr| = {t!r})")
    return 2.0 * math.acosh(t / 2.0)


def direction_towards(z, w):
    """Euclidean angle at z of the geodesic from z to w (arrays allowed)."""
    return np.angle((w - z) / (w - np.conj(z))) + 0.5 * math.pi


def _wrap_abs(a):
    """|a| reduced to [0, pi]."""
    return np.abs((np.asarray(a) + math.pi) % TWO_PI - math.pi)


def sasaki_proxy(z1, a1, z2, a2):
    """sqrt(d(p, q)^2 + theta^2) for tangent vectors (z1, a1), (z2, a2); vectorised.

    theta is the angle at q between the second vector and the parallel transport
    of the first along the connecting geodesic.  Transport along a geodesic keeps
    the angle to the geodesic's tangent, which in a conformal chart is a plain
    Euclidean angle difference.
    """
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    d = hyp_distance_arrays(z1, z2)
    same = d < 1e-14
    z2s = np.where(same, z1 + 1j * 1e-3 * z1.imag, z2)
    out_dir = direction_towards(z1, z2s)
    in_dir = direction_towards(z2s, z1) + math.pi
    transported = np.where(same, a1, a1 - out_dir + in_dir)
    theta = _wrap_abs(a2 - transported)
    return np.sqrt(d * d + theta * theta)


def sasaki_distance(u: UnitTangent, v: UnitTangent) -> float:
    return float(sasaki_proxy(u.base.z, u.angle, v.base.z, v.angle))


class BumpSum:
    """phi(p) = amplitude * sum_c F(cosh d(p, c)) over a finite list of centres.

    Summing over a whole Gamma-orbit of one centre gives a Gamma-invariant field on
    any region where the centre list contains every orbit point within ``radius``.
    """

    def __init__(self, centers, radius, amplitude):
        c = np.asarray(centers, dtype=complex).ravel()
        self.cx = np.ascontiguousarray(c.real, dtype=float)
        self.cy = np.ascontiguousarray(c.imag, dtype=float)
        self.radius = float(radius)
        self.amplitude = float(amplitude)
        self.ubm1 = math.cosh(self.radius) - 1.0

    @property
    def centers(self):
        return self.cx + 1j * self.cy

    def fields(self, z):
        """(phi, phi_x, phi_y, hyperbolic Laplacian) at complex points ``z``."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        x = np.ascontiguousarray(z.real)
        y = np.ascontiguousarray(z.imag)
        return kernels.bump_fields(x, y, self.cx, self.cy, self.amplitude, self.ubm1)

    def restricted(self, z, reach):
        """Copy keeping only centres within ``reach + radius`` of some point of ``z``."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        c = self.centers
        if c.size == 0:
            return self
        near = np.zeros(c.size, dtype=bool)
        for chunk in np.array_split(z, max(1, z.size // 256)):
            d = hyp_distance_arrays(chunk[:, None], c[None, :])
            near |= (d <= reach + self.radius).any(axis=0)
        return BumpSum(c[near], self.radius, self.amplitude)


@dataclass
class ConformalMetric:
    """exp(2 phi) times the hyperbolic metric; ``phi=None`` is the base metric.

    ``K1``, ``K2`` are pinching constants with -K1^2 <= K <= -K2^2.
    """

    phi: BumpSum | None = None
    K1: float = 1.0
    K2: float = 1.0
    certificate: dict = field(default_factory=dict)
    valid_radius: float = math.inf

    @property
    def is_base(self) -> bool:
        return self.phi is None or self.phi.amplitude == 0.0 or self.phi.cx.size == 0

    def fields(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if self.is_base:
            return np.zeros((4, z.size))
        return self.phi.fields(z)

    def curvature(self, z):
        """Gaussian curvature K = exp(-2 phi) (-1 - Lap_hyp phi) at complex points."""
        phi, _, _, lap = self.fields(z)
        return np.exp(-2.0 * phi) * (-1.0 - lap)


def curvature_at(m: ConformalMetric, p: PlanePoint) -> float:
    return float(m.curvature(p.z)[0])


def pinching_bounds(m: ConformalMetric, samples):
    """Empirical (K1, K2) with -K1^2 <= K <= -K2^2 over ``samples`` (complex array)."""
    K = m.curvature(samples)
    if np.any(K >= 0.0):
        worst = float(K.max())
        raise NotNegativelyCurved(f"sampled curvature reaches {worst!r} >= 0")
    return math.sqrt(-float(K.min())), math.sqrt(-float(K.max()))


def disc_samples(center: PlanePoint, radius, n_radial=40, n_angular=64):
    """Polar grid of half-plane points filling the hyperbolic disc about ``center``."""
    r = np.linspace(0.0, radius, n_radial)
    t = np.linspace(0.0, TWO_PI, n_angular, endpoint=False)
    rr, tt = np.meshgrid(r[1:], t)
    # disc model point tanh(r/2) e^{it} mapped to the half-plane around i
    w = np.tanh(rr / 2.0) * np.exp(1j * tt)
    z = 1j * (1.0 + w) / (1.0 - w)
    z = np.concatenate([[1j], z.ravel()])
    return center.x + center.y * z
