"""Explicit solutions built from thin densities and the kernel |x - y|^{-(1+a)}.

All fields live in three dimensions with the thin plane ``{x_3 = 0}``.  With
``p = (1 + a)/2`` the radial or axial part of every potential reduces to

    H(s; d) = int_0^s (t^2 + d^2)^{-p} dt
            = s (s^2 + d^2)^{-p} 2F1(1, p; 3/2; s^2 / (s^2 + d^2)),

so only one angular integral is left for the disk densities.  That integral
is done with Gauss-Legendre rules on intervals split at the density
discontinuities and at the two directions where the integrand is not
smooth, with cubic grading toward every breakpoint.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import special

DENSITIES = ("quadrant", "line_dipole", "segment_positive")


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Density on the thin plane.

    ``support`` is ``"disk"`` (unit disk, quadrant density) or ``"segment"``
    (for the line densities, which live on the x_1-axis).
    """

    a: float
    density: str
    support: str = ""

    def __post_init__(self):
        if self.density not in DENSITIES:
            raise ValueError(f"unknown density {self.density!r}")
        if not -1 < self.a < 1:
            raise ValueError("a must lie in (-1, 1)")
        if not self.support:
            object.__setattr__(self, "support",
                               "disk" if self.density == "quadrant" else "segment")

    @property
    def kernel_exponent(self) -> float:
        return 1.0 + self.a


def _require_negative(a):
    if not a < 0:
        raise ValueError("the singular solutions are built for a < 0")


def quadrant_density(theta):
    """+1 on the first and third quadrants, -1 on the second and fourth."""
    th = np.mod(np.asarray(theta, dtype=float), 2 * math.pi)
    q = np.floor(th / (math.pi / 2)).astype(int) % 4
    # closed quadrants [0, pi/2] and [pi, 3pi/2] are positive
    on_edge = np.isclose(th, q * math.pi / 2, rtol=0, atol=1e-15) & (q % 2 == 1)
    out = np.where(q % 2 == 0, 1.0, -1.0)
    out = np.where(on_edge, 1.0, out)
    return out if out.ndim else float(out)


def radial_primitive(s, d, a):
    """``H(s; d) = int_0^s (t^2 + d^2)^{-(1+a)/2} dt`` (odd in ``s``)."""
    p = 0.5 * (1.0 + a)
    s = np.asarray(s, dtype=float)
    d = np.asarray(d, dtype=float)
    r2 = s * s + d * d
    pos = r2 > 0
    safe = np.where(pos, r2, 1.0)
    z = np.where(pos, s * s / safe, 0.0)
    z = np.minimum(z, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        out = s * safe ** (-p) * special.hyp2f1(1.0, p, 1.5, z)
    return np.where(pos, out, 0.0)


def segment_potential(points, y0, y1, a):
    """``int_{y0}^{y1} |x - (y, 0, 0)|^{-(1+a)} dy`` (unit density)."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    rho = np.hypot(x[:, 1], x[:, 2])
    return radial_primitive(x[:, 0] - y0, rho, a) - radial_primitive(x[:, 0] - y1, rho, a)


def blowup_constant(a):
    """``int_0^inf ((1 + v^2)^{-p} - v^{-2p}) dv`` for ``p = (1+a)/2 < 1/2``."""
    p = 0.5 * (1.0 + a)
    return math.sqrt(math.pi) * special.gamma(p - 0.5) / (2.0 * special.gamma(p))


_GL = {}


def _gauss(n):
    if n not in _GL:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL[n] = ((x + 1) / 2, w / 2)
    return _GL[n]


def _angular_rule(points, n=20):
    """Angles and weights for ``int_0^{2pi} F(psi) dpsi`` adapted to each point.

    Breakpoints: the quadrant edges and the directions of ``x'`` and ``-x'``.
    Every interval is halved and each half graded toward its outer endpoint
    with ``v^3``.  Returns arrays of shape (npts, nq) plus the density sign.
    """
    x = np.atleast_2d(points)
    psx = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * math.pi)
    fixed = np.array([0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi, 2 * math.pi])
    br = np.concatenate([np.broadcast_to(fixed, (len(x), 5)),
                         psx[:, None], np.mod(psx + math.pi, 2 * math.pi)[:, None]], axis=1)
    br = np.sort(br, axis=1)
    lo, hi = br[:, :-1], br[:, 1:]
    mid = 0.5 * (lo + hi)
    v, w = _gauss(n)
    g = v ** 3
    dg = 3 * v ** 2 * w
    # half toward lo: psi = lo + (mid - lo) g ; half toward hi: psi = hi - (hi - mid) g
    ang = np.concatenate([lo[..., None] + (mid - lo)[..., None] * g,
                          hi[..., None] - (hi - mid)[..., None] * g], axis=-1)
    wts = np.concatenate([(mid - lo)[..., None] * dg, (hi - mid)[..., None] * dg], axis=-1)
    sgn = np.where((np.floor(mid / (0.5 * math.pi)).astype(int) % 2) == 0, 1.0, -1.0)
    wts = wts * sgn[..., None]
    return ang.reshape(len(x), -1), wts.reshape(len(x), -1)


def _quadrant_angular(points, a, integrand, chunk=2000):
    x = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(x))
    for s in range(0, len(x), chunk):
        xs = x[s:s + chunk]
        ang, wts = _angular_rule(xs)
        c, sn = np.cos(ang), np.sin(ang)
        q = xs[:, :1] * c + xs[:, 1:2] * sn
        r2 = np.sum(xs * xs, axis=1)[:, None]
        d = np.sqrt(np.maximum(r2 - q * q, 0.0))
        out[s:s + chunk] = np.sum(integrand(q, d) * wts, axis=1)
    return out


def _quadrant_unit(points, a):
    """Quadrant potential on the unit disk with unit constant."""
    p = 0.5 * (1.0 + a)

    def F(q, d):
        def A(s):
            return (s * s + d * d) ** (1 - p) / (2 * (1 - p)) + q * radial_primitive(s, d, a)
        return A(1.0 - q) - A(-q)

    return _quadrant_angular(points, a, F)


def _u2_unit(points, a):
    """Renormalized blow-up limit of the quadrant potential (unit constant)."""
    p = 0.5 * (1.0 + a)
    kap = blowup_constant(a)

    def G(q, d):
        return q * (kap * d ** (1 - 2 * p) + radial_primitive(q, d, a))

    return _quadrant_angular(points, a, G)


@lru_cache(maxsize=64)
def calibrate_c_a(a: float, resolution: int = 64, point=(0.3, 0.3)) -> float:
    """Constant making the quadrant potential solve the symmetric problem.

    The weighted normal derivative ``-lim x_3^a d_3 u`` at a thin point deep
    in a positive quadrant is estimated from one-sided quotients
    ``(u(0) - u(eta)) (1-a) / eta^{1-a}`` at ``eta = h, 2h, 4h`` with
    ``h = 1/resolution``; Richardson extrapolation removes the ``eta^{1+a}``
    and ``eta^2`` terms.  The constant is the reciprocal of the limit.
    """
    _require_negative(a)
    return 1.0 / _unit_reaction(a, resolution, point, check=True)


def _unit_reaction(a, resolution, point, check=False):
    h = 1.0 / resolution
    etas = np.array([0.0, h, 2 * h, 4 * h])
    pts = np.array([[point[0], point[1], e] for e in etas])
    U = _quadrant_unit(pts, a)
    D = (U[0] - U[1:]) * (1 - a) / etas[1:] ** (1 - a)
    e1 = 2.0 ** (1 + a)
    D1 = (e1 * D[:-1] - D[1:]) / (e1 - 1)
    D2 = (4 * D1[0] - D1[1]) / 3
    if check and abs(D1[0] - D1[1]) > 0.05 * abs(D2):
        raise CalibrationError(
            f"flux extrapolation inconsistent ({D1[0]:.4g} vs {D1[1]:.4g}); refine resolution")
    return D2


def thin_reaction(a: float, point, resolution: int = 64) -> float:
    """``-lim x_3^a d_3 u`` of the calibrated quadrant potential at a thin point."""
    _require_negative(a)
    return _unit_reaction(a, resolution, point) * calibrate_c_a(a, resolution)


def riesz_potential(spec: KernelSpec, eval_points, c_a: float | None = None) -> np.ndarray:
    """``c_a int density(y) |x - y|^{-(1+a)} dy`` at points with ``x_3 >= 0``."""
    _require_negative(spec.a)
    a = spec.a
    x = np.atleast_2d(np.asarray(eval_points, dtype=float))
    if x.shape[1] != 3:
        raise ValueError("evaluation points must be three-dimensional")
    c = calibrate_c_a(a) if c_a is None else c_a
    if spec.density == "quadrant":
        return c * _quadrant_unit(x, a)
    if spec.density == "segment_positive":
        return c * segment_potential(x, 0.0, 1.0, a)
    return c * (-2.0 * segment_potential(x, -1.0, 0.0, a) + 2.0 * segment_potential(x, 0.0, 1.0, a))


def quadrant_potential(a, eval_points, radius: float = 1.0, c_a=None):
    """Quadrant potential of the disk of the given radius (``R^{1-a} u_1(x/R)``)."""
    x = np.atleast_2d(np.asarray(eval_points, dtype=float))
    spec = KernelSpec(a, "quadrant")
    return radius ** (1 - a) * riesz_potential(spec, x / radius, c_a)


def u2_field(a: float, eval_points, c_a=None) -> np.ndarray:
    """Homogeneous blow-up of the quadrant potential, degree ``1 - a``.

    Evaluated from the exact renormalized limit of ``R^{1-a} u_1(x/R)`` as
    ``R -> inf``; :func:`u2_by_extrapolation` gives the same values from
    truncated potentials and serves as a cross-check.
    """
    _require_negative(a)
    x = np.atleast_2d(np.asarray(eval_points, dtype=float))
    c = calibrate_c_a(a) if c_a is None else c_a
    return c * _u2_unit(x, a)


def u2_by_extrapolation(a, eval_points, radii=(4.0, 8.0, 16.0, 32.0), c_a=None):
    """Richardson limit of truncated quadrant potentials in the truncation radius.

    ``R^{1-a} u_1(x/R) = u_2(x) + O(R^{-(1+a)})`` with further corrections in
    ``R^{-(3+a)}`` and ``R^{-(5+a)}``.
    """
    vals = [quadrant_potential(a, eval_points, R, c_a) for R in radii]
    for e in (1 + a, 3 + a, 5 + a)[: len(radii) - 1]:
        q = 2.0 ** e
        vals = [(q * vals[i + 1] - vals[i]) / (q - 1) for i in range(len(vals) - 1)]
    return vals[0]


def u2_thin_gradient(a: float, x1, c_a=None):
    """Closed form ``|d_2 u_2(x_1, 0, 0)| = (4 c_a / (-a)) x_1^{-a}``."""
    _require_negative(a)
    x1 = np.asarray(x1, dtype=float)
    if np.any(x1 <= 0):
        raise ValueError("x1 must be positive")
    c = calibrate_c_a(a) if c_a is None else c_a
    return 4.0 * c / (-a) * x1 ** (-a)


def u2_gradient_fd(a, x1, step=1e-3, c_a=None):
    """``d_2 u_2`` across the x_1-axis by central differences.

    Steps ``step`` and ``2 step`` are combined to cancel the ``step^{-a}``
    error term of the odd expansion ``g x_2 + b x_2 |x_2|^{-a}``.
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))

    def cd(k):
        pts_p = np.stack([x1, np.full_like(x1, k), np.zeros_like(x1)], axis=1)
        pts_m = pts_p * np.array([1.0, -1.0, 1.0])
        return (u2_field(a, pts_p, c_a) - u2_field(a, pts_m, c_a)) / (2 * k)

    q = 2.0 ** (-a)
    return (q * cd(step) - cd(2 * step)) / (q - 1)


def line_dipole_field(a: float, eval_points, c_a=None) -> np.ndarray:
    """Density -2 on [-1, 0] and +2 on [0, 1] along the x_1-axis."""
    return riesz_potential(KernelSpec(a, "line_dipole"), eval_points, c_a)


def segment_test_function(a: float, eval_points, c_a=None) -> np.ndarray:
    """Unit density on [0, 1] along the x_1-axis.

    Its weighted Dirichlet energy over the upper half-space equals its
    integral along the segment.
    """
    return riesz_potential(KernelSpec(a, "segment_positive"), eval_points, c_a)


def segment_test_function_axis(a, x, c_a=None):
    """On-axis closed form ``(c_a/(-a)) (x^{-a} + (1-x)^{-a})`` for ``0 < x < 1``."""
    _require_negative(a)
    c = calibrate_c_a(a) if c_a is None else c_a
    x = np.asarray(x, dtype=float)
    return c / (-a) * (x ** (-a) + (1 - x) ** (-a))


def line_dipole_axis(a, x, c_a=None):
    """On-axis closed form of :func:`line_dipole_field` for ``0 < x < 1``."""
    _require_negative(a)
    c = calibrate_c_a(a) if c_a is None else c_a
    x = np.asarray(x, dtype=float)
    lead = 4.0 * c / (-a) * x ** (-a)
    rest = 2.0 * c / (-a) * ((1 - x) ** (-a) - (1 + x) ** (-a))
    return lead + rest
