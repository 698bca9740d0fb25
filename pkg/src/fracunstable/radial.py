"""Monotonicity quantities W, N, S, T and blow-up sequences."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
import math

import numpy as np
from scipy import special

from .functional import eval_energy, rescale
from .grid import Params, ScalarField, dirichlet_density

KINDS = ("weiss", "almgren", "S", "T")


@dataclass
class RadialProfile:
    kind: str
    center: tuple
    radii: np.ndarray
    values: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        self.radii = np.asarray(self.radii, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.radii) <= 0):
            raise ValueError("radii must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("profile values must be finite")

    def rows(self):
        c = " ".join(f"{v:.10g}" for v in self.center)
        return [[self.kind, c, float(r), float(v)] for r, v in zip(self.radii, self.values)]


def _center(field, center):
    d = field.grid.dim
    c = np.zeros(d)
    if center is not None:
        c[: d - 1] = np.asarray(center, dtype=float)[: d - 1]
    return c


def _check_radii(field, c, radii):
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing")
    g = field.grid
    # largest ball about c inside the domain, measured on a coarse sphere
    lim = _inner_radius(g, c)
    if np.any(radii <= 0) or np.any(radii > lim + 1e-12):
        raise ValueError(f"radii must lie in (0, {lim:.6g}] for this center")
    return radii


def _inner_radius(grid, c):
    dom = grid.domain
    if dom.kind == "halfball":
        return dom.radius - np.linalg.norm(c)
    if dom.kind == "halfbox":
        w = np.asarray(dom.half_widths)
        return float(min(np.min(w - np.abs(c[:-1])), dom.height))
    raise ValueError("radial analysis needs a half-ball or half-box grid")


_JAC = {}


def _jacobi01(n, a):
    """Nodes/weights for ``int_0^1 f(t) t^a dt``."""
    key = (n, a)
    if key not in _JAC:
        x, w = special.roots_jacobi(n, 0.0, a)
        _JAC[key] = ((x + 1) / 2, w / 2 ** (1 + a))
    return _JAC[key]


def hemisphere_rule(dim, r, a, n=48):
    """Points on the unit upper hemisphere and weights for ``int x_n^a f dH^{n-1}``.

    The returned weights integrate over the sphere of radius ``r``, so the
    caller shifts and scales the points by ``c + r * p``.
    """
    if dim == 2:
        t, w = _jacobi01(n, a)
        alpha = t * math.pi / 2
        wt = w * (math.pi / 2) ** (1 + a) * np.where(
            alpha > 0, np.sin(alpha) / alpha, 1.0) ** a
        ang = np.concatenate([alpha, math.pi - alpha])
        wts = np.concatenate([wt, wt])
        pts = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return pts, wts * r ** (1 + a)
    t, w = _jacobi01(n // 2, a)
    m = 2 * n
    phi = np.arange(m) * 2 * math.pi / m
    T, P = np.meshgrid(t, phi, indexing="ij")
    st = np.sqrt(1 - T * T)
    pts = np.stack([st * np.cos(P), st * np.sin(P), T], axis=-1).reshape(-1, 3)
    wts = (w[:, None] * np.full(m, 2 * math.pi / m)[None, :]).ravel()
    return pts, wts * r ** (2 + a)


def hemisphere_integral(field: ScalarField, center, r, fn=np.square, weighted=True):
    """``int_{(dB_r)^+} x_n^a fn(u) dH^{n-1}`` by interpolation on the sphere."""
    g = field.grid
    a = g.a if weighted else 0.0
    c = _center(field, center)
    pts, wts = hemisphere_rule(g.dim, r, a)
    vals = field(c + r * pts)
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"sphere of radius {r} leaves the grid")
    return float(np.dot(fn(vals), wts))


def weiss(field: ScalarField, center=None, radii=(), params: Params | None = None) -> RadialProfile:
    """Scale-invariant energy minus the boundary correction of degree 1-a.

    ``W(r) = r^{a-n} J(u; B_r) - (1-a) r^{a-n-1} int_{(dB_r)^+} x_n^a u^2``
    where ``J`` uses ``params`` (default: the one-sided constants (0, 1)).
    """
    g = field.grid
    params = params or Params(g.a, 0.0, 1.0)
    c = _center(field, center)
    radii = _check_radii(field, c, radii)
    n, a = g.dim, g.a
    vals, parts = [], []
    for r in radii:
        e = eval_energy(field, params, ball=(c[:-1], r))
        bd = hemisphere_integral(field, c, r)
        w = r ** (a - n) * e.total - (1 - a) * r ** (a - n - 1) * bd
        vals.append(w)
        parts.append((e.dirichlet, e.thin, bd))
    return RadialProfile("weiss", tuple(c[:-1]), radii, vals, {"terms": parts})


def almgren(field: ScalarField, center=None, radii=()) -> RadialProfile:
    """Frequency ``r int_{B_r}|grad u|^2 / int_{dB_r} u^2`` for ``a = 0``.

    Both integrals are over the even reflection, whose factor two cancels.
    """
    g = field.grid
    if g.a != 0:
        raise ValueError("the frequency function is implemented for a = 0 only")
    c = _center(field, center)
    radii = _check_radii(field, c, radii)
    dens = dirichlet_density(field)
    vals, bad = [], []
    scale = max(np.max(np.abs(field.values)), 1e-300)
    for r in radii:
        d = float(np.dot(dens * g.ball_cell_fraction(c, r), g.stiff_weights))
        hb = hemisphere_integral(field, c, r)
        if hb <= (1e-12 * scale) ** 2 * r ** (g.dim - 1):
            bad.append(float(r))
            vals.append(np.nan)
        else:
            vals.append(r * d / hb)
    if bad:
        raise ValueError(f"field vanishes on the sphere at radii {bad}")
    return RadialProfile("almgren", tuple(c[:-1]), radii, vals)


def s_t_profiles(field: ScalarField, center=None, radii=()):
    """``S(r) = (r^{1-n} int_{dB_r} u^2)^{1/2}`` and ``T(r) = r^{1-n} int_{B'_r} u^-``.

    ``S`` integrates over the full sphere of the even reflection.
    """
    g = field.grid
    c = _center(field, center)
    radii = _check_radii(field, c, radii)
    n = g.dim
    S, T = [], []
    neg = np.maximum(-field.thin_trace(), 0.0)
    for r in radii:
        sph = 2.0 * hemisphere_integral(field, c, r, weighted=False)
        S.append(math.sqrt(max(sph, 0.0) * r ** (1 - n)))
        m = g.thin_mass * g.ball_thin_fraction(c[:-1], r)
        T.append(float(np.dot(neg, m)) * r ** (1 - n))
    ct = tuple(c[:-1])
    return RadialProfile("S", ct, radii, S), RadialProfile("T", ct, radii, T)


def blowup_sequence(field: ScalarField, center, radii, normalization="power_2s",
                    tol=None, resolution=None):
    """Rescalings ``u(x0 + r x)/r^{1-a}`` or ``u(x0 + r x)/S(r)`` on unit grids."""
    g = field.grid
    c = _center(field, center)
    tol = g.h ** (1 - g.a) if tol is None else tol
    u0 = float(field(c[None, :])[0])
    if not abs(u0) <= tol:
        raise ValueError(f"|u(center)| = {abs(u0):.3g} exceeds free-boundary tolerance {tol:.3g}")
    out = []
    for r in radii:
        if normalization == "power_2s":
            out.append(rescale(field, c[:-1], r, 1 - g.a, resolution))
        elif normalization == "by_S":
            Sp, _ = s_t_profiles(field, c[:-1], [r])
            s = Sp.values[0]
            if s < 1e-14:
                raise ValueError(f"S({r}) = {s:.3g} is below tolerance")
            v = rescale(field, c[:-1], r, 0.0, resolution)
            out.append(ScalarField(v.grid, v.values / s))
        else:
            raise ValueError(f"unknown normalization {normalization!r}")
    return out


def homogeneity_deviation(field: ScalarField, degree: float, floor: float | None = None,
                          stride: int = 4) -> float:
    """Largest relative defect ``|u(tx) - t^k u(x)|`` over ``t in {1/2, 1/4}``.

    Sample points ``x`` are grid nodes whose lattice indices are multiples of
    ``stride`` so that ``tx`` are nodes as well.  Relative errors are taken
    against ``max(|u(x)|, floor)`` with ``floor`` defaulting to 5% of the
    largest sampled ``|u|``.
    """
    g = field.grid
    rel = g.node_lattice - g.offset
    sel = np.all(rel % stride == 0, axis=1) & np.any(rel != 0, axis=1)
    x = g.node_coords[sel]
    ux = field.values[sel]
    if floor is None:
        floor = 0.05 * max(np.max(np.abs(ux)), 1e-300)
    dev = 0.0
    for t in (0.5, 0.25):
        utx = field(t * x)
        ok = np.isfinite(utx)
        d = np.abs(utx[ok] - t ** degree * ux[ok]) / np.maximum(np.abs(ux[ok]), floor)
        if d.size:
            dev = max(dev, float(d.max()))
    return dev
