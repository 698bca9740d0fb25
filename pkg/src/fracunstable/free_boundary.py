"""Free boundaries of the thin trace: phases, separation, singular points."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
import math

import numpy as np
from scipy.spatial import cKDTree

from .grid import ScalarField


class NotApplicable(ValueError):
    """Raised when a quantity is undefined for the given data (e.g. empty sets)."""


@dataclass
class FreeBoundarySet:
    """Crossing points of the thin trace.

    ``gamma_plus`` and ``gamma_minus`` are ``(k, n-1)`` arrays of thin points
    on the boundaries of ``{u > tol}`` and ``{u < -tol}``.
    """

    gamma_plus: np.ndarray
    gamma_minus: np.ndarray
    singular: np.ndarray
    h: float
    meta: dict = dc_field(default_factory=dict)

    def to_dict(self):
        return {"h": self.h,
                "gamma_plus": np.asarray(self.gamma_plus).tolist(),
                "gamma_minus": np.asarray(self.gamma_minus).tolist(),
                "singular": np.asarray(self.singular).tolist()}


def _clean_trace(field: ScalarField):
    """Dense thin array with round-off-level values set to exact zero."""
    arr = field.grid.thin_lattice(field.values).copy()
    scale = np.nanmax(np.abs(arr)) if np.any(np.isfinite(arr)) else 0.0
    arr[np.abs(arr) <= 1e-12 * scale] = 0.0
    return arr


def _thin_axes(grid):
    return grid.lattice_axes()[:-1]


def _edge_crossings(arr, axes, h, upper, level):
    """Points on lattice edges where the trace passes ``level``.

    ``upper=True`` finds edges with one end ``> level`` and the other
    ``<= level``; ``upper=False`` mirrors this for ``< level`` / ``>= level``.
    """
    pts = []
    d = arr.ndim
    for ax in range(d):
        sl0 = [slice(None)] * d
        sl1 = [slice(None)] * d
        sl0[ax] = slice(0, -1)
        sl1[ax] = slice(1, None)
        v0 = arr[tuple(sl0)]
        v1 = arr[tuple(sl1)]
        ok = np.isfinite(v0) & np.isfinite(v1)
        if upper:
            hit = ok & (((v0 > level) & (v1 <= level)) | ((v1 > level) & (v0 <= level)))
        else:
            hit = ok & (((v0 < level) & (v1 >= level)) | ((v1 < level) & (v0 >= level)))
        idx = np.argwhere(hit)
        if not len(idx):
            continue
        a0 = v0[hit]
        a1 = v1[hit]
        s = np.clip((level - a0) / (a1 - a0), 0.0, 1.0)
        coords = np.stack([axes[k][idx[:, k]] for k in range(d)], axis=1)
        coords[:, ax] += s * h
        pts.append(coords)
    if not pts:
        return np.zeros((0, d))
    P = np.concatenate(pts)
    # a crossing exactly at a node is found from several edges
    P = np.unique(np.round(P / h, 9), axis=0) * h
    return P


def extract_phases(field: ScalarField, tol: float = 0.0,
                   singular_tol: float | None = None) -> FreeBoundarySet:
    """Locate the boundaries of the positive and negative thin phases.

    Crossings are placed by linear interpolation along lattice edges of the
    thin slice.  For ``a < 0`` singular candidates are attached as well.
    """
    g = field.grid
    arr = _clean_trace(field)
    axes = _thin_axes(g)
    gp = _edge_crossings(arr, axes, g.h, True, tol)
    gm = _edge_crossings(arr, axes, g.h, False, -tol)
    fbs = FreeBoundarySet(gp, gm, np.zeros((0, g.dim - 1)), g.h)
    if g.a < 0 and (len(gp) or len(gm)):
        fbs.singular = singular_candidates(field, singular_tol, fbs=fbs)
    return fbs


def nonseparation_distance(fbs: FreeBoundarySet) -> float:
    """Symmetric Hausdorff distance between ``gamma_plus`` and ``gamma_minus``."""
    P = np.asarray(fbs.gamma_plus)
    M = np.asarray(fbs.gamma_minus)
    if len(P) == 0 or len(M) == 0:
        raise NotApplicable("one of the phase boundaries is empty")
    d1 = cKDTree(M).query(P)[0].max()
    d2 = cKDTree(P).query(M)[0].max()
    return float(max(d1, d2))


def zero_set_measure(field: ScalarField, tol: float) -> float:
    """Thin measure of ``{|u(., 0)| <= tol}`` for the piecewise-linear trace.

    Each thin cell is integrated at sub-cell resolution, so the result varies
    continuously with the data instead of jumping by whole cells.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    g = field.grid
    arr = g.thin_lattice(field.values)
    axes = _thin_axes(g)
    h = g.h
    if arr.ndim == 1:
        v0, v1 = arr[:-1], arr[1:]
        ok = np.isfinite(v0) & np.isfinite(v1)
        mid = axes[0][:-1] + 0.5 * h
        ok &= g.domain.thin_level(mid[:, None]) < 0
        v0, v1 = v0[ok], v1[ok]
        dv = v1 - v0
        flat = np.abs(dv) < 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            s1 = (-tol - v0) / dv
            s2 = (tol - v0) / dv
        lo = np.clip(np.minimum(s1, s2), 0, 1)
        hi = np.clip(np.maximum(s1, s2), 0, 1)
        frac = np.where(flat, (np.abs(v0) <= tol).astype(float), hi - lo)
        return float(np.sum(frac) * h)
    # two-dimensional thin slice: bilinear sub-sampling
    k = 8
    t = (np.arange(k) + 0.5) / k
    c00 = arr[:-1, :-1]
    c10 = arr[1:, :-1]
    c01 = arr[:-1, 1:]
    c11 = arr[1:, 1:]
    ok = np.isfinite(c00) & np.isfinite(c10) & np.isfinite(c01) & np.isfinite(c11)
    idx = np.argwhere(ok)
    lower = np.stack([axes[0][idx[:, 0]], axes[1][idx[:, 1]]], axis=1)
    S, T = np.meshgrid(t, t, indexing="ij")
    S = S.ravel()
    T = T.ravel()
    v = (c00[ok][:, None] * (1 - S) * (1 - T) + c10[ok][:, None] * S * (1 - T)
         + c01[ok][:, None] * (1 - S) * T + c11[ok][:, None] * S * T)
    pts = lower[:, None, :] + h * np.stack([S, T], axis=1)[None, :, :]
    inside = g.domain.thin_level(pts) < 0
    return float(np.sum((np.abs(v) <= tol) & inside) / (k * k) * h * h)


def thin_gradient(field: ScalarField, richardson: bool = False) -> np.ndarray:
    """Tangential gradient of the thin trace on the dense thin lattice.

    Central differences with step ``h``; with ``richardson=True`` and
    ``a < 0`` the steps ``h`` and ``2h`` are combined to remove the leading
    ``h^{-a}`` error of traces that behave like ``x |x|^{-a}`` across a zero.
    Returns an array of shape ``thin_shape + (n-1,)`` (NaN where undefined).
    """
    g = field.grid
    arr = g.thin_lattice(field.values)
    h = g.h
    d = arr.ndim
    out = np.full(arr.shape + (d,), np.nan)

    def central(step):
        res = np.full(arr.shape + (d,), np.nan)
        for ax in range(d):
            fwd = np.full(arr.shape, np.nan)
            bwd = np.full(arr.shape, np.nan)
            sl_dst = [slice(None)] * d
            sl_src = [slice(None)] * d
            sl_dst[ax] = slice(0, -step)
            sl_src[ax] = slice(step, None)
            fwd[tuple(sl_dst)] = arr[tuple(sl_src)]
            bwd[tuple(sl_src)] = arr[tuple(sl_dst)]
            c = (fwd - bwd) / (2 * step * h)
            # one-sided fallback near the edge of the grid
            one = np.where(np.isfinite(fwd), (fwd - arr) / (step * h), (arr - bwd) / (step * h))
            res[..., ax] = np.where(np.isfinite(c), c, one)
        return res

    out = central(1)
    if richardson and g.a < 0:
        g2 = central(2)
        q = 2.0 ** (-g.a)
        rich = (q * out - g2) / (q - 1)
        out = np.where(np.isfinite(rich), rich, out)
    return out


def _interp_thin(grid, arr, pts):
    """Multilinear interpolation of a dense thin array at thin points."""
    from scipy.interpolate import RegularGridInterpolator

    axes = _thin_axes(grid)
    f = RegularGridInterpolator(axes, arr, bounds_error=False, fill_value=np.nan)
    return f(np.atleast_2d(pts))


def gradient_at(field: ScalarField, pts, richardson: bool = False) -> np.ndarray:
    """``|grad_{x'} u|`` at thin points by interpolating nodal gradients."""
    grad = thin_gradient(field, richardson)
    mag = np.sqrt(np.sum(grad ** 2, axis=-1))
    return _interp_thin(field.grid, mag, pts)


def default_grad_tol(field: ScalarField) -> float:
    """``2 h^{-a}`` times the mean slope ``max|u(., 0)| / R`` of the trace."""
    g = field.grid
    slope = np.max(np.abs(field.thin_trace())) / g.radius
    return 2.0 * g.h ** (-g.a) * slope


def singular_candidates(field: ScalarField, grad_tol: float | None = None,
                        fbs: FreeBoundarySet | None = None) -> np.ndarray:
    """Free-boundary points where the tangential gradient is small.

    Nearby hits (within two cells) are merged and represented by the point
    of smallest gradient.
    """
    g = field.grid
    if g.a >= 0:
        raise NotApplicable("gradient-based singular points are defined for a < 0 only")
    if grad_tol is None:
        grad_tol = default_grad_tol(field)
    if not grad_tol > 0:
        raise ValueError("grad_tol must be positive")
    if fbs is None:
        arr = _clean_trace(field)
        axes = _thin_axes(g)
        pts = np.concatenate([_edge_crossings(arr, axes, g.h, True, 0.0),
                              _edge_crossings(arr, axes, g.h, False, 0.0)])
    else:
        pts = np.concatenate([np.asarray(fbs.gamma_plus), np.asarray(fbs.gamma_minus)])
    if len(pts) == 0:
        return np.zeros((0, g.dim - 1))
    # zero nodes enclosed by zero neighbours (e.g. where zero lines meet) are
    # not edge crossings; add those lying one cell from a crossing
    tr = field.thin_trace()
    scale = max(np.max(np.abs(tr)), 1e-300)
    zpos = g.node_coords[g.thin_nodes][np.abs(tr) <= 1e-12 * scale, :-1]
    if len(zpos):
        d, _ = cKDTree(pts).query(zpos)
        pts = np.concatenate([pts, zpos[d <= 1.01 * g.h]])
    pts = np.unique(np.round(pts / g.h, 9), axis=0) * g.h
    mag = gradient_at(field, pts)
    hit = np.isfinite(mag) & (mag <= grad_tol)
    cand, cmag = pts[hit], mag[hit]
    if len(cand) == 0:
        return np.zeros((0, g.dim - 1))
    # cluster within two cells
    tree = cKDTree(cand)
    pairs = tree.query_pairs(2.0 * g.h * math.sqrt(2) + 1e-12, output_type="ndarray")
    parent = np.arange(len(cand))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    roots = np.array([find(i) for i in range(len(cand))])
    reps = []
    for r in np.unique(roots):
        members = np.flatnonzero(roots == r)
        reps.append(cand[members[np.argmin(cmag[members])]])
    return np.array(reps)


@dataclass
class NondegeneracyFit:
    """Fitted growth of ``sup_{B'_r} u^{+/-}``.

    With ``model="power_linear"`` the fit is ``C r^k + B r`` and the linear
    coefficients are kept in ``linear_plus``/``linear_minus``.
    """

    C_plus: float
    C_minus: float
    exponent_plus: float
    exponent_minus: float
    expected: float
    violations: list
    model: str = "power"
    linear_plus: float = float("nan")
    linear_minus: float = float("nan")

    @property
    def exponent(self) -> float:
        e = [x for x in (self.exponent_plus, self.exponent_minus) if np.isfinite(x)]
        return float(np.mean(e)) if e else float("nan")


def thin_sup(field: ScalarField, center, r, sign=+1, n_circle=256) -> float:
    """``sup_{B'_r(center)} (sign * u)^+`` over thin nodes and the bounding circle."""
    g = field.grid
    c = np.asarray(center, dtype=float)[: g.dim - 1]
    xt = g.node_coords[g.thin_nodes, :-1]
    inside = np.linalg.norm(xt - c, axis=1) <= r + 1e-12
    vals = sign * field.thin_trace()[inside]
    if g.dim == 2:
        ring = c + np.array([[-r], [r]])
    else:
        th = np.arange(n_circle) * 2 * math.pi / n_circle
        ring = c + r * np.stack([np.cos(th), np.sin(th)], axis=1)
    rv = sign * field.thin_interp(ring)
    allv = np.concatenate([vals, rv[np.isfinite(rv)]])
    return float(max(np.max(allv, initial=0.0), 0.0))


def _power_linear_fit(radii, sups, bounds=(0.05, 3.0)):
    """Least-squares ``sups ~ C r^k + B r`` in relative error; returns ``(C, k, B)``."""
    from scipy.optimize import minimize_scalar

    M0 = np.stack([radii, radii], axis=1) / sups[:, None]

    def solve(k):
        M = M0.copy()
        M[:, 0] = radii ** k / sups
        coef, *_ = np.linalg.lstsq(M, np.ones(len(radii)), rcond=None)
        return float(np.sum((M @ coef - 1.0) ** 2)), coef

    best = minimize_scalar(lambda k: solve(k)[0], bounds=bounds, method="bounded",
                           options={"xatol": 1e-8})
    C, B = solve(best.x)[1]
    return float(C), float(best.x), float(B)


def _leading_exponent(C, k, B):
    """Smallest exponent carried by a positive coefficient (``inf`` if none)."""
    cands = ([k] if C > 0 else []) + ([1.0] if B > 0 else [])
    return min(cands) if cands else math.inf


def nondegeneracy_fit(field: ScalarField, center, radii, slack: float = 0.05,
                      model: str = "power") -> NondegeneracyFit:
    """Fit the growth of ``sup_{B'_r} u^{+/-}`` against ``r``.

    ``model="power"`` is the log-log least-squares line.  ``model="power_linear"``
    fits ``C r^k + B r``, separating the flux-driven growth ``r^k`` from the
    generic zero-flux linear part, which otherwise biases the slope at the
    radii a grid can resolve (it needs at least four radii).

    A phase that is absent at some radius, or a leading growth exponent above
    ``(1 - a)(1 + slack)``, is recorded in ``violations``.
    """
    g = field.grid
    if g.a == 0:
        raise ValueError("nondegeneracy fit is defined for a != 0")
    if model not in ("power", "power_linear"):
        raise ValueError(f"unknown model {model!r}")
    radii = np.asarray(radii, dtype=float)
    if model == "power_linear" and len(radii) < 4:
        raise ValueError("the two-term fit needs at least four radii")
    expected = 1.0 - g.a
    res = {}
    viol = []
    for name, sgn in (("plus", 1), ("minus", -1)):
        sups = np.array([thin_sup(field, center, r, sgn) for r in radii])
        if np.any(sups <= 0):
            viol.append(f"{name} phase missing at radii {radii[sups <= 0].tolist()}")
            res[name] = (0.0, float("nan"), float("nan"))
            continue
        if model == "power":
            slope, icpt = np.polyfit(np.log(radii), np.log(sups), 1)
            C, k, B = float(math.exp(icpt)), float(slope), float("nan")
            lead = k
        else:
            C, k, B = _power_linear_fit(radii, sups)
            lead = _leading_exponent(C, k, B)
        res[name] = (C, k, B)
        if lead > expected * (1 + slack):
            viol.append(f"{name} phase grows like r^{lead:.3f}, faster than r^{expected:.3f}")
    return NondegeneracyFit(res["plus"][0], res["minus"][0], res["plus"][1],
                            res["minus"][1], expected, viol, model,
                            res["plus"][2], res["minus"][2])
