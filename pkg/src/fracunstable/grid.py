"""Discrete half-domains carrying the degenerate weight x_n^a.

The lattice is uniform with spacing ``h``; node ``(i_0, ..., i_{n-1})`` sits at
``((i_0 - o_0) h, ..., (i_{n-1} - o_{n-1}) h)`` with ``o_{n-1} = 0`` so the
bottom layer is the thin space ``{x_n = 0}``.  Cells are lattice squares/cubes
indexed by their lower corner.  Curved boundaries are handled through cut-cell
volume fractions estimated by sub-sampling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import itertools
import math

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator


@dataclass(frozen=True)
class Params:
    """Problem constants.

    Parameters
    ----------
    a : float
        Weight exponent in (-1, 1).
    lambda_plus, lambda_minus : float
        Nonnegative coefficients of the positive and negative parts in the
        thin term.  The defaults ``(0, 1)`` give the one-sided functional
        ``int |grad u|^2 x_n^a - 2 int u^-``.
    """

    a: float
    lambda_plus: float = 0.0
    lambda_minus: float = 1.0

    def __post_init__(self):
        if not (-1.0 < float(self.a) < 1.0) or not math.isfinite(self.a):
            raise ValueError(f"a must lie in (-1, 1), got {self.a}")
        if self.lambda_plus < 0 or self.lambda_minus < 0:
            raise ValueError("lambda_plus and lambda_minus must be >= 0")

    @property
    def s(self) -> float:
        """Fractional order (1 - a)/2."""
        return (1.0 - self.a) / 2.0

    @property
    def homogeneity(self) -> float:
        """Natural scaling degree 1 - a = 2s."""
        return 1.0 - self.a

    @classmethod
    def symmetric(cls, a: float) -> "Params":
        """Constants with ``lambda_plus = lambda_minus = 1``."""
        return cls(a, 1.0, 1.0)

    def with_lambdas(self, lambda_plus: float, lambda_minus: float) -> "Params":
        return Params(self.a, lambda_plus, lambda_minus)


# --------------------------------------------------------------------------
# domain descriptors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HalfBall:
    radius: float

    kind = "halfball"

    def level(self, x):
        """Negative inside, positive outside, roughly a signed distance."""
        return np.sqrt(np.sum(x * x, axis=-1)) - self.radius

    def thin_level(self, xt):
        return np.sqrt(np.sum(xt * xt, axis=-1)) - self.radius

    def bounds(self, dim):
        r = self.radius
        return [(-r, r)] * (dim - 1) + [(0.0, r)]

    def describe(self):
        return {"kind": self.kind, "radius": self.radius}


@dataclass(frozen=True)
class HalfBox:
    half_widths: tuple
    height: float

    kind = "halfbox"

    def level(self, x):
        parts = [np.abs(x[..., d]) - w for d, w in enumerate(self.half_widths)]
        parts.append(x[..., -1] - self.height)
        return np.max(np.stack(parts, axis=-1), axis=-1)

    def thin_level(self, xt):
        parts = [np.abs(xt[..., d]) - w for d, w in enumerate(self.half_widths)]
        return np.max(np.stack(parts, axis=-1), axis=-1)

    def bounds(self, dim):
        return [(-w, w) for w in self.half_widths] + [(0.0, self.height)]

    def describe(self):
        return {"kind": self.kind, "half_widths": list(self.half_widths),
                "height": self.height}


@dataclass(frozen=True)
class Sector:
    """``{|x| < R, x_3 >= 0, 0 < atan2(x_2, x_1) < pi/i}`` in three dimensions."""

    i: int
    radius: float

    kind = "sector"

    @property
    def opening(self):
        return math.pi / self.i

    def _planes(self, x1, x2):
        al = self.opening
        return -x2, -math.sin(al) * x1 + math.cos(al) * x2

    def level(self, x):
        p1, p2 = self._planes(x[..., 0], x[..., 1])
        r = np.sqrt(np.sum(x * x, axis=-1)) - self.radius
        return np.maximum(np.maximum(p1, p2), r)

    def thin_level(self, xt):
        p1, p2 = self._planes(xt[..., 0], xt[..., 1])
        r = np.sqrt(np.sum(xt * xt, axis=-1)) - self.radius
        return np.maximum(np.maximum(p1, p2), r)

    def bounds(self, dim):
        r = self.radius
        lo1 = min(0.0, r * math.cos(self.opening))
        return [(lo1, r), (0.0, r), (0.0, r)]

    def describe(self):
        return {"kind": self.kind, "i": self.i, "radius": self.radius}


def layer_weight(k, h, a):
    """Exact ``int_{kh}^{(k+1)h} t^a dt`` for integer layers ``k >= 0``."""
    k = np.asarray(k, dtype=float)
    return h ** (1 + a) * ((k + 1) ** (1 + a) - k ** (1 + a)) / (1 + a)


def harmonic_layer_weight(k, h, a):
    """Normal-direction weight ``h^2 / int_{layer} t^{-a} dt``.

    This is the harmonic mean of ``t^a`` over the layer times its thickness,
    which makes ``x_n^{1-a}/(1-a)`` exactly discrete-harmonic.
    """
    k = np.asarray(k, dtype=float)
    return h ** (1 + a) * (1 - a) / ((k + 1) ** (1 - a) - k ** (1 - a))


_SUBSAMPLE = {2: 16, 3: 6}


def _subsample_fraction(inside_fn, lower, h, k, chunk=4096):
    """Fraction of each box ``lower + [0, h]^n`` where ``inside_fn`` holds."""
    dim = lower.shape[1]
    t = (np.arange(k) + 0.5) / k * h
    offs = np.array(list(itertools.product(t, repeat=dim)))
    out = np.empty(len(lower))
    for s in range(0, len(lower), chunk):
        pts = lower[s:s + chunk, None, :] + offs[None, :, :]
        out[s:s + chunk] = inside_fn(pts).mean(axis=1)
    return out


class WeightedGrid:
    """Uniform lattice discretization of a half-domain with weight x_n^a.

    Attributes
    ----------
    dim : int
    h : float
        Lattice spacing.
    a : float
    domain : HalfBall | HalfBox | Sector
    shape : tuple
        Lattice shape (nodes per axis).
    offset : ndarray
        Integer index of the coordinate origin along each axis.
    node_coords : ndarray, shape (N, dim)
    thin_nodes : ndarray
        Indices (into the node list) of nodes with x_n = 0.
    thin_mass : ndarray
        Measure of the thin dual cell of each thin node inside the domain.
    interior : ndarray of bool
        Nodes strictly inside the domain (unknowns of the solvers).
    cell_weights : ndarray
        Cut fraction times ``int_cell x_n^a dx`` for every active cell.
    """

    def __init__(self, dim, h, a, domain):
        if dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        self.dim = int(dim)
        self.h = float(h)
        self.a = float(a)
        self.domain = domain
        self._build()

    # -- construction -----------------------------------------------------
    def _build(self):
        dim, h, a = self.dim, self.h, self.a
        bnds = self.domain.bounds(dim)
        lo = [int(math.floor(b[0] / h + 1e-9)) - 1 for b in bnds]
        hi = [int(math.ceil(b[1] / h - 1e-9)) + 1 for b in bnds]
        lo[-1] = 0
        self.offset = np.array([-l for l in lo])
        self.shape = tuple(hh - l + 1 for l, hh in zip(lo, hi))
        cshape = tuple(s - 1 for s in self.shape)

        # cell classification by the level function at cell centers
        cidx = np.indices(cshape).reshape(dim, -1).T
        lower = (cidx - self.offset) * h
        centers = lower + 0.5 * h
        lev = self.domain.level(centers)
        half_diag = 0.5 * h * math.sqrt(dim) * 1.001
        frac = np.where(lev < -half_diag, 1.0, 0.0)
        cut = np.abs(lev) <= half_diag
        if np.any(cut):
            frac[cut] = _subsample_fraction(
                lambda p: self.domain.level(p) < 0, lower[cut], h, _SUBSAMPLE[dim])
        # a cell touching a strictly interior node must carry its edges
        corner_in = np.zeros(len(cidx), dtype=bool)
        for corner in itertools.product((0, 1), repeat=dim):
            corner_in |= self.domain.level(lower + h * np.array(corner)) < -1e-9 * h
        kk = _SUBSAMPLE[dim]
        frac = np.where(corner_in & (frac == 0), 1.0 / kk ** dim, frac)
        active = frac > 0
        self.cell_lattice = cidx[active]
        self.cell_frac = frac[active]
        self.cell_midpoints = centers[active]
        k = self.cell_lattice[:, -1]
        vol_t = h ** (dim - 1)
        # the stiffness lives on whole active cells (the discrete domain); the
        # cut fractions only enter quadrature of prescribed integrands
        self.stiff_weights = vol_t * layer_weight(k, h, a)
        self.stiff_weights_normal = vol_t * harmonic_layer_weight(k, h, a)
        self.cell_weights = self.cell_frac * self.stiff_weights

        # nodes: corners of active cells
        node_flag = np.zeros(self.shape, dtype=bool)
        for corner in itertools.product((0, 1), repeat=dim):
            sl = self.cell_lattice + np.array(corner)
            node_flag[tuple(sl.T)] = True
        self.node_lattice = np.argwhere(node_flag)
        self.node_coords = (self.node_lattice - self.offset) * h
        nid = np.full(self.shape, -1, dtype=np.int64)
        nid[tuple(self.node_lattice.T)] = np.arange(len(self.node_lattice))
        self.node_id = nid
        lev_n = self.domain.level(self.node_coords)
        self.interior = lev_n < -1e-9 * h

        # cell corner table, shape (n_cells, 2^dim), ordered by itertools.product
        corners = list(itertools.product((0, 1), repeat=dim))
        self.cell_corners = np.stack(
            [nid[tuple((self.cell_lattice + np.array(c)).T)] for c in corners], axis=1)

        # thin nodes and their dual-cell masses
        thin = np.flatnonzero(self.node_lattice[:, -1] == 0)
        xt = self.node_coords[thin, :-1]
        tlev = self.domain.thin_level(xt)
        hd = 0.5 * h * math.sqrt(dim - 1) * 1.001
        tfrac = np.where(tlev < -hd, 1.0, 0.0)
        tcut = np.abs(tlev) <= hd
        if np.any(tcut):
            k_t = 64 if dim == 2 else 16
            tfrac[tcut] = _subsample_fraction(
                lambda p: self.domain.thin_level(p) < 0, xt[tcut] - 0.5 * h, h, k_t)
        self.thin_nodes = thin
        self.thin_mass = tfrac * h ** (dim - 1)
        for arr in (self.cell_lattice, self.cell_frac, self.cell_midpoints,
                    self.cell_weights, self.stiff_weights, self.stiff_weights_normal,
                    self.node_lattice,
                    self.node_coords, self.node_id, self.interior, self.cell_corners,
                    self.thin_nodes, self.thin_mass, self.offset):
            arr.setflags(write=False)

    # -- basic properties -------------------------------------------------
    @property
    def spacing(self) -> float:
        return self.h

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_cells(self) -> int:
        return len(self.cell_weights)

    @cached_property
    def boundary_nodes(self):
        """Indices of nodes carrying Dirichlet data."""
        return np.flatnonzero(~self.interior)

    @cached_property
    def thin_interior(self):
        """Boolean mask over ``thin_nodes`` of nodes that are unknowns."""
        return self.interior[self.thin_nodes]

    @property
    def radius(self) -> float:
        d = self.domain
        if hasattr(d, "radius"):
            return float(d.radius)
        return float(min(min(d.half_widths), d.height))

    def describe(self) -> dict:
        """JSON-serializable descriptor."""
        return {"dim": self.dim, "h": self.h, "a": self.a,
                "domain": self.domain.describe()}

    def __repr__(self):
        return (f"WeightedGrid(dim={self.dim}, h={self.h:.5g}, a={self.a}, "
                f"domain={self.domain.describe()}, nodes={self.n_nodes})")

    # -- stiffness --------------------------------------------------------
    @cached_property
    def edges(self):
        """Edge list ``(p, q, conductance)`` of the weighted graph Laplacian.

        Each cell spreads its directional weight evenly over its ``2^{n-1}``
        edges in that direction, so for every nodal field
        ``sum kappa (u_p - u_q)^2`` is the discrete weighted Dirichlet energy.
        """
        dim, h = self.dim, self.h
        corners = list(itertools.product((0, 1), repeat=dim))
        cpos = {c: j for j, c in enumerate(corners)}
        share = 2 ** (dim - 1)
        P, Q, K = [], [], []
        for d in range(dim):
            w = (self.stiff_weights_normal if d == dim - 1 else self.stiff_weights)
            w = w / (share * h * h)
            for c in corners:
                if c[d] == 1:
                    continue
                c2 = list(c)
                c2[d] = 1
                P.append(self.cell_corners[:, cpos[c]])
                Q.append(self.cell_corners[:, cpos[tuple(c2)]])
                K.append(w)
        P = np.concatenate(P)
        Q = np.concatenate(Q)
        K = np.concatenate(K)
        # merge duplicates from neighbouring cells
        key = P * self.n_nodes + Q
        uniq, inv = np.unique(key, return_inverse=True)
        kap = np.bincount(inv, weights=K)
        return uniq // self.n_nodes, uniq % self.n_nodes, kap

    @cached_property
    def stiffness(self):
        """Symmetric matrix ``A`` with ``u^T A u`` the weighted Dirichlet energy."""
        p, q, k = self.edges
        n = self.n_nodes
        rows = np.concatenate([p, q, p, q])
        cols = np.concatenate([p, q, q, p])
        vals = np.concatenate([k, k, -k, -k])
        A = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        A.sum_duplicates()
        return A

    # -- quadrature -------------------------------------------------------
    def _cell_values(self, integrand):
        if callable(integrand):
            vals = np.asarray(integrand(self.cell_midpoints), dtype=float)
        else:
            vals = np.asarray(integrand, dtype=float)
        vals = np.broadcast_to(vals, (self.n_cells,))
        if not np.all(np.isfinite(vals)):
            raise ValueError("integrand is not finite on every cell")
        return vals

    def _thin_values(self, integrand):
        xt = self.node_coords[self.thin_nodes]
        if callable(integrand):
            vals = np.asarray(integrand(xt), dtype=float)
        else:
            vals = np.asarray(integrand, dtype=float)
        vals = np.broadcast_to(vals, (len(self.thin_nodes),))
        if not np.all(np.isfinite(vals)):
            raise ValueError("integrand is not finite on every thin node")
        return vals

    def ball_cell_fraction(self, center, r):
        """Fraction of every active cell lying in ``B_r(center)``."""
        c = np.zeros(self.dim)
        c[: len(center)] = center
        dist = np.linalg.norm(self.cell_midpoints - c, axis=1)
        half_diag = 0.5 * self.h * math.sqrt(self.dim) * 1.001
        frac = np.where(dist < r - half_diag, 1.0, 0.0)
        cut = np.abs(dist - r) <= half_diag
        if np.any(cut):
            k = 32 if self.dim == 2 else 8
            frac[cut] = _subsample_fraction(
                lambda p: np.sum((p - c) ** 2, axis=-1) < r * r,
                self.cell_midpoints[cut] - 0.5 * self.h, self.h, k)
        return frac

    def ball_thin_fraction(self, center, r):
        """Fraction of every thin dual cell lying in the thin ball ``B'_r(center)``."""
        c = np.asarray(center, dtype=float)[: self.dim - 1]
        xt = self.node_coords[self.thin_nodes, :-1]
        dist = np.linalg.norm(xt - c, axis=1)
        hd = 0.5 * self.h * math.sqrt(self.dim - 1) * 1.001
        frac = np.where(dist < r - hd, 1.0, 0.0)
        cut = np.abs(dist - r) <= hd
        if np.any(cut):
            k = 64 if self.dim == 2 else 16
            frac[cut] = _subsample_fraction(
                lambda p: np.sum((p - c) ** 2, axis=-1) < r * r,
                xt[cut] - 0.5 * self.h, self.h, k)
        return frac

    # -- lattice views ----------------------------------------------------
    def to_lattice(self, values):
        """Scatter nodal values into a dense lattice array, NaN off the grid."""
        out = np.full(self.shape, np.nan)
        out[tuple(self.node_lattice.T)] = values
        return out

    def lattice_axes(self):
        return [(np.arange(s) - o) * self.h for s, o in zip(self.shape, self.offset)]

    def thin_lattice(self, values):
        """Dense ``(n-1)``-dimensional array of the thin trace, NaN off the grid."""
        return self.to_lattice(values)[..., 0]

    def locate(self, points, tol=1e-9):
        """Node index of each point if it coincides with a node, else -1."""
        pts = np.atleast_2d(points)
        idx = pts / self.h + self.offset
        r = np.rint(idx)
        ok = np.all(np.abs(idx - r) < tol, axis=1)
        r = r.astype(np.int64)
        inb = np.all((r >= 0) & (r < np.array(self.shape)), axis=1) & ok
        out = np.full(len(pts), -1, dtype=np.int64)
        out[inb] = self.node_id[tuple(r[inb].T)]
        return out


def bulk_quadrature(grid: WeightedGrid, integrand) -> float:
    """Weighted cell rule ``sum_cells f(midpoint) * cell_weight``.

    Parameters
    ----------
    integrand : callable or array_like
        Function of the ``(n_cells, dim)`` midpoint array, or per-cell values.
    """
    return float(np.dot(grid._cell_values(integrand), grid.cell_weights))


def thin_quadrature(grid: WeightedGrid, integrand) -> float:
    """Midpoint rule on the thin slice using dual-cell masses."""
    return float(np.dot(grid._thin_values(integrand), grid.thin_mass))


def _check_resolution(resolution):
    if int(resolution) != resolution or resolution < 8:
        raise ValueError(f"resolution must be an integer >= 8, got {resolution}")


def build_halfball_grid(params: Params, radius: float, resolution: int,
                        dim: int = 2) -> WeightedGrid:
    """Grid on ``{|x| <= radius, x_n >= 0}`` with ``h = radius/resolution``."""
    _check_resolution(resolution)
    if not radius > 0:
        raise ValueError("radius must be positive")
    return WeightedGrid(dim, radius / resolution, params.a, HalfBall(float(radius)))


def build_halfbox_grid(params: Params, half_width: float, height: float,
                       resolution: int, dim: int = 2) -> WeightedGrid:
    """Grid on ``[-w, w]^{n-1} x [0, height]`` with ``h = w/resolution``."""
    _check_resolution(resolution)
    h = half_width / resolution
    return WeightedGrid(dim, h, params.a,
                        HalfBox((float(half_width),) * (dim - 1), float(height)))


def build_sector_grid(params: Params, i: int, radius: float = 1.0,
                      resolution: int = 32) -> WeightedGrid:
    """Three-dimensional grid on the sector of opening ``pi/i``."""
    if int(i) != i or i < 2:
        raise ValueError(f"sector index must be an integer >= 2, got {i}")
    _check_resolution(resolution)
    return WeightedGrid(3, radius / resolution, params.a, Sector(int(i), float(radius)))


@dataclass(eq=False)
class ScalarField:
    """Nodal values on a :class:`WeightedGrid`.

    ``meta`` carries solver diagnostics and is not part of the field's value.
    """

    grid: WeightedGrid
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n_nodes,):
            raise ValueError(f"expected {self.grid.n_nodes} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        self.values = v

    @classmethod
    def from_function(cls, grid, func):
        return cls(grid, func(grid.node_coords))

    def thin_trace(self):
        return self.values[self.grid.thin_nodes]

    def lattice(self):
        return self.grid.to_lattice(self.values)

    @cached_property
    def _interp(self):
        return RegularGridInterpolator(self.grid.lattice_axes(), self.lattice(),
                                       bounds_error=False, fill_value=np.nan)

    def __call__(self, points):
        """Multilinear interpolation; NaN where a surrounding node is missing."""
        pts = np.asarray(points, dtype=float)
        shp = pts.shape[:-1]
        out = self._interp(pts.reshape(-1, self.grid.dim))
        # exact node hits avoid rounding in the interpolation weights
        hit = self.grid.locate(pts.reshape(-1, self.grid.dim))
        ok = hit >= 0
        out[ok] = self.values[hit[ok]]
        return out.reshape(shp)

    def thin_interp(self, points):
        """Interpolate the thin trace at thin points (``n-1`` coordinates)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        full = np.concatenate([pts, np.zeros((len(pts), 1))], axis=1)
        return self(full)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


def dirichlet_density(field: ScalarField) -> np.ndarray:
    """Per-cell squared discrete gradient.

    The normal component is rescaled by the ratio of normal to tangential
    cell weights, so ``sum density * stiff_weights`` equals ``u^T A u``.
    """
    g = field.grid
    dim, h = g.dim, g.h
    vals = field.values[g.cell_corners]
    corners = list(itertools.product((0, 1), repeat=dim))
    cpos = {c: j for j, c in enumerate(corners)}
    dens = np.zeros(g.n_cells)
    ratio = g.stiff_weights_normal / g.stiff_weights
    for d in range(dim):
        acc = np.zeros(g.n_cells)
        cnt = 0
        for c in corners:
            if c[d] == 1:
                continue
            c2 = list(c)
            c2[d] = 1
            diff = vals[:, cpos[tuple(c2)]] - vals[:, cpos[c]]
            acc += (diff / h) ** 2
            cnt += 1
        acc /= cnt
        dens += acc * (ratio if d == dim - 1 else 1.0)
    return dens
