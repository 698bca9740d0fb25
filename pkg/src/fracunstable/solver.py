"""Minimizers of the unstable thin-obstacle energy by sign-flux iteration.

Every outer step solves the linear weighted Neumann problem with the thin
flux frozen at ``-g(u)``, ``g(u) = lambda_+ chi_{u>0} - lambda_- chi_{u<0}``.
This is the convex-concave procedure for ``u^T A u - 2 sum m (lambda_+ u^+ +
lambda_- u^-)``: with no damping the energy is nonincreasing, and because the
stiffness is an M-matrix the all-positive start decreases monotonically to
the largest fixed point and the all-negative start increases to the smallest.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
import logging
import math
import weakref

import numpy as np
from scipy.sparse.linalg import splu

from .functional import eval_energy, thin_reaction
from .grid import Params, ScalarField, WeightedGrid, build_sector_grid, build_halfball_grid

log = logging.getLogger(__name__)

STARTS = ("from_above", "from_below", "from_boundary_harmonic")


class ConvergenceError(RuntimeError):
    """Sign pattern did not stabilize; ``nodes`` lists the oscillating thin nodes."""

    def __init__(self, msg, nodes=()):
        super().__init__(msg)
        self.nodes = np.asarray(nodes)


class LinearSolveError(RuntimeError):
    pass


class CollapseError(RuntimeError):
    """Positive sector solution collapsed to zero."""


@dataclass(frozen=True)
class SolveOptions:
    """Outer-loop settings.

    ``start=None`` runs every start and keeps the lowest-energy fixed point.
    """

    max_outer: int = 200
    linear_tol: float = 1e-10
    damping: float = 1.0
    start: str | None = None

    def __post_init__(self):
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if not self.linear_tol > 0:
            raise ValueError("linear_tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.start is not None and self.start not in STARTS:
            raise ValueError(f"unknown start {self.start!r}")


class _System:
    """Factorized interior block of the stiffness matrix for one grid."""

    _AMG_THRESHOLD = 60000

    def __init__(self, grid: WeightedGrid):
        self.grid = grid
        A = grid.stiffness.tocsr()
        self.I = np.flatnonzero(grid.interior)
        self.B = np.flatnonzero(~grid.interior)
        self.A_II = A[self.I][:, self.I].tocsc()
        self.A_IB = A[self.I][:, self.B].tocsr()
        pos = np.full(grid.n_nodes, -1)
        pos[self.I] = np.arange(len(self.I))
        thin_int = grid.thin_nodes[grid.thin_interior]
        self.thin_pos = pos[thin_int]
        self.thin_sel = np.flatnonzero(grid.thin_interior)
        self.thin_mass = grid.thin_mass[self.thin_sel]
        self._lu = None
        self._amg = None
        if len(self.I) <= self._AMG_THRESHOLD or grid.dim == 2:
            self._lu = splu(self.A_II)
        else:
            import pyamg
            self._amg = pyamg.smoothed_aggregation_solver(self.A_II.tocsr())

    def solve(self, rhs, tol, x0=None):
        if self._lu is not None:
            x = self._lu.solve(rhs)
        else:
            res = []
            x = self._amg.solve(rhs, x0=x0, tol=tol * 0.1, accel="cg",
                                maxiter=400, residuals=res)
        nb = np.linalg.norm(rhs)
        r = np.linalg.norm(self.A_II @ x - rhs)
        if nb > 0 and r > tol * nb:
            raise LinearSolveError(f"linear residual {r / nb:.3e} above tolerance {tol:.1e}")
        return x


_systems: "weakref.WeakKeyDictionary[WeightedGrid, _System]" = weakref.WeakKeyDictionary()


def _system(grid):
    sys_ = _systems.get(grid)
    if sys_ is None:
        sys_ = _System(grid)
        _systems[grid] = sys_
    return sys_


def _boundary_values(grid: WeightedGrid, boundary) -> np.ndarray:
    """Dirichlet data at ``grid.boundary_nodes``.

    ``boundary`` may be a scalar, an array over the boundary nodes, an array
    over all nodes, or a callable of the ``(N, dim)`` coordinate array.
    """
    B = grid.boundary_nodes
    if callable(boundary):
        vals = np.asarray(boundary(grid.node_coords[B]), dtype=float)
    else:
        vals = np.asarray(boundary, dtype=float)
        if vals.ndim == 1 and vals.shape[0] == grid.n_nodes and len(B) != grid.n_nodes:
            vals = vals[B]
    vals = np.broadcast_to(vals, (len(B),)).astype(float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("boundary data must be finite")
    return vals


def _assemble(grid, sys_, interior_vals, bvals):
    u = np.empty(grid.n_nodes)
    u[sys_.I] = interior_vals
    u[sys_.B] = bvals
    return u


def solve_weighted_neumann(grid: WeightedGrid, thin_flux, boundary,
                           linear_tol: float = 1e-10) -> ScalarField:
    """Solve ``div(x_n^a grad u) = 0`` with prescribed thin flux.

    Parameters
    ----------
    thin_flux : scalar, array over ``grid.thin_nodes``, or callable
        Weighted normal derivative ``lim x_n^a d_n u`` on the thin space.
    boundary : see :func:`_boundary_values`
        Dirichlet data on the remaining outer boundary.
    """
    sys_ = _system(grid)
    bvals = _boundary_values(grid, boundary)
    if callable(thin_flux):
        flux = np.asarray(thin_flux(grid.node_coords[grid.thin_nodes]), dtype=float)
    else:
        flux = np.asarray(thin_flux, dtype=float)
    flux = np.broadcast_to(flux, (len(grid.thin_nodes),))
    if not np.all(np.isfinite(flux)):
        raise ValueError("thin flux must be finite")
    x = _solve_with_reaction(sys_, -flux[sys_.thin_sel], bvals, linear_tol)
    return ScalarField(grid, _assemble(grid, sys_, x, bvals))


def _solve_with_reaction(sys_, reaction, bvals, tol, x0=None):
    """Interior solve of ``A_II u = m * reaction - A_IB u_B``."""
    rhs = -(sys_.A_IB @ bvals)
    rhs[sys_.thin_pos] += sys_.thin_mass * reaction
    return sys_.solve(rhs, tol, x0)


def _initial_reaction(start, sys_, params, bvals, tol):
    n = len(sys_.thin_sel)
    if start == "from_above":
        return np.full(n, params.lambda_plus, dtype=float)
    if start == "from_below":
        return np.full(n, -params.lambda_minus, dtype=float)
    return np.zeros(n)


def _outer_loop(grid, params, bvals, opts, start):
    sys_ = _system(grid)
    g = _initial_reaction(start, sys_, params, bvals, opts.linear_tol)
    flips = np.zeros(len(g), dtype=int)
    frozen = np.zeros(len(g), dtype=bool)
    prev_sign = None
    history = []
    x = None
    best = None
    for it in range(1, opts.max_outer + 1):
        x = _solve_with_reaction(sys_, g, bvals, opts.linear_tol, x)
        u = _assemble(grid, sys_, x, bvals)
        field = ScalarField(grid, u)
        energy = eval_energy(field, params)
        trace = x[sys_.thin_pos]
        target = thin_reaction(trace, params).astype(float)
        target[frozen] = 0.0
        sign = np.sign(target)
        changes = 0 if prev_sign is None else int(np.count_nonzero(sign != prev_sign))
        if prev_sign is not None:
            flips += (sign != prev_sign)
            newly = (flips >= 3) & ~frozen
            if np.any(newly):
                frozen |= newly
                target[newly] = 0.0
                sign = np.sign(target)
        history.append((it, energy.total, changes))
        if best is None or energy.total <= best[1].total:
            best = (field, energy)
        settled = np.array_equal(target, g)
        if settled:
            break
        # damping only while the sign pattern is still moving
        if opts.damping == 1.0 or (prev_sign is not None and np.array_equal(sign, prev_sign)):
            g = target
        else:
            g = (1 - opts.damping) * g + opts.damping * target
        prev_sign = sign
    else:
        osc = grid.thin_nodes[sys_.thin_sel[np.flatnonzero(target != g)]]
        raise ConvergenceError(
            f"sign pattern not stable after {opts.max_outer} outer iterations "
            f"(start={start}, {len(osc)} nodes changing)", osc)
    out = ScalarField(grid, u, meta={
        "start": start, "history": history, "energy": energy,
        "frozen_nodes": grid.thin_nodes[sys_.thin_sel[frozen]].tolist(),
        "iterations": len(history)})
    return out


def minimize(grid: WeightedGrid, params: Params, boundary,
             opts: SolveOptions | None = None) -> ScalarField:
    """Discrete critical point of the energy reached by sign-flux iteration.

    With ``opts.start=None`` all three starts are run and the fixed point of
    lowest energy is returned; the others are kept in ``meta["candidates"]``.
    """
    opts = opts or SolveOptions()
    if abs(grid.a - params.a) > 1e-14:
        raise ValueError("grid and params disagree on a")
    bvals = _boundary_values(grid, boundary)
    starts = STARTS if opts.start is None else (opts.start,)
    results = [_outer_loop(grid, params, bvals, opts, s) for s in starts]
    best = min(results, key=lambda f: f.meta["energy"].total)
    if len(results) > 1:
        best.meta["candidates"] = {f.meta["start"]: f.meta["energy"].total for f in results}
    log.debug("minimize: start=%s energy=%.6g", best.meta["start"], best.meta["energy"].total)
    return best


def sup_minimizer(grid: WeightedGrid, params: Params, boundary,
                  opts: SolveOptions | None = None) -> ScalarField:
    """Largest fixed point, reached from the all-positive flux start."""
    opts = replace(opts or SolveOptions(), start="from_above")
    return minimize(grid, params, boundary, opts)


def inf_minimizer(grid: WeightedGrid, params: Params, boundary,
                  opts: SolveOptions | None = None) -> ScalarField:
    """Smallest fixed point, reached from the all-negative flux start."""
    opts = replace(opts or SolveOptions(), start="from_below")
    return minimize(grid, params, boundary, opts)


def sector_positive_minimizer(params: Params, i: int, resolution: int = 32,
                              radius: float = 1.0,
                              opts: SolveOptions | None = None) -> ScalarField:
    """Positive solution on the sector of opening ``pi/i`` with zero side data."""
    if params.a >= 0:
        raise ValueError("sector solutions are built for a < 0")
    if params.lambda_plus <= 0:
        raise ValueError("lambda_plus must be positive for a positive solution")
    grid = build_sector_grid(params, i, radius, resolution)
    u = sup_minimizer(grid, params, 0.0, opts)
    if not np.any(u.thin_trace() > 0):
        raise CollapseError(f"sector solution for i={i} collapsed to zero; refine the grid")
    u.meta["sector"] = int(i)
    return u


def reflect_sector_solution(field: ScalarField, i: int,
                            resolution: int | None = None) -> ScalarField:
    """Odd reflection of a sector solution onto the full half-ball.

    The plane is split into ``2i`` wedges of angle ``pi/i``; wedge ``k`` takes
    the values of the mirrored wedge-0 point with sign ``(-1)^k``.
    """
    g = field.grid
    if g.domain.kind != "sector" or g.domain.i != i:
        raise ValueError(f"field is not defined on a sector grid with i={i}")
    R = g.domain.radius
    if resolution is None:
        resolution = int(round(R / g.h))
    target = build_halfball_grid(Params(g.a, 0.0, 1.0), R, resolution, dim=3)
    x = target.node_coords
    al = math.pi / i
    theta = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * math.pi)
    k = np.floor(theta / al + 1e-12).astype(int)
    k = np.minimum(k, 2 * i - 1)
    phi = theta - k * al
    phi = np.where(k % 2 == 0, phi, al - phi)
    phi = np.clip(phi, 0.0, al)
    rho = np.hypot(x[:, 0], x[:, 1])
    src = np.stack([rho * np.cos(phi), rho * np.sin(phi), x[:, 2]], axis=1)
    # snap coordinates that round to lattice nodes so that images align exactly
    snap = np.rint(src / g.h) * g.h
    close = np.all(np.abs(src - snap) < 1e-9 * g.h, axis=1)
    src[close] = snap[close]
    vals = field(src)
    outside = ~np.isfinite(vals)
    # points beyond the sector's outer shell lie on the target's Dirichlet layer
    vals[outside] = 0.0
    vals *= np.where(k % 2 == 0, 1.0, -1.0)
    out = ScalarField(target, vals)
    out.meta["reflected_from"] = int(i)
    out.meta["filled_outside"] = int(np.count_nonzero(outside))
    return out
