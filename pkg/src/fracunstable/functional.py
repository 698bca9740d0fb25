"""Energy, first variation, gauge transform and rescaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (HalfBall, Params, ScalarField, WeightedGrid, build_halfball_grid,
                   dirichlet_density)


@dataclass(frozen=True)
class EnergyBreakdown:
    """``total = dirichlet + thin``."""

    dirichlet: float
    thin: float
    total: float

    def as_row(self, tag=""):
        return [tag, self.dirichlet, self.thin, self.total]


def _check_exponent(field: ScalarField, params: Params):
    if abs(field.grid.a - params.a) > 1e-14:
        raise ValueError(f"grid built with a={field.grid.a} but params have a={params.a}")


def thin_reaction(values, params: Params) -> np.ndarray:
    """Indicator ``lambda_+ chi_{u>0} - lambda_- chi_{u<0}``; zero where u = 0."""
    v = np.asarray(values)
    return params.lambda_plus * (v > 0) - params.lambda_minus * (v < 0)


def thin_density(values, params: Params) -> np.ndarray:
    """``lambda_+ u^+ + lambda_- u^-`` nodewise."""
    v = np.asarray(values)
    return params.lambda_plus * np.maximum(v, 0) + params.lambda_minus * np.maximum(-v, 0)


def eval_energy(field: ScalarField, params: Params, ball=None) -> EnergyBreakdown:
    """Discrete ``int |grad v|^2 x_n^a - 2 int (lambda_+ v^+ + lambda_- v^-)``.

    Parameters
    ----------
    ball : (center, r), optional
        Restrict both integrals to ``B_r(center)`` (thin center, cut fractions).
    """
    _check_exponent(field, params)
    g = field.grid
    if ball is None:
        u = field.values
        dirichlet = float(u @ (g.stiffness @ u))
        mass = g.thin_mass
    else:
        center, r = ball
        dens = dirichlet_density(field)
        dirichlet = float(np.dot(dens * g.ball_cell_fraction(center, r), g.stiff_weights))
        mass = g.thin_mass * g.ball_thin_fraction(center, r)
    thin = -2.0 * float(np.dot(thin_density(field.thin_trace(), params), mass))
    return EnergyBreakdown(dirichlet, thin, dirichlet + thin)


def gauge_transform(field: ScalarField, params: Params, c: float):
    """Add ``c x_n^{1-a}`` and shift the thin coefficients accordingly.

    Returns the new field and ``Params`` with ``lambda_+ - c(1-a)`` and
    ``lambda_- + c(1-a)``.  The thin trace is unchanged.
    """
    shift = c * (1.0 - params.a)
    if not (-params.lambda_minus - 1e-15 <= shift <= params.lambda_plus + 1e-15):
        raise ValueError(
            f"c(1-a) = {shift} outside [-lambda_-, lambda_+] = "
            f"[{-params.lambda_minus}, {params.lambda_plus}]")
    if c == 0:
        return field, params
    xn = field.grid.node_coords[:, -1]
    new = ScalarField(field.grid, field.values + c * xn ** (1.0 - params.a))
    lp = max(params.lambda_plus - shift, 0.0)
    lm = max(params.lambda_minus + shift, 0.0)
    return new, Params(params.a, lp, lm)


def first_variation_residual(field: ScalarField, test: ScalarField, params: Params) -> float:
    """Weak-form residual ``int x_n^a <grad u, grad psi> - int_thin psi g(u)``.

    The bulk pairing is the discrete one, ``psi^T A u``; ``g`` is
    :func:`thin_reaction`.  The test field must vanish on the outer boundary.
    """
    _check_exponent(field, params)
    g = field.grid
    if test.grid is not g:
        raise ValueError("field and test live on different grids")
    psi = test.values
    outer = ~g.interior
    if np.any(psi[outer] != 0):
        raise ValueError("test function does not vanish on the outer boundary")
    if not np.any(psi):
        return 0.0
    bulk = float(psi @ (g.stiffness @ field.values))
    reaction = thin_reaction(field.thin_trace(), params)
    thin = float(np.dot(psi[g.thin_nodes] * reaction, g.thin_mass))
    return bulk - thin


def rescale(field: ScalarField, center, r: float, degree: float,
            resolution: int | None = None) -> ScalarField:
    """Blow-up ``x -> field(center + r x) / r^degree`` on a unit half-ball.

    The default resolution keeps the new nodes on the source lattice when
    ``r`` is a dyadic multiple of the spacing, so no interpolation error
    enters in that case.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    src = field.grid
    c = np.zeros(src.dim)
    c[: src.dim - 1] = np.asarray(center, dtype=float)[: src.dim - 1]
    if resolution is None:
        resolution = max(8, int(round(r / src.h)))
    target = build_halfball_grid(Params(src.a, 0.0, 1.0), 1.0, resolution, dim=src.dim)
    pts = c + r * target.node_coords
    vals = field(pts)
    if not np.all(np.isfinite(vals)):
        raise ValueError("rescaling window exceeds the source domain")
    return ScalarField(target, vals / r ** degree)
