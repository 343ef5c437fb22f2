"""Propagation of the Dirac system ``y' = i (z j + j V(x)) y`` on a grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ContractionError, IntegrationOverflowError, InvalidInputError, SingularityError
from .fields import Dimensions, Grid, MatrixField, Potential, check_same_grid

# exp(700) is close to the largest finite double
_MAX_GROWTH_EXPONENT = 700.0


def block_V(v: np.ndarray) -> np.ndarray:
    """``[[0, v], [v*, 0]]`` for a stack of ``m1 x m2`` matrices."""
    n, m1, m2 = v.shape
    V = np.zeros((n, m1 + m2, m1 + m2), dtype=complex)
    V[:, :m1, m1:] = v
    V[:, m1:, :m1] = np.conj(np.swapaxes(v, 1, 2))
    return V


def midpoint_potential(v, grid: Grid) -> tuple[np.ndarray, Dimensions]:
    """Potential at the cell midpoints of ``grid``.

    Node samples on the same grid are averaged (linear interpolation);
    callables are evaluated directly at the midpoints.
    """
    if isinstance(v, MatrixField):
        dims = Dimensions(v.rows, v.cols)
        if v.grid == grid:
            return v.midpoint_values(), dims
        return v(grid.midpoints), dims
    if isinstance(v, Potential):
        return v(grid.midpoints), v.dims
    raise InvalidInputError(f"unsupported potential type {type(v).__name__}")


def cell_propagators(v, z: complex, grid: Grid) -> tuple[np.ndarray, Dimensions]:
    """One-step propagators ``exp(i h (z j + j V(x_{k+1/2})))``, shape ``(n, m, m)``."""
    vm, dims = midpoint_potential(v, grid)
    j = dims.j
    gen = 1j * grid.h * (z * j[None] + j[None] @ block_V(vm))
    return expm(gen), dims


@dataclass(frozen=True)
class FundamentalSolution:
    """Propagator ``u(x_k, z)`` at every node, ``u_0 = I``."""

    z: complex
    grid: Grid
    dims: Dimensions
    values: np.ndarray

    def at(self, x: float) -> np.ndarray:
        return self.values[self.grid.index(x)]

    def jform_defect(self) -> np.ndarray:
        """``j - u_k^* j u_k`` at every node (PSD for Im z > 0, zero for real z)."""
        j = self.dims.j
        u = self.values
        return j[None] - np.conj(np.swapaxes(u, 1, 2)) @ j[None] @ u


def solve_dirac(v, z: complex, grid: Grid) -> FundamentalSolution:
    """Fundamental solution of the Dirac system by exponential midpoint steps.

    Parameters
    ----------
    v : MatrixField or Potential
        ``m1 x m2`` potential. Node samples are linearly interpolated to the
        cell midpoints.
    z : complex
        Spectral parameter.
    grid : Grid
        Integration mesh on ``[0, l]``.

    Raises
    ------
    IntegrationOverflowError
        If ``|Im z| * l`` is too large for double precision or the
        propagator overflows.
    """
    z = complex(z)
    if not np.isfinite(z):
        raise InvalidInputError(f"spectral parameter must be finite, got {z}")
    if abs(z.imag) * grid.l > _MAX_GROWTH_EXPONENT:
        raise IntegrationOverflowError(
            f"|Im z| * l = {abs(z.imag) * grid.l:.1f} exceeds the double precision range")
    steps, dims = cell_propagators(v, z, grid)
    m = dims.m
    u = np.empty((grid.n + 1, m, m), dtype=complex)
    u[0] = np.eye(m)
    for k in range(grid.n):
        u[k + 1] = steps[k] @ u[k]
    if not np.all(np.isfinite(u)):
        raise IntegrationOverflowError(f"propagator overflowed at z={z}")
    return FundamentalSolution(z, grid, dims, u)


def beta_gamma(v, grid: Grid) -> tuple[MatrixField, MatrixField]:
    """Top ``m1`` rows and bottom ``m2`` rows of ``u(x, 0)``."""
    u = solve_dirac(v, 0.0, grid)
    m1 = u.dims.m1
    beta = MatrixField(grid, u.values[:, :m1, :], role="beta")
    gamma = MatrixField(grid, u.values[:, m1:, :], role="gamma")
    return beta, gamma


def jrelation_residuals(beta: MatrixField, gamma: MatrixField) -> dict[str, np.ndarray]:
    """Node-wise norms of ``b j b* - I``, ``g j g* + I`` and ``b j g*``."""
    check_same_grid(beta, gamma)
    m1, m2 = beta.rows, gamma.rows
    j = Dimensions(m1, m2).j
    b, g = beta.values, gamma.values
    bh = np.conj(np.swapaxes(b, 1, 2))
    gh = np.conj(np.swapaxes(g, 1, 2))
    nrm = lambda a: np.linalg.norm(a, ord=2, axis=(1, 2))  # noqa: E731
    return {
        "beta_j_beta": nrm(b @ j @ bh - np.eye(m1)),
        "gamma_j_gamma": nrm(g @ j @ gh + np.eye(m2)),
        "beta_j_gamma": nrm(b @ j @ gh),
    }


def potential_from_beta_gamma(beta: MatrixField, gamma: MatrixField) -> MatrixField:
    """``v = i beta' j gamma*`` with finite-difference ``beta'``."""
    grid = check_same_grid(beta, gamma)
    if beta.cols != gamma.cols or beta.cols != beta.rows + gamma.rows:
        raise InvalidInputError(
            f"beta {beta.rows}x{beta.cols} and gamma {gamma.rows}x{gamma.cols} do not fit together")
    j = Dimensions(beta.rows, gamma.rows).j
    db = beta.derivative().values
    v = 1j * db @ j @ np.conj(np.swapaxes(gamma.values, 1, 2))
    return MatrixField(grid, v, role="v")


def schur_coefficient(gamma: MatrixField, cond_max: float = 1e12) -> MatrixField:
    """``gamma_2^{-1} gamma_1`` at every node.

    Raises ``SingularityError`` (with the node index) for a singular
    ``gamma_2`` block and ``ContractionError`` if the result is not a
    strict contraction.
    """
    m2 = gamma.rows
    m1 = gamma.cols - m2
    if m1 < 1:
        raise InvalidInputError(f"gamma must be m2 x (m1+m2), got {gamma.rows}x{gamma.cols}")
    g1 = gamma.values[:, :, :m1]
    g2 = gamma.values[:, :, m1:]
    cond = np.linalg.cond(g2)
    bad = np.flatnonzero(~(cond < cond_max))
    if bad.size:
        raise SingularityError(f"gamma_2 is singular at node {bad[0]} (cond={cond[bad[0]]:.3g})",
                               index=int(bad[0]))
    sigma = np.linalg.solve(g2, g1)
    nrm = np.linalg.norm(sigma, ord=2, axis=(1, 2))
    bad = np.flatnonzero(nrm >= 1.0)
    if bad.size:
        raise ContractionError(f"Schur coefficient has norm {nrm[bad[0]]:.6g} >= 1 at node {bad[0]}",
                               index=int(bad[0]))
    return MatrixField(gamma.grid, sigma, role="schur")
