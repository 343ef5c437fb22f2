"""Weyl function of the half-line Dirac system.

The Weyl function is the limit of the Mobius sets as the truncation length
grows.  A point of the Mobius set at length ``l`` is the value at ``x = 0``
of ``psi = y2 y1^{-1}`` where ``y = u(x, z) [I; phi]`` and ``u(l) [I; phi]``
lies in the range of the parameter pair ``P``.  ``psi`` obeys the matrix
Riccati equation

    psi' = -2 i z psi - i v^* - i psi v psi,

which is stable when integrated from ``x = l`` back to ``0`` for
``Im z > 0``.  The linear part is scalar, so exponential time differencing
treats the oscillatory factor exactly and the accuracy does not degrade for
large ``|z|``.  This is how points of the Mobius sets are evaluated along
the truncation ladder; :func:`mobius_point` implements the defining matrix
formula for a given propagator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import trapezoid

from ._integrators import etdrk4_coefficients
from .dirac_core import solve_dirac
from .errors import InvalidInputError, NonConvergenceError, NonExpansiveError, SingularityError
from .fields import Dimensions, Grid, Potential, as_potential

NONEXPANSIVE_TOL = 1e-8


def check_nonexpansive(phi: np.ndarray, tol: float = NONEXPANSIVE_TOL, what: str = "phi") -> np.ndarray:
    """Spectral norms of a stack of matrices; raises if any exceeds ``1 + tol``."""
    phi = np.asarray(phi)
    nrm = np.linalg.norm(phi.reshape((-1,) + phi.shape[-2:]), ord=2, axis=(1, 2))
    bad = np.flatnonzero(~(nrm <= 1.0 + tol))
    if bad.size:
        raise NonExpansiveError(
            f"{what}: norm {nrm[bad[0]]:.12g} exceeds 1 + {tol:g} at sample {bad[0]}")
    return nrm


@dataclass(frozen=True)
class PropertyJPair:
    """Constant ``m x m1`` parameter matrix with ``P*P > 0`` and ``P* j P >= 0``."""

    P: np.ndarray
    dims: Dimensions

    def __post_init__(self):
        P = np.array(self.P, dtype=complex)
        if P.shape != (self.dims.m, self.dims.m1):
            raise InvalidInputError(f"P must be {self.dims.m}x{self.dims.m1}, got {P.shape}")
        if np.linalg.eigvalsh(P.conj().T @ P).min() <= 1e-12:
            raise InvalidInputError("P*P is not positive definite")
        if np.linalg.eigvalsh(P.conj().T @ self.dims.j @ P).min() < -1e-12:
            raise InvalidInputError("P* j P is not positive semidefinite")
        P.flags.writeable = False
        object.__setattr__(self, "P", P)

    @classmethod
    def default(cls, dims: Dimensions) -> "PropertyJPair":
        return cls(np.vstack([np.eye(dims.m1), np.zeros((dims.m2, dims.m1))]), dims)

    def terminal_value(self) -> np.ndarray:
        """``P_bottom P_top^{-1}``: the Riccati value at the truncation point."""
        m1 = self.dims.m1
        top, bot = self.P[:m1], self.P[m1:]
        if np.linalg.cond(top) > 1e12:
            raise SingularityError("top block of P is singular")
        return np.linalg.solve(top.T, bot.T).T


def mobius_point(u_l: np.ndarray, P: PropertyJPair | np.ndarray, dims: Dimensions | None = None) -> np.ndarray:
    """``[0 I] u^{-1} P ([I 0] u^{-1} P)^{-1}`` for one propagator value."""
    u_l = np.asarray(u_l, dtype=complex)
    if not isinstance(P, PropertyJPair):
        if dims is None:
            P = np.asarray(P, dtype=complex)
            dims = Dimensions(P.shape[1], P.shape[0] - P.shape[1])
        P = PropertyJPair(P, dims)
    m1 = P.dims.m1
    col = np.linalg.solve(u_l, P.P)
    top, bot = col[:m1], col[m1:]
    if np.linalg.cond(top) > 1e13:
        raise SingularityError("normalizing block [I 0] u^{-1} P is singular")
    return np.linalg.solve(top.T, bot.T).T


def riccati_backward(v: Potential, zs: np.ndarray, length: float, step: float,
                     terminal: np.ndarray | None = None) -> np.ndarray:
    """Integrate the Riccati equation from ``x = length`` down to ``x = 0``.

    Returns ``psi(0)`` for every ``z`` in ``zs``, shape ``(len(zs), m2, m1)``.
    """
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    m1, m2 = v.dims.m1, v.dims.m2
    nsteps = max(1, int(np.ceil(length / step - 1e-9)))
    h = length / nsteps
    xs = length - 0.5 * h * np.arange(2 * nsteps + 1)
    vs = v(xs)
    vs_h = np.conj(np.swapaxes(vs, 1, 2))
    E, E2, Q, f1, f2, f3 = (a[:, None, None] for a in etdrk4_coefficients(2j * zs, h))

    psi = np.zeros((zs.size, m2, m1), dtype=complex)
    if terminal is not None:
        psi[:] = terminal

    def N(p, i):
        return 1j * (vs_h[i] + p @ (vs[i] @ p))

    for k in range(nsteps):
        i0, im, i1 = 2 * k, 2 * k + 1, 2 * k + 2
        Nu = N(psi, i0)
        a = E2 * psi + Q * Nu
        Na = N(a, im)
        b = E2 * psi + Q * Na
        Nb = N(b, im)
        c = E2 * a + Q * (2 * Nb - Nu)
        Nc = N(c, i1)
        psi = E * psi + f1 * Nu + 2 * f2 * (Na + Nb) + f3 * Nc
    return psi


class WeylValue(NamedTuple):
    value: np.ndarray
    achieved_error: float
    length: float


def weyl_function_batch(v, zs, tol: float = 1e-10, l_max: float = 200.0, step: float = 1 / 64,
                        P: PropertyJPair | None = None):
    """Weyl function at many points; returns ``(values, errors, lengths)``.

    Each point follows the ladder ``l_j = l0 * 2**j`` with
    ``l0 = max(1, 3 / Im z)`` until two successive Mobius points differ by
    less than ``tol`` (spectral norm).  A potential with known support
    ``s`` and the default pair is integrated once from ``x = s``, where the
    Mobius points become exact.

    Raises
    ------
    NonConvergenceError
        If some point has not converged before ``l_max``; the exception
        carries the best values and residuals.
    """
    v = as_potential(v)
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    if zs.ndim != 1:
        raise InvalidInputError("zs must be one-dimensional")
    if not np.all(zs.imag > 0):
        raise InvalidInputError("Weyl function requires Im z > 0")
    P = P or PropertyJPair.default(v.dims)
    terminal = P.terminal_value()

    values = np.empty((zs.size, v.dims.m2, v.dims.m1), dtype=complex)
    if v.support is not None and not np.any(terminal):
        # psi stays zero on the free tail, so the Mobius points are exact from x = support on
        if v.support > 0:
            values[:] = riccati_backward(v, zs, v.support, step, terminal)
        else:
            values[:] = 0
        check_nonexpansive(values, what="Weyl function")
        return values, np.zeros(zs.size), np.full(zs.size, float(v.support))

    l0 = np.maximum(1.0, 3.0 / zs.imag)
    errors = np.full(zs.size, np.inf)
    lengths = np.zeros(zs.size)
    # group points sharing a starting length so they are integrated together
    for start in np.unique(l0):
        idx = np.flatnonzero(l0 == start)
        length = start
        prev = riccati_backward(v, zs[idx], length, step, terminal)
        while idx.size:
            length *= 2
            if length > l_max * (1 + 1e-12):
                values[idx] = prev
                lengths[idx] = length / 2
                break
            cur = riccati_backward(v, zs[idx], length, step, terminal)
            diff = np.linalg.norm(cur - prev, ord=2, axis=(1, 2))
            done = diff < tol
            values[idx[done]] = cur[done]
            errors[idx[done]] = diff[done]
            lengths[idx[done]] = length
            errors[idx[~done]] = diff[~done]
            idx, prev = idx[~done], cur[~done]
    failed = np.flatnonzero(~(errors < tol))
    if failed.size:
        raise NonConvergenceError(
            f"Weyl function did not converge to {tol:g} by l_max={l_max} at z={zs[failed].tolist()}",
            best=values, residual=float(errors[failed].max()), z=zs[failed])
    check_nonexpansive(values, what="Weyl function")
    return values, errors, lengths


def weyl_function(v, z: complex, tol: float = 1e-10, l_max: float = 200.0, step: float = 1 / 64,
                  P: PropertyJPair | None = None) -> WeylValue:
    """Weyl function ``phi(z)`` (``m2 x m1``) with its achieved ladder error."""
    try:
        vals, errs, lens = weyl_function_batch(v, [z], tol=tol, l_max=l_max, step=step, P=P)
    except NonConvergenceError as exc:
        exc.best = exc.best[0]
        raise
    return WeylValue(vals[0], float(errs[0]), float(lens[0]))


def weyl_callable(v, tol: float = 1e-10, l_max: float = 200.0, step: float = 1 / 64):
    """``phi`` as a function of an array of points, for the inversion routines."""
    def phi(zs):
        return weyl_function_batch(v, zs, tol=tol, l_max=l_max, step=step)[0]
    return phi


def weyl_l2_criterion(v, phi: np.ndarray, z: complex, L: float, n: int | None = None) -> float:
    """Trapezoid value of ``int_0^L ||u(x, z) [I; phi]||_F^2 dx``."""
    v = as_potential(v)
    z = complex(z)
    if z.imag <= 0:
        raise InvalidInputError("Weyl criterion requires Im z > 0")
    phi = np.asarray(phi, dtype=complex).reshape(v.dims.m2, v.dims.m1)
    grid = Grid(L, n or int(np.ceil(256 * L)))
    u = solve_dirac(v, z, grid).values
    col = u @ np.vstack([np.eye(v.dims.m1), phi])
    f = np.sum(np.abs(col) ** 2, axis=(1, 2))
    return float(trapezoid(f, dx=grid.h))


@dataclass(frozen=True)
class WeylSampleSet:
    """Points ``z`` in the upper half-plane with non-expansive values ``phi(z)``."""

    z: np.ndarray
    phi: np.ndarray
    dims: Dimensions
    provenance: str = "computed"
    tol: float = field(default=NONEXPANSIVE_TOL, compare=False)

    def __post_init__(self):
        z = np.atleast_1d(np.array(self.z, dtype=complex))
        phi = np.array(self.phi, dtype=complex).reshape(z.size, self.dims.m2, self.dims.m1)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(phi))):
            raise InvalidInputError("Weyl samples must be finite")
        if not np.all(z.imag > 0):
            k = int(np.flatnonzero(~(z.imag > 0))[0])
            raise InvalidInputError(f"sample {k}: Im z = {z[k].imag} is not positive")
        check_nonexpansive(phi, self.tol, what="Weyl sample")
        z.flags.writeable = False
        phi.flags.writeable = False
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "phi", phi)

    def __len__(self) -> int:
        return self.z.size

    def horizontal_line(self, rtol: float = 1e-9) -> tuple[float, float, float, int]:
        """``(eta, xi_min, xi_max, count)`` if the points form a uniform horizontal line."""
        eta = self.z[0].imag
        xi = self.z.real
        if self.z.size < 2 or not np.allclose(self.z.imag, eta, rtol=rtol, atol=0):
            raise InvalidInputError("samples do not lie on a horizontal line")
        d = np.diff(xi)
        if not np.allclose(d, d[0], rtol=1e-6, atol=0) or d[0] <= 0:
            raise InvalidInputError("samples are not uniformly spaced in Re z")
        return float(eta), float(xi[0]), float(xi[-1]), int(xi.size)
