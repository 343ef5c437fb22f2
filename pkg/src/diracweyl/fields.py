"""Grids, sampled matrix fields and potentials."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class Dimensions:
    """Block sizes ``m1`` and ``m2`` of the Dirac system."""

    m1: int
    m2: int

    def __post_init__(self):
        if int(self.m1) < 1 or int(self.m2) < 1:
            raise InvalidInputError(f"m1 and m2 must be >= 1, got {self.m1}, {self.m2}")

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    @property
    def j(self) -> np.ndarray:
        """Signature matrix ``diag(I_m1, -I_m2)``."""
        return np.diag(np.r_[np.ones(self.m1), -np.ones(self.m2)]).astype(complex)


@dataclass(frozen=True)
class Grid:
    """Uniform mesh ``x_k = k*h`` on ``[0, l]`` with ``n`` cells."""

    l: float
    n: int

    def __post_init__(self):
        if not np.isfinite(self.l) or self.l <= 0:
            raise InvalidInputError(f"grid length must be positive, got {self.l}")
        if int(self.n) != self.n or self.n < 1:
            raise InvalidInputError(f"number of cells must be a positive integer, got {self.n}")

    @property
    def h(self) -> float:
        return self.l / self.n

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.l, self.n + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    def index(self, x: float, atol: float = 1e-9) -> int:
        """Index of the node at ``x``; raises if ``x`` is not a node."""
        k = int(round(x / self.h))
        if k < 0 or k > self.n or abs(k * self.h - x) > atol * max(1.0, self.l):
            raise InvalidInputError(f"x={x} is not a node of {self}")
        return k

    def truncated(self, k: int) -> "Grid":
        """Grid on ``[0, x_k]`` with the same step."""
        return Grid(k * self.h, k)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MatrixField:
    """Matrix-valued function sampled at every node of ``grid``.

    ``values`` has shape ``(n + 1, rows, cols)`` and is read-only.
    """

    grid: Grid
    values: np.ndarray
    role: str = field(default="field", compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        if vals.ndim == 1:
            vals = vals[:, None, None]
        if vals.ndim != 3 or vals.shape[0] != self.grid.n + 1:
            raise InvalidInputError(
                f"{self.role}: expected {self.grid.n + 1} samples of a matrix, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            bad = int(np.argwhere(~np.isfinite(vals))[0, 0])
            raise InvalidInputError(f"{self.role}: non-finite entry at node {bad}")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def rows(self) -> int:
        return self.values.shape[1]

    @property
    def cols(self) -> int:
        return self.values.shape[2]

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, k):
        return self.values[k]

    def with_values(self, values, role: str | None = None) -> "MatrixField":
        return MatrixField(self.grid, values, role or self.role)

    def midpoint_values(self) -> np.ndarray:
        """Cell-midpoint values by linear interpolation."""
        return 0.5 * (self.values[1:] + self.values[:-1])

    def derivative(self) -> "MatrixField":
        """Central differences inside, second-order one-sided at the ends."""
        if self.grid.n < 2:
            raise InvalidInputError("derivative needs at least two cells")
        d = np.gradient(self.values, self.grid.h, axis=0, edge_order=2)
        return MatrixField(self.grid, d, self.role + "'")

    def norms(self) -> np.ndarray:
        """Spectral norm at every node."""
        return np.linalg.norm(self.values, ord=2, axis=(1, 2))

    def sup_norm(self, upto: float | None = None) -> float:
        nrm = self.norms()
        if upto is not None:
            nrm = nrm[self.x <= upto + 1e-12]
        return float(nrm.max()) if nrm.size else 0.0

    def __call__(self, x) -> np.ndarray:
        """Linear interpolation; values beyond ``[0, l]`` are zero."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros((x.size, self.rows, self.cols), dtype=complex)
        t = x / self.grid.h
        inside = (x >= 0) & (x <= self.grid.l * (1 + 1e-12))
        k = np.clip(np.floor(t[inside]).astype(int), 0, self.grid.n - 1)
        w = (t[inside] - k)[:, None, None]
        out[inside] = (1 - w) * self.values[k] + w * self.values[k + 1]
        return out


class Potential:
    """An ``m1 x m2`` potential ``v(x)`` on the half-line.

    ``func`` maps a 1-D array of positions to an array of shape
    ``(len(x), m1, m2)``.  Use the class methods to build one from
    constants, entry-wise callables or node samples.
    """

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], dims: Dimensions,
                 name: str = "v", support: float | None = None):
        self._func = func
        self.dims = dims
        self.name = name
        # beyond ``support`` the potential vanishes identically
        self.support = support

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        vals = np.asarray(self._func(x), dtype=complex)
        vals = np.broadcast_to(vals, (x.size, self.dims.m1, self.dims.m2))
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError(f"potential {self.name} has non-finite values")
        return vals

    def sample(self, grid: Grid) -> MatrixField:
        return MatrixField(grid, self(grid.x), role=self.name)

    def __repr__(self) -> str:
        return f"Potential({self.name!r}, m1={self.dims.m1}, m2={self.dims.m2})"

    @classmethod
    def constant(cls, c, m1: int | None = None, m2: int | None = None) -> "Potential":
        c = np.atleast_2d(np.asarray(c, dtype=complex))
        if m1 is not None and m2 is not None:
            c = np.broadcast_to(c, (m1, m2))
        dims = Dimensions(*c.shape)
        c = c.copy()
        return cls(lambda x: np.broadcast_to(c, (x.size,) + c.shape), dims,
                   name=f"const{c.tolist()}")

    @classmethod
    def zero(cls, m1: int = 1, m2: int = 1) -> "Potential":
        out = cls.constant(np.zeros((m1, m2)))
        out.name = "zero"
        out.support = 0.0
        return out

    @classmethod
    def from_entries(cls, entries: Sequence[Sequence], name: str = "v") -> "Potential":
        """Entry-wise callables (or numbers) ``entries[r][c](x)``."""
        rows = [list(r) for r in entries]
        dims = Dimensions(len(rows), len(rows[0]))
        if any(len(r) != dims.m2 for r in rows):
            raise InvalidInputError("ragged potential entry table")

        def func(x):
            out = np.empty((x.size, dims.m1, dims.m2), dtype=complex)
            for a, row in enumerate(rows):
                for b, f in enumerate(row):
                    out[:, a, b] = f(x) if callable(f) else f
            return out

        return cls(func, dims, name=name)

    @classmethod
    def from_field(cls, v: MatrixField, name: str | None = None) -> "Potential":
        """Piecewise-linear interpolant of node samples, zero beyond the grid."""
        return cls(v, Dimensions(v.rows, v.cols), name=name or v.role, support=v.grid.l)


def as_potential(v) -> Potential:
    if isinstance(v, Potential):
        return v
    if isinstance(v, MatrixField):
        return Potential.from_field(v)
    raise InvalidInputError(f"cannot interpret {type(v).__name__} as a potential")


def check_same_grid(*fields: MatrixField) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise InvalidInputError(f"grid mismatch: {f.grid} vs {g}")
    return g
