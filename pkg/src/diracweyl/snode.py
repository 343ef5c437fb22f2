"""Discrete S-node ``(A, S, Pi)`` on a uniform grid and its triangular factor.

Functions in ``L^2_{m2}(0, l)`` are represented by their values at the ``n``
cell midpoints ``x_{k+1/2}``.  The inner product is ``h * sum f_k^* g_k``,
so operator adjoints are plain conjugate transposes of the matrices.  With
this convention

* ``A`` is the midpoint quadrature of ``-i int_0^x``,
* ``Pi`` maps ``g in C^m`` to the samples of ``[Phi1(x) I] g`` and
  ``Pi^*`` carries a factor ``h``,
* ``S = I - h K`` where ``K`` samples the kernel
  ``s(x, t) = int_0^{min(x,t)} Phi1'(x - r) Phi1'(t - r)^* dr``.

``Phi1'`` is taken as the cell difference quotient, which is the derivative
at the cell midpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, polar, solve_triangular, sqrtm

from .dirac_core import midpoint_potential
from .errors import AdmissibilityError, InvalidInputError, SingularityError
from .fields import Dimensions, Grid, MatrixField

PHI1_ZERO_TOL = 1e-10


def _hermitian(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def _blocks(a: np.ndarray, m2: int) -> np.ndarray:
    """``(n*m2, c)`` stacked blocks to ``(n, m2, c)``."""
    return a.reshape(-1, m2, a.shape[-1])


def build_A(grid: Grid, m2: int) -> np.ndarray:
    """Midpoint quadrature of ``-i int_0^x``: ``-i h`` below the diagonal, ``-i h/2`` on it."""
    n = grid.n
    low = np.tril(np.ones((n, n)), -1) + 0.5 * np.eye(n)
    return np.kron(-1j * grid.h * low, np.eye(m2))


def phi1_cell_data(Phi1: MatrixField) -> tuple[np.ndarray, np.ndarray]:
    """``(Phi1 at midpoints, Phi1' at midpoints)``, each of shape ``(n, m2, m1)``."""
    vals = Phi1.values
    return 0.5 * (vals[1:] + vals[:-1]), np.diff(vals, axis=0) / Phi1.grid.h


def _check_phi1_origin(Phi1: MatrixField, tol: float) -> None:
    scale = max(1.0, Phi1.sup_norm())
    if np.linalg.norm(Phi1.values[0], 2) > tol * scale:
        raise InvalidInputError(
            f"Phi1(0) must vanish, got norm {np.linalg.norm(Phi1.values[0], 2):.3g}")


def _toeplitz_blocks(D: np.ndarray) -> np.ndarray:
    """Block lower-triangular Toeplitz matrix with ``T[j, q] = D[j - q]``."""
    n, m2, m1 = D.shape
    idx = np.arange(n)[:, None] - np.arange(n)[None, :]
    T = np.where((idx >= 0)[:, :, None, None], D[np.clip(idx, 0, None)], 0)
    return T.transpose(0, 2, 1, 3).reshape(n * m2, n * m1)


def build_S_from_phi1(Phi1: MatrixField, tol: float = PHI1_ZERO_TOL) -> np.ndarray:
    """Hermitian matrix of ``S`` on the midpoint grid.

    ``s(x_j, x_k)`` is approximated by ``sum_q w_q D_{j-q} D_{k-q}^*`` over
    ``q = 0..min(j, k)`` with ``w_0 = h/2`` and ``w_q = h`` otherwise; the
    rule is exact for linear ``Phi1``.
    """
    _check_phi1_origin(Phi1, tol)
    grid = Phi1.grid
    h, n = grid.h, grid.n
    _, D = phi1_cell_data(Phi1)
    m2, m1 = D.shape[1:]
    T = _toeplitz_blocks(D)
    w = np.full(n, h)
    w[0] = h / 2
    K = (T * np.repeat(w, m1)[None, :]) @ T.conj().T
    return _hermitian(np.eye(n * m2) - h * K)


@dataclass(frozen=True, eq=False)
class DiscreteNode:
    """Matrices ``A`` and ``S`` together with ``Phi1`` on a common grid."""

    grid: Grid
    dims: Dimensions
    A: np.ndarray
    S: np.ndarray
    Phi1: MatrixField

    @property
    def Pi(self) -> np.ndarray:
        """``(n*m2, m)`` samples of ``[Phi1 I]`` at the cell midpoints."""
        mid, _ = phi1_cell_data(self.Phi1)
        n, m2 = self.grid.n, self.dims.m2
        eye = np.broadcast_to(np.eye(m2), (n, m2, m2))
        return np.concatenate([mid, eye], axis=2).reshape(n * m2, self.dims.m)

    @property
    def dPhi1(self) -> np.ndarray:
        """``Phi1'`` at the midpoints, stacked as ``(n*m2, m1)``."""
        return phi1_cell_data(self.Phi1)[1].reshape(-1, self.dims.m1)

    def leading(self, cells: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(A_r, S_r, P_r Pi)`` for the first ``cells`` cells."""
        if not 1 <= cells <= self.grid.n:
            raise InvalidInputError(f"sub-node size {cells} outside 1..{self.grid.n}")
        k = cells * self.dims.m2
        return self.A[:k, :k], self.S[:k, :k], self.Pi[:k]


def make_node(Phi1: MatrixField, tol: float = PHI1_ZERO_TOL) -> DiscreteNode:
    """Assemble the node generated by ``Phi1`` (an ``m2 x m1`` field with ``Phi1(0) = 0``)."""
    dims = Dimensions(Phi1.cols, Phi1.rows)
    S = build_S_from_phi1(Phi1, tol)
    return DiscreteNode(Phi1.grid, dims, build_A(Phi1.grid, dims.m2), S, Phi1)


def check_operator_identity(node: DiscreteNode) -> float:
    """Operator norm of ``A S - S A^* - i Pi j Pi^*``."""
    A, S, Pi = node.A, node.S, node.Pi
    R = A @ S - S @ A.conj().T - 1j * node.grid.h * (Pi @ node.dims.j @ Pi.conj().T)
    return float(np.linalg.norm(R, 2))


@dataclass(frozen=True, eq=False)
class TriangularFactor:
    """Block lower-triangular ``E`` with ``S^{-1} = E^* E``.

    ``matrix`` is the full ``(n*m2, n*m2)`` array.  The diagonal blocks are
    Hermitian positive definite and tend to ``I`` as ``h -> 0``; the blocks
    below the diagonal are ``h`` times samples of the kernel ``E(x, t)``.
    """

    grid: Grid
    m2: int
    matrix: np.ndarray

    def block(self, j: int, k: int) -> np.ndarray:
        m2 = self.m2
        return self.matrix[j * m2:(j + 1) * m2, k * m2:(k + 1) * m2]

    def diagonal_blocks(self) -> np.ndarray:
        n, m2 = self.grid.n, self.m2
        return np.array([self.block(k, k) for k in range(n)]).reshape(n, m2, m2)

    def kernel(self, j: int, k: int) -> np.ndarray:
        """``E(x_{j+1/2}, x_{k+1/2})`` for ``j > k``."""
        if j <= k:
            raise InvalidInputError("kernel is defined below the diagonal only")
        return self.block(j, k) / self.grid.h

    def apply(self, f: np.ndarray) -> np.ndarray:
        """``E f`` for stacked midpoint samples ``f`` of shape ``(n*m2, c)``."""
        return self.matrix @ f


def _cholesky(S: np.ndarray) -> tuple[np.ndarray, int]:
    """Lower Cholesky factor and LAPACK ``info`` (``> 0``: leading minor of that order fails)."""
    C, info = lapack.zpotrf(np.asarray(S, dtype=complex), lower=1, clean=1)
    return C, int(info)


def smallest_eigenvalue(S: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(S)[0])


def _normalized_factor(C: np.ndarray, grid: Grid, m2: int) -> TriangularFactor:
    """``diag(U_k) C^{-1}`` where ``C_kk = P_k U_k`` is the left polar decomposition."""
    Cinv = solve_triangular(C, np.eye(C.shape[0]), lower=True)
    for k in range(grid.n):
        sl = slice(k * m2, (k + 1) * m2)
        U, _ = polar(C[sl, sl], side="left")
        Cinv[sl, :] = U @ Cinv[sl, :]
    return TriangularFactor(grid, m2, Cinv)


def factor_S_inverse(S: np.ndarray, grid: Grid, m2: int) -> TriangularFactor:
    """Triangular factorization ``S^{-1} = E^* E`` with positive diagonal blocks.

    With ``S = C C^*`` (lower Cholesky) and the polar decomposition
    ``C_kk = P_k U_k`` of each diagonal block, ``E = diag(U_k) C^{-1}`` has
    diagonal blocks ``P_k^{-1} > 0``.  This is the same factor as
    ``D^{-1/2} L^{-1}`` from the block form ``S = L D L^*``.

    Raises
    ------
    AdmissibilityError
        If ``S`` is not positive definite.  Carries the smallest eigenvalue
        and the first leading block whose minor fails.
    """
    S = np.asarray(S, dtype=complex)
    C, info = _cholesky(S)
    if info != 0:
        if info < 0:
            raise InvalidInputError(f"Cholesky rejected argument {-info}")
        lam = smallest_eigenvalue(S)
        block = (info - 1) // m2
        raise AdmissibilityError(
            f"S is not positive definite: smallest eigenvalue {lam:.6g}, "
            f"first failing leading block {block} (x = {(block + 1) * grid.h:.6g})",
            eigenvalue=lam, length=(block + 1) * grid.h, block=block)
    return _normalized_factor(C, grid, m2)


def factorization_residual(E: TriangularFactor, S: np.ndarray) -> float:
    """``||E^* E S - I||``."""
    M = E.matrix
    return float(np.linalg.norm(M.conj().T @ (M @ S) - np.eye(S.shape[0]), 2))


def transfer_matrix(node: DiscreteNode, r: float, z: complex) -> np.ndarray:
    """``w_A(r, z) = I + i z j Pi^* S_r^{-1} (I - z A_r)^{-1} P_r Pi``."""
    cells = node.grid.index(r)
    if cells == 0:
        raise InvalidInputError("transfer matrix needs r > 0")
    A, S, Pi = node.leading(cells)
    m = node.dims.m
    z = complex(z)
    if z == 0:
        return np.eye(m, dtype=complex)
    R = np.eye(A.shape[0]) - z * A
    # A is triangular with diagonal -i h/2, so I - zA is singular only at z = -2i/h
    if abs(1 + 0.5j * z * node.grid.h) < 1e-14:
        raise SingularityError(f"I - zA is singular at z={z}")
    X = solve_triangular(R, Pi, lower=True)
    Y = np.linalg.solve(S, X)
    return np.eye(m) + 1j * z * node.dims.j @ (node.grid.h * Pi.conj().T @ Y)


def fundamental_from_node(node: DiscreteNode, u0: MatrixField, x: float, z: complex) -> np.ndarray:
    """``e^{ixz} u(x, 0) w_A(x, 2z)``."""
    k = u0.grid.index(x)
    if k == 0:
        return np.eye(node.dims.m, dtype=complex)
    return np.exp(1j * x * z) * u0.values[k] @ transfer_matrix(node, x, 2 * z)


def cells_to_nodes(cell_values: np.ndarray) -> np.ndarray:
    """Node values from midpoint values: averages inside, linear extrapolation at the ends."""
    c = cell_values
    n = c.shape[0]
    out = np.empty((n + 1,) + c.shape[1:], dtype=c.dtype)
    out[1:-1] = 0.5 * (c[1:] + c[:-1])
    if n >= 2:
        out[0] = 1.5 * c[0] - 0.5 * c[1]
        out[-1] = 1.5 * c[-1] - 0.5 * c[-2]
    else:
        out[0] = out[-1] = c[0]
    return out


def gamma_cells(node: DiscreteNode, E: TriangularFactor) -> np.ndarray:
    """``E [Phi1 I]`` at the cell midpoints, shape ``(n, m2, m)``."""
    return _blocks(E.apply(node.Pi), node.dims.m2)


def gamma_from_node(node: DiscreteNode, E: TriangularFactor) -> MatrixField:
    """``gamma = E [Phi1 I]`` at the nodes, with ``gamma(0) = [0 I]``."""
    g = cells_to_nodes(gamma_cells(node, E))
    m1, m2 = node.dims.m1, node.dims.m2
    g[0] = np.hstack([np.zeros((m2, m1)), np.eye(m2)])
    return MatrixField(node.grid, g, role="gamma")


def hamiltonian_from_node(node: DiscreteNode, E: TriangularFactor) -> MatrixField:
    """``H = gamma^* gamma`` with ``gamma = E [Phi1 I]``."""
    g = gamma_from_node(node, E).values
    return MatrixField(node.grid, np.conj(np.swapaxes(g, 1, 2)) @ g, role="H")


def phi1_from_potential(v, grid: Grid, iterations: int = 6) -> tuple[MatrixField, TriangularFactor]:
    """``Phi1`` of the node generated by the potential ``v``, marched cell by cell.

    The discrete relation ``(E Phi1')_k = -i v(x_{k+1/2})^*`` is causal: the
    ``k``-th block row of the Cholesky factor of ``S`` depends on
    ``Phi1'`` on cells ``0..k`` only.  Each step solves for ``Phi1'`` on cell
    ``k`` by a short fixed-point iteration (the dependence of row ``k`` of
    ``S`` on the new value is ``O(h^2)``).  Returns ``Phi1`` at the nodes
    and the matching factor ``E``.
    """
    vm, dims = midpoint_potential(v, grid)
    m1, m2, n, h = dims.m1, dims.m2, grid.n, grid.h
    target = -1j * np.conj(np.swapaxes(vm, 1, 2))
    N = n * m2
    S = np.zeros((N, N), dtype=complex)
    C = np.zeros((N, N), dtype=complex)
    D = np.zeros((n, m2, m1), dtype=complex)
    Dstack = D.reshape(N, m1)
    y = np.zeros((N, m1), dtype=complex)
    eye = np.eye(m2)
    for k in range(n):
        r = slice(k * m2, (k + 1) * m2)
        p = k * m2
        # rows of S without the D_k terms
        base_diag = eye.copy()
        a = np.zeros((m2, p), dtype=complex)
        if k >= 1:
            prev = slice((k - 1) * m2, k * m2)
            base_diag = S[prev, prev] - 0.5 * h * h * (D[k - 1] @ D[k - 1].conj().T)
            if k >= 2:
                a[:, m2:] = S[prev, :p - m2] - 0.5 * h * h * (D[k - 1] @ Dstack[:p - m2].conj().T)
            # the j = 0 block receives only the D_k term
        bvec = -0.5 * h * h * Dstack[:p].conj().T  # (m1, p): S_{k,<k} = a + D_k bvec
        if p:
            Ck = C[:p, :p]
            sol = solve_triangular(Ck, np.hstack([a.conj().T, bvec.conj().T]), lower=True,
                                   check_finite=False).conj().T
            alpha, beta = sol[:m2], sol[m2:]
            ay = alpha @ y[:p]
            M = beta @ y[:p]
        else:
            alpha = np.zeros((m2, 0))
            beta = np.zeros((m1, 0))
            ay = np.zeros((m2, m1))
            M = np.zeros((m1, m1))
        Dk = target[k].copy()
        for _ in range(iterations):
            Ckrow = alpha + Dk @ beta
            G = base_diag - 0.5 * h * h * (Dk @ Dk.conj().T) - Ckrow @ Ckrow.conj().T
            Gh = sqrtm(_hermitian(G))
            Dk = np.linalg.solve((np.eye(m1) - M).T, (Gh @ target[k] + ay).T).T
        Ckrow = alpha + Dk @ beta
        G = _hermitian(base_diag - 0.5 * h * h * (Dk @ Dk.conj().T) - Ckrow @ Ckrow.conj().T)
        Lkk, info = _cholesky(G)
        if info != 0:
            lam = float(np.linalg.eigvalsh(G)[0])
            raise AdmissibilityError(f"node is not positive definite at cell {k}",
                                     eigenvalue=lam, length=(k + 1) * h, block=k)
        D[k] = Dk
        S[r, :p] = a + Dk @ bvec
        S[:p, r] = S[r, :p].conj().T
        S[r, r] = base_diag - 0.5 * h * h * (Dk @ Dk.conj().T)
        C[r, :p] = Ckrow
        C[r, r] = Lkk
        y[r] = solve_triangular(Lkk, Dk - Ckrow @ y[:p], lower=True)
    Phi1 = np.zeros((n + 1, m2, m1), dtype=complex)
    Phi1[1:] = h * np.cumsum(D, axis=0)
    field = MatrixField(grid, Phi1, role="Phi1")
    return field, _normalized_factor(C, grid, m2)
