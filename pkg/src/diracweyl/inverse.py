"""Reconstruction of the potential from Weyl-function values.

Pipeline: Fourier inversion along ``Im z = eta`` gives ``Phi1``; ``Phi1``
generates the node ``S``; the factor ``E`` of ``S^{-1}`` gives the
potential directly (route B) and, through ``beta`` and the Schur-coefficient
recovery of ``gamma``, a second time (route A).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import snode
from ._integrators import rk4_right_linear
from .dirac_core import potential_from_beta_gamma, schur_coefficient
from .errors import (AdmissibilityError, DiracError, InconsistentInputError, InvalidInputError,
                     SingularityError)
from .fields import Dimensions, Grid, MatrixField
from .weyl_forward import WeylSampleSet, check_nonexpansive

PhiCallable = Callable[[np.ndarray], np.ndarray]

# aliased copies are damped by exp(-2 eta (period - x)); keep that below e^-25
_ALIAS_EXPONENT = 25.0


@dataclass(frozen=True)
class InversionConfig:
    """Sampling of the line ``Im z = eta`` and the target grid for ``Phi1``.

    ``xi_max`` and ``n_xi`` default to ``max(200, 4 pi n / l)`` and the
    smallest power of two that is at least ``8 n`` and keeps the aliasing
    period of the discrete Fourier sum beyond ``l + 12.5 / eta``.
    """

    grid: Grid
    eta: float = 1.0
    xi_max: float | None = None
    n_xi: int | None = None
    snap_tol: float = 1e-3
    check_eta: float | None = 2.0
    chunk: int = 64

    def __post_init__(self):
        if not self.eta > 0:
            raise InvalidInputError(f"eta must be positive, got {self.eta}")
        n, l = self.grid.n, self.grid.l
        a = self.xi_max if self.xi_max is not None else max(200.0, 4 * np.pi * n / l)
        if a < np.pi * n / (2 * l):
            raise InvalidInputError(f"xi_max={a} is below the Nyquist bound {np.pi * n / (2 * l):.4g}")
        n_xi = self.n_xi
        if n_xi is None:
            need = a * (2 * l + 2 * _ALIAS_EXPONENT / (2 * self.eta)) / np.pi
            n_xi = 2 ** int(np.ceil(np.log2(max(8 * n, need))))
        if n_xi < 2 or n_xi % 2:
            raise InvalidInputError(f"n_xi must be even, got {n_xi}")
        object.__setattr__(self, "xi_max", float(a))
        object.__setattr__(self, "n_xi", int(n_xi))

    @property
    def xi(self) -> np.ndarray:
        """Cell-centred frequencies on ``[-a, a]``."""
        d = 2 * self.xi_max / self.n_xi
        return -self.xi_max + (np.arange(self.n_xi) + 0.5) * d

    @property
    def z(self) -> np.ndarray:
        return self.xi + 1j * self.eta


def _fourier_sum(z: np.ndarray, phi: np.ndarray, grid: Grid, dxi: float, chunk: int) -> np.ndarray:
    """``(dxi/pi) e^{2 x eta} sum_j e^{-2 i x xi_j} phi_j / (2 i z_j)`` at the grid nodes."""
    eta = z[0].imag
    F = (phi / (2j * z)[:, None, None]).reshape(z.size, -1)
    x = grid.x
    out = np.empty((x.size, F.shape[1]), dtype=complex)
    for s in range(0, x.size, chunk):
        xs = x[s:s + chunk]
        out[s:s + chunk] = np.exp(-2j * np.outer(xs, z.real)) @ F
    out *= (dxi / np.pi) * np.exp(2 * x * eta)[:, None]
    return out.reshape((x.size,) + phi.shape[1:])


def lipschitz_check(Phi1: MatrixField, growth: float = 1.5, floor: float = 1e-8) -> dict:
    """Discrete Lipschitz test: the largest difference quotient must not grow under refinement.

    Compares ``max ||Phi1'||`` on the grid with the value on the grid of
    twice the step.  A jump in ``Phi1`` makes the quotient scale like
    ``1/h``, so the ratio approaches 2; a Lipschitz field keeps it near 1.
    """
    vals, h = Phi1.values, Phi1.grid.h
    fine = np.linalg.norm(np.diff(vals, axis=0), 2, axis=(1, 2)).max() / h if len(vals) > 1 else 0.0
    coarse = (np.linalg.norm(np.diff(vals[::2], axis=0), 2, axis=(1, 2)).max() / (2 * h)
              if len(vals) > 2 else fine)
    ok = bool(fine <= growth * coarse + floor)
    return {"lipschitz_fine": float(fine), "lipschitz_coarse": float(coarse), "lipschitz_ok": ok}


def phi1_from_weyl(phi: PhiCallable | WeylSampleSet, cfg: InversionConfig,
                   return_origin: bool = False):
    """``Phi1`` on ``cfg.grid`` from values of ``phi`` on the line ``Im z = eta``.

    Parameters
    ----------
    phi : callable or WeylSampleSet
        A callable maps a 1-D array of points to an ``(N, m2, m1)`` array.
        A sample set must lie on a uniform horizontal line; its own
        spacing and height replace those of ``cfg``.
    cfg : InversionConfig
    return_origin : bool
        Also return ``||Phi1(0)||`` before snapping.

    Raises
    ------
    InconsistentInputError
        If ``||Phi1(0)||`` exceeds ``snap_tol * max(1, ||Phi1||)``, or the
        result fails the discrete Lipschitz check.
    """
    if isinstance(phi, WeylSampleSet):
        eta, lo, hi, count = phi.horizontal_line()
        z, vals = phi.z, phi.phi
        dxi = (hi - lo) / (count - 1)
    else:
        z = cfg.z
        vals = np.asarray(phi(z), dtype=complex)
        if vals.ndim != 3 or vals.shape[0] != z.size:
            raise InvalidInputError(f"phi returned shape {vals.shape}, expected (N, m2, m1)")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("phi returned non-finite values")
        check_nonexpansive(vals, what="phi on the sampling line")
        dxi = 2 * cfg.xi_max / cfg.n_xi
    out = _fourier_sum(z, vals, cfg.grid, dxi, cfg.chunk)
    origin = float(np.linalg.norm(out[0], 2))
    sup = float(np.linalg.norm(out, 2, axis=(1, 2)).max())
    limit = cfg.snap_tol * max(1.0, sup)
    if origin > limit:
        raise InconsistentInputError(
            f"Phi1(0) has norm {origin:.3g} > {cfg.snap_tol:g} * max(1, ||Phi1||) = {limit:.3g}; "
            "the data do not come from a locally bounded potential or the frequency cutoff is too small")
    out[0] = 0
    field_ = MatrixField(cfg.grid, out, role="Phi1")
    lip = lipschitz_check(field_)
    if not lip["lipschitz_ok"]:
        raise InconsistentInputError(
            f"Phi1 fails the discrete Lipschitz check (difference quotients {lip['lipschitz_coarse']:.3g} "
            f"-> {lip['lipschitz_fine']:.3g} under refinement)")
    return (field_, origin) if return_origin else field_


def _route_b(node: snode.DiscreteNode, E: snode.TriangularFactor) -> MatrixField:
    ED = snode._blocks(E.apply(node.dPhi1), node.dims.m2)
    v_mid = np.conj(np.swapaxes(1j * ED, 1, 2))
    return MatrixField(node.grid, snode.cells_to_nodes(v_mid), role="v")


def potential_direct(Phi1: MatrixField) -> MatrixField:
    """``v = (i E Phi1')^*`` with ``S^{-1} = E^* E``.

    Raises ``AdmissibilityError`` if ``S`` is not positive definite.
    """
    node = snode.make_node(Phi1)
    E = snode.factor_S_inverse(node.S, node.grid, node.dims.m2)
    return _route_b(node, E)


def recover_beta(node: snode.DiscreteNode, E: snode.TriangularFactor) -> MatrixField:
    """``beta(x) = [I 0] + int_0^x (E Phi1')(t)^* (E [Phi1 I])(t) dt`` (midpoint rule)."""
    m1, m2 = node.dims.m1, node.dims.m2
    ED = snode._blocks(E.apply(node.dPhi1), m2)
    g = snode.gamma_cells(node, E)
    incr = node.grid.h * np.conj(np.swapaxes(ED, 1, 2)) @ g
    beta = np.empty((node.grid.n + 1, m1, node.dims.m), dtype=complex)
    beta[0] = np.hstack([np.eye(m1), np.zeros((m1, m2))])
    beta[1:] = beta[0] + np.cumsum(incr, axis=0)
    return MatrixField(node.grid, beta, role="beta")


def _midpoint_and_slope(f: MatrixField) -> tuple[np.ndarray, np.ndarray]:
    return f.midpoint_values(), np.diff(f.values, axis=0) / f.grid.h


def _contraction_rhs(s: np.ndarray, ds: np.ndarray) -> np.ndarray:
    """``s' s^* (I - s s^*)^{-1}`` for stacks of contractions."""
    sh = np.conj(np.swapaxes(s, 1, 2))
    m2 = s.shape[1]
    G = np.eye(m2) - s @ sh
    # X G = ds sh  ->  G^T X^T = (ds sh)^T
    return np.swapaxes(np.linalg.solve(np.swapaxes(G, 1, 2), np.swapaxes(ds @ sh, 1, 2)), 1, 2)


def _gamma_from_contraction(sigma: MatrixField) -> MatrixField:
    """Integrate ``g2' = g2 s' s^* (I - s s^*)^{-1}``, ``g2(0) = I`` and return ``g2 [s I]``."""
    m2 = sigma.rows
    nodes_d = sigma.derivative().values
    mid, mid_d = _midpoint_and_slope(sigma)
    M_nodes = _contraction_rhs(sigma.values, nodes_d)
    M_mid = _contraction_rhs(mid, mid_d)
    g2 = rk4_right_linear(M_nodes, M_mid, np.eye(m2, dtype=complex), sigma.grid.h)
    eye = np.broadcast_to(np.eye(m2), g2.shape)
    gamma = g2 @ np.concatenate([sigma.values, eye], axis=2)
    return MatrixField(sigma.grid, gamma, role="gamma")


def recover_gamma_via_schur(H: MatrixField, dims: Dimensions | None = None) -> MatrixField:
    """``gamma`` from the Hamiltonian through its Schur coefficient.

    ``sigma = H22^{-1} H21`` and ``gamma2`` solves
    ``gamma2' = gamma2 sigma' sigma^* (I - sigma sigma^*)^{-1}``,
    ``gamma2(0) = I``; the result is ``gamma2 [sigma I]``.  Without
    ``dims`` the block size ``m2`` is the rank of ``H(0) = diag(0, I)``.

    Raises ``SingularityError`` for a singular ``H22`` and
    ``ContractionError`` if ``||sigma|| >= 1`` somewhere.
    """
    m = H.rows
    if H.cols != m:
        raise InvalidInputError("Hamiltonian must be square")
    if dims is None:
        m2 = int(np.linalg.matrix_rank(H.values[0], hermitian=True, tol=1e-8))
        if not 1 <= m2 < m:
            raise InvalidInputError(f"cannot split a Hamiltonian of rank {m2} and size {m}")
        dims = Dimensions(m - m2, m2)
    m1, m2 = dims.m1, dims.m2
    H22 = H.values[:, m1:, m1:]
    H21 = H.values[:, m1:, :m1]
    cond = np.linalg.cond(H22)
    bad = np.flatnonzero(~(cond < 1e12))
    if bad.size:
        raise SingularityError(f"H22 is singular at node {bad[0]}", index=int(bad[0]))
    sigma = np.linalg.solve(H22, H21)
    _check_contraction(sigma)
    return _gamma_from_contraction(MatrixField(H.grid, sigma, role="schur"))


def _check_contraction(s: np.ndarray) -> None:
    m2 = s.shape[1]
    probe = np.concatenate([s, np.broadcast_to(np.eye(m2), (len(s), m2, m2))], axis=2)
    schur_coefficient(MatrixField(Grid(1.0, len(s) - 1), probe))


def recover_beta_via_gamma(gamma: MatrixField) -> MatrixField:
    """``beta = beta1 [I, gamma1^* (gamma2^*)^{-1}]`` with ``beta1`` from its linear ODE.

    ``beta1' = -beta1 (bt' j bt^*)(bt j bt^*)^{-1}``, ``beta1(0) = I``,
    where ``bt = [I, gamma1^* (gamma2^*)^{-1}]``.
    """
    m2, m = gamma.rows, gamma.cols
    m1 = m - m2
    j = Dimensions(m1, m2).j
    g1 = gamma.values[:, :, :m1]
    g2 = gamma.values[:, :, m1:]
    cond = np.linalg.cond(g2)
    bad = np.flatnonzero(~(cond < 1e12))
    if bad.size:
        raise SingularityError(f"gamma_2 is singular at node {bad[0]}", index=int(bad[0]))
    # t = g1^* (g2^*)^{-1} = (g2^{-1} g1)^*
    t = np.conj(np.swapaxes(np.linalg.solve(g2, g1), 1, 2))
    eye = np.broadcast_to(np.eye(m1), (len(t), m1, m1))
    bt = MatrixField(gamma.grid, np.concatenate([eye, t], axis=2), role="beta_tilde")

    def rhs(b, db):
        bh = np.conj(np.swapaxes(b, 1, 2))
        G = b @ j @ bh
        if np.any(np.linalg.eigvalsh(G)[:, 0] <= 0):
            raise SingularityError("bt j bt^* is not positive definite")
        X = db @ j @ bh
        return -np.swapaxes(np.linalg.solve(np.swapaxes(G, 1, 2), np.swapaxes(X, 1, 2)), 1, 2)

    mid, mid_d = _midpoint_and_slope(bt)
    b1 = rk4_right_linear(rhs(bt.values, bt.derivative().values), rhs(mid, mid_d),
                          np.eye(m1, dtype=complex), gamma.grid.h)
    return MatrixField(gamma.grid, b1 @ bt.values, role="beta")


def complete_beta_to_gamma(beta: MatrixField, tol: float = 1e-2) -> MatrixField:
    """The unique ``gamma`` completing ``beta`` (``gamma(0) = [0 I]``).

    Forms ``g1t = beta2^* (beta1^*)^{-1}`` and integrates
    ``gamma2' = gamma2 g1t' g1t^* (I - g1t g1t^*)^{-1}``, ``gamma2(0) = I``;
    returns ``gamma2 [g1t I]``.

    Raises
    ------
    InvalidInputError
        If ``beta(0) != [I 0]`` or ``||beta' j beta^*|| > tol``.
    SingularityError
        For a singular ``beta1`` block.
    """
    m1, m = beta.rows, beta.cols
    m2 = m - m1
    dims = Dimensions(m1, m2)
    b = beta.values
    start = np.hstack([np.eye(m1), np.zeros((m1, m2))])
    if np.linalg.norm(b[0] - start, 2) > tol:
        raise InvalidInputError("beta(0) must equal [I 0]")
    res = np.linalg.norm(beta.derivative().values @ dims.j @ np.conj(np.swapaxes(b, 1, 2)), 2, axis=(1, 2))
    if res.max() > tol:
        raise InvalidInputError(f"beta' j beta^* has norm {res.max():.3g} > {tol:g}")
    b1, b2 = b[:, :, :m1], b[:, :, m1:]
    cond = np.linalg.cond(b1)
    bad = np.flatnonzero(~(cond < 1e12))
    if bad.size:
        raise SingularityError(f"beta_1 is singular at node {bad[0]}", index=int(bad[0]))
    # g1t = b2^* (b1^*)^{-1} = (b1^{-1} b2)^*
    g1t = np.conj(np.swapaxes(np.linalg.solve(b1, b2), 1, 2))
    _check_contraction(g1t)
    return _gamma_from_contraction(MatrixField(beta.grid, g1t, role="gamma1_tilde"))


@dataclass
class InversionResult:
    """Route B potential with the intermediate fields and diagnostics."""

    v: MatrixField
    v_route_a: MatrixField
    Phi1: MatrixField
    beta: MatrixField
    gamma: MatrixField
    diagnostics: dict = field(default_factory=dict)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except AdmissibilityError as exc:
        exc.stage = name
        exc.args = (f"[{name}] Weyl-admissibility failure: {exc.args[0]}",) + exc.args[1:]
        raise
    except DiracError as exc:
        exc.stage = name
        exc.args = (f"[{name}] {exc.args[0]}",) + exc.args[1:]
        raise


def _sup_on(a: MatrixField, b: MatrixField, upto: float) -> float:
    mask = a.x <= upto + 1e-12
    return float(np.linalg.norm(a.values[mask] - b.values[mask], 2, axis=(1, 2)).max())


def potential_from_weyl(phi: PhiCallable | WeylSampleSet, cfg: InversionConfig,
                        trim: float = 0.9, ladder: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)) -> InversionResult:
    """Full reconstruction of ``v`` from ``phi``.

    Route B (``v = (i E Phi1')^*``) is returned; route A
    (``v = i beta' j gamma^*`` with ``gamma`` rebuilt from the Hamiltonian
    via the Schur coefficient) is kept as a cross-check.  Stage errors are
    re-raised with the stage name in ``exc.stage``.

    Diagnostics
    -----------
    route_discrepancy
        Sup norm of route A minus route B on ``[0, trim * l]``.
    phi1_origin
        ``||Phi1(0)||`` before snapping.
    eta_consistency
        Sup norm of the difference of ``Phi1`` at ``eta`` and ``cfg.check_eta``
        (callable input only).
    min_eigenvalue
        Smallest eigenvalue of ``S_r`` for ``r`` in ``ladder * l``.
    """
    grid = cfg.grid
    Phi1, origin = _stage("fourier", phi1_from_weyl, phi, cfg, return_origin=True)
    diag: dict = {"phi1_origin": origin, "eta": cfg.eta, "xi_max": cfg.xi_max, "n_xi": cfg.n_xi}
    diag.update(lipschitz_check(Phi1))
    if cfg.check_eta is not None and not isinstance(phi, WeylSampleSet) and cfg.check_eta != cfg.eta:
        Phi1b = _stage("fourier", phi1_from_weyl, phi, replace(cfg, eta=cfg.check_eta, n_xi=None))
        diag["eta_check"] = cfg.check_eta
        diag["eta_consistency"] = _sup_on(Phi1, Phi1b, grid.l)
    node = _stage("node", snode.make_node, Phi1)
    m2 = node.dims.m2
    eig = {}
    for frac in ladder:
        cells = max(1, int(round(frac * grid.n)))
        eig[f"{cells * grid.h:.6g}"] = snode.smallest_eigenvalue(node.S[:cells * m2, :cells * m2])
    diag["min_eigenvalue"] = eig
    try:
        E = _stage("factorization", snode.factor_S_inverse, node.S, grid, m2)
    except AdmissibilityError as exc:
        exc.diagnostics = diag
        raise
    v_b = _stage("route_b", _route_b, node, E)
    beta = _stage("route_a", recover_beta, node, E)
    H = _stage("route_a", snode.hamiltonian_from_node, node, E)
    gamma = _stage("route_a", recover_gamma_via_schur, H, node.dims)
    v_a = _stage("route_a", potential_from_beta_gamma, beta, gamma)
    diag["route_discrepancy"] = _sup_on(v_a, v_b, trim * grid.l)
    diag["trim"] = trim * grid.l
    return InversionResult(v_b, v_a, Phi1, beta, gamma, diag)
