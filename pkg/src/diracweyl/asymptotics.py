"""High-energy behaviour, admissibility and Borg-Marchenko locality checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError
from .fields import MatrixField
from .snode import build_S_from_phi1, smallest_eigenvalue

PhiCallable = Callable[[np.ndarray], np.ndarray]

BM_FLOOR = 1e-12


def _phi_int_weights(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``int_0^1 e^{w t} (1 - t) dt`` and ``int_0^1 e^{w t} t dt`` without cancellation."""
    w = np.asarray(w, dtype=complex)
    small = np.abs(w) < 1e-2
    ws = np.where(small, 1.0, w)
    e = np.exp(ws)
    p1 = (e - 1) / ws
    t1 = (e * (ws - 1) + 1) / ws**2
    # Taylor series for |w| < 1e-2, truncation error below 1e-16
    k = np.arange(8)
    fact = np.cumprod(np.r_[1.0, np.arange(1, 8)])
    ser_p1 = np.sum(w[..., None] ** k / (fact * (k + 1)), axis=-1)
    ser_t1 = np.sum(w[..., None] ** k / (fact * (k + 2)), axis=-1)
    p1 = np.where(small, ser_p1, p1)
    t1 = np.where(small, ser_t1, t1)
    return p1 - t1, t1


def weyl_from_phi1(Phi1: MatrixField, z: complex, upto: float | None = None) -> tuple[np.ndarray, float]:
    """``2 i z int_0^l e^{2ixz} Phi1(x) dx`` and the truncation bound of the tail.

    ``Phi1`` is taken piecewise linear between the nodes and the integral
    over each cell is evaluated exactly, so the quadrature stays accurate
    when ``|z| h`` is not small.  The tail bound is
    ``|z| / Im z * ||Phi1(l)|| * exp(-2 Im z l)``.
    """
    z = complex(z)
    if z.imag <= 0:
        raise InvalidInputError("representation requires Im z > 0")
    grid = Phi1.grid
    k = grid.n if upto is None else grid.index(upto)
    if k == 0:
        return np.zeros(Phi1.values.shape[1:], dtype=complex), float(abs(z) / z.imag * np.linalg.norm(Phi1.values[0], 2))
    h = grid.h
    x = grid.x[:k]
    c = 2j * z
    wl, wr = _phi_int_weights(np.array([c * h]))
    scale = h * np.exp(c * x)
    vals = Phi1.values
    integral = np.tensordot(scale * wl[0], vals[:k], axes=1) + np.tensordot(scale * wr[0], vals[1:k + 1], axes=1)
    l = k * h
    tail = abs(z) / z.imag * float(np.linalg.norm(vals[k], 2)) * np.exp(-2 * z.imag * l)
    return c * integral, float(tail)


def _monotone_growth(r: np.ndarray) -> float:
    """Largest ratio end/start over runs where ``r`` increases monotonically."""
    best, start = 1.0, 0
    for i in range(1, len(r)):
        if r[i] < r[i - 1]:
            start = i
        elif r[start] > 0:
            best = max(best, r[i] / r[start])
        elif r[i] > 0:
            best = np.inf
    return float(best)


def high_energy_check(phi: PhiCallable, Phi1: MatrixField, l: float,
                      heights: Sequence[float] = (5, 10, 20, 40, 64), growth: float = 2.0) -> dict:
    """Normalized remainder of the high-energy asymptotics along ``z = iy``.

    ``r(y) = ||phi(iy) - 2iz int_0^l e^{2ixz} Phi1|| sqrt(y) / (2 y e^{-2 l y})``.
    The verdict is ``bounded`` unless ``r`` grows monotonically by more than
    ``growth``.  The report also lists ``2 i y phi(iy)``, whose limit is the
    leading coefficient.
    """
    y = np.asarray(heights, dtype=float)
    if np.any(y <= 0) or np.any(np.diff(y) <= 0):
        raise InvalidInputError("heights must be positive and increasing")
    z = 1j * y
    vals = np.asarray(phi(z))
    r = np.empty(y.size)
    for i, (zi, yi) in enumerate(zip(z, y)):
        rep, _ = weyl_from_phi1(Phi1, zi, upto=l)
        r[i] = np.linalg.norm(vals[i] - rep, 2) * np.sqrt(yi) / (2 * yi * np.exp(-2 * l * yi))
    g = _monotone_growth(r)
    return {
        "l": float(l),
        "heights": y.tolist(),
        "r": r.tolist(),
        "max_monotone_growth": g,
        "bounded": bool(g <= growth),
        "leading_term": [(2j * yi * vals[i]).tolist() for i, yi in enumerate(y)],
    }


def admissibility_check(Phi1: MatrixField, lengths: Sequence[float], margin: float = 0.0) -> dict:
    """Smallest eigenvalue of ``S_l`` over ``lengths`` (grid nodes of ``Phi1``).

    The eigenvalue is non-increasing in ``l`` because ``S_l`` is a leading
    principal block of ``S``.  When it crosses ``margin`` the crossing is
    located to one cell by bisection on the number of cells.
    """
    S = build_S_from_phi1(Phi1)
    grid = Phi1.grid
    m2 = Phi1.rows
    cells = sorted({grid.index(l) for l in lengths})
    if not cells or cells[0] == 0:
        raise InvalidInputError("lengths must be positive grid nodes")

    def lam(k: int) -> float:
        return smallest_eigenvalue(S[:k * m2, :k * m2])

    eig = [lam(k) for k in cells]
    report = {
        "lengths": [k * grid.h for k in cells],
        "min_eigenvalue": eig,
        "margin": margin,
        "admissible": bool(all(e > margin for e in eig)),
        "crossing_length": None,
    }
    if not report["admissible"]:
        first = next(i for i, e in enumerate(eig) if e <= margin)
        lo = cells[first - 1] if first > 0 else 0
        hi = cells[first]
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if lam(mid) > margin:
                lo = mid
            else:
                hi = mid
        report["crossing_length"] = hi * grid.h
        report["verdict"] = f"inadmissible: S_l loses positivity at l = {hi * grid.h:.6g}"
    else:
        report["verdict"] = "admissible at all tested lengths"
    return report


@dataclass
class RaySampling:
    """Points ``z = (c + i) y`` on the ray ``Re z = c Im z``."""

    c: float = 0.0
    heights: Sequence[float] = (2, 4, 8, 16, 32, 64)
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        if h.size < 2 or np.any(h <= 0) or np.any(np.diff(h) <= 0):
            raise InvalidInputError("ray heights must be positive and strictly increasing")
        self.heights = h

    @property
    def z(self) -> np.ndarray:
        return (self.c + 1j) * self.heights


def fit_decay_rate(heights: np.ndarray, diffs: np.ndarray, floor: float = BM_FLOOR) -> dict:
    """Least-squares slope of ``log diff`` against ``-2 y`` over the upper half of the usable points."""
    y = np.asarray(heights, float)
    d = np.asarray(diffs, float)
    keep = d > floor
    if not np.any(keep):
        return {"r_hat": float("inf"), "residual": 0.0, "points": [], "verdict": "indistinguishable"}
    yk, dk = y[keep], d[keep]
    if yk.size < 2:
        return {"r_hat": float("nan"), "residual": float("nan"), "points": yk.tolist(),
                "verdict": "insufficient data above the floor"}
    start = min(yk.size // 2, yk.size - 2)
    yk, dk = yk[start:], dk[start:]
    A = np.column_stack([-2 * yk, np.ones_like(yk)])
    coef, *_ = np.linalg.lstsq(A, np.log(dk), rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - np.log(dk)) ** 2)))
    return {"r_hat": float(coef[0]), "residual": resid, "points": yk.tolist(), "verdict": "fitted"}


def borg_marchenko_check(phiA: PhiCallable, phiB: PhiCallable, ray: RaySampling,
                         floor: float = BM_FLOOR, reconstruct=None) -> dict:
    """Decay rate ``r`` in ``||phiA - phiB|| = O(e^{2irz})`` along the ray.

    With ``reconstruct`` (an :class:`~diracweyl.inverse.InversionConfig`)
    both potentials are rebuilt and their sup difference on
    ``[0, 0.95 r]`` is reported.
    """
    z = ray.z
    a = np.asarray(phiA(z))
    b = np.asarray(phiB(z))
    ray.values = {"A": a, "B": b}
    diffs = np.linalg.norm(a - b, 2, axis=(1, 2))
    report = fit_decay_rate(ray.heights, diffs, floor)
    report.update({"c": ray.c, "heights": ray.heights.tolist(), "differences": diffs.tolist()})
    if reconstruct is not None and np.isfinite(report["r_hat"]) and report["r_hat"] > 0:
        from .inverse import potential_from_weyl
        va = potential_from_weyl(phiA, reconstruct).v
        vb = potential_from_weyl(phiB, reconstruct).v
        upto = 0.95 * report["r_hat"]
        mask = va.x <= upto + 1e-12
        report["potential_agreement_interval"] = float(min(upto, va.grid.l))
        report["potential_sup_difference"] = float(
            np.linalg.norm(va.values[mask] - vb.values[mask], 2, axis=(1, 2)).max()) if mask.any() else 0.0
        report["potentials"] = (va, vb)
    return report
