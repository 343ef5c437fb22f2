"""Small ODE helpers: ETDRK4 coefficients and grid RK4 for ``Y' = Y M(x)``."""

from __future__ import annotations

import numpy as np


def etdrk4_coefficients(c: np.ndarray, h: float, n_contour: int = 32):
    """Cox-Matthews ETDRK4 weights for the scalar linear parts ``c``.

    The phi-functions are evaluated by averaging over a circle of radius
    one around ``c*h`` (Kassam-Trefethen), which avoids cancellation for
    small ``|c h|``. Works for complex ``c``; all weights include ``h``.
    """
    c = np.asarray(c, dtype=complex)
    L = c * h
    r = np.exp(2j * np.pi * (np.arange(n_contour) + 0.5) / n_contour)
    LR = L[..., None] + r
    eLR = np.exp(LR)
    Q = h * np.mean((np.exp(LR / 2) - 1) / LR, axis=-1)
    f1 = h * np.mean((-4 - LR + eLR * (4 - 3 * LR + LR**2)) / LR**3, axis=-1)
    f2 = h * np.mean((2 + LR + eLR * (LR - 2)) / LR**3, axis=-1)
    f3 = h * np.mean((-4 - 3 * LR - LR**2 + eLR * (4 - LR)) / LR**3, axis=-1)
    return np.exp(L), np.exp(L / 2), Q, f1, f2, f3


def rk4_right_linear(M_nodes: np.ndarray, M_mid: np.ndarray, Y0: np.ndarray, h: float) -> np.ndarray:
    """Classical RK4 for ``Y' = Y M(x)`` on a uniform grid.

    ``M_nodes`` holds ``M`` at the ``n + 1`` nodes and ``M_mid`` at the ``n``
    cell midpoints. Returns ``Y`` at every node.
    """
    n = M_mid.shape[0]
    Y = np.empty((n + 1,) + Y0.shape, dtype=complex)
    Y[0] = Y0
    for k in range(n):
        y = Y[k]
        k1 = y @ M_nodes[k]
        k2 = (y + 0.5 * h * k1) @ M_mid[k]
        k3 = (y + 0.5 * h * k2) @ M_mid[k]
        k4 = (y + h * k3) @ M_nodes[k + 1]
        Y[k + 1] = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return Y
