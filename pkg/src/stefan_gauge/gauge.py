"""Harmonic gauge: the map Psi from the height function and its pullback tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field_core import Grid, gradient, laplace_extension


class GaugeBreakdown(RuntimeError):
    """The harmonic map stopped being a diffeomorphism (or Lambda <= 0)."""

    def __init__(self, message, stage="gauge", where=None):
        super().__init__(message)
        self.stage = stage
        self.where = where


@dataclass(frozen=True, eq=False)
class GaugeState:
    """Harmonic map and derived quantities.

    ``A[k, i]`` is the inverse deformation ``(D Psi)^{-1}``, so that
    ``d p / d y^i = A[k, i] d q / d x^k``.
    """

    psi: np.ndarray  # (2, n_r, n_theta)
    dpsi: np.ndarray  # (2, 2, n_r, n_theta), dpsi[i, j] = d_j Psi^i
    A: np.ndarray  # (2, 2, n_r, n_theta)
    J: np.ndarray  # (n_r, n_theta)
    Lam: np.ndarray  # (n_theta,)
    psi_t: np.ndarray  # (2, n_r, n_theta)
    h: np.ndarray
    h_t: np.ndarray | None = None


def harmonic_extension(h: np.ndarray, grid: Grid) -> np.ndarray:
    """``Psi`` with ``Laplace Psi = 0`` and ``Psi = x + h N`` on the boundary.

    The displacement ``Psi - e`` is what gets solved for, so ``h = 0`` gives
    the identity map exactly.
    """
    h = np.asarray(h, dtype=float)
    e = np.stack([grid.x, grid.y])
    if not np.any(h):
        return e.copy()
    disp = laplace_extension(h[None, :] * grid.normal, grid)
    return e + disp


def boundary_velocity_extension(h_t: np.ndarray, grid: Grid) -> np.ndarray:
    """Gauge velocity ``Psi_t``: harmonic extension of ``h_t N``."""
    h_t = np.asarray(h_t, dtype=float)
    if not np.any(h_t):
        return np.zeros((2,) + grid.shape)
    return laplace_extension(h_t[None, :] * grid.normal, grid)


def invert_2x2(M: np.ndarray):
    """Closed-form inverse and determinant of a field of 2x2 matrices."""
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    inv = np.empty_like(M)
    inv[0, 0] = M[1, 1] / det
    inv[0, 1] = -M[0, 1] / det
    inv[1, 0] = -M[1, 0] / det
    inv[1, 1] = M[0, 0] / det
    return inv, det


def jacobian_matrix(psi: np.ndarray, grid: Grid) -> np.ndarray:
    """``dpsi[i, j] = d_j Psi^i``."""
    return np.stack([gradient(psi[0], grid), gradient(psi[1], grid)])


def deformation(psi: np.ndarray, grid: Grid, h: np.ndarray, h_t: np.ndarray | None = None,
                psi_prev: np.ndarray | None = None, dt: float | None = None) -> GaugeState:
    """Build the :class:`GaugeState` for ``psi``.

    ``Psi_t`` is the harmonic extension of ``h_t N`` when ``h_t`` is given,
    otherwise the backward difference ``(psi - psi_prev) / dt``, otherwise 0.
    """
    dpsi = jacobian_matrix(psi, grid)
    A, J = invert_2x2(dpsi)
    if not np.all(np.isfinite(J)) or np.min(J) <= 0:
        idx = np.unravel_index(np.argmin(np.nan_to_num(J, nan=-np.inf)), J.shape)
        raise GaugeBreakdown(f"Jacobian lost positivity (min J = {np.nanmin(J):.3e})",
                             stage="gauge", where=idx)
    N = grid.normal
    Ab = A[:, :, -1]
    # Lambda = N . A^T N = N_i A[k, i] N_k
    Lam = np.einsum("i...,ki...,k...->...", N, Ab, N)
    if np.min(Lam) <= 0:
        raise GaugeBreakdown("Lambda = N.A^T N lost positivity", stage="gauge")
    if h_t is not None:
        psi_t = boundary_velocity_extension(h_t, grid)
    elif psi_prev is not None and dt:
        psi_t = (psi - psi_prev) / dt
    else:
        psi_t = np.zeros_like(psi)
    return GaugeState(psi=psi, dpsi=dpsi, A=A, J=J, Lam=Lam, psi_t=psi_t,
                      h=np.asarray(h, dtype=float), h_t=None if h_t is None else np.asarray(h_t))


def gauge_from_height(h: np.ndarray, grid: Grid, h_t: np.ndarray | None = None) -> GaugeState:
    return deformation(harmonic_extension(h, grid), grid, h, h_t=h_t)


def identity_gauge(grid: Grid) -> GaugeState:
    return gauge_from_height(np.zeros(grid.n_theta), grid)


def moving_normal(A: np.ndarray, grid: Grid) -> np.ndarray:
    """Unit normal ``A^T N / |A^T N|`` of the moving boundary, shape ``(2, n_theta)``."""
    Ab = A[:, :, -1] if A.ndim == 4 else A
    N = grid.normal
    v = np.einsum("ki...,k...->i...", Ab, N)
    norm = np.hypot(v[0], v[1])
    if np.any(norm == 0):
        raise GaugeBreakdown("A^T N vanished on the boundary", stage="normal")
    return v / norm


def inverse_derivatives(A: np.ndarray, grid: Grid) -> np.ndarray:
    """``dA[k, i, j] = d_j A[k, i]``."""
    out = np.empty((2, 2, 2) + grid.shape)
    for k in range(2):
        for i in range(2):
            out[k, i] = gradient(A[k, i], grid)
    return out

