"""First Dirichlet eigenpair, the torsion barrier and the comparison function."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field_core import (
    EllipticProblem,
    Grid,
    apply_operator,
    integrate,
    normal_derivative,
    solve_dirichlet,
)


class EigenError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class EigenPair:
    """``lam`` and ``phi`` with ``int phi^2 = 1`` and ``phi > 0`` inside."""

    lam: float
    phi: np.ndarray
    iterations: int = 0
    residual: float = np.nan


def _normalize(u: np.ndarray, grid: Grid) -> np.ndarray:
    u = u / np.sqrt(integrate(u * u, grid))
    if integrate(u, grid) < 0:
        u = -u
    return u


def rayleigh_quotient(u: np.ndarray, grid: Grid) -> float:
    """``-int u Lap u / int u^2``."""
    return -integrate(u * apply_operator(u, grid), grid) / integrate(u * u, grid)


def _inverse_iteration(grid: Grid, start: np.ndarray, deflate=(), tol: float = 1e-10,
                       maxiter: int = 200):
    u = _normalize(start, grid)
    lam_old = np.inf
    for it in range(1, maxiter + 1):
        w = solve_dirichlet(EllipticProblem(f=-u, g=0.0), grid)
        for d in deflate:
            w = w - integrate(w * d, grid) * d
        lam = integrate(u * u, grid) / integrate(u * w, grid)
        w = _normalize(w, grid)
        # lambda converges quadratically, the vector only linearly: require both
        du = float(np.max(np.abs(w - u)))
        u = w
        if abs(lam - lam_old) <= tol * abs(lam) and du <= 1e2 * tol:
            return u, it
        lam_old = lam
    raise EigenError(f"inverse iteration did not converge in {maxiter} steps")


def dirichlet_eigenpair(grid: Grid, tol: float = 1e-10, maxiter: int = 200) -> EigenPair:
    """Smallest Dirichlet eigenpair of ``-Lap`` by inverse power iteration."""
    key = ("eigenpair", tol)
    if key in grid._cache:
        return grid._cache[key]
    phi, it = _inverse_iteration(grid, barrier_psi(grid), tol=tol, maxiter=maxiter)
    lam = rayleigh_quotient(phi, grid)
    res = apply_operator(phi, grid) + lam * phi
    pair = EigenPair(lam, phi, it, float(np.max(np.abs(res[:-1]))))
    grid._cache[key] = pair
    return pair


def second_eigenpair(grid: Grid, first: EigenPair | None = None, tol: float = 1e-10,
                     maxiter: int = 400) -> EigenPair:
    """Next eigenpair by inverse iteration deflated against ``phi_1``.

    Starts from ``x (1 - r^2)``, so on a disk this lands on one member of the
    degenerate ``m = 1`` pair.
    """
    first = dirichlet_eigenpair(grid) if first is None else first
    start = grid.x * np.maximum(1.0 - grid.s[:, None] ** 2, 0.0)
    start = start - integrate(start * first.phi, grid) * first.phi
    u, it = _inverse_iteration(grid, start, deflate=(first.phi,), tol=tol, maxiter=maxiter)
    if integrate(u * grid.x, grid) < 0:
        u = -u
    lam = rayleigh_quotient(u, grid)
    res = apply_operator(u, grid) + lam * u
    return EigenPair(lam, u, it, float(np.max(np.abs(res[:-1]))))


def barrier_psi(grid: Grid) -> np.ndarray:
    """Torsion function: ``Lap psi = -1``, ``psi = 0`` on the boundary."""
    if "psi" not in grid._cache:
        grid._cache["psi"] = solve_dirichlet(EllipticProblem(f=-1.0, g=0.0), grid)
    return grid._cache["psi"]


def c1(q0: np.ndarray, phi1: np.ndarray, grid: Grid) -> float:
    """First eigen-coefficient ``int q0 phi1``."""
    return integrate(q0 * phi1, grid)


def hopf_margins(grid: Grid, pair: EigenPair | None = None) -> dict:
    pair = dirichlet_eigenpair(grid) if pair is None else pair
    return {
        "phi1": float(np.min(-normal_derivative(pair.phi, grid))),
        "psi": float(np.min(-normal_derivative(barrier_psi(grid), grid))),
    }


def comparison_F(kappa1: float, kappa2: float, t: float, lam: float, phi1: np.ndarray,
                 psi: np.ndarray) -> np.ndarray:
    """``kappa1 exp(-3 lam t / 2) (phi1 - kappa2 psi)``."""
    if kappa1 <= 0 or kappa2 < 0:
        raise ValueError("need kappa1 > 0 and kappa2 >= 0")
    return kappa1 * np.exp(-1.5 * lam * t) * (phi1 - kappa2 * psi)


def kappa2_threshold(phi1: np.ndarray, psi: np.ndarray) -> float:
    """Largest ``kappa2`` keeping ``phi1 - kappa2 psi >= 0``: ``min phi1 / psi`` over interior nodes."""
    return float(np.min(phi1[:-1] / psi[:-1]))


def comparison_residual(kappa1, kappa2, t, lam, phi1, psi, grid, a=None, b=None):
    """``(d_t - a:D^2 - b.grad) F`` at time ``t`` (interior nodes; boundary set to 0)."""
    F = comparison_F(kappa1, kappa2, t, lam, phi1, psi)
    out = -1.5 * lam * F - apply_operator(F, grid, a, b)
    out[-1] = 0.0
    return out
