"""
Pucci extremal operators, their first half-eigenpairs and the subsolution
checks built on them.

``M-(u) = mu1 * (sum of positive Hessian eigenvalues) + mu2 * (sum of
negative ones) - gamma |grad u|`` is the pointwise infimum of ``a:D^2u + b.grad u``
over symmetric ``a`` with spectrum in ``[mu1, mu2]`` and ``|b| <= gamma``;
``M+`` is the supremum.  The nonlinear Dirichlet problems are solved by
Howard policy iteration, choosing at each node the minimising (or
maximising) coefficients, which are diagonal in the Hessian eigenframe.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .field_core import (
    EllipticProblem,
    Grid,
    SolverError,
    all_derivatives,
    apply_operator,
    normal_derivative,
    solve_dirichlet,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PucciParams:
    mu1: float
    mu2: float
    gamma: float = 0.0

    def __post_init__(self):
        if not (0 < self.mu1 <= self.mu2):
            raise ValueError(f"need 0 < mu1 <= mu2, got ({self.mu1}, {self.mu2})")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    def scaled(self, c: float) -> "PucciParams":
        return PucciParams(c * self.mu1, c * self.mu2, c * self.gamma)


@dataclass(frozen=True, eq=False)
class HalfEigenpair:
    """``lam`` and ``rho`` with ``max |rho| = 1``; ``rho`` has one sign inside."""

    lam: float
    rho: np.ndarray
    iterations: int = 0
    residual: float = np.nan
    policy_iterations: int = 0
    damped: bool = False


# ---------------------------------------------------------------------------
# Pointwise operators
# ---------------------------------------------------------------------------


def sym_eig2(H):
    """Closed-form eigen-decomposition of symmetric 2x2 fields.

    ``H`` has shape ``(2, 2, ...)``.  Returns ``(e_hi, e_lo, angle)`` where
    ``(cos angle, sin angle)`` spans the ``e_hi`` eigenspace.
    """
    H = np.asarray(H, dtype=float)
    p, r, s = H[0, 0], 0.5 * (H[0, 1] + H[1, 0]), H[1, 1]
    mean = 0.5 * (p + s)
    rad = np.hypot(0.5 * (p - s), r)
    return mean + rad, mean - rad, 0.5 * np.arctan2(2 * r, p - s)


def _extremal(H, params: PucciParams, grad, sign: int):
    e1, e2, _ = sym_eig2(H)
    lo, hi = (params.mu1, params.mu2) if sign < 0 else (params.mu2, params.mu1)
    val = sum(np.where(e > 0, lo * e, hi * e) for e in (e1, e2))
    if params.gamma > 0:
        if grad is None:
            raise ValueError("gamma > 0 needs the gradient")
        val = val + sign * params.gamma * np.hypot(grad[0], grad[1])
    return val


def pucci_minus(H, params: PucciParams, grad=None):
    """``M-``: inf over the class of ``a:H + b.grad``."""
    return _extremal(H, params, grad, -1)


def pucci_plus(H, params: PucciParams, grad=None):
    """``M+``: sup over the class of ``a:H + b.grad``."""
    return _extremal(H, params, grad, +1)


def pucci_apply(u: np.ndarray, grid: Grid, params: PucciParams, sign: int = -1) -> np.ndarray:
    grad, hess = all_derivatives(u, grid)
    return _extremal(hess, params, grad, sign)


def _policy(u: np.ndarray, grid: Grid, params: PucciParams, sign: int):
    """Optimal coefficients ``(a, b)`` at ``u`` (minimising for ``sign = -1``)."""
    grad, hess = all_derivatives(u, grid)
    e1, e2, ang = sym_eig2(hess)
    lo, hi = (params.mu1, params.mu2) if sign < 0 else (params.mu2, params.mu1)
    c1 = np.where(e1 > 0, lo, hi)
    c2 = np.where(e2 > 0, lo, hi)
    c, s = np.cos(ang), np.sin(ang)
    a = np.empty((2, 2) + u.shape)
    a[0, 0] = c1 * c * c + c2 * s * s
    a[1, 1] = c1 * s * s + c2 * c * c
    a[0, 1] = a[1, 0] = (c1 - c2) * c * s
    b = None
    if params.gamma > 0:
        norm = np.hypot(grad[0], grad[1])
        safe = np.where(norm > 0, norm, 1.0)
        b = sign * params.gamma * np.where(norm > 0, grad / safe, 0.0)
    return a, b, np.stack([c1, c2])


# ---------------------------------------------------------------------------
# Nonlinear Dirichlet problem
# ---------------------------------------------------------------------------


def policy_solve(f, grid: Grid, params: PucciParams, sign: int = -1, tol: float = 1e-9,
                 maxiter: int = 50, x0: np.ndarray | None = None, return_info: bool = False):
    """Solve ``-M(u) = f`` in the interior, ``u = 0`` on the boundary.

    ``sign = -1`` uses ``M-``, ``sign = +1`` uses ``M+``.  Iterates stop when
    successive iterates differ by less than ``tol`` (relative to ``max|u|``).
    A repeated policy with no progress switches to damped updates.
    """
    f = np.broadcast_to(np.asarray(f, dtype=float), grid.shape)
    linear = params.mu1 == params.mu2 and params.gamma == 0
    if linear:
        u = solve_dirichlet(EllipticProblem(f=-f / params.mu1, g=0.0), grid)
        info = {"iterations": 0, "damped": False}
        return (u, info) if return_info else u
    if not np.any(f[:-1]):
        u = np.zeros(grid.shape)
        return (u, {"iterations": 0, "damped": False}) if return_info else u

    if x0 is None:
        mid = 0.5 * (params.mu1 + params.mu2)
        u = solve_dirichlet(EllipticProblem(f=-f / mid, g=0.0), grid)
    else:
        u = np.array(x0, dtype=float)
    seen = set()
    last = None
    damped = False
    omega = 1.0
    for it in range(1, maxiter + 1):
        a, b, choice = _policy(u, grid, params, sign)
        key = hash(choice.tobytes())
        # a policy recurring after a different one means the iteration cycles
        if key != last and key in seen and not damped:
            damped = True
            omega = 0.5
            log.info("policy cycle detected; switching to damped updates")
        seen.add(key)
        last = key
        u_new = solve_dirichlet(EllipticProblem(f=-f, g=0.0, a=a, b=b), grid, tol=1e-11, x0=u)
        if damped:
            u_new = u + omega * (u_new - u)
        diff = float(np.max(np.abs(u_new - u))) / max(float(np.max(np.abs(u_new))), 1e-300)
        u = u_new
        if diff < tol:
            break
    else:
        raise SolverError("policy iteration did not converge", diff, maxiter)
    info = {"iterations": it, "damped": damped}
    return (u, info) if return_info else u


def nonlinear_residual(u, f, grid: Grid, params: PucciParams, sign: int = -1) -> float:
    """``max |-M(u) - f|`` over interior nodes."""
    r = -pucci_apply(u, grid, params, sign) - f
    return float(np.max(np.abs(np.asarray(r)[:-1])))


# ---------------------------------------------------------------------------
# Half-eigenpairs
# ---------------------------------------------------------------------------


def _bulk_ratio(rho, grid, params, sign):
    Mr = -pucci_apply(rho, grid, params, sign)
    bulk = rho[:-1] > 0.1 * np.max(rho)
    return float(np.median(Mr[:-1][bulk] / rho[:-1][bulk]))


def _half_eigen(params: PucciParams, grid: Grid, sign: int, tol: float, maxiter: int):
    key = ("half", params, sign, tol)
    if key in grid._cache:
        return grid._cache[key]
    from .eigen import dirichlet_eigenpair

    rho = dirichlet_eigenpair(grid).phi.copy()
    rho /= np.max(rho)
    lam_old = np.inf
    lam = _bulk_ratio(rho, grid, params, sign)
    total_policy = 0
    damped = False
    for it in range(1, maxiter + 1):
        w, info = policy_solve(lam * rho, grid, params, sign, x0=rho, return_info=True)
        total_policy += info["iterations"]
        damped |= info["damped"]
        rho_new = w / np.max(w)
        lam = _bulk_ratio(rho_new, grid, params, sign)
        du = float(np.max(np.abs(rho_new - rho)))
        rho = rho_new
        if abs(lam - lam_old) <= tol * abs(lam) and du < 1e-7:
            break
        lam_old = lam
    else:
        res = float(np.max(np.abs((-pucci_apply(rho, grid, params, sign) - lam * rho)[:-1])))
        raise SolverError("half-eigenvalue iteration did not converge", res, maxiter)
    res = float(np.max(np.abs((-pucci_apply(rho, grid, params, sign) - lam * rho)[:-1])))
    pair = HalfEigenpair(lam, rho, it, res, total_policy, damped)
    grid._cache[key] = pair
    return pair


def half_eigenpair(params: PucciParams, grid: Grid, tol: float = 1e-8,
                   maxiter: int = 200) -> HalfEigenpair:
    """Positive half-eigenpair: ``-M-(rho) = lam rho``, ``rho > 0``, ``max rho = 1``."""
    return _half_eigen(params, grid, -1, tol, maxiter)


def negative_half_eigenpair(params: PucciParams, grid: Grid, tol: float = 1e-8,
                            maxiter: int = 200) -> HalfEigenpair:
    """Negative half-eigenpair ``(lam2, rho2 < 0)`` of ``M-`` via the dual ``M+``."""
    w = _half_eigen(params, grid, +1, tol, maxiter)
    return HalfEigenpair(w.lam, -w.rho, w.iterations, w.residual, w.policy_iterations, w.damped)


def hopf_margin(rho: np.ndarray, grid: Grid) -> float:
    """``min (-d_N |rho|)`` on the boundary."""
    return float(np.min(-normal_derivative(np.abs(rho), grid)))


# ---------------------------------------------------------------------------
# Subsolution and chi audits
# ---------------------------------------------------------------------------


def coefficient_class_violation(a, b, params: PucciParams) -> float:
    """How far ``(a, b)`` lies outside the class (``<= 0`` means inside)."""
    e1, e2, _ = sym_eig2(a)
    out = max(float(np.max(e1 - params.mu2)), float(np.max(params.mu1 - e2)))
    if b is not None:
        out = max(out, float(np.max(np.hypot(b[0], b[1]) - params.gamma)))
    return out


def subsolution_residual(lam1: float, rho1: np.ndarray, a, b, grid: Grid,
                         params: PucciParams | None = None, slack: float = 1e-12) -> float:
    """``max (-lam1 rho1 - (a:D^2 + b.grad) rho1)`` over interior nodes.

    With ``params`` given, ``(a, b)`` must lie in the class; otherwise a
    ``ValueError`` is raised.
    """
    if params is not None:
        viol = coefficient_class_violation(a, b, params)
        if viol > slack:
            raise ValueError(f"coefficients outside the class by {viol:.3e}")
    if a is not None and np.ndim(a) == 2:
        a = np.asarray(a, dtype=float)[:, :, None, None] * np.ones((1, 1) + grid.shape)
    r = -lam1 * rho1 - apply_operator(rho1, grid, a, b)
    return float(np.max(r[:-1]))


@dataclass
class ChiAudit:
    c: float
    floor: float
    passed: bool
    t_min: float

    @property
    def margin(self) -> float:
        return self.c - self.floor


def chi_bound_audit(t, chi_values, lam1: float, c1: float, eta: float, floor: float = 0.1,
                    window=None) -> ChiAudit:
    """Smallest ``c`` with ``chi(t) >= c c1 exp(-(lam1 + eta/4) t)`` over the window."""
    t = np.asarray(t, dtype=float)
    chi_values = np.asarray(chi_values, dtype=float)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, chi_values = t[sel], chi_values[sel]
    if len(t) == 0:
        raise ValueError("empty window")
    if c1 <= 0:
        raise ValueError("c1 must be positive")
    ratio = chi_values / (c1 * np.exp(-(lam1 + 0.25 * eta) * t))
    i = int(np.argmin(ratio))
    c = float(ratio[i])
    return ChiAudit(c, floor, bool(c >= floor and math.isfinite(c)), float(t[i]))
