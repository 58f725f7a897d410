"""
Reference-domain geometry, polar grids, differentiation, quadrature and a
variable-coefficient Dirichlet solver.

Fields are plain ``numpy`` arrays of shape ``(n_r, n_theta)`` (ring index
first, ring ``n_r - 1`` lies on the boundary), boundary fields are arrays of
shape ``(n_theta,)``.  Stacked fields with extra leading axes are accepted by
every differentiation routine.

The radial nodes are staggered, ``s_j = (j + 1/2) h`` with the last node at
``s = 1``, so no node sits on the pole.  Radial stencils that reach across
the pole use ghost values ``u(-s, theta) = u(s, theta + pi)``; in Fourier
space this couples angular mode ``m`` to radial parity ``(-1)**m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres


class SolverError(RuntimeError):
    """Raised when a linear solve does not reach the requested residual."""

    def __init__(self, message, residual=np.nan, iterations=0):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def _smooth_transition(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > 0) & (x < 1)
    a = np.exp(-1.0 / np.where(inside, x, 0.5))
    b = np.exp(-1.0 / np.where(inside, 1.0 - x, 0.5))
    out[inside] = (a / (a + b))[inside]
    out[x >= 1] = 1.0
    return out


def _smooth_transition_derivs(x):
    """Value, first and second derivative of ``_smooth_transition``."""
    eps = 1e-4
    f0 = _smooth_transition(x)
    fp = _smooth_transition(x + eps)
    fm = _smooth_transition(x - eps)
    fpp = _smooth_transition(x + 2 * eps)
    fmm = _smooth_transition(x - 2 * eps)
    d1 = (8 * (fp - fm) - (fpp - fmm)) / (12 * eps)
    d2 = (-(fpp + fmm) + 16 * (fp + fm) - 30 * f0) / (12 * eps**2)
    return f0, d1, d2


def smoothstep5(t):
    """Quintic smoothstep ``6t^5 - 15t^4 + 10t^3`` clipped to [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


@dataclass(frozen=True, eq=False)
class ReferenceDomain:
    """Star-shaped reference domain ``{r < R(theta)}``.

    Parameters
    ----------
    radius : float or callable
        Either a constant radius (a disk) or a callable ``R(theta)``
        returning positive values.
    rho : float
        Cutoff ``mu`` vanishes on ``|x| <= rho``.
    sigma : float
        Cutoff ``mu`` equals one within distance ``sigma`` of the boundary.
    """

    radius: float | Callable[[np.ndarray], np.ndarray] = 1.0
    rho: float = 0.3
    sigma: float = 0.2

    @property
    def is_disk(self) -> bool:
        return not callable(self.radius)

    def radius_samples(self, theta: np.ndarray) -> np.ndarray:
        if self.is_disk:
            return np.full_like(theta, float(self.radius))
        return np.asarray(self.radius(theta), dtype=float) * np.ones_like(theta)


def unit_disk() -> ReferenceDomain:
    return ReferenceDomain(1.0)


# ---------------------------------------------------------------------------
# Finite-difference weights
# ---------------------------------------------------------------------------


def fd_weights(x0: float, nodes: np.ndarray, m: int) -> np.ndarray:
    """Weights of the ``m``-th derivative at ``x0`` on ``nodes`` (Fornberg)."""
    n = len(nodes)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def _radial_matrices(n_r: int, h: float, m: int, width: int = 5, edge_width: int = 6):
    """Direct and ghost matrices of the ``m``-th radial derivative.

    Node index ``k >= 0`` is ring ``k``; index ``-1 - g`` is the ghost image of
    ring ``g`` across the pole.
    """
    s = (np.arange(n_r) + 0.5) * h
    direct = np.zeros((n_r, n_r))
    ghost = np.zeros((n_r, n_r))
    half = width // 2
    for j in range(n_r):
        if j + half <= n_r - 1:
            idx = np.arange(j - half, j + half + 1)
        else:
            idx = np.arange(n_r - edge_width, n_r)
        pos = (idx + 0.5) * h
        w = fd_weights(s[j], pos, m)
        for k, wk in zip(idx, w):
            if k >= 0:
                direct[j, k] += wk
            else:
                ghost[j, -1 - k] += wk
    return direct, ghost


def _radial_quadrature(n_r: int, h: float, npts: int = 6) -> np.ndarray:
    """Weights ``W`` with ``sum W_j F(s_j) ~ int_0^1 F ds`` for odd ``F``.

    Composite interpolatory rule of degree ``npts - 1``; cells next to the
    pole use the odd extension ``F(-s) = -F(s)``.
    """
    w = np.zeros(n_r)
    idx_all = np.arange(-3, n_r)

    def add_cell(lo, hi, idx):
        pos = (idx + 0.5) * h
        # local scaled coordinates keep the Vandermonde well conditioned
        xs = (pos - lo) / h
        a, b = 0.0, (hi - lo) / h
        V = np.vander(xs, npts, increasing=True).T
        moments = np.array([(b ** (k + 1) - a ** (k + 1)) / (k + 1) for k in range(npts)])
        wt = np.linalg.solve(V, moments) * h
        for k, wk in zip(idx, wt):
            if k >= 0:
                w[k] += wk
            else:
                w[-1 - k] -= wk

    add_cell(0.0, 0.5 * h, np.arange(-3, 3))
    for j in range(n_r - 1):
        lo = (j + 0.5) * h
        start = min(max(j - 2, idx_all[0]), n_r - npts)
        add_cell(lo, lo + h, np.arange(start, start + npts))
    return w


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Grid:
    """Polar grid over a star-shaped :class:`ReferenceDomain`.

    Nodes are ``X(s_j, theta_i)`` with ``X = P(s, theta) e_r(theta)``.  For a
    disk ``P = R s``; otherwise the radius is blended in away from the pole
    so the chart is the identity (up to scale) near the origin.
    """

    domain: ReferenceDomain
    n_r: int
    n_theta: int
    h: float
    s: np.ndarray
    theta: np.ndarray
    x: np.ndarray
    y: np.ndarray
    G: np.ndarray  # (2, 2, n_r, n_theta): G[a, i] = d xi^a / d x^i
    Gam: np.ndarray  # (2, 2, 2, n_r, n_theta): d^2 xi^a / dx^i dx^j
    weights: np.ndarray
    boundary_speed: np.ndarray  # |gamma'(theta)|
    normal: np.ndarray  # (2, n_theta)
    curvature: np.ndarray
    radius0: float
    D1: np.ndarray
    D1g: np.ndarray
    D2: np.ndarray
    D2g: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def shape(self):
        return (self.n_r, self.n_theta)

    @property
    def dtheta(self):
        return 2 * np.pi / self.n_theta

    @property
    def boundary_weights(self):
        return self.boundary_speed * self.dtheta

    @property
    def wavenumbers(self):
        return np.arange(self.n_theta // 2 + 1)

    def zeros(self):
        return np.zeros(self.shape)

    def field_from(self, func):
        """Evaluate ``func(x, y)`` on the nodes."""
        return np.asarray(func(self.x, self.y), dtype=float) * np.ones(self.shape)

    @property
    def r(self):
        return np.hypot(self.x, self.y)

    @property
    def phi(self):
        return np.arctan2(self.y, self.x)

    def cutoff(self) -> np.ndarray:
        """Smooth cutoff ``mu``: 0 on ``|x| <= rho``, 1 near the boundary."""
        if "mu" not in self._cache:
            dom = self.domain
            r = self.r
            d = distance_to_boundary(self)
            a = r - dom.rho
            b = d - dom.sigma
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(a <= 0, 0.0, np.where(b <= 0, 1.0, a / (a + b)))
            self._cache["mu"] = smoothstep5(t)
        return self._cache["mu"]


def distance_to_boundary(grid: Grid) -> np.ndarray:
    if grid.domain.is_disk:
        return grid.radius0 * (1.0 - grid.s)[:, None] * np.ones(grid.shape)
    up = 8 * grid.n_theta
    th = 2 * np.pi * np.arange(up) / up
    R = grid.domain.radius_samples(th)
    bx, by = R * np.cos(th), R * np.sin(th)
    pts = np.stack([grid.x.ravel(), grid.y.ravel()], axis=1)
    d = np.empty(len(pts))
    for k in range(0, len(pts), 512):
        chunk = pts[k:k + 512]
        d[k:k + 512] = np.min(np.hypot(chunk[:, :1] - bx, chunk[:, 1:] - by), axis=1)
    return d.reshape(grid.shape)


def _spectral_theta_derivative(f, order, axis=-1):
    n = f.shape[axis]
    k = np.arange(n // 2 + 1)
    mult = (1j * k) ** order
    if order % 2 == 1:
        mult[-1] = 0.0
    F = np.fft.rfft(f, axis=axis)
    shape = [1] * F.ndim
    shape[axis] = -1
    return np.fft.irfft(F * mult.reshape(shape), n=n, axis=axis)


def build_grid(domain: ReferenceDomain, n_r: int, n_theta: int) -> Grid:
    """Build the polar grid and its quadrature, metric and stencils."""
    if n_r < 8 or n_theta < 8:
        raise ValueError("n_r and n_theta must be at least 8")
    if n_theta % 2:
        raise ValueError(f"n_theta must be even, got {n_theta}")
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    R = domain.radius_samples(theta)
    if not np.all(np.isfinite(R)) or np.any(R <= 0):
        raise ValueError("domain radius must be finite and positive (star-shaped)")
    R1 = _spectral_theta_derivative(R, 1)
    R2 = _spectral_theta_derivative(R, 2)
    R0 = float(R.min()) if not domain.is_disk else float(domain.radius)
    if domain.rho + domain.sigma >= R.min():
        raise ValueError("cutoff plateaus overlap: need rho + sigma < inradius")

    h = 1.0 / (n_r - 0.5)
    s = (np.arange(n_r) + 0.5) * h
    S = s[:, None] * np.ones((1, n_theta))
    Rb, R1b, R2b = (np.broadcast_to(v, (n_r, n_theta)) for v in (R, R1, R2))
    if domain.is_disk:
        beta, dbeta, ddbeta = 0.0, 0.0, 0.0
    else:
        beta, dbeta, ddbeta = _smooth_transition_derivs((S - 0.3) / 0.5)
        dbeta, ddbeta = dbeta / 0.5, ddbeta / 0.25
    dR = Rb - R0
    P = S * (R0 + dR * beta)
    Ps = R0 + dR * (beta + S * dbeta)
    Pss = dR * (2 * dbeta + S * ddbeta)
    Pt = S * R1b * beta
    Pst = R1b * (beta + S * dbeta)
    Ptt = S * R2b * beta
    if np.any(Ps <= 0):
        raise ValueError("domain chart is not a diffeomorphism (non-star-shaped)")

    c, sn = np.cos(theta), np.sin(theta)
    er = np.array([c, sn])[:, None, :]
    et = np.array([-sn, c])[:, None, :]
    X = P * er
    Xs = Ps * er
    Xt = Pt * er + P * et
    Xss = Pss * er
    Xst = Pst * er + Ps * et
    Xtt = Ptt * er + 2 * Pt * et - P * er

    jac = np.stack([Xs, Xt], axis=1)  # jac[k, a]
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    G = np.empty_like(jac)
    G[0, 0] = jac[1, 1] / det
    G[0, 1] = -jac[0, 1] / det
    G[1, 0] = -jac[1, 0] / det
    G[1, 1] = jac[0, 0] / det
    X2 = np.empty((2, 2, 2, n_r, n_theta))  # X2[k, c, d]
    X2[:, 0, 0], X2[:, 0, 1], X2[:, 1, 0], X2[:, 1, 1] = Xss, Xst, Xst, Xtt
    Gam = -np.einsum("ak...,kcd...,ci...,dj...->aij...", G, X2, G, G)

    wr = _radial_quadrature(n_r, h)
    # det = P P_s is odd in s near the pole, which the radial rule assumes
    weights = wr[:, None] * (P * Ps / S) * S * (2 * np.pi / n_theta)

    speed = np.hypot(R, R1)
    normal = np.array([R * c + R1 * sn, R * sn - R1 * c]) / speed
    curvature = (R**2 + 2 * R1**2 - R * R2) / speed**3

    D1, D1g = _radial_matrices(n_r, h, 1)
    D2, D2g = _radial_matrices(n_r, h, 2)
    return Grid(
        domain=domain, n_r=n_r, n_theta=n_theta, h=h, s=s, theta=theta,
        x=X[0], y=X[1], G=G, Gam=Gam, weights=weights, boundary_speed=speed,
        normal=normal, curvature=curvature, radius0=R0,
        D1=D1, D1g=D1g, D2=D2, D2g=D2g,
    )


# ---------------------------------------------------------------------------
# Spectral helpers for boundary fields
# ---------------------------------------------------------------------------


def to_modes(phi: np.ndarray) -> np.ndarray:
    """Angular Fourier coefficients (``rfft`` normalised by ``n``)."""
    return np.fft.rfft(phi, axis=-1) / phi.shape[-1]


def from_modes(coef: np.ndarray, n_theta: int) -> np.ndarray:
    return np.fft.irfft(coef * n_theta, n=n_theta, axis=-1)


def tangential_derivative(phi: np.ndarray, order: int, grid: Grid | None = None) -> np.ndarray:
    """Arclength derivative of a boundary field, computed spectrally.

    Without a grid (or on a disk) this is the Fourier multiplier
    ``(i k / R)**order``; on general domains ``(1/|gamma'|) d/dtheta`` is
    applied ``order`` times.  Modes above ``n_theta/2`` alias.
    """
    if order < 0 or order > 6:
        raise ValueError("tangential derivative order must be in 0..6")
    if grid is None or grid.domain.is_disk:
        scale = 1.0 if grid is None else grid.radius0
        return _spectral_theta_derivative(phi, order) / scale**order
    out = phi
    for _ in range(order):
        out = _spectral_theta_derivative(out, 1) / grid.boundary_speed
    return out


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------


def _rotate(u, n_theta):
    return np.roll(u, n_theta // 2, axis=-1)


def polar_derivatives(u: np.ndarray, grid: Grid):
    """Return ``u_s, u_t, u_ss, u_st, u_tt`` in chart coordinates."""
    ur = _rotate(u, grid.n_theta)
    u_s = grid.D1 @ u + grid.D1g @ ur
    u_ss = grid.D2 @ u + grid.D2g @ ur
    u_t = _spectral_theta_derivative(u, 1)
    u_tt = _spectral_theta_derivative(u, 2)
    u_st = grid.D1 @ u_t + grid.D1g @ _rotate(u_t, grid.n_theta)
    return u_s, u_t, u_ss, u_st, u_tt


def gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Cartesian gradient, shape ``(2,) + u.shape``."""
    ur = _rotate(u, grid.n_theta)
    u_s = grid.D1 @ u + grid.D1g @ ur
    u_t = _spectral_theta_derivative(u, 1)
    G = grid.G
    return np.stack([G[0, 0] * u_s + G[1, 0] * u_t, G[0, 1] * u_s + G[1, 1] * u_t])


def all_derivatives(u: np.ndarray, grid: Grid):
    """Cartesian ``(grad, hess)`` with shapes ``(2,)+s`` and ``(2, 2)+s``."""
    u_s, u_t, u_ss, u_st, u_tt = polar_derivatives(u, grid)
    G, Gam = grid.G, grid.Gam
    grad = np.stack([G[0, 0] * u_s + G[1, 0] * u_t, G[0, 1] * u_s + G[1, 1] * u_t])
    hess = np.empty((2, 2) + u.shape)
    for i in range(2):
        for j in range(i, 2):
            val = (
                G[0, i] * G[0, j] * u_ss
                + (G[0, i] * G[1, j] + G[1, i] * G[0, j]) * u_st
                + G[1, i] * G[1, j] * u_tt
                + Gam[0, i, j] * u_s
                + Gam[1, i, j] * u_t
            )
            hess[i, j] = val
            hess[j, i] = val
    return grad, hess


def differentiate(u: np.ndarray, grid: Grid, alpha: tuple[int, int]) -> np.ndarray:
    """Cartesian partial derivative ``d_x^alpha[0] d_y^alpha[1] u``.

    Total order is limited to 2 per call; compose calls for more.
    """
    a1, a2 = alpha
    if a1 < 0 or a2 < 0 or a1 + a2 > 2:
        raise ValueError(f"derivative order {alpha} not supported in one call (max 2)")
    if a1 + a2 == 0:
        return np.array(u, dtype=float, copy=True)
    if a1 + a2 == 1:
        return gradient(u, grid)[0 if a1 else 1]
    _, hess = all_derivatives(u, grid)
    if a1 == 2:
        return hess[0, 0]
    if a2 == 2:
        return hess[1, 1]
    return hess[0, 1]


def normal_derivative(u: np.ndarray, grid: Grid) -> np.ndarray:
    """``N . grad u`` at the boundary nodes (one-sided radial stencil)."""
    gx, gy = boundary_gradient(u, grid)
    return grid.normal[0] * gx + grid.normal[1] * gy


def boundary_gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Cartesian gradient restricted to the boundary ring, shape ``(2, n_theta)``."""
    u_s = np.tensordot(grid.D1[-1], u, axes=([0], [u.ndim - 2]))
    u_t = _spectral_theta_derivative(u[..., -1, :], 1)
    G = grid.G[:, :, -1]
    return np.stack([G[0, 0] * u_s + G[1, 0] * u_t, G[0, 1] * u_s + G[1, 1] * u_t])


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


def integrate(u: np.ndarray, grid: Grid) -> float:
    return float(np.sum(grid.weights * u))


def integrate_boundary(phi: np.ndarray, grid: Grid) -> float:
    return float(np.sum(grid.boundary_weights * phi))


def l2_norm(u: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(max(integrate(u * u, grid), 0.0)))


# ---------------------------------------------------------------------------
# Elliptic Dirichlet problems
# ---------------------------------------------------------------------------


@dataclass
class EllipticProblem:
    """``a_kj d_kj u + b_k d_k u + c u = f`` in the domain, ``u = g`` on the boundary.

    ``a`` may be ``None`` (identity) or an array of shape ``(2, 2, n_r, n_theta)``;
    ``b`` may be ``None`` or shape ``(2, n_r, n_theta)``; ``c`` a scalar or a field.
    """

    f: np.ndarray | float = 0.0
    g: np.ndarray | float = 0.0
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    c: np.ndarray | float = 0.0

    def validate(self, grid: Grid) -> None:
        if self.a is not None:
            a = np.asarray(self.a)
            if a.shape != (2, 2) + grid.shape:
                raise ValueError(f"coefficient a has shape {a.shape}")
            if not np.allclose(a[0, 1], a[1, 0]):
                raise ValueError("coefficient a must be symmetric")
            tr = a[0, 0] + a[1, 1]
            dt = a[0, 0] * a[1, 1] - a[0, 1] ** 2
            lam_min = 0.5 * tr - np.sqrt(np.maximum(0.25 * tr**2 - dt, 0.0))
            if np.min(lam_min[:-1]) <= 0:
                raise ValueError("coefficient a is not uniformly elliptic")
        if np.any(np.asarray(self.c) > 0):
            raise ValueError("zeroth-order coefficient c must be <= 0")


def apply_operator(u: np.ndarray, grid: Grid, a=None, b=None, c=0.0) -> np.ndarray:
    """Evaluate ``a:D^2 u + b.grad u + c u`` on every node."""
    grad, hess = all_derivatives(u, grid)
    if a is None:
        out = hess[0, 0] + hess[1, 1]
    else:
        out = a[0, 0] * hess[0, 0] + 2 * a[0, 1] * hess[0, 1] + a[1, 1] * hess[1, 1]
    if b is not None:
        out = out + b[0] * grad[0] + b[1] * grad[1]
    return out + c * u


def _mode_inverses(grid: Grid, alpha: float, c0: float) -> np.ndarray:
    """Inverses of ``c0 + alpha * Laplacian`` per angular mode on the disk of radius ``R0``."""
    key = ("modeinv", round(alpha, 15), round(c0, 15))
    cache = grid._cache
    if key in cache:
        return cache[key]
    n = grid.n_r - 1
    s = grid.s[:n]
    out = np.empty((grid.n_theta // 2 + 1, n, n))
    for m in range(grid.n_theta // 2 + 1):
        par = (-1.0) ** m
        D1 = (grid.D1 + par * grid.D1g)[:n, :n]
        D2 = (grid.D2 + par * grid.D2g)[:n, :n]
        L = (D2 + D1 / s[:, None] - np.diag(m**2 / s**2)) / grid.radius0**2
        out[m] = np.linalg.inv(c0 * np.eye(n) + alpha * L)
    if len(cache) > 64:
        cache.clear()
    cache[key] = out
    return out


def _mode_boundary_coupling(grid: Grid) -> np.ndarray:
    """Column of the per-mode Laplacian that multiplies the boundary ring."""
    n = grid.n_r - 1
    s = grid.s[:n]
    return (grid.D2[:n, -1] + grid.D1[:n, -1] / s) / grid.radius0**2


def _apply_mode_solve(rhs: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """Apply per-mode inverses to an interior field of shape ``(n_r-1, n_theta)``."""
    n_theta = rhs.shape[-1]
    F = np.fft.rfft(rhs, axis=-1)  # (n, modes)
    sol = np.einsum("mij,jm->im", inv, F)
    return np.fft.irfft(sol, n=n_theta, axis=-1)


def _is_laplace_like(p: EllipticProblem, grid: Grid) -> bool:
    return (
        grid.domain.is_disk
        and p.a is None
        and p.b is None
        and np.ndim(p.c) == 0
    )


def solve_dirichlet(p: EllipticProblem, grid: Grid, tol: float = 1e-10,
                    maxiter: int = 400, x0: np.ndarray | None = None,
                    return_info: bool = False):
    """Solve the Dirichlet problem ``p`` on ``grid``.

    Constant-coefficient Laplace-type problems on a disk are solved directly
    mode by mode.  Everything else uses right-preconditioned GMRES with that
    direct solve as the preconditioner.  Convergence is judged on the
    preconditioned residual ``max|M r| / max|u|`` (an estimate of the
    relative distance to the discrete solution); the raw residual
    ``max|Lu - f| / max(1, max|f|)`` is reported as ``info["residual"]``.
    It has a round-off floor near the pole, where the angular part of the
    operator scales like ``m**2 / s**2``.
    """
    p.validate(grid)
    n = grid.n_r - 1
    f = np.broadcast_to(np.asarray(p.f, dtype=float), grid.shape)
    g = np.broadcast_to(np.asarray(p.g, dtype=float), (grid.n_theta,))
    scale = max(1.0, float(np.max(np.abs(f[:n]))))

    ubase = np.zeros(grid.shape)
    ubase[-1] = g

    if p.a is None:
        alpha = 1.0
    else:
        alpha = float(np.mean(0.5 * (p.a[0, 0] + p.a[1, 1])[:n]))
    c0 = float(np.mean(np.asarray(p.c) * np.ones(grid.shape)))
    inv = _mode_inverses(grid, alpha, c0)

    if _is_laplace_like(p, grid):
        rhs = f[:n] - _mode_boundary_coupling(grid)[:, None] * g[None, :]
        u = ubase.copy()
        u[:n] = _apply_mode_solve(rhs, inv)
        res = apply_operator(u, grid, None, None, p.c)[:n] - f[:n]
        resid = float(np.max(np.abs(res))) / scale
        info = {"residual": resid, "error_estimate": 0.0, "iterations": 0, "method": "direct"}
        return (u, info) if return_info else u

    c_field = p.c
    r0 = (f[:n] - apply_operator(ubase, grid, p.a, p.b, c_field)[:n]).ravel()

    def op(vec):
        w = np.zeros(grid.shape)
        w[:n] = vec.reshape(n, grid.n_theta)
        return apply_operator(w, grid, p.a, p.b, c_field)[:n].ravel()

    def prec(vec):
        return _apply_mode_solve(vec.reshape(n, grid.n_theta), inv).ravel()

    N = n * grid.n_theta
    AM = LinearOperator((N, N), matvec=lambda y: op(prec(y)), dtype=float)
    u_int = np.zeros(N) if x0 is None else np.asarray(x0, dtype=float)[:n].ravel().copy()
    total_iters = 0
    err = np.inf
    for _ in range(12):
        r = r0 - op(u_int)
        corr = prec(r)
        err = float(np.max(np.abs(corr))) / max(float(np.max(np.abs(u_int))), 1e-300)
        if err <= tol or not np.any(r):
            err = 0.0 if not np.any(r) else err
            break
        counter = [0]

        def cb(_):
            counter[0] += 1

        y, _ = gmres(AM, r, rtol=1e-5, atol=0.0, restart=80, maxiter=maxiter,
                     callback=cb, callback_type="pr_norm")
        total_iters += counter[0]
        u_int = u_int + prec(y)
    else:
        r = r0 - op(u_int)
        err = float(np.max(np.abs(prec(r)))) / max(float(np.max(np.abs(u_int))), 1e-300)
    resid = float(np.max(np.abs(r0 - op(u_int)))) / scale
    if not np.isfinite(err) or err > tol:
        raise SolverError("elliptic solve did not converge", resid, total_iters)
    u = ubase.copy()
    u[:n] = u_int.reshape(n, grid.n_theta)
    info = {"residual": resid, "error_estimate": err, "iterations": total_iters,
            "method": "gmres"}
    return (u, info) if return_info else u


def laplace_extension(g: np.ndarray, grid: Grid) -> np.ndarray:
    """Harmonic extension of boundary data ``g`` (leading axes allowed)."""
    g = np.asarray(g, dtype=float)
    if g.ndim == 1:
        return solve_dirichlet(EllipticProblem(f=0.0, g=g), grid)
    return np.stack([laplace_extension(gi, grid) for gi in g])
