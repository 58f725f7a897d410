"""
Diagnostics along a trajectory: boundary weight chi, truncated energies, the
S-norm proxy, the conserved heat-plus-area, decay fits, K and T_K, the
Rayleigh-Taylor margin and the sign of d_N q_t on the boundary.

Truncation used for the weighted energies and the S norm
---------------------------------------------------------
* interior derivatives: total order <= 4, with one time derivative counting
  as two spatial ones; orders that the full functionals take to 5/6 are
  shifted down by two (v up to 3 in the energy and 4 in the dissipation,
  the q-combination up to 4 and 3 respectively);
* boundary terms keep their full order (h up to 6, h_t up to 5), using the
  height function representation ``int (-d_N q) Lambda^2 |d_s^beta d_t^b h|^2``;
* at most one time derivative; ``q_t`` comes from the equation
  ``q_t = a:D^2 q + b.grad q`` rather than from stored history.

Each component is reported as the raw sum of squares; the energy is one half
of their total, the dissipation their plain total.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .field_core import (
    Grid,
    _spectral_theta_derivative,
    all_derivatives,
    gradient,
    integrate,
    integrate_boundary,
    l2_norm,
    normal_derivative,
    tangential_derivative,
    to_modes,
)
from .gauge import GaugeState, jacobian_matrix

CSV_COLUMNS = ("t", "chi", "E_disc", "D_disc", "S_proxy", "conserved", "max_q",
               "h_l2", "h_h45", "beta_hat", "qt_sign")


@dataclass
class DiagnosticsRow:
    t: float
    chi: float
    E_disc: float
    D_disc: float
    S_proxy: float
    conserved: float
    max_q: float
    h_l2: float
    h_h45: float
    beta_hat: float
    qt_sign: float

    def as_tuple(self):
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


@dataclass(frozen=True)
class NormSpec:
    boundary_order: int = 6
    interior_order: int = 4
    time_derivatives: int = 1

    def __post_init__(self):
        if not (0 <= self.boundary_order <= 6 and 0 <= self.interior_order <= 4
                and 0 <= self.time_derivatives <= 1):
            raise ValueError("norm orders exceed the implemented truncation")


# ---------------------------------------------------------------------------
# Derivative towers
# ---------------------------------------------------------------------------


def cartesian_derivatives(u: np.ndarray, grid: Grid, order: int) -> dict:
    """All Cartesian derivatives ``{(i, j): d_x^i d_y^j u}`` with ``i + j <= order``."""
    if order > 4:
        raise ValueError("at most fourth derivatives are available")
    out = {(0, 0): u}
    if order == 0:
        return out
    grad, hess = all_derivatives(u, grid)
    out[(1, 0)], out[(0, 1)] = grad
    if order == 1:
        return out
    out[(2, 0)], out[(1, 1)], out[(0, 2)] = hess[0, 0], hess[0, 1], hess[1, 1]
    if order == 2:
        return out
    if order == 3:
        gxx = gradient(hess[0, 0], grid)
        gyy = gradient(hess[1, 1], grid)
        out[(3, 0)], out[(2, 1)] = gxx
        out[(1, 2)], out[(0, 3)] = gyy
        return out
    gxx, hxx = all_derivatives(hess[0, 0], grid)
    gyy, hyy = all_derivatives(hess[1, 1], grid)
    out[(3, 0)], out[(2, 1)] = gxx
    out[(1, 2)], out[(0, 3)] = gyy
    out[(4, 0)], out[(3, 1)], out[(2, 2)] = hxx[0, 0], hxx[0, 1], hxx[1, 1]
    out[(1, 3)], out[(0, 4)] = hyy[0, 1], hyy[1, 1]
    return out


def sobolev_sq(u: np.ndarray, grid: Grid, order: int, weight=None) -> float:
    """``sum_{|alpha| <= order} int w |d^alpha u|^2`` over distinct multi-indices."""
    derivs = cartesian_derivatives(u, grid, order)
    w = 1.0 if weight is None else weight
    return float(sum(integrate(w * d * d, grid) for d in derivs.values()))


def boundary_sobolev_sq(phi: np.ndarray, grid: Grid, s: float) -> float:
    """``|phi|_{H^s(Gamma)}^2`` as a Fourier-multiplier sum over the boundary angle.

    Uses ``(1 + (k / R)^2)^s`` with ``R`` the mean boundary radius, so on a
    circle of radius ``R`` this is the usual Bessel-potential norm.
    """
    coef = to_modes(phi)
    k = np.arange(coef.shape[-1])
    R = float(np.mean(grid.boundary_speed)) if grid is not None else 1.0
    mult = (1.0 + (k / R) ** 2) ** s
    amp = np.abs(coef) ** 2
    amp[1:] *= 2.0
    n = phi.shape[-1]
    if n % 2 == 0:
        amp[-1] /= 2.0
    return float(2 * np.pi * R * np.sum(mult * amp))


# ---------------------------------------------------------------------------
# Scalar diagnostics
# ---------------------------------------------------------------------------


def chi(q: np.ndarray, grid: Grid) -> float:
    """``inf_Gamma (-d_N q)``."""
    return float(np.min(-normal_derivative(q, grid)))


def conserved_heat(q: np.ndarray, J: np.ndarray, grid: Grid) -> float:
    """``int q J dx + int J dx``: heat plus the area of the moving domain."""
    return integrate(q * J, grid) + integrate(J, grid)


def decay_fit(t, y, window=None) -> float:
    """Least-squares slope of ``log y`` against ``t`` (optionally over ``window=(t0, t1)``)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
    if len(t) < 2:
        raise ValueError("need at least two samples to fit a decay rate")
    if np.any(y <= 0):
        raise ValueError("decay_fit needs strictly positive samples")
    slope, _ = np.polyfit(t, np.log(y), 1)
    return float(slope)


def k_ratio(q0: np.ndarray, grid: Grid) -> float:
    """``K = ||q0||_{H^4} / ||q0||_{L^2}``."""
    l2 = l2_norm(q0, grid)
    if l2 == 0:
        raise ValueError("K is undefined for q0 = 0")
    return math.sqrt(sobolev_sq(q0, grid, 4)) / l2


def t_k(K: float, c_bar: float = 1.0) -> float:
    return c_bar * math.log(K)


def rayleigh_taylor_check(q0: np.ndarray, phi1: np.ndarray, c_star: float, grid: Grid):
    """Return ``(ok, margin)`` with ``margin = min(-d_N q0) - c_star * int q0 phi1``."""
    margin = chi(q0, grid) - c_star * integrate(q0 * phi1, grid)
    return margin >= 0, float(margin)


def qt_boundary_sign(q_prev: np.ndarray, q_cur: np.ndarray, dt: float, grid: Grid) -> float:
    """``inf_Gamma d_N (q_cur - q_prev) / dt``."""
    if dt <= 0:
        raise ValueError("need two distinct snapshots")
    return float(np.min(normal_derivative((q_cur - q_prev) / dt, grid)))


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------


def time_derivative_q(q: np.ndarray, gauge: GaugeState, grid: Grid) -> np.ndarray:
    """``q_t`` from the non-divergence equation with the gauge's coefficients."""
    from .sim import coefficients

    a, b = coefficients(gauge, grid)
    grad, hess = all_derivatives(q, grid)
    qt = np.einsum("kj...,kj...->...", a, hess) + np.einsum("k...,k...->...", b, grad)
    qt[-1] = 0.0
    return qt


def velocity_rate(q: np.ndarray, q_t: np.ndarray, gauge: GaugeState, grid: Grid) -> np.ndarray:
    """``v_t = -A_t^T grad q - A^T grad q_t`` with ``A_t = -A (D Psi_t) A``."""
    A = gauge.A
    dpsi_t = jacobian_matrix(gauge.psi_t, grid)
    A_t = -np.einsum("ki...,ij...,jl...->kl...", A, dpsi_t, A)
    return (-np.einsum("ki...,k...->i...", A_t, gradient(q, grid))
            - np.einsum("ki...,k...->i...", A, gradient(q_t, grid)))


def _theta_tower(u: np.ndarray, order: int):
    return [u] + [_spectral_theta_derivative(u, j) for j in range(1, order + 1)]


def energy_components(q: np.ndarray, v: np.ndarray, gauge: GaugeState, grid: Grid,
                      spec: NormSpec = NormSpec()):
    """Return ``(E_components, D_components, reduced)``.

    ``reduced`` is True when the gauge carries no ``h_t`` so time-derivative
    terms had to be dropped.
    """
    mu = grid.cutoff()
    om = 1.0 - mu
    io = spec.interior_order
    reduced = gauge.h_t is None or spec.time_derivatives == 0
    psi = gauge.psi
    psi_t = gauge.psi_t

    qt = time_derivative_q(q, gauge, grid)
    vt = velocity_rate(q, qt, gauge, grid) if not reduced else None

    E, D = {}, {}
    # tangential (mu-weighted) part
    v_tan = [_theta_tower(vi, io) for vi in v]
    q_tan = _theta_tower(q, io)
    psi_tan = [_theta_tower(p, io) for p in psi]

    def vt_sum(order, tower):
        return sum(integrate(mu * (tower[0][j] ** 2 + tower[1][j] ** 2), grid)
                   for j in range(order + 1))

    def qcomb(j, qtw, ptw, vv):
        return qtw[j] + ptw[0][j] * vv[0] + ptw[1][j] * vv[1]

    E["v_tan"] = vt_sum(io - 1, v_tan)
    D["v_tan"] = vt_sum(io, v_tan)
    E["q_tan"] = sum(integrate(mu * qcomb(j, q_tan, psi_tan, v) ** 2, grid)
                     for j in range(io + 1))
    qt_tan = _theta_tower(qt, io - 1)
    psit_tan = [_theta_tower(p, io - 1) for p in psi_t]
    D["q_tan"] = sum(integrate(mu * qcomb(j, qt_tan, psit_tan, v) ** 2, grid)
                     for j in range(io))
    if not reduced:
        vt_tan = [_theta_tower(vi, io - 2) for vi in vt]
        E["v_tan"] += vt_sum(io - 3, vt_tan) if io >= 3 else 0.0
        D["v_tan"] += vt_sum(io - 2, vt_tan)
        E["q_tan"] += sum(integrate(mu * qcomb(j, qt_tan, psit_tan, v) ** 2, grid)
                          for j in range(io - 1))

    # Cartesian ((1 - mu)-weighted) part
    v_c = [cartesian_derivatives(vi, grid, io) for vi in v]
    q_c = cartesian_derivatives(q, grid, io)
    psi_c = [cartesian_derivatives(p, grid, io) for p in psi]

    def vc_sum(order, dv):
        return sum(integrate(om * (dv[0][al] ** 2 + dv[1][al] ** 2), grid)
                   for al in dv[0] if sum(al) <= order)

    def qc(al, dq, dp, vv):
        return dq[al] + dp[0][al] * vv[0] + dp[1][al] * vv[1]

    E["v_cart"] = vc_sum(io - 1, v_c)
    D["v_cart"] = vc_sum(io, v_c)
    E["q_cart"] = sum(integrate(om * qc(al, q_c, psi_c, v) ** 2, grid) for al in q_c)
    qt_c = cartesian_derivatives(qt, grid, io - 1)
    psit_c = [cartesian_derivatives(p, grid, io - 1) for p in psi_t]
    D["q_cart"] = sum(integrate(om * qc(al, qt_c, psit_c, v) ** 2, grid) for al in qt_c)
    if not reduced:
        vt_c = [cartesian_derivatives(vi, grid, io - 2) for vi in vt]
        E["v_cart"] += vc_sum(io - 3, vt_c) if io >= 3 else 0.0
        D["v_cart"] += vc_sum(io - 2, vt_c)
        E["q_cart"] += sum(integrate(om * qc(al, qt_c, psit_c, v) ** 2, grid)
                           for al in qt_c if sum(al) <= io - 2)

    E["boundary"], D["boundary"] = boundary_energy(q, gauge, grid, spec)
    return E, D, reduced


def boundary_energy(q: np.ndarray, gauge: GaugeState, grid: Grid, spec: NormSpec = NormSpec()):
    """Raw boundary sums ``sum int (-d_N q) Lambda^2 |d_s^beta d_t^b h|^2 dS``.

    Energy: ``beta + 2b <= 6``; dissipation: the same for ``h_t`` with
    ``beta + 2b <= 5``.  Only ``b <= 1`` derivatives of ``h`` are used.
    """
    weight = -normal_derivative(q, grid) * gauge.Lam**2
    top = spec.boundary_order

    def tower_sum(phi, order):
        return sum(integrate_boundary(weight * tangential_derivative(phi, j, grid) ** 2, grid)
                   for j in range(order + 1))

    e = tower_sum(gauge.h, top)
    d = 0.0
    if gauge.h_t is not None and spec.time_derivatives >= 1:
        e += tower_sum(gauge.h_t, top - 2)
        d = tower_sum(gauge.h_t, top - 1)
    return e, d


def energy_disc(q, v, gauge, grid, spec: NormSpec = NormSpec()) -> float:
    E, _, _ = energy_components(q, v, gauge, grid, spec)
    return 0.5 * sum(E.values())


def dissipation_disc(q, v, gauge, grid, spec: NormSpec = NormSpec()) -> float:
    _, D, _ = energy_components(q, v, gauge, grid, spec)
    return sum(D.values())


# ---------------------------------------------------------------------------
# S-norm proxy
# ---------------------------------------------------------------------------


class SNormAccumulator:
    """Running suprema and time integrals that make up the S-norm proxy.

    Terms: ``sup ||q||_4^2``, ``sup ||q_t||_2^2``, ``int ||q||_4^2``,
    ``int ||q_t||_2^2``, ``sup e^{beta s} ||q||_4^2``,
    ``int sum_{j+2b<=4} ||d_theta^j d_t^b v||^2``,
    ``chi(t) (sup |h|_6^2 + sup |h_t|_4^2 + int |h_t|_5^2)`` and
    ``(sup |h|_{4.5})^4``.
    """

    def __init__(self, beta: float):
        self.beta = beta
        self.sup = {"q4": 0.0, "qt2": 0.0, "exp": 0.0, "h6": 0.0, "ht4": 0.0, "h45": 0.0}
        self.integral = {"q4": 0.0, "qt2": 0.0, "v": 0.0, "ht5": 0.0}
        self._last = None
        self.chi = 0.0

    def add(self, t, q4, qt2, v_tan, h6, ht4, ht5, h45, chi_t):
        cur = {"q4": q4, "qt2": qt2, "v": v_tan, "ht5": ht5}
        if self._last is not None:
            t0, prev = self._last
            for key in self.integral:
                self.integral[key] += 0.5 * (t - t0) * (prev[key] + cur[key])
        self._last = (t, cur)
        s = self.sup
        s["q4"] = max(s["q4"], q4)
        s["qt2"] = max(s["qt2"], qt2)
        s["exp"] = max(s["exp"], math.exp(self.beta * t) * q4)
        s["h6"] = max(s["h6"], h6)
        s["ht4"] = max(s["ht4"], ht4)
        s["h45"] = max(s["h45"], h45)
        self.chi = chi_t

    def components(self) -> dict:
        s, i = self.sup, self.integral
        return {
            "sup_q4": s["q4"], "sup_qt2": s["qt2"], "int_q4": i["q4"], "int_qt2": i["qt2"],
            "sup_exp_q4": s["exp"], "int_v": i["v"],
            "chi_h": self.chi * (s["h6"] + s["ht4"] + i["ht5"]),
            "h45_4": s["h45"] ** 2,
        }

    def value(self) -> float:
        return float(sum(self.components().values()))


def state_norms(q, v, gauge, grid, spec: NormSpec = NormSpec()):
    """Per-state ingredients of the S proxy (all squared norms)."""
    qt = time_derivative_q(q, gauge, grid)
    io = spec.interior_order
    q4 = sobolev_sq(q, grid, io)
    qt2 = sobolev_sq(qt, grid, io - 2)
    v_tan = sum(integrate(_spectral_theta_derivative(vi, j) ** 2, grid)
                for vi in v for j in range(io + 1)) if io else 0.0
    if gauge.h_t is not None:
        vt = velocity_rate(q, qt, gauge, grid)
        v_tan += sum(integrate(_spectral_theta_derivative(vi, j) ** 2, grid)
                     for vi in vt for j in range(io - 1))
        ht4 = boundary_sobolev_sq(gauge.h_t, grid, io)
        ht5 = boundary_sobolev_sq(gauge.h_t, grid, spec.boundary_order - 1)
    else:
        ht4 = ht5 = 0.0
    h6 = boundary_sobolev_sq(gauge.h, grid, spec.boundary_order)
    h45 = boundary_sobolev_sq(gauge.h, grid, 4.5)
    return {"q4": q4, "qt2": qt2, "v_tan": v_tan, "h6": h6, "ht4": ht4, "ht5": ht5,
            "h45": h45, "qt": qt}


def norm_S_proxy(states, grid, beta: float, t: float | None = None,
                 spec: NormSpec = NormSpec()) -> float:
    """S proxy of a stored trajectory (list of states) up to time ``t``."""
    acc = SNormAccumulator(beta)
    for st in states:
        if t is not None and st.t > t + 1e-12:
            break
        n = state_norms(st.q, st.v, st.gauge, grid, spec)
        acc.add(st.t, n["q4"], n["qt2"], n["v_tan"], n["h6"], n["ht4"], n["ht5"],
                n["h45"], chi(st.q, grid))
    return acc.value()


# ---------------------------------------------------------------------------
# Per-step tracker used by the simulation loop
# ---------------------------------------------------------------------------


class DiagnosticsTracker:
    """Computes one :class:`DiagnosticsRow` per step and keeps running terms."""

    def __init__(self, cfg, grid: Grid, state, lam: float | None = None,
                 spec: NormSpec = NormSpec(), window: float = 0.25):
        from .eigen import dirichlet_eigenpair

        self.grid = grid
        self.spec = spec
        self.window = window
        if lam is None:
            lam = dirichlet_eigenpair(grid).lam
        self.lam = lam
        self.eta = cfg.eta_fraction * lam
        self.beta = 2 * lam - self.eta
        self.acc = SNormAccumulator(self.beta)
        self.E_sup = 0.0
        self.D_int = 0.0
        self._last_D = None
        self.history_t = []
        self.history_q4 = []
        self.extra = []
        self.initial_row = self._row(state, None, None)

    def _row(self, state, prev, dt):
        grid = self.grid
        norms = state_norms(state.q, state.v, state.gauge, grid, self.spec)
        chi_t = chi(state.q, grid)
        self.acc.add(state.t, norms["q4"], norms["qt2"], norms["v_tan"], norms["h6"],
                     norms["ht4"], norms["ht5"], norms["h45"], chi_t)
        E, D, reduced = energy_components(state.q, state.v, state.gauge, grid, self.spec)
        e_disc = 0.5 * sum(E.values())
        d_disc = sum(D.values())
        if self._last_D is not None:
            t0, d0 = self._last_D
            self.D_int += 0.5 * (state.t - t0) * (d0 + d_disc)
        self._last_D = (state.t, d_disc)
        self.E_sup = max(self.E_sup, e_disc)

        self.history_t.append(state.t)
        self.history_q4.append(norms["q4"])
        ts = np.array(self.history_t)
        sel = ts >= state.t - self.window
        ys = np.array(self.history_q4)[sel]
        beta_hat = 0.0
        if sel.sum() >= 2 and np.all(ys > 0):
            beta_hat = -decay_fit(ts[sel], ys)
        if prev is None:
            qt_sign = float(np.min(normal_derivative(norms["qt"], grid)))
        else:
            qt_sign = qt_boundary_sign(prev.q, state.q, dt, grid)
        row = DiagnosticsRow(
            t=state.t, chi=chi_t, E_disc=e_disc, D_disc=d_disc, S_proxy=self.acc.value(),
            conserved=conserved_heat(state.q, state.gauge.J, grid),
            max_q=float(np.max(state.q)),
            h_l2=math.sqrt(integrate_boundary(state.h**2, grid)),
            h_h45=math.sqrt(norms["h45"]),
            beta_hat=beta_hat, qt_sign=qt_sign,
        )
        self.extra.append({"t": state.t, "min_q": float(np.min(state.q[:-1])),
                           "q_l2": l2_norm(state.q, grid), "q_h4_sq": norms["q4"],
                           "E_total": self.E_sup + self.D_int, "reduced": reduced,
                           "E_parts": E, "D_parts": D})
        return row

    def update(self, prev, state):
        return self._row(state, prev, state.t - prev.t)

    def summary(self) -> dict:
        return {"lambda": self.lam, "eta": self.eta, "beta": self.beta,
                "S_components": self.acc.components()}


def rows_to_dicts(rows):
    return [asdict(r) for r in rows]
