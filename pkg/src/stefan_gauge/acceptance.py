"""
Acceptance criteria A1-A9, shared by the ``verify`` subcommand and the test
suite.  Each check returns a :class:`Verdict` carrying its numeric margin
(positive margin means pass).

The coupled-run criteria share one trajectory.  Boundary settling (A6) and
the sign of ``d_N q_t`` after ``T_K`` (A9) need the run to extend past the
default end time, so the shared run goes to ``2 * t_end`` and the default-run
criteria read its prefix, which is bitwise the default run.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import decay_fit, k_ratio, t_k
from .eigen import c1 as c1_of
from .eigen import dirichlet_eigenpair
from .field_core import (
    EllipticProblem,
    build_grid,
    integrate,
    integrate_boundary,
    l2_norm,
    solve_dirichlet,
    unit_disk,
)
from .pucci import (
    PucciParams,
    chi_bound_audit,
    half_eigenpair,
    pucci_minus,
    pucci_plus,
    subsolution_residual,
    sym_eig2,
)
from .sim import SimConfig, coefficients, initial_state, make_initial_data, run, step

BESSEL_J01_SQ = 5.7831859629


@dataclass
class Verdict:
    name: str
    passed: bool
    margin: float
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {status} (margin {self.margin:+.3e})"


def _verdict(name, checks, detail, t0):
    """Combine ``[(margin, ...)]``: passes iff every margin is positive."""
    margin = min(checks)
    return Verdict(name, bool(margin > 0), float(margin), detail, time.time() - t0)


def bessel_j01(tol: float = 1e-15) -> float:
    """First zero of ``J_0`` by bisection on its power series."""

    def j0(x):
        term, total, k = 1.0, 1.0, 0
        while abs(term) > 1e-18:
            k += 1
            term *= -(x * x / 4.0) / (k * k)
            total += term
        return total

    lo, hi = 2.0, 3.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if j0(lo) * j0(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Stand-alone criteria
# ---------------------------------------------------------------------------


def check_a1(n: int = 64, dt: float = 1e-4, t_end: float = 0.1) -> Verdict:
    t0 = time.time()
    grid = build_grid(unit_disk(), n, n)
    pair = dirichlet_eigenpair(grid)
    cfg = SimConfig(dt=dt, t_end=t_end, n_r=n, n_theta=n, freeze_gauge=True)
    state = initial_state(cfg, grid, q0=pair.phi.copy())
    for _ in range(cfg.n_steps):
        state = step(state, cfg, grid)
    exact = math.exp(-pair.lam * state.t) * pair.phi
    err = l2_norm(state.q - exact, grid) / l2_norm(exact, grid)
    return _verdict("A1 fixed-gauge heat", [1e-3 - err], {"rel_l2_error": err}, t0)


def check_a2(n: int = 64, fine: int = 128) -> Verdict:
    t0 = time.time()
    exact = bessel_j01() ** 2
    grid = build_grid(unit_disk(), n, n)
    err = abs(dirichlet_eigenpair(grid).lam - exact)
    # fourth-order convergence: scale the tolerance for grids coarser than 64
    tol = 1e-4 * max(1.0, (64.0 / n) ** 4)
    checks = [tol - err]
    detail = {"lambda_error": err, "tolerance": tol}
    if fine:
        gf = build_grid(unit_disk(), fine, fine)
        err_f = abs(dirichlet_eigenpair(gf).lam - exact)
        checks.append(1e-6 - err_f)
        detail["lambda_error_fine"] = err_f
    return _verdict("A2 eigenvalue", checks, detail, t0)


def check_a8(n: int = 64, trials: int = 1000, seed: int = 0) -> Verdict:
    t0 = time.time()
    grid = build_grid(unit_disk(), n, n)
    lam = dirichlet_eigenpair(grid).lam
    l11 = half_eigenpair(PucciParams(1, 1), grid).lam
    l22 = half_eigenpair(PucciParams(2, 2), grid).lam
    l112 = half_eigenpair(PucciParams(1, 1.2), grid).lam
    nested = [(1.0, 1.0), (0.95, 1.05), (0.9, 1.1), (0.85, 1.2), (0.8, 1.3)]
    lams = [half_eigenpair(PucciParams(*p), grid).lam for p in nested]
    mono = min(b - a for a, b in zip(lams, lams[1:]))

    rng = np.random.default_rng(seed)
    params = PucciParams(0.7, 1.9)
    H1 = rng.normal(size=(2, 2, trials))
    H1 = 0.5 * (H1 + H1.transpose(1, 0, 2))
    H2 = rng.normal(size=(2, 2, trials))
    H2 = 0.5 * (H2 + H2.transpose(1, 0, 2))
    duality = float(np.max(np.abs(pucci_minus(-H1, params) + pucci_plus(H1, params))))
    superadd = float(np.min(pucci_minus(H1 + H2, params)
                            - pucci_minus(H1, params) - pucci_minus(H2, params)))
    checks = [
        1e-4 - abs(l11 - lam),
        1e-6 - abs(l22 / (2 * l11) - 1),
        mono + 1e-6,
        l112 - (1.2 * lam - 1e-4),
        1e-12 - duality,
        superadd + 1e-12,
    ]
    detail = {"lambda1_11": l11, "lambda1_22": l22, "lambda1_1_1.2": l112, "nested": lams,
              "duality_error": duality, "superadditivity_min": superadd}
    return _verdict("A8 Pucci suite", checks, detail, t0)


def maximum_principle_trials(n: int = 24, trials: int = 100, seed: int = 1) -> float:
    """Random ``f <= 0``, ``g >= 0`` with random elliptic ``a`` and drift ``b``.

    Returns ``min u`` over all trials (should be ``>= 0`` up to round-off).
    """
    rng = np.random.default_rng(seed)
    grid = build_grid(unit_disk(), n, n)
    worst = np.inf
    for _ in range(trials):
        f = -rng.random(grid.shape) * rng.random()
        g = rng.random(grid.n_theta) * rng.random()
        # smooth random coefficients with spectrum in [0.5, 1.5]
        ang = rng.random() * np.pi + 0.3 * grid.x
        e1 = 1.0 + 0.4 * rng.uniform(-1, 1) * np.cos(grid.y)
        e2 = 1.0 + 0.4 * rng.uniform(-1, 1) * np.sin(grid.x)
        c, s = np.cos(ang), np.sin(ang)
        a = np.array([[e1 * c * c + e2 * s * s, (e1 - e2) * c * s],
                      [(e1 - e2) * c * s, e1 * s * s + e2 * c * c]])
        b = 0.5 * rng.uniform(-1, 1, size=(2, 1, 1)) * np.ones((2,) + grid.shape)
        u = solve_dirichlet(EllipticProblem(f=f, g=g, a=a, b=b), grid)
        worst = min(worst, float(np.min(u)))
    return worst


# ---------------------------------------------------------------------------
# Coupled-run criteria
# ---------------------------------------------------------------------------


@dataclass
class CoupledRun:
    """Long coupled run plus the quantities every coupled criterion needs."""

    cfg: SimConfig
    result: object
    t_default: float
    lam: float
    phi1: np.ndarray
    q0: np.ndarray
    seconds: float

    @property
    def grid(self):
        return self.result.grid

    def rows(self, t_max=None):
        rows = self.result.rows
        if t_max is None:
            return rows
        return [r for r in rows if r.t <= t_max + 1e-9]

    def extra(self, t_max=None):
        ex = self.result.tracker.extra[1:]
        if t_max is None:
            return ex
        return [e for e in ex if e["t"] <= t_max + 1e-9]

    def snapshot(self, t):
        for s in self.result.snapshots:
            if abs(s.t - t) < 1e-9:
                return s
        raise KeyError(f"no snapshot at t = {t}")


def coupled_run(cfg: SimConfig | None = None, extend: float = 2.0) -> CoupledRun:
    cfg = SimConfig() if cfg is None else cfg
    t0 = time.time()
    long_cfg = replace(cfg, t_end=extend * cfg.t_end)
    grid = cfg.grid()
    res = run(long_cfg, grid)
    pair = dirichlet_eigenpair(grid)
    q0, _ = make_initial_data(cfg, grid)
    return CoupledRun(cfg, res, cfg.t_end, pair.lam, pair.phi, q0, time.time() - t0)


def check_a3(cr: CoupledRun) -> Verdict:
    t0 = time.time()
    grid = cr.grid
    ref = integrate(cr.q0, grid) + math.pi * cr.cfg.radius**2
    rows = cr.rows(cr.t_default)
    drift = max(abs(r.conserved - ref) for r in rows) / ref
    final = cr.snapshot(rows[-1].t)
    area = integrate(final.gauge.J, grid)
    area_err = abs(area - ref)
    return _verdict("A3 conservation", [1e-3 - drift, 1e-3 - area_err],
                    {"max_rel_drift": drift, "final_area": area, "area_error": area_err}, t0)


def check_a4(cr: CoupledRun) -> Verdict:
    t0 = time.time()
    ex = cr.extra(cr.t_default)
    t = np.array([e["t"] for e in ex])
    T = cr.t_default
    win = (T / 2, T)
    s_l2 = decay_fit(t, [e["q_l2"] for e in ex], win)
    s_h4 = decay_fit(t, [e["q_h4_sq"] for e in ex], win)
    lam = cr.lam
    checks = [0.10 * lam - abs(s_l2 + lam), 0.15 * 2 * lam - abs(s_h4 + 2 * lam)]
    return _verdict("A4 temperature decay", checks,
                    {"slope_l2": s_l2, "slope_h4_sq": s_h4, "lambda": lam}, t0)


def class_for_run(cr: CoupledRun, t_max=None):
    """``sqrt(eps) = max ||a - Id||_2`` over the snapshots and the matching class.

    ``K = max(2, max|b| / sqrt(eps))`` so that the drift bound covers ``b``.
    """
    t_max = cr.t_default if t_max is None else t_max
    sq_eps, bmax = 0.0, 0.0
    for s in cr.result.snapshots:
        if s.t > t_max + 1e-9:
            continue
        a, b = coefficients(s.gauge, cr.grid)
        e1, e2, _ = sym_eig2(a)
        sq_eps = max(sq_eps, float(np.max(np.maximum(np.abs(e1 - 1), np.abs(e2 - 1)))))
        bmax = max(bmax, float(np.max(np.hypot(b[0], b[1]))))
    K = max(2.0, bmax / sq_eps) if sq_eps > 0 else 2.0
    width = K * sq_eps
    return PucciParams(1 - width, 1 + width, width), {"sqrt_eps": sq_eps, "K": K, "max_b": bmax}


def check_a5(cr: CoupledRun, floor: float = 0.1) -> Verdict:
    t0 = time.time()
    params, cls = class_for_run(cr)
    lam1 = half_eigenpair(params, cr.grid).lam
    rows = cr.rows(cr.t_default)
    t = [0.0] + [r.t for r in rows]
    chis = [cr.result.initial_row.chi] + [r.chi for r in rows]
    c1 = c1_of(cr.q0, cr.phi1, cr.grid)
    eta = cr.cfg.eta_fraction * cr.lam
    audit = chi_bound_audit(t, chis, lam1, c1, eta, floor)
    min_chi = min(chis[1:])
    return _verdict("A5 chi lower bound", [audit.margin, min_chi],
                    {"c": audit.c, "lambda1": lam1, "c1": c1, "min_chi": min_chi, **cls}, t0)


def check_a6(cr: CoupledRun) -> Verdict:
    t0 = time.time()
    grid = cr.grid
    h0 = cr.result.snapshots[0].h
    S0 = cr.result.initial_row.S_proxy
    T = cr.result.snapshots[-1].t
    dev = max(math.sqrt(integrate_boundary((s.h - h0) ** 2, grid)) for s in cr.result.snapshots)
    hT = cr.snapshot(T).h
    hH = cr.snapshot(T / 2).h
    settle = math.sqrt(integrate_boundary((hT - hH) ** 2, grid))
    bound = 1e-3 * math.sqrt(integrate_boundary(hT**2, grid)) + 1e-6
    return _verdict("A6 boundary settling", [5 * math.sqrt(S0) - dev, bound - settle],
                    {"max_dev": dev, "S0": S0, "settle": settle, "settle_bound": bound,
                     "T_end": T}, t0)


def check_a7(cr: CoupledRun, trials: int = 100) -> Verdict:
    t0 = time.time()
    ex = cr.extra(cr.t_default)
    rows = cr.rows(cr.t_default)
    min_q = min(e["min_q"] for e in ex)
    maxq = [cr.result.initial_row.max_q] + [r.max_q for r in rows]
    incr = float(np.max(np.diff(maxq)))
    mp = maximum_principle_trials(trials=trials)
    return _verdict("A7 maximum principles", [min_q + 1e-9, 1e-9 - incr, mp + 1e-9],
                    {"min_q": min_q, "max_q_increase": incr, "elliptic_min": mp}, t0)


def check_a9(cr: CoupledRun) -> Verdict:
    t0 = time.time()
    grid = cr.grid
    K = k_ratio(cr.q0, grid)
    TK = t_k(K, cr.cfg.c_bar)
    late = [r.qt_sign for r in cr.rows() if r.t >= TK - 1e-12]
    sign_margin = min(late) if late else -np.inf
    params, cls = class_for_run(cr)
    pair = half_eigenpair(params, grid)
    T = cr.t_default
    res = []
    for t in (0.25 * T, 0.5 * T, 0.75 * T):
        a, b = coefficients(cr.snapshot(t).gauge, grid)
        res.append(subsolution_residual(pair.lam, pair.rho, a, b, grid, params))
    checks = [sign_margin, 1e-4 - max(res)]
    return _verdict("A9 sign-definiteness", checks,
                    {"K": K, "T_K": TK, "n_late_rows": len(late), "min_qt_sign": sign_margin,
                     "subsolution_residuals": res, "class": [params.mu1, params.mu2, params.gamma],
                     **cls}, t0)


def run_all(n: int = 64, cfg: SimConfig | None = None, trials: int = 100, report=print):
    """Run A1-A9, reporting one line per criterion; returns the verdicts."""
    cfg = SimConfig(n_r=n, n_theta=n) if cfg is None else cfg
    verdicts = []

    def emit(v):
        verdicts.append(v)
        if report is not None:
            report(v.line())

    emit(check_a1(n))
    emit(check_a2(n, fine=128 if n == 64 else 0))
    cr = coupled_run(cfg)
    for chk in (check_a3, check_a4, check_a5, check_a6):
        emit(chk(cr))
    emit(check_a7(cr, trials))
    emit(check_a8(n))
    emit(check_a9(cr))
    return verdicts

