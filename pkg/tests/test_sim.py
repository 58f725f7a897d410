import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import A_DEFAULT, B_DEFAULT, CONSERVED_0, INT_Q0
from stefan_gauge.diagnostics import chi, conserved_heat
from stefan_gauge.eigen import dirichlet_eigenpair
from stefan_gauge.field_core import build_grid, integrate, integrate_boundary, l2_norm, unit_disk
from stefan_gauge.gauge import gauge_from_height, identity_gauge
from stefan_gauge.sim import (
    SimConfig,
    boundary_step,
    coefficients,
    compatibility_b,
    heat_step,
    initial_state,
    make_initial_data,
    run,
    step,
    velocity,
)

SMALL = SimConfig(n_r=32, n_theta=32, dt=2e-3)


@pytest.fixture(scope="module")
def small_grid():
    return SMALL.grid()


# --- configuration and initial data ----------------------------------------


def test_compatibility_coefficient():
    assert compatibility_b(A_DEFAULT) == pytest.approx(B_DEFAULT, abs=1e-15)


@pytest.mark.parametrize("field, value", [
    ("dt", 0.0), ("a", 1.0), ("a", 0.0), ("delta", -0.1), ("n_theta", 31), ("t_end", -1.0),
])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        SimConfig(**{field: value})


def test_initial_data_default(disk64):
    q0, h0 = make_initial_data(SimConfig(), disk64)
    assert not np.any(h0)
    assert np.all(q0[-1] == 0)
    assert np.min(q0[:-1]) > 0
    assert integrate(q0, disk64) == pytest.approx(INT_Q0, abs=1e-6)
    assert chi(q0, disk64) == pytest.approx(2 * A_DEFAULT, abs=1e-6)


@given(st.floats(0.01, 0.95))
def test_radial_data_compatible(a):
    # q_NN + kappa q_N - q_N^2 = 0 on the unit circle, from the closed form
    b = compatibility_b(a)
    q_n = -2 * a
    q_nn = -2 * a + 8 * b
    assert q_nn + q_n - q_n**2 == pytest.approx(0.0, abs=1e-14)


@given(st.floats(0.01, 0.95))
def test_radial_data_symmetric(a):
    g = build_grid(unit_disk(), 16, 16)
    q0, _ = make_initial_data(SimConfig(a=a, delta=0.0, n_r=16, n_theta=16), g)
    assert np.max(np.ptp(q0, axis=1)) < 1e-15


def test_nonpositive_initial_data_rejected(disk32):
    with pytest.raises(ValueError, match="not positive"):
        make_initial_data(SimConfig(a=0.01, delta=5.0, k=1), disk32)


# --- pointwise operators -----------------------------------------------------


def test_identity_coefficients(disk32):
    a, b = coefficients(identity_gauge(disk32), disk32)
    assert np.max(np.abs(a[0, 0] - 1)) < 1e-10
    assert np.max(np.abs(a[0, 1])) < 1e-10
    assert np.max(np.abs(b)) < 1e-10


@pytest.mark.parametrize("c, c_t", [(0.1, 0.0), (0.1, 0.5), (-0.05, -2.0)])
def test_dilation_coefficients(disk32, c, c_t):
    # p(t, y) on the disk of radius 1 + c(t), q(t, x) = p(t, (1 + c) x):
    # q_t = p_t + c_t x.grad p and grad_x = (1 + c) grad_y, so
    # q_t - Lap_x q / (1 + c)^2 - (c_t / (1 + c)) x.grad_x q = p_t - Lap_y p
    n = disk32.n_theta
    g = gauge_from_height(np.full(n, c), disk32, h_t=np.full(n, c_t))
    a, b = coefficients(g, disk32)
    assert np.max(np.abs(a[0, 0] - 1 / (1 + c) ** 2)) < 1e-8
    assert np.max(np.abs(a[1, 1] - 1 / (1 + c) ** 2)) < 1e-8
    assert np.max(np.abs(a[0, 1])) < 1e-8
    assert np.max(np.abs(b[0] - c_t * disk32.x / (1 + c))) < 1e-7
    assert np.max(np.abs(b[1] - c_t * disk32.y / (1 + c))) < 1e-7


def test_coefficients_symmetric(disk32):
    g = gauge_from_height(0.04 * np.cos(3 * disk32.theta), disk32)
    a, _ = coefficients(g, disk32)
    assert np.array_equal(a[0, 1], a[1, 0])


def test_velocity_of_paraboloid(disk64):
    g = identity_gauge(disk64)
    v = velocity(1 - disk64.r**2, g.A, disk64)
    assert np.max(np.abs(v[0] - 2 * disk64.x)) < 1e-8
    assert np.max(np.abs(v[1] - 2 * disk64.y)) < 1e-8
    assert np.max(np.abs(velocity(np.full(disk64.shape, 3.0), g.A, disk64))) < 1e-10


def test_velocity_dilation(disk32):
    c = 0.1
    g = gauge_from_height(np.full(disk32.n_theta, c), disk32)
    q = 1 - disk32.r**2
    v = velocity(q, g.A, disk32)
    assert np.max(np.abs(v[0] - 2 * disk32.x / (1 + c))) < 1e-8


def test_heat_step_eigenmode(disk64):
    pair = dirichlet_eigenpair(disk64)
    dt = 1e-3
    q = heat_step(pair.phi, None, None, dt, disk64)
    exact = pair.phi / (1 + dt * pair.lam)
    assert np.max(np.abs(q - exact)) / np.max(np.abs(exact)) < 1e-6


def test_heat_step_zero_dt(disk32):
    q = 1 - disk32.r**2
    assert np.array_equal(heat_step(q, None, None, 0.0, disk32), q)


@given(st.integers(0, 2**31 - 1), st.floats(1e-4, 0.1))
def test_heat_step_maximum_principle(seed, dt):
    g = build_grid(unit_disk(), 16, 16)
    rng = np.random.default_rng(seed)
    q = np.abs(rng.normal(size=g.shape)) * (1 - g.s**2)[:, None]
    q[-1] = 0
    h = 0.03 * np.cos(2 * g.theta + rng.uniform(0, 6))
    a, b = coefficients(gauge_from_height(h, g), g)
    q_new = heat_step(q, a, b, dt, g)
    assert np.max(q_new) <= np.max(q) + 1e-9
    assert np.all(q_new[-1] == 0)


def test_boundary_step_examples(disk64):
    g = identity_gauge(disk64)
    h = 0.01 * np.cos(disk64.theta)
    dt = 1e-3
    h_new, _, _, _ = boundary_step(h, np.zeros((2,) + disk64.shape), g.A, dt, disk64)
    assert np.array_equal(h_new, h)
    v = velocity(1 - disk64.r**2, g.A, disk64)
    h_new, h_t, rate, removed = boundary_step(h, v, g.A, dt, disk64)
    assert np.max(np.abs(h_new - (h + 2 * dt))) < 1e-10
    assert removed < 1e-10


def test_extrapolated_rate(disk32):
    g = identity_gauge(disk32)
    v = velocity(1 - disk32.r**2, g.A, disk32)
    prev = np.full(disk32.n_theta, 1.0)
    _, h_t, rate, _ = boundary_step(np.zeros(disk32.n_theta), v, g.A, 1e-3, disk32,
                                    prev_rate=prev)
    assert np.allclose(rate, 2.0) and np.allclose(h_t, 3.0)


# --- stepping ----------------------------------------------------------------


def test_radial_symmetry_preserved(small_grid):
    cfg = replace(SMALL, delta=0.0, t_end=0.2)
    res = run(cfg, small_grid, diagnostics=False)
    last = res.snapshots[-1]
    assert last.step == 100
    assert np.max(np.ptp(last.q, axis=1)) < 1e-8
    assert np.ptp(last.h) < 1e-8


@pytest.mark.parametrize("h0", [np.zeros(32), 0.03 * np.cos(3 * 2 * np.pi * np.arange(32) / 32)])
def test_zero_temperature_fixed_point(small_grid, h0):
    cfg = replace(SMALL, t_end=0.02)
    state = initial_state(cfg, small_grid, np.zeros(small_grid.shape), h0)
    for _ in range(5):
        state = step(state, cfg, small_grid)
    assert not np.any(state.q)
    assert np.array_equal(state.h, h0)


@pytest.mark.parametrize("m", [1, 5])
def test_rotation_equivariance(small_grid, m):
    cfg = replace(SMALL, t_end=0.04)
    q0, _ = make_initial_data(cfg, small_grid)
    a = run(cfg, small_grid, diagnostics=False).snapshots[-1]
    b = run(cfg, small_grid, q0=np.roll(q0, m, axis=1), diagnostics=False).snapshots[-1]
    assert np.max(np.abs(np.roll(a.q, m, axis=1) - b.q)) < 1e-8
    assert np.max(np.abs(np.roll(a.h, m) - b.h)) < 1e-8


def test_deterministic(small_grid):
    cfg = replace(SMALL, t_end=0.02)
    r1 = run(cfg, small_grid, diagnostics=False).snapshots[-1]
    r2 = run(cfg, small_grid, diagnostics=False).snapshots[-1]
    assert np.array_equal(r1.q, r2.q) and np.array_equal(r1.h, r2.h)


def test_per_step_conservation(disk64):
    cfg = SimConfig(t_end=0.02)
    states = []
    run(cfg, disk64, on_step=states.append, diagnostics=False)
    q0, _ = make_initial_data(cfg, disk64)
    values = [conserved_heat(q0, np.ones(disk64.shape), disk64)]
    values += [conserved_heat(s.q, s.gauge.J, disk64) for s in states]
    assert values[0] == pytest.approx(CONSERVED_0, abs=1e-6)
    assert np.max(np.abs(np.diff(values))) / values[0] < 1e-6


def test_stefan_condition_and_invariants(disk64):
    cfg = SimConfig(t_end=0.01)
    res = run(cfg, disk64, diagnostics=False)
    s = res.snapshots[-1]
    assert np.all(s.q[-1] == 0)
    assert np.min(s.q) >= -1e-9
    assert np.max(np.abs(s.v - velocity(s.q, s.gauge.A, disk64))) < 1e-8


def test_t_end_zero_returns_initial_state(small_grid):
    res = run(replace(SMALL, t_end=0.0), small_grid)
    assert len(res.snapshots) == 1 and res.snapshots[0].t == 0.0
    assert res.rows == [] and res.termination == "t_end_reached"


def test_area_matches_heat_loss_radial(small_grid):
    # all heat is eventually converted to area: |Omega(T)| + int q J -> pi + int q0
    cfg = replace(SMALL, delta=0.0, t_end=2.0)
    res = run(cfg, small_grid, diagnostics=False)
    s = res.snapshots[-1]
    q0, _ = make_initial_data(cfg, small_grid)
    target = math.pi + integrate(q0, small_grid)
    area = integrate(s.gauge.J, small_grid)
    assert abs(area + integrate(s.q * s.gauge.J, small_grid) - target) / target < 1e-3
    assert abs(area - target) / target < 1e-3
    # the moving area equals the enclosed area of the boundary curve
    xb, yb = s.gauge.psi[0, -1], s.gauge.psi[1, -1]
    k = 1j * np.fft.fftfreq(xb.size, 1.0 / xb.size)
    dx, dy = (np.fft.ifft(k * np.fft.fft(f)).real for f in (xb, yb))
    enclosed = 0.5 * np.mean(xb * dy - yb * dx) * 2 * np.pi
    assert enclosed == pytest.approx(area, rel=1e-6)


def test_invalid_initial_height_is_breakdown(small_grid):
    res = run(SMALL, small_grid, h0=np.full(small_grid.n_theta, -1.2))
    assert res.termination == "gauge_breakdown"
    assert res.failure_time == 0.0 and res.failed_stage == "gauge"


def test_solver_failure_is_step_failure(small_grid):
    res = run(replace(SMALL, tol=1e-30, t_end=0.01), small_grid, diagnostics=False)
    assert res.termination == "step_failure"
    assert res.failed_stage == "heat"
    assert res.failure_time == pytest.approx(SMALL.dt)
    assert len(res.snapshots) == 1


def test_violent_data_survives(small_grid):
    # large amplitude radial heat grows the disk but keeps the gauge valid
    cfg = replace(SMALL, a=0.9, delta=0.5, t_end=0.2)
    res = run(cfg, small_grid, diagnostics=False)
    assert res.termination == "t_end_reached"
    assert np.min(res.snapshots[-1].gauge.J) > 0


def test_frozen_gauge_is_pure_heat(small_grid):
    cfg = replace(SMALL, freeze_gauge=True, t_end=0.01)
    pair = dirichlet_eigenpair(small_grid)
    res = run(cfg, small_grid, q0=pair.phi, diagnostics=False)
    last = res.snapshots[-1]
    assert not np.any(last.h)
    expected = pair.phi / (1 + cfg.dt * pair.lam) ** cfg.n_steps
    assert l2_norm(last.q - expected, small_grid) < 1e-8


def test_boundary_flux_matches_area_rate(small_grid):
    # at t = 0 the boundary speed is -d_N q0 = 2a (the angular term has zero flux)
    st0 = initial_state(SMALL, small_grid)
    rate = st0.gauge.psi_t[:, -1]
    flux = integrate_boundary(np.einsum("i...,i...->...", rate, small_grid.normal), small_grid)
    assert flux == pytest.approx(2 * math.pi * 2 * SMALL.a, rel=1e-6)


def test_boundary_settling_monotone(coupled):
    # |h(t) - h(T_end)| decreases on the trailing half of the default run
    T = coupled.t_default
    snaps = [s for s in coupled.result.snapshots if T / 2 - 1e-9 <= s.t <= T + 1e-9]
    hT = coupled.snapshot(T).h
    dist = [integrate_boundary((s.h - hT) ** 2, coupled.grid) for s in snaps]
    assert len(snaps) >= 10
    assert all(b < a for a, b in zip(dist, dist[1:]))
