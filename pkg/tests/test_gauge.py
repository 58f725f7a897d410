import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stefan_gauge.field_core import build_grid, unit_disk
from stefan_gauge.gauge import (
    GaugeBreakdown,
    deformation,
    gauge_from_height,
    harmonic_extension,
    identity_gauge,
    invert_2x2,
    jacobian_matrix,
    moving_normal,
)

GRID = build_grid(unit_disk(), 32, 32)


def _random_height(seed, amp=0.05, modes=6):
    rng = np.random.default_rng(seed)
    th = GRID.theta
    h = np.zeros_like(th)
    for m in range(1, modes + 1):
        h += rng.normal() / m**2 * np.cos(m * th + rng.uniform(0, 2 * np.pi))
    return amp * h / max(np.max(np.abs(h)), 1e-12)


def _id_field():
    eye = np.zeros((2, 2) + GRID.shape)
    eye[0, 0] = eye[1, 1] = 1.0
    return eye


def test_identity(disk64):
    g = identity_gauge(disk64)
    assert np.array_equal(g.psi, np.stack([disk64.x, disk64.y]))
    assert np.max(np.abs(g.J - 1)) < 1e-10
    assert np.max(np.abs(g.Lam - 1)) < 1e-10
    eye = np.zeros_like(g.A)
    eye[0, 0] = eye[1, 1] = 1
    assert np.max(np.abs(g.A - eye)) < 1e-10
    assert not np.any(g.psi_t)


@pytest.mark.parametrize("c", [-0.2, 0.05, 0.3])
def test_dilation(disk64, c):
    g = gauge_from_height(np.full(disk64.n_theta, c), disk64)
    assert np.max(np.abs(g.psi[0] - (1 + c) * disk64.x)) < 1e-8
    assert np.max(np.abs(g.psi[1] - (1 + c) * disk64.y)) < 1e-8
    assert np.max(np.abs(g.A[0, 0] - 1 / (1 + c))) < 1e-8
    assert np.max(np.abs(g.A[0, 1])) < 1e-8
    assert np.max(np.abs(g.J - (1 + c) ** 2)) < 1e-8
    assert np.max(np.abs(g.Lam - 1 / (1 + c))) < 1e-8
    n = moving_normal(g.A, disk64)
    assert np.max(np.abs(n - disk64.normal)) < 1e-10


def test_boundary_values_exact():
    h = 0.05 * np.cos(2 * GRID.theta)
    psi = harmonic_extension(h, GRID)
    target = np.stack([GRID.x[-1], GRID.y[-1]]) + h * GRID.normal
    assert np.max(np.abs(psi[:, -1] - target)) < 1e-14


def test_inverse_consistency():
    h = 0.05 * np.cos(2 * GRID.theta)
    g = gauge_from_height(h, GRID)
    dpsi = jacobian_matrix(g.psi, GRID)
    prod = np.einsum("ki...,ij...->kj...", g.A, dpsi)
    assert np.max(np.abs(prod - _id_field())) < 1e-8


@given(st.integers(0, 2**31 - 1))
def test_det_identity(seed):
    g = gauge_from_height(_random_height(seed), GRID)
    _, detA = invert_2x2(g.A)
    assert np.max(np.abs(detA * g.J - 1)) < 1e-8


@given(st.integers(0, 2**31 - 1))
def test_unit_moving_normal(seed):
    g = gauge_from_height(_random_height(seed), GRID)
    n = moving_normal(g.A, GRID)
    assert np.max(np.abs(np.hypot(*n) - 1)) < 1e-14


@given(st.integers(0, 2**31 - 1))
def test_small_height_keeps_diffeomorphism(seed):
    g = gauge_from_height(_random_height(seed, amp=0.1), GRID)
    assert np.min(g.J) >= 0.5


def test_identity_normal_exact():
    assert np.array_equal(moving_normal(_id_field(), GRID), GRID.normal)


def test_extension_linear_in_height():
    # Psi - e is linear in h and bounded by a modest multiple of |h|
    h = _random_height(3)
    d1 = harmonic_extension(h, GRID) - np.stack([GRID.x, GRID.y])
    d2 = harmonic_extension(2 * h, GRID) - np.stack([GRID.x, GRID.y])
    assert np.max(np.abs(d2 - 2 * d1)) < 1e-12
    assert np.max(np.abs(d1)) <= 1.5 * np.max(np.abs(h))


def test_gauge_velocity_dilation():
    g = gauge_from_height(np.zeros(GRID.n_theta), GRID, h_t=np.full(GRID.n_theta, 2.0))
    assert np.max(np.abs(g.psi_t - 2 * np.stack([GRID.x, GRID.y]))) < 1e-8


def test_backward_difference_fallback():
    psi0 = harmonic_extension(np.zeros(GRID.n_theta), GRID)
    h = np.full(GRID.n_theta, 0.01)
    g = deformation(harmonic_extension(h, GRID), GRID, h, psi_prev=psi0, dt=0.01)
    assert np.max(np.abs(g.psi_t - np.stack([GRID.x, GRID.y]))) < 1e-8


def test_folded_map_is_breakdown():
    h = np.full(GRID.n_theta, -1.2)
    with pytest.raises(GaugeBreakdown) as exc:
        gauge_from_height(h, GRID)
    assert exc.value.stage == "gauge"


def test_vanishing_normal_is_breakdown():
    with pytest.raises(GaugeBreakdown) as exc:
        moving_normal(np.zeros((2, 2, GRID.n_theta)), GRID)
    assert exc.value.stage == "normal"
