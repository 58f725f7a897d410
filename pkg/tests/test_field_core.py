import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stefan_gauge.field_core import (
    EllipticProblem,
    ReferenceDomain,
    SolverError,
    all_derivatives,
    apply_operator,
    build_grid,
    differentiate,
    fd_weights,
    from_modes,
    gradient,
    integrate,
    integrate_boundary,
    laplace_extension,
    normal_derivative,
    solve_dirichlet,
    tangential_derivative,
    to_modes,
    unit_disk,
)


def wavy(eps=0.1, k=3):
    return ReferenceDomain(lambda th: 1.0 + eps * np.cos(k * th), rho=0.25, sigma=0.15)


@pytest.fixture(scope="module")
def wavy48():
    return build_grid(wavy(), 48, 48)


# --- grid and quadrature ---------------------------------------------------


def test_disk_area(disk64):
    assert integrate(np.ones(disk64.shape), disk64) == pytest.approx(math.pi, rel=1e-6)


def test_paraboloid_integral(disk64):
    assert integrate(1 - disk64.r**2, disk64) == pytest.approx(math.pi / 2, abs=1e-6)


def test_boundary_length(disk64):
    assert integrate_boundary(np.ones(disk64.n_theta), disk64) == pytest.approx(2 * math.pi,
                                                                                abs=1e-10)


def test_smallest_grid():
    g = build_grid(unit_disk(), 8, 8)
    assert g.shape == (8, 8)
    assert np.all(g.weights > 0)
    assert integrate(np.ones(g.shape), g) == pytest.approx(math.pi, rel=1e-3)


@pytest.mark.parametrize("n_r, n_theta", [(16, 7), (6, 16), (16, 4)])
def test_bad_grid_sizes(n_r, n_theta):
    with pytest.raises(ValueError):
        build_grid(unit_disk(), n_r, n_theta)


def test_cutoff_overlap_rejected():
    with pytest.raises(ValueError):
        build_grid(ReferenceDomain(1.0, rho=0.6, sigma=0.5), 16, 16)


def test_boundary_geometry(disk64):
    assert np.allclose(np.hypot(*disk64.normal), 1.0)
    assert np.allclose(disk64.curvature, 1.0)


def test_cutoff_plateaus(disk64):
    mu = disk64.cutoff()
    r = disk64.r
    assert np.all((mu >= 0) & (mu <= 1))
    assert np.all(mu[r <= 0.3] == 0)
    assert np.all(mu[1 - r <= 0.2 - 1e-12] == 1)


def test_wavy_area(wavy48):
    # area = (1/2) int R^2 = pi (1 + eps^2 / 2)
    assert integrate(np.ones(wavy48.shape), wavy48) == pytest.approx(math.pi * 1.005, rel=1e-6)


def test_wavy_normals(wavy48):
    assert np.allclose(np.hypot(*wavy48.normal), 1.0)
    # the normal is orthogonal to the boundary tangent
    th = wavy48.theta
    R = 1 + 0.1 * np.cos(3 * th)
    dR = -0.3 * np.sin(3 * th)
    tx = dR * np.cos(th) - R * np.sin(th)
    ty = dR * np.sin(th) + R * np.cos(th)
    assert np.max(np.abs(wavy48.normal[0] * tx + wavy48.normal[1] * ty)) < 1e-12


def test_fd_weights_exact_for_polynomials():
    nodes = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    w = fd_weights(0.0, nodes, 2)
    assert np.allclose(w, [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12])


# --- spectral boundary fields ----------------------------------------------


def test_mode_round_trip():
    th = 2 * np.pi * np.arange(32) / 32
    phi = 0.3 + np.cos(2 * th) - 0.2 * np.sin(7 * th)
    assert np.max(np.abs(from_modes(to_modes(phi), 32) - phi)) < 1e-12


@pytest.mark.parametrize("k", [1, 2, 5])
def test_tangential_first_derivative(k):
    th = 2 * np.pi * np.arange(64) / 64
    assert np.allclose(tangential_derivative(np.cos(k * th), 1), -k * np.sin(k * th), atol=1e-11)


def test_tangential_sixth_derivative_sign():
    th = 2 * np.pi * np.arange(64) / 64
    out = tangential_derivative(np.cos(3 * th), 6)
    # round-off in the top modes is amplified by (n/2)^6 ~ 1e9
    assert np.max(np.abs(out + 729 * np.cos(3 * th))) < 1e-15 * 32**6
    assert out[0] == pytest.approx(-729, rel=1e-9)


@pytest.mark.parametrize("order", [1, 3, 6])
def test_tangential_of_constant(order):
    assert np.allclose(tangential_derivative(np.full(16, 2.5), order), 0.0, atol=1e-13)


def test_tangential_order_limit():
    with pytest.raises(ValueError):
        tangential_derivative(np.zeros(16), 7)


# --- differentiation --------------------------------------------------------


def test_second_derivative_of_square(disk64):
    assert np.max(np.abs(differentiate(disk64.x**2, disk64, (2, 0)) - 2)) < 1e-8


def test_gradient_of_constant(disk64):
    assert np.max(np.abs(gradient(np.full(disk64.shape, 3.0), disk64))) < 1e-10


def test_harmonic_polynomial(disk64):
    u = disk64.x**2 - disk64.y**2
    assert np.max(np.abs(apply_operator(u, disk64))) < 1e-8


def test_differentiate_order_limit(disk32):
    with pytest.raises(ValueError):
        differentiate(disk32.x, disk32, (2, 1))


def _wavy_derivative_errors(n):
    g = build_grid(wavy(), n, n)
    u = g.x**3 - 2 * g.x * g.y + g.y**2
    grad, hess = all_derivatives(u, g)
    eg = max(np.max(np.abs(grad[0] - (3 * g.x**2 - 2 * g.y))),
             np.max(np.abs(grad[1] - (-2 * g.x + 2 * g.y))))
    eh = max(np.max(np.abs(hess[0, 1] + 2)), np.max(np.abs(hess[1, 1] - 2)),
             np.max(np.abs(hess[0, 0] - 6 * g.x)))
    return eg, eh


def test_wavy_domain_derivatives_converge():
    # the blended chart has steep metric derivatives, so the error is
    # truncation dominated at moderate resolution; check the rate instead
    errs = [_wavy_derivative_errors(n) for n in (24, 48, 96)]
    for k in range(2):
        assert errs[k][0] / errs[k + 1][0] > 6
        assert errs[k][1] / errs[k + 1][1] > 5
    assert errs[-1][0] < 1e-3
    assert errs[-1][1] < 1e-2


@given(st.integers(0, 2**31 - 1))
def test_mixed_derivatives_commute(seed):
    # random fields of total degree <= 4 (angular modes <= 4, resolved exactly
    # by the five-point radial stencils)
    g = build_grid(unit_disk(), 32, 32)
    c = np.random.default_rng(seed).normal(size=(5, 5))
    u = sum(c[i, j] * g.x**i * g.y**j for i in range(5) for j in range(5 - i))
    ux = differentiate(u, g, (1, 0))
    uy = differentiate(u, g, (0, 1))
    assert np.max(np.abs(differentiate(ux, g, (0, 1)) - differentiate(uy, g, (1, 0)))) < 1e-8


def _commutator(n):
    g = build_grid(unit_disk(), n, n)
    u = np.exp(g.x) * np.sin(2 * g.y)
    ux = differentiate(u, g, (1, 0))
    uy = differentiate(u, g, (0, 1))
    return np.max(np.abs(differentiate(ux, g, (0, 1)) - differentiate(uy, g, (1, 0))))


def test_mixed_derivatives_commute_to_truncation_order():
    # interior stencils are fourth order; the one-sided closure at the boundary
    # limits the max-norm rate of the composed derivatives to third order
    e = [_commutator(n) for n in (16, 32, 64)]
    assert e[0] / e[1] > 6 and e[1] / e[2] > 6


@pytest.mark.parametrize("u, expected", [
    (lambda g: 1 - g.r**2, -2.0),
    (lambda g: (1 - g.r**2) / 4, -0.5),
    (lambda g: np.full(g.shape, 4.0), 0.0),
])
def test_normal_derivative(disk64, u, expected):
    assert np.max(np.abs(normal_derivative(u(disk64), disk64) - expected)) < 1e-10


@pytest.mark.parametrize("domain", ["disk", "wavy"])
def test_divergence_theorem(domain, disk64):
    # the blended chart of the wavy domain needs more radial resolution
    g = disk64 if domain == "disk" else build_grid(wavy(), 96, 96)
    u = np.exp(0.3 * g.x) * np.cos(0.5 * g.y) + g.x**2 * g.y
    lhs = integrate(apply_operator(u, g), g)
    rhs = integrate_boundary(normal_derivative(u, g), g)
    assert lhs == pytest.approx(rhs, abs=1e-6)


def test_wavy_boundary_flux_exact(wavy48):
    # flux of grad(x^2 + y^2) equals 4 |Omega| = 4 pi (1 + eps^2 / 2)
    g = wavy48
    flux = integrate_boundary(normal_derivative(g.x**2 + g.y**2, g), g)
    assert flux == pytest.approx(4 * math.pi * 1.005, abs=1e-8)


# --- Dirichlet solver -------------------------------------------------------


def test_torsion_disk(disk64):
    u = solve_dirichlet(EllipticProblem(f=-1.0, g=0.0), disk64)
    assert np.max(np.abs(u - (1 - disk64.r**2) / 4)) < 1e-6


def test_harmonic_extension_cos(disk64):
    u = solve_dirichlet(EllipticProblem(f=0.0, g=np.cos(disk64.theta)), disk64)
    assert np.max(np.abs(u - disk64.x)) < 1e-6


def test_gmres_path_matches_direct(disk32):
    g = disk32
    a = np.zeros((2, 2) + g.shape)
    a[0, 0] = a[1, 1] = 1.0
    u1, info = solve_dirichlet(EllipticProblem(f=-1.0, a=a, b=np.zeros((2,) + g.shape)), g,
                               return_info=True)
    u2 = solve_dirichlet(EllipticProblem(f=-1.0), g)
    assert info["method"] == "gmres"
    assert np.max(np.abs(u1 - u2)) < 1e-9


def test_variable_coefficients_manufactured(disk32):
    g = disk32
    exact = (1 - g.r**2) * (1 + 0.5 * g.x * g.y)
    a = np.zeros((2, 2) + g.shape)
    a[0, 0] = 1 + 0.2 * g.x**2
    a[1, 1] = 1.1 + 0.1 * np.sin(g.y)
    a[0, 1] = a[1, 0] = 0.1 * g.x * g.y
    b = np.stack([0.3 * g.y, -0.2 * np.ones(g.shape)])
    f = apply_operator(exact, g, a, b, -2.0)
    u = solve_dirichlet(EllipticProblem(f=f, a=a, b=b, c=-2.0), g)
    assert np.max(np.abs(u - exact)) < 1e-8


def test_wavy_torsion_residual(wavy48):
    g = wavy48
    u, info = solve_dirichlet(EllipticProblem(f=-1.0), g, return_info=True)
    assert np.all(u[-1] == 0)
    # polynomial solution x^2 + y^2 check through the harmonic part
    w = solve_dirichlet(EllipticProblem(f=4.0, g=g.x[-1] ** 2 + g.y[-1] ** 2), g)
    e48 = np.max(np.abs(w - g.r**2))
    assert info["error_estimate"] <= 1e-10
    g96 = build_grid(wavy(), 96, 96)
    w96 = solve_dirichlet(EllipticProblem(f=4.0, g=g96.x[-1] ** 2 + g96.y[-1] ** 2), g96)
    e96 = np.max(np.abs(w96 - g96.r**2))
    assert e48 < 1e-4
    assert e48 / e96 > 10


def _smooth_error(m):
    # u = v (1 - r^2) with v = e^x sin y harmonic, so
    # Lap u = -4 (x v_x + y v_y) - 4 v
    g = build_grid(unit_disk(), m, m)
    v = np.exp(g.x) * np.sin(g.y)
    vy = np.exp(g.x) * np.cos(g.y)
    lap = -4 * (g.x * v + g.y * vy) - 4 * v
    u = solve_dirichlet(EllipticProblem(f=lap), g)
    return np.max(np.abs(u - v * (1 - g.r**2)))


@pytest.mark.parametrize("n", [12, 24])
def test_convergence_order(n):
    e1, e2 = _smooth_error(n), _smooth_error(2 * n)
    assert e1 / e2 > 2**3.5


def test_invalid_problems(disk32):
    g = disk32
    a = np.zeros((2, 2) + g.shape)
    a[0, 0] = 1.0
    a[1, 1] = -1.0
    with pytest.raises(ValueError):
        solve_dirichlet(EllipticProblem(f=1.0, a=a), g)
    with pytest.raises(ValueError):
        solve_dirichlet(EllipticProblem(f=1.0, c=1.0), g)


def test_solver_failure_is_reported(disk32):
    g = disk32
    a = np.zeros((2, 2) + g.shape)
    a[0, 0] = a[1, 1] = 1.0
    b = np.stack([200 * np.ones(g.shape), np.zeros(g.shape)])
    # a tolerance below round-off can never be certified
    with pytest.raises(SolverError) as exc:
        solve_dirichlet(EllipticProblem(f=-1.0, a=a, b=b), g, tol=1e-30, maxiter=2)
    assert np.isfinite(exc.value.residual)


@given(st.floats(0.0, 2.0), st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_discrete_maximum_principle(fs, gs, seed):
    g = build_grid(unit_disk(), 16, 16)
    rng = np.random.default_rng(seed)
    f = -fs * (1 + np.cos(g.x * rng.uniform(0, 3)) ** 2)
    gb = gs * (1 + np.sin(g.theta * rng.integers(0, 4)) ** 2)
    u = solve_dirichlet(EllipticProblem(f=f, g=gb, c=-rng.uniform(0, 5)), g)
    assert np.min(u) >= -1e-9


def test_laplace_extension_stacked(disk32):
    g = disk32
    data = np.stack([np.cos(g.theta), np.sin(2 * g.theta)])
    ext = laplace_extension(data, g)
    assert np.max(np.abs(ext[0] - g.x)) < 1e-8
    assert np.max(np.abs(ext[1] - 2 * g.x * g.y)) < 1e-8
