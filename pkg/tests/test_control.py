import numpy as np
import pytest
from hypothesis import given, strategies as st

from bvwave.control import (apply_B, apply_Bstar, apply_S, compute_adjoint_functional,
                            control_values, cost_breakdown, cost_J, cost_Jgamma,
                            cumulative_trapezoid, cumulative_trapezoid_T, gram_matrix,
                            normal_operator, prox, residual_F, smooth_gradient)
from bvwave.errors import ValidationError
from bvwave.fem import inner_h
from bvwave.types import (ControlComponent, DerivativeControl, ExactControl, Grid,
                          RegularizationParams)
from conftest import random_problem

_PHI = (1 + 5 ** 0.5) / 2


def golden_prox(p, alpha, gamma, tol=1e-13):
    """Golden-section minimizer of ``alpha |v| + gamma/2 (v - p)^2``.

    Function values are compared through their exact difference, which keeps
    the comparison accurate near the flat minimum.
    """
    def less(x1, x2):
        return alpha * (abs(x1) - abs(x2)) + 0.5 * gamma * (x1 - x2) * (x1 + x2 - 2 * p) < 0

    a, b = -abs(p) - 1.0, abs(p) + 1.0
    c, d = b - (b - a) / _PHI, a + (b - a) / _PHI
    while b - a > tol * max(1.0, abs(p)):
        if less(c, d):
            b = d
        else:
            a = c
        c, d = b - (b - a) / _PHI, a + (b - a) / _PHI
    return 0.5 * (a + b)


@given(st.floats(1e-3, 10.0), st.floats(1e-3, 10.0), st.floats(-20.0, 20.0))
def test_prox_matches_golden_section(alpha, gamma, p):
    assert prox(np.array([[p]]), alpha, gamma)[0, 0] == pytest.approx(
        golden_prox(p, alpha, gamma), abs=1e-8)


def test_prox_thresholds_and_vectorizes():
    p = np.array([[-3.0, -1.0, 0.0, 0.5, 2.5], [1.0, 2.0, 3.0, 4.0, 5.0]])
    out = prox(p, np.array([1.0, 3.0]), 1.0)
    np.testing.assert_allclose(out[0], [-2.0, 0.0, 0.0, 0.0, 1.5])
    np.testing.assert_allclose(out[1], [0.0, 0.0, 0.0, 1.0, 2.0])
    with pytest.raises(ValidationError):
        prox(p, 1.0, 0.0)


@given(st.integers(0, 10 ** 6), st.integers(3, 40))
def test_cumulative_trapezoid_transpose(seed, nt):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((2, nt))
    s = rng.standard_normal((2, nt))
    tau = 0.37
    lhs = np.sum(cumulative_trapezoid(v, tau) * s)
    rhs = np.sum(v * cumulative_trapezoid_T(s, tau))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_control_values_integrate_derivative():
    grid = Grid(1, -1, 1, 5, 2.0, 201)
    t = grid.times
    dc = DerivativeControl(np.cos(t)[None, :], np.array([0.5]))
    u = control_values(dc, grid.tau)
    assert np.allclose(u[0], 0.5 + np.sin(t), atol=1e-4)
    assert u[0, 0] == 0.5


@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_B_Bstar_adjoint(seed, m):
    grid = Grid(1, -1.0, 1.0, 17, 2.0, 33)
    data = random_problem(grid, m=m, seed=seed)
    rng = np.random.default_rng(seed)
    dc = DerivativeControl(rng.standard_normal((m, grid.nt)), rng.standard_normal(m))
    phi = rng.standard_normal((grid.nt, grid.n_nodes))
    psi, psi0 = apply_Bstar(data, phi)
    lhs = inner_h(data.operators, apply_B(data, dc), phi)
    rhs = np.sum(grid.time_weights * dc.v * psi) + np.dot(dc.c, psi0)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_normal_operator_is_symmetric_positive(grid1d):
    data = random_problem(grid1d, m=2)
    w = grid1d.time_weights
    rng = np.random.default_rng(5)
    h1, h2 = rng.standard_normal((2, 2, grid1d.nt))
    k1, k2 = rng.standard_normal((2, 2))
    a1, a2 = normal_operator(data, h1, k1)
    b1, b2 = normal_operator(data, h2, k2)
    ip = lambda x1, x2, y1, y2: np.sum(w * x1 * y1) + np.dot(x2, y2)
    assert ip(a1, a2, h2, k2) == pytest.approx(ip(h1, k1, b1, b2), rel=1e-11)
    assert ip(a1, a2, h1, k1) > 0


def test_gradient_matches_finite_differences(grid1d):
    data = random_problem(grid1d, m=2, initial=True)
    params = RegularizationParams(c_kappa=0.3, kappa_exp=1.0)
    gamma = 0.05
    rng = np.random.default_rng(11)
    dc = DerivativeControl(rng.standard_normal((2, grid1d.nt)), rng.standard_normal(2))
    g1, g2 = smooth_gradient(data, params, dc, gamma)
    w = grid1d.time_weights

    def smooth(d):
        c = cost_breakdown(data, d, gamma, params.kappa(gamma))
        return c["tracking"] + c["h1"] + c["offset"]

    for _ in range(5):
        h = rng.standard_normal((2, grid1d.nt))
        k = rng.standard_normal(2)
        eps = 1e-4
        fd = (smooth(DerivativeControl(dc.v + eps * h, dc.c + eps * k))
              - smooth(DerivativeControl(dc.v - eps * h, dc.c - eps * k))) / (2 * eps)
        exact = np.sum(w * g1 * h) + np.dot(g2, k)
        assert fd == pytest.approx(exact, rel=1e-6)


def test_residual_vanishes_at_prox_fixed_point(grid1d):
    data = random_problem(grid1d)
    params = RegularizationParams(c_kappa=1.0, kappa_exp=1.0)
    gamma = 0.5
    dc = DerivativeControl.zeros(1, grid1d.nt)
    r1, r2 = residual_F(data, params, dc, gamma)
    adj = compute_adjoint_functional(data, dc)
    assert np.allclose(r1, -prox(-adj.psi / gamma, data.alpha, gamma))
    assert np.allclose(r2, adj.psi0 / gamma)


def test_cost_terms_and_exact_control(grid1d):
    data = random_problem(grid1d, alpha=0.7)
    t = grid1d.times
    dc = DerivativeControl(np.ones((1, grid1d.nt)), np.array([2.0]))
    c = cost_breakdown(data, dc, gamma=0.1, kappa=0.4)
    assert c["tv"] == pytest.approx(0.7 * grid1d.T)
    assert c["h1"] == pytest.approx(0.5 * 0.1 * grid1d.T)
    assert c["offset"] == pytest.approx(0.5 * 0.4 * 4.0)
    assert c["total"] == pytest.approx(sum(c[k] for k in ("tracking", "tv", "h1", "offset")))
    params = RegularizationParams(c_kappa=0.4, kappa_exp=1.0)
    assert cost_Jgamma(data, params, dc, 1.0) == pytest.approx(
        cost_breakdown(data, dc, 1.0, 0.4)["total"])
    # u = 2 + t as an exact control with density 1 matches the nodal control
    from bvwave.types import DensityPiece
    ec = ExactControl([ControlComponent(offset=2.0,
                                        density=[DensityPiece(0.0, grid1d.T, (1.0,))])])
    assert cost_J(data, ec) == pytest.approx(cost_J(data, dc), rel=1e-12)
    assert np.allclose(apply_S(data, dc).values[:, grid1d.boundary_mask], 0.0)


def test_gram_matrix_spd(grid1d):
    G = gram_matrix(random_problem(grid1d, m=3))
    assert np.allclose(G, G.T)
    assert np.all(np.linalg.eigvalsh(G) > 0)
