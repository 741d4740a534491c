"""Acceptance suite: eleven pinned criteria, one PASS/FAIL line each.

Every test prints ``criterion N: PASS|FAIL  <details>`` to the terminal and
then asserts the criterion with its pinned tolerance.  Criteria 5 to 8 share
one path-following run of the discrete-exact Dirac example.  Criterion 9 is
marked ``slow``.
"""

import numpy as np
import pytest

from bvwave.control import (apply_B, apply_Bstar, cost_breakdown, l1_norm, prox,
                            smooth_gradient)
from bvwave.fem import (apply_L, apply_Lstar, apply_Q, assemble, discrete_energy, inner_h,
                        norm_h, solve_wave)
from bvwave.manufactured import (build_cantor_example, build_dirac_example,
                                 build_dirac_example_discrete, verify_manufactured)
from bvwave.ssn import (ActiveSets, apply_DF, diagnostics, jump_clusters, krylov_solve,
                        path_following)
from bvwave.types import DerivativeControl, Grid, RegularizationParams
from conftest import random_problem
from oracles import dense_DF
from test_control import golden_prox


def _report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {number}: {detail}"


# ---------------------------------------------------------------------------
# 1-4: operator identities
# ---------------------------------------------------------------------------

def test_criterion_01_adjoint_identities(capsys):
    rng = np.random.default_rng(101)
    worst_L = worst_B = 0.0
    for trial in range(100):
        T = rng.uniform(0.5, 3.0)
        # random interval around the origin so the control boxes see interior nodes
        grid = Grid(1, -rng.uniform(0.6, 2.0), rng.uniform(0.6, 2.0), 17, T, 33)
        ops = assemble(grid)
        f = rng.standard_normal((grid.nt, grid.n_nodes))
        w = rng.standard_normal((grid.nt, grid.n_nodes))
        Lf = apply_L(ops, f)
        lhs, rhs = inner_h(ops, Lf, w), inner_h(ops, f, apply_Lstar(ops, w))
        worst_L = max(worst_L, abs(lhs - rhs) / (norm_h(ops, Lf) * norm_h(ops, w)))

        m = int(rng.integers(1, 4))
        data = random_problem(grid, m=m, seed=trial)
        dc = DerivativeControl(rng.standard_normal((m, grid.nt)), rng.standard_normal(m))
        phi = rng.standard_normal((grid.nt, grid.n_nodes))
        Bdc = apply_B(data, dc)
        psi, psi0 = apply_Bstar(data, phi)
        lhs = inner_h(ops, Bdc, phi)
        rhs = np.sum(grid.time_weights * dc.v * psi) + np.dot(dc.c, psi0)
        dc_norm = np.sqrt(np.sum(grid.time_weights * dc.v ** 2) + np.dot(dc.c, dc.c))
        bs_norm = np.sqrt(np.sum(grid.time_weights * psi ** 2) + np.dot(psi0, psi0))
        worst_B = max(worst_B, abs(lhs - rhs) / max(norm_h(ops, Bdc) * norm_h(ops, phi),
                                                    dc_norm * bs_norm))
    ok = worst_L <= 1e-12 and worst_B <= 1e-12
    _report(capsys, 1, ok, f"100 trials, max relative defect L {worst_L:.2e}, B {worst_B:.2e}"
                           " (bound 1e-12)")


def test_criterion_02_prox_oracle(capsys):
    rng = np.random.default_rng(202)
    alpha = 10.0 ** rng.uniform(-3, 1, 1000)
    gamma = 10.0 ** rng.uniform(-3, 1, 1000)
    p = rng.uniform(-20.0, 20.0, 1000)
    worst = 0.0
    for a, g, q in zip(alpha, gamma, p):
        worst = max(worst, abs(prox(np.array([[q]]), a, g)[0, 0] - golden_prox(q, a, g)))
    _report(capsys, 2, worst <= 1e-8, f"1000 samples, max deviation {worst:.2e} (bound 1e-8)")


def test_criterion_03_gradient_check(capsys):
    grid = Grid(1, -1.0, 1.0, 17, 2.0, 33)
    data = random_problem(grid, m=2, initial=True, seed=303)
    params = RegularizationParams(c_kappa=0.3, kappa_exp=1.0)
    gamma = 0.05
    rng = np.random.default_rng(303)
    dc = DerivativeControl(rng.standard_normal((2, grid.nt)), rng.standard_normal(2))
    g1, g2 = smooth_gradient(data, params, dc, gamma)
    w = grid.time_weights

    def smooth(d):
        c = cost_breakdown(data, d, gamma, params.kappa(gamma))
        return c["tracking"] + c["h1"] + c["offset"]

    worst = 0.0
    for _ in range(20):
        h = rng.standard_normal((2, grid.nt))
        k = rng.standard_normal(2)
        eps = 1e-4
        fd = (smooth(DerivativeControl(dc.v + eps * h, dc.c + eps * k))
              - smooth(DerivativeControl(dc.v - eps * h, dc.c - eps * k))) / (2 * eps)
        exact = np.sum(w * g1 * h) + np.dot(g2, k)
        worst = max(worst, abs(fd - exact) / abs(exact))
    _report(capsys, 3, worst <= 1e-6, f"20 directions, max relative error {worst:.2e} "
                                      "(bound 1e-6)")


def test_criterion_04_DF_dense_equivalence(capsys):
    grid = Grid(1, -1.0, 1.0, 9, 1.0, 17)
    data = random_problem(grid, m=1, alpha=0.05, seed=404)
    params = RegularizationParams()
    gamma = 0.01
    rng = np.random.default_rng(404)
    mask = rng.random((1, grid.nt)) > 0.4
    active = ActiveSets(mask)
    DF = dense_DF(data, params, gamma, mask)
    apply_err = 0.0
    for _ in range(5):
        h = rng.standard_normal((1, grid.nt))
        k = rng.standard_normal(1)
        o1, o2 = apply_DF(data, params, active, h, k, gamma)
        ref = DF @ np.r_[h.ravel(), k]
        apply_err = max(apply_err, np.max(np.abs(np.r_[o1.ravel(), o2] - ref))
                        / np.max(np.abs(ref)))

    r1 = rng.standard_normal((1, grid.nt))
    r2 = rng.standard_normal(1)

    def op(h, k):
        return apply_DF(data, params, active, h, k, gamma)

    (h, k), _ = krylov_solve(op, (r1, r2), grid.time_weights[None, :], tol=1e-12)
    ref = np.linalg.solve(DF, np.r_[r1.ravel(), r2])
    solve_err = np.max(np.abs(np.r_[h.ravel(), k] - ref)) / np.max(np.abs(ref))
    ok = apply_err <= 1e-12 and solve_err <= 1e-8
    _report(capsys, 4, ok, f"apply_DF vs dense {apply_err:.2e} (bound 1e-12), "
                           f"GMRES vs dense solve {solve_err:.2e} (bound 1e-8)")


# ---------------------------------------------------------------------------
# 5-8: Dirac recovery by path following
# ---------------------------------------------------------------------------

DIRAC_ALPHA = 1.0
JUMPS = (1.0 / 3.0, 1.0, 5.0 / 3.0)


@pytest.fixture(scope="module")
def dirac_run():
    grid = Grid(1, -1.0, 1.0, 129, 2.0, 2049)
    prob = build_dirac_example_discrete(1, 3, DIRAC_ALPHA, grid)
    params = RegularizationParams(gamma0=1.0, nu=0.1, tol_gamma=1e-6, tol_newton=1e-6,
                                  c_kappa=1.0, kappa_exp=4.0)
    tv_by_gamma = {}

    def record(dc, report):
        tv_by_gamma[report.gamma] = float(l1_norm(grid.time_weights, dc.v)[0])

    dc, reports = path_following(prob.data, params, callback=record)
    diag = diagnostics(prob.data, reports, dc, params, prob.exact_control, prob.discrete_cost)
    return {"grid": grid, "prob": prob, "params": params, "dc": dc, "reports": reports,
            "diag": diag, "tv": tv_by_gamma}


def test_criterion_05_dirac_recovery(capsys, dirac_run):
    grid, dc, diag = dirac_run["grid"], dirac_run["dc"], dirac_run["diag"]
    reports = dirac_run["reports"]
    a = all(r.final_residual <= 1e-6 for r in reports)
    # clusters: connected runs with |v| above a thousandth of its peak
    clusters = jump_clusters(dc.v[0], grid.times, 1e-3 * np.max(np.abs(dc.v)))
    centers = [c[0] for c in clusters]
    b = len(clusters) == 3 and all(abs(c - j) <= grid.tau for c, j in zip(centers, JUMPS))
    tv = float(diag["tv_trapezoid"][0])
    c = abs(tv - 3.0) <= 0.05 * 3.0
    l1_rel = float(diag["l1_error"][0] / diag["l1_exact"][0])
    d = l1_rel <= 0.02
    ratio = float(diag["psi_sup_ratio"][0])
    e = ratio <= 1.001
    flags = "".join(k if ok else k.upper() for k, ok in zip("abcde", (a, b, c, d, e)))
    detail = (f"[{flags}; upper case = failed] max final |F| "
              f"{max(r.final_residual for r in reports):.1e}; clusters at "
              f"{', '.join(f'{x:.4f}' for x in centers)}; TV {tv:.4f} (3 +- 5%); "
              f"L1 error {100 * l1_rel:.1f}% (<= 2%); sup|psi|/alpha {ratio:.5f} (<= 1.001)")
    _report(capsys, 5, a and b and c and d and e, detail)


def test_criterion_06_superlinearity(capsys, dirac_run):
    eligible = good = 0
    for r in dirac_run["reports"]:
        if r.iterations < 3:
            continue
        eligible += 1
        res = np.array(r.residuals)
        drops = res[:-1] / res[1:]
        if drops[-1] > drops[-2] and drops[-1] >= 10.0:
            good += 1
    ok = eligible > 0 and good >= 0.8 * eligible
    _report(capsys, 6, ok, f"{good} of {eligible} stages with >= 3 Newton steps are "
                           "superlinear (need 80%)")


def test_criterion_07_value_function(capsys, dirac_run):
    diag = dirac_run["diag"]
    gam, val = diag["gamma"], diag["value"]
    monotone = bool(np.all(np.diff(val) >= 0.0))
    # nonuniform gamma samples: concavity means nonincreasing difference quotients
    slope_diff = diag["value_slope_differences"]
    concave = bool(np.all(slope_diff <= 1e-8))
    gap = diag["cost_gap"]
    nonneg = bool(np.all(gap >= 0.0))
    # C = max gap/gamma over the three smallest gamma; stable when those three
    # ratios agree within a factor of two
    ratios = gap[:3] / gam[:3]
    C = float(np.max(ratios))
    stable = bool(np.all(ratios > 0) and np.max(ratios) <= 2.0 * np.min(ratios))
    bounded = bool(np.all(gap[:3] <= C * gam[:3]))
    ok = monotone and concave and nonneg and stable and bounded
    detail = (f"monotone {monotone}; concave {concave} (max slope difference "
              f"{np.max(slope_diff):.2e}); gap >= 0 {nonneg}; gap/gamma at three smallest "
              f"gamma {', '.join(f'{x:.3g}' for x in ratios)} -> stable {stable}")
    _report(capsys, 7, ok, detail)


def test_criterion_08_strict_bv(capsys, dirac_run):
    tv = dirac_run["tv"]
    smallest = sorted(tv)[:3][::-1]
    dist = np.array([abs(tv[g] - 3.0) for g in smallest])
    approaching = bool(np.all(np.diff(dist) < 0))
    final = dist[-1] / 3.0 <= 0.05
    detail = ("TV at gamma " + ", ".join(f"{g:.0e}: {tv[g]:.4f}" for g in smallest)
              + f"; monotone approach {approaching}; final gap {100 * dist[-1] / 3:.1f}% "
              "(<= 5%)")
    _report(capsys, 8, approaching and final, detail)


# ---------------------------------------------------------------------------
# 9: Cantor example
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_09_cantor(capsys):
    grid = Grid(2, -2.0, 2.0, 33, 5.0, 513)
    prob = build_cantor_example(grid)
    params = RegularizationParams(gamma0=1.0, nu=0.5, tol_gamma=3.8e-6, tol_newton=1e-6,
                                  c_kappa=0.0)
    dc, reports = path_following(prob.data, params)
    diag = diagnostics(prob.data, reports, dc, params, prob.exact_control)
    u = dc.c[0] + np.r_[0.0, np.cumsum(0.5 * grid.tau * (dc.v[0, 1:] + dc.v[0, :-1]))]
    plateau = float(np.interp(0.5 * (2.14 + 2.85), grid.times, u))
    tv = float(diag["tv_trapezoid"][0])
    sep = float(diag["sign_separation"][0])
    ok = abs(plateau - 5.0) <= 0.25 and abs(tv - 10.0) <= 1.0 and sep >= 0.5
    _report(capsys, 9, ok, f"plateau {plateau:.4f} (5 +- 0.25); TV {tv:.3f} (10 +- 1); "
                           f"sign separation {sep:.3f} (>= 0.5)")


# ---------------------------------------------------------------------------
# 10-11: discretization orders
# ---------------------------------------------------------------------------

def test_criterion_10_manufactured_refinement(capsys):
    rep = verify_manufactured(lambda g: build_dirac_example(1, 3, DIRAC_ALPHA, g),
                              Grid(1, -1.0, 1.0, 33, 2.0, 129), levels=3)
    err = np.array(rep["adjoint_error"])
    orders = np.array(rep["orders"])
    ok = bool(np.all(np.diff(err) < 0) and np.all(orders >= 1.7))
    _report(capsys, 10, ok, "max|psi - p1| " + ", ".join(f"{e:.3e}" for e in err)
            + "; orders " + ", ".join(f"{o:.3f}" for o in orders) + " (>= 1.7)")


def test_criterion_11_fem_sanity(capsys):
    errs = []
    for n in (33, 65, 129):
        # cos(pi x / 2) is a Dirichlet eigenfunction on (-1, 1) with eigenvalue pi^2/4
        grid = Grid(1, -1.0, 1.0, n, 2.0, n)
        ops = assemble(grid)
        X = np.cos(np.pi * grid.coords[:, 0] / 2)
        y = solve_wave(ops, y0=X).values
        errs.append(norm_h(ops, y - np.outer(np.cos(np.pi * grid.times / 2), X)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    drift = 0.0
    for grid in (Grid(1, -1, 1, 33, 4.0, 257), Grid(2, -1, 1, 17, 2.0, 129)):
        ops = assemble(grid)
        rng = np.random.default_rng(11)
        y0 = rng.standard_normal(grid.n_nodes)
        y1 = rng.standard_normal(grid.n_nodes)
        e = discrete_energy(ops, apply_Q(ops, y0, y1))
        drift = max(drift, float(np.max(np.abs(e - e[0])) / e[0]))
    ok = bool(np.all(orders >= 1.8) and drift <= 1e-10)
    _report(capsys, 11, ok, "standing-wave orders " + ", ".join(f"{o:.3f}" for o in orders)
            + f" (>= 1.8); energy drift {drift:.2e} (<= 1e-10)")
