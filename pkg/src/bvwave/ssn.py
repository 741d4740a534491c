"""Semi-smooth Newton solver and path following in the regularization parameter.

For fixed ``gamma`` the optimality system ``F_gamma(v, c) = 0`` is solved by
full Newton steps with the generalized derivative

    DF(h, k) = (h + chi * K1(h, k) / gamma,  kappa/gamma * k + K2(h, k) / gamma)

where ``(K1, K2) = B* L* L B (h, k)`` and ``chi`` is the indicator of the
active set ``|psi| > alpha``.  Each application costs two wave solves.  The
linear systems are solved matrix-free with restarted GMRES.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse.linalg as spla

from .control import (AdjointFunctional, compute_adjoint_functional, control_norm, control_values,
                      cost_breakdown, l1_norm, l2_norm_sq, normal_operator,
                      residual_from_adjoint)
from .errors import KrylovError, SolverError, ValidationError
from .types import DerivativeControl, ExactControl, ProblemData, RegularizationParams, \
    evaluate_exact_control, total_variation

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ActiveSets:
    """Per-component masks of time nodes with ``|psi_i| > alpha_i``."""

    mask: np.ndarray

    @classmethod
    def from_adjoint(cls, psi, alpha):
        mask = np.abs(psi) > np.asarray(alpha, dtype=float)[:, None]
        mask.setflags(write=False)
        return cls(mask)

    @property
    def counts(self):
        return self.mask.sum(axis=1)


@dataclass
class SolveReport:
    """Record of one Newton solve at fixed ``gamma``."""

    gamma: float
    iterations: int = 0
    residuals: List[float] = field(default_factory=list)
    krylov_iters: List[int] = field(default_factory=list)
    value: float = float("nan")
    costs: dict = field(default_factory=dict)
    wall_time: float = 0.0
    converged: bool = False
    flagged: bool = False
    message: str = ""
    adjoint_drift: float = 0.0

    @property
    def final_residual(self):
        return self.residuals[-1] if self.residuals else float("nan")


class PathFollowingError(SolverError):
    """Path following aborted; partial results are attached."""

    def __init__(self, message, control=None, reports=None):
        super().__init__(message)
        self.control = control
        self.reports = reports or []


# ---------------------------------------------------------------------------
# generalized derivative and Krylov solve
# ---------------------------------------------------------------------------

def apply_DF(data: ProblemData, params: RegularizationParams, active: ActiveSets,
             h, k, gamma=None):
    """Apply the Newton derivative of ``F_gamma`` to ``(h, k)``."""
    gamma = params.gamma0 if gamma is None else gamma
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    K1, K2 = normal_operator(data, h, k)
    out1 = h + active.mask * (K1 / gamma)
    out2 = (params.kappa(gamma) / gamma) * k + K2 / gamma
    return out1, out2


def _gmres(op, b, tol, restart, maxiter, atol=0.0):
    counter = {"n": 0}

    def cb(_):
        counter["n"] += 1

    # scipy stops at ||r|| <= max(rtol ||b||, atol); atol is passed relative
    x, info = spla.gmres(op, b, rtol=max(tol, atol), atol=0.0, restart=restart,
                         maxiter=max(1, -(-maxiter // restart)),
                         callback=cb, callback_type="pr_norm")
    return x, info, counter["n"]


def krylov_solve(operator, rhs, weights, tol=1e-10, restart=50, max_iters=2000,
                 retry=True, atol=0.0):
    """Solve ``operator(h, k) = rhs`` with restarted GMRES.

    The unknowns ``h`` are rescaled by ``sqrt(weights)`` so that the Euclidean
    norm used by GMRES matches the weighted ``L^2 x R^m`` norm.

    Parameters
    ----------
    operator : callable
        ``operator(h, k) -> (h', k')``.
    rhs : tuple of ndarray
        ``(r1, r2)`` with ``r1`` shaped like ``h`` and ``r2`` like ``k``.
    weights : ndarray
        Quadrature weights broadcastable to the shape of ``h`` (for example
        the trapezoidal time weights).
    tol : float
        Relative residual target.  On failure the solve is retried once with
        ``10 * tol``.
    atol : float
        Absolute residual floor; a solve whose true residual is below ``atol``
        is accepted even if the relative target is out of reach in floating
        point.

    Returns
    -------
    (h, k), iterations

    Raises
    ------
    KrylovError
        If neither attempt converges; the best iterate is attached.
    """
    r1, r2 = (np.asarray(a, dtype=float) for a in rhs)
    shape = r1.shape
    sw = np.sqrt(np.broadcast_to(np.asarray(weights, dtype=float), shape))
    n1 = r1.size

    def pack(a, b):
        return np.concatenate([(a * sw).ravel(), np.ravel(b)])

    def unpack(x):
        return x[:n1].reshape(shape) / sw, x[n1:]

    b = pack(r1, r2)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return (np.zeros_like(r1), np.zeros_like(r2)), 0

    def matvec(x):
        h, k = unpack(np.asarray(x).ravel())
        o1, o2 = operator(h, k)
        return pack(o1, o2)

    op = spla.LinearOperator((b.size, b.size), matvec=matvec, dtype=float)
    restart = min(restart, b.size)
    total = 0
    best, best_rel = None, np.inf
    for attempt_tol in ([tol, 10.0 * tol] if retry else [tol]):
        x, info, its = _gmres(op, b, attempt_tol, restart, max_iters,
                              atol=atol / bnorm)
        total += its
        rel = np.linalg.norm(matvec(x) - b) / bnorm
        if rel < best_rel:
            best, best_rel = x, rel
        # GMRES monitors an estimate; accept when the true residual is within
        # a hair of the target
        if info == 0 or rel <= attempt_tol * 1.01 or rel * bnorm <= atol:
            return unpack(x), total
        log.warning("GMRES stalled (info=%s, relres=%.3e, tol=%.1e, n=%d, |b|=%.3e)",
                    info, rel, attempt_tol, b.size, bnorm)
    raise KrylovError(f"GMRES did not reach relative tolerance {10 * tol:.1e} "
                      f"(best {best_rel:.3e})", best=unpack(best), relres=best_rel,
                      iterations=total)


def newton_step(data, params, gamma, active, r1, r2, reduced=True):
    """Solve ``DF(h, k) = -(r1, r2)`` for the Newton correction.

    With ``reduced=True`` the rows of inactive nodes, where ``DF`` acts as
    the identity, are eliminated first (``h = -r1`` there) and GMRES runs on
    the remaining active nodes plus offsets.  This is algebraically the same
    system but avoids the strongly non-normal coupling between the identity
    block and the ``1/gamma`` scaled block.
    """
    omega = data.geometry.time_weights
    kog = params.kappa(gamma) / gamma
    mask = active.mask
    if not reduced:
        def op(h, k):
            K1, K2 = normal_operator(data, h, k)
            return h + mask * (K1 / gamma), kog * k + K2 / gamma
        return krylov_solve(op, (-r1, -r2), omega[None, :], params.krylov_tol,
                            params.krylov_restart, params.krylov_max_iters,
                            atol=params.krylov_floor)

    h_fixed = np.where(mask, 0.0, -r1)
    K1f, K2f = normal_operator(data, h_fixed, np.zeros(data.m))
    rhs1 = -r1[mask] - K1f[mask] / gamma
    rhs2 = -r2 - K2f / gamma
    w_act = np.broadcast_to(omega[None, :], mask.shape)[mask]

    def op(ha, k):
        h = np.zeros(mask.shape)
        h[mask] = ha
        K1, K2 = normal_operator(data, h, k)
        return ha + K1[mask] / gamma, kog * k + K2 / gamma

    (ha, k), its = krylov_solve(op, (rhs1, rhs2), w_act, params.krylov_tol,
                                params.krylov_restart, params.krylov_max_iters,
                                atol=params.krylov_floor)
    h = h_fixed.copy()
    h[mask] = ha
    return (h, k), its


# ---------------------------------------------------------------------------
# Newton and path following
# ---------------------------------------------------------------------------

def _residual_state(data, params, gamma, dc):
    adj = compute_adjoint_functional(data, dc)
    r1, r2 = residual_from_adjoint(data, params, gamma, dc, adj)
    return adj, r1, r2


def semismooth_newton(data: ProblemData, params: RegularizationParams, gamma,
                      start: Optional[DerivativeControl] = None, reduced=True,
                      incremental=True):
    """Solve ``F_gamma = 0`` by semi-smooth Newton with full steps.

    ``reduced`` selects the active-set reduced linear solve (see
    :func:`newton_step`).

    With ``incremental=True`` the adjoint functional is evaluated from scratch
    once and then updated by linearity, ``psi <- psi + B* L* L B (d)``, which
    costs the same two wave solves.  A fresh evaluation of ``S(u) - y_d``
    carries rounding noise proportional to ``|y_d|`` that ``F`` amplifies by
    ``1 / gamma``; the update only adds noise proportional to the step.  The
    difference to a fresh evaluation at the final iterate is stored in
    ``report.adjoint_drift``.

    Returns
    -------
    DerivativeControl, SolveReport
        The report is flagged when the iteration budget is exhausted.
    """
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    omega = data.geometry.time_weights
    dc = start if start is not None else DerivativeControl.zeros(data.m, data.geometry.nt)
    if dc.v.shape != (data.m, data.geometry.nt):
        raise ValidationError("start control has the wrong shape")
    report = SolveReport(gamma=gamma)
    t0 = time.perf_counter()

    adj, r1, r2 = _residual_state(data, params, gamma, dc)
    report.residuals.append(control_norm(omega, r1, r2))
    while report.residuals[-1] > params.tol_newton:
        if report.iterations >= params.max_newton_iters:
            report.flagged = True
            report.message = "Newton iteration budget exhausted"
            log.warning("gamma=%.3e: %s (|F|=%.3e)", gamma, report.message,
                        report.residuals[-1])
            break
        active = ActiveSets.from_adjoint(adj.psi, data.alpha)
        (d1, d2), its = newton_step(data, params, gamma, active, r1, r2, reduced)
        dc = DerivativeControl(dc.v + d1, dc.c + d2)
        report.iterations += 1
        report.krylov_iters.append(its)
        if incremental:
            K1, K2 = normal_operator(data, d1, d2)
            adj = AdjointFunctional(adj.psi + K1, adj.psi0 + K2)
            r1, r2 = residual_from_adjoint(data, params, gamma, dc, adj)
        else:
            adj, r1, r2 = _residual_state(data, params, gamma, dc)
        report.residuals.append(control_norm(omega, r1, r2))
        log.debug("gamma=%.3e it=%d |F|=%.3e krylov=%d active=%s", gamma,
                  report.iterations, report.residuals[-1], its, active.counts)
    if incremental and report.iterations:
        fresh = compute_adjoint_functional(data, dc)
        report.adjoint_drift = float(max(np.max(np.abs(fresh.psi - adj.psi)),
                                         np.max(np.abs(fresh.psi0 - adj.psi0))))
    report.converged = report.residuals[-1] <= params.tol_newton
    report.costs = cost_breakdown(data, dc, gamma, params.kappa(gamma))
    report.value = report.costs["total"]
    report.wall_time = time.perf_counter() - t0
    return dc, report


def path_following(data: ProblemData, params: RegularizationParams,
                   start: Optional[DerivativeControl] = None, callback=None,
                   reduced=True, incremental=True):
    """Drive ``gamma`` from ``gamma0`` to ``tol_gamma`` geometrically.

    Each Newton solve is warm-started from the previous one.  ``callback``
    is called with ``(dc, report)`` after every stage.

    Raises
    ------
    PathFollowingError
        If an inner linear solve fails; the partial path is attached.
    """
    dc = start
    reports = []
    for gamma in params.schedule():
        try:
            dc, report = semismooth_newton(data, params, gamma, dc, reduced, incremental)
        except SolverError as exc:
            raise PathFollowingError(f"path aborted at gamma={gamma:.3e}: {exc}",
                                     control=dc, reports=reports) from exc
        reports.append(report)
        log.info("gamma=%.3e newton=%d |F|=%.3e V=%.10g", gamma, report.iterations,
                 report.final_residual, report.value)
        if callback is not None:
            callback(dc, report)
    if dc is None:
        dc = DerivativeControl.zeros(data.m, data.geometry.nt)
    return dc, reports


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def jump_clusters(v, times, threshold):
    """Connected runs of nodes with ``|v| > threshold``.

    Returns a list of ``(centroid, signed_mass, first_index, last_index)`` where
    the centroid is weighted by ``|v|``.
    """
    v = np.asarray(v, dtype=float)
    on = np.abs(v) > threshold
    clusters = []
    i = 0
    n = v.size
    while i < n:
        if not on[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and on[j + 1]:
            j += 1
        w = np.abs(v[i:j + 1])
        centroid = float(np.sum(w * times[i:j + 1]) / np.sum(w))
        clusters.append((centroid, float(np.sum(v[i:j + 1])), i, j))
        i = j + 1
    return clusters


def sign_separation(v, times, threshold):
    """Distance between the supports of ``v > thr`` and ``v < -thr`` (inf if one is empty)."""
    pos = times[v > threshold]
    neg = times[v < -threshold]
    if pos.size == 0 or neg.size == 0:
        return float("inf")
    idx = np.searchsorted(pos, neg)
    best = np.inf
    for cand in (idx - 1, idx):
        ok = (cand >= 0) & (cand < pos.size)
        if np.any(ok):
            best = min(best, float(np.min(np.abs(pos[cand[ok]] - neg[ok]))))
    return best


def discrete_tv(u):
    """Total variation of nodal samples, per component."""
    return np.sum(np.abs(np.diff(np.atleast_2d(u), axis=1)), axis=1)


def diagnostics(data: ProblemData, reports, dc: DerivativeControl, params=None,
                exact: Optional[ExactControl] = None, exact_cost=None,
                delta=None, threshold=None):
    """Post-run report on value function, sparsity, adjoint bounds and errors.

    Parameters
    ----------
    delta : float, optional
        Margin below ``alpha`` defining the inactive region for the sparsity
        mass; defaults to ``1e-3 * alpha``.
    threshold : float, optional
        Magnitude below which ``v`` counts as zero for support computations;
        defaults to ``1e-6 * max|v|``.

    Returns
    -------
    dict
    """
    grid = data.geometry
    omega = grid.time_weights
    times = grid.times
    out = {}

    gam = np.array([r.gamma for r in reports], dtype=float)
    val = np.array([r.value for r in reports], dtype=float)
    order = np.argsort(gam)
    g_s, v_s = gam[order], val[order]
    out["gamma"] = g_s
    out["value"] = v_s
    slopes = np.diff(v_s) / np.diff(g_s) if g_s.size > 1 else np.zeros(0)
    out["value_slopes"] = slopes
    out["value_monotone"] = bool(np.all(np.diff(v_s) >= -1e-8 * np.maximum(1.0, np.abs(v_s[1:]))))
    curv = np.diff(slopes) if slopes.size > 1 else np.zeros(0)
    out["value_slope_differences"] = curv
    out["value_concave"] = bool(np.all(curv <= 1e-8))
    # closed-form derivative of the value function from the stored cost terms
    dV = []
    for r in (reports[i] for i in order):
        h1 = r.costs.get("h1", np.nan)
        off = r.costs.get("offset", np.nan)
        kap = params.kappa(r.gamma) if params is not None else np.nan
        kp = params.kappa_prime(r.gamma) if params is not None else np.nan
        # h1 = gamma/2 |v|^2, offset = kappa/2 |c|^2
        term_c = (off / kap * kp) if kap and kap > 0 else 0.0
        dV.append(h1 / r.gamma + term_c)
    out["value_derivative"] = np.array(dV)

    if exact_cost is not None:
        gap = v_s - exact_cost
        out["cost_gap"] = gap
        out["cost_gap_ratio"] = gap / g_s

    psi = compute_adjoint_functional(data, dc).psi
    alpha = data.alpha
    delta = 1e-3 * alpha if delta is None else np.broadcast_to(delta, alpha.shape)
    inactive = np.abs(psi) < (alpha - delta)[:, None]
    out["sparsity_mass"] = np.sum(omega[None, :] * np.abs(dc.v) * inactive, axis=1)
    out["psi_sup"] = np.max(np.abs(psi), axis=1)
    out["psi_sup_ratio"] = out["psi_sup"] / alpha

    vmax = float(np.max(np.abs(dc.v))) if dc.v.size else 0.0
    thr = (1e-6 * vmax if threshold is None else threshold)
    out["sign_separation"] = np.array([sign_separation(dc.v[j], times, thr)
                                       for j in range(data.m)])
    u = control_values(dc, grid.tau)
    out["tv_trapezoid"] = l1_norm(omega, dc.v)
    out["tv_discrete"] = discrete_tv(u)
    out["h1_seminorm_sq"] = l2_norm_sq(omega, dc.v)
    if exact is not None:
        ue = evaluate_exact_control(exact, grid)
        out["l1_error"] = l1_norm(omega, u - ue)
        out["l1_exact"] = l1_norm(omega, ue)
        out["tv_exact"] = total_variation(exact)
        out["tv_gap"] = out["tv_trapezoid"] - out["tv_exact"]
    return out
