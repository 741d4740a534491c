"""Control-side operators: B, B*, S, the adjoint functional, prox, costs, residual.

Controls are handled through their derivative ``v`` (sampled on time nodes)
and offset ``c``; the control itself is ``u = c + int_0^t v`` evaluated with
the cumulative trapezoidal rule.  The ``v`` space carries the trapezoidal
inner product ``<h, k> = sum_i omega_i h_i k_i``; offsets use the Euclidean one.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .fem import adjoint_weighted, forward_interior
from .types import DerivativeControl, ExactControl, ProblemData, SpaceTimeField, \
    evaluate_exact_control, total_variation


@dataclass(frozen=True, eq=False)
class DiscreteContext:
    """Per-problem cached quantities in interior coordinates."""

    ops: object
    omega: np.ndarray
    g: np.ndarray        # (m, n_interior)
    Mg: np.ndarray       # (m, n_interior)
    yd: np.ndarray       # (nt, n_interior)
    free_state: np.ndarray  # Q(y0, y1) restricted to the interior


def build_context(data: ProblemData) -> DiscreteContext:
    ops = data.operators
    g = ops.restrict(data.g)
    if np.any(~np.any(g != 0.0, axis=1)):
        raise ValidationError("a control profile vanishes on all interior nodes")
    free = forward_interior(ops, None, ops.restrict(data.y0), ops.restrict(data.y1))
    return DiscreteContext(ops, data.geometry.time_weights, g, ops.mass(g),
                           ops.restrict(data.yd.values), free)


def _ctx(data):
    return data.discrete


# ---------------------------------------------------------------------------
# cumulative trapezoid and its transpose
# ---------------------------------------------------------------------------

def cumulative_trapezoid(v, tau):
    """``U[:, k] = sum_{i<k} tau/2 (v_i + v_{i+1})`` with ``U[:, 0] = 0``."""
    v = np.atleast_2d(v)
    out = np.zeros_like(v, dtype=float)
    out[:, 1:] = np.cumsum(0.5 * tau * (v[:, 1:] + v[:, :-1]), axis=1)
    return out


def cumulative_trapezoid_T(s, tau):
    """Transpose of :func:`cumulative_trapezoid` applied to ``s`` (m, nt)."""
    s = np.atleast_2d(s)
    out = np.empty_like(s, dtype=float)
    # tail[k] = sum_{i > k} s_i
    tail = np.zeros_like(s, dtype=float)
    tail[:, :-1] = np.cumsum(s[:, :0:-1], axis=1)[:, ::-1]
    out[:, 0] = 0.5 * tau * tail[:, 0]
    out[:, 1:] = 0.5 * tau * s[:, 1:] + tau * tail[:, 1:]
    return out


def control_values(dc: DerivativeControl, tau):
    """Nodal control ``u = c + cumulative trapezoid of v``, shape (m, nt)."""
    return dc.c[:, None] + cumulative_trapezoid(dc.v, tau)


def _check_dc(data, dc):
    if dc.v.shape != (data.m, data.geometry.nt):
        raise ValidationError(f"v has shape {dc.v.shape}, expected "
                              f"{(data.m, data.geometry.nt)}")


# ---------------------------------------------------------------------------
# B, B*, S
# ---------------------------------------------------------------------------

def apply_B(data: ProblemData, dc: DerivativeControl) -> SpaceTimeField:
    """Forcing ``F(t_i) = sum_j u_j(t_i) g_j`` generated by ``(v, c)``."""
    _check_dc(data, dc)
    u = control_values(dc, data.geometry.tau)
    return SpaceTimeField(u.T @ data.g, data.geometry)


def _bstar_from_weighted(ctx, r, tau):
    """B* given ``r_i = omega_i M phi_i`` on the interior."""
    s = (r @ ctx.g.T).T  # (m, nt): omega_i g_j^T M phi_i
    psi = cumulative_trapezoid_T(s, tau) / ctx.omega[None, :]
    return psi, s.sum(axis=1)


def apply_Bstar(data: ProblemData, phi):
    """Adjoint of :func:`apply_B`.

    Returns
    -------
    psi : ndarray, shape (m, nt)
        ``s -> int_s^T int_Omega g_j phi`` (exact discrete transpose).
    psi0 : ndarray, shape (m,)
        Full space-time integrals ``int_0^T int_Omega g_j phi``.
    """
    ctx = _ctx(data)
    grid = data.geometry
    values = phi.values if isinstance(phi, SpaceTimeField) else np.asarray(phi, float)
    if values.shape != (grid.nt, grid.n_nodes):
        raise ValidationError("phi must be shaped like a state")
    r = ctx.omega[:, None] * ctx.ops.mass(ctx.ops.restrict(values))
    return _bstar_from_weighted(ctx, r, grid.tau)


def _state_interior(data, u):
    """Interior state ``L(u g) + Q(y0, y1)`` for nodal control values ``u``."""
    ctx = _ctx(data)
    return forward_interior(ctx.ops, u.T @ ctx.Mg) + ctx.free_state


def apply_S(data: ProblemData, dc: DerivativeControl) -> SpaceTimeField:
    """State ``L(B(v, c)) + Q(y0, y1)``."""
    _check_dc(data, dc)
    u = control_values(dc, data.geometry.tau)
    return SpaceTimeField(data.operators.extend(_state_interior(data, u)), data.geometry)


def apply_S_tilde(data: ProblemData, u) -> SpaceTimeField:
    """State driven by nodal control values ``u`` of shape (m, nt)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    return SpaceTimeField(data.operators.extend(_state_interior(data, u)), data.geometry)


def _psi_from_residual_state(data, R):
    """B*(L*(R)) for an interior space-time array ``R``."""
    ctx = _ctx(data)
    r = adjoint_weighted(ctx.ops, ctx.omega[:, None] * ctx.ops.mass(R))
    return _bstar_from_weighted(ctx, r, data.geometry.tau)


def normal_operator(data: ProblemData, h, k):
    """``B* L* L B (h, k)`` via two wave solves; returns ``(K1, K2)``."""
    ctx = _ctx(data)
    tau = data.geometry.tau
    u = np.asarray(k, float)[:, None] + cumulative_trapezoid(h, tau)
    Y = forward_interior(ctx.ops, u.T @ ctx.Mg)
    return _psi_from_residual_state(data, Y)


# ---------------------------------------------------------------------------
# adjoint functional
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AdjointFunctional:
    """Samples of ``psi = B*(L*(S(v, c) - y_d))``.

    Attributes
    ----------
    psi : ndarray, shape (m, nt)
    psi0 : ndarray, shape (m,)
    """

    psi: np.ndarray
    psi0: np.ndarray


def compute_adjoint_functional(data: ProblemData, dc: DerivativeControl):
    _check_dc(data, dc)
    u = control_values(dc, data.geometry.tau)
    psi, psi0 = _psi_from_residual_state(data, _state_interior(data, u) - _ctx(data).yd)
    return AdjointFunctional(psi, psi0)


def adjoint_at_control_values(data: ProblemData, u):
    """Adjoint functional for nodal control values ``u`` (m, nt)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    psi, psi0 = _psi_from_residual_state(data, _state_interior(data, u) - _ctx(data).yd)
    return AdjointFunctional(psi, psi0)


# ---------------------------------------------------------------------------
# prox and residual
# ---------------------------------------------------------------------------

def prox(p, alpha, gamma):
    """Soft thresholding ``max(0, p - alpha/gamma) + min(0, p + alpha/gamma)``.

    ``p`` has shape (m, nt) (or anything broadcasting against ``alpha[:, None]``),
    ``alpha`` is a scalar or length-m vector.
    """
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    p = np.asarray(p, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim == 1 and p.ndim == 2:
        alpha = alpha[:, None]
    thr = alpha / gamma
    return np.maximum(0.0, p - thr) + np.minimum(0.0, p + thr)


def residual_from_adjoint(data, params, gamma, dc, adj):
    kappa = params.kappa(gamma)
    r1 = dc.v - prox(-adj.psi / gamma, data.alpha, gamma)
    r2 = (kappa / gamma) * dc.c + adj.psi0 / gamma
    return r1, r2


def residual_F(data: ProblemData, params, dc: DerivativeControl, gamma=None):
    """Optimality residual ``F_gamma(v, c)``; ``gamma`` defaults to ``params.gamma0``."""
    gamma = params.gamma0 if gamma is None else gamma
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    adj = compute_adjoint_functional(data, dc)
    return residual_from_adjoint(data, params, gamma, dc, adj)


# ---------------------------------------------------------------------------
# norms and inner products on the control space
# ---------------------------------------------------------------------------

def inner_v(omega, h1, h2):
    return float(np.sum(omega[None, :] * h1 * h2))


def control_norm(omega, h, k):
    """Norm on ``L^2(I)^m x R^m`` with trapezoidal weights."""
    return float(np.sqrt(inner_v(omega, h, h) + float(np.dot(k, k))))


def l1_norm(omega, v):
    """Per-component trapezoidal ``L^1(I)`` norm."""
    return np.sum(omega[None, :] * np.abs(np.atleast_2d(v)), axis=1)


def l2_norm_sq(omega, v):
    return np.sum(omega[None, :] * np.atleast_2d(v) ** 2, axis=1)


# ---------------------------------------------------------------------------
# Gram matrix and costs
# ---------------------------------------------------------------------------

def gram_matrix(data: ProblemData):
    """``G_ij = <L g_i, L g_j>_h`` with time-constant forcing ``g_i``."""
    ctx = _ctx(data)
    nt = data.geometry.nt
    states = [forward_interior(ctx.ops, np.repeat(ctx.Mg[j][None, :], nt, axis=0))
              for j in range(data.m)]
    G = np.empty((data.m, data.m))
    for i in range(data.m):
        Mi = ctx.ops.mass(states[i])
        for j in range(i, data.m):
            G[i, j] = G[j, i] = float(np.sum(ctx.omega * np.einsum("ij,ij->i", Mi, states[j])))
    return G


def _tracking(data, u):
    ctx = _ctx(data)
    R = _state_interior(data, u) - ctx.yd
    return 0.5 * float(np.sum(ctx.omega * np.einsum("ij,ij->i", R, ctx.ops.mass(R))))


def cost_breakdown(data: ProblemData, dc: DerivativeControl, gamma=0.0, kappa=0.0):
    """Terms of the regularized cost at ``(v, c)``."""
    _check_dc(data, dc)
    omega = data.geometry.time_weights
    u = control_values(dc, data.geometry.tau)
    tracking = _tracking(data, u)
    tv = float(np.dot(data.alpha, l1_norm(omega, dc.v)))
    h1 = 0.5 * gamma * float(np.sum(l2_norm_sq(omega, dc.v)))
    off = 0.5 * kappa * float(np.dot(dc.c, dc.c))
    return {"tracking": tracking, "tv": tv, "h1": h1, "offset": off,
            "total": tracking + tv + h1 + off}


def cost_J(data: ProblemData, control):
    """Unregularized cost for a DerivativeControl or an ExactControl."""
    if isinstance(control, ExactControl):
        u = evaluate_exact_control(control, data.geometry)
        if u.shape[0] != data.m:
            raise ValidationError("exact control has the wrong number of components")
        return _tracking(data, u) + float(np.dot(data.alpha, total_variation(control)))
    return cost_breakdown(data, control)["total"]


def cost_Jgamma(data: ProblemData, params, dc: DerivativeControl, gamma=None):
    gamma = params.gamma0 if gamma is None else gamma
    return cost_breakdown(data, dc, gamma, params.kappa(gamma))["total"]


def smooth_gradient(data: ProblemData, params, dc: DerivativeControl, gamma):
    """Gradient of the differentiable part of the regularized cost.

    Returned in the trapezoidal / Euclidean inner product:
    ``(psi + gamma v, psi0 + kappa c)``.
    """
    adj = compute_adjoint_functional(data, dc)
    return adj.psi + gamma * dc.v, adj.psi0 + params.kappa(gamma) * dc.c
