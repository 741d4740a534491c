"""Manufactured test problems with known optimal controls.

The construction fixes an adjoint state ``phi(t, x) = h(t) f(x)`` vanishing at
the final time, derives ``p_1(t) = int_t^T int_Omega phi g``, places the
derivative of the control on the set where ``|p_1| = alpha`` with the matching
sign, and sets ``y_d = S(u) - (d_tt - Laplace) phi``.  The chosen control is
then optimal.  Two instances are provided: a control with finitely many jumps
and a Cantor staircase control; :func:`build_plateau_example` exposes the
generic smooth-plateau recipe.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cantor import bump, bump_d1, bump_d2, mollified_plateau, validate_plateaus
from .control import adjoint_at_control_values
from .errors import ValidationError
from .types import CantorPiece, ControlComponent, DerivativeControl, ExactControl, \
    Grid, ProblemData, SpaceTimeField, evaluate_exact_control, total_variation, \
    trapezoid_weights

_GEOM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ManufacturedProblem:
    """Problem data together with its exact solution.

    Attributes
    ----------
    data : ProblemData
    exact_control : ExactControl
    exact_adjoint : ndarray, shape (m, nt)
        Samples of ``p_1`` on the time grid.
    exact_cost : float or None
        Closed-form optimal cost when available.
    metadata : dict
    discrete_control : DerivativeControl, optional
        For discretely exact problems: the exact minimizer of the discrete
        problem (``gamma -> 0``).
    discrete_cost : float, optional
        Discrete optimal cost belonging to ``discrete_control``.
    """

    data: ProblemData
    exact_control: ExactControl
    exact_adjoint: np.ndarray
    exact_cost: Optional[float] = None
    metadata: dict = field(default_factory=dict)
    discrete_control: Optional[DerivativeControl] = None
    discrete_cost: Optional[float] = None


def box_indicator(coords, half_width, center=None, scale=1.0):
    """Nodal values of ``scale * 1_{|x_i - center_i| <= half_width}``.

    Nodes on the boundary of the box get the factor 1/2 per axis, which keeps
    mass-matrix quadrature of ``int g phi`` second-order accurate when the box
    edges are aligned with the mesh.
    """
    coords = np.atleast_2d(coords)
    center = np.zeros(coords.shape[1]) if center is None else np.asarray(center, float)
    out = np.full(coords.shape[0], float(scale))
    for k in range(coords.shape[1]):
        r = np.abs(coords[:, k] - center[k])
        tol = _GEOM_TOL * max(1.0, half_width)
        fac = np.where(r < half_width - tol, 1.0, 0.0)
        fac = np.where(np.abs(r - half_width) <= tol, 0.5, fac)
        out *= fac
    return out


def _discrete_pairing(grid, a, b):
    """``a^T M b`` over interior nodes (the discrete ``int_Omega a b``)."""
    from .fem import assemble
    ops = assemble(grid)
    ai, bi = ops.restrict(a), ops.restrict(b)
    return float(ai @ (ops.M @ bi))


def _assemble_problem(grid, g, alpha, w_phi, exact_control, y0=None, y1=None):
    """Build ``ProblemData`` with ``y_d = S(u_exact) - w_phi`` at the nodes."""
    zeros = np.zeros((grid.nt, grid.n_nodes))
    provisional = ProblemData(grid, g, alpha, SpaceTimeField(zeros, grid), y0, y1)
    u = evaluate_exact_control(exact_control, grid)
    from .control import apply_S_tilde
    state = apply_S_tilde(provisional, u).values
    yd = state - w_phi
    yd[:, grid.boundary_mask] = 0.0
    return ProblemData(grid, g, alpha, SpaceTimeField(yd, grid), y0, y1)


# ---------------------------------------------------------------------------
# finitely many jumps
# ---------------------------------------------------------------------------

def dirac_beta(alpha, l, d):
    return alpha * (3.0 * np.pi * l / 4.0) * (2.0 * np.sqrt(2.0) / np.pi) ** (-d)


def dirac_p1(t, alpha, l, d):
    beta = dirac_beta(alpha, l, d)
    return (4.0 * beta / (3.0 * np.pi * l)) * (-np.sin(l * np.pi * np.asarray(t) / 2.0) ** 3) \
        * (2.0 * np.sqrt(2.0) / np.pi) ** d


def dirac_exact_cost(alpha, l, d):
    beta = dirac_beta(alpha, l, d)
    pi2 = np.pi ** 2
    return (beta ** 2 / 4.0) * (d * pi2 / 4.0 - 5.0 * l * l * pi2 / 4.0) ** 2 \
        + beta ** 2 * l ** 4 * pi2 ** 2 / 4.0 + alpha * l


def dirac_control(l):
    """Atoms at ``(1 + 2n)/l`` with alternating unit weights."""
    atoms = [((1.0 + 2.0 * n) / l, float(np.sign(np.sin(np.pi * (2 * n + 1) / 2.0))))
             for n in range(l)]
    return ExactControl((ControlComponent(atoms=atoms),))


def build_dirac_example(d, l, alpha, grid: Grid) -> ManufacturedProblem:
    """Control with ``l`` jumps on ``Omega = (-1, 1)^d``, ``T = 2``.

    The adjoint is ``phi = beta sin(l pi t) sin(l pi t / 2) prod cos(pi x_i / 2)``
    with ``beta`` chosen so that ``max |p_1| = alpha``.
    """
    if d not in (1, 2, 3) or grid.dim != d:
        raise ValidationError(f"dimension mismatch: d={d}, grid.dim={grid.dim}")
    if int(l) != l or l < 1:
        raise ValidationError("l must be a positive integer")
    l = int(l)
    if not alpha > 0:
        raise ValidationError("alpha must be positive")
    if abs(grid.T - 2.0) > 1e-12:
        raise ValidationError("the jump example requires T = 2")
    if any(abs(lo + 1.0) > 1e-12 for lo in grid.space_lo) or \
            any(abs(hi - 1.0) > 1e-12 for hi in grid.space_hi):
        raise ValidationError("the jump example requires Omega = (-1, 1)^d")

    beta = dirac_beta(alpha, l, d)
    x = grid.coords
    t = grid.times
    X = np.prod(np.cos(np.pi * x / 2.0), axis=1)
    a = l * np.pi
    s = np.sin(a * t) * np.sin(a * t / 2.0)
    cc = np.cos(a * t) * np.cos(a * t / 2.0)
    w_time = (d * np.pi ** 2 / 4.0 - 5.0 * a * a / 4.0) * s + a * a * cc
    w_phi = beta * np.outer(w_time, X)

    g = box_indicator(x, 0.5)[None, :]
    ec = dirac_control(l)
    data = _assemble_problem(grid, g, [alpha], w_phi, ec)
    p1 = dirac_p1(t, alpha, l, d)[None, :]
    return ManufacturedProblem(data, ec, p1, dirac_exact_cost(alpha, l, d),
                               {"kind": "dirac", "d": d, "l": l, "alpha": alpha,
                                "beta": beta})


def _psi_from_zeta(zeta, q, gMX, tau):
    """Adjoint functional of the discrete adjoint ``zeta_i X`` (levels >= 2).

    Level 1 is forced by the one-level kernel of the forcing-to-state map and
    the offset level is chosen so that the full integral vanishes.
    """
    from .control import cumulative_trapezoid_T
    N = zeta.size - 3
    s = np.zeros(N + 1)
    s[2:] = q * gMX * (zeta[2:N + 1] + 2.0 * zeta[3:N + 2] + zeta[4:N + 3])
    s[1] = q * gMX * (2.0 * zeta[2] + zeta[3])
    s[0] = -np.sum(s[1:])
    omega = trapezoid_weights(N + 1, tau)
    return s, cumulative_trapezoid_T(s[None, :], tau)[0] / omega


def _w_from_zeta(ops, zeta, s0, Xi, MX, gMX, tau):
    """Desired-state correction whose discrete adjoint is ``zeta_i X``."""
    N = zeta.size - 3
    q = 0.25 * tau * tau
    omega = trapezoid_weights(N + 1, tau)
    z1 = MX * (s0 / gMX - q * zeta[2]) / (2.0 * q)
    Z = zeta[:, None] * Xi[None, :]
    Z[1] = z1
    a = np.zeros((N + 1, Xi.size))
    a[2:] = (ops.E @ (Z[2:N + 1] + Z[4:N + 3]).T - ops.P @ Z[3:N + 2].T).T
    a[1] = z1 - ops.P @ Z[2] + ops.E @ Z[3]
    w = np.zeros((N + 1, Xi.size))
    w[1:] = ops.mass_solve(a[1:]) / omega[1:, None]
    w[0] = 2.0 * w[1] - w[2]  # not seen by the adjoint; smooth extension
    return ops.extend(w)


def _discrete_exact_target(grid, g, X, z_time, peaks, alpha, width=0.15):
    """Desired-state correction with prescribed discrete adjoint peaks.

    The discrete adjoint state is ``zeta_i X`` with ``zeta`` the sampled time
    profile ``z_time`` plus smooth local corrections around each peak node.
    The corrections make ``psi`` equal to ``sign * alpha`` at the peak nodes
    with symmetric neighbours, so the peaks are discrete local extrema.

    Parameters
    ----------
    z_time : ndarray, shape (nt,)
        Time profile of the adjoint, up to scaling.
    peaks : list of (int, float)
        Node index and sign of each prescribed extremum.

    Returns
    -------
    w : ndarray, shape (nt, n_nodes)
    psi : ndarray, shape (nt,)
        The adjoint functional realized by ``L^* w``.
    """
    from .fem import assemble
    ops = assemble(grid)
    tau = grid.tau
    t = grid.times
    N = grid.nt - 1
    q = 0.25 * tau * tau
    Xi = ops.restrict(X)
    MX = ops.M @ Xi
    gMX = float(ops.restrict(g) @ MX)
    if gMX == 0.0:
        raise ValidationError("adjoint profile is orthogonal to g")

    def padded(prof):
        zeta = np.zeros(N + 3)
        zeta[2:N + 1] = prof[2:]
        return zeta

    zeta = padded(z_time)
    _, psi = _psi_from_zeta(zeta, q, gMX, tau)
    zeta *= alpha / max(abs(psi[k]) for k, _ in peaks)

    basis = []
    for k, _ in peaks:
        r = (t - t[k]) / width
        basis.append(padded(bump_d1(r) / width))
        basis.append(padded((bump(r) + r * bump_d1(r)) / width))
    responses = [_psi_from_zeta(b, q, gMX, tau)[1] for b in basis]

    def conditions(p):
        return np.array([v for k, _ in peaks for v in (p[k], p[k + 1] - p[k - 1])])

    target = np.array([v for _, sign in peaks for v in (sign * alpha, 0.0)])
    base = conditions(_psi_from_zeta(zeta, q, gMX, tau)[1]) - target
    sens = np.column_stack([conditions(r) for r in responses])
    coef = np.linalg.solve(sens, -base)
    zeta = zeta + sum(c * b for c, b in zip(coef, basis))
    s, psi = _psi_from_zeta(zeta, q, gMX, tau)

    off = np.ones(grid.nt, dtype=bool)
    off[[k for k, _ in peaks]] = False
    if np.max(np.abs(psi[off])) >= alpha:
        raise ValidationError("time grid too coarse: adjoint exceeds alpha off the jumps")
    return _w_from_zeta(ops, zeta, s[0], Xi, MX, gMX, tau), psi


def build_dirac_example_discrete(d, l, alpha, grid: Grid) -> ManufacturedProblem:
    """Jump example that is exact for the discrete problem.

    Each atom is moved to its nearest time node ``k_n``; the discrete
    minimizer has ``v = c_n / tau`` at ``k_n`` and ``c = 0``.  The discrete
    adjoint is the sampled closed-form one, composed with a piecewise linear
    time warp that maps ``t_{k_n}`` onto the atom and corrected by smooth
    local terms, so ``|psi| = alpha`` exactly at the jump nodes and
    ``|psi| < alpha`` elsewhere.  ``y_d`` is built from that adjoint, which
    makes the first-order conditions hold to rounding error.
    """
    base = build_dirac_example(d, l, alpha, grid)
    tau = grid.tau
    t = grid.times
    atoms = base.exact_control.components[0].atoms
    nodes = [int(np.floor(loc / tau + 0.5)) for loc, _ in atoms]
    if len(set(nodes)) != len(nodes) or min(nodes) < 2 or max(nodes) > grid.nt - 3:
        raise ValidationError("time grid too coarse to separate the jumps")
    knots_src = np.r_[0.0, [t[k] for k in nodes], grid.T]
    knots_dst = np.r_[0.0, [loc for loc, _ in atoms], grid.T]
    warp = np.interp(t, knots_src, knots_dst)
    slope = np.interp(t, 0.5 * (knots_src[1:] + knots_src[:-1]),
                      np.diff(knots_dst) / np.diff(knots_src))
    a = l * np.pi
    z_time = np.sin(a * warp) * np.sin(a * warp / 2.0) * slope
    peaks = [(k, -np.sign(c)) for k, (_, c) in zip(nodes, atoms)]

    X = np.prod(np.cos(np.pi * grid.coords / 2.0), axis=1)
    g = base.data.g
    w, psi = _discrete_exact_target(grid, g[0], X, z_time, peaks, alpha)
    v = np.zeros((1, grid.nt))
    for k, (_, weight) in zip(nodes, atoms):
        v[0, k] = weight / tau
    dc = DerivativeControl(v, np.zeros(1))
    from .control import control_values, apply_S_tilde
    from .fem import inner_h
    u = control_values(dc, tau)
    zeros = np.zeros((grid.nt, grid.n_nodes))
    provisional = ProblemData(grid, g, [alpha], SpaceTimeField(zeros, grid))
    yd = apply_S_tilde(provisional, u).values - w
    yd[:, grid.boundary_mask] = 0.0
    data = ProblemData(grid, g, [alpha], SpaceTimeField(yd, grid))
    cost = 0.5 * inner_h(data.operators, w, w) + alpha * sum(abs(c) for _, c in atoms)
    meta = dict(base.metadata)
    meta.update(kind="dirac-discrete", jump_nodes=nodes)
    return ManufacturedProblem(data, base.exact_control, psi[None, :], base.exact_cost,
                               meta, discrete_control=dc, discrete_cost=cost)


# ---------------------------------------------------------------------------
# smooth plateau recipe and the Cantor example
# ---------------------------------------------------------------------------

def _bump_profile(coords, center, radius):
    z = (coords - center[None, :]) / radius
    vals = bump(z)
    return np.prod(vals, axis=1)


def _bump_laplacian(coords, center, radius):
    z = (coords - center[None, :]) / radius
    b0 = bump(z)
    b2 = bump_d2(z) / radius ** 2
    lap = np.zeros(coords.shape[0])
    for k in range(coords.shape[1]):
        term = b2[:, k].copy()
        for i in range(coords.shape[1]):
            if i != k:
                term *= b0[:, i]
        lap += term
    return lap


def _check_support(ec, plateaus, eps, tol):
    """Each atom / Cantor increase must sit where the plateau sign matches."""
    flat = [(a + eps, b - eps, sign) for a, b, sign in plateaus]

    def sign_at(lo, hi):
        for a, b, sign in flat:
            if lo >= a - tol and hi <= b + tol:
                return sign
        return 0

    for comp in ec.components:
        for loc, w in comp.atoms:
            if w == 0.0:
                continue
            s = sign_at(loc, loc)
            if s == 0 or np.sign(w) != s:
                raise ValidationError(f"atom at t={loc} with weight {w} is not on a "
                                      f"plateau of matching sign")
        for piece in comp.cantor_pieces:
            lo, hi = piece.increase_support
            s = sign_at(lo, hi)
            want = np.sign(piece.scale) * (1 if piece.orientation == "rising" else -1)
            if s == 0 or want != s:
                raise ValidationError(f"Cantor piece on [{piece.a}, {piece.b}] is not "
                                      f"inside a plateau of matching sign")
        if comp.density:
            raise ValidationError("density parts are not supported by the plateau recipe")


def build_plateau_example(grid: Grid, plateaus, eps, exact_control: ExactControl,
                          g_scale=1.0, g_half_width=0.5, f_radius=1.0,
                          alpha=None, laplacian="discrete",
                          kind="plateau") -> ManufacturedProblem:
    """Generic smooth-plateau construction with one control component.

    ``p_1 = -z * ptilde`` where ``ptilde`` is a signed mollified sum of plateau
    indicators, ``z = int f g`` and ``f`` a tensor bump centred in the box.
    The control derivative must be positive on ``+1`` plateaus and negative
    on ``-1`` plateaus (shrunk by ``eps``).

    With no plateaus the problem degenerates to ``y_d = S(u)``; ``alpha``
    must then be given.

    ``laplacian="discrete"`` replaces ``Laplace f`` by ``-M^{-1} A f``.  Then
    ``h(t) f`` solves the space-discrete adjoint equation exactly and only the
    time discretization error remains; ``"exact"`` uses the analytic Laplacian.
    """
    if laplacian not in ("discrete", "exact"):
        raise ValidationError("laplacian must be 'discrete' or 'exact'")
    plateaus = [(float(a), float(b), int(np.sign(s))) for a, b, s in plateaus]
    if any(s == 0 for _, _, s in plateaus):
        raise ValidationError("plateau signs must be nonzero")
    if exact_control.m != 1:
        raise ValidationError("the plateau recipe builds single-component problems")
    exact_control.validate(grid.T)
    x = grid.coords
    center = 0.5 * (np.array(grid.space_lo) + np.array(grid.space_hi))
    if np.any(center - f_radius <= np.array(grid.space_lo) - 1e-12) or \
            np.any(center + f_radius >= np.array(grid.space_hi) + 1e-12):
        raise ValidationError("bump profile must fit inside the box")
    g = box_indicator(x, g_half_width, center, g_scale)[None, :]
    t = grid.times

    if plateaus:
        validate_plateaus(plateaus, eps, grid.T)
        _check_support(exact_control, plateaus, eps, 1e-9 * grid.T)
        f = _bump_profile(x, center, f_radius)
        if laplacian == "exact":
            lap_f = _bump_laplacian(x, center, f_radius)
        else:
            from .fem import assemble
            ops = assemble(grid)
            lap_f = -ops.extend(ops.mass_solve(ops.A @ ops.restrict(f)))
        z = _discrete_pairing(grid, f, g[0])
        if z == 0.0:
            raise ValidationError("int f g vanishes; choose a different profile")
        if alpha is None:
            alpha = abs(z)
        h = mollified_plateau(t, eps, plateaus, order=1)
        h2 = mollified_plateau(t, eps, plateaus, order=3)
        w_phi = np.outer(h2, f) - np.outer(h, lap_f)
        ptilde = mollified_plateau(t, eps, plateaus, order=0)
        p1 = (-z * ptilde)[None, :]
        # rescale so that the plateaus sit exactly at +-alpha
        scale = alpha / abs(z)
        w_phi *= scale
        p1 *= scale
    else:
        if exact_control.components[0].atoms or exact_control.components[0].cantor_pieces:
            raise ValidationError("a control with jumps needs plateaus to be optimal")
        if alpha is None:
            raise ValidationError("alpha is required when no plateaus are given")
        z = 0.0
        w_phi = np.zeros((grid.nt, grid.n_nodes))
        p1 = np.zeros((1, grid.nt))

    data = _assemble_problem(grid, g, [alpha], w_phi, exact_control)
    return ManufacturedProblem(data, exact_control, p1, None,
                               {"kind": kind, "plateaus": plateaus, "eps": eps,
                                "z": z, "alpha": float(alpha), "g_scale": g_scale})


CANTOR_PLATEAUS = ((0.5, 2.0, 1), (3.0, 4.5, -1))
CANTOR_EPS = 0.28


def cantor_control(rise=(0.8, 2.14), fall=(2.85, 4.2), scale=10.0):
    return ExactControl((ControlComponent(cantor_pieces=(
        CantorPiece(rise[0], rise[1], scale, "rising"),
        CantorPiece(fall[0], fall[1], scale, "falling"))),))


def build_cantor_example(grid: Grid, params=None) -> ManufacturedProblem:
    """Cantor staircase control on a 2D box (default ``[-2, 2]^2``, ``T = 5``).

    ``params`` may override ``plateaus``, ``eps``, ``rise``, ``fall``,
    ``scale``, ``g_scale`` and ``g_half_width``.
    """
    params = dict(params or {})
    known = {"plateaus", "eps", "rise", "fall", "scale", "g_scale", "g_half_width"}
    extra = set(params) - known
    if extra:
        raise ValidationError(f"unknown Cantor parameters: {sorted(extra)}")
    ec = cantor_control(params.get("rise", (0.8, 2.14)), params.get("fall", (2.85, 4.2)),
                        params.get("scale", 10.0))
    prob = build_plateau_example(grid, params.get("plateaus", CANTOR_PLATEAUS),
                                 params.get("eps", CANTOR_EPS), ec,
                                 g_scale=params.get("g_scale", 10.0),
                                 g_half_width=params.get("g_half_width", 0.5),
                                 kind="cantor")
    return prob


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def limit_residual(data, psi, psi0):
    """``lim_{gamma -> 0} gamma F_gamma`` at a control with bounded derivative.

    First block: the excess ``(|psi| - alpha)_+`` (trapezoidal L2 norm), second
    block: ``psi(0)`` (with ``kappa = 0``).
    """
    omega = data.geometry.time_weights
    excess = np.maximum(np.abs(psi) - data.alpha[:, None], 0.0)
    return float(np.sqrt(np.sum(omega * excess ** 2) + np.sum(psi0 ** 2)))


def verify_single(problem: ManufacturedProblem):
    """Error triple at one resolution: (max|psi - p1|, max|psi| - alpha, limit residual)."""
    data = problem.data
    u = evaluate_exact_control(problem.exact_control, data.geometry)
    adj = adjoint_at_control_values(data, u)
    err = float(np.max(np.abs(adj.psi - problem.exact_adjoint)))
    excess = float(np.max(np.max(np.abs(adj.psi), axis=1) - data.alpha))
    return {"adjoint_error": err, "sup_excess": excess,
            "limit_residual": limit_residual(data, adj.psi, adj.psi0),
            "psi": adj.psi, "psi0": adj.psi0}


def verify_manufactured(builder, grid: Grid, levels=3):
    """Refinement study for a problem builder.

    Parameters
    ----------
    builder : callable
        ``builder(grid) -> ManufacturedProblem``.
    grid : Grid
        Coarsest grid; each level halves all space and time cells.
    levels : int

    Returns
    -------
    dict with per-level lists ``nt``, ``adjoint_error``, ``sup_excess``,
    ``limit_residual`` and observed orders of the adjoint error.
    """
    rows = {"nt": [], "nx": [], "adjoint_error": [], "sup_excess": [], "limit_residual": []}
    g = grid
    for _ in range(levels):
        res = verify_single(builder(g))
        rows["nt"].append(g.nt)
        rows["nx"].append(g.nx)
        for key in ("adjoint_error", "sup_excess", "limit_residual"):
            rows[key].append(res[key])
        g = g.refined(2)
    err = np.array(rows["adjoint_error"])
    with np.errstate(divide="ignore", invalid="ignore"):
        rows["orders"] = list(np.log2(err[:-1] / err[1:]))
    return rows
