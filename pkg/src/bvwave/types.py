"""Value types shared by the solver: grids, fields, controls and parameters.

Everything here is immutable after construction.  Array fields are stored as
read-only float64 arrays.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

from .cantor import cantor_function
from .errors import ValidationError


def _frozen_array(a, shape=None, name="array"):
    arr = np.array(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ValidationError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def trapezoid_weights(nt, tau):
    """Composite trapezoidal weights on ``nt`` uniform nodes."""
    w = np.full(nt, tau)
    w[0] = w[-1] = 0.5 * tau
    return w


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product space grid on a box plus a uniform time grid."""

    dim: int
    space_lo: Tuple[float, ...]
    space_hi: Tuple[float, ...]
    nx: Tuple[int, ...]
    T: float
    nt: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValidationError(f"dim must be 1, 2 or 3, got {self.dim}")
        for name in ("space_lo", "space_hi", "nx"):
            val = getattr(self, name)
            if np.isscalar(val):
                val = (val,) * self.dim
            val = tuple(int(v) if name == "nx" else float(v) for v in val)
            if len(val) != self.dim:
                raise ValidationError(f"{name} needs {self.dim} entries")
            object.__setattr__(self, name, val)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "nt", int(self.nt))
        if any(n < 2 for n in self.nx):
            raise ValidationError("every axis needs at least 2 nodes")
        if any(hi <= lo for lo, hi in zip(self.space_lo, self.space_hi)):
            raise ValidationError("space_hi must exceed space_lo on every axis")
        if self.nt < 3:
            raise ValidationError("nt must be at least 3")
        if not self.T > 0:
            raise ValidationError("final time T must be positive")

    @property
    def tau(self):
        return self.T / (self.nt - 1)

    @property
    def hx(self):
        return tuple((hi - lo) / (n - 1)
                     for lo, hi, n in zip(self.space_lo, self.space_hi, self.nx))

    @property
    def n_nodes(self):
        return int(np.prod(self.nx))

    @property
    def times(self):
        return np.arange(self.nt) * self.tau

    @property
    def time_weights(self):
        return trapezoid_weights(self.nt, self.tau)

    @property
    def axes(self):
        return [np.linspace(lo, hi, n)
                for lo, hi, n in zip(self.space_lo, self.space_hi, self.nx)]

    @property
    def coords(self):
        """Node coordinates, shape ``(n_nodes, dim)``, last axis fastest."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def boundary_mask(self):
        masks = np.meshgrid(*[np.r_[True, np.zeros(n - 2, bool), True]
                              for n in self.nx], indexing="ij")
        out = np.zeros(self.nx, dtype=bool)
        for m in masks:
            out |= m
        return out.ravel()

    @property
    def interior(self):
        return np.flatnonzero(~self.boundary_mask)

    def refined(self, factor=2):
        """Grid with every space and time cell split ``factor`` times."""
        return Grid(self.dim, self.space_lo, self.space_hi,
                    tuple((n - 1) * factor + 1 for n in self.nx),
                    self.T, (self.nt - 1) * factor + 1)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Nodal values over (time level, space node)."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        shape = (self.grid.nt, self.grid.n_nodes)
        object.__setattr__(self, "values",
                           _frozen_array(self.values, shape, "SpaceTimeField.values"))


@dataclass(frozen=True, eq=False)
class DerivativeControl:
    """Time derivative samples ``v`` (m, nt) and offsets ``c`` (m,)."""

    v: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError("v must have shape (m, nt)")
        object.__setattr__(self, "v", _frozen_array(v, name="v"))
        object.__setattr__(self, "c", _frozen_array(self.c, (v.shape[0],), "c"))

    @property
    def m(self):
        return self.v.shape[0]

    @classmethod
    def zeros(cls, m, nt):
        return cls(np.zeros((m, nt)), np.zeros(m))


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Discrete data of the control problem on a grid.

    ``g`` holds the nodal values of the m spatial control profiles, ``yd`` the
    desired state.  Initial displacement and velocity default to zero.
    """

    geometry: Grid
    g: np.ndarray
    alpha: np.ndarray
    yd: SpaceTimeField
    y0: Optional[np.ndarray] = None
    y1: Optional[np.ndarray] = None

    def __post_init__(self):
        grid = self.geometry
        g = np.atleast_2d(np.array(self.g, dtype=np.float64))
        m = g.shape[0]
        object.__setattr__(self, "g", _frozen_array(g, (m, grid.n_nodes), "g"))
        alpha = np.atleast_1d(np.array(self.alpha, dtype=np.float64))
        if alpha.shape == (1,) and m > 1:
            alpha = np.full(m, alpha[0])
        object.__setattr__(self, "alpha", _frozen_array(alpha, (m,), "alpha"))
        if np.any(self.alpha <= 0):
            raise ValidationError("alpha must be positive for every component")
        for name in ("y0", "y1"):
            val = getattr(self, name)
            val = np.zeros(grid.n_nodes) if val is None else val
            object.__setattr__(self, name, _frozen_array(val, (grid.n_nodes,), name))
        if not isinstance(self.yd, SpaceTimeField):
            object.__setattr__(self, "yd", SpaceTimeField(self.yd, grid))
        support = self.g != 0.0
        if np.any(~support.any(axis=1)):
            raise ValidationError("every control profile g_j must be nonzero")
        if np.any(support.sum(axis=0) > 1):
            raise ValidationError("control profiles g_j must have disjoint supports")

    @property
    def m(self):
        return self.g.shape[0]

    @cached_property
    def operators(self):
        from .fem import assemble
        return assemble(self.geometry)

    @cached_property
    def discrete(self):
        from .control import build_context
        return build_context(self)


# ---------------------------------------------------------------------------
# exact BV controls
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CantorPiece:
    """Scaled half Cantor staircase on ``[a, b]``.

    Rising pieces follow ``scale * C((t - a) / (2 (b - a)))`` and end at
    ``scale / 2``; falling pieces mirror that and drop by ``scale / 2``.
    """

    a: float
    b: float
    scale: float
    orientation: str = "rising"

    def __post_init__(self):
        if not self.b > self.a:
            raise ValidationError(f"degenerate Cantor interval [{self.a}, {self.b}]")
        if self.orientation not in ("rising", "falling"):
            raise ValidationError("orientation must be 'rising' or 'falling'")

    def contribution(self, t):
        t = np.asarray(t, dtype=float)
        width = 2.0 * (self.b - self.a)
        out = np.zeros_like(t)
        inside = (t >= self.a) & (t <= self.b)
        after = t > self.b
        if self.orientation == "rising":
            out[inside] = self.scale * cantor_function(
                np.clip((t[inside] - self.a) / width, 0.0, 1.0))
            out[after] = 0.5 * self.scale
        else:
            out[inside] = self.scale * (cantor_function(
                np.clip((self.b - t[inside]) / width, 0.0, 1.0)) - 0.5)
            out[after] = -0.5 * self.scale
        return out

    @property
    def variation(self):
        return 0.5 * abs(self.scale)

    @property
    def increase_support(self):
        """Closed interval carrying the Cantor measure of this piece."""
        span = (2.0 / 3.0) * (self.b - self.a)
        if self.orientation == "rising":
            return self.a, self.a + span
        return self.b - span, self.b


@dataclass(frozen=True)
class DensityPiece:
    """Absolutely continuous part: ``D_t u = p(t - a)`` on ``[a, b]``.

    ``coeffs`` are ascending polynomial coefficients.
    """

    a: float
    b: float
    coeffs: Tuple[float, ...]

    def __post_init__(self):
        if not self.b > self.a:
            raise ValidationError(f"degenerate density interval [{self.a}, {self.b}]")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @property
    def _poly(self):
        return np.polynomial.Polynomial(self.coeffs)

    def contribution(self, t):
        t = np.asarray(t, dtype=float)
        antider = self._poly.integ()
        s = np.clip(t, self.a, self.b) - self.a
        return antider(s) - antider(0.0)

    @property
    def variation(self):
        poly = self._poly
        length = self.b - self.a
        roots = [r.real for r in poly.roots()
                 if abs(r.imag) < 1e-12 and 0.0 < r.real < length] if poly.degree() > 0 else []
        knots = np.r_[0.0, np.sort(roots), length]
        antider = poly.integ()
        return float(sum(abs(antider(k1) - antider(k0))
                         for k0, k1 in zip(knots[:-1], knots[1:])))


@dataclass(frozen=True)
class ControlComponent:
    atoms: Tuple[Tuple[float, float], ...] = ()
    cantor_pieces: Tuple[CantorPiece, ...] = ()
    offset: float = 0.0
    density: Tuple[DensityPiece, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms",
                           tuple((float(t), float(a)) for t, a in self.atoms))
        object.__setattr__(self, "cantor_pieces", tuple(self.cantor_pieces))
        object.__setattr__(self, "density", tuple(self.density))
        spans = sorted([(p.a, p.b) for p in self.cantor_pieces]
                       + [(p.a, p.b) for p in self.density])
        for (a0, b0), (a1, b1) in zip(spans, spans[1:]):
            if a1 < b0:
                raise ValidationError("Cantor/density intervals must be pairwise disjoint")


@dataclass(frozen=True)
class ExactControl:
    """Symbolic BV control: per component atoms, Cantor pieces, density, offset."""

    components: Tuple[ControlComponent, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def m(self):
        return len(self.components)

    def validate(self, T):
        for comp in self.components:
            for loc, _ in comp.atoms:
                if not 0.0 < loc < T:
                    raise ValidationError(f"atom location {loc} outside (0, {T})")
            for piece in tuple(comp.cantor_pieces) + tuple(comp.density):
                if piece.a < 0.0 or piece.b > T:
                    raise ValidationError(f"piece [{piece.a}, {piece.b}] outside [0, {T}]")

    def evaluate(self, t, T=None):
        """Values ``u_j(t)``, shape ``(m, len(t))``; atoms count from their own location on."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if T is not None:
            self.validate(T)
        slack = 1e-12 * max(1.0, float(np.max(np.abs(t))) if t.size else 1.0)
        out = np.empty((self.m, t.size))
        for j, comp in enumerate(self.components):
            u = np.full(t.size, comp.offset)
            for loc, weight in comp.atoms:
                u += weight * (t >= loc - slack)
            for piece in comp.cantor_pieces:
                u += piece.contribution(t)
            for piece in comp.density:
                u += piece.contribution(t)
            out[j] = u
        return out


def evaluate_exact_control(ec: ExactControl, grid: Grid):
    """Sample an exact control on the time nodes of ``grid``, shape ``(m, nt)``."""
    return ec.evaluate(grid.times, T=grid.T)


def total_variation(ec: ExactControl):
    """Per-component total variation ``|D_t u_j|(I)``."""
    tv = np.zeros(ec.m)
    for j, comp in enumerate(ec.components):
        tv[j] = (sum(abs(a) for _, a in comp.atoms)
                 + sum(p.variation for p in comp.cantor_pieces)
                 + sum(p.variation for p in comp.density))
    return tv


# ---------------------------------------------------------------------------
# regularization / path parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegularizationParams:
    """Path-following and solver parameters.

    ``kappa(gamma) = c_kappa * gamma ** kappa_exp`` weights the offset term.
    """

    gamma0: float = 1.0
    nu: float = 0.1
    tol_gamma: float = 1e-8
    tol_newton: float = 1e-6
    c_kappa: float = 1.0
    kappa_exp: float = 4.0
    max_newton_iters: int = 50
    krylov_tol: float = 1e-10
    krylov_max_iters: int = 2000
    krylov_restart: int = 50
    krylov_atol: Optional[float] = None

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValidationError("gamma0 must be positive")
        if not 0.0 < self.nu < 1.0:
            raise ValidationError("nu must lie in (0, 1)")
        for name in ("tol_gamma", "tol_newton", "krylov_tol", "kappa_exp"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.krylov_atol is not None and self.krylov_atol < 0:
            raise ValidationError("krylov_atol must be nonnegative")
        if self.c_kappa < 0:
            raise ValidationError("c_kappa must be nonnegative")
        if self.max_newton_iters < 0 or self.krylov_max_iters < 1 or self.krylov_restart < 1:
            raise ValidationError("iteration limits must be positive")

    @property
    def krylov_floor(self):
        """Absolute Krylov residual floor; defaults to a quarter of ``tol_newton``."""
        return 0.25 * self.tol_newton if self.krylov_atol is None else self.krylov_atol

    def kappa(self, gamma):
        return self.c_kappa * gamma ** self.kappa_exp

    def kappa_prime(self, gamma):
        return self.c_kappa * self.kappa_exp * gamma ** (self.kappa_exp - 1.0)

    def schedule(self):
        """Regularization values visited by the path: ``gamma0 * nu**k >= tol_gamma``."""
        gammas = []
        gamma = self.gamma0
        # relative slack so that e.g. 0.1**8 still counts as reaching 1e-8
        while gamma >= self.tol_gamma * (1.0 - 1e-9):
            gammas.append(gamma)
            gamma *= self.nu
        return gammas
