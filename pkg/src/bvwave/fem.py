"""Crank–Nicolson / linear finite element wave solver and its exact discrete adjoint.

The state lives on the nodes of a tensor-product grid.  Homogeneous Dirichlet
conditions are imposed by eliminating boundary rows and columns, so all
numerics happen on interior nodes and boundary values are identically zero.

The scheme, for interior vectors ``y^n``, reads::

    y^0 = y0
    y^1 = y0 + tau*y1 + tau^2/2 * (f^0 - M^{-1} A y0)
    M (y^{n+1} - 2y^n + y^{n-1}) / tau^2 + A (y^{n+1} + 2y^n + y^{n-1}) / 4
        = M (f^{n+1} + 2f^n + f^{n-1}) / 4

Space-time inner products use the trapezoidal rule in time and the mass
matrix in space.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ._kernels import band_cholesky, band_solve, three_level_sweep, to_lower_band
from .errors import SolverError, ValidationError
from .types import Grid, SpaceTimeField


def _mass_1d(n, h):
    main = np.full(n, 4.0)
    main[0] = main[-1] = 2.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") * (h / 6.0)


def _stiffness_1d(n, h):
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") * (1.0 / h)


def _kron_all(mats):
    out = mats[0]
    for mat in mats[1:]:
        out = sp.kron(out, mat, format="csr")
    return sp.csr_matrix(out)


@dataclass(frozen=True, eq=False)
class FemOperators:
    """Assembled matrices and factorizations for one grid.

    Attributes
    ----------
    grid : Grid
    M_full, A_full : scipy.sparse.csr_matrix
        Mass and stiffness over all nodes, before boundary elimination.
    interior : ndarray of int
        Indices of interior nodes.
    M, A : scipy.sparse.csr_matrix
        Interior blocks (Dirichlet elimination).
    E, P : scipy.sparse.csr_matrix
        ``M + tau^2/4 A`` and ``2M - tau^2/2 A``.
    chol_E, chol_M : ndarray
        Lower band Cholesky factors of ``E`` and ``M``.
    """

    grid: Grid
    M_full: sp.csr_matrix
    A_full: sp.csr_matrix
    interior: np.ndarray
    M: sp.csr_matrix
    A: sp.csr_matrix
    E: sp.csr_matrix
    P: sp.csr_matrix
    chol_E: np.ndarray
    chol_M: np.ndarray

    @property
    def boundary_mask(self):
        return self.grid.boundary_mask

    @property
    def n_interior(self):
        return self.interior.size

    @property
    def weights(self):
        return self.grid.time_weights

    def restrict(self, values):
        """Interior columns of a nodal array (last axis = space nodes)."""
        return np.ascontiguousarray(np.asarray(values, dtype=float)[..., self.interior])

    def extend(self, interior_values):
        """Zero-pad interior values back to all nodes."""
        interior_values = np.asarray(interior_values)
        out = np.zeros(interior_values.shape[:-1] + (self.grid.n_nodes,))
        out[..., self.interior] = interior_values
        return out

    def mass(self, x):
        """``M x`` for interior vectors stacked along the first axis."""
        return np.asarray((self.M @ np.asarray(x).T).T)

    def mass_solve(self, b):
        """``M^{-1} b`` for interior vectors stacked along the first axis."""
        b = np.asarray(b, dtype=float)
        return band_solve(self.chol_M, b.T).T


def _band_factor(mat, bw, name):
    try:
        return band_cholesky(to_lower_band(mat, bw))
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"Cholesky factorization of {name} failed: {exc}") from exc


@lru_cache(maxsize=16)
def assemble(grid: Grid) -> FemOperators:
    """Assemble tensor-product Q1 mass and stiffness matrices for ``grid``.

    Results are cached per grid, so repeated calls are free.
    """
    if not isinstance(grid, Grid):
        raise ValidationError("assemble expects a Grid")
    masses = [_mass_1d(n, h) for n, h in zip(grid.nx, grid.hx)]
    stiffs = [_stiffness_1d(n, h) for n, h in zip(grid.nx, grid.hx)]
    M_full = _kron_all(masses)
    A_full = sp.csr_matrix(M_full.shape)
    for k in range(grid.dim):
        factors = [stiffs[i] if i == k else masses[i] for i in range(grid.dim)]
        A_full = A_full + _kron_all(factors)
    A_full = sp.csr_matrix(A_full)

    interior = grid.interior
    if interior.size == 0:
        raise ValidationError("grid has no interior nodes")
    M = sp.csr_matrix(M_full[interior][:, interior])
    A = sp.csr_matrix(A_full[interior][:, interior])
    # symmetrize to remove assembly roundoff
    M = sp.csr_matrix(0.5 * (M + M.T))
    A = sp.csr_matrix(0.5 * (A + A.T))
    for mat in (M, A):
        mat.sort_indices()

    tau = grid.tau
    E = sp.csr_matrix(M + (0.25 * tau * tau) * A)
    P = sp.csr_matrix(2.0 * M - (0.5 * tau * tau) * A)
    for mat in (E, P):
        mat.sort_indices()

    # bandwidth of the interior ordering: stride of the slowest interior axis
    inner = [n - 2 for n in grid.nx]
    bw = int(np.prod(inner[1:])) + (1 if grid.dim > 1 else 0)
    coo = M.tocoo()
    bw = max(bw, int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0)
    chol_E = _band_factor(E, bw, "M + tau^2/4 A")
    chol_M = _band_factor(M, bw, "M")
    for arr in (interior,):
        arr.setflags(write=False)
    return FemOperators(grid, M_full, A_full, interior, M, A, E, P, chol_E, chol_M)


# ---------------------------------------------------------------------------
# interior-coordinate kernels
# ---------------------------------------------------------------------------

def forward_interior(ops, MF, y0=None, y1=None):
    """Run the scheme on interior coordinates.

    Parameters
    ----------
    ops : FemOperators
    MF : ndarray, shape (nt, n_interior) or None
        Mass matrix applied to the forcing at each time level.
    y0, y1 : ndarray, shape (n_interior,), optional

    Returns
    -------
    ndarray, shape (nt, n_interior)
    """
    nt = ops.grid.nt
    n = ops.n_interior
    tau = ops.grid.tau
    Y = np.zeros((nt, n))
    if MF is None:
        MF = np.zeros((nt, n))
    rhs0 = MF[0].copy()
    if y0 is not None:
        Y[0] = y0
        rhs0 -= ops.A @ y0
    Y[1] = Y[0] + 0.5 * tau * tau * band_solve(ops.chol_M, rhs0)
    if y1 is not None:
        Y[1] += tau * np.asarray(y1)
    S = np.zeros((nt, n))
    S[2:] = (0.25 * tau * tau) * (MF[2:] + 2.0 * MF[1:-1] + MF[:-2])
    three_level_sweep(Y, S, 1, nt - 1, ops.P, ops.E, ops.chol_E)
    return Y


def adjoint_weighted(ops, a):
    """Transpose of the forcing-to-state map in interior coordinates.

    For the linear map ``f -> y`` (zero initial data, ``f`` given by nodal
    interior values) and a weight array ``a`` (nt, n_interior), returns ``r``
    with ``sum_n y_n . a_n == sum_i f_i . r_i`` exactly.  With
    ``a_n = omega_n M w_n`` one has ``r_i = omega_i M (L^* w)_i``.
    """
    nt = ops.grid.nt
    N = nt - 1
    n = ops.n_interior
    tau = ops.grid.tau
    q = 0.25 * tau * tau
    # reversed sweep: Zr[k] = z_{N+2-k}, so Zr[0] = Zr[1] = 0
    pad = np.zeros((N + 3, n))
    pad[: N + 1] = a
    Sr = np.ascontiguousarray(pad[::-1])
    Zr = np.zeros((N + 3, n))
    three_level_sweep(Zr, Sr, 1, N, ops.P, ops.E, ops.chol_E)
    Z = Zr[::-1]  # Z[j] = z_j for j = 2..N+2; Z[0], Z[1] unused by the sweep
    z1 = a[1] + ops.P @ Z[2] - ops.E @ Z[3]
    Z = Z.copy()
    Z[1] = z1
    Z[0] = 0.0
    # r_i = q M (z_i [i>=2] + 2 z_{i+1} [i>=1] + z_{i+2}),  r_0 += 2q z_1
    comb = np.zeros((nt, n))
    comb[2:] += Z[2: N + 1]
    comb[1:] += 2.0 * Z[2: N + 2]
    comb += Z[2: N + 3]
    r = q * ops.mass(comb)
    r[0] += 2.0 * q * z1
    return r


# ---------------------------------------------------------------------------
# public operators on SpaceTimeField
# ---------------------------------------------------------------------------

def _field_values(f, grid, name):
    if isinstance(f, SpaceTimeField):
        if f.grid != grid:
            raise ValidationError(f"{name} lives on a different grid")
        return f.values
    arr = np.asarray(f, dtype=float)
    if arr.shape != (grid.nt, grid.n_nodes):
        raise ValidationError(f"{name} has shape {arr.shape}, expected "
                              f"{(grid.nt, grid.n_nodes)}")
    return arr


def _node_vector(x, grid, name):
    if x is None:
        return None
    arr = np.asarray(x, dtype=float)
    if arr.shape != (grid.n_nodes,):
        raise ValidationError(f"{name} has shape {arr.shape}, expected ({grid.n_nodes},)")
    return arr


def solve_wave(ops, f=None, y0=None, y1=None):
    """Solve the discrete wave equation with forcing ``f`` and initial data.

    Boundary values of ``f``, ``y0`` and ``y1`` are ignored (Dirichlet).

    Returns
    -------
    SpaceTimeField
    """
    grid = ops.grid
    MF = None
    if f is not None:
        MF = ops.mass(ops.restrict(_field_values(f, grid, "f")))
    y0 = _node_vector(y0, grid, "y0")
    y1 = _node_vector(y1, grid, "y1")
    Y = forward_interior(ops, MF,
                         None if y0 is None else ops.restrict(y0),
                         None if y1 is None else ops.restrict(y1))
    return SpaceTimeField(ops.extend(Y), grid)


def apply_L(ops, f):
    """Forcing to state with zero initial data."""
    return solve_wave(ops, f)


def apply_Q(ops, y0, y1):
    """Initial data to state with zero forcing."""
    return solve_wave(ops, None, y0, y1)


def apply_Lstar(ops, w):
    """Exact discrete adjoint of :func:`apply_L` in the space-time inner product."""
    grid = ops.grid
    W = ops.restrict(_field_values(w, grid, "w"))
    omega = grid.time_weights
    a = omega[:, None] * ops.mass(W)
    r = adjoint_weighted(ops, a)
    P = ops.mass_solve(r) / omega[:, None]
    return SpaceTimeField(ops.extend(P), grid)


def inner_h(ops, y, z):
    """Space-time inner product ``sum_i omega_i y_i^T M z_i`` over interior nodes."""
    grid = ops.grid
    Y = ops.restrict(_field_values(y, grid, "y"))
    Z = ops.restrict(_field_values(z, grid, "z"))
    return float(np.sum(grid.time_weights * np.einsum("ij,ij->i", Y, ops.mass(Z))))


def norm_h(ops, y):
    return float(np.sqrt(max(inner_h(ops, y, y), 0.0)))


def discrete_energy(ops, y):
    """Energy between consecutive levels, conserved exactly when ``f = 0``.

    ``E^{n+1/2} = 1/2 |(y^{n+1}-y^n)/tau|_M^2 + 1/8 (y^{n+1}+y^n)^T A (y^{n+1}+y^n)``

    Returns
    -------
    ndarray, shape (nt - 1,)
    """
    grid = ops.grid
    Y = ops.restrict(_field_values(y, grid, "y"))
    d = np.diff(Y, axis=0) / grid.tau
    s = Y[1:] + Y[:-1]
    kin = 0.5 * np.einsum("ij,ij->i", d, ops.mass(d))
    pot = 0.125 * np.einsum("ij,ij->i", s, np.asarray((ops.A @ s.T).T))
    return kin + pot
