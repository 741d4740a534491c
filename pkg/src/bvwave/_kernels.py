"""Hot loops of the three-level wave time stepper.

Two interchangeable backends live here: numba-compiled kernels and a plain
numpy/scipy path.  The backend is picked once at import time from the
``BVWAVE_NUMBA`` environment variable (``0``/``false``/``off`` disables numba).
Both produce identical results up to floating point reassociation.
"""

import os

import numpy as np
import scipy.linalg as sla

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency
    numba = None


def _numba_requested():
    flag = os.environ.get("BVWAVE_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


USE_NUMBA = numba is not None and _numba_requested()


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True, fastmath=True)
    def _csr_matvec_acc(indptr, indices, data, x, out, scale):
        for i in range(out.shape[0]):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * x[indices[k]]
            out[i] += scale * acc

    @numba.njit(cache=True, fastmath=True)
    def _band_solve_inplace(rows, cols, b):
        # rows[i, d] = L[i, i - d] and cols[i, d] = L[i + d, i] for the lower
        # band Cholesky factor L; both are contiguous along d.
        bw = rows.shape[1] - 1
        n = b.shape[0]
        for i in range(n):
            acc = b[i]
            top = i if i < bw else bw
            for d in range(1, top + 1):
                acc -= rows[i, d] * b[i - d]
            b[i] = acc / rows[i, 0]
        for i in range(n - 1, -1, -1):
            acc = b[i]
            top = n - 1 - i if n - 1 - i < bw else bw
            for d in range(1, top + 1):
                acc -= cols[i, d] * b[i + d]
            b[i] = acc / cols[i, 0]

    @numba.njit(cache=True, fastmath=True)
    def _sweep_numba(Y, S, start, stop, p_ptr, p_idx, p_val,
                     e_ptr, e_idx, e_val, rows, cols):
        n = Y.shape[1]
        rhs = np.empty(n)
        for step in range(start, stop):
            for i in range(n):
                rhs[i] = S[step + 1, i]
            _csr_matvec_acc(p_ptr, p_idx, p_val, Y[step], rhs, 1.0)
            _csr_matvec_acc(e_ptr, e_idx, e_val, Y[step - 1], rhs, -1.0)
            _band_solve_inplace(rows, cols, rhs)
            for i in range(n):
                Y[step + 1, i] = rhs[i]


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _sweep_numpy(Y, S, start, stop, P, E, chol):
    for step in range(start, stop):
        rhs = S[step + 1] + P @ Y[step] - E @ Y[step - 1]
        Y[step + 1] = sla.cho_solve_banded((chol, True), rhs,
                                           check_finite=False)


def _band_layouts(chol):
    """Row- and column-contiguous copies of a LAPACK lower band factor."""
    bw, n = chol.shape[0] - 1, chol.shape[1]
    cols = np.ascontiguousarray(chol.T)
    rows = np.zeros((n, bw + 1))
    for d in range(bw + 1):
        rows[d:, d] = chol[d, : n - d]
    return rows, cols


def three_level_sweep(Y, S, start, stop, P, E, chol, use_numba=None):
    """Advance ``E y[n+1] = P y[n] - E y[n-1] + S[n+1]`` in place.

    Parameters
    ----------
    Y : ndarray, shape (nt, n)
        Time levels; rows ``start - 1`` and ``start`` must be filled.
        Rows ``start + 1 .. stop`` are overwritten.
    S : ndarray, shape (nt, n)
        Source terms, indexed by the level being computed.
    P, E : scipy.sparse.csr_matrix
        Explicit and implicit operators of the recurrence.
    chol : ndarray
        Lower band Cholesky factor of ``E`` (LAPACK layout).
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    if stop <= start:
        return Y
    if use_numba:
        rows, cols = _band_layouts(chol)
        _sweep_numba(Y, S, start, stop, P.indptr, P.indices, P.data,
                     E.indptr, E.indices, E.data, rows, cols)
    else:
        _sweep_numpy(Y, S, start, stop, P, E, chol)
    return Y


def band_cholesky(banded_lower):
    """Lower band Cholesky factor (LAPACK ``pbtrf``) of a SPD band matrix."""
    return sla.cholesky_banded(banded_lower, lower=True)


def band_solve(chol, b):
    """Solve with a factor returned by :func:`band_cholesky`; ``b`` may be 2-D."""
    return sla.cho_solve_banded((chol, True), b, check_finite=False)


def to_lower_band(A, bw):
    """Pack the lower ``bw`` diagonals of a sparse symmetric matrix."""
    n = A.shape[0]
    ab = np.zeros((bw + 1, n))
    A = A.tocsr()
    for k in range(bw + 1):
        ab[k, : n - k] = A.diagonal(-k)
    return ab
