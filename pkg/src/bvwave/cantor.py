"""Cantor function and smooth plateau utilities used by the test problems."""

import numpy as np
from scipy import integrate

from .errors import ValidationError

_CANTOR_DEPTH = 64


def _cantor_scalar(x):
    # floats are dyadic rationals, so the ternary digits are extracted exactly
    num, den = float(x).as_integer_ratio()
    if num == den:
        return 1.0
    value, weight = 0.0, 0.5
    for _ in range(_CANTOR_DEPTH):
        if num == 0:
            break
        num *= 3
        digit, num = divmod(num, den)
        if digit == 1:
            return value + weight
        if digit == 2:
            value += weight
        weight *= 0.5
    return value


def cantor_function(t):
    """Evaluate the Cantor (devil's staircase) function on ``[0, 1]``.

    Ternary digits of ``t`` are scanned until the first digit 1; each leading
    digit 2 contributes a binary 1.  At most 64 digits are read.  Digits are
    computed in exact integer arithmetic.

    Parameters
    ----------
    t : float or array_like
        Points in ``[0, 1]``.

    Returns
    -------
    float or ndarray
    """
    arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValidationError("cantor_function is defined on [0, 1] only")
    if arr.ndim == 0:
        return _cantor_scalar(arr)
    out = np.fromiter((_cantor_scalar(x) for x in arr.ravel()), dtype=float, count=arr.size)
    return out.reshape(arr.shape)


# ---------------------------------------------------------------------------
# normalized bump mollifier
# ---------------------------------------------------------------------------

def bump(x):
    """``exp(-1/(1-x^2))`` on ``(-1, 1)``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (1.0 - xi * xi))
    return out


def bump_d1(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    q = 1.0 - xi * xi
    out[inside] = -2.0 * xi / q**2 * np.exp(-1.0 / q)
    return out


def bump_d2(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    q = 1.0 - xi * xi
    out[inside] = (4.0 * xi**2 / q**4 - 2.0 / q**2 - 8.0 * xi**2 / q**3) \
        * np.exp(-1.0 / q)
    return out


def bump_d3(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    q = 1.0 - xi * xi
    # d/dx of (4x^2 q^-4 - 2 q^-2 - 8 x^2 q^-3) e^{-1/q}, with q' = -2x
    poly = 4.0 * xi**2 / q**4 - 2.0 / q**2 - 8.0 * xi**2 / q**3
    dpoly = (8.0 * xi / q**4 + 32.0 * xi**3 / q**5 - 8.0 * xi / q**3
             - 16.0 * xi / q**3 - 48.0 * xi**3 / q**4)
    out[inside] = (dpoly - 2.0 * xi / q**2 * poly) * np.exp(-1.0 / q)
    return out


_BUMP_MASS = integrate.quad(lambda s: float(bump(s)), -1.0, 1.0,
                            epsabs=1e-14, epsrel=1e-14)[0]


def mollifier(x, eps, order=0):
    """Normalized bump ``phi_eps`` (unit mass, support ``(-eps, eps)``) or a derivative."""
    fn = (bump, bump_d1, bump_d2, bump_d3)[order]
    return fn(np.asarray(x, dtype=float) / eps) / (_BUMP_MASS * eps ** (order + 1))


def _bump_cdf_scalar(s):
    if s <= -1.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    val = integrate.quad(lambda r: float(bump(r)), -1.0, s,
                         epsabs=1e-13, epsrel=1e-12)[0]
    return val / _BUMP_MASS


def mollifier_cdf(x, eps):
    """``int_{-inf}^x phi_eps`` by adaptive quadrature."""
    x = np.asarray(x, dtype=float)
    flat = np.array([_bump_cdf_scalar(s) for s in (x / eps).ravel()])
    return flat.reshape(x.shape)


def validate_plateaus(intervals, eps, T):
    """Check that mollified plateaus stay inside ``(0, T)`` and do not touch."""
    if eps <= 0:
        raise ValidationError("mollifier width eps must be positive")
    spans = sorted((float(a), float(b)) for a, b, _ in intervals)
    for a, b in spans:
        if not b > a:
            raise ValidationError(f"degenerate plateau interval [{a}, {b}]")
        if a - eps <= 0.0 or b + eps >= T:
            raise ValidationError(
                f"plateau [{a}, {b}] widened by eps={eps} leaves (0, {T})")
    for (a0, b0), (a1, b1) in zip(spans, spans[1:]):
        if b0 + eps >= a1 - eps:
            raise ValidationError(
                f"mollifier support bridges the gap between [{a0}, {b0}] and [{a1}, {b1}]")


def mollified_plateau(t, eps, intervals, order=0, T=None):
    """Signed sum of mollified indicators ``sum_k s_k (phi_eps * 1_[a_k, b_k])``.

    Parameters
    ----------
    t : float or array_like
        Evaluation times.
    eps : float
        Mollifier half width.
    intervals : sequence of (a, b, sign)
        Plateau intervals with sign +1 or -1.
    order : int
        0 gives the plateau function, 1..3 its time derivatives (closed form,
        no quadrature needed).
    T : float, optional
        Horizon used for the separation check.
    """
    if T is not None:
        validate_plateaus(intervals, eps, T)
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for a, b, sign in intervals:
        if order == 0:
            out += sign * (mollifier_cdf(t - a, eps) - mollifier_cdf(t - b, eps))
        else:
            out += sign * (mollifier(t - a, eps, order - 1)
                           - mollifier(t - b, eps, order - 1))
    return out
