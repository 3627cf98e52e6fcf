"""Dense matrix-function kernel for small real matrices.

All schemes in this package are assembled from a handful of analytic
matrix functions: the exponential, the phi-1 function (e^z - 1)/z and the
even functions tanh(z)/z, tan(z)/z and z*coth(z).  The even functions are
evaluated strictly as power series in the *squared* argument, so
f(M) == f(-M) holds bit-exactly and a negative squared argument
automatically selects the hyperbolic/trigonometric companion branch.

Matrices and vectors are plain float64 numpy arrays; the helpers
:func:`as_matrix` / :func:`as_vector` validate shape and finiteness at the
public entry points.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .errors import (
    ArgumentTooLarge,
    DimensionMismatch,
    NonFinite,
    SingularMatrix,
)

TANC_MARGIN = math.pi / 2 - 0.05  # pole guard for tan-based coefficients

_EVEN_TERMS = 30  # series length in the squared argument
_SERIES_CUTOFF = 0.25  # scale the squared argument below this bound


def as_matrix(a, name="matrix"):
    """Validate and return a d x d float64 array (d >= 1, finite)."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionMismatch(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFinite(f"{name} contains non-finite entries")
    return m


def as_vector(a, name="vector"):
    """Validate and return a 1-d float64 array with finite entries."""
    v = np.asarray(a, dtype=float)
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionMismatch(f"{name} must be a 1-d array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFinite(f"{name} contains non-finite entries")
    return v


# ---------------------------------------------------------------------------
# LU with partial pivoting


def lu_factor(m):
    """LU-factorize with partial pivoting.

    Returns (lu, perm, scale) where `lu` packs L (unit diagonal, below) and
    U (on and above the diagonal) and `perm` is the row permutation.  A pivot
    smaller than 1e-14 * max|m| raises :class:`SingularMatrix`; that threshold
    is the package-wide notion of "numerically singular".
    """
    a = as_matrix(m).copy()
    n = a.shape[0]
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        raise SingularMatrix("zero matrix")
    perm = np.arange(n)
    tol = 1e-14 * scale
    for k in range(n):
        i = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[i, k]) < tol:
            raise SingularMatrix(f"pivot {abs(a[i, k]):.3e} below {tol:.3e}")
        if i != k:
            a[[k, i]] = a[[i, k]]
            perm[[k, i]] = perm[[i, k]]
        if k + 1 < n:
            a[k + 1 :, k] /= a[k, k]
            a[k + 1 :, k + 1 :] -= np.outer(a[k + 1 :, k], a[k, k + 1 :])
    return a, perm, scale


def lu_solve(factored, b):
    """Solve using a factorization from :func:`lu_factor`."""
    lu, perm, _ = factored
    n = lu.shape[0]
    x = np.asarray(b, dtype=float)[perm].copy()
    one_d = x.ndim == 1
    if one_d:
        x = x[:, None]
    for k in range(1, n):
        x[k] -= lu[k, :k] @ x[:k]
    for k in range(n - 1, -1, -1):
        x[k] -= lu[k, k + 1 :] @ x[k + 1 :]
        x[k] /= lu[k, k]
    return x[:, 0] if one_d else x


def solve(m, b):
    """Solve m @ x = b by partially pivoted LU.

    `b` may be a vector or a matrix of right-hand sides.  Raises
    :class:`SingularMatrix` when a pivot falls below 1e-14 * max|m|.
    """
    a = as_matrix(m)
    rhs = np.asarray(b, dtype=float)
    if rhs.shape[0] != a.shape[0]:
        raise DimensionMismatch(
            f"rhs has {rhs.shape[0]} rows, matrix is {a.shape[0]} x {a.shape[0]}"
        )
    if not np.all(np.isfinite(rhs)):
        raise NonFinite("right-hand side contains non-finite entries")
    return lu_solve(lu_factor(a), rhs)


# ---------------------------------------------------------------------------
# Matrix exponential: scaling and squaring with the (13,13) Pade approximant

_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152


def expm(m):
    """Matrix exponential via scaling-and-squaring with the order-13
    diagonal Pade approximant."""
    a = as_matrix(m)
    n = a.shape[0]
    eye = np.eye(n)
    norm = float(np.linalg.norm(a, 1))
    s = 0
    if norm > _THETA13:
        s = max(0, int(math.ceil(math.log2(norm / _THETA13))))
        a = a / (2.0**s)
    b = _PADE13
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a @ (
        a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
        + b[7] * a6
        + b[5] * a4
        + b[3] * a2
        + b[1] * eye
    )
    v = (
        a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
        + b[6] * a6
        + b[4] * a4
        + b[2] * a2
        + b[0] * eye
    )
    r = lu_solve(lu_factor(v - u), v + u)
    for _ in range(s):
        r = r @ r
    return r


def phi1(m):
    """phi_1(M) = sum_k M^k / (k+1)!, i.e. (e^M - 1) M^{-1} continued
    analytically through singular M.

    Evaluated from the block identity expm([[M, I], [0, 0]]) =
    [[e^M, phi_1(M)], [0, I]], which needs no inversion of M.
    """
    a = as_matrix(m)
    n = a.shape[0]
    z = np.zeros((2 * n, 2 * n))
    z[:n, :n] = a
    z[:n, n:] = np.eye(n)
    return expm(z)[:n, n:]


# ---------------------------------------------------------------------------
# Even analytic functions of a matrix, as series in the squared argument
#
# tan z = sum T_k z^(2k+1) with (2k+1) T_k = sum_{i+j=k-1} T_i T_j, so
#   tanh(z)/z  = sum (-1)^k T_k (z^2)^k
#   tan(z)/z   = sum        T_k (z^2)^k
# and z coth z = 1 / tanhc(z) gives the coth coefficients by convolution.


def _series_coefficients(terms):
    t = [Fraction(1)]
    for k in range(1, terms):
        t.append(sum(t[i] * t[k - 1 - i] for i in range(k)) / (2 * k + 1))
    tanhc = [(-1) ** k * t[k] for k in range(terms)]
    xcoth = [Fraction(1)]
    for k in range(1, terms):
        xcoth.append(-sum(tanhc[i] * xcoth[k - i] for i in range(1, k + 1)))
    return (
        np.array([float(c) for c in tanhc]),
        np.array([float(c) for c in xcoth]),
    )


_TANHC_C, _XCOTH_C = _series_coefficients(_EVEN_TERMS)


def _entry_bound(w):
    return float(min(np.linalg.norm(w, 1), np.linalg.norm(w, np.inf)))


def _horner(coeffs, w, bound):
    # truncate once the remaining terms are below round-off
    n = len(coeffs)
    kmax = n - 1
    t = 1.0
    for k in range(n):
        if abs(coeffs[k]) * t < 1e-18:
            kmax = k
            break
        t *= max(bound, 1e-30)
    eye = np.eye(w.shape[0])
    c = coeffs[kmax] * eye
    for k in range(kmax - 1, -1, -1):
        c = c @ w + coeffs[k] * eye
    return c


def _scaled(w):
    bound = _entry_bound(w)
    s = 0
    while bound > _SERIES_CUTOFF:
        bound /= 4.0
        s += 1
    return w / 4.0**s if s else w, bound, s


def _tanhc_sq(w):
    # tanh(z)/z as a function of w = z^2; doubling C(4w) = C (1 + w C^2)^{-1}
    w0, bound, s = _scaled(w)
    c = _horner(_TANHC_C, w0, bound)
    eye = np.eye(w.shape[0])
    wj = w0
    for _ in range(s):
        c = lu_solve(lu_factor(eye + wj @ (c @ c)), c)
        wj = 4.0 * wj
    return c


def _xcoth_sq(w):
    # z coth z as a function of w = z^2; doubling U(4w) = U + w U^{-1}
    w0, bound, s = _scaled(w)
    u = _horner(_XCOTH_C, w0, bound)
    wj = w0
    for _ in range(s):
        u = u + lu_solve(lu_factor(u), wj)
        wj = 4.0 * wj
    return u


_KINDS = ("tanhc", "tanc", "xcothx")


def even_fn_sq(msq, kind):
    """Evaluate an even matrix function from its squared argument.

    `msq` stands for M^2; a negative-definite msq reproduces the
    trigonometric branch of the corresponding hyperbolic function and vice
    versa, which is exactly the analytic continuation the step coefficients
    need when the local frequency square changes sign.
    """
    w = as_matrix(msq, "squared argument")
    if kind == "tanhc":
        return _tanhc_sq(w)
    if kind == "tanc":
        return _tanhc_sq(-w)
    if kind == "xcothx":
        return _xcoth_sq(w)
    raise ValueError(f"unknown kind {kind!r}, expected one of {_KINDS}")


def even_fn(m, kind):
    """f(M) for f in {tanh(z)/z, tan(z)/z, z coth(z)}.

    Computed as a series in M @ M only, hence even in M by construction.
    The tan kind refuses arguments whose spectral bound reaches the first
    pole (pi/2, with a fixed 0.05 safety margin).
    """
    a = as_matrix(m)
    if kind == "tanc":
        rho = spectral_bound(a)
        if rho >= TANC_MARGIN:
            raise ArgumentTooLarge(
                f"spectral bound {rho:.6f} >= {TANC_MARGIN:.6f} for tanc"
            )
    elif kind not in _KINDS:
        raise ValueError(f"unknown kind {kind!r}, expected one of {_KINDS}")
    return even_fn_sq(a @ a, kind)


# Scalar twins of the even functions, used by the one-degree-of-freedom
# schemes.  The argument is v = z^2, of either sign.


def tanhc_w(v):
    """tanh(z)/z with z^2 = v (tan branch for v < 0)."""
    if v > 1e-8:
        s = math.sqrt(v)
        return math.tanh(s) / s
    if v < -1e-8:
        s = math.sqrt(-v)
        return math.tan(s) / s
    return 1.0 + v * (-1.0 / 3.0 + v * (2.0 / 15.0 + v * (-17.0 / 315.0)))


def xcoth_w(v):
    """z coth z with z^2 = v (cot branch for v < 0)."""
    if v > 1e-8:
        s = math.sqrt(v)
        return s / math.tanh(s)
    if v < -1e-8:
        s = math.sqrt(-v)
        return s / math.tan(s)
    return 1.0 + v * (1.0 / 3.0 + v * (-1.0 / 45.0 + v * (2.0 / 945.0)))


# ---------------------------------------------------------------------------


def spectral_bound(m):
    """A guaranteed upper bound on the spectral radius.

    Starts from min(||M||_1, ||M||_inf) and tightens it with the matrix
    powers M^2 and M^4 (rho(M) = rho(M^k)^(1/k) <= ||M^k||^(1/k)); unlike
    plain power iteration this never undershoots the spectral radius.
    """
    a = as_matrix(m)
    b = _entry_bound(a)
    if b == 0.0:
        return 0.0
    p2 = a @ a
    b = min(b, math.sqrt(_entry_bound(p2)))
    p4 = p2 @ p2
    b = min(b, _entry_bound(p4) ** 0.25)
    return b
