"""Discrete gradients and their linearization matrices.

A discrete gradient G(y0, y1) satisfies the two defining conditions

    <G(y0, y1), y1 - y0> = H(y1) - H(y0)      (exact, by telescoping)
    G(y, y) = grad H(y)                        (consistency)

The coordinate-increment gradient differences one coordinate at a time in
the fixed ordering y = (x^1..x^m, p^1..p^m); its symmetrization averages
the two argument orders.  A raw difference quotient with increment dy
carries round-off noise of order eps * |H| / dy, which below dy ~ 1e-4
exceeds the solver tolerances this package runs at, so component j
switches to the Taylor form dH/dy^j + H_jj * dy/2 (evaluated at the
partially advanced state) once the coordinate increment falls below
1e-4 * (1 + |y0^j|).  That keeps the telescoping identity intact to
|H'''| dy^3 / 6 <= ~3e-13 while removing the cancellation noise; at
dy = 0 it reduces to the exact limit, the analytic partial derivative.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NonFinite
from .model import HamiltonianSystem

_TAYLOR_REL = 1e-4


def _check_pair(sys, y0, y1):
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    d = 2 * sys.m
    if y0.shape != (d,) or y1.shape != (d,):
        raise DimensionMismatch(f"states must have length {d}")
    if not (np.all(np.isfinite(y0)) and np.all(np.isfinite(y1))):
        raise NonFinite("state contains non-finite entries")
    return y0, y1


# mask[i, j] == True selects the advanced coordinate j < i, so
# rows[i] = (y1^1 .. y1^i, y0^{i+1} .. y0^d); rows[0] = y0, rows[d] = y1
_MASKS: dict = {}


def _mask(d):
    m = _MASKS.get(d)
    if m is None:
        m = np.tril(np.ones((d + 1, d), dtype=bool), -1)
        _MASKS[d] = m
    return m


def _hatted_states(y0, y1):
    return np.where(_mask(y0.shape[0]), y1, y0)


def _increment_core(sys, y0, y1):
    """Gradient plus the smallest raw-quotient denominator (for the noise
    floor of the implicit solver)."""
    rows = _hatted_states(y0, y1)
    hvals = sys.energy_rows(rows)
    dy = y1 - y0
    small = np.abs(dy) < _TAYLOR_REL * (1.0 + np.abs(y0))
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (hvals[1:] - hvals[:-1]) / dy
    dmin = np.inf
    if small.any():
        for j in np.nonzero(small)[0]:
            base = rows[j]
            g[j] = sys.grad_y(base)[j] + 0.5 * sys.hess_yy(base)[j, j] * dy[j]
        if not small.all():
            dmin = float(np.min(np.abs(dy[~small])))
    else:
        dmin = float(np.min(np.abs(dy)))
    return g, dmin


def _symmetric_core(sys, y0, y1):
    # one batched energy evaluation covers both argument orders
    mask = _mask(y0.shape[0])
    rows_f = np.where(mask, y1, y0)
    rows_b = np.where(mask, y0, y1)
    hvals = sys.energy_rows(np.concatenate([rows_f, rows_b]))
    k = rows_f.shape[0]
    dy = y1 - y0
    small = np.abs(dy) < _TAYLOR_REL * (1.0 + np.abs(y0))
    if small.any():
        gf, d1 = _increment_core(sys, y0, y1)
        gb, d2 = _increment_core(sys, y1, y0)
        return 0.5 * (gf + gb), min(d1, d2)
    gf = (hvals[1:k] - hvals[: k - 1]) / dy
    gb = (hvals[k + 1 :] - hvals[k : -1]) / (-dy)
    return 0.5 * (gf + gb), float(np.min(np.abs(dy)))


def increment_gradient(sys: HamiltonianSystem, y0, y1):
    """Coordinate-increment discrete gradient of H between y0 and y1."""
    y0, y1 = _check_pair(sys, y0, y1)
    return _increment_core(sys, y0, y1)[0]


def symmetric_gradient(sys: HamiltonianSystem, y0, y1):
    """Symmetrized coordinate-increment gradient,
    (G(y0, y1) + G(y1, y0)) / 2; invariant under argument swap."""
    y0, y1 = _check_pair(sys, y0, y1)
    return _symmetric_core(sys, y0, y1)[0]


def gradient_identity_residual(sys: HamiltonianSystem, y0, y1, g):
    """Defect of the defining identity <g, y1 - y0> - (H(y1) - H(y0))."""
    y0, y1 = _check_pair(sys, y0, y1)
    return float(g @ (y1 - y0) - (sys.energy_y(y1) - sys.energy_y(y0)))


def linearization_matrices(sys: HamiltonianSystem, y_bar):
    """Matrices (A, B, R) describing the increment gradient near y_bar.

    With nu = y - y_bar the gradient expands as
    G(y0, y1) = grad H + A nu1 + B nu0 + O(nu^2), where A is the lower
    triangle of the Hessian with halved diagonal, B = A.T, and R = A - B
    is antisymmetric.  A + B recovers the full Hessian.
    """
    y_bar = np.asarray(y_bar, dtype=float)
    hyy = sys.hess_yy(y_bar)
    a = np.tril(hyy, -1) + 0.5 * np.diag(np.diag(hyy))
    b = a.T
    return a, b, a - b
