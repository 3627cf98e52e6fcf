"""Exact discretization of linear constant-coefficient systems.

For dx/dt = A x + b the update

    x_{n+1} = x_n + h phi_1(h A) (A x_n + b)

reproduces the flow at the grid points up to round-off for any step size,
including singular A (phi_1 is entire).  The driven harmonic oscillator
x'' + Omega^2 x = a gets its own closed form built from the even kernels
cos, sinc and (1 - cos z)/z^2, all evaluated as series in (h Omega)^2 so
no inversion of Omega is ever needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matfun
from .errors import DimensionMismatch, NonFinite, NotSymmetric


@dataclass(frozen=True)
class LinearSystem:
    """dx/dt = A x + b."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = matfun.as_matrix(self.A, "A")
        b = matfun.as_vector(self.b, "b")
        if a.shape[0] != b.shape[0]:
            raise DimensionMismatch("A and b dimensions disagree")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class HarmonicOscillator:
    """x'' + Omega^2 x = a with invertible Omega.

    `symmetric` records whether Omega equals its transpose within 1e-13;
    the conserved quadratic form exists only in that case.
    """

    omega: np.ndarray
    a: np.ndarray
    symmetric: bool = field(init=False)

    def __post_init__(self):
        om = matfun.as_matrix(self.omega, "omega")
        a = matfun.as_vector(self.a, "a")
        if om.shape[0] != a.shape[0]:
            raise DimensionMismatch("omega and a dimensions disagree")
        # invertibility is part of the contract; SingularMatrix propagates
        matfun.solve(om, np.eye(om.shape[0]))
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "a", a)
        object.__setattr__(
            self, "symmetric", bool(np.max(np.abs(om - om.T)) <= 1e-13)
        )

    @property
    def m(self):
        return self.omega.shape[0]

    def omega_sq(self):
        return self.omega @ self.omega


def _check_step(h):
    if not np.isfinite(h):
        raise NonFinite("step size must be finite")
    return float(h)


def exact_step_linear(sys: LinearSystem, x, h):
    """One exact step of dx/dt = A x + b (h of either sign, or zero)."""
    h = _check_step(h)
    x = matfun.as_vector(x, "x")
    if x.shape[0] != sys.dim:
        raise DimensionMismatch("state dimension does not match the system")
    return x + h * (matfun.phi1(h * sys.A) @ (sys.A @ x + sys.b))


def exact_delta(sys: LinearSystem, h):
    """The matrix step perturbation Delta = A^{-1} (e^{hA} - 1) = h phi_1(hA).

    Delta(0) = 0 and Delta = h I + O(h^2).
    """
    h = _check_step(h)
    return h * matfun.phi1(h * sys.A)


# Even oscillator kernels as functions of W = (h Omega)^2:
#   cos(h Omega), sinc(h Omega) = sin(z)/z, verc(h Omega) = (1 - cos z)/z^2.
# All three are entire, so scaling plus double-angle recursion converges
# for any W:  cos(2z) = 2 cos^2 - 1, sinc(2z) = sinc cos,
# verc(2z) = verc (1 + cos)/2.

_KERNEL_TERMS = 16


def _osc_kernels(w):
    bound = float(min(np.linalg.norm(w, 1), np.linalg.norm(w, np.inf)))
    s = 0
    while bound > 0.25:
        bound /= 4.0
        s += 1
    w0 = w / 4.0**s if s else w
    n = w.shape[0]
    eye = np.eye(n)
    cos = np.zeros((n, n))
    sinc = np.zeros((n, n))
    verc = np.zeros((n, n))
    term = eye.copy()
    fact = 1.0
    for k in range(_KERNEL_TERMS):
        sign = -1.0 if k % 2 else 1.0
        cos += sign / fact * term
        sinc += sign / (fact * (2 * k + 1)) * term
        verc += sign / (fact * (2 * k + 1) * (2 * k + 2)) * term
        term = term @ w0
        fact *= (2 * k + 1) * (2 * k + 2)
    for _ in range(s):
        verc = verc @ (eye + cos) / 2.0
        sinc = sinc @ cos
        cos = 2.0 * cos @ cos - eye
    return cos, sinc, verc


def exact_step_oscillator(osc: HarmonicOscillator, x, p, h):
    """One exact step of x' = p, p' = -Omega^2 x + a.

    Returns (x_next, p_next).  Uses only even functions of Omega, so the
    formulas stay finite for every invertible Omega and either sign of h.
    """
    h = _check_step(h)
    x = matfun.as_vector(x, "x")
    p = matfun.as_vector(p, "p")
    if x.shape[0] != osc.m or p.shape[0] != osc.m:
        raise DimensionMismatch("state dimension does not match the oscillator")
    om2 = osc.omega_sq()
    cos, sinc, verc = _osc_kernels(h * h * om2)
    x_next = cos @ x + h * (sinc @ p) + h * h * (verc @ osc.a)
    p_next = -h * (om2 @ (sinc @ x)) + cos @ p + h * (sinc @ osc.a)
    return x_next, p_next


def oscillator_energy(osc: HarmonicOscillator, x, p):
    """Conserved quadratic I = p.p/2 + x.Omega^2 x/2 - x.a (symmetric Omega)."""
    if not osc.symmetric:
        raise NotSymmetric("energy invariant requires a symmetric Omega")
    x = matfun.as_vector(x, "x")
    p = matfun.as_vector(p, "p")
    om2 = osc.omega_sq()
    return 0.5 * float(p @ p) + 0.5 * float(x @ (om2 @ x)) - float(x @ osc.a)
