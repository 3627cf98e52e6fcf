"""Problem definitions: vector fields, canonical Hamiltonian systems and
reference-point policies, plus the built-in problem registry used by the
CLI and the test harness.

A Hamiltonian system carries analytic first and second derivatives of
H(x, p); nothing in the package differentiates numerically at run time, so
conservation results are not polluted by derivative error.  States are
stacked as y = (x^1..x^m, p^1..p^m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import matfun
from .errors import DimensionMismatch, DomainViolation, NonFinite
from .exact_linear import LinearSystem


@dataclass(frozen=True)
class VectorField:
    """Autonomous field y' = f(y) with Jacobian f'."""

    dim: int
    f: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class HamiltonianSystem:
    """Canonical system x' = H_p, p' = -H_x with analytic derivative blocks.

    The Hessian block conventions are hess_xx[i, j] = d^2 H / dx^i dx^j,
    hess_xp[i, j] = d^2 H / dx^i dp^j (so H_px = hess_xp.T), all symmetric
    where calculus says so.  Scalar fast paths (h_s and friends, floats in
    and out) may be supplied for m = 1 problems; the one-dimensional
    schemes use them when present.
    """

    m: int
    h: Callable[[np.ndarray, np.ndarray], float]
    grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_p: Callable[[np.ndarray, np.ndarray], np.ndarray]
    hess_xx: Callable[[np.ndarray, np.ndarray], np.ndarray]
    hess_xp: Callable[[np.ndarray, np.ndarray], np.ndarray]
    hess_pp: Callable[[np.ndarray, np.ndarray], np.ndarray]
    separable: bool = False
    name: str = ""
    # optional batched energy: rows of Y are states y = (x, p)
    h_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # optional scalar fast path (m == 1)
    h_s: Optional[Callable[[float, float], float]] = None
    hx_s: Optional[Callable[[float, float], float]] = None
    hp_s: Optional[Callable[[float, float], float]] = None
    hxx_s: Optional[Callable[[float, float], float]] = None
    hxp_s: Optional[Callable[[float, float], float]] = None
    hpp_s: Optional[Callable[[float, float], float]] = None

    # -- views over the stacked state y = (x, p) -------------------------

    def split(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (2 * self.m,):
            raise DimensionMismatch(
                f"state must have length {2 * self.m}, got {y.shape}"
            )
        return y[: self.m], y[self.m :]

    def energy_y(self, y):
        x, p = self.split(y)
        return float(self.h(x, p))

    def energy_rows(self, rows):
        """Energies of a batch of stacked states (k, 2m) -> (k,)."""
        rows = np.asarray(rows, dtype=float)
        if self.h_batch is not None:
            return self.h_batch(rows)
        return np.array([self.h(r[: self.m], r[self.m :]) for r in rows])

    def grad_y(self, y):
        x, p = self.split(y)
        return np.concatenate([self.grad_x(x, p), self.grad_p(x, p)])

    def hess_yy(self, y):
        x, p = self.split(y)
        xp = self.hess_xp(x, p)
        top = np.hstack([self.hess_xx(x, p), xp])
        bot = np.hstack([xp.T, self.hess_pp(x, p)])
        return np.vstack([top, bot])

    def as_vector_field(self):
        return VectorField(
            2 * self.m,
            lambda y: hamiltonian_field(self, y),
            lambda y: hamiltonian_jacobian(self, y),
        )


def canonical_structure(m):
    """S = [[0, I], [-I, 0]]; satisfies S.T = -S and S @ S = -I."""
    s = np.zeros((2 * m, 2 * m))
    s[:m, m:] = np.eye(m)
    s[m:, :m] = -np.eye(m)
    return s


def hamiltonian_field(sys: HamiltonianSystem, y):
    """f(y) = (H_p, -H_x) = S grad H."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise NonFinite("state contains non-finite entries")
    x, p = sys.split(y)
    return np.concatenate([sys.grad_p(x, p), -sys.grad_x(x, p)])


def hamiltonian_jacobian(sys: HamiltonianSystem, y):
    """f'(y) = [[H_px, H_pp], [-H_xx, -H_xp]] = S Hess H."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise NonFinite("state contains non-finite entries")
    x, p = sys.split(y)
    xp = sys.hess_xp(x, p)
    top = np.hstack([xp.T, sys.hess_pp(x, p)])
    bot = np.hstack([-sys.hess_xx(x, p), -xp])
    return np.vstack([top, bot])


# ---------------------------------------------------------------------------
# Reference-point policies


@dataclass(frozen=True)
class RefPolicy:
    """Where the step coefficient is evaluated: the current point, the next
    point, their midpoint, or a caller-supplied fixed state (typically an
    equilibrium)."""

    kind: str
    point: Optional[np.ndarray] = None

    _KINDS = ("current", "next", "midpoint", "fixed")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.kind == "fixed":
            if self.point is None:
                raise ValueError("fixed policy needs a point")
            object.__setattr__(
                self, "point", np.asarray(self.point, dtype=float)
            )
        elif self.point is not None:
            raise ValueError("only the fixed policy carries a point")

    @classmethod
    def current(cls):
        return cls("current")

    @classmethod
    def next(cls):
        return cls("next")

    @classmethod
    def midpoint(cls):
        return cls("midpoint")

    @classmethod
    def fixed(cls, point):
        return cls("fixed", np.asarray(point, dtype=float))


def resolve_reference(policy: RefPolicy, y_n, y_next):
    """Resolve the reference state for one step (y_next may be an iterate)."""
    y_n = np.asarray(y_n, dtype=float)
    y_next = np.asarray(y_next, dtype=float)
    if y_n.shape != y_next.shape:
        raise DimensionMismatch("y_n and y_next must have equal shapes")
    if policy.kind == "current":
        return y_n
    if policy.kind == "next":
        return y_next
    if policy.kind == "midpoint":
        return 0.5 * (y_n + y_next)
    point = policy.point
    if point.shape != y_n.shape:
        raise DimensionMismatch("fixed reference has the wrong dimension")
    return point


# ---------------------------------------------------------------------------
# Built-in problems


@dataclass(frozen=True)
class Problem:
    """A named benchmark problem: Hamiltonian system plus metadata."""

    name: str
    system: HamiltonianSystem
    y0: np.ndarray
    linear: Optional[LinearSystem] = None
    equilibria: Sequence[np.ndarray] = field(default_factory=tuple)
    # fast float-tuple field for the reference integrator
    f_tuple: Optional[Callable[[tuple], tuple]] = None

    @property
    def dim(self):
        return 2 * self.system.m

    def field(self):
        return self.system.as_vector_field()


def _pendulum():
    def h(x, p):
        return 0.5 * float(p[0]) ** 2 - math.cos(float(x[0]))

    sys = HamiltonianSystem(
        m=1,
        h=h,
        grad_x=lambda x, p: np.array([math.sin(x[0])]),
        grad_p=lambda x, p: np.array([p[0]]),
        hess_xx=lambda x, p: np.array([[math.cos(x[0])]]),
        hess_xp=lambda x, p: np.zeros((1, 1)),
        hess_pp=lambda x, p: np.ones((1, 1)),
        separable=True,
        name="pendulum",
        h_batch=lambda Y: 0.5 * Y[:, 1] ** 2 - np.cos(Y[:, 0]),
        h_s=lambda x, p: 0.5 * p * p - math.cos(x),
        hx_s=lambda x, p: math.sin(x),
        hp_s=lambda x, p: p,
        hxx_s=lambda x, p: math.cos(x),
        hxp_s=lambda x, p: 0.0,
        hpp_s=lambda x, p: 1.0,
    )
    return Problem(
        name="pendulum",
        system=sys,
        y0=np.array([2.0, 0.0]),
        equilibria=(np.array([0.0, 0.0]),),
        f_tuple=lambda y: (y[1], -math.sin(y[0])),
    )


def _quartic():
    def h(x, p):
        return 0.5 * float(p[0]) ** 2 + 0.25 * float(x[0]) ** 4 + 0.5 * float(x[0]) ** 2

    sys = HamiltonianSystem(
        m=1,
        h=h,
        grad_x=lambda x, p: np.array([x[0] ** 3 + x[0]]),
        grad_p=lambda x, p: np.array([p[0]]),
        hess_xx=lambda x, p: np.array([[3.0 * x[0] ** 2 + 1.0]]),
        hess_xp=lambda x, p: np.zeros((1, 1)),
        hess_pp=lambda x, p: np.ones((1, 1)),
        separable=True,
        name="quartic",
        h_batch=lambda Y: 0.5 * Y[:, 1] ** 2 + 0.25 * Y[:, 0] ** 4 + 0.5 * Y[:, 0] ** 2,
        h_s=lambda x, p: 0.5 * p * p + 0.25 * x**4 + 0.5 * x * x,
        hx_s=lambda x, p: x**3 + x,
        hp_s=lambda x, p: p,
        hxx_s=lambda x, p: 3.0 * x * x + 1.0,
        hxp_s=lambda x, p: 0.0,
        hpp_s=lambda x, p: 1.0,
    )
    return Problem(
        name="quartic",
        system=sys,
        y0=np.array([1.0, 0.0]),
        equilibria=(np.array([0.0, 0.0]),),
        f_tuple=lambda y: (y[1], -(y[0] ** 3 + y[0])),
    )


def _henon_heiles():
    def h(x, p):
        return (
            0.5 * (p[0] ** 2 + p[1] ** 2)
            + 0.5 * (x[0] ** 2 + x[1] ** 2)
            + x[0] ** 2 * x[1]
            - x[1] ** 3 / 3.0
        )

    def h_batch(Y):
        x1, x2, p1, p2 = Y[:, 0], Y[:, 1], Y[:, 2], Y[:, 3]
        return 0.5 * (p1**2 + p2**2) + 0.5 * (x1**2 + x2**2) + x1**2 * x2 - x2**3 / 3.0

    sys = HamiltonianSystem(
        m=2,
        h=lambda x, p: float(h(x, p)),
        grad_x=lambda x, p: np.array(
            [x[0] + 2.0 * x[0] * x[1], x[1] + x[0] ** 2 - x[1] ** 2]
        ),
        grad_p=lambda x, p: p.copy(),
        hess_xx=lambda x, p: np.array(
            [[1.0 + 2.0 * x[1], 2.0 * x[0]], [2.0 * x[0], 1.0 - 2.0 * x[1]]]
        ),
        hess_xp=lambda x, p: np.zeros((2, 2)),
        hess_pp=lambda x, p: np.eye(2),
        separable=True,
        name="henon-heiles",
        h_batch=h_batch,
    )
    return Problem(
        name="henon-heiles",
        system=sys,
        y0=np.array([0.1, 0.0, 0.0, 0.3]),
        equilibria=(np.zeros(4),),
        f_tuple=lambda y: (
            y[2],
            y[3],
            -(y[0] + 2.0 * y[0] * y[1]),
            -(y[1] + y[0] ** 2 - y[1] ** 2),
        ),
    )


_KEPLER_RMIN = 1e-8


def _kepler_r(x):
    r = math.sqrt(float(x[0]) ** 2 + float(x[1]) ** 2)
    if r < _KEPLER_RMIN:
        raise DomainViolation(f"Kepler state too close to the singularity (r={r:.3e})")
    return r


def _kepler():
    def h(x, p):
        return 0.5 * float(p[0] ** 2 + p[1] ** 2) - 1.0 / _kepler_r(x)

    def grad_x(x, p):
        r = _kepler_r(x)
        return x / r**3

    def hess_xx(x, p):
        r = _kepler_r(x)
        return np.eye(2) / r**3 - 3.0 * np.outer(x, x) / r**5

    def h_batch(Y):
        r = np.sqrt(Y[:, 0] ** 2 + Y[:, 1] ** 2)
        if np.any(r < _KEPLER_RMIN):
            raise DomainViolation("Kepler state too close to the singularity")
        return 0.5 * (Y[:, 2] ** 2 + Y[:, 3] ** 2) - 1.0 / r

    def f_tuple(y):
        r = math.sqrt(y[0] * y[0] + y[1] * y[1])
        if r < _KEPLER_RMIN:
            raise DomainViolation("Kepler state too close to the singularity")
        s = 1.0 / (r * r * r)
        return (y[2], y[3], -y[0] * s, -y[1] * s)

    sys = HamiltonianSystem(
        m=2,
        h=h,
        grad_x=grad_x,
        grad_p=lambda x, p: p.copy(),
        hess_xx=hess_xx,
        hess_xp=lambda x, p: np.zeros((2, 2)),
        hess_pp=lambda x, p: np.eye(2),
        separable=True,
        name="kepler",
        h_batch=h_batch,
    )
    # perihelion start of an e = 0.6 ellipse with semi-major axis 1
    e = 0.6
    y0 = np.array([1.0 - e, 0.0, 0.0, math.sqrt((1.0 + e) / (1.0 - e))])
    return Problem(name="kepler", system=sys, y0=y0, equilibria=(), f_tuple=f_tuple)


_COUPLED_OMEGA_SQ = np.array([[2.0, -1.0], [-1.0, 2.0]])


def _coupled_linear():
    om2 = _COUPLED_OMEGA_SQ

    def h(x, p):
        return 0.5 * float(p @ p) + 0.5 * float(x @ (om2 @ x))

    def h_batch(Y):
        x = Y[:, :2]
        p = Y[:, 2:]
        return 0.5 * np.sum(p * p, axis=1) + 0.5 * np.sum(x * (x @ om2.T), axis=1)

    sys = HamiltonianSystem(
        m=2,
        h=h,
        grad_x=lambda x, p: om2 @ x,
        grad_p=lambda x, p: p.copy(),
        hess_xx=lambda x, p: om2.copy(),
        hess_xp=lambda x, p: np.zeros((2, 2)),
        hess_pp=lambda x, p: np.eye(2),
        separable=True,
        name="coupled-linear",
        h_batch=h_batch,
    )
    a4 = np.zeros((4, 4))
    a4[:2, 2:] = np.eye(2)
    a4[2:, :2] = -om2
    return Problem(
        name="coupled-linear",
        system=sys,
        y0=np.array([1.0, 0.0, 0.0, 1.0]),
        linear=LinearSystem(a4, np.zeros(4)),
        equilibria=(np.zeros(4),),
        f_tuple=lambda y: (y[2], y[3], -2.0 * y[0] + y[1], y[0] - 2.0 * y[1]),
    )


def _nonseparable():
    # H = p^2 / (2 (1 + x^2)) + x^2 / 2; exercises every H_xp != 0 path

    def h(x, p):
        return 0.5 * float(p[0]) ** 2 / (1.0 + float(x[0]) ** 2) + 0.5 * float(x[0]) ** 2

    def hx(x, p):
        return -x[0] * p[0] ** 2 / (1.0 + x[0] ** 2) ** 2 + x[0]

    def hxx(x, p):
        u = 1.0 + x[0] ** 2
        return -(p[0] ** 2) * (1.0 - 3.0 * x[0] ** 2) / u**3 + 1.0

    sys = HamiltonianSystem(
        m=1,
        h=h,
        grad_x=lambda x, p: np.array([hx(x, p)]),
        grad_p=lambda x, p: np.array([p[0] / (1.0 + x[0] ** 2)]),
        hess_xx=lambda x, p: np.array([[hxx(x, p)]]),
        hess_xp=lambda x, p: np.array([[-2.0 * x[0] * p[0] / (1.0 + x[0] ** 2) ** 2]]),
        hess_pp=lambda x, p: np.array([[1.0 / (1.0 + x[0] ** 2)]]),
        separable=False,
        name="nonseparable",
        h_batch=lambda Y: 0.5 * Y[:, 1] ** 2 / (1.0 + Y[:, 0] ** 2) + 0.5 * Y[:, 0] ** 2,
        h_s=lambda x, p: 0.5 * p * p / (1.0 + x * x) + 0.5 * x * x,
        hx_s=lambda x, p: -x * p * p / (1.0 + x * x) ** 2 + x,
        hp_s=lambda x, p: p / (1.0 + x * x),
        hxx_s=lambda x, p: -p * p * (1.0 - 3.0 * x * x) / (1.0 + x * x) ** 3 + 1.0,
        hxp_s=lambda x, p: -2.0 * x * p / (1.0 + x * x) ** 2,
        hpp_s=lambda x, p: 1.0 / (1.0 + x * x),
    )

    def f_tuple(y):
        x, p = y
        u = 1.0 + x * x
        return (p / u, x * p * p / (u * u) - x)

    return Problem(
        name="nonseparable",
        system=sys,
        y0=np.array([1.0, 0.5]),
        equilibria=(np.array([0.0, 0.0]),),
        f_tuple=f_tuple,
    )


_REGISTRY = {
    "pendulum": _pendulum,
    "quartic": _quartic,
    "henon-heiles": _henon_heiles,
    "kepler": _kepler,
    "coupled-linear": _coupled_linear,
    "nonseparable": _nonseparable,
}


def list_problems():
    return sorted(_REGISTRY)


def get_problem(name) -> Problem:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem: {name}") from None
    return factory()
