"""Step maps: classical one-step rules, their locally exact modifications,
and discrete-gradient schemes for canonical Hamiltonian systems.

A scheme is (rule, reference policy, locally_exact flag).  Locally exact
rules replace the scalar step h by a matrix coefficient built from the
Jacobian at the reference point so that the scheme linearized there
reproduces the exact discretization of the linearized equation.  The
discrete-gradient rules additionally conserve the energy exactly for any
coefficient of the admissible block form, so their locally exact variants
keep conservation while gaining accuracy.

Implicit equations are solved by a damped simplified Newton iteration
with a finite-difference Jacobian (:func:`solve_implicit`).  For the
midpoint and next-point policies the coefficient is re-evaluated from the
live iterate until the converged step satisfies its defining equation
self-consistently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import matfun
from .disgrad import (
    _increment_core,
    _symmetric_core,
    increment_gradient,
    linearization_matrices,
    symmetric_gradient,
)
from .errors import (
    ArgumentTooLarge,
    ConfigError,
    DimensionMismatch,
    DomainViolation,
    IntegrationError,
    NoConvergence,
    SingularMatrix,
    ThetaFormViolation,
)
from .model import (
    HamiltonianSystem,
    Problem,
    RefPolicy,
    VectorField,
    canonical_structure,
    resolve_reference,
)

GENERIC_RULES = ("euler", "implicit-euler", "midpoint", "trapezoidal", "exp-euler")
GR_1D_RULES = ("gr1d-sym", "gr1d-incre")
GR_MULTI_RULES = ("grmulti-sym", "grmulti-incre", "grmulti-sep")
RULES = GENERIC_RULES + GR_1D_RULES + GR_MULTI_RULES

# step-size guard for tan-based coefficients: reject h * rho >= pi - 0.1,
# i.e. a spectral bound of the halved argument at pi/2 - 0.05
_TAN_GUARD = matfun.TANC_MARGIN


@dataclass(frozen=True)
class Scheme:
    """A step map: base rule, reference policy, locally exact or classical."""

    rule: str
    policy: RefPolicy = field(default_factory=RefPolicy.current)
    locally_exact: bool = False

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigError(f"unknown scheme: {self.rule}")
        if self.rule == "exp-euler":
            if not self.locally_exact:
                object.__setattr__(self, "locally_exact", True)
            if self.policy.kind != "current":
                raise ConfigError("exp-euler is defined with the current-point policy")


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-13
    max_iter: int = 50
    predictor: str = "exp-euler"  # or "euler"

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("tol must be positive and max_iter >= 1")
        if self.predictor not in ("exp-euler", "euler"):
            raise ConfigError(f"unknown predictor {self.predictor!r}")


@dataclass(frozen=True)
class StepReport:
    y_next: np.ndarray
    iterations: int
    residual: float
    theta_spectral_arg: float = 0.0


@dataclass
class Trajectory:
    """Time-stamped states with per-step solver diagnostics."""

    times: np.ndarray
    states: np.ndarray
    energies: Optional[np.ndarray]
    iterations: np.ndarray
    residuals: np.ndarray
    theta_args: np.ndarray

    @property
    def reports(self):
        return [
            StepReport(
                self.states[k + 1],
                int(self.iterations[k]),
                float(self.residuals[k]),
                float(self.theta_args[k]),
            )
            for k in range(len(self.iterations))
        ]


def _norm(v):
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


# ---------------------------------------------------------------------------
# Generic coefficient machinery


def delta_general(psi2_bar, fp, h):
    """Coefficient delta making the two-point rule with partial derivative
    psi2_bar at the diagonal locally exact:

        delta = (e^{hF'} - 1) (F' + psi2 (e^{hF'} - 1))^{-1}
              = h phi_1(hF') (1 + h psi2 phi_1(hF'))^{-1},

    the second form staying finite through singular F'.  Reductions:
    psi2 = 0 gives h phi_1(hF') (explicit Euler), psi2 = F' gives
    (1 - e^{-hF'}) F'^{-1} (implicit Euler), psi2 = F'/2 gives
    2 F'^{-1} tanh(hF'/2) (midpoint and trapezoidal rules).
    """
    psi2 = matfun.as_matrix(psi2_bar, "psi2")
    a = matfun.as_matrix(fp, "jacobian")
    if psi2.shape != a.shape:
        raise DimensionMismatch("psi2 and jacobian shapes disagree")
    p = matfun.phi1(h * a)
    eye = np.eye(a.shape[0])
    # delta = h p (1 + h psi2 p)^{-1}; solve the transposed system
    return h * matfun.solve((eye + h * psi2 @ p).T, p.T).T


def psi(rule, f, ya, yb):
    """Two-point map of the classical base rules; psi(y, y) = f(y)."""
    if rule in ("euler", "exp-euler"):
        return f(ya)
    if rule == "implicit-euler":
        return f(yb)
    if rule == "midpoint":
        return f(0.5 * (ya + yb))
    if rule == "trapezoidal":
        return 0.5 * (f(ya) + f(yb))
    raise ConfigError(f"no two-point map for rule {rule!r}")


def _phi1_apply(m, v):
    """phi_1(M) v by the vector Taylor series, falling back to the dense
    phi_1 for large arguments."""
    bound = float(min(np.linalg.norm(m, 1), np.linalg.norm(m, np.inf)))
    if bound > 0.9:
        return matfun.phi1(m) @ v
    acc = v.astype(float).copy()
    term = v.astype(float)
    k = 1
    while True:
        term = (m @ term) / (k + 1)
        acc += term
        if _norm(term) <= 1e-17 * (1.0 + _norm(acc)) or k > 40:
            return acc
        k += 1


def _predict(field: VectorField, y, h, cfg: SolverConfig):
    fy = field.f(y)
    if cfg.predictor == "euler":
        return y + h * fy
    return y + h * _phi1_apply(h * field.jac(y), fy)


# ---------------------------------------------------------------------------
# Implicit solver


def solve_implicit(residual, y_guess, cfg: SolverConfig):
    """Damped simplified Newton for r(y) = 0.

    The Jacobian is approximated by forward differences and refreshed
    every 5 iterations.  On success the accepted iterate gets one free
    polishing update, so the returned residual is usually far below the
    tolerance.  Returns (y, iterations, residual_norm).
    """
    y = np.asarray(y_guess, dtype=float).copy()
    n = y.shape[0]
    jac = None
    r = np.asarray(residual(y), dtype=float)
    rn = _norm(r)
    iters = 0
    for _ in range(cfg.max_iter):
        if rn <= cfg.tol * (1.0 + _norm(y)):
            # polish: one extra update, so the returned residual sits near
            # round-off rather than just under the tolerance
            if jac is None and rn > 0.0:
                jac = _fd_jacobian(residual, y, r)
            if jac is not None and rn > 0.0:
                try:
                    y = y - np.linalg.solve(jac, r)
                    r = np.asarray(residual(y), dtype=float)
                    rn = _norm(r)
                except np.linalg.LinAlgError:
                    pass
            return y, iters, rn
        if jac is None or iters % 5 == 0:
            jac = _fd_jacobian(residual, y, r)
        try:
            dy = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            jac = _fd_jacobian(residual, y, r)
            try:
                dy = np.linalg.solve(jac, r)
            except np.linalg.LinAlgError as exc:
                raise NoConvergence(iters, rn, f"singular solver Jacobian: {exc}")
        # damped update: backtrack while the residual grows badly
        step = 1.0
        for _ in range(4):
            y_new = y - step * dy
            r_new = np.asarray(residual(y_new), dtype=float)
            rn_new = _norm(r_new)
            if np.isfinite(rn_new) and rn_new <= max(2.0 * rn, cfg.tol):
                break
            step *= 0.5
        y, r, rn = y_new, r_new, rn_new
        iters += 1
        if not np.isfinite(rn):
            raise NoConvergence(iters, float("inf"))
    if rn <= cfg.tol * (1.0 + _norm(y)):
        return y, iters, rn
    raise NoConvergence(iters, rn)


def _fd_jacobian(residual, y, r0):
    n = y.shape[0]
    jac = np.empty((n, n))
    for j in range(n):
        eps = 1e-8 * (1.0 + abs(y[j]))
        yp = y.copy()
        yp[j] += eps
        jac[:, j] = (np.asarray(residual(yp), dtype=float) - r0) / eps
    return jac


# ---------------------------------------------------------------------------
# Generic (non-gradient) rules


def _as_field(target):
    if isinstance(target, VectorField):
        return target
    if isinstance(target, HamiltonianSystem):
        return target.as_vector_field()
    if isinstance(target, Problem):
        return target.system.as_vector_field()
    raise ConfigError(f"cannot build a vector field from {type(target).__name__}")


def _step_generic(scheme: Scheme, field: VectorField, y, h, cfg: SolverConfig):
    f = field.f
    rule = scheme.rule
    policy = scheme.policy
    y = np.asarray(y, dtype=float)

    if not scheme.locally_exact:
        if rule == "euler":
            return StepReport(y + h * f(y), 0, 0.0)
        if rule == "implicit-euler":
            res = lambda Y: Y - y - h * f(Y)
        elif rule == "midpoint":
            res = lambda Y: Y - y - h * f(0.5 * (y + Y))
        else:  # trapezoidal
            fy = f(y)
            res = lambda Y: Y - y - 0.5 * h * (fy + f(Y))
        yn, it, rn = solve_implicit(res, _predict(field, y, h, cfg), cfg)
        return StepReport(yn, it, rn)

    # Locally exact: write the defining equation with the linearization at
    # the reference point solved exactly,
    #
    #   Y = e^{hJ} y0 + h phi_1(hJ) (F(ref) - J ref) + h phi_1(hJ) G(Y),
    #
    # where G is the Taylor remainder of the rule's two-point map around
    # ref (for the implicit Euler rule the analogous form carries e^{-hJ}
    # on the left).  This is the same root as the delta-coefficient form,
    # but strongly decaying modes enter multiplicatively instead of by
    # cancellation, so the exact-discretization property survives in
    # floating point.
    def coeffs(ref):
        jac = field.jac(ref)
        fr = f(ref)
        arg = 0.0
        if rule in ("euler", "exp-euler", "implicit-euler"):
            sign = -1.0 if rule == "implicit-euler" else 1.0
            p = h * matfun.phi1(sign * h * jac)
            return {
                "E": matfun.expm(h * jac),
                "P": p,
                "aff": p @ (fr - jac @ ref),
                "jac": jac,
                "fr": fr,
                "ref": ref,
            }, arg
        arg = matfun.spectral_bound(0.5 * h * jac)
        p = h * matfun.phi1(h * jac)
        return {
            "E": matfun.expm(h * jac),
            "P": p,
            "aff": p @ (fr - jac @ ref),
            "jac": jac,
            "fr": fr,
            "ref": ref,
        }, arg

    def rem_at(c, u):
        return f(u) - c["fr"] - c["jac"] @ (u - c["ref"])

    def residual_with(c):
        if rule in ("euler", "exp-euler"):
            r0 = rem_at(c, y)
            rhs = c["E"] @ y + c["aff"] + c["P"] @ r0
            return lambda Y: Y - rhs
        if rule == "implicit-euler":

            def r_ie(Y):
                return Y - c["E"] @ (y + c["aff"] + c["P"] @ rem_at(c, Y))

            return r_ie
        if rule == "midpoint":

            def r_mp(Y):
                return Y - c["E"] @ y - c["aff"] - c["P"] @ rem_at(c, 0.5 * (y + Y))

            return r_mp
        fy = f(y)

        def r_tr(Y):
            mid = 0.5 * (y + Y)
            rem = 0.5 * (fy + f(Y)) - c["fr"] - c["jac"] @ (mid - c["ref"])
            return Y - c["E"] @ y - c["aff"] - c["P"] @ rem

        return r_tr

    fixed_ref = policy.kind in ("current", "fixed")
    if fixed_ref:
        ref = resolve_reference(policy, y, y)
        c, arg = coeffs(ref)
        if rule in ("euler", "exp-euler"):
            yn = c["E"] @ y + c["aff"] + c["P"] @ rem_at(c, y)
            return StepReport(yn, 0, 0.0, arg)
        yn, it, rn = solve_implicit(residual_with(c), _predict(field, y, h, cfg), cfg)
        return StepReport(yn, it, rn, arg)

    # midpoint / next policy: refresh the coefficient from the live iterate
    yk = _predict(field, y, h, cfg)
    total = 0
    arg = 0.0
    for _ in range(cfg.max_iter):
        ref = resolve_reference(policy, y, yk)
        c, arg = coeffs(ref)
        yk, it, rn = solve_implicit(residual_with(c), yk, cfg)
        total += max(it, 1)
        # self-consistency: the defining equation with the coefficient at
        # the converged iterate's own reference point
        ref2 = resolve_reference(policy, y, yk)
        c2, arg = coeffs(ref2)
        rr = _norm(residual_with(c2)(yk))
        if rr <= cfg.tol * (1.0 + _norm(yk)):
            return StepReport(yk, total, rr, arg)
    raise NoConvergence(total, rr)


# ---------------------------------------------------------------------------
# Discrete-gradient schemes, one degree of freedom (scalar fast path)


def _sinc_w(v):
    if v > 1e-4:
        s = math.sqrt(v)
        return math.sin(s) / s
    if v < -1e-4:
        s = math.sqrt(-v)
        return math.sinh(s) / s
    return 1.0 + v * (-1.0 / 6.0 + v * (1.0 / 120.0 + v * (-1.0 / 5040.0)))


def _verc_w(v):
    if v > 1e-4:
        return (1.0 - math.cos(math.sqrt(v))) / v
    if v < -1e-4:
        return (math.cosh(math.sqrt(-v)) - 1.0) / (-v)
    return 0.5 + v * (-1.0 / 24.0 + v * (1.0 / 720.0 + v * (-1.0 / 40320.0)))


class _Scalar1D:
    """Float-only view of an m = 1 Hamiltonian system."""

    def __init__(self, sys: HamiltonianSystem):
        if sys.m != 1:
            raise DimensionMismatch("one-dimensional scheme needs m = 1")
        if sys.h_s is not None:
            self.h = sys.h_s
            self.hx = sys.hx_s
            self.hp = sys.hp_s
            self.hxx = sys.hxx_s
            self.hxp = sys.hxp_s
            self.hpp = sys.hpp_s
        else:
            arr = lambda v: np.array([v])
            self.h = lambda x, p: float(sys.h(arr(x), arr(p)))
            self.hx = lambda x, p: float(sys.grad_x(arr(x), arr(p))[0])
            self.hp = lambda x, p: float(sys.grad_p(arr(x), arr(p))[0])
            self.hxx = lambda x, p: float(sys.hess_xx(arr(x), arr(p))[0, 0])
            self.hxp = lambda x, p: float(sys.hess_xp(arr(x), arr(p))[0, 0])
            self.hpp = lambda x, p: float(sys.hess_pp(arr(x), arr(p))[0, 0])


def step_gr_1d(
    sys: HamiltonianSystem,
    variant: str,
    policy: RefPolicy,
    y,
    h,
    cfg: SolverConfig = SolverConfig(),
    locally_exact: bool = True,
):
    """One step of the one-dimensional discrete-gradient schemes.

    variant "sym" uses the symmetric (four-point) difference quotients,
    variant "incre" the coordinate-increment ones.  Both conserve H(x, p)
    exactly for any step coefficient; the locally exact coefficient is

        sym:   delta = (2/w) tan(h w / 2)
        incre: delta = 2 / (w cot(h w / 2) + H_xp)

    with w^2 = H_xx H_pp - H_xp^2 at the reference point, continued
    through w^2 <= 0 as an even function of w.  With the current-point
    policy this is the GR-LEX scheme, with the midpoint policy GR-SLEX,
    with a fixed equilibrium MOD-GR; delta = h is the classical scheme.
    """
    if variant not in ("sym", "incre"):
        raise ConfigError(f"unknown 1-d gradient variant {variant!r}")
    s = _Scalar1D(sys)
    y = np.asarray(y, dtype=float)
    if y.shape != (2,):
        raise DimensionMismatch("state must have length 2")
    x0, p0 = float(y[0]), float(y[1])
    h = float(h)
    tol = cfg.tol

    last_arg = 0.0

    def delta_at(xr, pr):
        nonlocal last_arg
        if not locally_exact:
            return h
        hxp = s.hxp(xr, pr)
        om2 = s.hxx(xr, pr) * s.hpp(xr, pr) - hxp * hxp
        w = 0.25 * h * h * om2
        last_arg = math.sqrt(w) if w > 0.0 else 0.0
        if w > 0.0 and last_arg >= _TAN_GUARD:
            raise ArgumentTooLarge(
                f"tan argument bound {last_arg:.4f} >= {_TAN_GUARD:.4f}"
            )
        if variant == "sym":
            return h * matfun.tanhc_w(-w)
        den = matfun.xcoth_w(-w) + 0.5 * h * hxp
        if abs(den) < 1e-14:
            raise SingularMatrix("increment coefficient denominator vanished")
        return h / den

    def ref_of(X, P):
        k = policy.kind
        if k == "current":
            return x0, p0
        if k == "next":
            return X, P
        if k == "midpoint":
            return 0.5 * (x0 + X), 0.5 * (p0 + P)
        return float(policy.point[0]), float(policy.point[1])

    lim_p = 1e-12 * (1.0 + abs(p0))
    lim_x = 1e-12 * (1.0 + abs(x0))

    if variant == "sym":

        def quotients(X, P):
            if abs(P - p0) < lim_p:
                gp = 0.5 * (s.hp(X, p0) + s.hp(x0, p0))
            else:
                gp = (s.h(X, P) + s.h(x0, P) - s.h(X, p0) - s.h(x0, p0)) / (
                    2.0 * (P - p0)
                )
            if abs(X - x0) < lim_x:
                gx = -0.5 * (s.hx(x0, P) + s.hx(x0, p0))
            else:
                gx = (s.h(x0, P) + s.h(x0, p0) - s.h(X, P) - s.h(X, p0)) / (
                    2.0 * (X - x0)
                )
            return gp, gx

    else:

        def quotients(X, P):
            if abs(P - p0) < lim_p:
                gp = s.hp(X, p0)
            else:
                gp = (s.h(X, P) - s.h(X, p0)) / (P - p0)
            if abs(X - x0) < lim_x:
                gx = -s.hx(x0, p0)
            else:
                gx = (s.h(x0, p0) - s.h(X, p0)) / (X - x0)
            return gp, gx

    def residual(X, P):
        d = delta_at(*ref_of(X, P))
        gp, gx = quotients(X, P)
        return (X - x0) - d * gp, (P - p0) - d * gx

    # predictor: exponential Euler in closed form through the even kernels
    if cfg.predictor == "exp-euler":
        hxp0 = s.hxp(x0, p0)
        om2 = s.hxx(x0, p0) * s.hpp(x0, p0) - hxp0 * hxp0
        v = h * h * om2
        a_, b_ = _sinc_w(v), _verc_w(v)
        f1, f2 = s.hp(x0, p0), -s.hx(x0, p0)
        # F'F for F = (H_p, -H_x), F' = [[H_px, H_pp], [-H_xx, -H_xp]]
        jf1 = hxp0 * f1 + s.hpp(x0, p0) * f2
        jf2 = -s.hxx(x0, p0) * f1 - hxp0 * f2
        X = x0 + h * (a_ * f1 + h * b_ * jf1)
        P = p0 + h * (a_ * f2 + h * b_ * jf2)
    else:
        X = x0 + h * s.hp(x0, p0)
        P = p0 - h * s.hx(x0, p0)

    r1, r2 = residual(X, P)
    rn = max(abs(r1), abs(r2))
    iters = 0
    j11 = j12 = j21 = j22 = None
    for _ in range(cfg.max_iter):
        if rn <= tol * (1.0 + max(abs(X), abs(P))):
            if j11 is None and rn > 0.0:
                ex = 1e-8 * (1.0 + abs(X))
                ep = 1e-8 * (1.0 + abs(P))
                a1, a2 = residual(X + ex, P)
                b1, b2 = residual(X, P + ep)
                j11, j21 = (a1 - r1) / ex, (a2 - r2) / ex
                j12, j22 = (b1 - r1) / ep, (b2 - r2) / ep
            if j11 is not None and rn > 0.0:  # polishing update
                det = j11 * j22 - j12 * j21
                if det != 0.0:
                    X -= (j22 * r1 - j12 * r2) / det
                    P -= (-j21 * r1 + j11 * r2) / det
                    r1, r2 = residual(X, P)
                    rn = max(abs(r1), abs(r2))
            return StepReport(np.array([X, P]), iters, rn, last_arg)
        if j11 is None or iters % 5 == 0:
            ex = 1e-8 * (1.0 + abs(X))
            ep = 1e-8 * (1.0 + abs(P))
            a1, a2 = residual(X + ex, P)
            b1, b2 = residual(X, P + ep)
            j11, j21 = (a1 - r1) / ex, (a2 - r2) / ex
            j12, j22 = (b1 - r1) / ep, (b2 - r2) / ep
        det = j11 * j22 - j12 * j21
        if det == 0.0 or not math.isfinite(det):
            raise NoConvergence(iters, rn, "singular 2x2 solver Jacobian")
        dX = (j22 * r1 - j12 * r2) / det
        dP = (-j21 * r1 + j11 * r2) / det
        scale = 1.0
        for _ in range(4):
            Xn, Pn = X - scale * dX, P - scale * dP
            n1, n2 = residual(Xn, Pn)
            nn = max(abs(n1), abs(n2))
            if math.isfinite(nn) and nn <= max(2.0 * rn, tol):
                break
            scale *= 0.5
        X, P, r1, r2, rn = Xn, Pn, n1, n2, nn
        iters += 1
        if not math.isfinite(rn):
            raise NoConvergence(iters, rn)
    raise NoConvergence(iters, rn)


# ---------------------------------------------------------------------------
# Discrete-gradient schemes, multidimensional


def theta_matrix(hyy, h, variant):
    """Locally exact step coefficient theta from a Hamiltonian Hessian.

    With F' = S Hyy,

        sym:   theta = 2 F'^{-1} tanh(h F'/2) = h tanhc(h F'/2)
        incre: theta = 2 (S R + F' coth(h F'/2))^{-1},  R = A - B

    both evaluated through the even series in (h F'/2)^2, so real and
    imaginary Jacobian spectra share one code path.  Returns (theta, arg)
    where arg is the spectral bound of the halved argument, used by the
    step guard.  theta satisfies theta.T = S^{-1} theta S (the block form
    that makes theta S antisymmetric and the scheme energy-preserving);
    a defect beyond 1e-10 raises :class:`ThetaFormViolation`.
    """
    hyy = np.asarray(hyy, dtype=float)
    if hyy.ndim != 2 or hyy.shape[0] != hyy.shape[1] or hyy.shape[0] % 2:
        raise DimensionMismatch("Hamiltonian Hessian must be square and even-dimensional")
    m = hyy.shape[0] // 2
    s_mat = canonical_structure(m)
    fp = s_mat @ hyy
    w = 0.25 * h * h * (fp @ fp)
    arg = math.sqrt(max(matfun.spectral_bound(w), 0.0))
    if variant == "sym":
        theta = h * matfun._tanhc_sq(w)
    elif variant == "incre":
        if arg >= _TAN_GUARD:
            raise ArgumentTooLarge(f"cot argument bound {arg:.4f} >= {_TAN_GUARD:.4f}")
        u = matfun._xcoth_sq(w)
        a = np.tril(hyy, -1) + 0.5 * np.diag(np.diag(hyy))
        r_mat = a - a.T
        try:
            theta = h * np.linalg.solve(0.5 * h * (s_mat @ r_mat) + u, np.eye(2 * m))
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix(f"increment coefficient not invertible: {exc}")
    else:
        raise ConfigError(f"unknown gradient variant {variant!r}")
    form_defect = float(np.max(np.abs(theta.T + s_mat @ theta @ s_mat)))
    if form_defect > 1e-10:
        raise ThetaFormViolation(
            f"coefficient lost the conservation block form (defect {form_defect:.2e})"
        )
    return theta, arg


def _build_lambda(sys, variant, ref, h, locally_exact, s_mat):
    """Coefficient Lambda = theta S of the scheme y1 - y0 = Lambda G.

    Lambda is antisymmetrized to the working precision so the
    conservation argument survives round-off; the state itself is never
    projected or corrected.
    """
    m = sys.m
    if not locally_exact:
        return h * s_mat, 0.0

    if variant == "sep":
        if not sys.separable:
            raise DomainViolation("separable scheme requires H_xp = 0")
        x_r, p_r = ref[:m], ref[m:]
        om2 = sys.hess_pp(x_r, p_r) @ sys.hess_xx(x_r, p_r)
        w = 0.25 * h * h * om2
        arg = math.sqrt(max(matfun.spectral_bound(w), 0.0))
        if arg >= _TAN_GUARD:
            raise ArgumentTooLarge(f"tan argument bound {arg:.4f} >= {_TAN_GUARD:.4f}")
        d = h * matfun._tanhc_sq(-w)
        lam = np.zeros((2 * m, 2 * m))
        lam[:m, m:] = d
        lam[m:, :m] = -d.T
        return lam, arg

    theta, arg = theta_matrix(sys.hess_yy(ref), h, variant)
    lam = theta @ s_mat
    return 0.5 * (lam - lam.T), arg


def step_gr_multi(
    sys: HamiltonianSystem,
    variant: str,
    policy: RefPolicy,
    y,
    h,
    cfg: SolverConfig = SolverConfig(),
    locally_exact: bool = True,
):
    """One step of the multidimensional discrete-gradient schemes
    y1 - y0 = theta S G(y0, y1).

    variant "sym" pairs the symmetric gradient with
    theta = 2 F'^{-1} tanh(h F'/2); "incre" pairs the coordinate-increment
    gradient with theta = 2 (S R + F' coth(h F'/2))^{-1}; "sep" is the
    block-diagonal reduction for separable H with the frequency matrix
    Omega^2 = T_pp V_xx.  All variants conserve H within the solver
    tolerance for any policy, locally exact or not.
    """
    if variant not in ("sym", "incre", "sep"):
        raise ConfigError(f"unknown multi-d gradient variant {variant!r}")
    y = np.asarray(y, dtype=float)
    m = sys.m
    if y.shape != (2 * m,):
        raise DimensionMismatch(f"state must have length {2 * m}")
    s_mat = canonical_structure(m)
    grad = _increment_core if variant == "incre" else _symmetric_core
    tol = cfg.tol
    eye = np.eye(2 * m)

    field = sys.as_vector_field()
    yk = _predict(field, y, h, cfg)

    moving_ref = policy.kind in ("midpoint", "next")
    lam, arg = _build_lambda(
        sys, variant, resolve_reference(policy, y, yk), h, locally_exact, s_mat
    )

    # Raw difference quotients carry eps*|H|/dy noise; near orbit turning
    # points a coordinate increment can make the residual floor exceed the
    # tolerance, so acceptance allows for the measured noise level.
    h_scale = 1.0 + abs(sys.energy_y(y))
    dmin_cell = [np.inf]

    def residual(Y):
        g, dmin = grad(sys, y, Y)
        dmin_cell[0] = dmin
        return Y - y - lam @ g

    def tol_at(Y):
        floor = 0.0
        if np.isfinite(dmin_cell[0]):
            floor = (
                8.0 * np.finfo(float).eps * h_scale
                * float(np.max(np.abs(lam))) / dmin_cell[0]
            )
        return max(tol * (1.0 + _norm(Y)), floor)

    def newton_matrix(Y):
        # gradient linearization: d/dY of the increment gradient is the
        # lower-triangular half-diagonal matrix A, of the symmetric one
        # half the Hessian; exactness of this Jacobian is not needed, the
        # residual alone fixes the root
        mid = 0.5 * (y + Y)
        if variant == "incre":
            hyy = sys.hess_yy(mid)
            dg = np.tril(hyy, -1) + 0.5 * np.diag(np.diag(hyy))
        else:
            dg = 0.5 * sys.hess_yy(mid)
        return eye - lam @ dg

    r = residual(yk)
    rn = _norm(r)
    iters = 0
    jac = None
    lam_at = yk.copy()
    for _ in range(cfg.max_iter):
        if rn <= tol_at(yk):
            if moving_ref and _norm(yk - lam_at) > 100.0 * tol * (1.0 + _norm(yk)):
                # re-anchor the coefficient at the converged iterate's own
                # reference point and verify the defining equation there
                lam, arg = _build_lambda(
                    sys, variant, resolve_reference(policy, y, yk), h,
                    locally_exact, s_mat,
                )
                lam_at = yk.copy()
                r = residual(yk)
                rn = _norm(r)
                if rn > tol_at(yk):
                    if jac is None:
                        jac = newton_matrix(yk)
                    yk = yk - np.linalg.solve(jac, r)
                    r = residual(yk)
                    rn = _norm(r)
                    iters += 1
                    if rn > tol_at(yk):
                        continue
            if rn > 0.0:  # polishing update
                if jac is None:
                    jac = newton_matrix(yk)
                yp = yk - np.linalg.solve(jac, r)
                rp = residual(yp)
                if _norm(rp) <= rn:
                    yk, r, rn = yp, rp, _norm(rp)
            return StepReport(yk, iters, rn, arg)
        if moving_ref and _norm(yk - lam_at) > 1e-6 * (1.0 + _norm(yk)):
            lam, arg = _build_lambda(
                sys, variant, resolve_reference(policy, y, yk), h,
                locally_exact, s_mat,
            )
            lam_at = yk.copy()
            r = residual(yk)
            rn = _norm(r)
        if jac is None or iters % 5 == 0:
            jac = newton_matrix(yk)
        try:
            dy = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            jac = _fd_jacobian(residual, yk, r)
            dy = np.linalg.solve(jac, r)
        scale = 1.0
        for _ in range(4):
            y_new = yk - scale * dy
            r_new = residual(y_new)
            rn_new = _norm(r_new)
            if np.isfinite(rn_new) and rn_new <= max(0.9 * rn, tol_at(y_new)):
                break
            scale *= 0.5
        else:
            # analytic Jacobian stalled: fall back to finite differences
            jac = _fd_jacobian(residual, yk, r)
            dy = np.linalg.solve(jac, r)
            y_new = yk - dy
            r_new = residual(y_new)
            rn_new = _norm(r_new)
        yk, r, rn = y_new, r_new, rn_new
        iters += 1
        if not np.isfinite(rn):
            raise NoConvergence(iters, rn)
    raise NoConvergence(iters, rn)


# ---------------------------------------------------------------------------
# Dispatch and trajectory integration


def step(scheme: Scheme, target, y, h, cfg: SolverConfig = SolverConfig()):
    """One step of any scheme.  `target` is a VectorField, a
    HamiltonianSystem or a registry Problem; the gradient rules require a
    Hamiltonian target."""
    if h == 0 or not np.isfinite(h):
        raise ConfigError("step size must be nonzero and finite")
    if scheme.rule in GENERIC_RULES:
        return _step_generic(scheme, _as_field(target), y, h, cfg)
    sys = target.system if isinstance(target, Problem) else target
    if not isinstance(sys, HamiltonianSystem):
        raise ConfigError(f"{scheme.rule} requires a Hamiltonian system")
    if scheme.rule in GR_1D_RULES:
        return step_gr_1d(
            sys, scheme.rule.split("-")[1], scheme.policy, y, h, cfg,
            scheme.locally_exact,
        )
    return step_gr_multi(
        sys, scheme.rule.split("-")[1], scheme.policy, y, h, cfg,
        scheme.locally_exact,
    )


def integrate(scheme: Scheme, target, y0, schedule, cfg: SolverConfig = SolverConfig()):
    """Run a schedule of steps and collect the trajectory.

    `schedule` is a sequence of (nonzero, possibly varying, possibly
    negative) step sizes.  Per-step energies are recorded for Hamiltonian
    targets.  A failing step raises :class:`IntegrationError` carrying the
    failing index and the partial trajectory.
    """
    schedule = np.asarray(schedule, dtype=float)
    if schedule.size == 0:
        raise ConfigError("schedule must contain at least one step")
    if np.any(schedule == 0) or not np.all(np.isfinite(schedule)):
        raise ConfigError("every step in the schedule must be nonzero and finite")
    sys = None
    if isinstance(target, Problem):
        sys = target.system
    elif isinstance(target, HamiltonianSystem):
        sys = target
    y = np.asarray(y0, dtype=float).copy()
    n = schedule.shape[0]
    states = np.empty((n + 1, y.shape[0]))
    times = np.empty(n + 1)
    energies = np.empty(n + 1) if sys is not None else None
    iterations = np.zeros(n, dtype=int)
    residuals = np.zeros(n)
    theta_args = np.zeros(n)
    states[0] = y
    times[0] = 0.0
    if sys is not None:
        energies[0] = sys.energy_y(y)
    for k, hk in enumerate(schedule):
        try:
            rep = step(scheme, target, y, float(hk), cfg)
        except Exception as exc:  # attach the failing index and partial run
            partial = Trajectory(
                times[: k + 1],
                states[: k + 1],
                None if energies is None else energies[: k + 1],
                iterations[:k],
                residuals[:k],
                theta_args[:k],
            )
            raise IntegrationError(k, exc, partial) from exc
        y = rep.y_next
        states[k + 1] = y
        times[k + 1] = times[k] + hk
        iterations[k] = rep.iterations
        residuals[k] = rep.residual
        theta_args[k] = rep.theta_spectral_arg
        if sys is not None:
            energies[k + 1] = sys.energy_y(y)
    return Trajectory(times, states, energies, iterations, residuals, theta_args)
