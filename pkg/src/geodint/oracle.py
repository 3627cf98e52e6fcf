"""Independent reference solutions and scheme diagnostics.

Everything a test needs to judge a scheme lives here: a high-accuracy
classical reference integrator (deliberately unrelated to the schemes
under test), global convergence-order estimation, energy-drift
measurement, and a finite-difference probe of local exactness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import matfun
from .errors import ConfigError, NoConvergence
from .exact_linear import exact_step_linear
from .integrators import Scheme, SolverConfig, Trajectory, integrate, step
from .model import HamiltonianSystem, Problem, RefPolicy, VectorField


@dataclass(frozen=True)
class OrderEstimate:
    slope: float
    errors: tuple  # ((h, global error), ...)
    fit_residual: float  # rms residual of the log-log fit, log10 units
    reliable: bool


# ---------------------------------------------------------------------------
# Reference integrator: classical RK4 with compensated summation, steps
# halved until two successive refinements agree.


def _rk4_tuple(f, y0, h, n):
    y = tuple(float(v) for v in y0)
    comp = tuple(0.0 for _ in y)
    d = len(y)
    sixth = h / 6.0
    half = 0.5 * h
    for _ in range(n):
        k1 = f(y)
        k2 = f(tuple(y[i] + half * k1[i] for i in range(d)))
        k3 = f(tuple(y[i] + half * k2[i] for i in range(d)))
        k4 = f(tuple(y[i] + h * k3[i] for i in range(d)))
        ny = []
        nc = []
        for i in range(d):
            incr = sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]) - comp[i]
            t = y[i] + incr
            nc.append((t - y[i]) - incr)
            ny.append(t)
        y = tuple(ny)
        comp = tuple(nc)
    return np.array(y)


def _rk4_array(f, y0, h, n):
    y = np.asarray(y0, dtype=float).copy()
    comp = np.zeros_like(y)
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        incr = (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4) - comp
        t = y + incr
        comp = (t - y) - incr
        y = t
    return y


def reference_solve(problem, y0, T, target_tol=1e-13):
    """State at time T by a classical 4th-order method with compensated
    summation, halving the step until two successive refinements agree
    within target_tol (max-norm).  Linear problems short-circuit to the
    closed-form flow.  Raises :class:`NoConvergence` after 22 halvings.
    """
    if target_tol < 1e-13:
        raise ConfigError("target_tol must be at least 1e-13")
    y0 = np.asarray(y0, dtype=float)
    if T == 0:
        return y0.copy()

    if isinstance(problem, Problem) and problem.linear is not None:
        return exact_step_linear(problem.linear, y0, float(T))

    f_tuple = problem.f_tuple if isinstance(problem, Problem) else None
    if isinstance(problem, Problem):
        field = problem.field()
    elif isinstance(problem, HamiltonianSystem):
        field = problem.as_vector_field()
    elif isinstance(problem, VectorField):
        field = problem
    else:
        raise ConfigError(f"cannot solve a {type(problem).__name__}")

    n = max(8, int(math.ceil(abs(T) / 0.05)))
    prev = None
    for _ in range(23):
        h = T / n
        if f_tuple is not None:
            cur = _rk4_tuple(f_tuple, y0, h, n)
        else:
            cur = _rk4_array(field.f, y0, h, n)
        if prev is not None and float(np.max(np.abs(cur - prev))) <= target_tol:
            return cur
        prev = cur
        n *= 2
    raise NoConvergence(22, float(np.max(np.abs(cur - prev))),
                        "reference refinement did not settle within 22 halvings")


def convergence_order(
    scheme: Scheme,
    problem,
    y0,
    T,
    h_list: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
    reference_tol: float = 1e-13,
    max_workers: int = 1,
):
    """Global-error convergence order at time T.

    Runs the scheme at each h (T must be an integer multiple of each),
    measures the Euclidean endpoint error against :func:`reference_solve`,
    and fits log(error) against log(h) by least squares.  The largest h is
    discarded when its error exceeds 0.5 (pre-asymptotic).  The estimate
    is flagged unreliable when the fit residual exceeds 0.1 log10 units.
    Per-h runs are independent; `max_workers` > 1 executes them in a
    thread pool.
    """
    if len(h_list) < 4:
        raise ConfigError("need >= 4 step sizes")
    y0 = np.asarray(y0, dtype=float)
    ref = reference_solve(problem, y0, T, reference_tol)
    hs = sorted(h_list, reverse=True)
    for h in hs:
        if abs(round(T / h) * h - T) > 1e-9 * abs(T):
            raise ConfigError(f"T = {T} is not an integer multiple of h = {h}")

    def endpoint_error(h):
        traj = integrate(scheme, problem, y0, [h] * round(T / h), cfg)
        return float(np.linalg.norm(traj.states[-1] - ref))

    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            errs = list(pool.map(endpoint_error, hs))
    else:
        errs = [endpoint_error(h) for h in hs]
    pairs = list(zip(hs, errs))
    fit_pairs = list(pairs)
    if fit_pairs[0][1] > 0.5 and len(fit_pairs) > 4:
        fit_pairs = fit_pairs[1:]
    logs_h = np.log10([p[0] for p in fit_pairs])
    logs_e = np.log10([max(p[1], 1e-300) for p in fit_pairs])
    slope, intercept = np.polyfit(logs_h, logs_e, 1)
    resid = logs_e - (slope * logs_h + intercept)
    fit_residual = float(np.sqrt(np.mean(resid**2)))
    return OrderEstimate(
        slope=float(slope),
        errors=tuple(pairs),
        fit_residual=fit_residual,
        reliable=fit_residual <= 0.1,
    )


def energy_drift(traj: Trajectory, sys: Optional[HamiltonianSystem] = None):
    """max_n |H(y_n) - H(y_0)| / max(1, |H(y_0)|) along a trajectory."""
    if traj.energies is not None:
        e = traj.energies
    else:
        if sys is None:
            raise ConfigError("trajectory has no energies and no system was given")
        e = np.array([sys.energy_y(s) for s in traj.states])
    if e.shape[0] == 1:
        return 0.0
    return float(np.max(np.abs(e - e[0])) / max(1.0, abs(e[0])))


def local_exactness_probe(
    scheme: Scheme,
    problem,
    y_bar,
    h,
    probe: float = 1e-4,
    cfg: SolverConfig = SolverConfig(),
):
    """Defect between the scheme linearized at y_bar and the exact
    discretization of the problem linearized there.

    The scheme's coefficient is frozen at y_bar (that is what "locally
    exact at y_bar" quantifies), the step map is differentiated by central
    differences of size `probe`, and the recovered affine map (M, c) is
    compared against (e^{hF'}, (e^{hF'} - 1) F'^{-1} F) at y_bar.  Locally
    exact schemes give a defect of order probe^2; classical rules show
    their O(h^2) linearization gap.
    """
    y_bar = np.asarray(y_bar, dtype=float)
    if scheme.locally_exact or scheme.rule == "exp-euler":
        rule = "euler" if scheme.rule == "exp-euler" else scheme.rule
        frozen = Scheme(rule, RefPolicy.fixed(y_bar), True)
    else:
        frozen = scheme

    def phi(yy):
        return step(frozen, problem, yy, h, cfg).y_next

    if isinstance(problem, Problem):
        field = problem.field()
    elif isinstance(problem, HamiltonianSystem):
        field = problem.as_vector_field()
    else:
        field = problem
    d = y_bar.shape[0]
    m_rec = np.empty((d, d))
    for j in range(d):
        e_j = np.zeros(d)
        e_j[j] = probe
        m_rec[:, j] = (phi(y_bar + e_j) - phi(y_bar - e_j)) / (2.0 * probe)
    c_rec = phi(y_bar) - y_bar
    fp = field.jac(y_bar)
    e_exact = matfun.expm(h * fp)
    c_exact = h * (matfun.phi1(h * fp) @ field.f(y_bar))
    return float(
        max(np.max(np.abs(m_rec - e_exact)), np.max(np.abs(c_rec - c_exact)))
    )
