"""geodint: locally exact and energy-preserving time integrators.

The package provides exact discretizations of linear systems, locally
exact modifications of classical one-step methods (exponential-integrator
style), and discrete-gradient schemes for canonical Hamiltonian systems
whose locally exact variants keep exact energy conservation.
"""

from . import errors
from .matfun import even_fn, even_fn_sq, expm, phi1, solve, spectral_bound
from .exact_linear import (
    HarmonicOscillator,
    LinearSystem,
    exact_delta,
    exact_step_linear,
    exact_step_oscillator,
    oscillator_energy,
)
from .model import (
    HamiltonianSystem,
    Problem,
    RefPolicy,
    VectorField,
    canonical_structure,
    get_problem,
    hamiltonian_field,
    hamiltonian_jacobian,
    list_problems,
    resolve_reference,
)
from .disgrad import (
    gradient_identity_residual,
    increment_gradient,
    linearization_matrices,
    symmetric_gradient,
)
from .integrators import (
    RULES,
    Scheme,
    SolverConfig,
    StepReport,
    Trajectory,
    delta_general,
    integrate,
    psi,
    solve_implicit,
    step,
    step_gr_1d,
    step_gr_multi,
    theta_matrix,
)
from .oracle import (
    OrderEstimate,
    convergence_order,
    energy_drift,
    local_exactness_probe,
    reference_solve,
)

__all__ = [
    "errors",
    "expm",
    "phi1",
    "even_fn",
    "even_fn_sq",
    "solve",
    "spectral_bound",
    "LinearSystem",
    "HarmonicOscillator",
    "exact_step_linear",
    "exact_delta",
    "exact_step_oscillator",
    "oscillator_energy",
    "VectorField",
    "HamiltonianSystem",
    "Problem",
    "RefPolicy",
    "canonical_structure",
    "hamiltonian_field",
    "hamiltonian_jacobian",
    "resolve_reference",
    "get_problem",
    "list_problems",
    "increment_gradient",
    "symmetric_gradient",
    "linearization_matrices",
    "gradient_identity_residual",
    "RULES",
    "Scheme",
    "SolverConfig",
    "StepReport",
    "Trajectory",
    "delta_general",
    "psi",
    "step",
    "step_gr_1d",
    "step_gr_multi",
    "theta_matrix",
    "solve_implicit",
    "integrate",
    "OrderEstimate",
    "reference_solve",
    "convergence_order",
    "energy_drift",
    "local_exactness_probe",
]

__version__ = "0.1.0"
