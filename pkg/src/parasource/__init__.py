"""Identification of spacewise-dependent sources in 2D parabolic problems.

The package discretizes

    du/dt - div(k grad u) + c u = f(x)   in the unit square,
    k du/dn + mu u = 0                   on the boundary,

with P1 finite elements and implicit time stepping, and recovers the
time-independent source f from a final-time observation u(., T) or from a
weighted time integral of the state, by Picard-type sweeps whose contraction
factor is controlled by the coercivity constant of the elliptic part.
"""

from .errors import (ConfigError, DegenerateOperatorError, InvalidArgumentError,
                     InvalidCoefficientError, SolverFailureError)
from .fem import Coefficients, DiscreteOperator, apply_A, assemble, project_l2
from .forward import (FinalState, LastTwoObserver, SnapshotObserver, SourceTerm,
                      TimeGrid, WeightedAverageObserver,
                      WeightedDerivativeSumObserver, solve_cauchy, step_implicit,
                      step_crank_nicolson)
from .harness import (ExperimentConfig, exact_source, read_field,
                      run_identification, run_quasi_real, run_sweep, run_table,
                      write_field)
from .inverse import (IterationOptions, IterationReport, ObservationData,
                      contraction_bound, exponential_modulation,
                      final_time_delta_weights, identify_integral,
                      identify_multiplicative, identify_nonlocal, identify_rhs,
                      integral_rate, measured_rate, multiplicative_rate,
                      proxy_error_ratios, uniform_weights)
from .linalg import (SolveOptions, SparseMatrix, cg_solve, estimate_delta,
                     m_inner, m_norm, spmv)
from .mesh import Mesh, build_unit_square_mesh, dump_mesh

__version__ = "0.1.0"
