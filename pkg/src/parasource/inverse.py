"""Identification of a time-independent source profile from overdetermined
observations of a parabolic problem.

Every solver below runs the same kind of Picard sweep: march a standard
Cauchy problem with the current source guess, read off a correction from the
observation, repeat. With a coercivity constant delta > 0 each sweep is a
contraction, with factors

    final-time data (nonlocal / rhs form):  (1 + tau delta)^(-N)
    integral data, weights omega:           sum_n tau omega_n (1 + tau delta)^(-n)
    modulated source beta(t):               1 - beta(0) (1 - exp(-delta T))

so the reports carry both the theoretical factor and the measured update
norms. The four variants:

identify_nonlocal        iterates the initial layer of an auxiliary problem
                         that couples t=0 to t=T through the jump
                         A (initial - observed); the recovered source is
                         A(initial) plus the converged initial layer.
identify_rhs             refreshes the source from the backward difference
                         of the last two layers of each sweep.
identify_integral        same, with the backward differences averaged over
                         the whole march by observation weights.
identify_multiplicative  like identify_rhs, but the marched source is
                         modulated by a known increasing factor beta(t)
                         that equals 1 at the final time.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .fem import DiscreteOperator, apply_A
from .forward import (LastTwoObserver, SourceTerm, TimeGrid,
                      WeightedDerivativeSumObserver, solve_cauchy)
from .linalg import SolveOptions, estimate_delta, m_norm

__all__ = [
    "ObservationData",
    "IterationOptions",
    "IterationReport",
    "contraction_bound",
    "integral_rate",
    "multiplicative_rate",
    "uniform_weights",
    "final_time_delta_weights",
    "exponential_modulation",
    "identify_nonlocal",
    "identify_rhs",
    "identify_integral",
    "identify_multiplicative",
    "proxy_error_ratios",
    "measured_rate",
]

INIT_CHOICES = ("a_observed", "a_diff", "zero", "given")


@dataclass(frozen=True)
class ObservationData:
    """Inputs to an identification run, all living on one P1 space.

    initial        -- projection of the initial state u(0)
    observed       -- the overdetermined data: final state u(T), or the
                      omega-weighted time average for the integral variant
    omega_samples  -- observation weights per time level (integral variant)
    beta_samples   -- source modulation per time level (multiplicative variant)
    """

    initial: np.ndarray
    observed: np.ndarray
    omega_samples: np.ndarray | None = None
    beta_samples: np.ndarray | None = None


@dataclass
class IterationOptions:
    """Picard sweep control.

    init selects the first iterate:
      a_observed -- A applied to the observation (good default)
      a_diff     -- A applied to (observed - initial)
      zero       -- all zeros
      given      -- take init_field as is
    For identify_nonlocal the choice seeds the auxiliary initial layer; for
    the other solvers it seeds the source iterate itself.

    keep_iterates stores every source iterate in the report (needed to
    measure contraction against the converged sweep limit).
    """

    max_iters: int = 30
    stop_tol: float = 1e-12
    init: str = "a_observed"
    init_field: np.ndarray | None = None
    keep_iterates: bool = False
    solve_opts: SolveOptions | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.stop_tol < 0.0:
            raise InvalidArgumentError(f"stop_tol must be >= 0, got {self.stop_tol}")
        if self.init not in INIT_CHOICES:
            raise InvalidArgumentError(
                f"init must be one of {INIT_CHOICES}, got {self.init!r}")
        if self.init == "given" and self.init_field is None:
            raise InvalidArgumentError("init='given' requires init_field")


@dataclass
class IterationReport:
    """What happened during one identification run.

    update_norms[k-1] is the M-norm of (iterate k) - (iterate k-1);
    contraction_ratios are their successive quotients, so the list is one
    shorter. converged_at is the sweep index that met stop_tol, or None if
    the budget ran out. The eps_* histories are present only when the exact
    source was supplied for error tracking, and cover every iterate starting
    with the initial one.
    """

    method: str
    delta: float
    delta_source: str
    rate_bound: float
    update_norms: list
    contraction_ratios: list
    converged_at: int | None
    eps_inf: list | None = None
    eps_l2: list | None = None
    eps_l2_nodal: list | None = None
    iterates: list | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.converged_at is not None


# ---------------------------------------------------------------- rates ----

def contraction_bound(delta: float, grid: TimeGrid) -> float:
    """Per-sweep contraction factor (1 + tau delta)^(-N) for final-time data."""
    if not (delta > 0.0 and np.isfinite(delta)):
        raise InvalidArgumentError(f"delta must be positive and finite, got {delta}")
    return float((1.0 + grid.tau * delta) ** (-grid.n_steps))


def integral_rate(delta: float, grid: TimeGrid, omega_samples) -> float:
    """Contraction factor sum_n tau omega_n (1 + tau delta)^(-n) for
    integral observations (the discrete stand-in for int omega e^{-delta t})."""
    if not (delta > 0.0 and np.isfinite(delta)):
        raise InvalidArgumentError(f"delta must be positive and finite, got {delta}")
    omega = np.asarray(omega_samples, dtype=float)
    n = np.arange(1, grid.n_steps + 1)
    return float(np.sum(grid.tau * omega[1:] * (1.0 + grid.tau * delta) ** (-n)))


def multiplicative_rate(delta: float, grid: TimeGrid, beta_samples) -> float:
    """Contraction factor 1 - beta(0) (1 - exp(-delta T)) for a modulated source."""
    if not (delta > 0.0 and np.isfinite(delta)):
        raise InvalidArgumentError(f"delta must be positive and finite, got {delta}")
    beta0 = float(np.asarray(beta_samples, dtype=float)[0])
    return 1.0 - beta0 * (1.0 - float(np.exp(-delta * grid.horizon)))


# ------------------------------------------------------- weight families ----

def uniform_weights(grid: TimeGrid) -> np.ndarray:
    """Constant observation weights 1/T (right-endpoint normalized)."""
    return np.full(grid.n_steps + 1, 1.0 / grid.horizon)


def final_time_delta_weights(grid: TimeGrid) -> np.ndarray:
    """Discrete delta at t = T: all weight 1/tau on the final level. Reduces
    the integral variant exactly to final-time observation."""
    omega = np.zeros(grid.n_steps + 1)
    omega[-1] = 1.0 / grid.tau
    return omega


def exponential_modulation(grid: TimeGrid, alpha: float) -> np.ndarray:
    """Source modulation beta(t) = exp(alpha (t - T)) sampled on the grid;
    increasing for alpha >= 0 and exactly 1 at the final time."""
    if alpha < 0.0:
        raise InvalidArgumentError(f"alpha must be >= 0, got {alpha}")
    return np.exp(alpha * (grid.times() - grid.horizon))


# ------------------------------------------------------------ internals ----

def _check_field(op, x, name) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (op.dof,):
        raise InvalidArgumentError(f"{name} has shape {x.shape}, expected ({op.dof},)")
    return x


def _resolve_delta(op, delta):
    if delta is None:
        return estimate_delta(op), "estimated"
    if not (delta > 0.0 and np.isfinite(delta)):
        raise InvalidArgumentError(f"delta must be positive and finite, got {delta}")
    return float(delta), "given"


def _first_iterate(op, data, opts):
    if opts.init == "a_observed":
        return apply_A(op, data.observed)
    if opts.init == "a_diff":
        return apply_A(op, data.observed - data.initial)
    if opts.init == "zero":
        return np.zeros(op.dof)
    return _check_field(op, opts.init_field, "init_field").copy()


def _checked_omega(op, data, grid):
    if data.omega_samples is None:
        raise InvalidArgumentError("integral identification needs omega_samples")
    omega = np.asarray(data.omega_samples, dtype=float)
    if omega.shape != (grid.n_steps + 1,):
        raise InvalidArgumentError(
            f"omega_samples cover {omega.size} levels, grid has {grid.n_steps + 1}")
    if np.any(omega < 0.0):
        raise InvalidArgumentError("observation weights must be nonnegative")
    total = float(grid.tau * omega[1:].sum())
    if abs(total - 1.0) > 1e-10:
        if omega[0] > 0.0 and not np.any(omega[1:]):
            warnings.warn(
                "all observation weight sits at the initial time; "
                "the sweep map has factor 1 and cannot contract",
                RuntimeWarning, stacklevel=3)
        raise InvalidArgumentError(
            f"observation weights are not normalized: sum tau*omega = {total!r}")
    return omega


def _checked_beta(data, grid):
    if data.beta_samples is None:
        raise InvalidArgumentError("multiplicative identification needs beta_samples")
    beta = np.asarray(data.beta_samples, dtype=float)
    if beta.shape != (grid.n_steps + 1,):
        raise InvalidArgumentError(
            f"beta_samples cover {beta.size} levels, grid has {grid.n_steps + 1}")
    # SourceTerm enforces positivity, monotonicity and beta(T) = 1
    SourceTerm.modulated(np.zeros(1), beta)
    return beta


def _drive(method, op, grid, opts, delta, delta_source, rate_bound, phi0, sweep,
           exact_nodal, exact_projected):
    """Shared Picard loop: iterate sweep() until the update norm drops below
    stop_tol or the budget runs out, recording norms and optional errors."""
    M = op.M
    track_inf = exact_nodal is not None
    track_l2 = exact_projected is not None
    eps_inf = [] if track_inf else None
    eps_l2 = [] if track_l2 else None
    eps_l2_nodal = [] if track_inf else None

    def record(phi):
        if track_inf:
            eps_inf.append(float(np.max(np.abs(phi - exact_nodal))))
            eps_l2_nodal.append(m_norm(M, phi - exact_nodal))
        if track_l2:
            eps_l2.append(m_norm(M, phi - exact_projected))

    phi = phi0
    iterates = [phi.copy()] if opts.keep_iterates else None
    record(phi)
    update_norms = []
    converged_at = None

    for k in range(1, opts.max_iters + 1):
        phi_new = sweep(phi)
        update_norms.append(m_norm(M, phi_new - phi))
        phi = phi_new
        if iterates is not None:
            iterates.append(phi.copy())
        record(phi)
        if update_norms[-1] <= opts.stop_tol:
            converged_at = k
            break

    ratios = [update_norms[i + 1] / update_norms[i] if update_norms[i] > 0.0 else 0.0
              for i in range(len(update_norms) - 1)]
    report = IterationReport(
        method=method, delta=delta, delta_source=delta_source,
        rate_bound=rate_bound, update_norms=update_norms,
        contraction_ratios=ratios, converged_at=converged_at,
        eps_inf=eps_inf, eps_l2=eps_l2, eps_l2_nodal=eps_l2_nodal,
        iterates=iterates)
    return phi, report


def _prepare(op, data, grid, opts, delta, exact_nodal, exact_projected):
    opts = opts or IterationOptions()
    initial = _check_field(op, data.initial, "initial")
    observed = _check_field(op, data.observed, "observed")
    delta, delta_source = _resolve_delta(op, delta)
    if exact_nodal is not None:
        exact_nodal = _check_field(op, exact_nodal, "exact_nodal")
    if exact_projected is not None:
        exact_projected = _check_field(op, exact_projected, "exact_projected")
    return opts, initial, observed, delta, delta_source, exact_nodal, exact_projected


# -------------------------------------------------------------- solvers ----

def identify_nonlocal(op: DiscreteOperator, data: ObservationData, grid: TimeGrid,
                      opts: IterationOptions | None = None, *, delta: float | None = None,
                      exact_nodal=None, exact_projected=None):
    """Recover the source through the auxiliary problem that couples the
    initial and final layers.

    Each sweep marches the homogeneous implicit scheme from the current
    auxiliary initial layer v0 and resets v0 to (final layer) - A(initial -
    observed). The source iterate reported and returned is A(initial) + v0.
    """
    opts, initial, observed, delta, delta_source, exn, exp_ = _prepare(
        op, data, grid, opts, delta, exact_nodal, exact_projected)
    solve_opts = opts.solve_opts or SolveOptions()

    a_initial = apply_A(op, initial)
    coupling = apply_A(op, initial - observed)
    rate = contraction_bound(delta, grid)

    def sweep(phi):
        v0 = phi - a_initial
        fin = solve_cauchy(op, v0, SourceTerm.zero(), grid, "implicit",
                           solve_opts=solve_opts)
        return a_initial + (fin.w - coupling)

    phi0 = a_initial + _first_iterate(op, data, opts)
    return _drive("nonlocal", op, grid, opts, delta, delta_source, rate,
                  phi0, sweep, exn, exp_)


def identify_rhs(op: DiscreteOperator, data: ObservationData, grid: TimeGrid,
                 opts: IterationOptions | None = None, *, delta: float | None = None,
                 exact_nodal=None, exact_projected=None):
    """Recover the source by refreshing it from the final backward difference.

    Each sweep marches the implicit scheme from the initial state with the
    current source held constant, then sets the next iterate to
    (w_N - w_{N-1}) / tau + A(observed).
    """
    opts, initial, observed, delta, delta_source, exn, exp_ = _prepare(
        op, data, grid, opts, delta, exact_nodal, exact_projected)
    solve_opts = opts.solve_opts or SolveOptions()

    a_observed = apply_A(op, observed)
    rate = contraction_bound(delta, grid)

    def sweep(phi):
        tail = LastTwoObserver()
        solve_cauchy(op, initial, SourceTerm.constant(phi), grid, "implicit",
                     observers=(tail,), solve_opts=solve_opts)
        return (tail.last - tail.prev) / grid.tau + a_observed

    return _drive("rhs", op, grid, opts, delta, delta_source, rate,
                  _first_iterate(op, data, opts), sweep, exn, exp_)


def identify_integral(op: DiscreteOperator, data: ObservationData, grid: TimeGrid,
                      opts: IterationOptions | None = None, *, delta: float | None = None,
                      exact_nodal=None, exact_projected=None):
    """Recover the source from a time-integral observation.

    The observed field is the omega-weighted time average of the state. Each
    sweep marches with the current source and replaces it by
    sum_n omega_n (w_n - w_{n-1}) + A(observed), accumulated while streaming.
    With all weight on the final level this is exactly identify_rhs.
    """
    opts, initial, observed, delta, delta_source, exn, exp_ = _prepare(
        op, data, grid, opts, delta, exact_nodal, exact_projected)
    solve_opts = opts.solve_opts or SolveOptions()

    omega = _checked_omega(op, data, grid)
    a_observed = apply_A(op, observed)
    rate = integral_rate(delta, grid, omega)

    def sweep(phi):
        acc = WeightedDerivativeSumObserver(omega)
        solve_cauchy(op, initial, SourceTerm.constant(phi), grid, "implicit",
                     observers=(acc,), solve_opts=solve_opts)
        return acc.total + a_observed

    return _drive("integral", op, grid, opts, delta, delta_source, rate,
                  _first_iterate(op, data, opts), sweep, exn, exp_)


def identify_multiplicative(op: DiscreteOperator, data: ObservationData, grid: TimeGrid,
                            opts: IterationOptions | None = None, *,
                            delta: float | None = None,
                            exact_nodal=None, exact_projected=None):
    """Recover the profile of a source beta(t) * profile with known beta.

    beta must be positive, non-decreasing and equal to 1 at the final time;
    then the final-difference refresh of identify_rhs still contracts, with
    factor 1 - beta(0) (1 - exp(-delta T)). beta identically 1 reproduces
    identify_rhs exactly.
    """
    opts, initial, observed, delta, delta_source, exn, exp_ = _prepare(
        op, data, grid, opts, delta, exact_nodal, exact_projected)
    solve_opts = opts.solve_opts or SolveOptions()

    beta = _checked_beta(data, grid)
    a_observed = apply_A(op, observed)
    rate = multiplicative_rate(delta, grid, beta)

    def sweep(phi):
        tail = LastTwoObserver()
        solve_cauchy(op, initial, SourceTerm.modulated(phi, beta), grid, "implicit",
                     observers=(tail,), solve_opts=solve_opts)
        return (tail.last - tail.prev) / grid.tau + a_observed

    return _drive("multiplicative", op, grid, opts, delta, delta_source, rate,
                  _first_iterate(op, data, opts), sweep, exn, exp_)


# ------------------------------------------------------- rate measurement ----

def proxy_error_ratios(op: DiscreteOperator, report: IterationReport) -> list:
    """Ratios ||phi^{k+1} - phi^K|| / ||phi^k - phi^K|| in the M-norm, with
    the last kept iterate standing in for the sweep limit. Requires a run
    with keep_iterates=True."""
    if report.iterates is None:
        raise InvalidArgumentError("run with keep_iterates=True to measure ratios")
    last = report.iterates[-1]
    errs = [m_norm(op.M, it - last) for it in report.iterates[:-1]]
    return [errs[k + 1] / errs[k] if errs[k] > 0.0 else 0.0
            for k in range(len(errs) - 1)]


def measured_rate(op: DiscreteOperator, report: IterationReport) -> float:
    """Scalar contraction estimate: geometric mean of the early proxy-limit
    ratios, skipping ratios drowned by solver noise. Falls back to update-norm
    quotients when iterates were not kept."""
    if report.iterates is not None:
        last = report.iterates[-1]
        errs = [m_norm(op.M, it - last) for it in report.iterates[:-1]]
        floor = max(1e-11, 1e-7 * errs[0]) if errs else 0.0
        usable = [errs[k + 1] / errs[k]
                  for k in range(min(5, len(errs) - 1))
                  if errs[k] > floor and errs[k + 1] > floor]
        if usable:
            return float(np.exp(np.mean(np.log(usable))))
        if len(errs) >= 2 and errs[0] > 0.0:
            return errs[1] / errs[0]
    ratios = [r for r in report.contraction_ratios[:5] if r > 0.0]
    if not ratios:
        return 0.0
    return float(np.exp(np.mean(np.log(ratios))))
