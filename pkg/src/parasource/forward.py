"""Time stepping for the semidiscrete Cauchy problem

    M dw/dt + K w = M r(t),    w(0) = w0,

with a backward Euler scheme (used everywhere accuracy in time is traded for
the dissipation property) and a Crank-Nicolson scheme (used to manufacture
observation data on a finer grid than the identification runs on).

The march never stores the trajectory. Anything downstream needs -- the final
state, the last two states, weighted sums of increments -- is accumulated by
streaming observers, so memory stays O(dof) regardless of the step count.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .fem import DiscreteOperator
from .linalg import SolveOptions, SparseMatrix, add_scaled, cg_solve, spmv

__all__ = [
    "TimeGrid",
    "SourceTerm",
    "FinalState",
    "LastTwoObserver",
    "WeightedDerivativeSumObserver",
    "WeightedAverageObserver",
    "SnapshotObserver",
    "step_implicit",
    "step_crank_nicolson",
    "solve_cauchy",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with step tau and N steps; the horizon T = N * tau is
    derived, never stored, so tau * N = T holds by construction."""

    tau: float
    n_steps: int

    def __post_init__(self):
        if not (self.tau > 0.0 and np.isfinite(self.tau)):
            raise InvalidArgumentError(f"tau must be positive and finite, got {self.tau}")
        if not isinstance(self.n_steps, (int, np.integer)) or self.n_steps < 1:
            raise InvalidArgumentError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def horizon(self) -> float:
        return self.n_steps * self.tau

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.tau

    @classmethod
    def from_horizon(cls, horizon: float, tau: float) -> "TimeGrid":
        n = int(round(horizon / tau))
        if n < 1 or abs(n * tau - horizon) > 1e-8 * max(horizon, tau):
            raise InvalidArgumentError(
                f"horizon {horizon} is not an integer multiple of tau {tau}")
        return cls(tau=tau, n_steps=n)


@dataclass(frozen=True)
class SourceTerm:
    """Right-hand side r(t) = beta(t) * profile with a spatial profile vector
    and optional per-time-level multipliers.

    profile None means the homogeneous problem. beta_samples, when present,
    must cover every grid level (length N+1) and end at 1 within 1e-12: the
    multiplicative identification relies on the final level being unscaled.
    """

    profile: np.ndarray | None = None
    beta_samples: np.ndarray | None = None

    def __post_init__(self):
        if self.beta_samples is not None:
            beta = np.asarray(self.beta_samples, dtype=float)
            if self.profile is None:
                raise InvalidArgumentError("beta_samples given without a profile")
            if beta.ndim != 1 or beta.size < 2:
                raise InvalidArgumentError("beta_samples must be a vector with >= 2 entries")
            if np.any(beta <= 0.0):
                raise InvalidArgumentError("beta samples must be strictly positive")
            if np.any(np.diff(beta) < 0.0):
                raise InvalidArgumentError("beta samples must be non-decreasing")
            if abs(beta[-1] - 1.0) > 1e-12:
                raise InvalidArgumentError(
                    f"beta must equal 1 at the final time, got {beta[-1]!r}")
            object.__setattr__(self, "beta_samples", beta)

    @classmethod
    def zero(cls) -> "SourceTerm":
        return cls(profile=None)

    @classmethod
    def constant(cls, profile) -> "SourceTerm":
        return cls(profile=np.asarray(profile, dtype=float))

    @classmethod
    def modulated(cls, profile, beta_samples) -> "SourceTerm":
        return cls(profile=np.asarray(profile, dtype=float),
                   beta_samples=beta_samples)

    def multiplier(self, n: int) -> float:
        return 1.0 if self.beta_samples is None else float(self.beta_samples[n])


@dataclass
class FinalState:
    """Final layer of a march plus the observers that ran alongside it."""

    w: np.ndarray
    steps: int
    observers: tuple = ()


class LastTwoObserver:
    """Retains the last two layers; `.last` is w_N and `.prev` is w_{N-1}."""

    def begin(self, grid, w0):
        self.prev = None
        self.last = w0

    def update(self, n, w_old, w_new):
        self.prev = w_old
        self.last = w_new


class WeightedDerivativeSumObserver:
    """Accumulates sum_{n>=1} weight_n * (w_n - w_{n-1}) while streaming.

    weights must cover every grid level (length N+1); the level-0 weight is
    carried for alignment but never multiplies an increment.
    """

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)
        self.total = None

    def begin(self, grid, w0):
        if self.weights.shape != (grid.n_steps + 1,):
            raise InvalidArgumentError(
                f"weights cover {self.weights.size} levels, march has {grid.n_steps + 1}")
        self.total = np.zeros_like(w0)

    def update(self, n, w_old, w_new):
        self.total += self.weights[n] * (w_new - w_old)


class WeightedAverageObserver:
    """Accumulates the right-endpoint quadrature sum_{n>=1} tau * weight_n * w_n."""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)
        self.total = None

    def begin(self, grid, w0):
        if self.weights.shape != (grid.n_steps + 1,):
            raise InvalidArgumentError(
                f"weights cover {self.weights.size} levels, march has {grid.n_steps + 1}")
        self._tau = grid.tau
        self.total = np.zeros_like(w0)

    def update(self, n, w_old, w_new):
        self.total += (self._tau * self.weights[n]) * w_new


class SnapshotObserver:
    """Captures the layer nearest a requested time (handy for debugging)."""

    def __init__(self, time):
        self.time = float(time)
        self.snapshot = None
        self.level = None

    def begin(self, grid, w0):
        self.level = int(round(self.time / grid.tau))
        if not (0 <= self.level <= grid.n_steps):
            raise InvalidArgumentError(
                f"snapshot time {self.time} falls outside the march horizon")
        if self.level == 0:
            self.snapshot = w0.copy()

    def update(self, n, w_old, w_new):
        if n == self.level:
            self.snapshot = w_new.copy()


class _ImplicitStepper:
    """Backward Euler: (M + tau K) w_{n+1} = M w_n + tau * beta_{n+1} * M profile."""

    def __init__(self, op: DiscreteOperator, tau: float, solve_opts: SolveOptions):
        self.op = op
        self.tau = tau
        self.opts = solve_opts
        self.system = add_scaled(op.M, op.K, tau)
        self.diag = self.system.diagonal()
        self.m_profile = None

    def set_profile(self, profile):
        self.m_profile = None if profile is None else spmv(self.op.M, profile)

    def step(self, w, mult: float = 1.0) -> np.ndarray:
        rhs = spmv(self.op.M, w)
        if self.m_profile is not None:
            rhs = rhs + (self.tau * mult) * self.m_profile
        out, _ = cg_solve(self.system, rhs, self.opts, precond=self.diag, x0=w)
        return out


class _CrankNicolsonStepper:
    """Trapezoidal rule: (M + tau/2 K) w_{n+1} = (M - tau/2 K) w_n
    + tau/2 * (beta_n + beta_{n+1}) * M profile."""

    def __init__(self, op: DiscreteOperator, tau: float, solve_opts: SolveOptions):
        self.op = op
        self.tau = tau
        self.opts = solve_opts
        self.system = add_scaled(op.M, op.K, 0.5 * tau)
        self.explicit = add_scaled(op.M, op.K, -0.5 * tau)
        self.diag = self.system.diagonal()
        self.m_profile = None

    def set_profile(self, profile):
        self.m_profile = None if profile is None else spmv(self.op.M, profile)

    def step(self, w, mult_old: float = 1.0, mult_new: float = 1.0) -> np.ndarray:
        rhs = spmv(self.explicit, w)
        if self.m_profile is not None:
            rhs = rhs + (0.5 * self.tau * (mult_old + mult_new)) * self.m_profile
        out, _ = cg_solve(self.system, rhs, self.opts, precond=self.diag, x0=w)
        return out


def _check_state(op, w, name="w0"):
    w = np.asarray(w, dtype=float)
    if w.shape != (op.dof,):
        raise InvalidArgumentError(f"{name} has shape {w.shape}, expected ({op.dof},)")
    return w


def step_implicit(op: DiscreteOperator, w, tau: float, rhs=None,
                  solve_opts: SolveOptions | None = None) -> np.ndarray:
    """Single backward Euler step; rhs is the source profile at the new level."""
    w = _check_state(op, w)
    stepper = _ImplicitStepper(op, tau, solve_opts or SolveOptions())
    stepper.set_profile(None if rhs is None else _check_state(op, rhs, "rhs"))
    return stepper.step(w)


def step_crank_nicolson(op: DiscreteOperator, w, tau: float, rhs_old=None, rhs_new=None,
                        solve_opts: SolveOptions | None = None) -> np.ndarray:
    """Single Crank-Nicolson step with source profiles at both levels."""
    w = _check_state(op, w)
    if (rhs_old is None) != (rhs_new is None):
        raise InvalidArgumentError("rhs_old and rhs_new must both be given or both omitted")
    stepper = _CrankNicolsonStepper(op, tau, solve_opts or SolveOptions())
    if rhs_old is None:
        stepper.set_profile(None)
        return stepper.step(w)
    rhs_old = _check_state(op, rhs_old, "rhs_old")
    rhs_new = _check_state(op, rhs_new, "rhs_new")
    # fold both endpoint profiles into one, keeping endpoint multipliers of 1
    stepper.set_profile(0.5 * (rhs_old + rhs_new))
    return stepper.step(w)


def solve_cauchy(op: DiscreteOperator, w0, source: SourceTerm, grid: TimeGrid,
                 scheme: str = "implicit", observers=(),
                 solve_opts: SolveOptions | None = None) -> FinalState:
    """March the Cauchy problem across the whole grid.

    scheme is "implicit" (backward Euler) or "cn" (Crank-Nicolson). Observers
    see every transition (n, w_{n-1}, w_n) as it happens; the trajectory
    itself is discarded.
    """
    w = _check_state(op, w0)
    if source.profile is not None:
        _check_state(op, source.profile, "source.profile")
    if source.beta_samples is not None and source.beta_samples.size != grid.n_steps + 1:
        raise InvalidArgumentError(
            f"beta_samples cover {source.beta_samples.size} levels, "
            f"grid has {grid.n_steps + 1}")
    opts = solve_opts or SolveOptions()

    if scheme == "implicit":
        stepper = _ImplicitStepper(op, grid.tau, opts)
    elif scheme == "cn":
        stepper = _CrankNicolsonStepper(op, grid.tau, opts)
    else:
        raise InvalidArgumentError(f"unknown scheme {scheme!r}, expected 'implicit' or 'cn'")
    stepper.set_profile(source.profile)

    for obs in observers:
        obs.begin(grid, w)

    for n in range(1, grid.n_steps + 1):
        if scheme == "implicit":
            w_new = stepper.step(w, source.multiplier(n))
        else:
            w_new = stepper.step(w, source.multiplier(n - 1), source.multiplier(n))
        for obs in observers:
            obs.update(n, w, w_new)
        w = w_new

    return FinalState(w=w, steps=grid.n_steps, observers=tuple(observers))
