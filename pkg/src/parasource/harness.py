"""Experiment harness: configuration files, quasi-real data generation and
the identification / table / sweep drivers behind the command line.

Configuration grammar
---------------------
Plain text, one `key = value` per line. Blank lines and lines starting with
`#` are ignored; anything after ` #` inside a line is a comment. Unknown or
duplicate keys are rejected. All keys are optional and default to the base
test case (unit square, k = 1, c = 10, mu = 0, logistic source with
gamma = 10, T = 0.1, data generated by Crank-Nicolson at tau = 1e-4 and
inverted with the implicit scheme at tau = 1e-3):

    mesh_m          intervals per square side               (50)
    k, c, mu        constant PDE coefficients               (1.0, 10.0, 0.0)
    source          logistic | constant | zero              (logistic)
    gamma           steepness of the logistic source        (10.0)
    source_value    level of the constant source            (1.0)
    T               time horizon                            (0.1)
    tau_forward     data-generation step                    (1e-4)
    tau_inverse     identification step                     (1e-3)
    scheme_forward  cn | implicit                           (cn)
    solver          nonlocal | rhs | integral | multiplicative  (nonlocal)
    omega           uniform | delta_final (integral data)   (uniform)
    beta_alpha      modulation rate, beta = exp(alpha(t-T)) (0.0)
    max_iters       sweep budget                            (30)
    stop_tol        update-norm stopping threshold          (1e-12)
    init            a_observed | a_diff | zero              (a_observed)
    seed            RNG seed for the noise generator        (0)
    noise_level     relative amplitude of additive noise    (0.0)
    out             output directory                        (out)
    observation_dir where `invert` looks for the data       (= out)
    table_gammas    gamma list for the table driver         (5,10,20,100)
    sweep_parameter T | c | tau                             (T)
    sweep_values    values for the sweep driver             (0.05,0.1,0.2)

Every product is written atomically (temp file, then rename). Field dumps are
plain text "x1 x2 value" rows in node order with 17 significant digits; CSV
files are comma-separated with a header row and LF line endings. Observations
are stored next to a manifest recording every generation-relevant parameter,
and `invert` refuses data whose manifest does not match its own configuration.
"""

import math
import os
import tempfile
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import figures
from .errors import ConfigError, InvalidArgumentError
from .fem import Coefficients, DiscreteOperator, assemble, project_l2
from .forward import (SourceTerm, TimeGrid, WeightedAverageObserver, solve_cauchy)
from .inverse import (IterationOptions, ObservationData, exponential_modulation,
                      final_time_delta_weights, identify_integral,
                      identify_multiplicative, identify_nonlocal, identify_rhs,
                      measured_rate, uniform_weights)
from .mesh import Mesh, build_unit_square_mesh

__all__ = [
    "ExperimentConfig",
    "exact_source",
    "run_quasi_real",
    "run_identification",
    "run_table",
    "run_sweep",
    "write_field",
    "read_field",
]

SOLVERS = ("nonlocal", "rhs", "integral", "multiplicative")
SCHEMES = ("cn", "implicit")
OMEGAS = ("uniform", "delta_final")
SOURCES = ("logistic", "constant", "zero")
INITS = ("a_observed", "a_diff", "zero")
SWEEP_PARAMETERS = ("T", "c", "tau")

OBSERVATION_FILE = "psi.txt"
MANIFEST_FILE = "manifest.txt"


# ------------------------------------------------------------- file I/O ----

def _atomic_write_text(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_field(path, mesh: Mesh, values):
    """Dump a nodal field as "x1 x2 value" rows in node (row-major) order."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise InvalidArgumentError(
            f"field has shape {values.shape}, mesh has {mesh.n_nodes} nodes")
    lines = [f"{_fmt(x)} {_fmt(y)} {_fmt(v)}"
             for (x, y), v in zip(mesh.nodes, values)]
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_field(path, mesh: Mesh) -> np.ndarray:
    """Read a field dump back, checking it matches the mesh node count."""
    rows = []
    with open(path, "r") as handle:
        for line in handle:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split()])
    if len(rows) != mesh.n_nodes:
        raise ConfigError(
            f"{path}: has {len(rows)} rows, mesh with m={mesh.m} needs {mesh.n_nodes}")
    arr = np.asarray(rows, dtype=float)
    if arr.shape[1] != 3:
        raise ConfigError(f"{path}: expected 'x1 x2 value' rows")
    if np.max(np.abs(arr[:, :2] - mesh.nodes)) > 1e-12:
        raise ConfigError(f"{path}: node coordinates do not match the mesh")
    return arr[:, 2].copy()


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if cell is None:
                cells.append("")
            elif isinstance(cell, str):
                cells.append(cell)
            elif isinstance(cell, (int, np.integer)):
                cells.append(str(int(cell)))
            else:
                cells.append(_fmt(float(cell)))
        lines.append(",".join(cells))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _write_mapping(path, mapping):
    lines = [f"{key} = {value}" for key, value in mapping.items()]
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _read_mapping(path) -> dict:
    return _parse_pairs(Path(path).read_text())


# -------------------------------------------------------- configuration ----

def _parse_pairs(text) -> dict:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split(" #", 1)[0].strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _as_int(key, value, minimum=None):
    try:
        out = int(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from exc
    if minimum is not None and out < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {out}")
    return out


def _as_float(key, value):
    try:
        out = float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from exc
    if not math.isfinite(out):
        raise ConfigError(f"{key}: must be finite, got {out}")
    return out


def _as_choice(key, value, choices):
    if value not in choices:
        raise ConfigError(f"{key}: expected one of {choices}, got {value!r}")
    return value


def _as_float_list(key, value):
    try:
        out = tuple(float(tok) for tok in value.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {value!r}") from exc
    if not out:
        raise ConfigError(f"{key}: list must not be empty")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment description (see the module docstring for keys)."""

    mesh_m: int = 50
    k: float = 1.0
    c: float = 10.0
    mu: float = 0.0
    source: str = "logistic"
    gamma: float = 10.0
    source_value: float = 1.0
    T: float = 0.1
    tau_forward: float = 1e-4
    tau_inverse: float = 1e-3
    scheme_forward: str = "cn"
    solver: str = "nonlocal"
    omega: str = "uniform"
    beta_alpha: float = 0.0
    max_iters: int = 30
    stop_tol: float = 1e-12
    init: str = "a_observed"
    seed: int = 0
    noise_level: float = 0.0
    out: str = "out"
    observation_dir: str = ""
    table_gammas: tuple = (5.0, 10.0, 20.0, 100.0)
    sweep_parameter: str = "T"
    sweep_values: tuple = (0.05, 0.1, 0.2)

    _CONVERTERS = {
        "mesh_m": lambda v: _as_int("mesh_m", v, minimum=1),
        "k": lambda v: _as_float("k", v),
        "c": lambda v: _as_float("c", v),
        "mu": lambda v: _as_float("mu", v),
        "source": lambda v: _as_choice("source", v, SOURCES),
        "gamma": lambda v: _as_float("gamma", v),
        "source_value": lambda v: _as_float("source_value", v),
        "T": lambda v: _as_float("T", v),
        "tau_forward": lambda v: _as_float("tau_forward", v),
        "tau_inverse": lambda v: _as_float("tau_inverse", v),
        "scheme_forward": lambda v: _as_choice("scheme_forward", v, SCHEMES),
        "solver": lambda v: _as_choice("solver", v, SOLVERS),
        "omega": lambda v: _as_choice("omega", v, OMEGAS),
        "beta_alpha": lambda v: _as_float("beta_alpha", v),
        "max_iters": lambda v: _as_int("max_iters", v, minimum=1),
        "stop_tol": lambda v: _as_float("stop_tol", v),
        "init": lambda v: _as_choice("init", v, INITS),
        "seed": lambda v: _as_int("seed", v, minimum=0),
        "noise_level": lambda v: _as_float("noise_level", v),
        "out": lambda v: v,
        "observation_dir": lambda v: v,
        "table_gammas": lambda v: _as_float_list("table_gammas", v),
        "sweep_parameter": lambda v: _as_choice("sweep_parameter", v, SWEEP_PARAMETERS),
        "sweep_values": lambda v: _as_float_list("sweep_values", v),
    }

    @classmethod
    def parse(cls, text) -> "ExperimentConfig":
        pairs = _parse_pairs(text)
        kwargs = {}
        for key, value in pairs.items():
            conv = cls._CONVERTERS.get(key)
            if conv is None:
                raise ConfigError(f"unknown configuration key {key!r}")
            kwargs[key] = conv(value)
        config = cls(**kwargs)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"configuration file not found: {path}")
        try:
            return cls.parse(path.read_text())
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def validate(self):
        if self.k <= 0.0:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.c < 0.0 or self.mu < 0.0:
            raise ConfigError("c and mu must be nonnegative")
        if self.T <= 0.0:
            raise ConfigError(f"T must be positive, got {self.T}")
        for key in ("tau_forward", "tau_inverse"):
            tau = getattr(self, key)
            if tau <= 0.0:
                raise ConfigError(f"{key} must be positive, got {tau}")
            n = round(self.T / tau)
            if n < 1 or abs(n * tau - self.T) > 1e-8 * self.T:
                raise ConfigError(
                    f"T = {self.T} is not an integer multiple of {key} = {tau}")
        if self.stop_tol < 0.0:
            raise ConfigError(f"stop_tol must be >= 0, got {self.stop_tol}")
        if self.noise_level < 0.0:
            raise ConfigError(f"noise_level must be >= 0, got {self.noise_level}")
        if self.beta_alpha < 0.0:
            raise ConfigError(f"beta_alpha must be >= 0, got {self.beta_alpha}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if any(v <= 0.0 for v in self.sweep_values):
            raise ConfigError("sweep_values must be positive")
        if any(not math.isfinite(g) for g in self.table_gammas):
            raise ConfigError("table_gammas must be finite")

    def with_updates(self, **kwargs) -> "ExperimentConfig":
        config = replace(self, **kwargs)
        config.validate()
        return config

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    # generation-relevant parameters, canonicalized as strings
    def observation_signature(self) -> dict:
        if self.source == "logistic":
            source = f"logistic(gamma={self.gamma!r})"
        elif self.source == "constant":
            source = f"constant(value={self.source_value!r})"
        else:
            source = "zero"
        sig = {
            "mesh_m": str(self.mesh_m),
            "k": repr(self.k),
            "c": repr(self.c),
            "mu": repr(self.mu),
            "source": source,
            "T": repr(self.T),
            "tau_forward": repr(self.tau_forward),
            "scheme_forward": self.scheme_forward,
            "observation_kind": "integral" if self.solver == "integral" else "final",
            "modulation_alpha": repr(self.beta_alpha if self.solver == "multiplicative" else 0.0),
            "noise_level": repr(self.noise_level),
            "seed": str(self.seed),
        }
        if self.solver == "integral":
            sig["omega_family"] = self.omega
        return sig


# ---------------------------------------------------------- experiments ----

def exact_source(gamma: float):
    """The steep-front test source f(x) = 1 / (1 + exp(gamma (x1 - x2))).

    Evaluated through the logistic sigmoid, so large gamma cannot overflow.
    Along the diagonal x1 = x2 it equals 1/2; away from it the profile tends
    to 0 (x1 > x2) or 1 (x1 < x2) the faster the larger gamma is.
    """
    if not math.isfinite(gamma):
        raise InvalidArgumentError(f"gamma must be finite, got {gamma}")

    def f(x1, x2):
        return expit(-gamma * (np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)))

    return f


def _source_function(config: ExperimentConfig):
    if config.source == "logistic":
        return exact_source(config.gamma)
    if config.source == "constant":
        value = config.source_value
        return lambda x1, x2: np.full_like(np.asarray(x1, dtype=float), value)
    return lambda x1, x2: np.zeros_like(np.asarray(x1, dtype=float))


def _build_problem(config: ExperimentConfig):
    mesh = build_unit_square_mesh(config.mesh_m)
    coeffs = Coefficients.constants(k=config.k, c=config.c, mu=config.mu)
    op = assemble(mesh, coeffs)
    return mesh, op


def _known_delta(config: ExperimentConfig):
    # with constant coefficients and a pure Neumann boundary the smallest
    # eigenvalue of the elliptic operator is the reaction constant itself
    if config.mu == 0.0 and config.c > 0.0:
        return config.c
    return None


def run_quasi_real(config: ExperimentConfig, out_dir=None,
                   mesh: Mesh | None = None, op: DiscreteOperator | None = None,
                   quiet: bool = True) -> Path:
    """Manufacture an observation for the configured experiment.

    Projects the exact source onto the P1 space, marches the forward problem
    from a zero initial state on the (finer) forward grid, applies the
    observation functional, optionally adds seeded uniform noise, and stores
    the field next to a manifest of every generation-relevant parameter.
    Returns the observation path.
    """
    out = Path(out_dir) if out_dir is not None else Path(config.out)
    if mesh is None or op is None:
        mesh, op = _build_problem(config)

    profile = project_l2(op, _source_function(config), mesh)
    grid = TimeGrid.from_horizon(config.T, config.tau_forward)

    if config.solver == "multiplicative" and config.beta_alpha > 0.0:
        source = SourceTerm.modulated(profile, exponential_modulation(grid, config.beta_alpha))
    else:
        source = SourceTerm.constant(profile)

    observers = []
    if config.solver == "integral":
        omega = (uniform_weights(grid) if config.omega == "uniform"
                 else final_time_delta_weights(grid))
        observers.append(WeightedAverageObserver(omega))

    final = solve_cauchy(op, np.zeros(op.dof), source, grid,
                         scheme=config.scheme_forward, observers=observers)
    observed = observers[0].total if observers else final.w

    if config.noise_level > 0.0:
        rng = np.random.default_rng(config.seed)
        amplitude = config.noise_level * float(np.max(np.abs(observed)))
        observed = observed + amplitude * rng.uniform(-1.0, 1.0, observed.size)

    obs_path = out / OBSERVATION_FILE
    write_field(obs_path, mesh, observed)
    _write_mapping(out / MANIFEST_FILE, config.observation_signature())
    _atomic_write_text(out / "config.txt", config.to_text())
    figures.save_field(out / "psi.png", mesh, observed, title="observation")
    if not quiet:
        print(f"wrote {obs_path}")
    return obs_path


def _check_manifest(config: ExperimentConfig, obs_dir: Path):
    manifest_path = obs_dir / MANIFEST_FILE
    if not manifest_path.is_file():
        raise ConfigError(f"observation manifest not found: {manifest_path}")
    stored = _read_mapping(manifest_path)
    expected = config.observation_signature()
    mismatches = sorted(set(stored.items()) ^ set(expected.items()))
    if mismatches:
        keys = sorted({k for k, _ in mismatches})
        raise ConfigError(
            "observation manifest does not match the configuration "
            f"(differing keys: {', '.join(keys)}); refusing to invert")


def _identify(config: ExperimentConfig, op, grid, data, exact_nodal, exact_projected):
    opts = IterationOptions(max_iters=config.max_iters, stop_tol=config.stop_tol,
                            init=config.init, keep_iterates=True)
    solver = {
        "nonlocal": identify_nonlocal,
        "rhs": identify_rhs,
        "integral": identify_integral,
        "multiplicative": identify_multiplicative,
    }[config.solver]
    return solver(op, data, grid, opts, delta=_known_delta(config),
                  exact_nodal=exact_nodal, exact_projected=exact_projected)


def run_identification(config: ExperimentConfig, obs_dir=None, out_dir=None,
                       quiet: bool = True):
    """Invert a stored observation and write the error-decay report.

    Reads the observation written by `run_quasi_real` (refusing it when its
    manifest disagrees with the configuration), runs the configured solver on
    the coarser inverse grid, and writes per-iteration errors against the
    exact source (errors.csv), the recovered source field (source.txt), a
    run summary (summary.txt), the resolved configuration, and decay/field
    figures. Returns (recovered field, report, output directory).
    """
    out = Path(out_dir) if out_dir is not None else Path(config.out)
    obs = Path(obs_dir) if obs_dir is not None else Path(config.observation_dir or config.out)

    _check_manifest(config, obs)
    mesh, op = _build_problem(config)
    observed = read_field(obs / OBSERVATION_FILE, mesh)

    grid = TimeGrid.from_horizon(config.T, config.tau_inverse)
    data = ObservationData(
        initial=np.zeros(op.dof),
        observed=observed,
        omega_samples=(uniform_weights(grid) if config.omega == "uniform"
                       else final_time_delta_weights(grid)) if config.solver == "integral" else None,
        beta_samples=exponential_modulation(grid, config.beta_alpha)
        if config.solver == "multiplicative" else None,
    )

    f = _source_function(config)
    exact_nodal = np.asarray(f(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float)
    exact_projected = project_l2(op, f, mesh)

    phi, report = _identify(config, op, grid, data, exact_nodal, exact_projected)

    rows = []
    for k in range(len(report.eps_inf)):
        ratio = report.contraction_ratios[k - 2] if k >= 2 else None
        rows.append((k, report.eps_inf[k], report.eps_l2[k],
                     report.eps_l2_nodal[k], ratio))
    _write_csv(out / "errors.csv",
               ("k", "eps_inf", "eps_l2", "eps_l2_nodal", "ratio"), rows)
    write_field(out / "source.txt", mesh, phi)
    _write_mapping(out / "summary.txt", {
        "method": report.method,
        "delta": repr(report.delta),
        "delta_source": report.delta_source,
        "rate_bound": repr(report.rate_bound),
        "measured_rate": repr(measured_rate(op, report)),
        "converged_at": "" if report.converged_at is None else str(report.converged_at),
        "final_eps_inf": repr(report.eps_inf[-1]),
        "final_eps_l2": repr(report.eps_l2[-1]),
    })
    _atomic_write_text(out / "resolved_config.txt", config.to_text())
    figures.save_decay(out / "errors.png",
                       {"max nodal error": report.eps_inf,
                        "L2 error vs projection": report.eps_l2},
                       title=f"{report.method} identification")
    figures.save_field(out / "source.png", mesh, phi, title="recovered source")
    if not quiet:
        print(f"wrote {out / 'errors.csv'} (converged_at={report.converged_at})")
    return phi, report, out


def run_table(config: ExperimentConfig, out_dir=None, quiet: bool = False):
    """Error tables over the configured gamma list.

    For each gamma: generate the observation, invert it, and collect the
    per-iteration errors; the result is one table per error measure with a
    column per gamma, plus a decay figure. Returns the two tables as dicts
    gamma -> error list.
    """
    out = Path(out_dir) if out_dir is not None else Path(config.out)
    inf_curves, l2_curves = {}, {}
    for gamma in config.table_gammas:
        sub = config.with_updates(gamma=gamma, source="logistic")
        run_dir = out / f"gamma_{gamma:g}"
        run_quasi_real(sub, run_dir, quiet=True)
        _, report, _ = run_identification(sub, obs_dir=run_dir, out_dir=run_dir, quiet=True)
        inf_curves[gamma] = report.eps_inf
        l2_curves[gamma] = report.eps_l2
        if not quiet:
            print(f"gamma={gamma:g}: eps_inf[-1]={report.eps_inf[-1]:.6g} "
                  f"after {len(report.eps_inf) - 1} sweeps")

    depth = min(len(v) for v in inf_curves.values())
    header = ("k",) + tuple(f"gamma_{g:g}" for g in config.table_gammas)
    for name, curves in (("table_eps_inf.csv", inf_curves), ("table_eps_l2.csv", l2_curves)):
        rows = [(k,) + tuple(curves[g][k] for g in config.table_gammas)
                for k in range(depth)]
        _write_csv(out / name, header, rows)
    figures.save_decay(out / "table.png",
                       {f"gamma={g:g}": inf_curves[g] for g in config.table_gammas},
                       title="error decay per gamma")
    return inf_curves, l2_curves


def _sweep_config(config: ExperimentConfig, value: float) -> ExperimentConfig:
    if config.sweep_parameter == "T":
        return config.with_updates(T=value)
    if config.sweep_parameter == "c":
        return config.with_updates(c=value)
    return config.with_updates(tau_inverse=value)


def run_sweep(config: ExperimentConfig, out_dir=None, quiet: bool = False):
    """Re-run the experiment along one parameter axis (T, c or tau).

    Each value gets its own subdirectory with the full generation plus
    inversion products; a summary CSV collects the theoretical contraction
    factor, the measured one, and the final errors per value. Returns the
    list of summary rows.
    """
    out = Path(out_dir) if out_dir is not None else Path(config.out)
    summary = []
    curves = {}
    for value in config.sweep_values:
        sub = _sweep_config(config, value)
        run_dir = out / f"{config.sweep_parameter}_{value:g}"
        run_quasi_real(sub, run_dir, quiet=True)
        mesh, op = _build_problem(sub)
        _, report, _ = run_identification(sub, obs_dir=run_dir, out_dir=run_dir, quiet=True)
        measured = measured_rate(op, report)
        summary.append((value, report.rate_bound, measured,
                        report.eps_inf[-1], report.eps_l2[-1],
                        report.converged_at))
        curves[value] = report.eps_inf
        if not quiet:
            print(f"{config.sweep_parameter}={value:g}: bound={report.rate_bound:.4f} "
                  f"measured={measured:.4f} eps_inf[-1]={report.eps_inf[-1]:.6g}")

    _write_csv(out / "summary.csv",
               (config.sweep_parameter, "rate_bound", "measured_rate",
                "final_eps_inf", "final_eps_l2", "converged_at"),
               summary)
    figures.save_decay(out / "sweep.png",
                       {f"{config.sweep_parameter}={v:g}": curves[v]
                        for v in config.sweep_values},
                       title=f"error decay over {config.sweep_parameter}")
    return summary
