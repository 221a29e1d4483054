import math

import numpy as np
import pytest

from parasource import (Coefficients, InvalidArgumentError, IterationOptions,
                        ObservationData, SourceTerm, TimeGrid, assemble,
                        build_unit_square_mesh, contraction_bound, exact_source,
                        exponential_modulation, final_time_delta_weights,
                        identify_integral, identify_multiplicative,
                        identify_nonlocal, identify_rhs, integral_rate, m_norm,
                        measured_rate, multiplicative_rate, project_l2,
                        proxy_error_ratios, solve_cauchy, uniform_weights)
from parasource.linalg import SolveOptions

import oracles

TIGHT = IterationOptions(max_iters=60, stop_tol=1e-11,
                         solve_opts=SolveOptions(rel_tol=1e-12))


def small_problem(m=8, c=10.0, T=0.1, tau_inverse=1e-2, gamma=10.0):
    """Quasi-real data on a small mesh: CN forward march on a 10x finer grid."""
    mesh = build_unit_square_mesh(m)
    op = assemble(mesh, Coefficients.constants(k=1.0, c=c, mu=0.0))
    profile = project_l2(op, exact_source(gamma), mesh)
    fgrid = TimeGrid.from_horizon(T, tau_inverse / 10.0)
    observed = solve_cauchy(op, np.zeros(op.dof), SourceTerm.constant(profile),
                            fgrid, "cn").w
    igrid = TimeGrid.from_horizon(T, tau_inverse)
    return mesh, op, profile, observed, igrid


# ------------------------------------------------------------------ rates ----

def test_contraction_bound_frozen_values():
    assert contraction_bound(10.0, TimeGrid(1e-3, 100)) == pytest.approx(
        0.3697112123291189, rel=1e-14)
    assert contraction_bound(10.0, TimeGrid(1e-2, 10)) == pytest.approx(
        0.3855432894295314, rel=1e-14)


def test_contraction_bound_tends_to_continuous_factor():
    # (1 + tau delta)^(-N) -> exp(-delta T) as tau -> 0 with T fixed
    got = contraction_bound(1.0, TimeGrid(1e-5, 100000))
    assert got == pytest.approx(math.exp(-1.0), abs=1e-4)
    assert got > math.exp(-1.0)  # discrete factor is always the larger


def test_contraction_bound_rejects_bad_delta():
    grid = TimeGrid(0.1, 10)
    for bad in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(InvalidArgumentError):
            contraction_bound(bad, grid)


def test_integral_rate_special_cases():
    grid = TimeGrid(1e-2, 10)
    # all weight at the final level reduces to the final-time factor
    assert integral_rate(10.0, grid, final_time_delta_weights(grid)) == pytest.approx(
        contraction_bound(10.0, grid), rel=1e-13)
    # uniform weights: geometric sum (tau/T) sum_n r^n with r = 1/(1 + tau delta)
    r = 1.0 / 1.1
    ref = (1e-2 / 0.1) * r * (1 - r ** 10) / (1 - r)
    assert integral_rate(10.0, grid, uniform_weights(grid)) == pytest.approx(ref, rel=1e-12)


def test_multiplicative_rate_special_cases():
    grid = TimeGrid(1e-3, 100)
    ones = np.ones(grid.n_steps + 1)
    assert multiplicative_rate(10.0, grid, ones) == pytest.approx(
        math.exp(-1.0), rel=1e-12)
    beta = exponential_modulation(grid, 20.0)
    ref = 1.0 - math.exp(-20.0 * 0.1) * (1.0 - math.exp(-1.0))
    assert multiplicative_rate(10.0, grid, beta) == pytest.approx(ref, rel=1e-12)


def test_weight_families():
    grid = TimeGrid(1e-2, 10)
    uni = uniform_weights(grid)
    assert uni.shape == (11,)
    assert grid.tau * uni[1:].sum() == pytest.approx(1.0, abs=1e-12)
    delta = final_time_delta_weights(grid)
    assert delta[-1] == pytest.approx(1.0 / grid.tau)
    assert not np.any(delta[:-1])
    beta = exponential_modulation(grid, 5.0)
    assert beta[-1] == 1.0
    assert np.all(np.diff(beta) > 0) and np.all(beta > 0)
    with pytest.raises(InvalidArgumentError):
        exponential_modulation(grid, -1.0)


# -------------------------------------------------------------- trivial data ----

@pytest.mark.parametrize("method", ["nonlocal", "rhs", "integral", "multiplicative"])
def test_zero_data_recovers_zero_in_one_sweep(op2, method):
    grid = TimeGrid(0.05, 4)
    data = ObservationData(
        initial=np.zeros(op2.dof), observed=np.zeros(op2.dof),
        omega_samples=uniform_weights(grid),
        beta_samples=exponential_modulation(grid, 2.0))
    solver = {"nonlocal": identify_nonlocal, "rhs": identify_rhs,
              "integral": identify_integral, "multiplicative": identify_multiplicative}[method]
    phi, report = solver(op2, data, grid, delta=10.0)
    assert np.array_equal(phi, np.zeros(op2.dof))
    assert report.converged_at == 1


# ------------------------------------------------------------ dense oracles ----

@pytest.fixture(scope="module")
def tiny_setup():
    mesh = build_unit_square_mesh(2)
    op = assemble(mesh, Coefficients.constants(k=1.3, c=7.0, mu=0.2))
    rng = np.random.default_rng(7)
    initial = rng.standard_normal(op.dof)
    observed = rng.standard_normal(op.dof)
    grid = TimeGrid(0.05, 4)
    M, K = oracles.dense_pair(op)
    return op, grid, initial, observed, M, K


def test_identify_nonlocal_matches_dense_oracle(tiny_setup):
    op, grid, initial, observed, M, K = tiny_setup
    data = ObservationData(initial=initial, observed=observed)
    phi, report = identify_nonlocal(op, data, grid, TIGHT)
    ref, _ = oracles.nonlocal_dense(M, K, grid.tau, grid.n_steps, initial, observed)
    assert report.converged
    assert np.max(np.abs(phi - ref)) < 1e-9


def test_identify_rhs_matches_dense_oracle(tiny_setup):
    op, grid, initial, observed, M, K = tiny_setup
    data = ObservationData(initial=initial, observed=observed)
    phi, report = identify_rhs(op, data, grid, TIGHT)
    ref, _ = oracles.rhs_dense(M, K, grid.tau, grid.n_steps, initial, observed)
    assert report.converged
    assert np.max(np.abs(phi - ref)) < 1e-9


def test_identify_integral_matches_dense_oracle(tiny_setup):
    op, grid, initial, observed, M, K = tiny_setup
    omega = uniform_weights(grid)
    data = ObservationData(initial=initial, observed=observed, omega_samples=omega)
    phi, report = identify_integral(op, data, grid, TIGHT)
    ref, _ = oracles.integral_dense(M, K, grid.tau, grid.n_steps, initial, observed, omega)
    assert report.converged
    assert np.max(np.abs(phi - ref)) < 1e-9


def test_identify_multiplicative_matches_dense_oracle(tiny_setup):
    op, grid, initial, observed, M, K = tiny_setup
    beta = exponential_modulation(grid, 3.0)
    data = ObservationData(initial=initial, observed=observed, beta_samples=beta)
    phi, report = identify_multiplicative(op, data, grid, TIGHT)
    ref, _ = oracles.multiplicative_dense(M, K, grid.tau, grid.n_steps, initial,
                                          observed, beta)
    assert report.converged
    assert np.max(np.abs(phi - ref)) < 1e-9


# ------------------------------------------------------- variant consistency ----

def test_integral_with_final_delta_equals_rhs():
    _, op, _, observed, grid = small_problem()
    base = ObservationData(initial=np.zeros(op.dof), observed=observed)
    with_delta = ObservationData(initial=np.zeros(op.dof), observed=observed,
                                 omega_samples=final_time_delta_weights(grid))
    phi_rhs, _ = identify_rhs(op, base, grid, delta=10.0)
    phi_int, _ = identify_integral(op, with_delta, grid, delta=10.0)
    assert np.max(np.abs(phi_rhs - phi_int)) < 1e-12


def test_multiplicative_with_unit_beta_equals_rhs():
    _, op, _, observed, grid = small_problem()
    base = ObservationData(initial=np.zeros(op.dof), observed=observed)
    unit = ObservationData(initial=np.zeros(op.dof), observed=observed,
                           beta_samples=np.ones(grid.n_steps + 1))
    phi_rhs, _ = identify_rhs(op, base, grid, delta=10.0)
    phi_mult, _ = identify_multiplicative(op, unit, grid, delta=10.0)
    assert np.array_equal(phi_rhs, phi_mult)


def test_nonlocal_and_rhs_share_the_fixed_point():
    _, op, _, observed, grid = small_problem()
    data = ObservationData(initial=np.zeros(op.dof), observed=observed)
    phi_nl, _ = identify_nonlocal(op, data, grid, TIGHT, delta=10.0)
    phi_rhs, _ = identify_rhs(op, data, grid, TIGHT, delta=10.0)
    assert np.max(np.abs(phi_nl - phi_rhs)) < 1e-8


# ---------------------------------------------------------- measured rates ----

@pytest.mark.parametrize("method", ["nonlocal", "rhs", "integral", "multiplicative"])
def test_update_ratios_below_theoretical_rate(method):
    _, op, profile, observed, grid = small_problem()
    data = ObservationData(
        initial=np.zeros(op.dof), observed=observed,
        omega_samples=uniform_weights(grid),
        beta_samples=exponential_modulation(grid, 10.0))
    solver = {"nonlocal": identify_nonlocal, "rhs": identify_rhs,
              "integral": identify_integral, "multiplicative": identify_multiplicative}[method]
    opts = IterationOptions(max_iters=12, stop_tol=0.0, keep_iterates=True)
    phi, report = solver(op, data, grid, opts, delta=10.0)
    # every early update-norm quotient obeys the contraction factor
    for ratio in report.contraction_ratios[:5]:
        assert ratio <= report.rate_bound + 0.05
    assert measured_rate(op, report) <= report.rate_bound + 0.05


def test_rate_decreases_with_horizon():
    rates = []
    for T in (0.05, 0.1, 0.2):
        _, op, _, observed, grid = small_problem(T=T, tau_inverse=1e-2)
        data = ObservationData(initial=np.zeros(op.dof), observed=observed)
        opts = IterationOptions(max_iters=12, stop_tol=0.0, keep_iterates=True)
        _, report = identify_rhs(op, data, grid, opts, delta=10.0)
        rates.append(measured_rate(op, report))
    assert rates[0] > rates[1] > rates[2]


def test_rate_decreases_with_reaction_constant():
    rates = []
    for c in (10.0, 30.0, 100.0):
        _, op, _, observed, grid = small_problem(c=c)
        data = ObservationData(initial=np.zeros(op.dof), observed=observed)
        opts = IterationOptions(max_iters=12, stop_tol=0.0, keep_iterates=True)
        _, report = identify_nonlocal(op, data, grid, opts, delta=c)
        rates.append(measured_rate(op, report))
    assert rates[0] > rates[1] > rates[2]


def test_modulation_slowdown_tracks_rate_formula():
    # weaker modulation at t=0 (larger alpha) slows convergence, but the
    # measured ratio stays below the predicted factor
    _, op, _, observed, grid = small_problem(T=0.1, tau_inverse=1e-2)
    previous = 0.0
    for alpha in (0.0, 5.0, 20.0):
        beta = exponential_modulation(grid, alpha)
        data = ObservationData(initial=np.zeros(op.dof), observed=observed,
                               beta_samples=beta)
        opts = IterationOptions(max_iters=15, stop_tol=0.0, keep_iterates=True)
        _, report = identify_multiplicative(op, data, grid, opts, delta=10.0)
        measured = measured_rate(op, report)
        assert measured <= report.rate_bound + 0.05
        assert measured >= previous  # slower for larger alpha
        previous = measured


# --------------------------------------------------------------- reporting ----

def test_report_shapes_and_convergence_flag():
    _, op, profile, observed, grid = small_problem()
    mesh = build_unit_square_mesh(8)
    nodal = exact_source(10.0)(mesh.nodes[:, 0], mesh.nodes[:, 1])
    data = ObservationData(initial=np.zeros(op.dof), observed=observed)
    opts = IterationOptions(max_iters=8, stop_tol=0.0, keep_iterates=True)
    phi, report = identify_rhs(op, data, grid, opts, delta=10.0,
                               exact_nodal=nodal, exact_projected=profile)
    assert len(report.update_norms) == 8
    assert len(report.contraction_ratios) == 7
    assert len(report.eps_inf) == len(report.eps_l2) == len(report.eps_l2_nodal) == 9
    assert len(report.iterates) == 9
    assert report.converged_at is None and not report.converged
    assert report.delta == 10.0 and report.delta_source == "given"
    assert np.array_equal(report.iterates[-1], phi)
    # errors actually decay on this data
    assert report.eps_inf[3] < report.eps_inf[0]


def test_delta_estimated_when_not_given():
    _, op, _, observed, grid = small_problem()
    data = ObservationData(initial=np.zeros(op.dof), observed=observed)
    _, report = identify_rhs(op, data, grid)
    assert report.delta_source == "estimated"
    assert report.delta == pytest.approx(10.0, abs=1e-5)
    assert report.rate_bound == pytest.approx(
        contraction_bound(report.delta, grid), rel=1e-12)


def test_proxy_ratios_need_kept_iterates():
    _, op, _, observed, grid = small_problem()
    data = ObservationData(initial=np.zeros(op.dof), observed=observed)
    _, report = identify_rhs(op, data, grid, delta=10.0)
    with pytest.raises(InvalidArgumentError):
        proxy_error_ratios(op, report)


def test_init_variants_reach_the_same_limit(op2, rng):
    grid = TimeGrid(0.05, 4)
    data = ObservationData(initial=rng.standard_normal(op2.dof),
                           observed=rng.standard_normal(op2.dof))
    limits = []
    for init in ("a_observed", "a_diff", "zero"):
        opts = IterationOptions(max_iters=80, stop_tol=1e-11, init=init,
                                solve_opts=SolveOptions(rel_tol=1e-12))
        phi, report = identify_nonlocal(op2, data, grid, opts, delta=7.0)
        assert report.converged
        limits.append(phi)
    given = IterationOptions(max_iters=80, stop_tol=1e-11, init="given",
                             init_field=rng.standard_normal(op2.dof),
                             solve_opts=SolveOptions(rel_tol=1e-12))
    phi, _ = identify_nonlocal(op2, data, grid, given, delta=7.0)
    limits.append(phi)
    for other in limits[1:]:
        assert np.max(np.abs(other - limits[0])) < 1e-9


def test_iteration_options_validation(rng):
    with pytest.raises(InvalidArgumentError):
        IterationOptions(max_iters=0)
    with pytest.raises(InvalidArgumentError):
        IterationOptions(stop_tol=-1.0)
    with pytest.raises(InvalidArgumentError):
        IterationOptions(init="nonsense")
    with pytest.raises(InvalidArgumentError):
        IterationOptions(init="given")  # missing the field


# -------------------------------------------------------------- validation ----

def test_omega_validation(op2):
    grid = TimeGrid(0.05, 4)
    data = lambda omega: ObservationData(  # noqa: E731
        initial=np.zeros(op2.dof), observed=np.ones(op2.dof), omega_samples=omega)

    with pytest.raises(InvalidArgumentError):
        identify_integral(op2, data(None), grid, delta=10.0)
    with pytest.raises(InvalidArgumentError):
        identify_integral(op2, data(np.ones(3)), grid, delta=10.0)  # wrong length
    with pytest.raises(InvalidArgumentError):
        identify_integral(op2, data(-uniform_weights(grid)), grid, delta=10.0)
    with pytest.raises(InvalidArgumentError):
        identify_integral(op2, data(2.0 * uniform_weights(grid)), grid, delta=10.0)

    # all weight at t=0: flagged as non-contractive, then rejected
    at_zero = np.zeros(grid.n_steps + 1)
    at_zero[0] = 1.0 / grid.tau
    with pytest.warns(RuntimeWarning, match="initial time"):
        with pytest.raises(InvalidArgumentError):
            identify_integral(op2, data(at_zero), grid, delta=10.0)


def test_beta_validation(op2):
    grid = TimeGrid(0.05, 4)
    data = lambda beta: ObservationData(  # noqa: E731
        initial=np.zeros(op2.dof), observed=np.ones(op2.dof), beta_samples=beta)

    with pytest.raises(InvalidArgumentError):
        identify_multiplicative(op2, data(None), grid, delta=10.0)
    with pytest.raises(InvalidArgumentError):
        identify_multiplicative(op2, data(np.ones(3)), grid, delta=10.0)
    decreasing = np.linspace(2.0, 1.0, grid.n_steps + 1)
    with pytest.raises(InvalidArgumentError):
        identify_multiplicative(op2, data(decreasing), grid, delta=10.0)
    off_final = np.linspace(0.5, 0.9, grid.n_steps + 1)
    with pytest.raises(InvalidArgumentError):
        identify_multiplicative(op2, data(off_final), grid, delta=10.0)


def test_field_shapes_validated(op2):
    grid = TimeGrid(0.05, 4)
    with pytest.raises(InvalidArgumentError):
        identify_rhs(op2, ObservationData(initial=np.zeros(3), observed=np.zeros(op2.dof)),
                     grid, delta=10.0)
    with pytest.raises(InvalidArgumentError):
        identify_rhs(op2, ObservationData(initial=np.zeros(op2.dof), observed=np.zeros(2)),
                     grid, delta=10.0)
