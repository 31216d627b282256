import dataclasses

import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose, assert_array_equal

import config
from calculus_checks import check_weak_derivative_characterization
from flowmap import AMBIENT_1D, FlowMap, make_field
from mesh import (FULL_SPACE, ZERO_BOUNDARY, EvolvingMesh, assemble_mass, assemble_stiffness, build_interval_mesh,
                  restrict)
from solver import (LINEAR_DIFFUSION, P_LAPLACE, ManufacturedSolution, OperatorSpec, ProblemConfig, SolveResult,
                    check_energy, check_mass_conservation, check_newton, coercivity_witness,
                    convergence_study, epsilon_limit, fixed_domain_reference, heat_convergence_configs,
                    monotonicity_witness, nonlinear_residual, operator_tangent, project_initial, solve,
                    stability_experiment)
from utils import LinearCongruentialGenerator


def _sine(x):
    return np.sin(np.pi * x[..., 0])


def _heat(mesh, steps=20, horizon=1.0, operator=None):
    initial = project_initial(mesh, _sine, ZERO_BOUNDARY)
    return ProblemConfig(mesh, operator or OperatorSpec(), initial, horizon, steps, space=ZERO_BOUNDARY)


def _result(histories, iterations):
    count = len(histories) + 1
    zeros = np.zeros(count)
    return SolveResult(times=np.linspace(0.0, 1.0, count), states=np.zeros((count, 1)), mass=zeros,
                       h_norm_sq=zeros, xp_accumulator=zeros, dissipation=zeros,
                       newton_iters=np.asarray(iterations), energy_bound=zeros,
                       weighted_states=np.zeros((count, 1)), transport_terms=np.zeros((count, 1)),
                       newton_histories=histories)


@pytest.mark.parametrize("kwargs", [
    {"kind": "heat"},
    {"kind": P_LAPLACE, "p": 1.0},
    {"kind": LINEAR_DIFFUSION, "p": 3.0},
    {"kind": P_LAPLACE, "p": 3.0, "alpha": -1.0},
    {"kind": P_LAPLACE, "p": 1.5, "epsilon": 0.0},
    {"kind": P_LAPLACE, "p": 3.0, "epsilon": 0.0},
    {"kind": P_LAPLACE, "p": 4.0, "epsilon": 0.0},
])
def test_operator_spec_rejects_bad_parameters(kwargs):
    with pytest.raises(ValueError):
        OperatorSpec(**kwargs)


def test_operator_spec_allows_unregularized_linear_case():
    assert OperatorSpec(P_LAPLACE, 2.0, epsilon=0.0).epsilon == 0.0


def test_linear_residual_is_the_stiffness_product(dilating_interval):
    U = np.sin(np.linspace(0.0, 3.0, 17))
    residual = nonlinear_residual(OperatorSpec(), dilating_interval, 0.4, U, space=FULL_SPACE)
    assert_allclose(residual, assemble_stiffness(dilating_interval, 0.4) @ U, rtol=1e-12, atol=1e-12)


def test_residual_vanishes_at_zero(expanding_circle):
    spec = OperatorSpec(P_LAPLACE, 3.0, alpha=0.5)
    assert_array_equal(nonlinear_residual(spec, expanding_circle, 0.3, np.zeros(16), epsilon=0.0), 0.0)
    assert_array_equal(nonlinear_residual(spec, expanding_circle, 0.3, np.zeros(16)), 0.0)


def test_p4_residual_on_unit_elements():
    mesh = EvolvingMesh.static(build_interval_mesh(0.0, 2.0, 2))
    residual = nonlinear_residual(OperatorSpec(P_LAPLACE, 4.0), mesh, 0.0, np.array([0.0, 0.5, 1.0]),
                                  space=FULL_SPACE, epsilon=0.0)
    assert_allclose(residual, [-0.125, 0.0, 0.125], atol=1e-15)


def test_tangent_matches_central_difference(expanding_circle):
    spec = OperatorSpec(P_LAPLACE, 3.0, alpha=0.5)
    angles = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
    U = 1.0 + 0.5 * np.cos(angles)
    direction = np.sin(3.0 * angles)
    h = 1e-6
    difference = (nonlinear_residual(spec, expanding_circle, 0.3, U + h * direction)
                  - nonlinear_residual(spec, expanding_circle, 0.3, U - h * direction)) / (2.0 * h)
    tangent = operator_tangent(spec, expanding_circle, 0.3, U)
    assert_allclose(tangent @ direction, difference, atol=1e-7)


def test_problem_config_validation(dilating_interval):
    initial = np.zeros(15)
    with pytest.raises(ValueError):
        ProblemConfig(dilating_interval, OperatorSpec(), initial, 1.0, 0, space=ZERO_BOUNDARY)
    with pytest.raises(ValueError):
        ProblemConfig(dilating_interval, OperatorSpec(), initial, 2.0, 10, space=ZERO_BOUNDARY)
    with pytest.raises(ValueError):
        ProblemConfig(dilating_interval, OperatorSpec(), np.zeros(17), 1.0, 10, space=ZERO_BOUNDARY)
    problem = ProblemConfig(dilating_interval, OperatorSpec(), initial, 1.0, 10)
    assert problem.space == ZERO_BOUNDARY
    assert problem.tau == pytest.approx(0.1)


def test_static_eigenfunction_decays_geometrically(static_interval):
    free = static_interval.reference.free_nodes(ZERO_BOUNDARY)
    mass = restrict(assemble_mass(static_interval, 0.0), free)
    stiffness = restrict(assemble_stiffness(static_interval, 0.0), free)
    eigenvalues, vectors = scipy.linalg.eigh(stiffness, mass)
    problem = ProblemConfig(static_interval, OperatorSpec(), vectors[:, 0], 0.1, 10, space=ZERO_BOUNDARY)
    result = solve(problem)
    expected = vectors[:, 0] * (1.0 + problem.tau * eigenvalues[0]) ** -10
    assert_allclose(result.final, expected, rtol=1e-9, atol=1e-12)
    assert np.all(result.newton_iters[1:] == 1)


def test_mass_is_conserved_on_the_expanding_circle(expanding_circle):
    initial = project_initial(expanding_circle, lambda x: 1.0 + x[..., 0] ** 2)
    result = solve(ProblemConfig(expanding_circle, OperatorSpec(), initial, 0.5, 50))
    assert check_mass_conservation(result).passed
    assert result.mass[-1] == pytest.approx(result.mass[0], rel=1e-12)


def test_zero_flow_reproduces_the_fixed_domain_solution():
    reference = build_interval_mesh(0.0, 1.0, 12)
    moving = EvolvingMesh(reference, FlowMap(make_field("zero", AMBIENT_1D), horizon=1.0))
    problem = _heat(moving, steps=10, operator=OperatorSpec(P_LAPLACE, 3.0))
    moving_result = solve(problem)
    static_result = solve(fixed_domain_reference(problem))
    assert_array_equal(moving_result.states, static_result.states)
    assert_array_equal(moving_result.h_norm_sq, static_result.h_norm_sq)


def test_p_laplace_energy_and_newton(dilating_interval):
    result = solve(_heat(dilating_interval, operator=OperatorSpec(P_LAPLACE, 3.0)))
    assert check_energy(result).passed
    assert result.newton_iters.max() <= config.NEWTON_MAX_ITER
    assert np.all(np.diff(result.xp_accumulator) >= 0.0)
    assert np.all(np.diff(result.dissipation) >= 0.0)


@pytest.mark.parametrize("operator", [OperatorSpec(), OperatorSpec(P_LAPLACE, 3.0), OperatorSpec(P_LAPLACE, 1.5)])
def test_unforced_static_norm_never_grows(static_interval, operator):
    result = solve(_heat(static_interval, steps=40, operator=operator))
    assert result.h_norm_sq[-1] < result.h_norm_sq[0]
    assert np.all(np.diff(result.h_norm_sq) <= 1e-14 * result.h_norm_sq[0])


def test_heat_energy_stays_below_the_bound(polynomial_interval):
    assert check_energy(solve(_heat(polynomial_interval))).passed


def test_newton_tail_accepts_superlinear_decay():
    report = check_newton(_result([[1.0, 1e-5, 1e-9, 1e-20]], [0, 3]))
    assert report.passed


def test_newton_tail_rejects_linear_decay():
    assert not check_newton(_result([[1e-5, 9e-6]], [0, 1])).passed


def test_newton_tail_enforces_the_iteration_budget():
    assert not check_newton(_result([[1.0, 1e-20]], [0, 30]), max_iter=25).passed


def test_newton_tail_constant_comes_from_config(monkeypatch):
    result = _result([[1.0, 1e-6, 5e-9]], [0, 2])
    assert check_newton(result).passed
    monkeypatch.setattr(config, "NEWTON_TAIL_CONSTANT", 1.0)
    assert not check_newton(result).passed


def test_space_convergence_is_second_order():
    solution = ManufacturedSolution(rate=0.5)
    table = convergence_study(heat_convergence_configs(solution, "space", levels=3), solution, "space")
    assert np.all(np.diff(table.errors) < 0.0)
    assert config.ORDER_BAND[0] <= table.orders[-1] <= config.ORDER_BAND[1]


def test_time_convergence_is_first_order():
    solution = ManufacturedSolution(rate=0.5)
    problems = heat_convergence_configs(solution, "time", levels=3)
    table = convergence_study(problems, solution, "time")
    assert_allclose(table.parameters, [0.5 / 16, 0.5 / 32, 0.5 / 64])
    assert config.FIRST_ORDER_BAND[0] <= table.orders[-1] <= config.FIRST_ORDER_BAND[1]


def test_convergence_configs_reject_unknown_refinement():
    with pytest.raises(ValueError):
        heat_convergence_configs(ManufacturedSolution(), "both")


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_witnesses_on_the_interval(dilating_interval, p):
    spec = OperatorSpec(P_LAPLACE, p)
    assert monotonicity_witness(spec, dilating_interval, 0.0, samples=20).passed
    assert coercivity_witness(spec, dilating_interval, 1.0, samples=20).passed


def test_witnesses_on_the_circle_with_zeroth_order_term(expanding_circle):
    spec = OperatorSpec(P_LAPLACE, 3.0, alpha=0.5)
    assert monotonicity_witness(spec, expanding_circle, 0.5, samples=20).passed
    assert coercivity_witness(spec, expanding_circle, 0.5, samples=20).passed


def test_epsilon_limit_settles(dilating_interval):
    problem = _heat(dilating_interval, steps=10, operator=OperatorSpec(P_LAPLACE, 3.0))
    report = epsilon_limit(problem)
    assert report.passed
    assert report.residuals[-1] <= report.residuals[0]
    assert report.residuals[-1] <= report.tolerance or report.order >= config.FIRST_ORDER_BAND[0]


def test_static_stability_contracts(static_interval):
    problem = _heat(static_interval, steps=20)
    rng = LinearCongruentialGenerator(5)
    perturbed = problem.initial + 0.1 * rng.symmetric(len(problem.initial))
    table = stability_experiment(problem, problem.initial, perturbed)
    assert table.growth_constant == 0.0
    assert table.max_ratio <= 1.0 + 1e-12


def test_dilating_stability_within_growth(dilating_interval):
    problem = _heat(dilating_interval, steps=20, operator=OperatorSpec(P_LAPLACE, 3.0))
    rng = LinearCongruentialGenerator(5)
    perturbed = problem.initial + 0.1 * rng.symmetric(len(problem.initial))
    table = stability_experiment(problem, problem.initial, perturbed)
    assert table.growth_constant == pytest.approx(1.0, rel=1e-9)
    assert table.max_ratio <= 1.05


def test_weak_derivative_characterization(dilating_interval):
    base = _heat(dilating_interval, steps=20)
    results = [solve(dataclasses.replace(base, steps=steps)) for steps in (20, 40, 80)]
    report = check_weak_derivative_characterization(results, 0.5)
    assert report.passed
    assert report.residuals[-1] < report.residuals[0]


def test_weak_derivative_needs_an_interior_time(dilating_interval):
    result = solve(_heat(dilating_interval, steps=4))
    with pytest.raises(ValueError):
        check_weak_derivative_characterization([result], 1.0)


def test_solve_result_csv(tmp_path, dilating_interval):
    result = solve(_heat(dilating_interval, steps=4))
    lines = result.to_csv(tmp_path / "solve.csv").read_text().splitlines()
    assert "# t,mass,h_norm_sq,xp_accumulator,dissipation,newton_iters,mass_drift,energy_bound" in lines
    assert len([line for line in lines if not line.startswith("#")]) == 5
