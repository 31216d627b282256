import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose, assert_array_equal

from exceptions import InvalidMeshError
from flowmap import AMBIENT_1D, FlowMap, make_field
from mesh import (CLOSED_CURVE, FULL_SPACE, INTERVAL, QUAD_POINTS, ZERO_BOUNDARY, EvolvingMesh, FeFunction,
                  ReferenceMesh, assemble_forms, assemble_load, assemble_mass, assemble_stiffness, build_circle_mesh,
                  build_interval_mesh, restrict, sobolev_power, solve_linear)


@pytest.mark.parametrize("a,b,n", [(0.0, 1.0, 1), (1.0, 1.0, 4), (2.0, 1.0, 4)])
def test_interval_builder_rejects_bad_input(a, b, n):
    with pytest.raises(InvalidMeshError):
        build_interval_mesh(a, b, n)


@pytest.mark.parametrize("radius,n", [(1.0, 2), (0.0, 8), (-1.0, 8)])
def test_circle_builder_rejects_bad_input(radius, n):
    with pytest.raises(InvalidMeshError):
        build_circle_mesh(radius, n)


def test_broken_connectivity_rejected():
    nodes = np.linspace(0.0, 1.0, 4).reshape(-1, 1)
    elements = np.array([[0, 1], [2, 3], [1, 2]])
    with pytest.raises(InvalidMeshError):
        ReferenceMesh(nodes, elements, INTERVAL, (0, 3), np.ones((4, 1)), (0.0, 1.0))


def test_free_nodes_per_space():
    interval = build_interval_mesh(0.0, 1.0, 4)
    assert_array_equal(interval.free_nodes(ZERO_BOUNDARY), [1, 2, 3])
    assert_array_equal(interval.free_nodes(FULL_SPACE), np.arange(5))
    circle = build_circle_mesh(1.0, 6)
    assert circle.topology == CLOSED_CURVE
    assert_array_equal(circle.free_nodes(ZERO_BOUNDARY), np.arange(6))


def test_refined_mesh_doubles_elements():
    circle = build_circle_mesh(2.0, 8)
    refined = circle.refined()
    assert refined.n_elements == 16
    assert refined.parameters == (2.0,)


def test_text_listing():
    text = build_interval_mesh(0.0, 1.0, 2).to_text()
    assert text.splitlines() == [f"# topology {INTERVAL}", "# nodes 3", "0 0", "1 0.5", "2 1",
                                 "# elements 2", "0 0 1", "1 1 2", "# boundary 0 2"]


def test_quadrature_jacobians_of_dilation(dilating_interval):
    jacobians = dilating_interval.quadrature_jacobians(0.5)
    assert jacobians.shape == (16, len(QUAD_POINTS))
    assert_allclose(jacobians, np.exp(0.5), rtol=1e-8)


def test_fe_function_checks_length():
    interval = build_interval_mesh(0.0, 1.0, 4)
    u = FeFunction(np.ones(3), ZERO_BOUNDARY)
    assert_array_equal(u.nodal_values(interval), [0.0, 1.0, 1.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        FeFunction(np.ones(4), ZERO_BOUNDARY).check(interval)


def test_static_mass_integrates_length(static_interval):
    mass = assemble_mass(static_interval, 0.0)
    assert np.sum(mass) == pytest.approx(1.0, rel=1e-14)
    assert_allclose(mass, mass.T)


def test_unit_element_matrices():
    mesh = EvolvingMesh.static(build_interval_mesh(0.0, 2.0, 2))
    expected_mass = np.array([[1 / 3, 1 / 6, 0.0], [1 / 6, 2 / 3, 1 / 6], [0.0, 1 / 6, 1 / 3]])
    expected_stiffness = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
    assert_allclose(assemble_mass(mesh, 0.0), expected_mass, rtol=1e-14, atol=1e-15)
    assert_allclose(assemble_stiffness(mesh, 0.0), expected_stiffness, rtol=1e-14, atol=1e-15)


def test_inscribed_square_perimeter():
    square = build_circle_mesh(1.0, 4)
    assert square.length == pytest.approx(4.0 * np.sqrt(2.0), rel=1e-15)
    mesh = EvolvingMesh.static(square)
    assert np.sum(assemble_mass(mesh, 0.0)) == pytest.approx(4.0 * np.sqrt(2.0), rel=1e-14)


def test_dilation_scales_the_stiffness(dilating_interval):
    reference = assemble_stiffness(dilating_interval, 0.0)
    assert_allclose(assemble_stiffness(dilating_interval, 0.6), np.exp(-0.6) * reference, rtol=1e-9, atol=1e-12)


def test_load_of_unit_source_on_a_static_mesh(static_interval):
    h = 1.0 / 16
    load = assemble_load(static_interval, 0.0, lambda t, x: np.ones(x.shape[:-1]))
    assert load[0] == pytest.approx(h / 2, rel=1e-14)
    assert load[-1] == pytest.approx(h / 2, rel=1e-14)
    assert_allclose(load[1:-1], h, rtol=1e-14)


def test_circle_mass_integrates_polygon_perimeter():
    mesh = EvolvingMesh.static(build_circle_mesh(1.5, 12))
    perimeter = 12 * 2.0 * 1.5 * np.sin(np.pi / 12)
    assert np.sum(assemble_mass(mesh, 0.0)) == pytest.approx(perimeter, rel=1e-13)


def test_stiffness_annihilates_constants(expanding_circle):
    stiffness = assemble_stiffness(expanding_circle, 0.5)
    assert_allclose(stiffness @ np.ones(16), 0.0, atol=1e-12)


def test_dilated_mass_and_divergence(dilating_interval):
    geometry = dilating_interval.geometry(0.4)
    assert np.sum(assemble_mass(dilating_interval, 0.4)) == pytest.approx(np.exp(0.4), rel=1e-9)
    assert_allclose(geometry.divergence, 1.0, rtol=1e-12)
    assert_allclose(geometry.stretch, np.exp(0.4), rtol=1e-9)


def test_discrete_eigenvalue_of_the_laplacian():
    n = 16
    h = 1.0 / n
    mesh = EvolvingMesh.static(build_interval_mesh(0.0, 1.0, n))
    free = mesh.reference.free_nodes(ZERO_BOUNDARY)
    eigenvalues = scipy.linalg.eigh(restrict(assemble_stiffness(mesh, 0.0), free),
                                    restrict(assemble_mass(mesh, 0.0), free), eigvals_only=True)
    for k in (1, 2, 3):
        c = np.cos(k * np.pi * h)
        expected = (6.0 / h ** 2) * (1.0 - c) / (2.0 + c)
        assert eigenvalues[k - 1] == pytest.approx(expected, rel=1e-10)


def test_load_of_unit_source(dilating_interval):
    load = assemble_load(dilating_interval, 0.5, lambda t, x: np.ones(x.shape[:-1]))
    assert np.sum(load) == pytest.approx(np.exp(0.5), rel=1e-9)
    assert_array_equal(assemble_load(dilating_interval, 0.5), np.zeros(17))


def test_assemble_forms_bundles_matrices(dilating_interval):
    forms = assemble_forms(dilating_interval, 0.2)
    assert_allclose(forms.transport, forms.mass, rtol=1e-12)
    assert_array_equal(forms.stiffness, assemble_stiffness(dilating_interval, 0.2))


def test_banded_and_dense_solves_agree(static_interval):
    free = static_interval.reference.free_nodes(ZERO_BOUNDARY)
    matrix = restrict(assemble_mass(static_interval, 0.0) + assemble_stiffness(static_interval, 0.0), free)
    rhs = np.linspace(-1.0, 1.0, len(free))
    assert_allclose(solve_linear(matrix, rhs, banded=True), solve_linear(matrix, rhs), rtol=1e-12)


def test_sobolev_power_two_matches_h1_form(expanding_circle):
    values = np.cos(2.0 * np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False))
    quadratic = values @ (assemble_mass(expanding_circle, 0.3) + assemble_stiffness(expanding_circle, 0.3)) @ values
    assert sobolev_power(expanding_circle, 0.3, values, 2.0) == pytest.approx(quadratic, rel=1e-12)


def test_zero_flow_assembles_like_the_static_mesh():
    reference = build_interval_mesh(0.0, 2.0, 10)
    moving = EvolvingMesh(reference, FlowMap(make_field("zero", AMBIENT_1D), horizon=1.0))
    static = EvolvingMesh.static(reference)
    for t in (0.0, 0.37, 1.0):
        assert_array_equal(assemble_mass(moving, t), assemble_mass(static, t))
        assert_array_equal(assemble_stiffness(moving, t), assemble_stiffness(static, t))


def test_mesh_rejects_mismatched_flow():
    flow = FlowMap(make_field("dilation", AMBIENT_1D), horizon=1.0)
    with pytest.raises(ValueError):
        EvolvingMesh(build_circle_mesh(1.0, 8), flow)
