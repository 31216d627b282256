import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from exceptions import IntegrationError, InversionError
from flowmap import (AMBIENT_1D, PLANAR_CURVE, FlowMap, VelocityField, deformation_tensor, evolve_point,
                     geometry_sample, inverse_flow, inverse_metric_density, jacobian_constant, make_field,
                     metric_time_derivative, superpose)


class ExplodingField(VelocityField):
    name = "exploding"

    def eval(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.where(t > 0.5, np.inf, 1.0) * np.ones_like(x)

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (x.shape[-1],))


def test_dilation_matches_exponential():
    flow = FlowMap(make_field("dilation", AMBIENT_1D, rate=0.5), horizon=1.0)
    x, F = flow.evolve([[0.5], [1.0]], 1.0)
    assert_allclose(x[:, 0], [0.5 * np.exp(0.5), np.exp(0.5)], rtol=1e-8)
    assert_allclose(F[:, 0, 0], np.exp(0.5), rtol=1e-8)


def test_zero_field_is_identity():
    flow = FlowMap(make_field("zero", PLANAR_CURVE), horizon=1.0)
    points = np.array([[1.0, 0.0], [0.0, 2.0]])
    x, F = flow.evolve(points, 0.73)
    assert_array_equal(x, points)
    assert_array_equal(F, np.broadcast_to(np.eye(2), (2, 2, 2)))


def test_translation_is_exact():
    flow = FlowMap(make_field("translation", PLANAR_CURVE, velocity=[0.5, -1.0]), horizon=2.0)
    x, _ = flow.evolve([[1.0, 1.0]], 1.5)
    assert_allclose(x[0], [1.75, -0.5], atol=1e-13)


def test_radial_field_matches_closed_form_radius():
    field = make_field("radial-circle", PLANAR_CURVE, rate=0.5)
    flow = FlowMap(field, horizon=1.0)
    x, _ = flow.evolve([[0.0, 2.0]], 0.7)
    assert np.linalg.norm(x[0]) == pytest.approx(field.radius(0.7, 2.0), rel=1e-8)


def test_rotation_keeps_points_on_the_circle():
    flow = FlowMap(make_field("rotating-circle", PLANAR_CURVE, angular_speed=1.0, skew=0.3), horizon=1.0)
    angles = np.linspace(0.0, 2.0 * np.pi, 7, endpoint=False)
    points = np.column_stack([np.cos(angles), np.sin(angles)])
    x, _ = flow.evolve(points, 1.0)
    assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-8)


def test_track_agrees_with_evolve():
    flow = FlowMap(make_field("user-polynomial", AMBIENT_1D, coefficients=[0.1, 0.4, -0.2], time_factor=1.0),
                   horizon=1.0)
    seeds = np.linspace(0.0, 1.0, 5).reshape(-1, 1)
    trajectory = flow.track(seeds)
    for t in (0.0, 0.3, 1.0 / 64.0, 1.0):
        x, F = trajectory.at(t)
        expected_x, expected_F = flow.evolve(seeds, t)
        assert_allclose(x, expected_x, rtol=1e-14, atol=1e-15)
        assert_allclose(F, expected_F, rtol=1e-14, atol=1e-15)


def test_time_outside_horizon_rejected():
    flow = FlowMap(make_field("dilation", AMBIENT_1D), horizon=1.0)
    with pytest.raises(ValueError):
        flow.evolve([[0.5]], 1.5)


def test_nonfinite_velocity_raises_integration_error():
    flow = FlowMap(ExplodingField(AMBIENT_1D), horizon=1.0)
    with pytest.raises(IntegrationError) as info:
        flow.evolve([[0.0]], 1.0)
    assert info.value.t is not None


@pytest.mark.parametrize("name,kind", [("rotating-circle", AMBIENT_1D),
                                       ("user-polynomial", PLANAR_CURVE),
                                       ("no-such-field", AMBIENT_1D)])
def test_catalog_rejects_bad_combinations(name, kind):
    with pytest.raises(ValueError):
        make_field(name, kind)


def test_superpose_needs_matching_kinds():
    with pytest.raises(ValueError):
        superpose(make_field("zero", AMBIENT_1D), make_field("zero", PLANAR_CURVE))


def test_evolve_point_reports_jacobian():
    flow = FlowMap(make_field("dilation", AMBIENT_1D, rate=0.4), horizon=1.0)
    sample = evolve_point(flow, 0.25, 0.5)
    assert sample.jdet == pytest.approx(np.exp(0.2), rel=1e-9)
    assert sample.position[0] == pytest.approx(0.25 * np.exp(0.2), rel=1e-9)


def test_curve_jacobian_is_tangential_stretch():
    field = make_field("radial-circle", PLANAR_CURVE, rate=0.5)
    flow = FlowMap(field, horizon=1.0)
    sample = evolve_point(flow, [1.0, 0.0], 0.6, tangent=[0.0, 1.0])
    assert sample.jdet == pytest.approx(field.radius(0.6, 1.0), rel=1e-8)


def test_geometry_sample_flat_metric():
    jac = np.array([[[2.0, 0.0], [0.0, 3.0]]])
    sample = geometry_sample(np.zeros((1, 2)), jac)
    assert sample.jdet[0] == pytest.approx(6.0)
    assert_allclose(sample.metric[0], np.diag([4.0, 9.0]))


def test_tangential_divergence_of_rigid_rotation_vanishes():
    field = make_field("rotating-circle", PLANAR_CURVE, angular_speed=2.0)
    angles = np.linspace(0.0, 2.0 * np.pi, 9)
    points = np.column_stack([np.cos(angles), np.sin(angles)])
    tangents = np.column_stack([-np.sin(angles), np.cos(angles)])
    assert_allclose(field.divergence(0.0, points, tangents), 0.0, atol=1e-14)


def test_deformation_tensor_of_dilation_on_the_line():
    field = make_field("dilation", AMBIENT_1D, rate=0.3)
    tensor = deformation_tensor(field, [[0.7]], 0.0)
    assert tensor[0, 0, 0] == pytest.approx(-0.3)


def test_inverse_flow_round_trip():
    flow = FlowMap(make_field("rotating-circle", PLANAR_CURVE, angular_speed=1.0, skew=0.3), horizon=1.0)
    points = np.array([[1.0, 0.0], [0.0, 1.0], [-0.6, 0.8]])
    x, _ = flow.evolve(points, 0.9)
    assert_allclose(inverse_flow(flow, x, 0.9), points, atol=1e-8)


def test_inverse_flow_gives_up_with_a_tiny_tolerance():
    flow = FlowMap(make_field("rotating-circle", PLANAR_CURVE, angular_speed=3.0, skew=0.3), horizon=1.0,
                   substeps=2, tolerance=1e-300)
    x, _ = flow.evolve([[1.0, 0.0]], 0.77)
    with pytest.raises(InversionError):
        inverse_flow(flow, x, 0.77)


def test_metric_density_of_dilation():
    flow = FlowMap(make_field("dilation", AMBIENT_1D, rate=0.5), horizon=1.0)
    density = inverse_metric_density(flow, [0.4], 0.8)
    assert density[0, 0] == pytest.approx(np.exp(-0.4), rel=1e-8)
    assert metric_time_derivative(flow, [0.4], 0.8)[0, 0] == pytest.approx(-0.5 * np.exp(-0.4), rel=1e-8)


def test_jacobian_constant_of_dilation():
    flow = FlowMap(make_field("dilation", AMBIENT_1D, rate=0.5), horizon=1.0)
    points = np.linspace(0.0, 1.0, 4).reshape(-1, 1)
    assert jacobian_constant(flow, points, np.linspace(0.0, 1.0, 5)) == pytest.approx(np.exp(0.5), rel=1e-8)
