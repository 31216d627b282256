"""
Shared fixtures for the test suites
"""
import pytest

from flowmap import AMBIENT_1D, PLANAR_CURVE, FlowMap, make_field, superpose
from mesh import EvolvingMesh, build_circle_mesh, build_interval_mesh


@pytest.fixture
def static_interval():
    return EvolvingMesh.static(build_interval_mesh(0.0, 1.0, 16))


@pytest.fixture
def dilating_interval():
    flow = FlowMap(make_field("dilation", AMBIENT_1D, rate=1.0), horizon=1.0)
    return EvolvingMesh(build_interval_mesh(0.0, 1.0, 16), flow)


@pytest.fixture
def polynomial_interval():
    field = make_field("user-polynomial", AMBIENT_1D, coefficients=[0.2, 0.3, -0.1], time_factor=0.5)
    return EvolvingMesh(build_interval_mesh(0.0, 1.0, 16), FlowMap(field, horizon=1.0))


@pytest.fixture
def expanding_circle():
    flow = FlowMap(make_field("radial-circle", PLANAR_CURVE, rate=0.5), horizon=1.0)
    return EvolvingMesh(build_circle_mesh(1.0, 16), flow)


@pytest.fixture
def rotating_circle():
    flow = FlowMap(make_field("rotating-circle", PLANAR_CURVE, angular_speed=1.0, skew=0.3), horizon=1.0)
    return EvolvingMesh(build_circle_mesh(1.0, 16), flow)


@pytest.fixture
def companion_for():
    """Companion field: the mesh field plus a non-rigid tangential rotation."""
    def build(mesh, angular_speed=0.5, skew=0.3):
        tangential = make_field("rotating-circle", PLANAR_CURVE, angular_speed=angular_speed, skew=skew)
        return superpose(mesh.flow.field, tangential)
    return build
