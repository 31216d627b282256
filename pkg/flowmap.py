"""
Velocity fields, flow maps and the geometric quantities they induce
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as npoly

import config
from exceptions import DegenerateFlowError, IntegrationError, InversionError

logger = logging.getLogger(__name__)

AMBIENT_1D = "ambient-1d"
PLANAR_CURVE = "planar-curve"
FIELD_KINDS = (AMBIENT_1D, PLANAR_CURVE)


def unit_vectors(v: np.ndarray) -> np.ndarray:
    """Normalize vectors along the last axis."""
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def rotate_clockwise(v: np.ndarray) -> np.ndarray:
    """(v1, v2) -> (v2, -v1); the outward normal of a counter-clockwise tangent."""
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


def _identity_like(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    return np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()


class VelocityField:
    """
    Evaluable velocity field w(t, x) with spatial Jacobian and divergence.

    Points are arrays of shape (..., d); eval returns (..., d) and jacobian
    returns (..., d, d). Subclasses supply eval, jacobian and an analytic
    flat divergence.
    """

    name = "field"

    def __init__(self, kind: str):
        if kind not in FIELD_KINDS:
            raise ValueError(f"Unknown field kind '{kind}', expected one of {FIELD_KINDS}")
        self.kind = kind
        self.dim = 1 if kind == AMBIENT_1D else 2

    def eval(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def flat_divergence(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.trace(self.jacobian(t, x), axis1=-2, axis2=-1)

    def divergence(self, t: float, x: np.ndarray, tangent: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Divergence of the field, tangential when a tangent is supplied

        Args:
            t: Time
            x: Points, shape (..., d)
            tangent: Unit (or unnormalized) tangents of the curve at x

        Returns:
            Divergence values, shape (...)
        """
        if tangent is None or self.dim == 1:
            return self.flat_divergence(t, x)
        tau = unit_vectors(tangent)
        return np.einsum('...i,...ij,...j->...', tau, self.jacobian(t, x), tau)

    def describe(self) -> str:
        return f"{self.name} ({self.kind})"


class ZeroField(VelocityField):
    name = "zero"

    def eval(self, t, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (x.shape[-1],))

    def flat_divergence(self, t, x):
        return np.zeros(np.asarray(x).shape[:-1])


class TranslationField(VelocityField):
    name = "translation"

    def __init__(self, kind: str, velocity: Sequence[float]):
        super().__init__(kind)
        self.velocity = np.atleast_1d(np.asarray(velocity, dtype=float))
        if self.velocity.shape != (self.dim,):
            raise ValueError(f"Translation velocity needs {self.dim} component(s), got {self.velocity.size}")

    def eval(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.velocity, x.shape).copy()

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.dim,))

    def flat_divergence(self, t, x):
        return np.zeros(np.asarray(x).shape[:-1])


class DilationField(VelocityField):
    """w(t, x) = rate * x."""

    name = "dilation"

    def __init__(self, kind: str, rate: float):
        super().__init__(kind)
        self.rate = float(rate)

    def eval(self, t, x):
        return self.rate * np.asarray(x, dtype=float)

    def jacobian(self, t, x):
        return self.rate * _identity_like(np.asarray(x, dtype=float))

    def flat_divergence(self, t, x):
        return np.full(np.asarray(x).shape[:-1], self.dim * self.rate)


class RadialField(VelocityField):
    """
    Pulsating radial growth w(t, x) = rate * (1 + sin(pi t) / 2) * x.

    A centred circle of radius R0 evolves to
    R0 * exp(rate * (t + (1 - cos(pi t)) / (2 pi))).
    """

    name = "radial-circle"

    def __init__(self, kind: str, rate: float):
        super().__init__(kind)
        self.rate = float(rate)

    def factor(self, t: float) -> float:
        return self.rate * (1.0 + 0.5 * np.sin(np.pi * t))

    def radius(self, t: float, r0: float) -> float:
        """Closed-form radius (or half-width scale) at time t."""
        return r0 * np.exp(self.rate * (t + (1.0 - np.cos(np.pi * t)) / (2.0 * np.pi)))

    def eval(self, t, x):
        return self.factor(t) * np.asarray(x, dtype=float)

    def jacobian(self, t, x):
        return self.factor(t) * _identity_like(np.asarray(x, dtype=float))

    def flat_divergence(self, t, x):
        return np.full(np.asarray(x).shape[:-1], self.dim * self.factor(t))


class RotatingField(VelocityField):
    """
    Non-uniform rotation w(x) = angular_speed * (1 + skew * x1) * (-x2, x1).

    Tangent to every circle centred at the origin, so it moves points along
    such a circle without changing it as a set. Requires skew * R0 < 1 for
    a rotation that keeps its direction.
    """

    name = "rotating-circle"

    def __init__(self, kind: str = PLANAR_CURVE, angular_speed: float = 1.0, skew: float = 0.0):
        super().__init__(kind)
        if self.dim != 2:
            raise ValueError("rotating-circle is a planar field")
        self.angular_speed = float(angular_speed)
        self.skew = float(skew)

    def eval(self, t, x):
        x = np.asarray(x, dtype=float)
        speed = self.angular_speed * (1.0 + self.skew * x[..., 0])
        return np.stack([-speed * x[..., 1], speed * x[..., 0]], axis=-1)

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        om, ka = self.angular_speed, self.skew
        jac = np.empty(x.shape + (2,))
        jac[..., 0, 0] = -om * ka * x[..., 1]
        jac[..., 0, 1] = -om * (1.0 + ka * x[..., 0])
        jac[..., 1, 0] = om * (1.0 + 2.0 * ka * x[..., 0])
        jac[..., 1, 1] = 0.0
        return jac

    def flat_divergence(self, t, x):
        x = np.asarray(x, dtype=float)
        return -self.angular_speed * self.skew * x[..., 1]


class PolynomialField(VelocityField):
    """w(t, x) = (1 + time_factor * t) * sum_k coefficients[k] * x**k on the line."""

    name = "user-polynomial"

    def __init__(self, kind: str = AMBIENT_1D, coefficients: Sequence[float] = (0.0,),
                 time_factor: float = 0.0):
        super().__init__(kind)
        if self.dim != 1:
            raise ValueError("user-polynomial fields are defined on the line only")
        self.coefficients = np.atleast_1d(np.asarray(coefficients, dtype=float))
        self.derivative = npoly.polyder(self.coefficients)
        self.time_factor = float(time_factor)

    def eval(self, t, x):
        x = np.asarray(x, dtype=float)
        scale = 1.0 + self.time_factor * t
        return scale * npoly.polyval(x[..., 0], self.coefficients)[..., None]

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        scale = 1.0 + self.time_factor * t
        return scale * npoly.polyval(x[..., 0], self.derivative)[..., None, None]

    def flat_divergence(self, t, x):
        x = np.asarray(x, dtype=float)
        return (1.0 + self.time_factor * t) * npoly.polyval(x[..., 0], self.derivative)


class SuperposedField(VelocityField):
    """Sum of two fields of the same kind."""

    name = "superposed"

    def __init__(self, primary: VelocityField, secondary: VelocityField):
        if primary.kind != secondary.kind:
            raise ValueError(f"Cannot superpose {primary.kind} and {secondary.kind} fields")
        super().__init__(primary.kind)
        self.primary = primary
        self.secondary = secondary

    def eval(self, t, x):
        return self.primary.eval(t, x) + self.secondary.eval(t, x)

    def jacobian(self, t, x):
        return self.primary.jacobian(t, x) + self.secondary.jacobian(t, x)

    def flat_divergence(self, t, x):
        return self.primary.flat_divergence(t, x) + self.secondary.flat_divergence(t, x)

    def describe(self) -> str:
        return f"{self.primary.describe()} + {self.secondary.describe()}"


FIELD_CATALOG: Dict[str, Callable[..., VelocityField]] = {
    "zero": lambda kind: ZeroField(kind),
    "translation": lambda kind, velocity=(1.0,): TranslationField(kind, velocity),
    "dilation": lambda kind, rate=0.1: DilationField(kind, rate),
    "radial-circle": lambda kind, rate=0.1: RadialField(kind, rate),
    "rotating-circle": lambda kind, angular_speed=1.0, skew=0.0: RotatingField(kind, angular_speed, skew),
    "user-polynomial": lambda kind, coefficients=(0.0,), time_factor=0.0: PolynomialField(
        kind, coefficients, time_factor),
}


def make_field(name: str, kind: str, **params) -> VelocityField:
    """
    Build a catalog velocity field

    Args:
        name: Catalog name
        kind: ambient-1d or planar-curve
        **params: Field parameters

    Returns:
        Configured VelocityField
    """
    if name not in FIELD_CATALOG:
        raise ValueError(f"Unknown velocity field '{name}'. Available: {sorted(FIELD_CATALOG)}")
    return FIELD_CATALOG[name](kind, **params)


def superpose(primary: VelocityField, secondary: VelocityField) -> VelocityField:
    """Companion field primary + secondary (same normal part when secondary is tangential)."""
    return SuperposedField(primary, secondary)


@dataclass(frozen=True)
class GeometrySample:
    """Flow geometry at one or many reference points (leading batch axes allowed)."""

    position: np.ndarray
    jac: np.ndarray
    jdet: np.ndarray
    metric: np.ndarray
    metric_det: np.ndarray


def geometry_sample(position: np.ndarray, jac: np.ndarray,
                    tangent: Optional[np.ndarray] = None) -> GeometrySample:
    """
    Build Jacobian determinant and metric from a deformation gradient

    Flat case: J = |det DPhi|, A = DPhi^T DPhi. Curve case (reference tangent
    given): A = (DPhi P0)^T (DPhi P0) + nu0 nu0^T and J = |DPhi tau0|.

    Args:
        position: Pushed points, shape (..., d)
        jac: Ambient deformation gradients, shape (..., d, d)
        tangent: Reference tangents for the curve case

    Returns:
        GeometrySample
    """
    position = np.asarray(position, dtype=float)
    jac = np.asarray(jac, dtype=float)
    if tangent is None or position.shape[-1] == 1:
        det = np.linalg.det(jac)
        if np.any(det <= 0.0):
            logger.error(f"Flow Jacobian determinant not positive (min {np.min(det):.3e})")
            raise DegenerateFlowError(f"Jacobian determinant {np.min(det):.3e} <= 0")
        metric = np.swapaxes(jac, -1, -2) @ jac
        return GeometrySample(position, jac, np.abs(det), metric, det ** 2)

    tau0 = np.broadcast_to(unit_vectors(tangent), position.shape)
    nu0 = rotate_clockwise(tau0)
    proj = np.einsum('...i,...j->...ij', tau0, tau0)
    tangential = jac @ proj
    metric = np.swapaxes(tangential, -1, -2) @ tangential + np.einsum('...i,...j->...ij', nu0, nu0)
    stretch = np.linalg.norm(np.einsum('...ij,...j->...i', jac, tau0), axis=-1)
    if np.any(stretch <= 0.0):
        logger.error("Flow collapses a curve element")
        raise DegenerateFlowError("Tangential stretch <= 0")
    return GeometrySample(position, jac, stretch, metric, np.linalg.det(metric))


@dataclass(frozen=True)
class Trajectory:
    """Flow states of fixed seed points on the integrator grid."""

    flow: "FlowMap"
    seeds: np.ndarray
    positions: np.ndarray
    jacobians: np.ndarray

    def at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """
        Positions and deformation gradients at time t

        Args:
            t: Time in [0, T]

        Returns:
            (positions, jacobians)
        """
        t = self.flow.check_time(t)
        k = self.flow.grid_index(t)
        return self.flow.partial_step(self.positions[k], self.jacobians[k], k, t)


class FlowMap:
    """
    Flow of a velocity field integrated with classical RK4 on a fixed grid.

    Positions and deformation gradients are advanced together
    (dPhi/dt = w, dDPhi/dt = Dw DPhi). A query at time t takes full steps to
    the last grid node before t and one partial step, so results are smooth
    in t.
    """

    def __init__(self, field: VelocityField, horizon: float,
                 substeps: int = config.FLOW_SUBSTEPS,
                 tolerance: float = config.FLOW_TOLERANCE):
        """
        Initialize the flow map

        Args:
            field: Driving velocity field
            horizon: Final time T
            substeps: RK4 steps per unit time
            tolerance: Round-trip tolerance for inversion
        """
        if horizon <= 0.0:
            raise ValueError(f"Flow horizon must be positive, got {horizon}")
        if substeps < 1:
            raise ValueError(f"Substeps must be >= 1, got {substeps}")
        self.field = field
        self.horizon = float(horizon)
        self.substeps = int(substeps)
        self.tolerance = float(tolerance)
        self.step = 1.0 / self.substeps
        self.n_steps = int(np.ceil(self.horizon * self.substeps - 1e-9))
        logger.info(f"Flow map for {field.describe()} on [0, {self.horizon}] with {self.substeps} substeps")

    @property
    def dim(self) -> int:
        return self.field.dim

    def node(self, k: int) -> float:
        return k * self.step

    def check_time(self, t: float) -> float:
        if t < -config.TIME_SLACK or t > self.horizon + config.TIME_SLACK:
            raise ValueError(f"Time {t} outside [0, {self.horizon}]")
        return min(max(float(t), 0.0), self.horizon)

    def grid_index(self, t: float) -> int:
        k = int(np.floor(t * self.substeps + 1e-9))
        return min(max(k, 0), self.n_steps)

    def _rhs(self, t: float, x: np.ndarray, F: np.ndarray):
        w = self.field.eval(t, x)
        dw = self.field.jacobian(t, x)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(dw))):
            bad = np.argwhere(~np.all(np.isfinite(w.reshape(len(x), -1)), axis=-1))
            where = x[bad[0][0]] if bad.size else x[0]
            logger.error(f"Non-finite velocity at t={t} x={where}")
            raise IntegrationError(f"Velocity field not finite at t={t}, x={where}", t=t, x=where)
        return w, dw @ F

    def _rk4(self, t: float, x: np.ndarray, F: np.ndarray, h: float):
        k1x, k1F = self._rhs(t, x, F)
        k2x, k2F = self._rhs(t + 0.5 * h, x + 0.5 * h * k1x, F + 0.5 * h * k1F)
        k3x, k3F = self._rhs(t + 0.5 * h, x + 0.5 * h * k2x, F + 0.5 * h * k2F)
        k4x, k4F = self._rhs(t + h, x + h * k3x, F + h * k3F)
        x_new = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        F_new = F + (h / 6.0) * (k1F + 2.0 * k2F + 2.0 * k3F + k4F)
        return x_new, F_new

    def partial_step(self, x: np.ndarray, F: np.ndarray, k: int, t: float):
        s = t - self.node(k)
        if s == 0.0:
            return x.copy(), F.copy()
        return self._rk4(self.node(k), x, F, s)

    def _start(self, points) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(points, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, self.dim) if self.dim == 1 else x.reshape(1, self.dim)
        if x.shape[-1] != self.dim:
            raise ValueError(f"Points must have {self.dim} component(s), got shape {x.shape}")
        return x.copy(), _identity_like(x)

    def evolve(self, points, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """
        Push reference points to time t

        Args:
            points: Reference points, shape (m, d)
            t: Time in [0, T]

        Returns:
            (positions, deformation gradients)
        """
        t = self.check_time(t)
        x, F = self._start(points)
        k = self.grid_index(t)
        for j in range(k):
            x, F = self._rk4(self.node(j), x, F, self.node(j + 1) - self.node(j))
        return self.partial_step(x, F, k, t)

    def track(self, seeds) -> Trajectory:
        """
        Precompute grid states for a fixed set of seed points

        Args:
            seeds: Reference points, shape (m, d)

        Returns:
            Immutable Trajectory covering [0, T]
        """
        x, F = self._start(seeds)
        positions = [x]
        jacobians = [F]
        for j in range(self.n_steps):
            x, F = self._rk4(self.node(j), x, F, self.node(j + 1) - self.node(j))
            positions.append(x)
            jacobians.append(F)
        positions = np.stack(positions)
        jacobians = np.stack(jacobians)
        positions.flags.writeable = False
        jacobians.flags.writeable = False
        logger.debug(f"Tracked {len(x)} seeds over {self.n_steps} steps")
        return Trajectory(self, positions[0].copy(), positions, jacobians)

    def transport(self, points, t_from: float, t_to: float) -> Tuple[np.ndarray, np.ndarray]:
        """
        Integrate points from t_from to t_to (either direction)

        Interior steps land on grid nodes, so a backward run from t takes one
        partial step first and then full steps.

        Args:
            points: Points at time t_from
            t_from: Start time
            t_to: End time

        Returns:
            (positions at t_to, deformation gradient of the partial flow)
        """
        t_from = self.check_time(t_from)
        t_to = self.check_time(t_to)
        x, F = self._start(points)
        if t_to == t_from:
            return x, F
        if t_to > t_from:
            first = self.grid_index(t_from) + 1
            last = self.grid_index(t_to)
            nodes = [self.node(j) for j in range(first, last + 1)]
        else:
            first = self.grid_index(t_from)
            if self.node(first) >= t_from:
                first -= 1
            last = int(np.ceil(t_to * self.substeps - 1e-9))
            nodes = [self.node(j) for j in range(first, last - 1, -1)]
        times = [t_from]
        for node in nodes:
            if abs(node - times[-1]) > 1e-14 and (node - t_to) * (t_from - t_to) > 0.0:
                times.append(node)
        times.append(t_to)
        for a, b in zip(times[:-1], times[1:]):
            if b != a:
                x, F = self._rk4(a, x, F, b - a)
        return x, F


def evolve_point(flow: FlowMap, p, t: float, tangent=None) -> GeometrySample:
    """
    Geometry of the flow at a single reference point

    Args:
        flow: Flow map
        p: Reference point (scalar allowed on the line)
        t: Time in [0, T]
        tangent: Reference tangent for the curve case

    Returns:
        GeometrySample for the point
    """
    point = np.atleast_1d(np.asarray(p, dtype=float)).reshape(1, flow.dim)
    x, F = flow.evolve(point, t)
    tau = None if tangent is None else np.atleast_1d(np.asarray(tangent, dtype=float)).reshape(1, flow.dim)
    sample = geometry_sample(x, F, tau)
    return GeometrySample(sample.position[0], sample.jac[0], float(sample.jdet[0]),
                          sample.metric[0], float(sample.metric_det[0]))


def inverse_flow(flow: FlowMap, x, t: float) -> np.ndarray:
    """
    Pull points at time t back to the reference configuration

    Integrates the reversed-time ODE, checks the forward residual and
    retries with doubled substeps before giving up.

    Args:
        flow: Flow map
        x: Points at time t, shape (m, d) (or a single point)
        t: Time in [0, T]

    Returns:
        Reference points with the same shape as x
    """
    x = np.asarray(x, dtype=float)
    shape = x.shape
    points = x.reshape(-1, flow.dim)
    scale = max(1.0, float(np.max(np.abs(points))))
    candidate = flow
    residual = float("inf")
    for attempt in range(config.INVERSION_REFINEMENTS + 1):
        p, _ = candidate.transport(points, t, 0.0)
        forward, _ = flow.evolve(p, t)
        residual = float(np.max(np.abs(forward - points)))
        if residual <= flow.tolerance * scale:
            return p.reshape(shape)
        logger.warning(f"Inverse flow residual {residual:.3e} at t={t}; refining (attempt {attempt + 1})")
        candidate = FlowMap(flow.field, flow.horizon, flow.substeps * 2 ** (attempt + 1), flow.tolerance)
    logger.error(f"Inverse flow failed at t={t} with residual {residual:.3e}")
    raise InversionError(f"Inverse flow residual {residual:.3e} above tolerance", residual=residual)


def deformation_tensor(field: VelocityField, x, t: float, tangent=None) -> np.ndarray:
    """
    Deformation tensor H = (div_g w) I - (D_g w + D_g w^T)

    Args:
        field: Velocity field
        x: Point(s), shape (..., d)
        t: Time
        tangent: Curve tangent(s); flat formulas when omitted

    Returns:
        Symmetric matrix (or batch of matrices)
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    jac = field.jacobian(t, x)
    if tangent is None or field.dim == 1:
        grad = jac
    else:
        tau = unit_vectors(np.broadcast_to(tangent, x.shape))
        grad = jac @ np.einsum('...i,...j->...ij', tau, tau)
    div = np.trace(grad, axis1=-2, axis2=-1)
    eye = np.eye(field.dim)
    return div[..., None, None] * eye - (grad + np.swapaxes(grad, -1, -2))


def _inverse_metric_parts(flow: FlowMap, p, t: float):
    point = np.atleast_1d(np.asarray(p, dtype=float)).reshape(1, flow.dim)
    x, F = flow.evolve(point, t)
    det = float(np.linalg.det(F[0]))
    if det <= np.finfo(float).tiny:
        logger.error(f"Singular flow Jacobian at t={t}")
        raise DegenerateFlowError(f"Flow Jacobian determinant {det:.3e} at t={t}")
    inv = np.linalg.inv(F[0])
    return x[0], inv, abs(det)


def inverse_metric_density(flow: FlowMap, p, t: float) -> np.ndarray:
    """J (DPhi)^-1 (DPhi)^-T at a reference point."""
    _, inv, jdet = _inverse_metric_parts(flow, p, t)
    return jdet * inv @ inv.T


def metric_time_derivative(flow: FlowMap, p, t: float) -> np.ndarray:
    """
    Closed-form time derivative of the inverse-metric density

    d/dt [J F^-1 F^-T] = (div w) J F^-1 F^-T - J F^-1 (Dw + Dw^T) F^-T,
    with div w and Dw evaluated at the pushed point.

    Args:
        flow: Flow map
        p: Reference point
        t: Time

    Returns:
        d x d matrix
    """
    x, inv, jdet = _inverse_metric_parts(flow, p, t)
    dw = flow.field.jacobian(t, x[None, :])[0]
    div = float(np.trace(dw))
    density = jdet * inv @ inv.T
    return div * density - jdet * inv @ (dw + dw.T) @ inv.T


def jacobian_constant(flow: FlowMap, points, times: Sequence[float], tangents=None) -> float:
    """
    Uniform bound C_J with J in [1/C_J, C_J] over points and times

    Args:
        flow: Flow map
        points: Reference points
        times: Time grid
        tangents: Reference tangents for curves

    Returns:
        C_J >= 1
    """
    trajectory = flow.track(points)
    bound = 1.0
    for t in times:
        x, F = trajectory.at(t)
        jdet = geometry_sample(x, F, tangents).jdet
        bound = max(bound, float(np.max(jdet)), float(1.0 / np.min(jdet)))
    return bound
