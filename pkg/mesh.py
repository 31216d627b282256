"""
Reference meshes, P1 finite elements and assembly on the pushed-forward geometry
"""
import functools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg
from numpy.polynomial.legendre import leggauss

import config
from exceptions import AssemblyError, InvalidMeshError
from flowmap import FlowMap, GeometrySample, geometry_sample

logger = logging.getLogger(__name__)

INTERVAL = "interval-with-boundary"
CLOSED_CURVE = "closed-curve"

FULL_SPACE = "full"
ZERO_BOUNDARY = "zero-boundary"
SPACES = (FULL_SPACE, ZERO_BOUNDARY)

_GAUSS_NODES, _GAUSS_WEIGHTS = leggauss(config.GAUSS_POINTS)
QUAD_POINTS = 0.5 * (_GAUSS_NODES + 1.0)
QUAD_WEIGHTS = 0.5 * _GAUSS_WEIGHTS
SHAPE_VALUES = np.vstack([1.0 - QUAD_POINTS, QUAD_POINTS])
_LOCAL_LAPLACE = np.array([[1.0, -1.0], [-1.0, 1.0]])

Weight = Union[None, np.ndarray, Callable[[float, np.ndarray], np.ndarray]]


@dataclass(frozen=True, eq=False)
class ReferenceMesh:
    """P1 mesh of an interval or of a closed polygon in the plane."""

    nodes: np.ndarray
    elements: np.ndarray
    topology: str
    boundary: Tuple[int, ...]
    node_tangents: np.ndarray
    parameters: Tuple[float, ...]

    def __post_init__(self):
        if self.topology not in (INTERVAL, CLOSED_CURVE):
            raise InvalidMeshError(f"Unknown topology '{self.topology}'")
        n_nodes = len(self.nodes)
        if self.elements.ndim != 2 or self.elements.shape[1] != 2:
            raise InvalidMeshError("Elements must be index pairs")
        if np.any(self.elements < 0) or np.any(self.elements >= n_nodes):
            raise InvalidMeshError("Element index out of range")
        if np.any(self.element_lengths <= config.MIN_ELEMENT_LENGTH):
            raise InvalidMeshError("Element lengths must be strictly positive")
        chained = np.all(self.elements[1:, 0] == self.elements[:-1, 1])
        if self.topology == CLOSED_CURVE:
            single_cycle = (len(self.elements) == n_nodes
                            and self.elements[-1, 1] == self.elements[0, 0]
                            and len(np.unique(self.elements[:, 0])) == n_nodes)
            if not (chained and single_cycle):
                raise InvalidMeshError("Closed-curve connectivity must be a single cycle")
        elif not chained or len(self.elements) != n_nodes - 1:
            raise InvalidMeshError("Interval elements must be consecutive")
        for array in (self.nodes, self.elements, self.node_tangents):
            array.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def element_lengths(self) -> np.ndarray:
        edge = self.nodes[self.elements[:, 1]] - self.nodes[self.elements[:, 0]]
        return np.linalg.norm(edge, axis=1)

    @property
    def tangents(self) -> np.ndarray:
        edge = self.nodes[self.elements[:, 1]] - self.nodes[self.elements[:, 0]]
        return edge / self.element_lengths[:, None]

    @property
    def length(self) -> float:
        return float(np.sum(self.element_lengths))

    @property
    def h(self) -> float:
        return float(np.max(self.element_lengths))

    @property
    def default_space(self) -> str:
        return ZERO_BOUNDARY if self.topology == INTERVAL else FULL_SPACE

    def free_nodes(self, space: str = FULL_SPACE) -> np.ndarray:
        """Indices of the nodes carrying coefficients in the given space."""
        if space not in SPACES:
            raise ValueError(f"Unknown space '{space}'")
        if space == ZERO_BOUNDARY:
            return np.setdiff1d(np.arange(self.n_nodes), np.asarray(self.boundary, dtype=int))
        return np.arange(self.n_nodes)

    def quadrature_points(self) -> np.ndarray:
        """Gauss points on every element, shape (E, q, d)."""
        a = self.nodes[self.elements[:, 0]]
        b = self.nodes[self.elements[:, 1]]
        return a[:, None, :] * SHAPE_VALUES[0][None, :, None] + b[:, None, :] * SHAPE_VALUES[1][None, :, None]

    def refined(self) -> "ReferenceMesh":
        """Same domain with twice as many elements."""
        if self.topology == INTERVAL:
            a, b = self.parameters
            return build_interval_mesh(a, b, 2 * self.n_elements)
        return build_circle_mesh(self.parameters[0], 2 * self.n_elements)

    def to_text(self) -> str:
        """Plain-text node/element listing for debugging."""
        lines = [f"# topology {self.topology}", f"# nodes {self.n_nodes}"]
        for i, point in enumerate(self.nodes):
            lines.append(f"{i} " + " ".join(f"{c:.17g}" for c in point))
        lines.append(f"# elements {self.n_elements}")
        for e, (a, b) in enumerate(self.elements):
            lines.append(f"{e} {a} {b}")
        lines.append("# boundary " + " ".join(str(i) for i in self.boundary))
        return "\n".join(lines) + "\n"


def build_interval_mesh(a: float, b: float, n: int) -> ReferenceMesh:
    """
    Uniform mesh of [a, b]

    Args:
        a: Left end
        b: Right end
        n: Number of elements (>= 2)

    Returns:
        ReferenceMesh with boundary nodes {0, n}
    """
    if not a < b:
        raise InvalidMeshError(f"Interval needs a < b, got a={a}, b={b}")
    if n < 2:
        raise InvalidMeshError(f"Interval mesh needs n >= 2 elements, got {n}")
    nodes = np.linspace(a, b, n + 1).reshape(-1, 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return ReferenceMesh(nodes, elements, INTERVAL, (0, n), np.ones((n + 1, 1)), (float(a), float(b)))


def build_circle_mesh(radius: float, n: int) -> ReferenceMesh:
    """
    Inscribed regular polygon of a centred circle

    Args:
        radius: Circle radius R0 > 0
        n: Number of nodes (>= 3)

    Returns:
        ReferenceMesh with cyclic elements and no boundary
    """
    if not radius > 0.0:
        raise InvalidMeshError(f"Circle radius must be positive, got {radius}")
    if n < 3:
        raise InvalidMeshError(f"Circle mesh needs n >= 3 nodes, got {n}")
    angles = 2.0 * np.pi * np.arange(n) / n
    nodes = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    tangents = np.column_stack([-np.sin(angles), np.cos(angles)])
    elements = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    return ReferenceMesh(nodes, elements, CLOSED_CURVE, (), tangents, (float(radius),))


@dataclass(frozen=True)
class FeFunction:
    """Nodal coefficients on the free nodes of a reference mesh."""

    coefficients: np.ndarray
    space: str = FULL_SPACE

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValueError(f"Unknown space '{self.space}'")
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float).copy())

    def check(self, mesh: ReferenceMesh) -> None:
        expected = len(mesh.free_nodes(self.space))
        if self.coefficients.shape != (expected,):
            raise ValueError(f"{self.space} function needs {expected} coefficients, got {self.coefficients.shape}")

    def nodal_values(self, mesh: ReferenceMesh) -> np.ndarray:
        """Values at every mesh node (zero on the boundary for zero-boundary functions)."""
        self.check(mesh)
        values = np.zeros(mesh.n_nodes)
        values[mesh.free_nodes(self.space)] = self.coefficients
        return values

    @classmethod
    def from_nodal(cls, mesh: ReferenceMesh, values: np.ndarray, space: str = FULL_SPACE) -> "FeFunction":
        values = np.asarray(values, dtype=float)
        return cls(values[mesh.free_nodes(space)], space)

    @classmethod
    def interpolate(cls, mesh: ReferenceMesh, func: Callable[[np.ndarray], np.ndarray],
                    space: str = FULL_SPACE) -> "FeFunction":
        """Nodal interpolation of a function of reference points."""
        return cls.from_nodal(mesh, func(mesh.nodes), space)


@dataclass(frozen=True)
class ElementGeometry:
    """Pushed element data at one time."""

    time: float
    positions: np.ndarray
    velocities: np.ndarray
    lengths: np.ndarray
    tangents: np.ndarray
    divergence: np.ndarray
    velocity_gradient: np.ndarray
    stretch: np.ndarray
    deformation: np.ndarray

    @property
    def deformation_tensor(self) -> np.ndarray:
        """Per-element (div) I - (D_g W + D_g W^T) built from nodal velocities."""
        d = self.tangents.shape[1]
        grad = self.velocity_gradient
        return self.divergence[:, None, None] * np.eye(d) - (grad + np.swapaxes(grad, 1, 2))


@dataclass(frozen=True)
class AssembledForms:
    """Galerkin matrices and load vector at one time (all nodes)."""

    time: float
    mass: np.ndarray
    stiffness: np.ndarray
    transport: np.ndarray
    load: np.ndarray


class EvolvingMesh:
    """
    Reference mesh carried by a flow map.

    Nodes and quadrature points are tracked once at construction; geometry
    at any time is then read from the cached trajectory. Without a flow the
    mesh is the fixed-domain reference path.
    """

    def __init__(self, reference: ReferenceMesh, flow: Optional[FlowMap] = None):
        if flow is not None and flow.dim != reference.dim:
            raise ValueError(f"Flow dimension {flow.dim} does not match mesh dimension {reference.dim}")
        self.reference = reference
        self.flow = flow
        self._reference_qp = reference.quadrature_points()
        self._qp_tangents = np.repeat(reference.tangents[:, None, :], len(QUAD_POINTS), axis=1)
        self._trajectory = None
        if flow is not None:
            seeds = np.vstack([reference.nodes, self._reference_qp.reshape(-1, reference.dim)])
            self._trajectory = flow.track(seeds)
        self.geometry = functools.lru_cache(maxsize=32)(self._compute_geometry)
        logger.info(f"Evolving mesh: {reference.topology} with {reference.n_elements} elements"
                    f"{'' if flow is None else ', ' + flow.field.describe()}")

    @classmethod
    def static(cls, reference: ReferenceMesh) -> "EvolvingMesh":
        """Fixed-domain mesh (identity flow without integration)."""
        return cls(reference, None)

    @property
    def horizon(self) -> float:
        return float("inf") if self.flow is None else self.flow.horizon

    @property
    def topology(self) -> str:
        return self.reference.topology

    def _state(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        if self._trajectory is None:
            seeds = np.vstack([self.reference.nodes, self._reference_qp.reshape(-1, self.reference.dim)])
            d = self.reference.dim
            return seeds.copy(), np.broadcast_to(np.eye(d), (len(seeds), d, d)).copy()
        return self._trajectory.at(t)

    def positions(self, t: float) -> np.ndarray:
        return self._state(t)[0][:self.reference.n_nodes]

    def quadrature_points(self, t: float) -> np.ndarray:
        """Quadrature points pushed through the flow, shape (E, q, d)."""
        x = self._state(t)[0][self.reference.n_nodes:]
        return x.reshape(self._reference_qp.shape)

    def velocities(self, t: float) -> np.ndarray:
        positions = self.positions(t)
        if self.flow is None:
            return np.zeros_like(positions)
        return self.flow.field.eval(t, positions)

    def node_samples(self, t: float) -> GeometrySample:
        """Flow geometry at every node (batched)."""
        x, F = self._state(t)
        n = self.reference.n_nodes
        tangents = None if self.reference.dim == 1 else self.reference.node_tangents
        return geometry_sample(x[:n], F[:n], tangents)

    def quadrature_jacobians(self, t: float) -> np.ndarray:
        """Flow Jacobian determinant J at pushed quadrature points, shape (E, q)."""
        x, F = self._state(t)
        n = self.reference.n_nodes
        tangents = None if self.reference.dim == 1 else self._qp_tangents.reshape(-1, self.reference.dim)
        sample = geometry_sample(x[n:], F[n:], tangents)
        return sample.jdet.reshape(self._reference_qp.shape[:2])

    def _compute_geometry(self, t: float) -> ElementGeometry:
        positions = self.positions(t)
        velocities = self.velocities(t)
        a, b = self.reference.elements[:, 0], self.reference.elements[:, 1]
        edge = positions[b] - positions[a]
        lengths = np.linalg.norm(edge, axis=1)
        tangled = lengths <= config.MIN_ELEMENT_LENGTH
        if self.topology == INTERVAL:
            tangled |= edge[:, 0] <= 0.0
        if np.any(tangled):
            logger.error(f"Mesh tangled at t={t}: {int(np.sum(tangled))} element(s)")
            raise AssemblyError(f"Pushed mesh is tangled at t={t}")
        tangents = edge / lengths[:, None]
        dw = velocities[b] - velocities[a]
        divergence = np.einsum('ei,ei->e', tangents, dw) / lengths
        gradient = np.einsum('ei,ej->eij', dw, tangents) / lengths[:, None, None]
        ref_lengths = self.reference.element_lengths
        deformation = np.einsum('ei,ej->eij', edge, self.reference.tangents) / ref_lengths[:, None, None]
        return ElementGeometry(float(t), positions, velocities, lengths, tangents, divergence,
                               gradient, lengths / ref_lengths, deformation)


def scatter_matrix(local: np.ndarray, elements: np.ndarray, size: int) -> np.ndarray:
    matrix = np.zeros((size, size))
    rows = np.broadcast_to(elements[:, :, None], local.shape)
    cols = np.broadcast_to(elements[:, None, :], local.shape)
    np.add.at(matrix, (rows, cols), local)
    return matrix


def scatter_vector(local: np.ndarray, elements: np.ndarray, size: int) -> np.ndarray:
    vector = np.zeros(size)
    np.add.at(vector, elements, local)
    return vector


def _quadrature_values(mesh: EvolvingMesh, t: float, weight: Weight) -> np.ndarray:
    shape = (mesh.reference.n_elements, len(QUAD_POINTS))
    if weight is None:
        return np.ones(shape)
    if callable(weight):
        values = np.asarray(weight(t, mesh.quadrature_points(t)), dtype=float)
    else:
        values = np.asarray(weight, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
    values = np.broadcast_to(values, shape)
    if not np.all(np.isfinite(values)):
        raise AssemblyError(f"Non-finite weight at t={t}")
    return values


def assemble_mass(mesh: EvolvingMesh, t: float, weight: Weight = None) -> np.ndarray:
    """
    Weighted P1 mass matrix on the pushed elements

    Args:
        mesh: Evolving mesh
        t: Time
        weight: None, per-element values (E,) or (E, q), or a callable
            weight(t, points) evaluated at pushed quadrature points

    Returns:
        Dense (N, N) matrix
    """
    geometry = mesh.geometry(t)
    values = _quadrature_values(mesh, t, weight) * geometry.lengths[:, None]
    local = np.einsum('q,eq,iq,jq->eij', QUAD_WEIGHTS, values, SHAPE_VALUES, SHAPE_VALUES)
    return scatter_matrix(local, mesh.reference.elements, mesh.reference.n_nodes)


def _stiffness_coefficients(mesh: EvolvingMesh, t: float, tensor, geometry: ElementGeometry) -> np.ndarray:
    n_elements = mesh.reference.n_elements
    if tensor is None:
        return np.ones(n_elements)
    values = tensor(t, mesh.quadrature_points(t)) if callable(tensor) else tensor
    values = np.asarray(values, dtype=float)
    tau = geometry.tangents
    if values.ndim == 1:
        return values
    if values.ndim == 2:
        return values @ QUAD_WEIGHTS
    if values.ndim == 3:
        return np.einsum('ei,eij,ej->e', tau, values, tau)
    contracted = np.einsum('ei,eqij,ej->eq', tau, values, tau)
    return contracted @ QUAD_WEIGHTS


def assemble_stiffness(mesh: EvolvingMesh, t: float, tensor=None) -> np.ndarray:
    """
    P1 stiffness matrix with an optional coefficient tensor

    Gradients of P1 functions are constant along each element, so only the
    tangential component tau^T T tau of the tensor enters.

    Args:
        mesh: Evolving mesh
        t: Time
        tensor: None, per-element scalars (E,), tensors (E, d, d) or (E, q, d, d),
            or a callable tensor(t, points)

    Returns:
        Dense (N, N) matrix
    """
    geometry = mesh.geometry(t)
    coefficients = _stiffness_coefficients(mesh, t, tensor, geometry)
    if not np.all(np.isfinite(coefficients)):
        raise AssemblyError(f"Non-finite stiffness coefficient at t={t}")
    local = (coefficients / geometry.lengths)[:, None, None] * _LOCAL_LAPLACE
    return scatter_matrix(local, mesh.reference.elements, mesh.reference.n_nodes)


def assemble_load(mesh: EvolvingMesh, t: float, f: Optional[Callable] = None) -> np.ndarray:
    """
    Load vector F_j = integral of f phi_j over the pushed elements

    Args:
        mesh: Evolving mesh
        t: Time
        f: Callable f(t, points) returning values at points of shape (..., d)

    Returns:
        Vector of length N
    """
    if f is None:
        return np.zeros(mesh.reference.n_nodes)
    geometry = mesh.geometry(t)
    values = _quadrature_values(mesh, t, f) * geometry.lengths[:, None]
    local = np.einsum('q,eq,iq->ei', QUAD_WEIGHTS, values, SHAPE_VALUES)
    return scatter_vector(local, mesh.reference.elements, mesh.reference.n_nodes)


def assemble_deformation_stiffness(mesh: EvolvingMesh, t: float) -> np.ndarray:
    """Stiffness matrix weighted by the discrete deformation tensor (tau^T H tau = -div per element)."""
    return assemble_stiffness(mesh, t, mesh.geometry(t).deformation_tensor)


def assemble_forms(mesh: EvolvingMesh, t: float, forcing: Optional[Callable] = None) -> AssembledForms:
    """
    Mass, stiffness, transport (L2 lambda) matrices and load vector at time t

    Args:
        mesh: Evolving mesh
        t: Time
        forcing: Optional source f(t, points)

    Returns:
        AssembledForms over all nodes
    """
    geometry = mesh.geometry(t)
    return AssembledForms(
        time=float(t),
        mass=assemble_mass(mesh, t),
        stiffness=assemble_stiffness(mesh, t),
        transport=assemble_mass(mesh, t, geometry.divergence),
        load=assemble_load(mesh, t, forcing),
    )


def restrict(matrix: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Submatrix (or subvector) on the free nodes."""
    if matrix.ndim == 1:
        return matrix[free]
    return matrix[np.ix_(free, free)]


def solve_linear(matrix: np.ndarray, rhs: np.ndarray, banded: bool = False) -> np.ndarray:
    """
    Solve a Galerkin system, tridiagonal path for interval meshes

    Args:
        matrix: Square matrix
        rhs: Right-hand side vector or matrix
        banded: Use the tridiagonal solver

    Returns:
        Solution array
    """
    try:
        if banded and matrix.shape[0] > 2:
            bands = np.zeros((3, matrix.shape[0]))
            bands[0, 1:] = np.diag(matrix, 1)
            bands[1] = np.diag(matrix)
            bands[2, :-1] = np.diag(matrix, -1)
            return scipy.linalg.solve_banded((1, 1), bands, rhs)
        return scipy.linalg.solve(matrix, rhs)
    except (np.linalg.LinAlgError, ValueError) as e:
        logger.error(f"Linear solve failed: {e}")
        raise AssemblyError(f"Singular Galerkin system: {e}") from e


def sobolev_power(mesh: EvolvingMesh, t: float, values: np.ndarray, r: float,
                  include_values: bool = True) -> float:
    """
    Quadrature value of the integral of |u|^r + |grad u|^r

    Args:
        mesh: Evolving mesh
        t: Time
        values: Nodal values on all nodes
        r: Exponent r >= 1
        include_values: Add the |u|^r part (False gives the gradient seminorm)

    Returns:
        The r-th power of the W^{1,r} (semi)norm
    """
    geometry = mesh.geometry(t)
    a, b = mesh.reference.elements[:, 0], mesh.reference.elements[:, 1]
    slopes = (values[b] - values[a]) / geometry.lengths
    total = float(np.sum(geometry.lengths * np.abs(slopes) ** r))
    if include_values:
        at_points = values[a][:, None] * SHAPE_VALUES[0] + values[b][:, None] * SHAPE_VALUES[1]
        total += float(np.sum(geometry.lengths * (np.abs(at_points) ** r @ QUAD_WEIGHTS)))
    return total
