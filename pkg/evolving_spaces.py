"""
Pushforward and pullback of finite element functions, the lambda forms and
the Pi operators of the four pivot-space examples
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

import config
from exceptions import AssemblyError, DomainError, UnsupportedPivotError
from flowmap import FlowMap, VelocityField, ZeroField, inverse_flow, rotate_clockwise, unit_vectors
from mesh import (CLOSED_CURVE, FULL_SPACE, INTERVAL, ZERO_BOUNDARY, EvolvingMesh, FeFunction,
                  assemble_deformation_stiffness, assemble_mass, assemble_stiffness, restrict,
                  sobolev_power, solve_linear)
from utils import LinearCongruentialGenerator

logger = logging.getLogger(__name__)

L2 = "L2"
H1 = "H1"
HMINUS1 = "Hminus1"
DUAL_FLOW = "DualFlowL1"
PIVOTS = (L2, H1, HMINUS1, DUAL_FLOW)

NORM_L2 = "L2"
NORM_H1 = "H1"
NORM_W1R = "W1r"


@dataclass(frozen=True)
class PivotSpec:
    """Pivot space choice; DualFlowL1 carries the companion velocity field."""

    variant: str
    companion: Optional[VelocityField] = None

    def __post_init__(self):
        if self.variant not in PIVOTS:
            raise ValueError(f"Unknown pivot '{self.variant}', expected one of {PIVOTS}")
        if self.variant == DUAL_FLOW and self.companion is None:
            raise ValueError("DualFlowL1 pivot needs a companion velocity field")

    @property
    def space(self) -> str:
        return ZERO_BOUNDARY if self.variant == HMINUS1 else FULL_SPACE


@dataclass(frozen=True)
class PiOperator:
    """Coefficient matrices of Pi_t and its inverse."""

    time: float
    forward: np.ndarray
    inverse: np.ndarray
    pivot: str

    @property
    def round_trip_error(self) -> float:
        eye = np.eye(len(self.forward))
        return float(np.linalg.norm(self.inverse @ self.forward - eye, 2))


@dataclass(frozen=True)
class PushedFunction:
    """A reference finite element function read on the domain at time t."""

    function: FeFunction
    mesh: EvolvingMesh
    time: float

    def __call__(self, x) -> np.ndarray:
        """
        Evaluate at points of the evolved domain

        Args:
            x: Points at time t, shape (m, d) (scalars allowed on the line)

        Returns:
            Values at the points
        """
        reference = self.mesh.reference
        points = np.asarray(x, dtype=float).reshape(-1, reference.dim)
        if self.mesh.flow is None or self.time == 0.0:
            pulled = points
        else:
            pulled = inverse_flow(self.mesh.flow, points, self.time)
        return evaluate_reference(self.function, reference, pulled)


def _mesh_field(mesh: EvolvingMesh) -> VelocityField:
    if mesh.flow is None:
        return ZeroField("ambient-1d" if mesh.reference.dim == 1 else "planar-curve")
    return mesh.flow.field


def _node_angles(reference) -> np.ndarray:
    return np.mod(np.arctan2(reference.nodes[:, 1], reference.nodes[:, 0]), 2.0 * np.pi)


def evaluate_reference(u: FeFunction, reference, points: np.ndarray) -> np.ndarray:
    """
    Evaluate a P1 function at reference points

    Args:
        u: Function on the reference mesh
        reference: ReferenceMesh
        points: Reference points, shape (m, d)

    Returns:
        Interpolated values
    """
    values = u.nodal_values(reference)
    if reference.topology == INTERVAL:
        a, b = reference.parameters
        s = points[:, 0]
        slack = 1e-9 * (b - a)
        if np.any(s < a - slack) or np.any(s > b + slack):
            raise DomainError(f"Point outside the evolved interval (pulled back to {s.min()}..{s.max()})")
        return np.interp(s, reference.nodes[:, 0], values)
    radius = reference.parameters[0]
    slack = radius * (1.0 - np.cos(np.pi / reference.n_nodes)) + 1e-6 * radius
    distance = np.linalg.norm(points, axis=1)
    if np.any(np.abs(distance - radius) > slack):
        raise DomainError("Point outside the evolved curve")
    theta = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2.0 * np.pi)
    return np.interp(theta, _node_angles(reference), values, period=2.0 * np.pi)


def pushforward(u: FeFunction, mesh: EvolvingMesh, t: float) -> PushedFunction:
    """
    Carry a reference function to time t (coefficients unchanged)

    Args:
        u: Reference function
        mesh: Evolving mesh
        t: Time

    Returns:
        PushedFunction evaluable on the domain at time t
    """
    u.check(mesh.reference)
    return PushedFunction(u, mesh, float(t))


def pullback(f: PushedFunction) -> FeFunction:
    """Exact inverse of pushforward on coefficients."""
    return f.function


def validate_pivot(pivot: PivotSpec, mesh: EvolvingMesh, times: Optional[Sequence[float]] = None) -> None:
    """
    Check that a pivot is admissible for the mesh

    DualFlowL1 fields must agree in the normal direction at the nodes.

    Args:
        pivot: Pivot space and its companion field
        mesh: Evolving mesh
        times: Sample times for the normal check (default 0, T/2, T)
    """
    if pivot.variant == HMINUS1 and mesh.topology != INTERVAL:
        raise UnsupportedPivotError("Hminus1 pivot needs an interval (closed-curve Laplacian is singular)")
    if pivot.variant != DUAL_FLOW:
        return
    if mesh.topology != CLOSED_CURVE:
        raise UnsupportedPivotError("DualFlowL1 pivot needs a closed curve")
    if len(mesh.reference.parameters) != 1:
        raise UnsupportedPivotError("DualFlowL1 reparametrization needs a circle mesh")
    field = _mesh_field(mesh)
    if pivot.companion.kind != field.kind:
        raise UnsupportedPivotError("Companion field kind differs from the mesh field")
    if times is None:
        horizon = mesh.horizon if np.isfinite(mesh.horizon) else 1.0
        times = (0.0, 0.5 * horizon, horizon)
    for t in times:
        samples = mesh.node_samples(t)
        stretched = np.einsum('nij,nj->ni', samples.jac, mesh.reference.node_tangents)
        normals = rotate_clockwise(unit_vectors(stretched))
        w = field.eval(t, samples.position)
        companion = pivot.companion.eval(t, samples.position)
        mismatch = np.abs(np.einsum('ni,ni->n', companion - w, normals))
        scale = max(1.0, float(np.max(np.abs(w))), float(np.max(np.abs(companion))))
        if np.max(mismatch) > config.NORMAL_AGREEMENT_TOLERANCE * scale:
            logger.error(f"DualFlow fields differ in the normal direction at t={t} ({np.max(mismatch):.3e})")
            raise UnsupportedPivotError(
                f"Companion field changes the normal velocity (mismatch {np.max(mismatch):.3e} at t={t})")


def _mass(mesh: EvolvingMesh, t: float, free: np.ndarray) -> np.ndarray:
    return restrict(assemble_mass(mesh, t), free)


def _stiffness(mesh: EvolvingMesh, t: float, free: np.ndarray) -> np.ndarray:
    return restrict(assemble_stiffness(mesh, t), free)


def _free(pivot: PivotSpec, mesh: EvolvingMesh) -> np.ndarray:
    return mesh.reference.free_nodes(pivot.space)


def _banded(mesh: EvolvingMesh) -> bool:
    return mesh.topology == INTERVAL


def _companion_flow(pivot: PivotSpec, mesh: EvolvingMesh, t: float) -> FlowMap:
    horizon = mesh.horizon if np.isfinite(mesh.horizon) else max(1.0, float(t))
    substeps = mesh.flow.substeps if mesh.flow is not None else config.FLOW_SUBSTEPS
    return FlowMap(pivot.companion, horizon, substeps)


def reparametrization_angles(pivot: PivotSpec, mesh: EvolvingMesh, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Angles of Phi_0^t(companion_t^0(p_i)) at the reference nodes and their rates

    The rate follows from y' = DPhi_t^0(y)^{-1} (w_companion - w)(t, x).

    Args:
        pivot: DualFlowL1 pivot
        mesh: Evolving circle mesh
        t: Time

    Returns:
        (angles in [0, 2 pi), angular rates)
    """
    nodes = mesh.reference.nodes
    moved, _ = _companion_flow(pivot, mesh, t).evolve(nodes, t)
    field = _mesh_field(mesh)
    if mesh.flow is None or t == 0.0:
        pulled = moved.copy()
        jac = np.broadcast_to(np.eye(2), (len(nodes), 2, 2))
    else:
        pulled = inverse_flow(mesh.flow, moved, t)
        _, jac = mesh.flow.evolve(pulled, t)
    difference = pivot.companion.eval(t, moved) - field.eval(t, moved)
    velocity = np.linalg.solve(jac, difference[..., None])[..., 0]
    angles = np.mod(np.arctan2(pulled[:, 1], pulled[:, 0]), 2.0 * np.pi)
    rates = (pulled[:, 0] * velocity[:, 1] - pulled[:, 1] * velocity[:, 0]) / np.sum(pulled ** 2, axis=1)
    return angles, rates


def _periodic_interpolation(angles: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    spacing = 2.0 * np.pi / n
    position = angles / spacing
    left = np.floor(position)
    frac = position - left
    left = left.astype(int) % n
    right = (left + 1) % n
    rows = np.arange(len(angles))
    values = np.zeros((len(angles), n))
    slopes = np.zeros((len(angles), n))
    np.add.at(values, (rows, left), 1.0 - frac)
    np.add.at(values, (rows, right), frac)
    np.add.at(slopes, (rows, left), -1.0 / spacing)
    np.add.at(slopes, (rows, right), 1.0 / spacing)
    return values, slopes


def reparametrization_matrices(pivot: PivotSpec, mesh: EvolvingMesh, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Interpolation matrix P(t) of the reparametrization and its time derivative."""
    validate_pivot(pivot, mesh, times=(t,))
    angles, rates = reparametrization_angles(pivot, mesh, t)
    values, slopes = _periodic_interpolation(angles, mesh.reference.n_nodes)
    return values, rates[:, None] * slopes


def pushforward_matrix(pivot: PivotSpec, mesh: EvolvingMesh, t: float) -> np.ndarray:
    """
    Map from reference coefficients to coefficients of the pushed function

    Identity except for Hminus1, whose transported functionals satisfy
    M(t) u_t = M_0 u_0.
    """
    free = _free(pivot, mesh)
    if pivot.variant != HMINUS1:
        return np.eye(len(free))
    return solve_linear(_mass(mesh, t, free), _mass(mesh, 0.0, free), _banded(mesh))


def pairing_matrix(pivot: PivotSpec, mesh: EvolvingMesh, t: float) -> np.ndarray:
    """
    Matrix Q(t) with pi(t; u0, v0) = u0^T Q(t) v0 on reference coefficients

    Args:
        pivot: Pivot space and its companion field
        mesh: Evolving mesh
        t: Time

    Returns:
        Square matrix over the pivot's free nodes
    """
    validate_pivot(pivot, mesh, times=(t,))
    free = _free(pivot, mesh)
    if pivot.variant == L2:
        return _mass(mesh, t, free)
    if pivot.variant == H1:
        return _mass(mesh, t, free) + _stiffness(mesh, t, free)
    if pivot.variant == HMINUS1:
        mass0 = _mass(mesh, 0.0, free)
        return mass0 @ solve_linear(_stiffness(mesh, t, free), mass0, banded=True)
    values, _ = reparametrization_matrices(pivot, mesh, t)
    return values.T @ _mass(mesh, 0.0, free)


def transported_pairing(pivot: PivotSpec, mesh: EvolvingMesh, t: float, u0: FeFunction, v0: FeFunction) -> float:
    """pi(t; u0, v0): pivot pairing of the pushforwards of reference functions."""
    _check_functions(pivot, mesh, u0, v0)
    return float(u0.coefficients @ pairing_matrix(pivot, mesh, t) @ v0.coefficients)


def lambda_matrix(pivot: PivotSpec, mesh: EvolvingMesh, t: float) -> np.ndarray:
    """
    Matrix of the lambda form on pushed coefficients, lambda(u, v) = u^T L v

    L2: transported mass G = sum of div_e M_e. H1: G plus the stiffness
    weighted by the deformation tensor. Hminus1: -(K^-1 M)^T K_H (K^-1 M).
    DualFlowL1: dP/dt^T M_0 from the reparametrization rates.

    Args:
        pivot: Pivot space and its companion field
        mesh: Evolving mesh
        t: Time

    Returns:
        Square matrix over the pivot's free nodes
    """
    validate_pivot(pivot, mesh, times=(t,))
    free = _free(pivot, mesh)
    if pivot.variant == DUAL_FLOW:
        _, rate_matrix = reparametrization_matrices(pivot, mesh, t)
        return rate_matrix.T @ _mass(mesh, 0.0, free)
    geometry = mesh.geometry(t)
    transport = restrict(assemble_mass(mesh, t, geometry.divergence), free)
    if pivot.variant == L2:
        return transport
    deformation = restrict(assemble_deformation_stiffness(mesh, t), free)
    if pivot.variant == H1:
        return transport + deformation
    lifted = solve_linear(_stiffness(mesh, t, free), _mass(mesh, t, free), banded=True)
    return -lifted.T @ deformation @ lifted


def _check_functions(pivot: PivotSpec, mesh: EvolvingMesh, *functions: FeFunction) -> None:
    for u in functions:
        if u.space != pivot.space:
            raise ValueError(f"{pivot.variant} pivot works on {pivot.space} functions, got {u.space}")
        u.check(mesh.reference)


def lambda_form(pivot: PivotSpec, mesh: EvolvingMesh, t: float, u: FeFunction, v: FeFunction) -> float:
    """
    lambda(t; u, v) for functions given by their coefficients at time t

    Args:
        pivot: Pivot space and its companion field
        mesh: Evolving mesh
        t: Time
        u: Pushed function
        v: Pushed function

    Returns:
        Value of the bilinear form
    """
    _check_functions(pivot, mesh, u, v)
    return float(u.coefficients @ lambda_matrix(pivot, mesh, t) @ v.coefficients)


def lambda_hat_matrix(pivot: PivotSpec, mesh: EvolvingMesh, t: float) -> np.ndarray:
    """lambda matrix acting on reference coefficients (equals dQ/dt of pairing_matrix)."""
    push = pushforward_matrix(pivot, mesh, t)
    return push.T @ lambda_matrix(pivot, mesh, t) @ push


def lambda_hat(pivot: PivotSpec, mesh: EvolvingMesh, t: float, u0: FeFunction, v0: FeFunction) -> float:
    """lambda(t; push u0, push v0) for reference functions u0, v0."""
    _check_functions(pivot, mesh, u0, v0)
    return float(u0.coefficients @ lambda_hat_matrix(pivot, mesh, t) @ v0.coefficients)


def hminus1_inner(mesh: EvolvingMesh, t: float, f: FeFunction, g: FeFunction) -> float:
    """
    (M f)^T K^-1 (M g) on the zero-boundary space of an interval

    Evaluated through a Cholesky factor of K so that swapping f and g gives
    the same floating-point value.

    Args:
        mesh: Evolving interval mesh
        t: Time
        f: Zero-boundary function at t
        g: Zero-boundary function at t

    Returns:
        The H^-1 inner product
    """
    if mesh.topology != INTERVAL:
        raise UnsupportedPivotError("H^-1 inner product needs an interval")
    for u in (f, g):
        if u.space != ZERO_BOUNDARY:
            raise ValueError("H^-1 inner product works on zero-boundary functions")
        u.check(mesh.reference)
    free = mesh.reference.free_nodes(ZERO_BOUNDARY)
    mass = _mass(mesh, t, free)
    try:
        factor = scipy.linalg.cholesky(_stiffness(mesh, t, free), lower=True)
    except np.linalg.LinAlgError as e:
        logger.error(f"Stiffness not positive definite at t={t}: {e}")
        raise AssemblyError(f"Singular stiffness at t={t}") from e
    zf = scipy.linalg.solve_triangular(factor, mass @ f.coefficients, lower=True)
    zg = scipy.linalg.solve_triangular(factor, mass @ g.coefficients, lower=True)
    return float(zf @ zg)


def _discrete_metric_tensor(mesh: EvolvingMesh, t: float) -> np.ndarray:
    """Per-element B = J A^-1 from the discrete deformation gradient."""
    geometry = mesh.geometry(t)
    deformation = geometry.deformation
    metric = np.swapaxes(deformation, 1, 2) @ deformation
    if mesh.reference.dim == 2:
        normals = rotate_clockwise(mesh.reference.tangents)
        metric = metric + np.einsum('ei,ej->eij', normals, normals)
    return geometry.stretch[:, None, None] * np.linalg.inv(metric)


def reference_pairing(pivot: PivotSpec, mesh: EvolvingMesh) -> np.ndarray:
    """Pivot pairing on the reference space (t = 0)."""
    free = _free(pivot, mesh)
    mass0 = _mass(mesh, 0.0, free)
    if pivot.variant in (L2, DUAL_FLOW):
        return mass0
    if pivot.variant == H1:
        return mass0 + _stiffness(mesh, 0.0, free)
    return mass0 @ solve_linear(_stiffness(mesh, 0.0, free), mass0, banded=True)


def pi_matrix(pivot: PivotSpec, mesh: EvolvingMesh, t: float) -> PiOperator:
    """
    Galerkin realization of Pi_t on reference coefficients

    Args:
        pivot: Pivot space and its companion field
        mesh: Evolving mesh
        t: Time

    Returns:
        PiOperator with forward and inverse matrices
    """
    validate_pivot(pivot, mesh, times=(t,))
    free = _free(pivot, mesh)
    banded = _banded(mesh)
    mass0 = _mass(mesh, 0.0, free)
    if pivot.variant in (L2, H1):
        geometry = mesh.geometry(t)
        weighted = restrict(assemble_mass(mesh, 0.0, geometry.stretch), free)
        gram = mass0
        if pivot.variant == H1:
            weighted = weighted + restrict(assemble_stiffness(mesh, 0.0, _discrete_metric_tensor(mesh, t)), free)
            gram = mass0 + _stiffness(mesh, 0.0, free)
        forward = solve_linear(gram, weighted, banded)
        inverse = solve_linear(weighted, gram, banded)
    elif pivot.variant == HMINUS1:
        stiffness0 = _stiffness(mesh, 0.0, free)
        stiffness = _stiffness(mesh, t, free)
        forward = solve_linear(mass0, stiffness0 @ solve_linear(stiffness, mass0, banded), banded)
        inverse = solve_linear(mass0, stiffness @ solve_linear(stiffness0, mass0, banded), banded)
    else:
        forward, _ = reparametrization_matrices(pivot, mesh, t)
        condition = np.linalg.cond(forward)
        if not np.isfinite(condition) or condition > config.SINGULAR_CONDITION:
            logger.error(f"Reparametrization matrix singular at t={t} (cond {condition:.3e})")
            raise AssemblyError(f"Reparametrization matrix singular at t={t}")
        inverse = solve_linear(forward, np.eye(len(forward)))
    return PiOperator(float(t), forward, inverse, pivot.variant)


def pi_diagnostics(pivot: PivotSpec, mesh: EvolvingMesh, times: Sequence[float],
                   seed: int = config.DEFAULT_SEED) -> Dict[str, np.ndarray]:
    """
    Round trip, consistency and operator norms of Pi_t over a time grid

    Consistency compares <Pi_t u, v> in the reference pairing with the
    direct pairing pi(t; u, v) for random reference coefficients.

    Args:
        pivot: Pivot space and its companion field
        mesh: Evolving mesh
        times: Time grid
        seed: LCG seed for the sample coefficients

    Returns:
        Dict of arrays keyed by 'time', 'round_trip', 'consistency',
        'forward_norm', 'inverse_norm'
    """
    rng = LinearCongruentialGenerator(seed)
    size = len(_free(pivot, mesh))
    u = rng.symmetric(size)
    v = rng.symmetric(size)
    reference = reference_pairing(pivot, mesh)
    rows = {"time": [], "round_trip": [], "consistency": [], "forward_norm": [], "inverse_norm": []}
    for t in times:
        operator = pi_matrix(pivot, mesh, t)
        direct = u @ pairing_matrix(pivot, mesh, t) @ v
        projected = (operator.forward @ u) @ reference @ v
        rows["time"].append(float(t))
        rows["round_trip"].append(operator.round_trip_error)
        rows["consistency"].append(abs(projected - direct) / max(1.0, abs(direct)))
        rows["forward_norm"].append(float(np.linalg.norm(operator.forward, 2)))
        rows["inverse_norm"].append(float(np.linalg.norm(operator.inverse, 2)))
    return {key: np.asarray(value) for key, value in rows.items()}


@dataclass(frozen=True)
class CompatibilityReport:
    """Norm-equivalence witness for a family of evolving spaces."""

    space: str
    times: np.ndarray
    max_ratio: float
    min_ratio: float
    constant: float
    refined_constant: float
    refinement_stable: bool


def space_norm(mesh: EvolvingMesh, t: float, values: np.ndarray, space: str, exponent: float = 2.0) -> float:
    """
    Norm of a P1 function on the domain at time t

    Args:
        mesh: Evolving mesh
        t: Time
        values: Nodal values on all nodes
        space: 'L2', 'H1' or 'W1r'
        exponent: r for W1r

    Returns:
        The norm
    """
    if space == NORM_L2:
        return float(np.sqrt(values @ assemble_mass(mesh, t) @ values))
    if space == NORM_H1:
        return float(np.sqrt(values @ (assemble_mass(mesh, t) + assemble_stiffness(mesh, t)) @ values))
    if space == NORM_W1R:
        return sobolev_power(mesh, t, values, exponent) ** (1.0 / exponent)
    raise ValueError(f"Unknown space tag '{space}'")


def _ratio_extremes(mesh: EvolvingMesh, space: str, times: Sequence[float], seed: int,
                    exponent: float) -> Tuple[float, float]:
    n = mesh.reference.n_nodes
    rng = LinearCongruentialGenerator(seed)
    samples = [np.eye(n)[j] for j in range(n)]
    samples += [rng.symmetric(n) for _ in range(config.COMPATIBILITY_RANDOM_VECTORS)]
    base = [space_norm(mesh, 0.0, u, space, exponent) for u in samples]
    largest, smallest = 0.0, np.inf
    for t in times:
        for u, norm0 in zip(samples, base):
            ratio = space_norm(mesh, t, u, space, exponent) / norm0
            largest = max(largest, ratio)
            smallest = min(smallest, ratio)
    return largest, smallest


def compatibility_report(mesh: EvolvingMesh, space: str, times: Sequence[float],
                         seed: int = config.DEFAULT_SEED, exponent: float = 2.0) -> CompatibilityReport:
    """
    Sample ||phi_t u|| / ||u|| over basis and random coefficients

    The constant is recomputed on the once-refined mesh carried by the same
    field; the report is refinement-stable when the two agree within 5%.

    Args:
        mesh: Evolving mesh
        space: 'L2', 'H1' or 'W1r'
        times: Time grid
        seed: LCG seed
        exponent: r for W1r

    Returns:
        CompatibilityReport
    """
    largest, smallest = _ratio_extremes(mesh, space, times, seed, exponent)
    constant = max(largest, 1.0 / smallest)
    if mesh.flow is None:
        refined_mesh = EvolvingMesh.static(mesh.reference.refined())
    else:
        flow = FlowMap(mesh.flow.field, mesh.flow.horizon, mesh.flow.substeps, mesh.flow.tolerance)
        refined_mesh = EvolvingMesh(mesh.reference.refined(), flow)
    refined_largest, refined_smallest = _ratio_extremes(refined_mesh, space, times, seed, exponent)
    refined_constant = max(refined_largest, 1.0 / refined_smallest)
    stable = abs(refined_constant - constant) <= config.REFINEMENT_STABILITY * constant
    logger.info(f"Compatibility {space}: C_X={constant:.6f} (refined {refined_constant:.6f})")
    return CompatibilityReport(space, np.asarray(times, dtype=float), largest, smallest, constant,
                               refined_constant, bool(stable))
