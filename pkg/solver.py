"""
Galerkin time stepping on evolving meshes for u' + A u + lambda u = f
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

import config
from calculus_checks import CheckReport, order_report, tolerance_report
from exceptions import DivergedStateError, NonConvergenceError
from flowmap import AMBIENT_1D, DilationField, FlowMap
from mesh import (INTERVAL, QUAD_WEIGHTS, SHAPE_VALUES, ZERO_BOUNDARY, EvolvingMesh, assemble_load,
                  assemble_mass, build_interval_mesh, restrict, scatter_matrix, scatter_vector,
                  sobolev_power, solve_linear)
from utils import LinearCongruentialGenerator, estimate_order, write_csv

logger = logging.getLogger(__name__)

LINEAR_DIFFUSION = "linear-diffusion"
P_LAPLACE = "p-laplace"
OPERATOR_KINDS = (LINEAR_DIFFUSION, P_LAPLACE)

Forcing = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OperatorSpec:
    """
    Regularized p-Laplace operator with a zeroth-order term

    <A u, v> = int alpha (u^2 + eps^2)^((p-2)/2) u v + (|grad u|^2 + eps^2)^((p-2)/2) grad u . grad v
    """

    kind: str = LINEAR_DIFFUSION
    p: float = 2.0
    alpha: float = 0.0
    epsilon: float = config.P_LAPLACE_EPSILON

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"Unknown operator '{self.kind}', expected one of {OPERATOR_KINDS}")
        if not self.p > 1.0:
            raise ValueError(f"Exponent p must be > 1, got {self.p}")
        if self.kind == LINEAR_DIFFUSION and self.p != 2.0:
            raise ValueError("linear-diffusion operator has p = 2")
        if self.alpha < 0.0:
            raise ValueError(f"Zeroth-order weight must be >= 0, got {self.alpha}")
        if self.epsilon < 0.0:
            raise ValueError(f"Regularization must be >= 0, got {self.epsilon}")
        if self.epsilon == 0.0 and self.p != 2.0:
            raise ValueError(f"epsilon = 0 is only allowed for p = 2, got p = {self.p}")


@dataclass(frozen=True)
class ProblemConfig:
    """Discrete problem: mesh with flow, operator, data and time grid (L2 pivot)."""

    mesh: EvolvingMesh
    operator: OperatorSpec
    initial: np.ndarray
    horizon: float
    steps: int
    forcing: Optional[Forcing] = None
    space: Optional[str] = None
    newton_tol: float = config.NEWTON_TOL
    newton_max_iter: int = config.NEWTON_MAX_ITER

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"Step count must be >= 1, got {self.steps}")
        if not self.newton_tol > 0.0:
            raise ValueError(f"Newton tolerance must be positive, got {self.newton_tol}")
        if self.newton_max_iter < 1:
            raise ValueError("Newton needs at least one iteration")
        if not 0.0 < self.horizon <= self.mesh.horizon + config.TIME_SLACK:
            raise ValueError(f"Horizon {self.horizon} outside the flow horizon {self.mesh.horizon}")
        if self.space is None:
            object.__setattr__(self, "space", self.mesh.reference.default_space)
        initial = np.asarray(self.initial, dtype=float)
        if initial.shape != (len(self.free),):
            raise ValueError(f"Initial data needs {len(self.free)} coefficients, got {initial.shape}")
        object.__setattr__(self, "initial", initial.copy())

    @property
    def free(self) -> np.ndarray:
        return self.mesh.reference.free_nodes(self.space)

    @property
    def tau(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    @property
    def banded(self) -> bool:
        return self.mesh.topology == INTERVAL


@dataclass
class SolveResult:
    """Coefficient trajectory and per-step diagnostics."""

    times: np.ndarray
    states: np.ndarray
    mass: np.ndarray
    h_norm_sq: np.ndarray
    xp_accumulator: np.ndarray
    dissipation: np.ndarray
    newton_iters: np.ndarray
    energy_bound: np.ndarray
    weighted_states: np.ndarray
    transport_terms: np.ndarray
    functionals: Optional[np.ndarray] = None
    newton_histories: List[List[float]] = field(default_factory=list)

    @property
    def mass_drift(self) -> np.ndarray:
        return np.abs(self.mass - self.mass[0])

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path: Path, notes: Optional[Sequence[str]] = None) -> Path:
        """
        Write the per-step diagnostics

        Args:
            path: Target file
            notes: Extra header lines

        Returns:
            The written path
        """
        header = ["t: time",
                  "mass: discrete integral of u over the domain at t",
                  "h_norm_sq: squared L2 norm of u at t",
                  "xp_accumulator: sum of tau * ||u||_X^p",
                  "dissipation: sum of 2 tau <A u, u>",
                  "newton_iters: linear solves taken by the step ending at t",
                  "mass_drift: |mass - mass(0)|",
                  "energy_bound: Gronwall bound for h_norm_sq + dissipation"]
        header.extend(notes or [])
        return write_csv(path, {
            "t": self.times, "mass": self.mass, "h_norm_sq": self.h_norm_sq,
            "xp_accumulator": self.xp_accumulator, "dissipation": self.dissipation,
            "newton_iters": self.newton_iters, "mass_drift": self.mass_drift,
            "energy_bound": self.energy_bound,
        }, header)


def _nodal(mesh: EvolvingMesh, U: np.ndarray, space: str) -> np.ndarray:
    values = np.zeros(mesh.reference.n_nodes)
    values[mesh.reference.free_nodes(space)] = U
    return values


def _power_factor(p: float, epsilon: float, s: np.ndarray) -> np.ndarray:
    """(s^2 + eps^2)^((p-2)/2), with the p > 2 limit 0 at s = eps = 0."""
    g = s * s + epsilon ** 2
    if p == 2.0:
        return np.ones_like(g)
    safe = np.where(g > 0.0, g, 1.0)
    return np.where(g > 0.0, safe ** (0.5 * (p - 2.0)), 0.0)


def _power_derivative(p: float, epsilon: float, s: np.ndarray) -> np.ndarray:
    """d/ds of (s^2 + eps^2)^((p-2)/2) s."""
    g = s * s + epsilon ** 2
    if p == 2.0:
        return np.ones_like(g)
    safe = np.where(g > 0.0, g, 1.0)
    value = safe ** (0.5 * (p - 2.0)) * ((p - 1.0) * s * s + epsilon ** 2) / safe
    return np.where(g > 0.0, value, 0.0)


def _element_data(mesh: EvolvingMesh, t: float, values: np.ndarray):
    geometry = mesh.geometry(t)
    a, b = mesh.reference.elements[:, 0], mesh.reference.elements[:, 1]
    slopes = (values[b] - values[a]) / geometry.lengths
    at_points = values[a][:, None] * SHAPE_VALUES[0] + values[b][:, None] * SHAPE_VALUES[1]
    return geometry, slopes, at_points


def nonlinear_residual(spec: OperatorSpec, mesh: EvolvingMesh, t: float, U: np.ndarray,
                       space: Optional[str] = None, epsilon: Optional[float] = None) -> np.ndarray:
    """
    Vector A(t; U)_j = <A(t) u, phi_j> over the free nodes

    Args:
        spec: Operator specification
        mesh: Evolving mesh
        t: Time
        U: Free-node coefficients
        space: Function space (mesh default when omitted)
        epsilon: Regularization used for this evaluation instead of spec.epsilon;
            0 evaluates the unregularized operator

    Returns:
        Residual vector over the free nodes
    """
    eps = spec.epsilon if epsilon is None else epsilon
    if eps < 0.0:
        raise ValueError(f"Regularization must be >= 0, got {eps}")
    space = space or mesh.reference.default_space
    values = _nodal(mesh, U, space)
    geometry, slopes, at_points = _element_data(mesh, t, values)
    flux = _power_factor(spec.p, eps, slopes) * slopes
    local = flux[:, None] * np.array([-1.0, 1.0])
    if spec.alpha > 0.0:
        zeroth = spec.alpha * _power_factor(spec.p, eps, at_points) * at_points * geometry.lengths[:, None]
        local = local + np.einsum('q,eq,iq->ei', QUAD_WEIGHTS, zeroth, SHAPE_VALUES)
    full = scatter_vector(local, mesh.reference.elements, mesh.reference.n_nodes)
    result = full[mesh.reference.free_nodes(space)]
    if not np.all(np.isfinite(result)):
        logger.error(f"Non-finite operator value at t={t}")
        raise DivergedStateError(f"Operator residual not finite at t={t}")
    return result


def operator_tangent(spec: OperatorSpec, mesh: EvolvingMesh, t: float, U: np.ndarray,
                     space: Optional[str] = None) -> np.ndarray:
    """Jacobian of nonlinear_residual with respect to U."""
    space = space or mesh.reference.default_space
    values = _nodal(mesh, U, space)
    geometry, slopes, at_points = _element_data(mesh, t, values)
    coefficient = _power_derivative(spec.p, spec.epsilon, slopes) / geometry.lengths
    local = coefficient[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    if spec.alpha > 0.0:
        weights = spec.alpha * _power_derivative(spec.p, spec.epsilon, at_points) * geometry.lengths[:, None]
        local = local + np.einsum('q,eq,iq,jq->eij', QUAD_WEIGHTS, weights, SHAPE_VALUES, SHAPE_VALUES)
    full = scatter_matrix(local, mesh.reference.elements, mesh.reference.n_nodes)
    return restrict(full, mesh.reference.free_nodes(space))


def _secant_operator(spec: OperatorSpec, mesh: EvolvingMesh, t: float, U: np.ndarray, space: str) -> np.ndarray:
    """Matrix L(U) with A(U) = L(U) U (coefficients frozen at U) for the Picard sweep."""
    values = _nodal(mesh, U, space)
    geometry, slopes, at_points = _element_data(mesh, t, values)
    coefficient = _power_factor(spec.p, spec.epsilon, slopes) / geometry.lengths
    local = coefficient[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    if spec.alpha > 0.0:
        weights = spec.alpha * _power_factor(spec.p, spec.epsilon, at_points) * geometry.lengths[:, None]
        local = local + np.einsum('q,eq,iq,jq->eij', QUAD_WEIGHTS, weights, SHAPE_VALUES, SHAPE_VALUES)
    full = scatter_matrix(local, mesh.reference.elements, mesh.reference.n_nodes)
    return restrict(full, mesh.reference.free_nodes(space))


def _sup_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _newton(problem: ProblemConfig, t: float, mass: np.ndarray, rhs: np.ndarray,
            guess: np.ndarray) -> Tuple[np.ndarray, int, List[float]]:
    """Damped Newton for M U + tau A(t; U) = rhs."""
    spec, mesh, tau, space = problem.operator, problem.mesh, problem.tau, problem.space

    def residual(U):
        r = mass @ U + tau * nonlinear_residual(spec, mesh, t, U, space) - rhs
        if not np.all(np.isfinite(r)):
            logger.error(f"Non-finite Newton residual at t={t}")
            raise DivergedStateError(f"Nonlinear residual not finite at t={t}")
        return r

    target = problem.newton_tol * (1.0 + _sup_norm(rhs))
    U = guess.copy()
    r = residual(U)
    norm = _sup_norm(r)
    history = [norm]
    iterations = 0
    while norm > target:
        if iterations >= problem.newton_max_iter:
            logger.error(f"Newton stagnated at t={t}: residual {norm:.3e} after {iterations} iterations")
            raise NonConvergenceError(f"Newton did not converge at t={t}", residual=norm, iterations=iterations)
        jacobian = mass + tau * operator_tangent(spec, mesh, t, U, space)
        delta = solve_linear(jacobian, -r, problem.banded)
        iterations += 1
        damping = 1.0
        accepted = False
        for _ in range(config.NEWTON_MAX_HALVINGS + 1):
            candidate = U + damping * delta
            candidate_r = residual(candidate)
            if _sup_norm(candidate_r) < norm:
                U, r, accepted = candidate, candidate_r, True
                break
            damping *= 0.5
        if not accepted:
            logger.warning(f"Damped Newton failed to reduce the residual at t={t}; Picard sweep")
            operator = _secant_operator(spec, mesh, t, U, space)
            U = solve_linear(mass + tau * operator, rhs, problem.banded)
            iterations += 1
            r = residual(U)
        norm = _sup_norm(r)
        history.append(norm)
        logger.debug(f"t={t:.6f} Newton iteration {iterations}: residual {norm:.3e}")
    return U, iterations, history


def step(problem: ProblemConfig, U_k: np.ndarray, t_k: float, mass_k: Optional[np.ndarray] = None,
         t_next: Optional[float] = None) -> Tuple[np.ndarray, int, List[float]]:
    """
    One conservative implicit Euler step

    Solves (M(t_k+1) U - M(t_k) U_k) / tau + A(t_k+1; U) = F(t_k+1) on the free nodes.

    Args:
        problem: Problem configuration
        U_k: Coefficients at t_k
        t_k: Current time
        mass_k: Free-node mass matrix at t_k (assembled when omitted)
        t_next: End of the step (t_k + tau when omitted)

    Returns:
        (U_k+1, Newton iterations, residual history)
    """
    free = problem.free
    if t_next is None:
        t_next = min(t_k + problem.tau, problem.horizon)
    if mass_k is None:
        mass_k = restrict(assemble_mass(problem.mesh, t_k), free)
    mass_next = restrict(assemble_mass(problem.mesh, t_next), free)
    load = restrict(assemble_load(problem.mesh, t_next, problem.forcing), free)
    rhs = mass_k @ U_k + problem.tau * load
    return _newton(problem, t_next, mass_next, rhs, U_k)


def x_norm_power(spec: OperatorSpec, mesh: EvolvingMesh, t: float, U: np.ndarray,
                 space: Optional[str] = None) -> float:
    """||u||_X^p: gradient seminorm on zero-boundary spaces, full W^{1,p} norm otherwise."""
    space = space or mesh.reference.default_space
    return sobolev_power(mesh, t, _nodal(mesh, U, space), spec.p, include_values=space != ZERO_BOUNDARY)


def _stretch_ratio(mesh: EvolvingMesh, t_k: float, t_next: float) -> float:
    return float(np.max(mesh.geometry(t_k).lengths / mesh.geometry(t_next).lengths))


def solve(problem: ProblemConfig) -> SolveResult:
    """
    March the scheme over the time grid and record diagnostics

    Args:
        problem: Problem configuration

    Returns:
        SolveResult with trajectory, diagnostics and stored functionals
        g_k = F_k - A(U_k) - G_k U_k
    """
    mesh, spec, free, tau = problem.mesh, problem.operator, problem.free, problem.tau
    times = problem.times
    logger.info(f"Solving {spec.kind} (p={spec.p}) with {problem.steps} steps on "
                f"{mesh.reference.n_elements} elements")

    def measure(t, U):
        full_mass = assemble_mass(mesh, t)
        mass = restrict(full_mass, free)
        total = float(np.sum(full_mass[:, free] @ U))
        transport = restrict(assemble_mass(mesh, t, mesh.geometry(t).divergence), free)
        load = restrict(assemble_load(mesh, t, problem.forcing), free)
        functional = load - nonlinear_residual(spec, mesh, t, U, problem.space) - transport @ U
        return mass, total, transport @ U, functional

    U = problem.initial.copy()
    mass_k, total, transported, functional = measure(0.0, U)
    energy0 = float(U @ mass_k @ U)
    states, masses, norms = [U], [total], [energy0]
    xp, dissipation, bound = [0.0], [0.0], [energy0]
    iterations, weighted, transport_terms, functionals = [0], [mass_k @ U], [transported], [functional]
    histories = []
    for k in range(problem.steps):
        t_k, t_next = times[k], times[k + 1]
        U, iters, history = step(problem, U, t_k, mass_k, t_next)
        mass_next, total, transported, functional = measure(t_next, U)
        load = restrict(assemble_load(mesh, t_next, problem.forcing), free)
        operator_value = float(nonlinear_residual(spec, mesh, t_next, U, problem.space) @ U)
        ratio = max(_stretch_ratio(mesh, t_k, t_next), 1.0)
        growth = 1.0 / (2.0 - ratio) if ratio < 2.0 else np.inf
        states.append(U)
        masses.append(total)
        norms.append(float(U @ mass_next @ U))
        xp.append(xp[-1] + tau * x_norm_power(spec, mesh, t_next, U, problem.space))
        dissipation.append(dissipation[-1] + 2.0 * tau * operator_value)
        bound.append(growth * (bound[-1] + 2.0 * tau * abs(float(load @ U))))
        iterations.append(iters)
        weighted.append(mass_next @ U)
        transport_terms.append(transported)
        functionals.append(functional)
        histories.append(history)
        mass_k = mass_next
    logger.info(f"Solve finished: max Newton iterations {max(iterations)}, "
                f"mass drift {abs(masses[-1] - masses[0]):.3e}")
    return SolveResult(
        times=times, states=np.array(states), mass=np.array(masses), h_norm_sq=np.array(norms),
        xp_accumulator=np.array(xp), dissipation=np.array(dissipation),
        newton_iters=np.array(iterations), energy_bound=np.array(bound),
        weighted_states=np.array(weighted), transport_terms=np.array(transport_terms),
        functionals=np.array(functionals), newton_histories=histories,
    )


def project_initial(mesh: EvolvingMesh, data, space: Optional[str] = None) -> np.ndarray:
    """
    Initial coefficients by L2 projection on the reference mesh

    Args:
        mesh: Evolving mesh
        data: Callable of reference points (..., d), or a coefficient array used as is
        space: Function space (mesh default when omitted)

    Returns:
        Free-node coefficients
    """
    space = space or mesh.reference.default_space
    free = mesh.reference.free_nodes(space)
    if not callable(data):
        coefficients = np.asarray(data, dtype=float)
        if coefficients.shape != (len(free),):
            raise ValueError(f"Initial coefficients need length {len(free)}, got {coefficients.shape}")
        return coefficients.copy()
    load = restrict(assemble_load(mesh, 0.0, lambda t, x: data(x)), free)
    return solve_linear(restrict(assemble_mass(mesh, 0.0), free), load, mesh.topology == INTERVAL)


def fixed_domain_reference(problem: ProblemConfig) -> ProblemConfig:
    """Same problem on the static reference mesh."""
    return dataclasses.replace(problem, mesh=EvolvingMesh.static(problem.mesh.reference))


def coercivity_constants(spec: OperatorSpec, mesh: EvolvingMesh, t: float,
                         space: Optional[str] = None) -> Tuple[float, float]:
    """
    Constants (C_c, c_c) of <A u, u> >= C_c ||u||_X^p - c_c

    Args:
        spec: Operator specification
        mesh: Evolving mesh
        t: Time
        space: Function space

    Returns:
        (C_c, c_c)
    """
    space = space or mesh.reference.default_space
    scale = 1.0 if space == ZERO_BOUNDARY else min(spec.alpha, 1.0)
    offset = 0.0
    if spec.p < 2.0:
        offset = (1.0 + spec.alpha) * spec.epsilon ** spec.p * float(np.sum(mesh.geometry(t).lengths))
    return scale, offset


def _witness_samples(rng: LinearCongruentialGenerator, size: int) -> np.ndarray:
    amplitude = 10.0 ** (4.0 * rng.uniform(1)[0] - 2.0)
    return amplitude * rng.symmetric(size)


def monotonicity_witness(spec: OperatorSpec, mesh: EvolvingMesh, t: float, space: Optional[str] = None,
                         samples: int = config.WITNESS_SAMPLES, seed: int = config.DEFAULT_SEED) -> CheckReport:
    """<A u - A v, u - v> >= 0 on fixed-seed random pairs; residual is the negative part."""
    space = space or mesh.reference.default_space
    size = len(mesh.reference.free_nodes(space))
    rng = LinearCongruentialGenerator(seed)
    violations = []
    for _ in range(samples):
        u = _witness_samples(rng, size)
        v = _witness_samples(rng, size)
        gap = float((nonlinear_residual(spec, mesh, t, u, space) - nonlinear_residual(spec, mesh, t, v, space))
                    @ (u - v))
        violations.append(max(0.0, -gap))
    return tolerance_report("monotonicity", np.arange(samples), violations, 1e-12, "n")


def coercivity_witness(spec: OperatorSpec, mesh: EvolvingMesh, t: float, space: Optional[str] = None,
                       samples: int = config.WITNESS_SAMPLES, seed: int = config.DEFAULT_SEED) -> CheckReport:
    """<A u, u> >= C_c ||u||_X^p - c_c on fixed-seed random samples."""
    space = space or mesh.reference.default_space
    size = len(mesh.reference.free_nodes(space))
    scale, offset = coercivity_constants(spec, mesh, t, space)
    rng = LinearCongruentialGenerator(seed)
    violations = []
    for _ in range(samples):
        u = _witness_samples(rng, size)
        lower = scale * x_norm_power(spec, mesh, t, u, space) - offset
        gap = float(nonlinear_residual(spec, mesh, t, u, space) @ u) - lower
        violations.append(max(0.0, -gap) / max(1.0, abs(lower)))
    return tolerance_report("coercivity", np.arange(samples), violations, 1e-12, "n")


def check_energy(result: SolveResult) -> CheckReport:
    """h_norm_sq + dissipation stays below the Gronwall bound at every step."""
    excess = np.maximum(result.h_norm_sq + result.dissipation - result.energy_bound, 0.0)
    relative = excess / np.maximum(1.0, result.energy_bound)
    return tolerance_report("energy-bound", result.times, relative, 1e-8)


def check_mass_conservation(result: SolveResult) -> CheckReport:
    """Mass drift at step k within 1e-12 * k (relative to the initial mass)."""
    steps = np.arange(len(result.times))
    drift = result.mass_drift / (np.maximum(steps, 1) * max(1.0, abs(float(result.mass[0]))))
    return tolerance_report("mass-conservation", result.times, drift, 1e-12)


def check_newton(result: SolveResult, max_iter: int = config.NEWTON_MAX_ITER) -> CheckReport:
    """
    Newton iteration counts and the superlinear tail

    Pairs of successive residuals inside config.NEWTON_TAIL_WINDOW must satisfy
    r_m+1 <= C r_m^q with C = config.NEWTON_TAIL_CONSTANT and q = config.NEWTON_TAIL_ORDER;
    the residual reported per step is the worst ratio r_m+1 / (C r_m^q), so the
    check passes at or below 1.
    """
    low, high = config.NEWTON_TAIL_WINDOW
    constant, order = config.NEWTON_TAIL_CONSTANT, config.NEWTON_TAIL_ORDER
    worst = []
    for history in result.newton_histories:
        ratios = [0.0]
        for r_m, r_next in zip(history[:-1], history[1:]):
            if 0.0 < r_m <= high and r_next >= low:
                ratios.append(r_next / (constant * r_m ** order))
        worst.append(max(ratios))
    within_budget = bool(np.all(result.newton_iters <= max_iter))
    report = tolerance_report("newton-tail", result.times[1:], worst, 1.0)
    return dataclasses.replace(report, passed=report.passed and within_budget)


@dataclass(frozen=True)
class StabilityTable:
    """Perturbation growth against exp(C_w t / 2)."""

    times: np.ndarray
    difference_norms: np.ndarray
    ratios: np.ndarray
    growth_constant: float

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))

    def to_csv(self, path: Path) -> Path:
        return write_csv(path, {"t": self.times, "difference_norm": self.difference_norms,
                                "ratio": self.ratios},
                         [f"stability experiment, C_w = {self.growth_constant:.17g}",
                          "difference_norm: L2 norm of u_a - u_b at t",
                          "ratio: difference_norm / (exp(C_w t / 2) * difference_norm(0))"])


def divergence_bound(mesh: EvolvingMesh, times: Sequence[float]) -> float:
    """C_w: largest discrete |div w| over the elements and the time grid."""
    if mesh.flow is None:
        return 0.0
    return max(float(np.max(np.abs(mesh.geometry(t).divergence))) for t in times)


def stability_experiment(problem: ProblemConfig, initial_a: np.ndarray, initial_b: np.ndarray,
                         runner: Callable = map) -> StabilityTable:
    """
    Solve from two initial vectors and compare the difference with exp(C_w t / 2)

    Args:
        problem: Problem configuration (its initial data is replaced)
        initial_a: First initial coefficients
        initial_b: Second initial coefficients
        runner: map-like callable used to run the two solves

    Returns:
        StabilityTable
    """
    problems = [dataclasses.replace(problem, initial=initial_a), dataclasses.replace(problem, initial=initial_b)]
    result_a, result_b = list(runner(solve, problems))
    mesh, times = problem.mesh, problem.times
    growth = divergence_bound(mesh, times)
    norms = []
    for k, t in enumerate(times):
        e = result_a.states[k] - result_b.states[k]
        mass = restrict(assemble_mass(mesh, t), problem.free)
        norms.append(float(np.sqrt(max(e @ mass @ e, 0.0))))
    norms = np.array(norms)
    if norms[0] == 0.0:
        ratios = np.zeros_like(norms)
    else:
        ratios = norms / (np.exp(0.5 * growth * times) * norms[0])
    logger.info(f"Stability: C_w={growth:.6f}, max ratio {np.max(ratios):.6f}")
    return StabilityTable(times, norms, ratios, growth)


@dataclass(frozen=True)
class ManufacturedSolution:
    """
    Heat solution on the dilating interval e^{rate t} [a, b]

    u = e^{-t} sin(pi (p - a) / (b - a)) with p = x e^{-rate t}, and the
    source that makes it solve the conservative heat equation.
    """

    a: float = 0.0
    b: float = 1.0
    rate: float = 0.5

    def exact(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., 0]
        p = x * np.exp(-self.rate * t)
        return np.exp(-t) * np.sin(np.pi * (p - self.a) / (self.b - self.a))

    def forcing(self, t: float, x: np.ndarray) -> np.ndarray:
        width = (self.b - self.a) * np.exp(self.rate * t)
        return self.exact(t, x) * (-1.0 + self.rate + (np.pi / width) ** 2)

    def initial(self, points: np.ndarray) -> np.ndarray:
        return self.exact(0.0, points)


def manufactured_heat(solution: ManufacturedSolution, n: int, steps: int, horizon: float,
                      substeps: int = config.FLOW_SUBSTEPS) -> ProblemConfig:
    """
    Heat problem on the dilating interval reproducing the manufactured solution

    Args:
        solution: Manufactured solution
        n: Number of elements
        steps: Number of time steps
        horizon: Final time
        substeps: Flow substeps per unit time

    Returns:
        ProblemConfig on the zero-boundary space
    """
    flow = FlowMap(DilationField(AMBIENT_1D, solution.rate), horizon, substeps)
    mesh = EvolvingMesh(build_interval_mesh(solution.a, solution.b, n), flow)
    initial = project_initial(mesh, solution.initial, ZERO_BOUNDARY)
    return ProblemConfig(mesh, OperatorSpec(), initial, horizon, steps, forcing=solution.forcing,
                         space=ZERO_BOUNDARY)


def heat_convergence_configs(solution: ManufacturedSolution, refine: str, levels: int = 4,
                             base_n: int = 8, base_steps: int = 16, horizon: float = 0.5,
                             fine_n: int = 256) -> List[ProblemConfig]:
    """
    Refinement family for the manufactured heat problem

    'space' halves h with tau proportional to h^2 (steps = n^2 / 4 from the
    base level); 'time' halves tau at the fixed fine mesh.

    Args:
        solution: Manufactured solution
        refine: 'space' or 'time'
        levels: Number of levels
        base_n: Elements at the coarsest spatial level
        base_steps: Steps at the coarsest level
        horizon: Final time
        fine_n: Mesh size of the time study

    Returns:
        Configurations ordered coarse to fine
    """
    if refine == "space":
        sizes = [(base_n * 2 ** k, base_steps * 4 ** k) for k in range(levels)]
    elif refine == "time":
        sizes = [(fine_n, base_steps * 2 ** k) for k in range(levels)]
    else:
        raise ValueError(f"Unknown refinement '{refine}', expected 'space' or 'time'")
    return [manufactured_heat(solution, n, steps, horizon) for n, steps in sizes]


def l2_error(mesh: EvolvingMesh, t: float, U: np.ndarray, exact: Callable, space: Optional[str] = None) -> float:
    """L2(Omega(t)) distance between the discrete and an exact solution by quadrature."""
    space = space or mesh.reference.default_space
    geometry, _, at_points = _element_data(mesh, t, _nodal(mesh, U, space))
    difference = at_points - exact(t, mesh.quadrature_points(t))
    return float(np.sqrt(np.sum(geometry.lengths * ((difference ** 2) @ QUAD_WEIGHTS))))


@dataclass(frozen=True)
class EocTable:
    """Errors and experimental orders over a refinement family."""

    refine: str
    parameters: np.ndarray
    errors: np.ndarray

    @property
    def orders(self) -> np.ndarray:
        orders = [float("nan")]
        for k in range(1, len(self.errors)):
            orders.append(estimate_order(self.errors[k - 1:k + 1]))
        return np.asarray(orders)

    def to_csv(self, path: Path) -> Path:
        column = "h" if self.refine == "space" else "tau"
        return write_csv(path, {column: self.parameters, "error": self.errors, "eoc": self.orders},
                         [f"convergence study ({self.refine} refinement)",
                          "error: L2 error at the final time on the evolved domain",
                          "eoc: log2 of successive error ratios"])


def convergence_study(problems: Sequence[ProblemConfig], solution: ManufacturedSolution, refine: str,
                      runner: Callable = map) -> EocTable:
    """
    Final-time L2 errors and EOCs for a refinement family

    Args:
        problems: Configurations, coarse to fine
        solution: Manufactured solution
        refine: 'space' or 'time'
        runner: map-like callable used to run the solves

    Returns:
        EocTable
    """
    results = list(runner(solve, problems))
    errors = [l2_error(problem.mesh, problem.horizon, result.final, solution.exact, problem.space)
              for problem, result in zip(problems, results)]
    if refine == "space":
        parameters = [problem.mesh.reference.h for problem in problems]
    else:
        parameters = [problem.tau for problem in problems]
    table = EocTable(refine, np.asarray(parameters), np.asarray(errors))
    logger.info(f"EOC ({refine}): {np.array2string(table.orders, precision=3)}")
    return table


def epsilon_limit(problem: ProblemConfig, epsilons: Sequence[float] = (1e-2, 1e-3, 1e-4),
                  runner: Callable = map) -> CheckReport:
    """
    Final states for decreasing regularization settle down

    Residuals are sup-norm differences between successive final states. The
    order is measured in epsilon (log of the residual ratio over log of the
    epsilon ratio) and must reach the lower end of config.FIRST_ORDER_BAND.

    Args:
        problem: Problem configuration with a p-Laplace operator
        epsilons: Decreasing regularization parameters
        runner: map-like callable used to run the solves

    Returns:
        CheckReport indexed by epsilon
    """
    problems = [dataclasses.replace(problem, operator=dataclasses.replace(problem.operator, epsilon=eps))
                for eps in epsilons]
    finals = [result.final for result in runner(solve, problems)]
    differences = [_sup_norm(b - a) for a, b in zip(finals[:-1], finals[1:])]
    return order_report("epsilon-limit", list(epsilons[1:]), differences, (config.FIRST_ORDER_BAND[0], np.inf),
                        scale=max(_sup_norm(f) for f in finals), refinement=epsilons[-2] / epsilons[-1])
