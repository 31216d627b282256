"""
Finite-difference and round-trip oracles for the transport identities
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

import config
from evolving_spaces import (PivotSpec, lambda_hat_matrix, pairing_matrix, pi_diagnostics)
from flowmap import FlowMap, geometry_sample, inverse_flow, inverse_metric_density, metric_time_derivative
from mesh import EvolvingMesh, FeFunction, assemble_mass
from utils import LinearCongruentialGenerator, estimate_order, format_residual, write_csv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckReport:
    """
    Residuals of one identity over a step grid (or over sample times).

    parameter is 'h' for finite-difference refinement, 't' for checks sampled
    in time and 'n' for mesh sizes.
    """

    name: str
    steps: np.ndarray
    residuals: np.ndarray
    order: float
    tolerance: float
    passed: bool
    parameter: str = "h"
    scale: float = 1.0

    @property
    def residual(self) -> float:
        """Headline residual: finest level for refinement studies, worst sample otherwise."""
        if len(self.residuals) == 0:
            return 0.0
        if self.parameter == "h":
            return float(self.residuals[-1])
        return float(np.max(self.residuals))

    def level_orders(self) -> np.ndarray:
        orders = [float("nan")]
        for k in range(1, len(self.residuals)):
            orders.append(estimate_order(self.residuals[k - 1:k + 1]))
        return np.asarray(orders)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name} {format_residual(self.residual)}"

    def to_csv(self, path: Path, notes: Optional[Sequence[str]] = None) -> Path:
        """
        Write columns h, residual, order

        Args:
            path: Target file
            notes: Extra header lines

        Returns:
            The written path
        """
        header = [f"check {self.name}", f"{self.parameter}: step or sample parameter",
                  "residual: max abs difference between the two sides",
                  "order: log2 of successive residual ratios",
                  f"verdict {'PASS' if self.passed else 'FAIL'}"]
        header.extend(notes or [])
        return write_csv(path, {self.parameter: self.steps, "residual": self.residuals,
                                "order": self.level_orders()}, header)


def order_report(name: str, steps: Sequence[float], residuals: Sequence[float],
                 band: Tuple[float, float] = config.ORDER_BAND, scale: float = 1.0,
                 refinement: float = 2.0) -> CheckReport:
    """
    Verdict for a refinement study

    Passes when every residual is finite and either the finest residual is
    at roundoff level relative to scale or the observed order lies in band.

    Args:
        name: Check name
        steps: Step sizes, coarse to fine
        residuals: Residual per step
        band: Accepted order interval
        scale: Magnitude of the compared quantities
        refinement: Ratio between successive steps

    Returns:
        CheckReport
    """
    steps = np.asarray(steps, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    order = estimate_order(residuals, refinement)
    finite = bool(np.all(np.isfinite(residuals)))
    floor = config.RESIDUAL_FLOOR * max(1.0, scale)
    at_floor = finite and residuals[-1] <= floor
    in_band = finite and np.isfinite(order) and band[0] <= order <= band[1]
    report = CheckReport(name, steps, residuals, order, floor, bool(at_floor or in_band), "h", scale)
    logger.info(f"{report.summary()} (order {order:.3f})")
    return report


def tolerance_report(name: str, samples: Sequence[float], residuals: Sequence[float], tolerance: float,
                     parameter: str = "t", scale: float = 1.0) -> CheckReport:
    """Verdict for residuals that must stay below an absolute tolerance."""
    samples = np.asarray(samples, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    bound = tolerance * max(1.0, scale)
    passed = bool(np.all(np.isfinite(residuals)) and np.all(residuals <= bound))
    report = CheckReport(name, samples, residuals, float("nan"), bound, passed, parameter, scale)
    logger.info(report.summary())
    return report


def central_difference(func: Callable[[float], np.ndarray], t: float, h: float) -> np.ndarray:
    return (np.asarray(func(t + h)) - np.asarray(func(t - h))) / (2.0 * h)


def _check_window(t: float, steps: Sequence[float], horizon: float) -> None:
    largest = max(steps)
    if t - largest < 0.0 or t + largest > horizon:
        raise ValueError(f"Time {t} with step {largest} leaves [0, {horizon}]")


@dataclass(frozen=True)
class CoefficientPath:
    """Quadratic coefficient trajectory c0 + c1 t + c2 t^2."""

    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray

    def value(self, t: float) -> np.ndarray:
        return self.c0 + t * self.c1 + t * t * self.c2

    def derivative(self, t: float) -> np.ndarray:
        return self.c1 + 2.0 * t * self.c2

    @classmethod
    def constant(cls, coefficients: np.ndarray) -> "CoefficientPath":
        c0 = np.asarray(coefficients, dtype=float)
        return cls(c0, np.zeros_like(c0), np.zeros_like(c0))


def random_path(rng: LinearCongruentialGenerator, size: int) -> CoefficientPath:
    """Draw c0, c1, c2 in [-1, 1) from the generator (in that order)."""
    return CoefficientPath(rng.symmetric(size), rng.symmetric(size), rng.symmetric(size))


def check_transport_theorem(pivot: PivotSpec, mesh: EvolvingMesh, u_path: CoefficientPath,
                            v_path: CoefficientPath, t: float,
                            steps: Sequence[float] = config.FD_STEPS,
                            name: str = "transport-theorem") -> CheckReport:
    """
    d/dt pi(t; u, v) = pi(u', v) + pi(u, v') + lambda(t; u, v) along coefficient paths

    Args:
        pivot: Pivot space and its companion field
        mesh: Evolving mesh
        u_path: Reference-coefficient path of u
        v_path: Reference-coefficient path of v
        t: Check time
        steps: Finite-difference steps, coarse to fine
        name: Report name

    Returns:
        CheckReport with order-2 decay expected
    """
    _check_window(t, steps, mesh.horizon)
    pairing = pairing_matrix(pivot, mesh, t)
    u, v = u_path.value(t), v_path.value(t)
    rhs = (u_path.derivative(t) @ pairing @ v + u @ pairing @ v_path.derivative(t)
           + u @ lambda_hat_matrix(pivot, mesh, t) @ v)

    def energy(s):
        return u_path.value(s) @ pairing_matrix(pivot, mesh, s) @ v_path.value(s)

    residuals = [abs(float(central_difference(energy, t, h)) - rhs) for h in steps]
    return order_report(name, steps, residuals, scale=abs(rhs))


def check_lambda_oracle(pivot: PivotSpec, mesh: EvolvingMesh, u0: FeFunction, v0: FeFunction, t: float,
                        steps: Sequence[float] = config.FD_STEPS) -> CheckReport:
    """Central FD of the transported pairing against the closed-form lambda."""
    paths = (CoefficientPath.constant(u0.coefficients), CoefficientPath.constant(v0.coefficients))
    return check_transport_theorem(pivot, mesh, *paths, t, steps, name=f"lambda-{pivot.variant}")


def transport_suite(pivot: PivotSpec, mesh: EvolvingMesh, t: float, seed: int = config.DEFAULT_SEED,
                    count: int = config.TRANSPORT_TRAJECTORIES) -> List[CheckReport]:
    """
    Transport theorem along fixed-seed random quadratic trajectories

    Args:
        pivot: Pivot space and its companion field
        mesh: Evolving mesh
        t: Check time
        seed: LCG seed
        count: Number of (u, v) trajectory pairs

    Returns:
        One report per trajectory pair
    """
    rng = LinearCongruentialGenerator(seed)
    size = len(mesh.reference.free_nodes(pivot.space))
    reports = []
    for k in range(count):
        u_path = random_path(rng, size)
        v_path = random_path(rng, size)
        reports.append(check_transport_theorem(pivot, mesh, u_path, v_path, t,
                                               name=f"transport-{pivot.variant}-{k}"))
    return reports


def check_weak_derivative_characterization(results: Sequence, t: float) -> CheckReport:
    """
    Witness d/dt (u, phi_t v) = <g, phi_t v> + lambda(u, phi_t v) on solver output

    Every result must come from the same problem with a different step
    count and stored functionals g_k. At the step nearest to t the central
    difference of M(t_k) U_k is compared with g_k + G_k U_k for all basis
    vectors v at once.

    Args:
        results: SolveResults, coarse to fine in time
        t: Interior comparison time

    Returns:
        CheckReport over the time steps, order 1 expected
    """
    steps, residuals, scale = [], [], 1.0
    for result in results:
        if result.functionals is None:
            raise ValueError("Solve result carries no stored functionals")
        k = int(np.argmin(np.abs(result.times - t)))
        if k == 0 or k == len(result.times) - 1:
            raise ValueError(f"Time {t} is not interior to the solve grid")
        tau = result.times[k + 1] - result.times[k]
        weighted = result.weighted_states
        difference = (weighted[k + 1] - weighted[k - 1]) / (2.0 * tau)
        target = result.functionals[k] + result.transport_terms[k]
        steps.append(tau)
        residuals.append(float(np.max(np.abs(difference - target))))
        scale = max(scale, float(np.max(np.abs(target))))
    return order_report("weak-derivative", steps, residuals, (config.FIRST_ORDER_BAND[0], np.inf), scale)


def _tracked_jacobians(flow: FlowMap, points: np.ndarray, tangents: Optional[np.ndarray]):
    trajectory = flow.track(points)

    def jdet(s):
        x, F = trajectory.at(s)
        return geometry_sample(x, F, tangents).jdet

    def rate(s):
        x, F = trajectory.at(s)
        if tangents is None:
            current = None
        else:
            current = np.einsum('nij,nj->ni', F, tangents)
        return flow.field.divergence(s, x, current) * geometry_sample(x, F, tangents).jdet

    return jdet, rate


def check_jacobian_ode(flow: FlowMap, points, times: Sequence[float], tangents=None,
                       steps: Sequence[float] = config.FD_STEPS) -> CheckReport:
    """
    dJ/dt = (div w)(t, Phi) J along tracked points

    On curves the divergence is tangential with the current tangent
    DPhi tau0 / |DPhi tau0|.

    Args:
        flow: Flow map
        points: Reference points, shape (m, d)
        times: Check times (each with its FD window inside [0, T])
        tangents: Reference tangents for curves
        steps: Finite-difference steps

    Returns:
        CheckReport, order 2 or roundoff-level residuals expected
    """
    points = np.asarray(points, dtype=float).reshape(-1, flow.dim)
    jdet, rate = _tracked_jacobians(flow, points, tangents)
    residuals, scale = [], 1.0
    for h in steps:
        worst = 0.0
        for t in times:
            _check_window(t, steps, flow.horizon)
            expected = rate(t)
            scale = max(scale, float(np.max(np.abs(expected))))
            worst = max(worst, float(np.max(np.abs(central_difference(jdet, t, h) - expected))))
        residuals.append(worst)
    return order_report("jacobian-ode", steps, residuals, scale=scale)


def check_metric_derivative(flow: FlowMap, points, times: Sequence[float],
                            steps: Sequence[float] = config.FD_STEPS) -> CheckReport:
    """FD of the inverse-metric density J F^-1 F^-T against its closed-form derivative."""
    points = np.asarray(points, dtype=float).reshape(-1, flow.dim)
    residuals, scale = [], 1.0
    for h in steps:
        worst = 0.0
        for t in times:
            _check_window(t, steps, flow.horizon)
            for p in points:
                expected = metric_time_derivative(flow, p, t)
                scale = max(scale, float(np.max(np.abs(expected))))
                observed = central_difference(lambda s: inverse_metric_density(flow, p, s), t, h)
                worst = max(worst, float(np.max(np.abs(observed - expected))))
        residuals.append(worst)
    return order_report("metric-derivative", steps, residuals, scale=scale)


def check_gradient_pullback(mesh: EvolvingMesh, u: FeFunction, t) -> CheckReport:
    """
    Per-element grad_{g0}(phi_{-t} u) = (D Phi)^T phi_{-t}(grad_{g(t)} u)

    Uses the discrete deformation gradient and discrete tangents of each
    element, so the identity holds to roundoff.

    Args:
        mesh: Evolving mesh
        u: P1 function
        t: Time or sequence of times

    Returns:
        CheckReport sampled over the times
    """
    values = u.nodal_values(mesh.reference)
    a, b = mesh.reference.elements[:, 0], mesh.reference.elements[:, 1]
    jump = values[b] - values[a]
    reference_gradient = (jump / mesh.reference.element_lengths)[:, None] * mesh.reference.tangents
    times = np.atleast_1d(np.asarray(t, dtype=float))
    residuals, scale = [], 1.0
    for s in times:
        geometry = mesh.geometry(float(s))
        current_gradient = (jump / geometry.lengths)[:, None] * geometry.tangents
        pulled = np.einsum('eji,ej->ei', geometry.deformation, current_gradient)
        scale = max(scale, float(np.max(np.abs(reference_gradient))))
        residuals.append(float(np.max(np.abs(pulled - reference_gradient))))
    return tolerance_report("gradient-pullback", times, residuals, config.EXACT_TOLERANCE, "t", scale)


def check_flow_round_trip(flow: FlowMap, points, times: Sequence[float]) -> CheckReport:
    """Phi_0^t(Phi_t^0(p)) = p and the reverse composition, within 10x the flow tolerance."""
    points = np.asarray(points, dtype=float).reshape(-1, flow.dim)
    residuals = []
    for t in times:
        x, _ = flow.evolve(points, t)
        back = inverse_flow(flow, x, t)
        forward, _ = flow.evolve(inverse_flow(flow, points, t), t)
        residuals.append(max(float(np.max(np.abs(back - points))), float(np.max(np.abs(forward - points)))))
    scale = max(1.0, float(np.max(np.abs(points))))
    return tolerance_report("flow-round-trip", times, residuals, 10.0 * flow.tolerance, "t", scale)


def check_group_property(flow: FlowMap, points, times: Sequence[float], fraction: float = 0.5) -> CheckReport:
    """Direct evolution to t against a restart from the intermediate time fraction * t."""
    points = np.asarray(points, dtype=float).reshape(-1, flow.dim)
    residuals = []
    for t in times:
        s = fraction * t
        direct, _ = flow.evolve(points, t)
        middle, _ = flow.evolve(points, s)
        restarted, _ = flow.transport(middle, s, t)
        residuals.append(float(np.max(np.abs(direct - restarted))))
    scale = max(1.0, float(np.max(np.abs(points))))
    return tolerance_report("group-property", times, residuals, 10.0 * flow.tolerance, "t", scale)


def check_variational_consistency(flow: FlowMap, points, t: float,
                                  steps: Sequence[float] = config.FD_STEPS) -> CheckReport:
    """Central FD of Phi_t^0 in p against the integrated Jacobian."""
    points = np.asarray(points, dtype=float).reshape(-1, flow.dim)
    _, jac = flow.evolve(points, t)
    residuals = []
    for h in steps:
        worst = 0.0
        for i in range(flow.dim):
            shift = np.zeros(flow.dim)
            shift[i] = h
            plus, _ = flow.evolve(points + shift, t)
            minus, _ = flow.evolve(points - shift, t)
            column = (plus - minus) / (2.0 * h)
            worst = max(worst, float(np.max(np.abs(column - jac[:, :, i]))))
        residuals.append(worst)
    return order_report("variational-consistency", steps, residuals, scale=float(np.max(np.abs(jac))))


def check_pi_operator(pivot: PivotSpec, mesh: EvolvingMesh, times: Sequence[float],
                      seed: int = config.DEFAULT_SEED) -> List[CheckReport]:
    """
    Round trip, consistency with the direct pairing and finiteness of the norms of Pi_t

    Args:
        pivot: Pivot space and its companion field
        mesh: Evolving mesh
        times: Time grid
        seed: LCG seed for the sample coefficients

    Returns:
        Three reports (round trip, consistency, operator norms)
    """
    diagnostics = pi_diagnostics(pivot, mesh, times, seed)
    norms = np.maximum(diagnostics["forward_norm"], diagnostics["inverse_norm"])
    tag = pivot.variant
    return [
        tolerance_report(f"pi-round-trip-{tag}", diagnostics["time"], diagnostics["round_trip"],
                         config.EXACT_TOLERANCE),
        tolerance_report(f"pi-consistency-{tag}", diagnostics["time"], diagnostics["consistency"],
                         config.EXACT_TOLERANCE),
        tolerance_report(f"pi-norms-{tag}", diagnostics["time"], norms, np.inf),
    ]


def check_mass_derivative_vs_lambda(mesh: EvolvingMesh, t: float,
                                    steps: Sequence[float] = config.FD_STEPS) -> CheckReport:
    """Forward difference (M(t + tau) - M(t)) / tau against the transport matrix G(t), order 1."""
    if t + max(steps) > mesh.horizon:
        raise ValueError(f"Time {t} with step {max(steps)} exceeds the horizon")
    transport = assemble_mass(mesh, t, mesh.geometry(t).divergence)
    mass = assemble_mass(mesh, t)
    residuals = [float(np.max(np.abs((assemble_mass(mesh, t + tau) - mass) / tau - transport))) for tau in steps]
    return order_report("mass-derivative", steps, residuals, config.FIRST_ORDER_BAND,
                        scale=float(np.max(np.abs(transport))))
