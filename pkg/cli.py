#!/usr/bin/env python3
"""
Evolving-spaces toolkit launcher with argparse support
Run with: python cli.py check-lambda --config scenarios/lambda_dilation_l2.cfg
          python cli.py converge --config scenarios/converge_heat.cfg --workers 4
"""
import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_core import PydanticCustomError
from termcolor import colored

load_dotenv()

import config
from calculus_checks import (CheckReport, check_flow_round_trip, check_gradient_pullback, check_group_property,
                             check_jacobian_ode, check_lambda_oracle, check_mass_derivative_vs_lambda,
                             check_metric_derivative, check_pi_operator, check_transport_theorem,
                             check_variational_consistency, check_weak_derivative_characterization,
                             random_path, tolerance_report)
from evolving_spaces import (DUAL_FLOW, HMINUS1, NORM_H1, NORM_L2, NORM_W1R, PIVOTS, PivotSpec,
                             compatibility_report, validate_pivot)
from exceptions import ConfigError, EvolvingSpacesError
from flowmap import AMBIENT_1D, FIELD_CATALOG, PLANAR_CURVE, FlowMap, jacobian_constant, make_field, superpose
from mesh import INTERVAL, EvolvingMesh, FeFunction, build_circle_mesh, build_interval_mesh
from solver import (LINEAR_DIFFUSION, OPERATOR_KINDS, ManufacturedSolution, OperatorSpec, ProblemConfig,
                    check_energy, check_mass_conservation, check_newton, coercivity_witness, convergence_study,
                    epsilon_limit, fixed_domain_reference, heat_convergence_configs, monotonicity_witness,
                    project_initial, solve, stability_experiment)
from utils import LinearCongruentialGenerator, sanitize_filename, setup_logging, write_csv

logger = logging.getLogger(__name__)

SECTIONS = ("geometry", "flow", "problem", "run")
SUBCOMMANDS = ("check-flow", "check-lambda", "check-transport", "check-equivalence",
               "solve", "converge", "stability")
LIST_KEYS = ("velocity", "coefficients")


class GeometrySection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shape: Literal["interval", "circle"]
    a: float = 0.0
    b: float = 1.0
    n: int = Field(16, ge=2)
    radius: float = Field(1.0, gt=0.0)


class FlowSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    field: str
    rate: float = 0.1
    velocity: List[float] = Field(default_factory=lambda: [1.0])
    angular_speed: float = 1.0
    skew: float = 0.0
    coefficients: List[float] = Field(default_factory=lambda: [0.0])
    time_factor: float = 0.0
    substeps: int = Field(config.FLOW_SUBSTEPS, ge=1)
    companion: Optional[str] = None
    companion_angular_speed: float = 1.0
    companion_skew: float = 0.0

    @field_validator(*LIST_KEYS, mode="before")
    @classmethod
    def split_list(cls, value):
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("field", "companion")
    @classmethod
    def known_field(cls, value):
        if value is not None and value not in FIELD_CATALOG:
            raise ValueError(f"unknown velocity field '{value}', available: {', '.join(FIELD_CATALOG)}")
        return value


class ProblemSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pivot: Literal[PIVOTS] = "L2"
    operator: Literal[OPERATOR_KINDS] = LINEAR_DIFFUSION
    p: float = Field(2.0, gt=1.0)
    alpha: float = Field(0.0, ge=0.0)
    epsilon: float = Field(config.P_LAPLACE_EPSILON, ge=0.0)
    forcing: Literal["zero", "constant", "manufactured-heat"] = "zero"
    forcing_value: float = 0.0
    initial: Literal["zero", "constant", "sine", "cosine", "hat"] = "sine"
    initial_mode: int = Field(1, ge=0)
    initial_value: float = 1.0
    perturbation: float = Field(1e-2, gt=0.0)
    T: float = Field(1.0, gt=0.0)
    steps: int = Field(50, ge=1)


class RunSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    newton_tol: float = Field(config.NEWTON_TOL, gt=0.0)
    newton_max_iter: int = Field(config.NEWTON_MAX_ITER, ge=1)
    check_time: float = Field(0.3, gt=0.0)
    seed: int = Field(config.DEFAULT_SEED, ge=0)
    trajectories: int = Field(config.TRANSPORT_TRAJECTORIES, ge=1)
    levels: int = Field(4, ge=2)
    base_n: int = Field(8, ge=2)
    base_steps: int = Field(16, ge=1)
    samples: int = Field(config.WITNESS_SAMPLES, ge=1)
    output: Optional[str] = None
    workers: int = Field(1, ge=1)


def _combination_error(key: str, detail: str) -> PydanticCustomError:
    return PydanticCustomError("combination", "{key}: {detail}", {"key": key, "detail": detail})


class Scenario(BaseModel):
    """Validated scenario file."""

    model_config = ConfigDict(extra="forbid")

    geometry: GeometrySection
    flow: FlowSection
    problem: ProblemSection = Field(default_factory=ProblemSection)
    run: RunSection = Field(default_factory=RunSection)
    name: str = "scenario"

    @model_validator(mode="after")
    def check_combinations(self):
        interval = self.geometry.shape == "interval"
        if interval and not self.geometry.a < self.geometry.b:
            raise _combination_error("geometry.b", "interval needs a < b")
        if not interval and self.geometry.n < 3:
            raise _combination_error("geometry.n", "circle needs n >= 3")
        if self.flow.field == "rotating-circle" and interval:
            raise _combination_error("flow.field", "rotating-circle needs a circle geometry")
        if self.flow.field == "user-polynomial" and not interval:
            raise _combination_error("flow.field", "user-polynomial needs an interval geometry")
        if self.flow.field == "translation" and len(self.flow.velocity) != (1 if interval else 2):
            raise _combination_error("flow.velocity", "velocity needs one component per dimension")
        problem = self.problem
        if problem.pivot == HMINUS1 and not interval:
            raise _combination_error("problem.pivot", "Hminus1 needs an interval geometry")
        if problem.pivot == DUAL_FLOW:
            if interval:
                raise _combination_error("problem.pivot", "DualFlowL1 needs a circle geometry")
            if self.flow.companion is None:
                raise _combination_error("problem.pivot", "DualFlowL1 needs flow.companion")
        if problem.operator == LINEAR_DIFFUSION and problem.p != 2.0:
            raise _combination_error("problem.p", "linear-diffusion has p = 2")
        if problem.epsilon == 0.0 and problem.p != 2.0:
            raise _combination_error("problem.epsilon", "epsilon = 0 is only allowed for p = 2")
        if problem.forcing == "manufactured-heat":
            if not interval or self.flow.field != "dilation" or problem.operator != LINEAR_DIFFUSION:
                raise _combination_error("problem.forcing",
                                         "manufactured-heat needs an interval, the dilation field and linear diffusion")
        if self.run.check_time >= problem.T:
            raise _combination_error("run.check_time", "check_time must lie inside (0, T)")
        return self


def _split_lines(text: str) -> Tuple[Dict[str, Dict[str, str]], Dict[Tuple[str, ...], int]]:
    """Read [section] / key = value lines, keeping line numbers."""
    raw: Dict[str, Dict[str, str]] = {}
    positions: Dict[Tuple[str, ...], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", [lineno])
            if (section,) in positions:
                raise ConfigError(f"duplicate section [{section}]", [positions[(section,)], lineno])
            positions[(section,)] = lineno
            raw[section] = {}
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got '{stripped}'", [lineno])
        if section is None:
            raise ConfigError("key outside of any section", [lineno])
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise ConfigError("empty key", [lineno])
        if key in raw[section]:
            raise ConfigError(f"duplicate key {section}.{key}", [positions[(section, key)], lineno])
        raw[section][key] = value
        positions[(section, key)] = lineno
    return raw, positions


def _describe_errors(error: ValidationError, positions: Dict[Tuple[str, ...], int]) -> ConfigError:
    messages, lines = [], []
    for item in error.errors():
        loc = tuple(str(part) for part in item["loc"])
        if item["type"] == "combination":
            loc = tuple(item["ctx"]["key"].split("."))
            message = item["ctx"]["detail"]
        elif item["type"] == "missing":
            message = "missing mandatory " + ("section" if len(loc) == 1 else "key")
        elif item["type"] == "extra_forbidden":
            message = "unknown key"
        else:
            message = item["msg"]
        where = ".".join(loc[:2])
        messages.append(f"{where}: {message}" if where else message)
        line = positions.get(loc[:2]) or positions.get(loc[:1])
        if line is not None:
            lines.append(line)
    return ConfigError("; ".join(messages), sorted(set(lines)))


def parse_config(text: str, name: str = "scenario") -> Scenario:
    """
    Parse and validate a scenario

    Args:
        text: Scenario file contents
        name: Scenario name used for output paths

    Returns:
        Validated Scenario with defaults filled
    """
    raw, positions = _split_lines(text)
    try:
        return Scenario.model_validate({**raw, "name": name})
    except ValidationError as e:
        raise _describe_errors(e, positions) from None


def load_scenario(path: Path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    return parse_config(path.read_text(), sanitize_filename(path.stem))


def _kind(scenario: Scenario) -> str:
    return AMBIENT_1D if scenario.geometry.shape == "interval" else PLANAR_CURVE


def _field_parameters(name: str, flow: FlowSection, companion: bool = False) -> dict:
    if name == "translation":
        return {"velocity": flow.velocity}
    if name in ("dilation", "radial-circle"):
        return {"rate": flow.rate}
    if name == "rotating-circle":
        if companion:
            return {"angular_speed": flow.companion_angular_speed, "skew": flow.companion_skew}
        return {"angular_speed": flow.angular_speed, "skew": flow.skew}
    if name == "user-polynomial":
        return {"coefficients": flow.coefficients, "time_factor": flow.time_factor}
    return {}


def build_mesh(scenario: Scenario, n: Optional[int] = None) -> EvolvingMesh:
    """Reference mesh carried by the scenario's flow over [0, T]."""
    geometry = scenario.geometry
    n = n or geometry.n
    if geometry.shape == "interval":
        reference = build_interval_mesh(geometry.a, geometry.b, n)
    else:
        reference = build_circle_mesh(geometry.radius, n)
    field = make_field(scenario.flow.field, _kind(scenario), **_field_parameters(scenario.flow.field, scenario.flow))
    return EvolvingMesh(reference, FlowMap(field, scenario.problem.T, scenario.flow.substeps))


def build_pivot(scenario: Scenario, mesh: EvolvingMesh) -> PivotSpec:
    if scenario.problem.pivot != DUAL_FLOW:
        pivot = PivotSpec(scenario.problem.pivot)
    else:
        name = scenario.flow.companion
        tangential = make_field(name, _kind(scenario), **_field_parameters(name, scenario.flow, companion=True))
        pivot = PivotSpec(DUAL_FLOW, superpose(mesh.flow.field, tangential))
    validate_pivot(pivot, mesh)
    return pivot


def initial_data(scenario: Scenario) -> Callable[[np.ndarray], np.ndarray]:
    """Initial function of reference points from the [problem] initial keys."""
    problem, geometry = scenario.problem, scenario.geometry
    value, mode = problem.initial_value, problem.initial_mode

    def coordinate(x):
        if geometry.shape == "interval":
            return np.pi * (x[..., 0] - geometry.a) / (geometry.b - geometry.a)
        return np.arctan2(x[..., 1], x[..., 0])

    def hat(x):
        if geometry.shape == "interval":
            centre, width = 0.5 * (geometry.a + geometry.b), 0.25 * (geometry.b - geometry.a)
            return value * np.maximum(0.0, 1.0 - np.abs(x[..., 0] - centre) / width)
        return value * np.maximum(0.0, 1.0 - np.abs(coordinate(x)) / (0.25 * np.pi))

    catalog = {
        "zero": lambda x: np.zeros(x.shape[:-1]),
        "constant": lambda x: np.full(x.shape[:-1], value),
        "sine": lambda x: value * np.sin(mode * coordinate(x)),
        "cosine": lambda x: value * np.cos(mode * coordinate(x)),
        "hat": hat,
    }
    return catalog[problem.initial]


def forcing_function(scenario: Scenario):
    problem = scenario.problem
    if problem.forcing == "zero":
        return None
    if problem.forcing == "constant":
        return lambda t, x: np.full(np.asarray(x).shape[:-1], problem.forcing_value)
    return manufactured_solution(scenario).forcing


def manufactured_solution(scenario: Scenario) -> ManufacturedSolution:
    return ManufacturedSolution(scenario.geometry.a, scenario.geometry.b, scenario.flow.rate)


def build_problem(scenario: Scenario, mesh: Optional[EvolvingMesh] = None) -> ProblemConfig:
    """Solver configuration for the scenario."""
    mesh = mesh or build_mesh(scenario)
    problem, run = scenario.problem, scenario.run
    operator = OperatorSpec(problem.operator, problem.p, problem.alpha, problem.epsilon)
    initial = project_initial(mesh, initial_data(scenario))
    return ProblemConfig(mesh, operator, initial, problem.T, problem.steps, forcing=forcing_function(scenario),
                         newton_tol=run.newton_tol, newton_max_iter=run.newton_max_iter)


@contextmanager
def worker_pool(workers: int):
    """map-like runner; results keep submission order for any worker count."""
    if workers <= 1:
        yield map
        return
    with ThreadPoolExecutor(max_workers=workers) as executor:
        yield executor.map


def _window_times(scenario: Scenario) -> List[float]:
    largest = max(config.FD_STEPS)
    t = scenario.run.check_time
    if t - largest < 0.0 or t + largest > scenario.problem.T:
        raise ConfigError(f"run.check_time {t} leaves no finite-difference window inside (0, T)")
    return [t]


def _time_grid(scenario: Scenario, count: int = 5) -> np.ndarray:
    return np.linspace(0.0, scenario.problem.T, count)


def run_check_flow(scenario: Scenario, runner, out_dir: Path) -> List[CheckReport]:
    mesh = build_mesh(scenario)
    flow, reference = mesh.flow, mesh.reference
    tangents = None if reference.dim == 1 else reference.node_tangents
    times = _window_times(scenario)
    sample = reference.nodes[:: max(1, reference.n_nodes // 3)]
    u = FeFunction.interpolate(reference, initial_data(scenario))
    tasks = [
        lambda: check_jacobian_ode(flow, reference.nodes, times, tangents),
        lambda: check_metric_derivative(flow, sample, times),
        lambda: check_gradient_pullback(mesh, u, _time_grid(scenario)),
        lambda: check_flow_round_trip(flow, sample, _time_grid(scenario)[1:]),
        lambda: check_group_property(flow, sample, _time_grid(scenario)[1:]),
        lambda: check_variational_consistency(flow, sample, scenario.run.check_time),
    ]
    reports = list(runner(lambda task: task(), tasks))
    constant = jacobian_constant(flow, reference.nodes, _time_grid(scenario, 11), tangents)
    write_csv(out_dir / "jacobian_constant.csv", {"C_J": [constant]},
              ["uniform bound with J in [1/C_J, C_J] over the nodes and an 11-point time grid"])
    return reports


def _random_functions(scenario: Scenario, mesh: EvolvingMesh, pivot: PivotSpec):
    rng = LinearCongruentialGenerator(scenario.run.seed)
    size = len(mesh.reference.free_nodes(pivot.space))
    return FeFunction(rng.symmetric(size), pivot.space), FeFunction(rng.symmetric(size), pivot.space)


def run_check_lambda(scenario: Scenario, runner, out_dir: Path) -> List[CheckReport]:
    mesh = build_mesh(scenario)
    pivot = build_pivot(scenario, mesh)
    u0, v0 = _random_functions(scenario, mesh, pivot)
    t = _window_times(scenario)[0]
    reports = [check_lambda_oracle(pivot, mesh, u0, v0, t)]
    if pivot.variant == "L2":
        reports.append(check_mass_derivative_vs_lambda(mesh, t))
    return reports


def run_check_transport(scenario: Scenario, runner, out_dir: Path) -> List[CheckReport]:
    mesh = build_mesh(scenario)
    pivot = build_pivot(scenario, mesh)
    t = _window_times(scenario)[0]
    rng = LinearCongruentialGenerator(scenario.run.seed)
    size = len(mesh.reference.free_nodes(pivot.space))
    pairs = [(random_path(rng, size), random_path(rng, size)) for _ in range(scenario.run.trajectories)]

    def run_pair(indexed):
        k, (u_path, v_path) = indexed
        return check_transport_theorem(pivot, mesh, u_path, v_path, t, name=f"transport-{pivot.variant}-{k}")

    return list(runner(run_pair, enumerate(pairs)))


def run_check_equivalence(scenario: Scenario, runner, out_dir: Path) -> List[CheckReport]:
    mesh = build_mesh(scenario)
    pivot = build_pivot(scenario, mesh)
    times = _time_grid(scenario)
    spaces = (NORM_L2, NORM_H1, NORM_W1R)
    compat = list(runner(lambda space: compatibility_report(mesh, space, times, scenario.run.seed,
                                                            scenario.problem.p), spaces))
    write_csv(out_dir / "compatibility.csv", {
        "space": range(len(spaces)),
        "max_ratio": [c.max_ratio for c in compat],
        "min_ratio": [c.min_ratio for c in compat],
        "C_X": [c.constant for c in compat],
        "C_X_refined": [c.refined_constant for c in compat],
    }, ["norm-equivalence witness", "space: 0 = L2, 1 = H1, 2 = W1r with r = problem.p"])
    reports = [tolerance_report(f"compatibility-{c.space}", [mesh.reference.h],
                                [abs(c.refined_constant - c.constant) / c.constant],
                                config.REFINEMENT_STABILITY, "n")
               for c in compat]
    reports.extend(check_pi_operator(pivot, mesh, times, scenario.run.seed))
    return reports


def run_solve(scenario: Scenario, runner, out_dir: Path) -> List[CheckReport]:
    problem = build_problem(scenario)
    finer = [problem] + [build_problem(scenario.model_copy(update={
        "problem": scenario.problem.model_copy(update={"steps": scenario.problem.steps * factor})}))
        for factor in (2, 4)]
    results = list(runner(solve, finer))
    result = results[0]
    result.to_csv(out_dir / "solve.csv", [f"scenario {scenario.name}"])
    mesh, spec = problem.mesh, problem.operator
    reports = [check_energy(result), check_newton(result, problem.newton_max_iter),
               monotonicity_witness(spec, mesh, 0.0, samples=scenario.run.samples, seed=scenario.run.seed),
               coercivity_witness(spec, mesh, problem.horizon, samples=scenario.run.samples, seed=scenario.run.seed),
               check_weak_derivative_characterization(results, 0.5 * problem.horizon)]
    if mesh.topology != INTERVAL and problem.forcing is None and spec.alpha == 0.0:
        reports.append(check_mass_conservation(result))
    if spec.kind != LINEAR_DIFFUSION:
        reports.append(epsilon_limit(problem, runner=runner))
    return reports


def run_converge(scenario: Scenario, runner, out_dir: Path) -> List[CheckReport]:
    if scenario.problem.forcing != "manufactured-heat":
        raise ConfigError("converge needs problem.forcing = manufactured-heat")
    solution = manufactured_solution(scenario)
    run, horizon = scenario.run, scenario.problem.T
    reports = []
    for refine, band in (("space", config.ORDER_BAND), ("time", config.FIRST_ORDER_BAND)):
        family = heat_convergence_configs(solution, refine, run.levels, run.base_n, run.base_steps, horizon)
        table = convergence_study(family, solution, refine, runner)
        table.to_csv(out_dir / f"eoc_{refine}.csv")
        orders = table.orders
        passed = bool(np.all(np.isfinite(table.errors)) and band[0] <= orders[-1] <= band[1])
        reports.append(CheckReport(f"eoc-{refine}", table.parameters, table.errors, float(orders[-1]),
                                   float("nan"), passed))
    reference = build_mesh(scenario).reference
    zero_flow = FlowMap(make_field("zero", _kind(scenario)), horizon, scenario.flow.substeps)
    zero_problem = build_problem(scenario, EvolvingMesh(reference, zero_flow))
    zero_result, fixed_result = list(runner(solve, [zero_problem, fixed_domain_reference(zero_problem)]))
    difference = float(np.max(np.abs(zero_result.states - fixed_result.states)))
    reports.append(tolerance_report("fixed-domain-reference", [horizon], [difference], 0.0))
    return reports


def run_stability(scenario: Scenario, runner, out_dir: Path) -> List[CheckReport]:
    problem = build_problem(scenario)
    rng = LinearCongruentialGenerator(scenario.run.seed)
    perturbed = problem.initial + scenario.problem.perturbation * rng.symmetric(len(problem.initial))
    table = stability_experiment(problem, problem.initial, perturbed, runner)
    table.to_csv(out_dir / "stability.csv")
    tolerance = 1.05 if table.growth_constant > 0.0 else 1.0 + 1e-12
    return [tolerance_report("stability", table.times, table.ratios, tolerance)]


HANDLERS = {
    "check-flow": run_check_flow,
    "check-lambda": run_check_lambda,
    "check-transport": run_check_transport,
    "check-equivalence": run_check_equivalence,
    "solve": run_solve,
    "converge": run_converge,
    "stability": run_stability,
}


def print_summary(reports: List[CheckReport]) -> None:
    for report in reports:
        color = "green" if report.passed else "red"
        print(colored(report.summary(), color))


def run_subcommand(name: str, scenario: Scenario, out_dir: Optional[Path] = None, workers: int = 1) -> int:
    """
    Run one subcommand, write its CSVs and print the summary lines

    Args:
        name: Subcommand name
        scenario: Validated scenario
        out_dir: Output root (scenario.run.output or config.OUTPUT_DIR when omitted)
        workers: Worker threads for independent runs

    Returns:
        Exit status: 0 when every check passes, 1 otherwise
    """
    if name not in HANDLERS:
        raise ConfigError(f"unknown subcommand '{name}'")
    root = Path(out_dir or scenario.run.output or config.OUTPUT_DIR)
    target = root / sanitize_filename(scenario.name) / name
    target.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running {name} for {scenario.name} into {target}")
    with worker_pool(workers) as runner:
        reports = HANDLERS[name](scenario, runner, target)
    for report in reports:
        report.to_csv(target / f"{sanitize_filename(report.name)}.csv", [f"scenario {scenario.name}"])
    print_summary(reports)
    return config.EXIT_OK if all(report.passed for report in reports) else config.EXIT_CHECK_FAILED


def parse_args(argv=None):
    parser = argparse.ArgumentParser(
        description="Evolving function spaces toolkit - identity checks, solves and studies",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Finite-difference check of the lambda form
  python cli.py check-lambda --config scenarios/lambda_dilation_l2.cfg

  # Mass conservation on the expanding circle
  python cli.py solve --config scenarios/solve_circle_advection.cfg --out output

  # Convergence study with 4 worker threads
  python cli.py converge --config scenarios/converge_heat.cfg --workers 4

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error, 3 numeric failure
        """
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS, help="What to run")
    parser.add_argument("--config", "-c", required=True, type=Path, help="Scenario file")

    run_group = parser.add_argument_group("Run Options")
    run_group.add_argument("--out", "-o", type=Path, default=None,
                           help=f"Output directory (default: run.output or {config.OUTPUT_DIR})")
    run_group.add_argument("--workers", "-w", type=int, default=None,
                           help="Worker threads for independent runs (default: run.workers)")
    run_group.add_argument("--seed", "-s", type=int, default=None,
                           help="Seed of the random trajectories and samples (default: run.seed)")

    parser.add_argument("--log-level", default=config.LOG_LEVEL,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help=f"Logging level (default: {config.LOG_LEVEL})")
    parser.add_argument("--verbose", "-v", action="store_true", help="Print the effective configuration")
    return parser.parse_args(argv)


def print_config(name: str, scenario: Scenario, workers: int):
    """Print the effective configuration"""
    print("\n" + "=" * 50)
    print(f"Scenario: {scenario.name} ({name})")
    print("=" * 50)
    geometry = scenario.geometry
    if geometry.shape == "interval":
        print(f"Geometry:  interval [{geometry.a}, {geometry.b}], n={geometry.n}")
    else:
        print(f"Geometry:  circle R0={geometry.radius}, n={geometry.n}")
    print(f"Field:     {scenario.flow.field} (substeps {scenario.flow.substeps})")
    print(f"Pivot:     {scenario.problem.pivot}")
    print(f"Operator:  {scenario.problem.operator} p={scenario.problem.p} alpha={scenario.problem.alpha}")
    print(f"Time:      T={scenario.problem.T}, steps={scenario.problem.steps}")
    print(f"Seed:      {scenario.run.seed}   Workers: {workers}")
    print("=" * 50 + "\n")


def main(argv=None) -> int:
    args = parse_args(argv)
    setup_logging(args.log_level)
    try:
        scenario = load_scenario(args.config)
        if args.seed is not None:
            scenario = scenario.model_copy(update={"run": scenario.run.model_copy(update={"seed": args.seed})})
        workers = scenario.run.workers if args.workers is None else args.workers
        if workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {workers}")
        if args.verbose:
            print_config(args.subcommand, scenario, workers)
        return run_subcommand(args.subcommand, scenario, args.out, workers)
    except ConfigError as e:
        print(colored(f"Configuration error: {e}", "red"), file=sys.stderr)
        return config.EXIT_CONFIG_ERROR
    except EvolvingSpacesError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(colored(f"Numeric failure ({type(e).__name__}): {e}", "red"), file=sys.stderr)
        return config.EXIT_NUMERIC_FAILURE
    except ValueError as e:
        print(colored(f"Invalid parameters: {e}", "red"), file=sys.stderr)
        return config.EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
