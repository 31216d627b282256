"""
Example usage of the evolving-spaces components.
"""

import numpy as np

from calculus_checks import check_lambda_oracle, check_jacobian_ode
from evolving_spaces import L2, PivotSpec, lambda_hat, pi_matrix, transported_pairing
from flowmap import AMBIENT_1D, FlowMap, make_field
from mesh import EvolvingMesh, FeFunction, build_interval_mesh
from solver import (ManufacturedSolution, convergence_study, heat_convergence_configs, solve,
                    manufactured_heat, check_mass_conservation)


def example_transported_pairing():
    """Pairing of two transported functions and its time derivative."""
    print("=== Transported Pairing Example ===\n")

    flow = FlowMap(make_field("dilation", AMBIENT_1D, rate=0.5), horizon=1.0)
    mesh = EvolvingMesh(build_interval_mesh(0.0, 1.0, 16), flow)
    pivot = PivotSpec(L2)

    u0 = FeFunction.interpolate(mesh.reference, lambda x: np.sin(np.pi * x[..., 0]))
    v0 = FeFunction.interpolate(mesh.reference, lambda x: 1.0 + x[..., 0])
    for t in (0.0, 0.5, 1.0):
        print(f"t={t:.1f}: pairing {transported_pairing(pivot, mesh, t, u0, v0):.6f}, "
              f"lambda {lambda_hat(pivot, mesh, t, u0, v0):.6f}")

    print("\nL2 Pi operator at t=1 (dilation gives e^{rate t} on the diagonal):")
    print(f"   - diagonal {np.diag(pi_matrix(pivot, mesh, 1.0).forward)[:3]}")

    report = check_lambda_oracle(pivot, mesh, u0, v0, 0.3)
    print(f"\n{report.summary()} (order {report.order:.2f})")
    print(check_jacobian_ode(flow, mesh.reference.nodes, [0.3]).summary())


def example_solver():
    """Manufactured heat solution and its convergence orders."""
    print("\n=== Solver Example ===\n")

    solution = ManufacturedSolution(rate=0.5)
    result = solve(manufactured_heat(solution, n=32, steps=64, horizon=0.5))
    print(f"Final L2 norm^2: {result.h_norm_sq[-1]:.6e}")
    print(f"Max Newton iterations: {result.newton_iters.max()}")

    table = convergence_study(heat_convergence_configs(solution, "space", levels=3), solution, "space")
    print(f"Spatial EOC: {np.array2string(table.orders, precision=2)}")


def example_conservation():
    """Source-free diffusion on the expanding circle."""
    print("\n=== Conservation Example ===\n")

    from cli import build_problem, parse_config

    scenario = parse_config("""
[geometry]
shape = circle
n = 24

[flow]
field = radial-circle
rate = 0.2

[problem]
initial = cosine
initial_mode = 2
steps = 100
""", "conservation")
    result = solve(build_problem(scenario))
    print(f"Max mass drift: {result.mass_drift.max():.3e}")
    print(check_mass_conservation(result).summary())


if __name__ == "__main__":
    try:
        example_transported_pairing()
        example_solver()
        example_conservation()
    except Exception as e:
        print(f"Error running examples: {str(e)}")
