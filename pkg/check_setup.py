#!/usr/bin/env python3
"""
Setup check: imports, bundled scenarios and a small smoke solve
"""

import sys
from termcolor import colored

import config


def test_imports():
    """Test if all modules can be imported"""
    print("Testing module imports...")
    try:
        import flowmap
        import mesh
        import evolving_spaces
        import calculus_checks
        import solver
        import cli
        import utils
        print(colored("✓ All modules imported successfully", "green"))
        return True
    except ImportError as e:
        print(colored(f"✗ Import error: {e}", "red"))
        return False


def test_scenarios():
    """Parse every bundled scenario"""
    print("\nParsing bundled scenarios...")
    from cli import load_scenario
    from exceptions import ConfigError

    paths = sorted(config.SCENARIO_DIR.glob("*.cfg"))
    if not paths:
        print(colored(f"✗ No scenarios found in {config.SCENARIO_DIR}", "red"))
        return False
    all_ok = True
    for path in paths:
        try:
            load_scenario(path)
            print(colored(f"✓ {path.name}", "green"))
        except ConfigError as e:
            print(colored(f"✗ {path.name}: {e}", "red"))
            all_ok = False
    return all_ok


def test_smoke_solve():
    """Heat on a dilating interval for a few steps"""
    print("\nRunning smoke solve...")
    from solver import ManufacturedSolution, manufactured_heat, solve

    try:
        result = solve(manufactured_heat(ManufacturedSolution(), n=8, steps=4, horizon=0.1))
        print(colored(f"✓ Solve finished, final L2 norm^2 {result.h_norm_sq[-1]:.6e}", "green"))
        return True
    except Exception as e:
        print(colored(f"✗ Smoke solve failed: {e}", "red"))
        return False


def test_directories():
    """Check the output directory"""
    print("\nChecking directories...")
    if config.OUTPUT_DIR.exists():
        print(colored(f"✓ Output directory '{config.OUTPUT_DIR}' exists", "green"))
    else:
        print(colored(f"⚠ Output directory '{config.OUTPUT_DIR}' will be created on first run", "yellow"))
    return True


def main():
    """Run all checks"""
    print(colored("=== Evolving Spaces Setup Check ===\n", "blue", attrs=['bold']))

    all_tests_passed = True
    for check in (test_imports, test_scenarios, test_smoke_solve, test_directories):
        if not check():
            all_tests_passed = False

    print("\n" + "=" * 40)
    if all_tests_passed:
        print(colored("✓ All checks passed! You can run: ./run.sh", "green", attrs=['bold']))
    else:
        print(colored("✗ Some checks failed. Please fix the issues above.", "red", attrs=['bold']))
        sys.exit(1)


if __name__ == "__main__":
    main()
