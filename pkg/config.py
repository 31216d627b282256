"""
Configuration settings for the evolving-domain toolkit
"""
import os
from pathlib import Path

# Base paths
BASE_DIR = Path(__file__).parent
SCENARIO_DIR = BASE_DIR / "scenarios"
OUTPUT_DIR = Path(os.getenv("EVOLVING_OUTPUT_DIR", str(BASE_DIR / "output")))

# Flow integration
FLOW_SUBSTEPS = int(os.getenv("EVOLVING_FLOW_SUBSTEPS", "64"))  # RK4 steps per unit time
FLOW_TOLERANCE = 1e-8
INVERSION_REFINEMENTS = 3
TIME_SLACK = 1e-12

# Geometry / assembly
GAUSS_POINTS = 3
MIN_ELEMENT_LENGTH = 1e-14

# Finite difference oracles
FD_STEPS = (1e-2, 5e-3, 2.5e-3)
ORDER_BAND = (1.8, 2.2)
FIRST_ORDER_BAND = (0.8, 1.2)
RESIDUAL_FLOOR = 1e-8
EXACT_TOLERANCE = 1e-10

# Pivot checks
NORMAL_AGREEMENT_TOLERANCE = 1e-10
SINGULAR_CONDITION = 1e12

# Nonlinear solver
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 25
NEWTON_MAX_HALVINGS = 8
NEWTON_TAIL_ORDER = 1.5  # r_m+1 <= C r_m^q on the final iterates
NEWTON_TAIL_CONSTANT = 10.0
NEWTON_TAIL_WINDOW = (1e-13, 1e-4)  # residual range where the tail is measured
P_LAPLACE_EPSILON = 1e-8

# Randomized trajectories (64-bit LCG, MMIX constants)
LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407
DEFAULT_SEED = int(os.getenv("EVOLVING_SEED", "20240611"))
TRANSPORT_TRAJECTORIES = 5
WITNESS_SAMPLES = 100

# Compatibility report
COMPATIBILITY_RANDOM_VECTORS = 8
REFINEMENT_STABILITY = 0.05

# CSV output
CSV_FORMAT = "%.17g"
CSV_DELIMITER = ","

# Exit codes
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERIC_FAILURE = 3

# Logging
LOG_LEVEL = os.getenv("EVOLVING_LOG_LEVEL", "WARNING")
