import os
from pathlib import Path

# Project root directory (one level above src/)
PROJECT_ROOT = Path(os.path.abspath(__file__)).parents[1]

DEFAULT_OUTPUT_DIR = str(PROJECT_ROOT / "results")
DEFAULT_LOG_DIR = str(PROJECT_ROOT / "logs")
CONFIG_DIR = str(PROJECT_ROOT / "config")
TEMPLATE_PATH = PROJECT_ROOT / "assets" / "html_template.txt"

OUTPUT_ENV_VAR = "TUBESYNTH_OUT"

# Tube defaults
DEFAULT_REACH_TIME = 10.0
DEFAULT_WIDTH_POLICY = 0.9
DEFAULT_DELTA_RATIO = 0.05
DEFAULT_DT_RATIO = 1e-4
DEFAULT_MARGIN = 1e-6
DEFAULT_MAX_ROUNDS = 8
DEFAULT_SWITCH_CORE = 0.5

# Controller defaults
DEFAULT_KAPPA = 1.0
DEFAULT_Q_RATIO = 0.05
DEFAULT_Q_MIN = 1e-3
DEFAULT_MU = 2.0
DEFAULT_RHO = 0.2
DEFAULT_RHO_ABS = 1e-3

# Simulation defaults
DEFAULT_SIM_DT = 1e-3
DEFAULT_DISTURBANCE_AMPLITUDE = 0.05

# Exit codes
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_FRAGMENT = 2
EXIT_SYNTHESIS = 3
EXIT_VIOLATION = 4


def get_config_path(filename):
    """Get absolute path to a bundled config file"""
    return os.path.join(CONFIG_DIR, filename)
