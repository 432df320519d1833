LAB_VERSION = "0.3.0"

LOG_FILE = "session_data/lab_actions.log"
OUTPUT_DIR = "results/"
CONFIG_DIR = "configs/"

# Dense assembly guard (cells)
MAX_CELLS = 20000

# Verdicts: a gap counts only when it exceeds this multiple of its error estimate
SIGNIFICANCE_FACTOR = 3.0
SIGNIFICANCE_RULE = (
    "significance: a gap is confirmed only when it exceeds "
    f"{SIGNIFICANCE_FACTOR:g} x its two-resolution (or Monte Carlo) error estimate"
)

SIMPLICITY_TOLERANCE = 1e-6
NONNEGATIVITY_TOLERANCE = 1e-6
RIESZ_CHECK_TOLERANCE = 1e-9
MIN_MC_SAMPLES = 1000

# Thread count override for the CLI
THREADS_ENV_VAR = "RIESZLAB_THREADS"
DEFAULT_THREADS = 1

import os

# Create directories if they don't exist
os.makedirs(os.path.dirname(LOG_FILE), exist_ok=True)
