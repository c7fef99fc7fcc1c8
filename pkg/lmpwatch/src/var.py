import os

from lmpwatch.src.utils.py_utils import strtobool

# Load YAML run config before reading env vars
try:
    from lmpwatch.src.config_loader import load_yaml_config
    load_yaml_config()
except Exception:
    pass  # YAML loading is optional; env vars still work

UNDEFINED = object()

_PACKAGE_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))


def to_bool(value):
    return bool(strtobool(str(value)))


def to_optional_float(value):
    if value is None or str(value).strip().lower() in ('', 'none', 'null'):
        return None
    return float(value)


########### DIRECTORIES ###########

CASES_DIR = os.environ.get('LMPWATCH_CASES_DIR', os.path.join(_PACKAGE_DIR, 'cases'))
"""Directory holding the bundled network case files."""

SCENARIOS_DIR = os.environ.get('LMPWATCH_SCENARIOS_DIR', os.path.join(_PACKAGE_DIR, 'scenarios'))
"""Directory holding the bundled scenario files."""

OUTPUTS_DIR = os.environ.get('LMPWATCH_OUTPUTS_DIR',
                             os.path.abspath(os.path.join(_PACKAGE_DIR, '..', 'outputs')))
"""Default output directory for command results and log files."""

CACHE_DIR = os.environ.get('LMPWATCH_CACHE_DIR', os.path.join(OUTPUTS_DIR, 'atlas_cache'))
"""Default directory of the critical-region atlas cache."""

########### LOGGING ###########

LOG_LEVEL = os.environ.get('LMPWATCH_LOG_LEVEL', 'INFO')
"""Verbosity level of the logger used."""

LOG_TO_FILE = to_bool(os.environ.get('LMPWATCH_LOG_TO_FILE', True))
"""Whether logs should also be saved to a file in the output directory."""

LOG_FORMAT = os.environ.get('LMPWATCH_LOG_FORMAT', '%(asctime)s|%(levelname)-.1s| %(message)s')
"""Log format that is used by lmpwatch."""

########### MARKET MODEL ###########

RECOMPUTE_PTDF = to_bool(os.environ.get('LMPWATCH_RECOMPUTE_PTDF', False))
"""Recompute the PTDF on the reduced topology for line outages instead of only deleting the faulted line's rows."""

SHED_LINEAR_COST = to_optional_float(os.environ.get('LMPWATCH_SHED_LINEAR_COST', None))
"""Overrides the case file's linear load-shedding cost ($/MWh) for every load."""

SHED_QUADRATIC_COST = to_optional_float(os.environ.get('LMPWATCH_SHED_QUADRATIC_COST', None))
"""Overrides the case file's quadratic load-shedding cost ($/MW^2h) for every load."""

########### QP SOLVER ###########

ACTIVE_TOL = float(os.environ.get('LMPWATCH_ACTIVE_TOL', 1e-7))
"""Relative slack below which a constraint row is classified active."""

DUAL_TOL = float(os.environ.get('LMPWATCH_DUAL_TOL', 1e-9))
"""Tolerance on dual nonnegativity."""

STATIONARITY_TOL = float(os.environ.get('LMPWATCH_STATIONARITY_TOL', 1e-6))
"""Relative bound on the stationarity residual of a returned solution."""

MAX_ITERATIONS = int(os.environ.get('LMPWATCH_MAX_ITERATIONS', 500))
"""Maximum number of active-set iterations per solve."""

########### CRITICAL REGIONS ###########

REGION_TOL = float(os.environ.get('LMPWATCH_REGION_TOL', 1e-8))
"""Tolerance of the region membership test, shared by facet tie-breaking."""

GRID_POINTS = int(os.environ.get('LMPWATCH_GRID_POINTS', 101))
"""Grid points per axis for two-dimensional atlas sampling."""

RANDOM_SAMPLES = int(os.environ.get('LMPWATCH_RANDOM_SAMPLES', 10000))
"""Uniform random atlas samples for perturbations of more than two dimensions."""

QUARANTINE = to_bool(os.environ.get('LMPWATCH_QUARANTINE', False))
"""Whether atlas construction continues past degenerate samples, quarantining them."""

ATLAS_WORKERS = int(os.environ.get('LMPWATCH_ATLAS_WORKERS', 1))
"""Worker processes for atlas construction. The merged atlas depends on this number."""

########### DENSITIES ###########

EPSILON_SCALE = float(os.environ.get('LMPWATCH_EPSILON_SCALE', 1e-6))
"""Covariance regularisation, relative to trace/dimension."""

BOUNDARY_TOL = float(os.environ.get('LMPWATCH_BOUNDARY_TOL', 1e-6))
"""MW margin a perturbation must keep from its box to be selected."""

COVARIANCE_MODE = os.environ.get('LMPWATCH_COVARIANCE_MODE', 'regularized')
"""Either 'regularized' (epsilon * I) or 'support' (pseudo-inverse on the covariance support)."""

CHANNEL = os.environ.get('LMPWATCH_CHANNEL', 'lmp')
"""Observed channel of the detector: 'lmp' or 'dispatch'."""

########### SCENARIO AND BENCHMARK ###########

SEED = os.environ.get('LMPWATCH_SEED', None)
SEED = None if SEED in (None, '') else int(SEED)
"""Master seed replacing the scenario file's seed. Trajectory i of a benchmark uses seed + i."""

TRAJECTORIES = int(os.environ.get('LMPWATCH_TRAJECTORIES', 1000))
"""Monte Carlo trajectories per threshold."""

FAST_TRAJECTORIES = int(os.environ.get('LMPWATCH_FAST_TRAJECTORIES', 200))
"""Monte Carlo trajectories per threshold in fast mode."""

T_MAX = int(os.environ.get('LMPWATCH_T_MAX', 5000))
"""Horizon of nominal trajectories used for ARL calibration."""

ETAS = os.environ.get('LMPWATCH_ETAS', '10,20,30,40,50,60')
"""Comma separated detection thresholds swept by calibrate and bench."""

WORKERS = int(os.environ.get('LMPWATCH_WORKERS', 0))
"""Worker processes for Monte Carlo trajectories. 0 uses the number of physical cores."""

all_variables = {key: value for key, value in vars().items() if (not key.startswith("_") and key.isupper() and key != 'UNDEFINED')}
