"""Load a YAML run config and inject values into os.environ as LMPWATCH_* variables.

The YAML structure uses nested keys that map to flat LMPWATCH_ environment variables:

    tolerances:
      activeSet: 1.0e-7
      region: 1.0e-8
    bench:
      trajectories: 200
      etas: [10, 20, 30]

maps to:
    LMPWATCH_ACTIVE_TOL=1e-07
    LMPWATCH_REGION_TOL=1e-08
    LMPWATCH_TRAJECTORIES=200
    LMPWATCH_ETAS=10,20,30

The same keys nested under a top-level 'lmpwatch' section are accepted too.
"""

import logging
import os
from pathlib import Path
from typing import Optional

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)

# Only keys listed here are recognized.
_BASE_YAML_TO_ENV = {
    # directories
    'dirs.cases': 'LMPWATCH_CASES_DIR',
    'dirs.scenarios': 'LMPWATCH_SCENARIOS_DIR',
    'dirs.outputs': 'LMPWATCH_OUTPUTS_DIR',
    'dirs.cache': 'LMPWATCH_CACHE_DIR',

    # logging
    'logging.level': 'LMPWATCH_LOG_LEVEL',
    'logging.toFile': 'LMPWATCH_LOG_TO_FILE',
    'logging.format': 'LMPWATCH_LOG_FORMAT',

    # market model
    'market.recomputePtdf': 'LMPWATCH_RECOMPUTE_PTDF',
    'market.shedLinearCost': 'LMPWATCH_SHED_LINEAR_COST',
    'market.shedQuadraticCost': 'LMPWATCH_SHED_QUADRATIC_COST',

    # tolerances
    'tolerances.activeSet': 'LMPWATCH_ACTIVE_TOL',
    'tolerances.dual': 'LMPWATCH_DUAL_TOL',
    'tolerances.stationarity': 'LMPWATCH_STATIONARITY_TOL',
    'tolerances.region': 'LMPWATCH_REGION_TOL',
    'tolerances.epsilonScale': 'LMPWATCH_EPSILON_SCALE',
    'tolerances.boundary': 'LMPWATCH_BOUNDARY_TOL',
    'solver.maxIterations': 'LMPWATCH_MAX_ITERATIONS',

    # atlas
    'atlas.gridPoints': 'LMPWATCH_GRID_POINTS',
    'atlas.randomSamples': 'LMPWATCH_RANDOM_SAMPLES',
    'atlas.quarantine': 'LMPWATCH_QUARANTINE',
    'atlas.workers': 'LMPWATCH_ATLAS_WORKERS',

    # detector
    'detector.covarianceMode': 'LMPWATCH_COVARIANCE_MODE',
    'detector.channel': 'LMPWATCH_CHANNEL',

    # bench
    'bench.seed': 'LMPWATCH_SEED',
    'bench.trajectories': 'LMPWATCH_TRAJECTORIES',
    'bench.fastTrajectories': 'LMPWATCH_FAST_TRAJECTORIES',
    'bench.tMax': 'LMPWATCH_T_MAX',
    'bench.etas': 'LMPWATCH_ETAS',
    'bench.workers': 'LMPWATCH_WORKERS',
}

_YAML_TO_ENV = {}
for _path, _env in _BASE_YAML_TO_ENV.items():
    _YAML_TO_ENV[_path] = _env
    _YAML_TO_ENV[f'lmpwatch.{_path}'] = _env


def _flatten(d: dict, parent_key: str = '') -> dict:
    """Flatten a nested dict with dot-separated keys."""
    items = {}
    for k, v in d.items():
        new_key = f'{parent_key}.{k}' if parent_key else k
        if isinstance(v, dict):
            items.update(_flatten(v, new_key))
        else:
            items[new_key] = v
    return items


def _to_env_value(value) -> str:
    if isinstance(value, (list, tuple)):
        return ','.join(str(v) for v in value)
    return str(value)


def load_yaml_config(config_path: Optional[str] = None) -> int:
    """Load a YAML run config file and set corresponding LMPWATCH_* env vars.

    Environment variables already set take precedence (not overwritten).

    Args:
        config_path: Path to the YAML file. If None, LMPWATCH_CONFIG_FILE or ./lmpwatch.yaml is tried.

    Returns:
        Number of variables set.
    """
    try:
        import yaml
    except ImportError:
        _LOGGER.debug('PyYAML not installed, skipping YAML config loading')
        return 0

    if config_path is None:
        config_path = os.environ.get('LMPWATCH_CONFIG_FILE')

    if config_path is None:
        candidate = os.path.join(os.getcwd(), 'lmpwatch.yaml')
        if os.path.isfile(candidate):
            config_path = candidate

    if config_path is None or not os.path.isfile(config_path):
        _LOGGER.debug('No YAML config file found')
        return 0

    _LOGGER.info(f'Loading config from {config_path}')

    with open(config_path, 'r') as f:
        data = yaml.safe_load(f)

    if not data or not isinstance(data, dict):
        _LOGGER.warning(f'Config file {config_path} is empty or invalid')
        return 0

    flat = _flatten(data)
    count = 0

    for yaml_key in flat:
        if yaml_key not in _YAML_TO_ENV:
            _LOGGER.debug(f'Ignoring unknown config key "{yaml_key}"')

    for yaml_key, env_key in _YAML_TO_ENV.items():
        if yaml_key in flat and flat[yaml_key] is not None:
            if env_key not in os.environ:
                os.environ[env_key] = _to_env_value(flat[yaml_key])
                count += 1

    _LOGGER.info(f'Loaded {count} config values from YAML')
    return count
