import argparse
import importlib
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional


def add_to_path():
    _this_filedir = os.path.abspath(os.path.dirname(__file__))
    sys.path.insert(0, str(Path(_this_filedir).parent))


add_to_path()

import yaml

import lmpwatch
from lmpwatch.config import Config
from lmpwatch.src import logs, var
from lmpwatch.src.commands import COMMANDS
from lmpwatch.src.config_loader import load_yaml_config
from lmpwatch.src.errors import LmpwatchError
from lmpwatch.src.handlers.inputs_handler import InputsHandler
from lmpwatch.src.run_config import RunConfig
from lmpwatch.src.utils.py_utils import exception_to_string

_LOGGER = logging.getLogger('lmpwatch')


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument('--case', help='Network case file or bundled case name. Defaults to the scenario\'s case.')
    parser.add_argument('--scenario', help='Scenario file or bundled scenario name.')
    parser.add_argument('--hypotheses',
                        help='Outage hypotheses, e.g. "line:1-5,line:3,gen:2". Defaults to every line whose '
                             'removal keeps the network connected.')
    parser.add_argument('--seed', type=int, help='Master seed replacing the scenario\'s seed.')
    parser.add_argument('--out', dest='out_dir', help='Output directory.')
    parser.add_argument('--cache-dir', dest='cache_dir', help='Region atlas cache directory.')
    parser.add_argument('--config', help='YAML config file. Environment variables still take precedence.')
    parser.add_argument('-v', '--verbose', action='store_true', help='Verbose output.')


def _add_monte_carlo(parser: argparse.ArgumentParser):
    parser.add_argument('--trajectories', type=int, help='Trajectories per threshold.')
    parser.add_argument('--fast', action='store_true', default=None, help='Use the reduced trajectory count.')
    parser.add_argument('--etas', help='Comma separated thresholds to sweep.')
    parser.add_argument('--t-max', dest='t_max', type=int, help='Horizon of nominal calibration trajectories.')
    parser.add_argument('--workers', type=int, help='Worker processes, 0 for the number of physical cores.')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='lmpwatch',
                                     description='Detect and identify line outages from streams of market prices.')
    parser.add_argument('--version', action='version', version=f'lmpwatch {lmpwatch.__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    regions = sub.add_parser('regions', help='Enumerate and cache critical regions of every market structure.')
    _add_common(regions)

    simulate = sub.add_parser('simulate', help='Simulate a scenario and write its price stream.')
    _add_common(simulate)

    detect = sub.add_parser('detect', help='Run the outage detector over a recorded price stream.')
    _add_common(detect)
    detect.add_argument('--stream', required=True, help='Stream CSV written by simulate or by a market feed.')
    detect.add_argument('--eta', type=float, help='Detection threshold.')
    detect.add_argument('--target-arl', dest='target_arl', type=float,
                        help='Pick the threshold whose estimated ARL reaches this target.')
    _add_monte_carlo(detect)

    calibrate = sub.add_parser('calibrate', help='Estimate the average run length to false alarm per threshold.')
    _add_common(calibrate)
    calibrate.add_argument('--target-arl', dest='target_arl', type=float, help='Also pick a threshold for this ARL.')
    _add_monte_carlo(calibrate)

    bench = sub.add_parser('bench', help='Calibrate and evaluate the detector on the scenario\'s outage.')
    _add_common(bench)
    _add_monte_carlo(bench)
    return parser


_FLAGS = ('case', 'scenario', 'hypotheses', 'seed', 'out_dir', 'cache_dir', 'stream', 'eta', 'target_arl',
          'trajectories', 'fast', 'etas', 't_max', 'workers')


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    global var
    if args.config:
        try:
            if not os.path.isfile(args.config):
                raise FileNotFoundError('no such file')
            load_yaml_config(args.config)
        except (OSError, yaml.YAMLError) as e:
            print(f'Cannot read config file {args.config}: {e}', file=sys.stderr)
            return 2
        var = importlib.reload(var)

    cnf = Config(var.all_variables).replace(LOG_LEVEL='DEBUG' if args.verbose else None)
    logs.initialize(
        log_format=cnf.LOG_FORMAT,
        log_level=cnf.LOG_LEVEL,
        log_to_file=cnf.LOG_TO_FILE,
        outputs_dir=cnf.OUTPUTS_DIR,
    )

    _LOGGER.info(f'############ Starting lmpwatch version {lmpwatch.__version__}: {args.command} ############')

    flags = {name: getattr(args, name, None) for name in _FLAGS}
    if flags['out_dir'] is not None and flags['cache_dir'] is None:
        flags['cache_dir'] = os.path.join(flags['out_dir'], 'atlas_cache')

    inputs_handler = InputsHandler(
        cases_dir=cnf.CASES_DIR,
        scenarios_dir=cnf.SCENARIOS_DIR,
        shed_linear_cost=cnf.SHED_LINEAR_COST,
        shed_quadratic_cost=cnf.SHED_QUADRATIC_COST,
    )

    try:
        run_config = RunConfig.from_config(cnf, **flags)
        _LOGGER.debug(f'Configuration:\n{yaml.safe_dump(run_config.to_dict(), sort_keys=False)}')
        COMMANDS[args.command](run_config, inputs_handler)
    except LmpwatchError as e:
        _LOGGER.error(f'{e.__class__.__name__}: {e}')
        _LOGGER.debug(exception_to_string(e))
        return e.exit_code
    except OSError as e:
        _LOGGER.error(f'I/O failure: {e}')
        return 4
    except KeyboardInterrupt:
        _LOGGER.warning('Interrupted')
        return 130

    _LOGGER.info(f'############ lmpwatch {args.command} finished ############')
    return 0


if __name__ == '__main__':
    sys.exit(main())
