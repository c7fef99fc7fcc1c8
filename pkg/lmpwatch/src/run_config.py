from dataclasses import asdict, dataclass
from typing import List, Optional

from lmpwatch.config import Config
from lmpwatch.src.errors import InputError
from lmpwatch.src.utils.py_utils import parse_float_list

DEFAULT_SCENARIO = 'pjm_line15'


def _etas(value) -> tuple:
    try:
        return tuple(parse_float_list(value))
    except (TypeError, ValueError):
        raise InputError(f'thresholds must be comma separated numbers, got {value!r}')


@dataclass(frozen=True)
class RunConfig:
    case: Optional[str]
    scenario: str
    cache_dir: str
    out_dir: str
    hypotheses: Optional[str] = None
    eta: Optional[float] = None
    target_arl: Optional[float] = None
    stream: Optional[str] = None
    seed: Optional[int] = None
    trajectories: int = 1000
    fast: bool = False
    etas: tuple = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0)
    t_max: int = 5000
    workers: int = 0
    atlas_workers: int = 1
    verify_kkt: bool = True

    active_tol: float = 1e-7
    dual_tol: float = 1e-9
    stationarity_tol: float = 1e-6
    max_iterations: int = 500
    region_tol: float = 1e-8
    epsilon_scale: float = 1e-6
    boundary_tol: float = 1e-6
    covariance_mode: str = 'regularized'
    channel: str = 'lmp'
    recompute_ptdf: bool = False
    grid_points: int = 101
    random_samples: int = 10000
    quarantine: bool = False

    @classmethod
    def from_config(cls, cnf: Config, **flags) -> 'RunConfig':
        """Defaults from the LMPWATCH_* variables, overridden by command line flags that are set."""
        values = dict(
            case=None,
            scenario=DEFAULT_SCENARIO,
            cache_dir=cnf.CACHE_DIR,
            out_dir=cnf.OUTPUTS_DIR,
            seed=cnf.SEED,
            trajectories=cnf.TRAJECTORIES,
            etas=_etas(cnf.ETAS),
            t_max=cnf.T_MAX,
            workers=cnf.WORKERS,
            atlas_workers=cnf.ATLAS_WORKERS,
            active_tol=cnf.ACTIVE_TOL,
            dual_tol=cnf.DUAL_TOL,
            stationarity_tol=cnf.STATIONARITY_TOL,
            max_iterations=cnf.MAX_ITERATIONS,
            region_tol=cnf.REGION_TOL,
            epsilon_scale=cnf.EPSILON_SCALE,
            boundary_tol=cnf.BOUNDARY_TOL,
            covariance_mode=cnf.COVARIANCE_MODE,
            channel=cnf.CHANNEL,
            recompute_ptdf=cnf.RECOMPUTE_PTDF,
            grid_points=cnf.GRID_POINTS,
            random_samples=cnf.RANDOM_SAMPLES,
            quarantine=cnf.QUARANTINE,
        )
        fast_trajectories = cnf.FAST_TRAJECTORIES
        if flags.get('etas') is not None:
            flags['etas'] = _etas(flags['etas'])
        values.update({k: v for k, v in flags.items() if v is not None})
        if values.get('fast') and flags.get('trajectories') is None:
            values['trajectories'] = fast_trajectories
        return cls(**values)

    @property
    def sorted_etas(self) -> List[float]:
        return sorted(self.etas)

    def validate(self, command: str):
        if self.trajectories < 1:
            raise InputError(f'--trajectories must be at least 1, got {self.trajectories}')
        if self.t_max < 2:
            raise InputError(f'--t-max must be at least 2, got {self.t_max}')
        if not self.etas or any(eta <= 0 for eta in self.etas):
            raise InputError(f'thresholds must be positive, got {list(self.etas)}')
        if self.covariance_mode not in ('regularized', 'support'):
            raise InputError(f'unknown covariance mode "{self.covariance_mode}"')
        if self.channel not in ('lmp', 'dispatch'):
            raise InputError(f'unknown channel "{self.channel}"')
        if command == 'detect':
            if (self.eta is None) == (self.target_arl is None):
                raise InputError('detect needs exactly one of --eta and --target-arl')
            if not self.stream:
                raise InputError('detect needs --stream')
        if self.eta is not None and self.eta <= 0:
            raise InputError(f'--eta must be positive, got {self.eta}')
        if self.target_arl is not None and self.target_arl <= 0:
            raise InputError(f'--target-arl must be positive, got {self.target_arl}')

    def to_dict(self) -> dict:
        data = asdict(self)
        data['etas'] = list(self.etas)
        return data
