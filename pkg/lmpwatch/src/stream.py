"""Synthetic market data streams and CSV replay.

A scenario drives the demand perturbations of some loads by a seeded Gaussian
random walk saturated at the perturbation box, and clears the market at every
step. Steps up to the change point use the nominal market, later steps the
post-outage one.
"""
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from lmpwatch.src.densities import NoiseModel
from lmpwatch.src.errors import InputError, LmpwatchError, ScenarioError, StreamParseError
from lmpwatch.src.mpp import RegionAtlas
from lmpwatch.src.netmodel import NetworkCase, OutageSpec, apply_outage, assemble_qp
from lmpwatch.src.qpsolve import QpSolver, lmp
from lmpwatch.src.utils.py_utils import array_digest

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)

_VERIFY_PRIMAL_TOL = 1e-6
_VERIFY_LMP_TOL = 1e-5


@dataclass(frozen=True)
class ScenarioSpec:
    case_ref: str
    perturbed_loads: Tuple[int, ...]
    sigma: float
    """Standard deviation of one random-walk step, MW."""
    horizon: int
    outage: Optional[OutageSpec] = None
    change_point: Optional[int] = None
    """Last step of the nominal market; steps after it use the post-outage market."""
    seed: int = 0
    xi_bounds: Optional[Tuple[float, ...]] = None
    """Box half-widths of the perturbed loads, overriding the case file and the default."""
    name: str = 'scenario'
    box_horizon: Optional[int] = None
    """Horizon the default box half-width is sized for, when it differs from horizon."""

    def __post_init__(self):
        object.__setattr__(self, 'perturbed_loads', tuple(int(d) for d in self.perturbed_loads))
        if self.xi_bounds is not None:
            object.__setattr__(self, 'xi_bounds', tuple(float(b) for b in self.xi_bounds))
            if len(self.xi_bounds) != len(self.perturbed_loads):
                raise InputError(f'{self.name}: one box half-width per perturbed load is needed')
        if self.horizon < 1:
            raise InputError(f'{self.name}: horizon must be positive, got {self.horizon}')
        if self.sigma < 0:
            raise InputError(f'{self.name}: sigma must be non-negative, got {self.sigma}')
        if len(set(self.perturbed_loads)) != len(self.perturbed_loads):
            raise InputError(f'{self.name}: perturbed loads repeat: {self.perturbed_loads}')
        if self.outage is not None:
            if self.change_point is None or not 1 <= self.change_point <= self.horizon:
                raise InputError(f'{self.name}: change point must satisfy 1 <= T <= {self.horizon}, '
                                 f'got {self.change_point}')

    def with_seed(self, seed: int) -> 'ScenarioSpec':
        return replace(self, seed=seed)

    def without_outage(self, horizon: Optional[int] = None) -> 'ScenarioSpec':
        """Nominal copy, possibly longer; the box stays the one of this scenario."""
        return replace(self, horizon=horizon or self.horizon, outage=None, change_point=None,
                       box_horizon=self.box_horizon or self.horizon)

    def validate(self, case: NetworkCase):
        for d in self.perturbed_loads:
            if not 0 <= d < case.n_loads:
                raise InputError(f'{self.name}: unknown load {d} in case {case.name}')
        if self.outage is not None:
            self.outage.validate(case)

    def box(self, case: NetworkCase) -> Tuple[np.ndarray, np.ndarray]:
        """Perturbation box; unperturbed loads are pinned at 0 and demand never goes negative."""
        self.validate(case)
        lower, upper = np.zeros(case.n_loads), np.zeros(case.n_loads)
        default = 4.0 * self.sigma * np.sqrt(self.box_horizon or self.horizon) / 10.0
        for j, d in enumerate(self.perturbed_loads):
            if self.xi_bounds is not None:
                half = self.xi_bounds[j]
            elif case.loads[d].xi_bound is not None:
                half = case.loads[d].xi_bound
            else:
                half = default
            upper[d] = half
            lower[d] = max(-half, -case.loads[d].demand)
        return lower, upper

    def noise_model(self, case: NetworkCase, boundary_tol: float = 1e-6) -> NoiseModel:
        lower, upper = self.box(case)
        variance = np.zeros(case.n_loads)
        variance[list(self.perturbed_loads)] = self.sigma ** 2
        return NoiseModel(Sigma=np.diag(variance), lower=lower, upper=upper, boundary_tol=boundary_tol)

    def digest(self) -> str:
        return array_digest([], extra=[repr(self)])[:16]

    def to_dict(self, case: Optional[NetworkCase] = None) -> dict:
        data = {
            'name': self.name,
            'case': self.case_ref,
            'perturbed_loads': list(self.perturbed_loads),
            'sigma': self.sigma,
            'horizon': self.horizon,
            'seed': self.seed,
        }
        if self.xi_bounds is not None:
            data['xi_bounds'] = list(self.xi_bounds)
        if self.box_horizon is not None:
            data['box_horizon'] = self.box_horizon
        if self.outage is not None:
            data['outage'] = {'kind': self.outage.kind, 'element': self.outage.element}
            data['change_point'] = self.change_point
        if case is not None:
            lower, upper = self.box(case)
            data['box'] = {'lower': lower.tolist(), 'upper': upper.tolist()}
        return data

    @classmethod
    def from_dict(cls, data: dict, case: Optional[NetworkCase] = None, name: str = 'scenario') -> 'ScenarioSpec':
        try:
            outage = None
            outage_data = data.get('outage')
            if outage_data:
                kind = str(outage_data.get('kind', 'line'))
                if 'buses' in outage_data:
                    if case is None:
                        raise InputError(f'{name}: an outage given by buses needs its case')
                    element = case.line_index(*[int(b) for b in outage_data['buses']])
                else:
                    element = int(outage_data['element'])
                outage = OutageSpec(kind, element)
            bounds = data.get('xi_bounds')
            return cls(case_ref=str(data.get('case', '')),
                       perturbed_loads=tuple(int(d) for d in data['perturbed_loads']),
                       sigma=float(data['sigma']),
                       horizon=int(data['horizon']),
                       outage=outage,
                       change_point=None if data.get('change_point') is None else int(data['change_point']),
                       seed=int(data.get('seed', 0)),
                       xi_bounds=None if bounds is None else tuple(float(b) for b in bounds),
                       name=str(data.get('name', name)),
                       box_horizon=None if data.get('box_horizon') is None else int(data['box_horizon']))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f'{name}: malformed scenario data ({e.__class__.__name__}: {e})')


@dataclass(eq=False)
class MarketStream:
    t: np.ndarray
    xi: np.ndarray
    lmp: np.ndarray
    g_total: Optional[np.ndarray] = None
    region_ids: Optional[np.ndarray] = None
    structures: Optional[List[str]] = None
    seed: Optional[int] = None
    scenario_hash: str = ''
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def to_frame(self) -> pd.DataFrame:
        columns = {'t': self.t.astype(int)}
        for j in range(self.xi.shape[1]):
            columns[f'xi_{j + 1}'] = self.xi[:, j]
        for j in range(self.lmp.shape[1]):
            columns[f'lmp_{j + 1}'] = self.lmp[:, j]
        if self.g_total is not None:
            columns['g_total'] = self.g_total
        return pd.DataFrame(columns)

    def to_csv(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format='%.17g', lineterminator='\n')


def simulate(spec: ScenarioSpec,
             case: NetworkCase,
             nominal: Optional[RegionAtlas] = None,
             post: Optional[RegionAtlas] = None,
             verify_kkt: bool = False,
             solver: Optional[QpSolver] = None,
             ) -> MarketStream:
    """Seeded market-data stream of a scenario.

    Markets are cleared through the affine maps of the located regions, which
    the atlases extend on the fly where needed. With verify_kkt every step is
    also solved directly and the solver's certified outputs are kept.
    """
    solver = solver or (nominal.solver if nominal is not None else QpSolver())
    if nominal is None:
        nominal = RegionAtlas(assemble_qp(case), solver)
    if spec.outage is not None and post is None:
        post = RegionAtlas(apply_outage(nominal.qp, case, spec.outage), solver)

    lower, upper = spec.box(case)
    perturbed = list(spec.perturbed_loads)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    steps = spec.sigma * rng.standard_normal((spec.horizon - 1, len(perturbed)))

    xi = np.zeros((spec.horizon, case.n_loads))
    for i in range(1, spec.horizon):
        xi[i] = xi[i - 1]
        xi[i, perturbed] = np.clip(xi[i - 1, perturbed] + steps[i - 1], lower[perturbed], upper[perturbed])

    t = np.arange(1, spec.horizon + 1)
    prices = np.zeros((spec.horizon, case.n_buses))
    g_total = np.zeros(spec.horizon)
    region_ids = np.zeros(spec.horizon, dtype=int)
    structures = []

    for i, step in enumerate(t):
        atlas = post if spec.outage is not None and step > spec.change_point else nominal
        try:
            region = atlas.locate(xi[i])
            x = region.primal(xi[i])
            prices[i] = region.lambda_tilde @ region.dual(xi[i])
            if verify_kkt:
                sol = solver.solve(atlas.qp, xi[i])
                direct = lmp(sol, atlas.qp)
                if (np.abs(sol.x - x).max() > _VERIFY_PRIMAL_TOL * (1.0 + np.abs(sol.x).max())
                        or np.abs(direct - prices[i]).max() > _VERIFY_LMP_TOL * (1.0 + np.abs(direct).max())):
                    _LOGGER.warning(f'Step {step}: region {region.id} map disagrees with the direct solve; '
                                    f'keeping the solver outputs')
                    x, prices[i] = sol.x, direct
        except LmpwatchError as e:
            raise ScenarioError(f'market clearing failed in structure {atlas.structure_id}: {e}', step=int(step))
        g_total[i] = x[:atlas.qp.n_gens].sum()
        region_ids[i] = region.id
        structures.append(atlas.structure_id)

    return MarketStream(t=t, xi=xi, lmp=prices, g_total=g_total, region_ids=region_ids, structures=structures,
                        seed=spec.seed, scenario_hash=spec.digest(),
                        meta={'box_lower': lower.tolist(), 'box_upper': upper.tolist()})


_LINE_RE = re.compile(r'line (\d+)')


def _numbered_columns(columns: Sequence[str], prefix: str) -> List[str]:
    found = sorted((int(c[len(prefix):]), c) for c in columns
                   if c.startswith(prefix) and c[len(prefix):].isdigit())
    return [c for _, c in found]


def replay(path, n_xi: Optional[int] = None, n_buses: Optional[int] = None) -> MarketStream:
    """Read a stream CSV (t, xi_1..xi_k, lmp_1..lmp_n, optional g_total). No market is solved."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f'stream file {path} does not exist')
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise StreamParseError(f'{path} is empty', line=1)
    except pd.errors.ParserError as e:
        match = _LINE_RE.search(str(e))
        raise StreamParseError(f'{path}: malformed row ({e})', line=int(match.group(1)) if match else None)

    columns = [c.strip() for c in raw.columns]
    raw.columns = columns
    if 't' not in columns:
        raise StreamParseError(f'{path}: missing column "t"', column='t')
    xi_columns = _numbered_columns(columns, 'xi_')
    lmp_columns = _numbered_columns(columns, 'lmp_')

    expected_xi = n_xi if n_xi is not None else len(xi_columns)
    expected_lmp = n_buses if n_buses is not None else len(lmp_columns)
    for prefix, expected, present in (('xi_', expected_xi, xi_columns), ('lmp_', expected_lmp, lmp_columns)):
        for j in range(1, max(expected, 1) + 1):
            if f'{prefix}{j}' not in present:
                raise StreamParseError(f'{path}: missing column "{prefix}{j}"', column=f'{prefix}{j}')
        if len(present) > expected:
            raise InputError(f'{path}: {len(present)} {prefix}* columns, the case has {expected}')

    wanted = ['t'] + xi_columns + lmp_columns + (['g_total'] if 'g_total' in columns else [])
    values = np.zeros((len(raw), len(wanted)))
    for j, name in enumerate(wanted):
        numeric = pd.to_numeric(raw[name].str.strip(), errors='coerce')
        bad = numeric.isna().to_numpy()
        if bad.any():
            row = int(np.argmax(bad))
            raise StreamParseError(f'{path}: value "{raw[name].iloc[row]}" in column {name} is not a number',
                                   line=row + 2, column=name)
        values[:, j] = [float(v) for v in raw[name].str.strip()]

    k, n = len(xi_columns), len(lmp_columns)
    return MarketStream(t=values[:, 0].astype(int), xi=values[:, 1:1 + k], lmp=values[:, 1 + k:1 + k + n],
                        g_total=values[:, 1 + k + n] if 'g_total' in columns else None)
