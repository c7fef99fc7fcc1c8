"""Parallel CuSum statistics over hypothesised outages.

Every hypothesis a = 1..|A| keeps a statistic

    w_t(a) = max(0, w_{t-1}(a) + log f_a(delta_t) - log f_0(delta_t))

where f_0 and f_a are the increment densities of the regions located at xi_t
in the nominal and post-outage atlases, each centred on the jump its own maps
predict when xi crosses a region boundary or a load touches its box. The first statistic reaching the
threshold stops the run and names the outage. Id 0 stands for the nominal
structure, i.e. no alarm.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from lmpwatch.src.densities import DensityCache, NoiseModel, predicted_shift
from lmpwatch.src.errors import InputError
from lmpwatch.src.mpp import RegionAtlas
from lmpwatch.src.netmodel import OutageSpec
from lmpwatch.src.stream import MarketStream

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)


@dataclass(frozen=True, eq=False)
class Hypothesis:
    id: int
    outage: OutageSpec
    atlas: RegionAtlas
    label: str = ''


@dataclass(eq=False)
class HypothesisSet:
    nominal: RegionAtlas
    alternatives: List[Hypothesis]
    noise: NoiseModel

    def __post_init__(self):
        ids = [h.id for h in self.alternatives]
        if len(set(ids)) != len(ids):
            raise InputError(f'hypothesis ids must be unique, got {ids}')
        if 0 in ids:
            raise InputError('hypothesis id 0 is reserved for the nominal structure')
        n_xi, n_buses = self.nominal.qp.n_xi, self.nominal.qp.Lambda.shape[0]
        for h in self.alternatives:
            if h.atlas.qp.n_xi != n_xi or h.atlas.qp.Lambda.shape[0] != n_buses:
                raise InputError(f'hypothesis {h.id} was built from a different network')
        if self.noise.dim != n_xi:
            raise InputError(f'noise model has {self.noise.dim} components, the market {n_xi}')

    @property
    def ids(self) -> List[int]:
        return [h.id for h in self.alternatives]

    def __getitem__(self, a: int) -> Hypothesis:
        for h in self.alternatives:
            if h.id == a:
                return h
        raise KeyError(a)

    def id_of(self, outage: OutageSpec) -> int:
        """Hypothesis id of an outage, 0 if it is not hypothesised."""
        for h in self.alternatives:
            if h.outage == outage:
                return h.id
        return 0

    @classmethod
    def numbered(cls, nominal: RegionAtlas, atlases: Sequence[Tuple[OutageSpec, RegionAtlas, str]],
                 noise: NoiseModel) -> 'HypothesisSet':
        """Number the outages 1..n in the given order."""
        return cls(nominal=nominal,
                   alternatives=[Hypothesis(a, spec, atlas, label) for a, (spec, atlas, label) in enumerate(atlases, 1)],
                   noise=noise)


class CusumBank():

    def __init__(self, ids: Sequence[int], eta: float, keep_history: bool = False):
        self.ids = list(ids)
        self.eta = float(eta)
        self.w: Dict[int, float] = {a: 0.0 for a in self.ids}
        self.t = 0
        self.keep_history = keep_history
        self.history: List[Tuple[int, Dict[int, float]]] = []

    def update(self, llrs: Dict[int, float]) -> 'CusumBank':
        missing = [a for a in self.ids if a not in llrs]
        if missing:
            raise InputError(f'no log-likelihood ratio for hypotheses {missing}')
        for a in self.ids:
            self.w[a] = max(0.0, self.w[a] + float(llrs[a]))
        self.t += 1
        if self.keep_history:
            self.history.append((self.t, dict(self.w)))
        return self

    def values(self) -> np.ndarray:
        return np.array([self.w[a] for a in self.ids])


@dataclass(frozen=True)
class DetectionOutcome:
    alarm: bool
    tau: Optional[int]
    identified: int
    crossing_values: Dict[int, float] = field(default_factory=dict)

    def to_dict(self, labels: Optional[Dict[int, str]] = None) -> dict:
        summary = {
            'alarm': self.alarm,
            'tau': self.tau,
            'identified': self.identified,
            'crossing_values': {int(a): float(v) for a, v in self.crossing_values.items()},
        }
        if labels is not None:
            summary['identified_label'] = labels.get(self.identified, 'none')
        return summary


def _argmax_lowest(ids: Sequence[int], values: np.ndarray) -> Tuple[int, bool]:
    """Id of the largest value, the lowest id on ties, and whether a tie happened."""
    top = values.max()
    winners = [a for a, v in zip(ids, values) if v == top]
    return min(winners), len(winners) > 1


def check_stop(bank: CusumBank) -> DetectionOutcome:
    if not bank.ids:
        return DetectionOutcome(alarm=False, tau=None, identified=0)
    values = bank.values()
    if values.max() < bank.eta:
        return DetectionOutcome(alarm=False, tau=None, identified=0)
    identified, tie = _argmax_lowest(bank.ids, values)
    if tie:
        _LOGGER.warning(f'Statistics tied at {values.max():.6g} on step {bank.t}; identifying the lowest id {identified}')
    return DetectionOutcome(alarm=True, tau=bank.t, identified=identified, crossing_values=dict(bank.w))


def centred_log_density(atlas: RegionAtlas, delta, xi_t, selection, densities: DensityCache,
                        xi_prev=None) -> Optional[float]:
    """Log density of delta under the region of atlas located at xi_t.

    With xi_prev the density is centred on predicted_shift, so boundary
    contacts and region crossings count only through their modelled part.
    """
    region = atlas.locate(xi_t)
    density = densities.get(region, selection)
    if density is None:
        return None
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if xi_prev is not None:
        delta = delta - predicted_shift(atlas.locate(xi_prev), region, xi_prev, xi_t, selection, densities.channel)
    return density.log_density(delta)


def llr(delta, xi_t, a: int, hset: HypothesisSet, selection, densities: DensityCache,
        xi_prev=None) -> Optional[float]:
    """log f_a(delta) - log f_0(delta) on the regions located at xi_t, None when a density is degenerate."""
    f0 = centred_log_density(hset.nominal, delta, xi_t, selection, densities, xi_prev)
    if f0 is None:
        return None
    fa = centred_log_density(hset[a].atlas, delta, xi_t, selection, densities, xi_prev)
    if fa is None:
        return None
    return fa - f0


def update(bank: CusumBank, llrs: Dict[int, float]) -> CusumBank:
    return bank.update(llrs)


class CusumDetector():

    def __init__(self,
                 hset: HypothesisSet,
                 eta: float = np.inf,
                 channel: str = 'lmp',
                 epsilon_scale: float = 1e-6,
                 covariance_mode: str = 'regularized',
                 keep_trace: bool = False,
                 ):
        self.hset = hset
        self.channel = channel
        self.densities = DensityCache(hset.noise, channel, epsilon_scale, covariance_mode)
        self.bank = CusumBank(hset.ids, eta, keep_history=keep_trace)
        self.keep_trace = keep_trace
        self.degenerate_steps: List[int] = []

    def observations(self, stream: MarketStream) -> np.ndarray:
        if self.channel == 'lmp':
            return stream.lmp
        if stream.g_total is None:
            raise InputError('the dispatch channel needs a g_total column in the stream')
        return stream.g_total[:, None]

    def _check(self, stream: MarketStream):
        if len(stream) < 2:
            raise InputError(f'a stream needs at least 2 rows to form increments, got {len(stream)}')
        n_xi = self.hset.noise.dim
        n_buses = self.hset.nominal.qp.Lambda.shape[0]
        if stream.xi.shape[1] != n_xi:
            raise InputError(f'step {int(stream.t[0])}: stream has {stream.xi.shape[1]} perturbation columns, '
                             f'the market {n_xi}')
        if self.channel == 'lmp' and stream.lmp.shape[1] != n_buses:
            raise InputError(f'step {int(stream.t[0])}: stream has {stream.lmp.shape[1]} LMP columns, '
                             f'the network {n_buses} buses')
        bad = ~np.all(np.isfinite(np.hstack([stream.xi, self.observations(stream)])), axis=1)
        if bad.any():
            raise InputError(f'step {int(stream.t[np.argmax(bad)])}: non-finite stream values')

    def step_llrs(self, xi_prev, xi_t, delta, t: int) -> Dict[int, float]:
        selection = self.hset.noise.selection(xi_prev, xi_t)
        llrs = {}
        for a in self.hset.ids:
            value = llr(delta, xi_t, a, self.hset, selection, self.densities, xi_prev)
            if value is None:
                value = 0.0
                if not self.degenerate_steps or self.degenerate_steps[-1] != t:
                    self.degenerate_steps.append(t)
            llrs[a] = value
        return llrs

    def statistics_path(self, stream: MarketStream, stop_at: Optional[float] = None) -> np.ndarray:
        """Statistics after every increment of the stream, without stopping.

        Row i holds the statistics at stream row i + 1. With stop_at the path
        ends at the first row whose largest statistic reaches it.
        """
        self._check(stream)
        obs = self.observations(stream)
        path = np.zeros((len(stream) - 1, len(self.hset.ids)))
        for i in range(1, len(stream)):
            llrs = self.step_llrs(stream.xi[i - 1], stream.xi[i], obs[i] - obs[i - 1], int(stream.t[i]))
            self.bank.update(llrs)
            path[i - 1] = self.bank.values()
            if stop_at is not None and path[i - 1].max(initial=0.0) >= stop_at:
                return path[:i]
        return path

    def run(self, stream: MarketStream) -> DetectionOutcome:
        self._check(stream)
        obs = self.observations(stream)
        for i in range(1, len(stream)):
            t = int(stream.t[i])
            self.bank.update(self.step_llrs(stream.xi[i - 1], stream.xi[i], obs[i] - obs[i - 1], t))
            outcome = check_stop(self.bank)
            if outcome.alarm:
                outcome = DetectionOutcome(alarm=True, tau=t, identified=outcome.identified,
                                           crossing_values=outcome.crossing_values)
                _LOGGER.info(f'Alarm at t={t}: hypothesis {outcome.identified} '
                             f'({self.hset[outcome.identified].label}) crossed eta={self.bank.eta:g}')
                return outcome
        if self.degenerate_steps:
            _LOGGER.debug(f'{len(self.degenerate_steps)} steps contributed nothing due to degenerate densities')
        return DetectionOutcome(alarm=False, tau=None, identified=0)

    def trace_frame(self, stream: MarketStream) -> pd.DataFrame:
        """Per-step trace: t, xi_*, lmp_*, w_<a> and the alarm flag, one row per stream row seen."""
        if not self.keep_trace:
            raise InputError('trace export needs keep_trace=True')
        n = self.bank.t + 1
        frame = stream.to_frame().iloc[:n].copy()
        statistics = np.zeros((n, len(self.hset.ids)))
        for i, (_, w) in enumerate(self.bank.history, 1):
            statistics[i] = [w[a] for a in self.hset.ids]
        for j, a in enumerate(self.hset.ids):
            frame[f'w_{a}'] = statistics[:, j]
        frame['alarm'] = (statistics.max(axis=1, initial=0.0) >= self.bank.eta).astype(int)
        return frame.reset_index(drop=True)


def run_detector(hset: HypothesisSet, stream: MarketStream, eta: float, **kwargs) -> DetectionOutcome:
    return CusumDetector(hset, eta, **kwargs).run(stream)


def statistics_path(hset: HypothesisSet, stream: MarketStream, **kwargs) -> np.ndarray:
    return CusumDetector(hset, **kwargs).statistics_path(stream)


def outcome_from_path(path: np.ndarray, t_values: Sequence[int], ids: Sequence[int], eta: float) -> DetectionOutcome:
    """Single-alarm outcome for threshold eta from a precomputed statistics path.

    t_values are the stream times of the path rows.
    """
    if path.size == 0:
        return DetectionOutcome(alarm=False, tau=None, identified=0)
    crossed = np.flatnonzero(path.max(axis=1) >= eta)
    if len(crossed) == 0:
        return DetectionOutcome(alarm=False, tau=None, identified=0)
    row = path[crossed[0]]
    identified, tie = _argmax_lowest(ids, row)
    if tie:
        _LOGGER.debug(f'Statistics tied at t={t_values[crossed[0]]}; identifying the lowest id {identified}')
    return DetectionOutcome(alarm=True, tau=int(t_values[crossed[0]]), identified=identified,
                            crossing_values={int(a): float(v) for a, v in zip(ids, row)})
