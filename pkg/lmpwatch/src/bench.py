"""Threshold calibration and Monte Carlo performance of the CuSum detector.

Trajectory i of every experiment uses seed master + i, so the rows of a sweep
over thresholds share their demand trajectories. Each trajectory is simulated
and scored once; the outcome for every threshold is read off its statistics
path.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
import psutil
from scipy import stats
from tqdm import tqdm

from lmpwatch.src.densities import DensityCache, kl_divergence
from lmpwatch.src.detector import CusumDetector, DetectionOutcome, HypothesisSet, outcome_from_path
from lmpwatch.src.errors import InputError, ThresholdRangeError
from lmpwatch.src.mpp import RegionAtlas
from lmpwatch.src.netmodel import NetworkCase, apply_outage
from lmpwatch.src.stream import MarketStream, ScenarioSpec, simulate

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)

_CONFIDENCE = 0.95


@dataclass(frozen=True)
class DetectorSettings:
    channel: str = 'lmp'
    epsilon_scale: float = 1e-6
    covariance_mode: str = 'regularized'


@dataclass(frozen=True)
class CalibrationRow:
    eta: float
    arl: float
    arl_half_width: float
    censored_fraction: float
    false_alarm_probability: float
    false_alarm_half_width: float
    trajectories: int
    t_max: int


@dataclass
class CalibrationReport:
    rows: List[CalibrationRow]
    trajectories: int
    t_max: int

    @property
    def etas(self) -> List[float]:
        return [row.eta for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows])


@dataclass(frozen=True)
class PerformanceRow:
    eta: float
    average_delay: float
    average_delay_half_width: float
    median_delay: float
    false_detection: float
    successful_detection: float
    successful_identification: float
    miss: float
    detection_half_width: float
    identification_half_width: float
    trajectories: int


@dataclass
class PerformanceReport:
    rows: List[PerformanceRow]
    trajectories: int
    change_point: int
    horizon: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows])


class ThresholdChoice(NamedTuple):
    eta: float
    arl: float
    note: str = ''


def resolve_workers(workers: int) -> int:
    """0 means one worker per physical core."""
    if workers > 0:
        return workers
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


def _mean_half_width(values: np.ndarray) -> float:
    n = len(values)
    if n < 2:
        return float('nan')
    return float(stats.t.ppf(0.5 + _CONFIDENCE / 2, n - 1) * values.std(ddof=1) / np.sqrt(n))


def _proportion_half_width(p: float, n: int) -> float:
    if n == 0:
        return float('nan')
    return float(stats.norm.ppf(0.5 + _CONFIDENCE / 2) * np.sqrt(p * (1.0 - p) / n))


def _post_atlas(hset: HypothesisSet, case: NetworkCase, spec: ScenarioSpec) -> Optional[RegionAtlas]:
    if spec.outage is None:
        return None
    a = hset.id_of(spec.outage)
    if a:
        return hset[a].atlas
    return RegionAtlas(apply_outage(hset.nominal.qp, case, spec.outage), hset.nominal.solver,
                       hset.nominal.region_tol)


_WORKER_CONTEXT = {}


def _init_worker(context: dict):
    _WORKER_CONTEXT.clear()
    _WORKER_CONTEXT.update(context)


def _run_trajectory(seed: int) -> List[DetectionOutcome]:
    ctx = _WORKER_CONTEXT
    hset, case, spec, settings, etas = ctx['hset'], ctx['case'], ctx['spec'], ctx['settings'], ctx['etas']
    stream = simulate(spec.with_seed(seed), case, hset.nominal, ctx['post'])
    detector = CusumDetector(hset, channel=settings.channel, epsilon_scale=settings.epsilon_scale,
                             covariance_mode=settings.covariance_mode)
    path = detector.statistics_path(stream, stop_at=max(etas))
    return [outcome_from_path(path, stream.t[1:], hset.ids, eta) for eta in etas]


def run_trajectories(hset: HypothesisSet,
                     case: NetworkCase,
                     spec: ScenarioSpec,
                     etas: Sequence[float],
                     n_traj: int,
                     seed: int = 0,
                     settings: DetectorSettings = DetectorSettings(),
                     workers: int = 1,
                     progress: bool = False,
                     ) -> List[List[DetectionOutcome]]:
    """Outcomes[i][j] of trajectory i (seed + i) at threshold etas[j]."""
    if n_traj < 1:
        raise InputError(f'at least one trajectory is needed, got {n_traj}')
    if not etas:
        raise InputError('at least one threshold is needed')
    lower, upper = spec.box(case)
    if not (np.allclose(lower, hset.noise.lower) and np.allclose(upper, hset.noise.upper)):
        raise InputError(f'{spec.name}: the simulated perturbation box {upper.tolist()} differs from the '
                         f'detector\'s {hset.noise.upper.tolist()}')
    context = {'hset': hset, 'case': case, 'spec': spec, 'settings': settings, 'etas': list(etas),
               'post': _post_atlas(hset, case, spec)}
    seeds = [seed + i for i in range(n_traj)]
    workers = min(resolve_workers(workers), n_traj)
    desc = f'{spec.name} ({"outage" if spec.outage else "nominal"})'

    if workers == 1:
        _init_worker(context)
        try:
            return [_run_trajectory(s) for s in tqdm(seeds, desc=desc, disable=not progress)]
        finally:
            _WORKER_CONTEXT.clear()

    _LOGGER.info(f'Running {n_traj} trajectories on {workers} workers')
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(context,)) as executor:
        results = executor.map(_run_trajectory, seeds, chunksize=max(1, n_traj // (4 * workers)))
        return list(tqdm(results, total=n_traj, desc=desc, disable=not progress))


def calibration_row(outcomes: Sequence[DetectionOutcome], eta: float, t_max: int) -> CalibrationRow:
    n = len(outcomes)
    taus = np.array([o.tau if o.alarm else t_max for o in outcomes], dtype=float)
    censored = sum(1 for o in outcomes if not o.alarm) / n
    false_alarm = sum(1 for o in outcomes if o.alarm and o.tau < t_max) / n
    return CalibrationRow(eta=float(eta), arl=float(taus.mean()), arl_half_width=_mean_half_width(taus),
                          censored_fraction=censored, false_alarm_probability=false_alarm,
                          false_alarm_half_width=_proportion_half_width(false_alarm, n),
                          trajectories=n, t_max=t_max)


def performance_row(outcomes: Sequence[DetectionOutcome], eta: float, change_point: int, horizon: int,
                    true_id: int) -> PerformanceRow:
    n = len(outcomes)
    false_detection = [o for o in outcomes if o.alarm and o.tau < change_point]
    detected = [o for o in outcomes if o.alarm and change_point <= o.tau <= horizon]
    identified = [o for o in detected if true_id and o.identified == true_id]
    delays = np.array([o.tau - change_point for o in detected], dtype=float)

    p_detect = len(detected) / n
    p_identify = len(identified) / n
    return PerformanceRow(
        eta=float(eta),
        average_delay=float(delays.mean()) if len(delays) else float('nan'),
        average_delay_half_width=_mean_half_width(delays),
        median_delay=float(np.median(delays)) if len(delays) else float('nan'),
        false_detection=len(false_detection) / n,
        successful_detection=p_detect,
        successful_identification=p_identify,
        miss=(n - len(false_detection) - len(detected)) / n,
        detection_half_width=_proportion_half_width(p_detect, n),
        identification_half_width=_proportion_half_width(p_identify, n),
        trajectories=n,
    )


def estimate_arl_sweep(hset: HypothesisSet,
                       case: NetworkCase,
                       spec: ScenarioSpec,
                       etas: Sequence[float],
                       n_traj: int,
                       t_max: int,
                       seed: int = 0,
                       settings: DetectorSettings = DetectorSettings(),
                       workers: int = 1,
                       progress: bool = False,
                       ) -> CalibrationReport:
    """ARL under nominal operation, censored at t_max, for every threshold."""
    nominal = spec.without_outage(horizon=t_max)
    outcomes = run_trajectories(hset, case, nominal, etas, n_traj, seed, settings, workers, progress)
    rows = [calibration_row([o[j] for o in outcomes], eta, t_max) for j, eta in enumerate(etas)]
    return CalibrationReport(rows=rows, trajectories=n_traj, t_max=t_max)


def estimate_arl(hset: HypothesisSet, case: NetworkCase, spec: ScenarioSpec, eta: float, n_traj: int, t_max: int,
                 **kwargs) -> CalibrationRow:
    return estimate_arl_sweep(hset, case, spec, [eta], n_traj, t_max, **kwargs).rows[0]


def evaluate_sweep(hset: HypothesisSet,
                   case: NetworkCase,
                   spec: ScenarioSpec,
                   etas: Sequence[float],
                   n_traj: int,
                   seed: int = 0,
                   settings: DetectorSettings = DetectorSettings(),
                   workers: int = 1,
                   progress: bool = False,
                   ) -> PerformanceReport:
    """Detection delay and false detection, detection and identification rates under an outage."""
    if spec.outage is None:
        raise InputError(f'{spec.name}: performance evaluation needs a scenario with an outage')
    true_id = hset.id_of(spec.outage)
    if not true_id:
        _LOGGER.warning(f'Outage {spec.outage.key} is not among the hypotheses; identification cannot succeed')
    outcomes = run_trajectories(hset, case, spec, etas, n_traj, seed, settings, workers, progress)
    rows = [performance_row([o[j] for o in outcomes], eta, spec.change_point, spec.horizon, true_id)
            for j, eta in enumerate(etas)]
    return PerformanceReport(rows=rows, trajectories=n_traj, change_point=spec.change_point, horizon=spec.horizon)


def evaluate(hset: HypothesisSet, case: NetworkCase, spec: ScenarioSpec, eta: float, n_traj: int,
             **kwargs) -> PerformanceRow:
    return evaluate_sweep(hset, case, spec, [eta], n_traj, **kwargs).rows[0]


def threshold_choice(report: CalibrationReport, target_arl: float) -> ThresholdChoice:
    rows = sorted(report.rows, key=lambda row: row.eta)
    if not rows:
        raise ThresholdRangeError('the calibration report is empty')
    for row in rows:
        if row.arl >= target_arl:
            note = ''
            if row is rows[0] and row.arl > target_arl:
                note = (f'target ARL {target_arl:g} lies below the smallest tabulated ARL {row.arl:g}; '
                        f'the smallest threshold is the conservative choice')
            return ThresholdChoice(eta=row.eta, arl=row.arl, note=note)
    raise ThresholdRangeError(f'target ARL {target_arl:g} exceeds the largest tabulated ARL {rows[-1].arl:g} '
                              f'at eta={rows[-1].eta:g}; sweep larger thresholds')


def pick_threshold(report: CalibrationReport, target_arl: float) -> float:
    """Smallest tabulated eta whose ARL reaches the target."""
    choice = threshold_choice(report, target_arl)
    if choice.note:
        _LOGGER.info(choice.note)
    return choice.eta


def occupancy_kl(hset: HypothesisSet,
                 stream: MarketStream,
                 outage_id: int,
                 settings: DetectorSettings = DetectorSettings(),
                 start: int = 1,
                 ) -> float:
    """Average KL divergence of the hypothesis' density from the nominal one along a stream.

    Steps whose densities are degenerate are skipped.
    """
    cache = DensityCache(hset.noise, settings.channel, settings.epsilon_scale, settings.covariance_mode)
    alternative = hset[outage_id].atlas
    values = []
    for i in range(max(start, 1), len(stream)):
        selection = hset.noise.selection(stream.xi[i - 1], stream.xi[i])
        f0 = cache.get(hset.nominal.locate(stream.xi[i]), selection)
        fa = cache.get(alternative.locate(stream.xi[i]), selection)
        if f0 is not None and fa is not None:
            values.append(kl_divergence(fa, f0))
    return float(np.mean(values)) if values else 0.0


def _fmt(value: float, digits: int) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return '-'
    return f'{value:.{digits}f}'


def format_table(calibration: Optional[CalibrationReport], performance: PerformanceReport) -> str:
    """Aligned text table, one row per threshold."""
    arl_by_eta = {row.eta: row for row in calibration.rows} if calibration else {}
    header = ['eta', 'ARL', 'P false alarm', 'avg delay', 'median delay',
              'P false detection', 'P successful detection', 'P successful identification']
    lines = []
    for row in performance.rows:
        cal = arl_by_eta.get(row.eta)
        lines.append([
            f'{row.eta:g}',
            _fmt(cal.arl, 1) if cal else '-',
            f'{100 * cal.false_alarm_probability:.1f}%' if cal else '-',
            _fmt(row.average_delay, 1),
            _fmt(row.median_delay, 1),
            f'{100 * row.false_detection:.1f}%',
            f'{100 * row.successful_detection:.1f}%',
            f'{100 * row.successful_identification:.1f}%',
        ])
    widths = [max([len(header[j])] + [len(line[j]) for line in lines]) for j in range(len(header))]
    rule = '-+-'.join('-' * w for w in widths)
    out = [' | '.join(h.rjust(w) for h, w in zip(header, widths)), rule]
    out += [' | '.join(c.rjust(w) for c, w in zip(line, widths)) for line in lines]
    return '\n'.join(out) + '\n'
