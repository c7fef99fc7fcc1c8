"""Subcommands of the lmpwatch command line."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from lmpwatch.src.bench import (DetectorSettings, estimate_arl_sweep, evaluate_sweep, format_table, occupancy_kl,
                                threshold_choice)
from lmpwatch.src.detector import CusumDetector, DetectionOutcome, HypothesisSet
from lmpwatch.src.errors import InputError, MissingAtlasError
from lmpwatch.src.handlers.atlas_handler import AtlasHandler
from lmpwatch.src.handlers.inputs_handler import InputsHandler
from lmpwatch.src.handlers.outputs_handler import OutputsHandler
from lmpwatch.src.mpp import RegionAtlas, build_atlas, region_polygons, sample_box
from lmpwatch.src.netmodel import MarketQP, NetworkCase, OutageSpec, apply_outage, assemble_qp
from lmpwatch.src.qpsolve import QpSolver
from lmpwatch.src.run_config import RunConfig
from lmpwatch.src.stream import MarketStream, ScenarioSpec, replay, simulate

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)


@dataclass
class Structure:
    qp: MarketQP
    label: str
    outage: Optional[OutageSpec] = None
    hypothesis: bool = False
    atlas: Optional[RegionAtlas] = None
    source: str = ''


@dataclass
class Workspace:
    """Everything a command needs: the case, the scenario and one market per structure."""
    config: RunConfig
    case: NetworkCase
    spec: ScenarioSpec
    solver: QpSolver
    structures: List[Structure] = field(default_factory=list)
    outputs: OutputsHandler = None
    atlases: AtlasHandler = None

    @property
    def nominal(self) -> Structure:
        return self.structures[0]

    def structure_of(self, outage: OutageSpec) -> Optional[Structure]:
        for structure in self.structures[1:]:
            if structure.outage == outage:
                return structure
        return None

    def box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.spec.box(self.case)

    def settings(self) -> DetectorSettings:
        return DetectorSettings(channel=self.config.channel, epsilon_scale=self.config.epsilon_scale,
                                covariance_mode=self.config.covariance_mode)

    def master_seed(self) -> int:
        return self.spec.seed if self.config.seed is None else self.config.seed

    def hypothesis_set(self) -> HypothesisSet:
        hypotheses = [(s.outage, s.atlas, s.label) for s in self.structures[1:] if s.hypothesis]
        return HypothesisSet.numbered(self.nominal.atlas, hypotheses,
                                      self.spec.noise_model(self.case, self.config.boundary_tol))


def prepare(config: RunConfig, inputs: InputsHandler, command: str) -> Workspace:
    config.validate(command)
    case_ref = config.case or inputs.scenario_case_ref(config.scenario)
    if not case_ref:
        raise InputError(f'scenario {config.scenario} names no case; pass --case')
    case = inputs.load_case(case_ref)
    spec = inputs.load_scenario(config.scenario, case)
    solver = QpSolver(active_tol=config.active_tol, dual_tol=config.dual_tol,
                      stationarity_tol=config.stationarity_tol, max_iterations=config.max_iterations)

    nominal = assemble_qp(case)
    structures = [Structure(nominal, 'nominal')]
    for outage, label in inputs.parse_hypotheses(config.hypotheses, case):
        qp = apply_outage(nominal, case, outage, recompute_ptdf=config.recompute_ptdf)
        structures.append(Structure(qp, label, outage, hypothesis=True))
    if spec.outage is not None and spec.outage not in [s.outage for s in structures]:
        qp = apply_outage(nominal, case, spec.outage, recompute_ptdf=config.recompute_ptdf)
        structures.append(Structure(qp, spec.outage.label(case), spec.outage, hypothesis=False))

    workspace = Workspace(config=config, case=case, spec=spec, solver=solver, structures=structures,
                          outputs=OutputsHandler(config.out_dir), atlases=AtlasHandler(config.cache_dir))
    workspace.outputs.write_yaml('run_config.yaml', {'command': command, **config.to_dict(),
                                                      'scenario_spec': spec.to_dict(case)})
    return workspace


def load_atlases(workspace: Workspace, require_cached: bool = False):
    """Attach an atlas to every structure, from the cache or by sampling the perturbation box."""
    config = workspace.config
    if require_cached:
        missing = [s for s in workspace.structures if not workspace.atlases.exists(s.qp)]
        if missing:
            raise MissingAtlasError(f'no cached atlas for {", ".join(s.label for s in missing)} in '
                                    f'{config.cache_dir}; run the `regions` command first with the same case, '
                                    f'scenario and hypotheses')
    samples = None
    for structure in workspace.structures:
        atlas = workspace.atlases.load(structure.qp, workspace.solver, config.region_tol)
        if atlas is not None:
            structure.atlas, structure.source = atlas, 'cache'
            continue
        if require_cached:
            raise MissingAtlasError(f'cached atlas of {structure.label} in {config.cache_dir} belongs to another '
                                    f'market; rerun the `regions` command')
        if samples is None:
            lower, upper = workspace.box()
            samples = sample_box(lower, upper, config.grid_points, config.random_samples, workspace.master_seed())
        structure.atlas = build_atlas(structure.qp, samples, workspace.solver, config.region_tol,
                                      config.quarantine, config.atlas_workers, progress=True)
        structure.source = 'built'
        workspace.atlases.save(structure.atlas)


def cmd_regions(config: RunConfig, inputs: InputsHandler) -> pd.DataFrame:
    workspace = prepare(config, inputs, 'regions')
    load_atlases(workspace)

    summary = pd.DataFrame([{
        'structure': s.qp.structure_id,
        'label': s.label,
        'hypothesis': int(s.hypothesis),
        'regions': len(s.atlas),
        'flagged': sum(1 for r in s.atlas.regions if r.flagged),
        'quarantined': len(s.atlas.quarantined),
        'source': s.source,
    } for s in workspace.structures])
    for row in summary.itertuples():
        _LOGGER.info(f'{row.label}: {row.regions} regions ({row.source})')
    workspace.outputs.write_frame('regions_summary.csv', summary)

    quarantined = [{'structure': s.qp.structure_id, 'sample': i,
                    **{f'xi_{j + 1}': v for j, v in enumerate(q)}}
                   for s in workspace.structures for i, q in enumerate(s.atlas.quarantined)]
    if quarantined:
        _LOGGER.warning(f'{len(quarantined)} samples were quarantined as degenerate')
        workspace.outputs.write_frame('quarantined_samples.csv', pd.DataFrame(quarantined))

    perturbed = list(workspace.spec.perturbed_loads)
    if len(perturbed) >= 2:
        lower, upper = workspace.box()
        dims = (perturbed[0], perturbed[1])
        rows = []
        for s in workspace.structures:
            for polygon in region_polygons(s.atlas, lower, upper, dims):
                for k, (a, b) in enumerate(polygon.vertices):
                    rows.append({'structure': s.qp.structure_id, 'region': polygon.region_id, 'vertex': k,
                                 f'xi_{dims[0] + 1}': a, f'xi_{dims[1] + 1}': b})
        workspace.outputs.write_frame('region_polygons.csv', pd.DataFrame(rows))
    else:
        _LOGGER.info('Region polygons need at least two perturbed loads; skipping them')
    return summary


def cmd_simulate(config: RunConfig, inputs: InputsHandler) -> MarketStream:
    workspace = prepare(config, inputs, 'simulate')
    load_atlases(workspace)
    spec = workspace.spec.with_seed(workspace.master_seed())
    post = workspace.structure_of(spec.outage).atlas if spec.outage is not None else None
    stream = simulate(spec, workspace.case, workspace.nominal.atlas, post, verify_kkt=config.verify_kkt,
                      solver=workspace.solver)
    path = workspace.outputs.path('stream.csv')
    stream.to_csv(path)
    _LOGGER.info(f'Wrote {len(stream)} steps of scenario {spec.name} (seed {spec.seed}) to {path}')
    return stream


def cmd_detect(config: RunConfig, inputs: InputsHandler) -> DetectionOutcome:
    workspace = prepare(config, inputs, 'detect')
    load_atlases(workspace, require_cached=True)
    hset = workspace.hypothesis_set()
    stream = replay(config.stream, n_xi=workspace.case.n_loads, n_buses=workspace.case.n_buses)

    eta, note = config.eta, ''
    if eta is None:
        report = estimate_arl_sweep(hset, workspace.case, workspace.spec, config.sorted_etas, config.trajectories,
                                    config.t_max, workspace.master_seed(), workspace.settings(), config.workers,
                                    progress=True)
        choice = threshold_choice(report, config.target_arl)
        eta, note = choice.eta, choice.note
        _LOGGER.info(f'Threshold for target ARL {config.target_arl:g}: eta={eta:g} (ARL {choice.arl:.1f})')

    settings = workspace.settings()
    detector = CusumDetector(hset, eta, channel=settings.channel, epsilon_scale=settings.epsilon_scale,
                             covariance_mode=settings.covariance_mode, keep_trace=True)
    outcome = detector.run(stream)
    labels = {h.id: h.label for h in hset.alternatives}
    labels[0] = 'none'
    if not outcome.alarm:
        _LOGGER.info(f'No alarm over {len(stream)} steps')

    summary = {'eta': float(eta), **outcome.to_dict(labels),
               'hypotheses': {h.id: h.label for h in hset.alternatives},
               'degenerate_steps': len(detector.degenerate_steps)}
    if note:
        summary['threshold_note'] = note
    workspace.outputs.write_yaml('outcome.yaml', summary)
    workspace.outputs.write_frame('trace.csv', detector.trace_frame(stream), float_format='%.17g')
    return outcome


def cmd_calibrate(config: RunConfig, inputs: InputsHandler):
    workspace = prepare(config, inputs, 'calibrate')
    load_atlases(workspace)
    hset = workspace.hypothesis_set()
    report = estimate_arl_sweep(hset, workspace.case, workspace.spec, config.sorted_etas, config.trajectories,
                                config.t_max, workspace.master_seed(), workspace.settings(), config.workers,
                                progress=True)
    workspace.outputs.write_frame('calibration.csv', report.to_frame())
    for row in report.rows:
        _LOGGER.info(f'eta={row.eta:g}: ARL {row.arl:.1f} +- {row.arl_half_width:.1f}, '
                     f'{100 * row.censored_fraction:.1f}% censored at {row.t_max}')

    eta = None
    if config.target_arl is not None:
        choice = threshold_choice(report, config.target_arl)
        eta = choice.eta
        _LOGGER.info(f'Threshold for target ARL {config.target_arl:g}: eta={eta:g} (ARL {choice.arl:.1f})'
                     + (f'; {choice.note}' if choice.note else ''))
        workspace.outputs.write_yaml('threshold.yaml', {'target_arl': float(config.target_arl), 'eta': float(eta),
                                                        'arl': float(choice.arl), 'note': choice.note})
    return report, eta


def cmd_bench(config: RunConfig, inputs: InputsHandler):
    workspace = prepare(config, inputs, 'bench')
    if workspace.spec.outage is None:
        raise InputError(f'scenario {workspace.spec.name} has no outage to benchmark against')
    load_atlases(workspace)
    hset = workspace.hypothesis_set()
    settings = workspace.settings()
    seed = workspace.master_seed()

    calibration = estimate_arl_sweep(hset, workspace.case, workspace.spec, config.sorted_etas, config.trajectories,
                                     config.t_max, seed, settings, config.workers, progress=True)
    performance = evaluate_sweep(hset, workspace.case, workspace.spec, config.sorted_etas, config.trajectories,
                                 seed, settings, config.workers, progress=True)

    stream = simulate(workspace.spec.with_seed(seed), workspace.case, hset.nominal,
                      workspace.structure_of(workspace.spec.outage).atlas)
    kl_rows = [{'hypothesis': h.id, 'label': h.label,
                'mean_kl': occupancy_kl(hset, stream, h.id, settings, start=workspace.spec.change_point)}
               for h in hset.alternatives]

    table = format_table(calibration, performance)
    _LOGGER.info(f'Performance over {config.trajectories} trajectories:\n{table}')
    workspace.outputs.write_frame('calibration.csv', calibration.to_frame())
    workspace.outputs.write_frame('performance.csv', performance.to_frame())
    workspace.outputs.write_frame('kl.csv', pd.DataFrame(kl_rows))
    workspace.outputs.write_text('table.txt', table)
    return calibration, performance


COMMANDS: Dict[str, callable] = {
    'regions': cmd_regions,
    'simulate': cmd_simulate,
    'detect': cmd_detect,
    'calibrate': cmd_calibrate,
    'bench': cmd_bench,
}
