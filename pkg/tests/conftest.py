import os
from pathlib import Path
from typing import Optional

import numpy as np
import pytest
import yaml

from lmpwatch.src.detector import HypothesisSet
from lmpwatch.src.handlers.inputs_handler import InputsHandler
from lmpwatch.src.mpp import RegionAtlas, build_atlas, sample_box
from lmpwatch.src.netmodel import Generator, Line, Load, NetworkCase, apply_outage, assemble_qp
from lmpwatch.src.stream import ScenarioSpec

CASES_DIR = Path(__file__).parent.parent / 'lmpwatch' / 'cases'
SCENARIOS_DIR = Path(__file__).parent.parent / 'lmpwatch' / 'scenarios'


def pytest_collection_modifyitems(config, items):
    if os.environ.get('LMPWATCH_SLOW_TESTS') == '1':
        return
    skip = pytest.mark.skip(reason='set LMPWATCH_SLOW_TESTS=1 to run Monte Carlo tests')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


def make_two_bus(limit: float = 200.0, demand: float = 100.0) -> NetworkCase:
    """Generator at the slack bus 1 serving a load at bus 2 over one line."""
    return NetworkCase(
        name='two_bus',
        buses=(1, 2),
        lines=(Line(1, 2, susceptance=10.0, limit=limit), Line(1, 2, susceptance=10.0, limit=1000.0)),
        generators=(Generator(bus=1, p_min=0.0, p_max=500.0, cost_quadratic=0.01, cost_linear=10.0),),
        loads=(Load(bus=2, demand=demand),),
        shed_quadratic=np.array([[0.1]]),
        shed_linear=np.array([1000.0]),
        slack_bus=1,
    )


def make_ring() -> NetworkCase:
    """Three buses in a ring with equal susceptances."""
    return NetworkCase(
        name='ring',
        buses=(1, 2, 3),
        lines=(Line(1, 2, 10.0, 100.0), Line(2, 3, 10.0, 100.0), Line(1, 3, 10.0, 100.0)),
        generators=(Generator(1, 0.0, 200.0, 0.05, 10.0), Generator(2, 0.0, 200.0, 0.05, 20.0)),
        loads=(Load(3, 120.0),),
        shed_quadratic=np.array([[0.1]]),
        shed_linear=np.array([1000.0]),
        slack_bus=1,
    )


def make_two_area(limit: float = 75.0) -> NetworkCase:
    """Cheap generator and a load at bus 1, expensive generator and a load at bus 2.

    Two equal parallel lines share the import of bus 2. Bus 2 imports its whole
    demand of 150 MW, so the first line, rated half of that, congests once the
    load grows and bus 2 is then priced by its own generator.
    """
    return NetworkCase(
        name='two_area',
        buses=(1, 2),
        lines=(Line(1, 2, susceptance=10.0, limit=limit), Line(1, 2, susceptance=10.0, limit=1000.0)),
        generators=(Generator(1, 0.0, 500.0, 0.01, 10.0), Generator(2, 0.0, 500.0, 0.01, 30.0)),
        loads=(Load(1, 50.0), Load(2, 150.0)),
        shed_quadratic=np.diag([0.1, 0.1]),
        shed_linear=np.array([1000.0, 1000.0]),
        slack_bus=1,
    )


@pytest.fixture
def two_bus():
    return make_two_bus()


@pytest.fixture
def congested_two_bus():
    return make_two_bus(limit=50.0)


@pytest.fixture
def ring():
    return make_ring()


@pytest.fixture
def workdirs(tmp_path):
    out = tmp_path / 'out'
    cache = tmp_path / 'cache'
    return out, cache


@pytest.fixture
def pjm_case():
    with open(CASES_DIR / 'case5_pjm.yaml') as f:
        return NetworkCase.from_dict(yaml.safe_load(f), name='case5_pjm')


@pytest.fixture
def two_area():
    return make_two_area()


@pytest.fixture
def desk_case():
    with open(CASES_DIR / 'case3_desk.yaml') as f:
        return NetworkCase.from_dict(yaml.safe_load(f), name='case3_desk')


@pytest.fixture
def pjm_scenario(pjm_case):
    with open(SCENARIOS_DIR / 'pjm_line15.yaml') as f:
        return ScenarioSpec.from_dict(yaml.safe_load(f), case=pjm_case, name='pjm_line15')


def make_hypotheses(case: NetworkCase, spec: ScenarioSpec, hypotheses: Optional[str] = None,
                    grid_points: int = 0) -> HypothesisSet:
    """Nominal and outage atlases of a case, optionally prebuilt on a grid over the scenario's box."""
    nominal = assemble_qp(case)
    lower, upper = spec.box(case)

    def atlas(qp):
        if grid_points:
            return build_atlas(qp, sample_box(lower, upper, grid_points=grid_points), quarantine=True)
        return RegionAtlas(qp)

    outages = InputsHandler.parse_hypotheses(hypotheses, case)
    return HypothesisSet.numbered(atlas(nominal),
                                  [(outage, atlas(apply_outage(nominal, case, outage)), label)
                                   for outage, label in outages],
                                  spec.noise_model(case))
