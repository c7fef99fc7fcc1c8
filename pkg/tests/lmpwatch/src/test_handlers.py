"""
Tests for lmpwatch.src.handlers
"""
import numpy as np
import pandas as pd
import pytest
import yaml

from lmpwatch.src.errors import CacheError, InputError, StructuralError
from lmpwatch.src.handlers.atlas_handler import AtlasHandler
from lmpwatch.src.handlers.inputs_handler import InputsHandler
from lmpwatch.src.handlers.outputs_handler import OutputsHandler
from lmpwatch.src.mpp import build_atlas, sample_box
from lmpwatch.src.netmodel import OutageSpec, apply_outage, assemble_qp

from tests.conftest import CASES_DIR, SCENARIOS_DIR


@pytest.fixture
def inputs():
    return InputsHandler(cases_dir=str(CASES_DIR), scenarios_dir=str(SCENARIOS_DIR))


def test_bundled_case_and_scenario(inputs):
    case = inputs.load_case('case5_pjm')
    assert case.n_buses == 5
    assert case.n_lines == 6
    assert case.slack_bus == 4
    assert inputs.scenario_case_ref('pjm_line15') == 'case5_pjm'
    spec = inputs.load_scenario('pjm_line15', case)
    assert spec.outage == OutageSpec('line', case.line_index(1, 5))
    assert spec.change_point == 500


def test_unknown_case(inputs):
    with pytest.raises(InputError):
        inputs.load_case('case9999')


def test_shed_cost_override():
    handler = InputsHandler(cases_dir=str(CASES_DIR), scenarios_dir=str(SCENARIOS_DIR), shed_linear_cost=500.0)
    case = handler.load_case('case3_desk')
    np.testing.assert_allclose(case.shed_linear, [500.0])


def test_invalid_yaml(tmp_path, inputs):
    path = tmp_path / 'broken.yaml'
    path.write_text('buses: [1, 2\n')
    with pytest.raises(InputError):
        inputs.load_case(str(path))


def test_parse_hypotheses(pjm_case):
    parsed = InputsHandler.parse_hypotheses('line:1-5, line:3 ,gen:2', pjm_case)
    assert [spec for spec, _ in parsed] == [OutageSpec('line', 2), OutageSpec('line', 3),
                                           OutageSpec('generator', 2)]
    assert parsed[0][1] == 'line 1-5'


def test_default_hypotheses_skip_islanding_lines(ring):
    parsed = InputsHandler.parse_hypotheses(None, ring)
    assert [spec.element for spec, _ in parsed] == [0, 1, 2]


def test_bad_hypotheses(pjm_case, two_bus):
    with pytest.raises(InputError):
        InputsHandler.parse_hypotheses('line:x', pjm_case)
    with pytest.raises(InputError):
        InputsHandler.parse_hypotheses('line:3,line:3', pjm_case)
    with pytest.raises(InputError):
        InputsHandler.parse_hypotheses('bus:1', pjm_case)
    with pytest.raises(StructuralError):
        InputsHandler.parse_hypotheses('line:1-2', two_bus)
    assert InputsHandler.parse_hypotheses(None, two_bus) == []


def test_atlas_cache_roundtrip(congested_two_bus, tmp_path):
    qp = assemble_qp(congested_two_bus)
    atlas = build_atlas(qp, sample_box([-100.0], [200.0], grid_points=16))
    handler = AtlasHandler(str(tmp_path))
    path = handler.save(atlas)
    assert path.name.startswith('nominal-')
    assert handler.exists(qp)

    restored = handler.load(assemble_qp(congested_two_bus))
    assert len(restored) == len(atlas)
    for a, b in zip(atlas.regions, restored.regions):
        assert a.active_set == b.active_set
        np.testing.assert_array_equal(a.H, b.H)
        np.testing.assert_array_equal(a.D, b.D)
        np.testing.assert_array_equal(a.lambda_tilde, b.lambda_tilde)


def test_atlas_cache_is_keyed_by_market(congested_two_bus, two_bus, tmp_path):
    handler = AtlasHandler(str(tmp_path))
    handler.save(build_atlas(assemble_qp(congested_two_bus), [[0.0]]))
    assert handler.load(assemble_qp(two_bus)) is None


def test_post_outage_atlas_file_name(ring, tmp_path):
    post = apply_outage(assemble_qp(ring), ring, OutageSpec('line', 1))
    path = AtlasHandler(str(tmp_path)).path_for(post)
    assert path.name.startswith('line_1-')
    assert path.suffix == '.npz'


def test_corrupt_cache_is_reported(two_bus, tmp_path):
    handler = AtlasHandler(str(tmp_path))
    qp = assemble_qp(two_bus)
    handler.path_for(qp).write_bytes(b'not an archive')
    with pytest.raises(CacheError):
        handler.load(qp)


def test_outputs_handler(tmp_path):
    handler = OutputsHandler(str(tmp_path / 'out'))
    frame_path = handler.write_frame('x.csv', pd.DataFrame({'a': [1.0, 0.1]}))
    assert frame_path.read_text() == 'a\n1\n0.1\n'
    yaml_path = handler.write_yaml('x.yaml', {'b': 2, 'a': 1})
    assert list(yaml.safe_load(yaml_path.read_text())) == ['b', 'a']
