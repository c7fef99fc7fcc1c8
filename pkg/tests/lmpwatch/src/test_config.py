"""
Tests for lmpwatch.config, lmpwatch.src.config_loader and lmpwatch.src.run_config
"""
import os
from dataclasses import replace

import pytest

from lmpwatch.config import Config
from lmpwatch.src import var
from lmpwatch.src.config_loader import load_yaml_config
from lmpwatch.src.errors import InputError
from lmpwatch.src.run_config import DEFAULT_SCENARIO, RunConfig


def test_config_lookup():
    cnf = Config({'TRAJECTORIES': 10, 'SECRET': var.UNDEFINED})
    assert cnf.TRAJECTORIES == 10
    with pytest.raises(ValueError):
        cnf.SECRET
    with pytest.raises(AttributeError):
        cnf.NOT_A_KEY


def test_config_replace_skips_unset_flags():
    cnf = Config({'TRAJECTORIES': 10, 'T_MAX': 50}).replace(TRAJECTORIES=None, T_MAX=80)
    assert cnf.TRAJECTORIES == 10
    assert cnf.T_MAX == 80
    with pytest.raises(AttributeError):
        cnf.replace(UNKNOWN=1)


def test_yaml_values_become_env_vars(tmp_path, monkeypatch):
    for name in ('LMPWATCH_TRAJECTORIES', 'LMPWATCH_ETAS', 'LMPWATCH_ACTIVE_TOL'):
        # registers the variable so teardown removes what the loader sets
        monkeypatch.setenv(name, '')
        monkeypatch.delenv(name)
    path = tmp_path / 'lmpwatch.yaml'
    path.write_text('lmpwatch:\n'
                    '  bench:\n'
                    '    trajectories: 50\n'
                    '    etas: [5, 15]\n'
                    'tolerances:\n'
                    '  activeSet: 1.0e-6\n'
                    'unknown:\n'
                    '  key: 1\n')
    assert load_yaml_config(str(path)) == 3
    assert os.environ['LMPWATCH_TRAJECTORIES'] == '50'
    assert os.environ['LMPWATCH_ETAS'] == '5,15'
    assert float(os.environ['LMPWATCH_ACTIVE_TOL']) == 1e-6


def test_env_vars_win_over_yaml(tmp_path, monkeypatch):
    monkeypatch.setenv('LMPWATCH_T_MAX', '77')
    path = tmp_path / 'lmpwatch.yaml'
    path.write_text('bench:\n  tMax: 900\n')
    assert load_yaml_config(str(path)) == 0
    assert os.environ['LMPWATCH_T_MAX'] == '77'


def test_missing_yaml_is_ignored(tmp_path):
    assert load_yaml_config(str(tmp_path / 'absent.yaml')) == 0


def _cnf(**overrides):
    return Config(var.all_variables).replace(**overrides)


def test_run_config_flags_win():
    rc = RunConfig.from_config(_cnf(TRAJECTORIES=1000), trajectories=25, etas='3,1,2', case=None)
    assert rc.trajectories == 25
    assert rc.etas == (3.0, 1.0, 2.0)
    assert rc.sorted_etas == [1.0, 2.0, 3.0]
    assert rc.scenario == DEFAULT_SCENARIO


def test_fast_mode_uses_reduced_trajectories():
    rc = RunConfig.from_config(_cnf(FAST_TRAJECTORIES=40), fast=True)
    assert rc.trajectories == 40
    rc = RunConfig.from_config(_cnf(FAST_TRAJECTORIES=40), fast=True, trajectories=7)
    assert rc.trajectories == 7


def test_detect_needs_one_threshold_source():
    rc = RunConfig.from_config(_cnf(), stream='stream.csv')
    with pytest.raises(InputError):
        rc.validate('detect')
    with pytest.raises(InputError):
        replace(rc, eta=10.0, target_arl=500.0).validate('detect')
    replace(rc, eta=10.0).validate('detect')
    with pytest.raises(InputError):
        replace(rc, eta=10.0, stream=None).validate('detect')


def test_validation_of_ranges():
    rc = RunConfig.from_config(_cnf())
    with pytest.raises(InputError):
        replace(rc, trajectories=0).validate('bench')
    with pytest.raises(InputError):
        replace(rc, etas=(10.0, -1.0)).validate('calibrate')
    with pytest.raises(InputError):
        replace(rc, channel='flows').validate('regions')
    with pytest.raises(InputError):
        RunConfig.from_config(_cnf(), etas='10,x')


def test_run_config_serializes():
    data = RunConfig.from_config(_cnf(), seed=4).to_dict()
    assert data['seed'] == 4
    assert isinstance(data['etas'], list)
