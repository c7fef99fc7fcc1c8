"""
Tests for lmpwatch.src.netmodel
"""
import numpy as np
import pytest

from lmpwatch.src.errors import InputError, StructuralError
from lmpwatch.src.netmodel import (Generator, Line, Load, NetworkCase, OutageSpec, apply_outage, assemble_qp,
                                   compute_ptdf)

from tests.conftest import make_ring


def test_two_bus_ptdf(two_bus):
    # injecting at bus 2 and withdrawing at the slack pushes flow from 2 to 1
    np.testing.assert_allclose(compute_ptdf(two_bus), [[0.0, -1.0]])


def test_ring_splits_flow(ring):
    ptdf = compute_ptdf(ring)
    np.testing.assert_allclose(ptdf[:, 0], 0.0)
    np.testing.assert_allclose(ptdf[:, 1], [-2 / 3, 1 / 3, -1 / 3], atol=1e-12)


def test_ptdf_flows_balance_injections(ring):
    ptdf = compute_ptdf(ring)
    injections = np.array([-120.0, 45.0, 75.0])
    flows = ptdf @ injections
    np.testing.assert_allclose(ring.branch_incidence().T @ flows, injections, atol=1e-9)


def test_qp_layout(ring):
    qp = assemble_qp(ring)
    assert qp.n_vars == 3
    assert qp.n_rows == 1 + 2 * 3 + 2 * 2 + 2 * 1
    assert qp.Lambda.shape == (3, qp.n_rows)
    assert [label.kind for label in qp.row_labels[:3]] == ['balance', 'flow-upper', 'flow-upper']
    np.testing.assert_allclose(qp.A[0], -1.0)
    np.testing.assert_allclose(qp.B[0], -1.0)
    assert qp.b[0] == pytest.approx(-120.0)
    np.testing.assert_allclose(qp.Lambda[:, 0], 1.0)
    np.testing.assert_allclose(qp.Lambda[:, qp.rows('gen-upper')], 0.0)
    np.testing.assert_allclose(qp.Lambda[:, qp.rows('flow-upper')], -compute_ptdf(ring).T)
    np.testing.assert_allclose(qp.Lambda[:, qp.rows('flow-lower')], compute_ptdf(ring).T)


def test_qp_is_frozen(ring):
    qp = assemble_qp(ring)
    with pytest.raises(ValueError):
        qp.A[0, 0] = 1.0


def test_content_hash_follows_data(ring):
    assert assemble_qp(ring).content_hash() == assemble_qp(make_ring()).content_hash()
    cheaper = ring.with_shed_costs(linear=500.0)
    assert assemble_qp(cheaper).content_hash() != assemble_qp(ring).content_hash()


def test_line_outage_drops_flow_rows(ring):
    nominal = assemble_qp(ring)
    post = apply_outage(nominal, ring, OutageSpec('line', 1))
    assert post.structure_id == 'line:1'
    assert post.n_rows == 11
    assert post.n_vars == 3
    assert post.Lambda.shape == (3, 11)
    assert post.line_ids == (0, 2)
    np.testing.assert_array_equal(post.Q, nominal.Q)


def test_line_outage_with_recomputed_ptdf(ring):
    post = apply_outage(assemble_qp(ring), ring, OutageSpec('line', 1), recompute_ptdf=True)
    assert post.n_rows == 11
    assert post.line_ids == (0, 2)
    # without line 2-3 everything bus 2 injects flows over line 1-2
    np.testing.assert_allclose(post.Lambda[:, post.rows('flow-lower')][1], [-1.0, 0.0], atol=1e-12)


def test_generator_outage(ring):
    post = apply_outage(assemble_qp(ring), ring, OutageSpec('generator', 1))
    assert post.structure_id == 'generator:1'
    assert post.n_vars == 2
    assert post.n_rows == 11
    assert post.gen_ids == (0,)


def test_outage_only_on_nominal(ring):
    post = apply_outage(assemble_qp(ring), ring, OutageSpec('line', 0))
    with pytest.raises(InputError):
        apply_outage(post, ring, OutageSpec('line', 1))


def test_islanding_outage_is_rejected(two_bus):
    with pytest.raises(StructuralError):
        apply_outage(assemble_qp(two_bus), two_bus, OutageSpec('line', 0))


def test_disconnected_case_is_rejected():
    with pytest.raises(StructuralError):
        NetworkCase(name='split', buses=(1, 2, 3), lines=(Line(1, 2, 10.0, 100.0),),
                    generators=(Generator(1, 0.0, 100.0, 0.01, 10.0),), loads=(Load(2, 50.0),),
                    shed_quadratic=np.array([[0.1]]), shed_linear=np.array([1000.0]), slack_bus=1)


def test_two_loads_on_one_bus_are_rejected():
    with pytest.raises(InputError):
        NetworkCase(name='double', buses=(1, 2), lines=(Line(1, 2, 10.0, 100.0),),
                    generators=(Generator(1, 0.0, 100.0, 0.01, 10.0),), loads=(Load(2, 50.0), Load(2, 10.0)),
                    shed_quadratic=0.1 * np.eye(2), shed_linear=np.full(2, 1000.0), slack_bus=1)


def test_from_dict_reads_reactance():
    case = NetworkCase.from_dict({
        'buses': [1, 2],
        'lines': [{'from': 1, 'to': 2, 'reactance': 0.05, 'limit': 80}],
        'generators': [{'bus': 1, 'p_max': 100, 'cost_linear': 12, 'cost_quadratic': 0.02}],
        'loads': [{'bus': 2, 'demand': 40}],
    }, name='tiny')
    assert case.lines[0].susceptance == pytest.approx(20.0)
    assert case.slack_bus == 1
    np.testing.assert_allclose(case.shed_linear, [1000.0])
    np.testing.assert_allclose(case.shed_quadratic, [[0.1]])


def test_from_dict_reports_missing_keys():
    with pytest.raises(InputError):
        NetworkCase.from_dict({'buses': [1], 'generators': [{'bus': 1}]})


def test_line_lookup_by_buses(ring):
    assert ring.line_index(3, 1) == 2
    with pytest.raises(InputError):
        ring.line_index(1, 1)


def test_prices_of_any_dual_follow_the_ptdf(pjm_case):
    qp = assemble_qp(pjm_case)
    ptdf = compute_ptdf(pjm_case)
    rng = np.random.default_rng(0)
    for _ in range(20):
        mu = rng.exponential(10.0, size=qp.n_rows)
        expected = mu[qp.rows('balance')[0]] - ptdf.T @ (mu[qp.rows('flow-upper')] - mu[qp.rows('flow-lower')])
        np.testing.assert_allclose(qp.Lambda @ mu, expected, atol=1e-9)
