"""
Tests for lmpwatch.src.bench
"""
from dataclasses import replace

import pytest

from lmpwatch.src.bench import (CalibrationReport, CalibrationRow, calibration_row, estimate_arl,
                                estimate_arl_sweep, evaluate, evaluate_sweep, format_table, occupancy_kl,
                                performance_row, pick_threshold, resolve_workers, threshold_choice)
from lmpwatch.src.detector import DetectionOutcome, HypothesisSet
from lmpwatch.src.errors import InputError, ThresholdRangeError
from lmpwatch.src.mpp import RegionAtlas
from lmpwatch.src.netmodel import OutageSpec, apply_outage, assemble_qp
from lmpwatch.src.stream import ScenarioSpec, simulate

from tests.conftest import make_hypotheses


def alarm(tau, identified=1):
    return DetectionOutcome(alarm=True, tau=tau, identified=identified)


NO_ALARM = DetectionOutcome(alarm=False, tau=None, identified=0)


def report(*arls):
    rows = [CalibrationRow(eta=10.0 * (i + 1), arl=arl, arl_half_width=1.0, censored_fraction=0.0,
                           false_alarm_probability=1.0, false_alarm_half_width=0.0, trajectories=10, t_max=1000)
            for i, arl in enumerate(arls)]
    return CalibrationReport(rows=rows, trajectories=10, t_max=1000)


def test_calibration_row_censors_silent_runs():
    row = calibration_row([alarm(10), alarm(30), NO_ALARM], eta=5.0, t_max=100)
    assert row.arl == pytest.approx((10 + 30 + 100) / 3)
    assert row.censored_fraction == pytest.approx(1 / 3)
    assert row.false_alarm_probability == pytest.approx(2 / 3)
    assert row.arl_half_width > 0


def test_performance_row_classifies_outcomes():
    outcomes = [alarm(3), alarm(12, identified=1), alarm(15, identified=2), alarm(60), NO_ALARM]
    row = performance_row(outcomes, eta=5.0, change_point=10, horizon=50, true_id=1)
    assert row.false_detection == pytest.approx(0.2)
    assert row.successful_detection == pytest.approx(0.4)
    assert row.successful_identification == pytest.approx(0.2)
    assert row.miss == pytest.approx(0.4)
    assert row.average_delay == pytest.approx(3.5)
    assert row.median_delay == pytest.approx(3.5)


def test_alarm_at_change_point_counts_as_detection():
    row = performance_row([alarm(10)], eta=5.0, change_point=10, horizon=50, true_id=1)
    assert row.successful_detection == 1.0
    assert row.average_delay == 0.0


def test_threshold_choice():
    assert pick_threshold(report(50.0, 120.0, 400.0), 100.0) == 20.0
    assert pick_threshold(report(50.0, 120.0, 400.0), 120.0) == 20.0
    low = threshold_choice(report(50.0, 120.0), 10.0)
    assert low.eta == 10.0
    assert low.note
    with pytest.raises(ThresholdRangeError):
        threshold_choice(report(50.0, 120.0), 1000.0)


def test_resolve_workers():
    assert resolve_workers(3) == 3
    assert resolve_workers(0) >= 1


@pytest.fixture
def ring_setup(ring):
    nominal = assemble_qp(ring)
    spec = ScenarioSpec(case_ref='ring', perturbed_loads=(0,), sigma=3.0, horizon=30, seed=0, name='ring_walk',
                        outage=OutageSpec('line', 0), change_point=15, xi_bounds=(40.0,))
    hypotheses = [(OutageSpec('line', k), RegionAtlas(apply_outage(nominal, ring, OutageSpec('line', k))),
                   OutageSpec('line', k).label(ring)) for k in (0, 2)]
    hset = HypothesisSet.numbered(RegionAtlas(nominal), hypotheses, spec.noise_model(ring))
    return hset, spec


def test_sweep_is_reproducible(ring, ring_setup):
    hset, spec = ring_setup
    a = estimate_arl_sweep(hset, ring, spec, [2.0, 4.0], n_traj=4, t_max=25, seed=3)
    b = estimate_arl_sweep(hset, ring, spec, [2.0, 4.0], n_traj=4, t_max=25, seed=3)
    assert a.to_frame().equals(b.to_frame())
    assert [row.eta for row in a.rows] == [2.0, 4.0]
    # a larger threshold never alarms earlier on the same trajectories
    assert a.rows[1].arl >= a.rows[0].arl
    single = estimate_arl(hset, ring, spec, 4.0, n_traj=4, t_max=25, seed=3)
    assert single.arl == pytest.approx(a.rows[1].arl)


def test_evaluation_rates_add_up(ring, ring_setup):
    hset, spec = ring_setup
    performance = evaluate_sweep(hset, ring, spec, [1.0, 3.0], n_traj=4, seed=1)
    for row in performance.rows:
        assert row.false_detection + row.successful_detection + row.miss == pytest.approx(1.0)
        assert row.successful_identification <= row.successful_detection
    single = evaluate(hset, ring, spec, 3.0, n_traj=4, seed=1)
    assert single.successful_detection == performance.rows[1].successful_detection
    assert single.false_detection == performance.rows[1].false_detection
    table = format_table(None, performance)
    assert table.splitlines()[0].split('|')[0].strip() == 'eta'
    assert len(table.splitlines()) == 4


def test_evaluation_needs_an_outage(ring, ring_setup):
    hset, spec = ring_setup
    with pytest.raises(InputError):
        evaluate_sweep(hset, ring, spec.without_outage(), [1.0], n_traj=1)


def test_occupancy_kl_is_nonnegative(ring, ring_setup):
    hset, spec = ring_setup
    stream = simulate(spec, ring, hset.nominal, hset[1].atlas)
    assert occupancy_kl(hset, stream, 1, start=spec.change_point) >= 0.0


SWEEP_ETAS = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0]


@pytest.mark.slow
def test_pjm_rates_follow_the_threshold(pjm_case, pjm_scenario):
    hset = make_hypotheses(pjm_case, pjm_scenario, grid_points=41)
    calibration = estimate_arl_sweep(hset, pjm_case, pjm_scenario, SWEEP_ETAS, n_traj=200, t_max=1000, workers=0)
    performance = evaluate_sweep(hset, pjm_case, pjm_scenario, SWEEP_ETAS, n_traj=200, seed=10000, workers=0)

    for lower, higher in zip(calibration.rows, calibration.rows[1:]):
        assert higher.arl >= lower.arl
        assert higher.false_alarm_probability <= lower.false_alarm_probability
    for lower, higher in zip(performance.rows, performance.rows[1:]):
        assert higher.false_detection <= lower.false_detection
        assert higher.successful_detection >= lower.successful_detection - lower.detection_half_width
        assert higher.average_delay >= lower.average_delay - lower.average_delay_half_width
        assert higher.median_delay >= lower.median_delay - 1.0

    at_50 = performance.rows[SWEEP_ETAS.index(50.0)]
    assert at_50.successful_detection >= 0.95
    assert at_50.successful_identification >= 0.6


@pytest.mark.slow
def test_pjm_outage_replays_alarm_after_the_change(pjm_case, pjm_scenario):
    hset = make_hypotheses(pjm_case, pjm_scenario, grid_points=41)
    row = evaluate(hset, pjm_case, pjm_scenario, 50.0, n_traj=100, seed=20000, workers=0)
    assert row.false_detection <= 0.05
    assert row.median_delay <= 100.0


def test_simulated_box_must_match_the_detector(ring, ring_setup):
    hset, spec = ring_setup
    with pytest.raises(InputError):
        estimate_arl_sweep(hset, ring, replace(spec.without_outage(), xi_bounds=(20.0,)), [1.0], n_traj=1, t_max=5)
