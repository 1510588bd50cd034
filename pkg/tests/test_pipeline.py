"""Estimate replay over logs: both airflow routes, metrics, config."""

import numpy as np
import pytest

from windest import logio, lstm, pipeline
from windest.logio import ESTIMATE_COLUMNS
from windest.whisker import default_rig
from windest.pipeline import (
    EstimatorConfig,
    airflow_rms,
    config_from_dict,
    config_to_dict,
    driver_angles,
    pseudo_airflow,
    run_estimate,
    training_block,
    truth_airflow_body,
    truth_drag,
    window_mask,
)


@pytest.fixture(scope="module")
def hover_estimate(hover_clean):
    log, sc = hover_clean
    cfg = EstimatorConfig()
    t, table = run_estimate(log, cfg)
    return log, sc, cfg, t, table


@pytest.fixture(scope="module")
def circle_estimate(circle3_clean):
    log, sc = circle3_clean
    cfg = EstimatorConfig()
    t, table = run_estimate(log, cfg)
    return log, sc, cfg, t, table


def hold_window(sc, lead=2.0, tail=1.0):
    return (sc.plan.t_execute + lead, sc.plan.t_land - tail)


def test_estimate_schema(hover_estimate):
    log, _, _, t, table = hover_estimate
    assert table.shape == (t.shape[0], len(ESTIMATE_COLUMNS))
    assert np.all(np.diff(t) > 0)
    assert np.all(np.isfinite(table))
    assert t.shape[0] == log["whisker"].t.shape[0]


def test_hover_estimates_stay_quiet(hover_estimate):
    _, sc, _, t, table = hover_estimate
    mask = window_mask(t, hold_window(sc))
    wind = table[mask, 3:6]
    touch = table[mask, 0:3]
    assert np.abs(wind).max() < 0.1
    assert np.abs(touch).max() < 0.1
    assert np.abs(table[mask, 9:12]).max() < 0.05  # drag of ~zero airflow


def test_circle_airflow_tracking(circle_estimate):
    log, sc, _, t, table = circle_estimate
    window = hold_window(sc, lead=4.0)
    err = airflow_rms(log, t, table, window=window)
    assert err.shape == (3,)
    assert np.all(err < 0.3)
    mask = window_mask(t, window)
    speed = np.linalg.norm(table[mask, 6:9], axis=1)
    assert np.median(speed) == pytest.approx(3.0, rel=0.1)


def test_circle_drag_magnitude(circle_estimate):
    _, sc, _, t, table = circle_estimate
    mask = window_mask(t, hold_window(sc, lead=4.0))
    drag = np.linalg.norm(table[mask, 9:12], axis=1)
    assert np.median(drag) == pytest.approx(1.23, rel=0.15)


def test_circle_wind_stays_small(circle_estimate):
    _, sc, _, t, table = circle_estimate
    mask = window_mask(t, hold_window(sc, lead=4.0))
    assert np.abs(table[mask, 3:6]).max() < 0.3


def test_lstm_route_matches_schema(hover_clean):
    log, _ = hover_clean
    cfg = EstimatorConfig()
    weights = lstm.init_params(np.random.default_rng(0))
    t, table = run_estimate(log, cfg, source="lstm", weights=weights)
    assert table.shape == (t.shape[0], len(ESTIMATE_COLUMNS))
    assert np.all(np.isfinite(table))


def test_run_estimate_source_validation(hover_clean):
    log, _ = hover_clean
    cfg = EstimatorConfig()
    with pytest.raises(ValueError, match="source"):
        run_estimate(log, cfg, source="magic")
    with pytest.raises(ValueError, match="weights"):
        run_estimate(log, cfg, source="lstm")


def test_driver_angles_wrapper(hover_clean):
    log, sc = hover_clean
    n_sensors = len(default_rig())
    t, theta, accept = driver_angles(log, EstimatorConfig())
    assert theta.shape == (t.shape[0], n_sensors, 2)
    assert accept.shape == (t.shape[0], n_sensors)
    hold = window_mask(t, hold_window(sc))
    assert np.all(accept[hold])
    assert np.nanmax(np.abs(theta[hold])) < 1e-4


def test_pseudo_airflow_stream(hover_clean):
    log, _ = hover_clean
    cfg = EstimatorConfig()
    params = lstm.init_params(np.random.default_rng(1))
    t, vinf = pseudo_airflow(log, cfg, params)
    assert vinf.shape == (t.shape[0], 3)
    assert np.all(np.isfinite(vinf))


def test_training_block_streams(circle3_clean):
    log, sc = circle3_clean
    cfg = EstimatorConfig()
    feats, labels = training_block(log, cfg)
    assert feats.shape[0] == labels.shape[0]
    assert feats.shape[1] == 20
    assert labels.shape[1] == 3
    # labels carry the commanded airspeed during the hold
    rs = logio.resample_to_clock(log, "whisker")
    t_kept = rs.t[rs.t >= rs.t[0] + 1.0]
    hold = window_mask(t_kept, hold_window(sc, lead=4.0))
    speed = np.linalg.norm(labels[hold], axis=1)
    assert np.median(speed) == pytest.approx(3.0, rel=0.05)


def test_truth_airflow_matches_velocity(circle3_clean):
    log, sc = circle3_clean
    tr = log["truth"]
    window = hold_window(sc, lead=4.0)
    t_q = tr.t[window_mask(tr.t, window)]
    vinf = truth_airflow_body(log, t_q)
    # still air: |v_inf| equals ground speed
    v = pipeline.truth_cols(log, t_q, "vx", "vy", "vz")
    assert np.allclose(np.linalg.norm(vinf, axis=1), np.linalg.norm(v, axis=1), atol=1e-9)


def test_truth_drag_magnitude(circle3_clean):
    log, sc = circle3_clean
    cfg = EstimatorConfig()
    tr = log["truth"]
    t_q = tr.t[window_mask(tr.t, hold_window(sc, lead=4.0))]
    drag = truth_drag(log, t_q, cfg.vehicle)
    assert np.median(np.linalg.norm(drag, axis=1)) == pytest.approx(1.23, rel=0.05)


def test_truth_query_before_start_raises(circle3_clean):
    log, _ = circle3_clean
    with pytest.raises(ValueError):
        pipeline.truth_sampled(log, np.array([-1.0]))


def test_config_round_trip(tmp_path):
    cfg = EstimatorConfig(gate=True)
    cfg.process.wind = 0.75
    cfg.meas.whisker = 0.007
    cfg.driver.alpha = 0.25
    path = tmp_path / "estimator.cfg"
    logio.save_config(config_to_dict(cfg), path, header="estimator settings")
    d = logio.parse_config(path)
    back = config_from_dict(d)
    assert back.vehicle.mass == pytest.approx(cfg.vehicle.mass)
    assert back.vehicle.mu1 == pytest.approx(cfg.vehicle.mu1)
    assert back.vehicle.mu2 == pytest.approx(cfg.vehicle.mu2)
    assert np.allclose(back.vehicle.inertia, cfg.vehicle.inertia)
    assert back.process.wind == pytest.approx(0.75)
    assert back.meas.whisker == pytest.approx(0.007)
    assert back.driver.alpha == pytest.approx(0.25)
    assert back.gate is True
    assert len(back.rig) == len(cfg.rig)
    for a, b in zip(back.rig.mounts, cfg.rig.mounts):
        assert a.name == b.name
        assert np.allclose(a.r, b.r)
        assert np.allclose(a.rot, b.rot)
        assert a.polarity == b.polarity
