"""Whisker sensing chain: field decode, drag/deflection model, rig."""

import numpy as np
import pytest

from windest import whisker as wk
from windest.geometry import quat_normalize, quat_rotate, quat_conjugate
from windest.whisker import (
    NORTH_UP,
    SOUTH_UP,
    SensorMount,
    body_airflow,
    decode_field,
    default_rig,
    predict_deflection,
    rig_predict,
    sensor_airflow,
    synthesize_field,
    whisker_drag,
)


def test_decode_at_rest():
    assert np.allclose(decode_field([0.0, 0.0, 5.0]), [0.0, 0.0])


def test_decode_known_angle():
    b = [5.0 * np.tan(0.1), 0.0, 5.0]
    th = decode_field(b)
    assert th[1] == pytest.approx(0.1)
    assert th[0] == pytest.approx(0.0)


def test_decode_polarity():
    th_south = decode_field([-1.0, -2.0, -5.0], SOUTH_UP)
    th_north = decode_field([1.0, 2.0, 5.0], NORTH_UP)
    assert np.allclose(th_south, th_north)


def test_decode_bad_polarity():
    with pytest.raises(ValueError):
        decode_field([0.0, 0.0, 5.0], "sideways")


def test_decode_invalid_when_field_reversed():
    # corrected b_z <= 0: magnet out of range, reading unusable
    assert np.all(np.isnan(decode_field([1.0, 2.0, -5.0])))
    assert np.all(np.isnan(decode_field([0.0, 0.0, 0.0])))
    assert np.all(np.isnan(decode_field([1.0, 2.0, 5.0], SOUTH_UP)))


def test_decode_synthesize_round_trip():
    rng = np.random.default_rng(40)
    for pol in (NORTH_UP, SOUTH_UP):
        th = rng.uniform(-1.0, 1.0, size=(50, 2))
        b = synthesize_field(th, pol)
        assert np.allclose(decode_field(b, pol), th, atol=1e-12)


def test_body_airflow_examples():
    assert np.allclose(body_airflow([1, 0, 0, 0], [0, 0, 0], [1, 0, 0]), [-1, 0, 0])
    s = np.sqrt(0.5)
    assert np.allclose(
        body_airflow([s, 0, 0, s], [1, 0, 0], [0, 0, 0]), [0, -1, 0], atol=1e-12
    )
    rng = np.random.default_rng(41)
    q = quat_normalize(rng.normal(size=4))
    v = rng.normal(size=3)
    assert np.allclose(body_airflow(q, v, v), 0.0, atol=1e-12)


def test_sensor_airflow_identity_mount():
    m = SensorMount("s", [0.1, 0.0, 0.0], np.eye(3))
    v = np.array([1.0, 2.0, 3.0])
    assert np.allclose(sensor_airflow(v, np.zeros(3), m), v)


def test_sensor_airflow_sweep_term():
    m = SensorMount("s", [1.0, 0.0, 0.0], np.eye(3))
    out = sensor_airflow(np.zeros(3), np.array([0.0, 0.0, 1.0]), m)
    assert np.allclose(out, [0.0, -1.0, 0.0])


def test_sensor_airflow_matches_hand_evaluation():
    rng = np.random.default_rng(42)
    for _ in range(20):
        q = quat_normalize(rng.normal(size=4))
        rot = np.zeros((3, 3))
        # random rotation matrix via quaternion
        for i, e in enumerate(np.eye(3)):
            rot[:, i] = quat_rotate(q, e)
        m = SensorMount("s", rng.normal(size=3) * 0.2, rot)
        v, w = rng.normal(size=3), rng.normal(size=3)
        expect = rot.T @ (v - np.cross(w, m.r))
        assert np.allclose(sensor_airflow(v, w, m), expect, atol=1e-12)


def test_whisker_drag_zero_input():
    assert np.allclose(whisker_drag([0.0, 0.0, 0.0], 1.2, 1.1, 0.003), 0.0)


def test_whisker_drag_no_axial_force():
    f = whisker_drag([0.0, 0.0, 5.0], 1.2, 1.1, 0.003)
    assert f[2] == 0.0


def test_whisker_drag_quadratic():
    f1 = whisker_drag([1.0, 2.0, 0.0], 1.2, 1.1, 0.003)
    f2 = whisker_drag([2.0, 4.0, 0.0], 1.2, 1.1, 0.003)
    assert np.linalg.norm(f2) == pytest.approx(4.0 * np.linalg.norm(f1))


def test_predict_deflection_zero():
    assert np.allclose(predict_deflection([0.0, 0.0, 0.0], 0.01), [0.0, 0.0])


def test_predict_deflection_example():
    th = predict_deflection([2.0, 0.0, 0.0], 0.01)
    assert th[0] == pytest.approx(0.0)
    assert th[1] == pytest.approx(0.04)


def test_predict_deflection_z_insensitive():
    for w in (-3.0, 0.5, 7.0):
        assert np.allclose(predict_deflection([0.0, 0.0, w], 0.01), [0.0, 0.0])


def test_predict_deflection_magnitude():
    rng = np.random.default_rng(43)
    prev = 0.0
    for s in np.linspace(0.5, 6.0, 12):
        ang = rng.uniform(0, 2 * np.pi)
        v = np.array([s * np.cos(ang), s * np.sin(ang), 0.0])
        th = predict_deflection(v, 0.01)
        assert np.linalg.norm(th) == pytest.approx(0.01 * s * s)
        assert np.linalg.norm(th) > prev
        prev = np.linalg.norm(th)


def test_predict_deflection_equivariance():
    """Rotating the planar airflow rotates the angle pair identically."""
    rng = np.random.default_rng(44)
    v = np.array([1.7, -0.6, 0.0])
    th0 = predict_deflection(v, 0.01)
    for phi in rng.uniform(-np.pi, np.pi, 20):
        c, s = np.cos(phi), np.sin(phi)
        vr = np.array([c * v[0] - s * v[1], s * v[0] + c * v[1], 0.0])
        thr = predict_deflection(vr, 0.01)
        # theta transforms like the (x, y) pair
        expect = np.array([c * th0[0] - s * th0[1], s * th0[0] + c * th0[1]])
        assert np.allclose(thr, expect, atol=1e-12)


def test_composition_consistency():
    """Chained frame maps equal the single-expression evaluation."""
    rng = np.random.default_rng(45)
    m = default_rig().mounts[1]
    for _ in range(20):
        q = quat_normalize(rng.normal(size=4))
        v, w, wind = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
        chained = predict_deflection(
            sensor_airflow(body_airflow(q, wind, v), w, m), m.coeff
        )
        v_inf_s = m.rot.T @ (quat_rotate(quat_conjugate(q), wind - v) - np.cross(w, m.r))
        speed = np.linalg.norm(v_inf_s)
        direct = np.array([-m.coeff * speed * v_inf_s[1], m.coeff * speed * v_inf_s[0]])
        assert np.allclose(chained, direct, atol=1e-12)


def test_mount_validation():
    with pytest.raises(ValueError):
        SensorMount("bad", [0, 0, 0], np.ones((3, 3)))
    with pytest.raises(ValueError):
        SensorMount("bad", [0, 0, 0], np.eye(3), polarity="east_up")


def test_default_rig_spans_all_axes():
    # each sensor is blind along its spine; the sensed in-plane axes of
    # the four mounts together must cover all body directions
    rig = default_rig()
    assert len(rig) == 4
    sensed = np.concatenate([[m.rot[:, 0], m.rot[:, 1]] for m in rig.mounts])
    assert np.linalg.matrix_rank(sensed) == 3


def test_rig_predict_shape_and_batch():
    rig = default_rig()
    rng = np.random.default_rng(46)
    q = quat_normalize(rng.normal(size=4))
    single = rig_predict(q, [1.0, 0, 0], [0, 0, 0.2], [0.5, 0, 0], rig)
    assert single.shape == (4, 2)
    qb = np.tile(q, (6, 1))
    batch = rig_predict(qb, np.tile([1.0, 0, 0], (6, 1)), [0, 0, 0.2], [0.5, 0, 0], rig)
    assert batch.shape == (6, 4, 2)
    assert np.allclose(batch[3], single)


def test_rig_predict_matches_per_mount():
    rig = default_rig()
    rng = np.random.default_rng(47)
    q = quat_normalize(rng.normal(size=4))
    v, w, wind = rng.normal(size=3), rng.normal(size=3) * 0.3, rng.normal(size=3)
    out = rig_predict(q, v, w, wind, rig)
    for i, m in enumerate(rig.mounts):
        expect = predict_deflection(sensor_airflow(body_airflow(q, wind, v), w, m), m.coeff)
        assert np.allclose(out[i], expect, atol=1e-12)
