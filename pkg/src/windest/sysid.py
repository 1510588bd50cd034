"""Identification of the drag polynomial and whisker coefficients.

Drag: during steady translation the projection of (body-frame thrust
minus inertial acceleration) onto the direction of travel isolates the
aerodynamic drag magnitude; thrust itself is recovered from the attitude
needed to hold altitude, f = m g / (cos(roll) cos(pitch)).  Fitting
force against speed with a no-intercept [v, v^2] basis yields (mu1,
mu2).

Whisker coefficient: with no ambient wind the relative airflow at a
mount follows from odometry alone, and each paired sample gives
c = |theta| / (|v_inf| |v_inf_xy|); the per-sensor estimate is the
median over sufficiently fast planar samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, filtfilt

from . import whisker
from .geometry import quat_rotate, quat_conjugate

MIN_PLANAR_SPEED = 0.2  # m/s, coefficient samples below this are discarded
_MIN_CC = 0.2  # reject attitudes where cos(roll) cos(pitch) falls below this


@dataclass
class DragSample:
    speed: float  # |v| or |v_inf| [m/s]
    force: float  # projected drag magnitude [N]


@dataclass
class DragFit:
    mu1: float
    mu2: float
    rms: float  # residual RMS of the fit [N]

    def __call__(self, speed):
        speed = np.asarray(speed, dtype=float)
        return self.mu1 * speed + self.mu2 * speed**2


def roll_pitch_from_quat(q):
    """ZYX roll and pitch of q_WB."""
    w, x, y, z = (float(c) for c in np.asarray(q, dtype=float))
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    pitch = math.asin(max(-1.0, min(1.0, 2.0 * (w * y - z * x))))
    return roll, pitch


def thrust_from_attitude(mass, roll, pitch, gravity=9.81):
    """Thrust needed to hold altitude at the given tilt, f = m g / (cos r cos p)."""
    cc = math.cos(roll) * math.cos(pitch)
    if cc < _MIN_CC:
        raise ValueError(f"attitude too far from level (cos r cos p = {cc:.3f})")
    return mass * gravity / cc


def drag_projection(f_thrust, v_dot_body, e_v_body, mass):
    """Projected drag force sample (N) from body-frame kinematics.

    f_thrust is the scalar thrust along body z, v_dot_body the inertial
    acceleration expressed in the body frame, e_v_body the unit direction
    of travel in the body frame.
    """
    e_v_body = np.asarray(e_v_body, dtype=float)
    resid = np.array([0.0, 0.0, float(f_thrust)]) - mass * np.asarray(v_dot_body, dtype=float)
    return float(resid @ e_v_body)


def drag_sample(f_thrust, v_dot_body, v_body, mass):
    """DragSample from one synchronized odometry instant."""
    v_body = np.asarray(v_body, dtype=float)
    speed = float(np.linalg.norm(v_body))
    if speed < 1e-9:
        raise ValueError("cannot form a drag sample at zero speed")
    return DragSample(speed, drag_projection(f_thrust, v_dot_body, v_body / speed, mass))


def fit_drag_polynomial(samples):
    """No-intercept least squares of force against [speed, speed^2].

    Requires at least 3 samples spanning distinct speeds; raises on a
    rank-deficient (single-speed) design.
    """
    if len(samples) < 3:
        raise ValueError("need at least 3 drag samples")
    v = np.array([s.speed for s in samples])
    f = np.array([s.force for s in samples])
    A = np.column_stack([v, v * v])
    if np.linalg.matrix_rank(A, tol=1e-10 * max(1.0, float(np.abs(A).max()))) < 2:
        raise ValueError("drag samples do not span distinct speeds")
    coef, _, _, _ = np.linalg.lstsq(A, f, rcond=None)
    resid = f - A @ coef
    return DragFit(float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2))))


def identify_sensor_coefficient(thetas, v_inf_sensor, min_planar_speed=MIN_PLANAR_SPEED):
    """Median lumped coefficient from paired (deflection, airflow) samples.

    thetas: (n, 2) deflection angles; v_inf_sensor: (n, 3) sensor-frame
    relative airflow.  Samples whose planar airflow magnitude falls below
    min_planar_speed are discarded; raises if none survive.
    """
    thetas = np.asarray(thetas, dtype=float)
    v = np.asarray(v_inf_sensor, dtype=float)
    speed = np.linalg.norm(v, axis=1)
    planar = np.linalg.norm(v[:, :2], axis=1)
    ok = (planar > min_planar_speed) & np.all(np.isfinite(thetas), axis=1)
    if not np.any(ok):
        raise ValueError("no samples above the planar speed cutoff")
    c = np.linalg.norm(thetas[ok], axis=1) / (speed[ok] * planar[ok])
    return float(np.median(c))


def _lowpass(x, fs, cutoff_hz):
    if x.shape[0] < 15:
        return x
    b, a = butter(2, cutoff_hz / (0.5 * fs))
    return filtfilt(b, a, x, axis=0)


def differentiate_velocity(t, v, cutoff_hz=4.0):
    """Acceleration from sampled velocity: zero-phase low-pass, then gradient."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    fs = 1.0 / np.median(np.diff(t))
    v_f = _lowpass(v, fs, cutoff_hz)
    return np.gradient(v_f, t, axis=0)


def collect_drag_samples(
    t,
    p_q,
    v_world,
    mass,
    gravity=9.81,
    min_speed=0.5,
    max_vertical_ratio=0.35,
    window=None,
    cutoff_hz=4.0,
):
    """Drag samples from an odometry stream (t, quaternion, world velocity).

    Steady-segment selection: planar-dominated motion (|v_z| below
    max_vertical_ratio of the speed), speed above min_speed, and an
    optional (t0, t1) window restricting to the execution phase.
    """
    t = np.asarray(t, dtype=float)
    q = np.asarray(p_q, dtype=float)
    v = np.asarray(v_world, dtype=float)
    a = differentiate_velocity(t, v, cutoff_hz=cutoff_hz)
    samples = []
    for k in range(t.shape[0]):
        if window is not None and not (window[0] <= t[k] <= window[1]):
            continue
        speed = float(np.linalg.norm(v[k]))
        if speed < min_speed or abs(v[k, 2]) > max_vertical_ratio * speed:
            continue
        roll, pitch = roll_pitch_from_quat(q[k])
        try:
            f_thrust = thrust_from_attitude(mass, roll, pitch, gravity)
        except ValueError:
            continue
        qc = quat_conjugate(q[k])
        samples.append(drag_sample(f_thrust, quat_rotate(qc, a[k]), quat_rotate(qc, v[k]), mass))
    return samples


def collect_drag_samples_truth(
    t, q, v, a, thrust, wind, touch, mass, gravity=9.81, min_speed=0.5, window=None
):
    """Drag samples from full dynamics bookkeeping (simulator truth).

    Solves the translational dynamics for the drag force, projects it on
    the relative-airflow direction and pairs it with |v_inf|; exact when
    the inputs are exact, so useful as a noise-free reference arm.
    """
    t = np.asarray(t, dtype=float)
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    thrust = np.asarray(thrust, dtype=float)
    wind = np.asarray(wind, dtype=float)
    touch = np.asarray(touch, dtype=float)
    thrust_w = quat_rotate(q, np.column_stack([np.zeros_like(thrust), np.zeros_like(thrust), thrust]))
    g_w = np.array([0.0, 0.0, -gravity])
    v_inf = wind - v
    speed = np.linalg.norm(v_inf, axis=1)
    samples = []
    for k in range(t.shape[0]):
        if window is not None and not (window[0] <= t[k] <= window[1]):
            continue
        if speed[k] < min_speed:
            continue
        e_travel = -v_inf[k] / speed[k]
        force = float((thrust_w[k] + mass * g_w + touch[k] - mass * a[k]) @ e_travel)
        samples.append(DragSample(float(speed[k]), force))
    return samples


def identify_rig_coefficients(
    t_theta,
    thetas,
    t_odo,
    q_odo,
    v_odo,
    w_odo,
    rig: whisker.WhiskerRig,
    min_planar_speed=MIN_PLANAR_SPEED,
    window=None,
):
    """Per-sensor lumped coefficients from a no-wind flight.

    thetas: (n, n_sensors, 2) offset-corrected deflections on their own
    clock; odometry arrays are sampled onto that clock by zero-order
    hold.  Returns an array of median coefficients.
    """
    t_theta = np.asarray(t_theta, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    idx = np.searchsorted(np.asarray(t_odo, dtype=float), t_theta, side="right") - 1
    keep = idx >= 0
    if window is not None:
        keep &= (t_theta >= window[0]) & (t_theta <= window[1])
    idx = idx[keep]
    thetas = thetas[keep]
    q = np.asarray(q_odo, dtype=float)[idx]
    v = np.asarray(v_odo, dtype=float)[idx]
    w = np.asarray(w_odo, dtype=float)[idx]
    qc = q.copy()
    qc[:, 1:] = -qc[:, 1:]
    v_inf_b = quat_rotate(qc, -v)  # no ambient wind assumed
    coeffs = []
    for i, m in enumerate(rig.mounts):
        v_s = whisker.sensor_airflow(v_inf_b, w, m)
        coeffs.append(identify_sensor_coefficient(thetas[:, i], v_s, min_planar_speed))
    return np.array(coeffs)
