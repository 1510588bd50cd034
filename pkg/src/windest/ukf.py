"""Error-state unscented filter for wind, drag and touch-force estimation.

The 18-dimensional error state stacks

    [0:3]   position (world)
    [3:6]   attitude error (generalized Rodrigues parameters about q_ref)
    [6:9]   velocity (world)
    [9:12]  body rates
    [12:15] touch force (world)
    [15:18] wind velocity (world)

with a reference quaternion carried alongside.  Touch force and wind
evolve as random walks; the dynamics model ties velocity to thrust,
polynomial drag on (wind - velocity), gravity and the touch force, which
is what renders the two disturbances separable once airflow sensing is
fused.  The attitude error is folded into the reference quaternion after
every measurement update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from . import geometry, vehicle, whisker
from .geometry import (
    UtParams,
    compose_mrp,
    mrp_error,
    mrp_from_quat,
    quat_conjugate,
    quat_multiply,
    quat_normalize,
    sigma_points,
)

IDX_P = slice(0, 3)
IDX_A = slice(3, 6)
IDX_V = slice(6, 9)
IDX_W = slice(9, 12)
IDX_F = slice(12, 15)
IDX_WIND = slice(15, 18)
STATE_DIM = 18

GATE_QUANTILE = 0.997
MAX_PREDICT_DT = 0.1  # s, one Euler step stays accurate below this


@dataclass
class BeliefState:
    """Filter belief: reference quaternion + error-state mean/covariance."""

    q_ref: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q_ref = quat_normalize(self.q_ref)
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.mean.shape != (STATE_DIM,) or self.cov.shape != (STATE_DIM, STATE_DIM):
            raise ValueError("belief must be 18-dimensional")

    def copy(self):
        return BeliefState(self.q_ref.copy(), self.mean.copy(), self.cov.copy(), self.t)

    def attitude(self):
        """Full attitude estimate (reference composed with the error mean)."""
        return compose_mrp(self.q_ref, self.mean[IDX_A])


@dataclass
class ProcessNoise:
    """Continuous-time process noise densities (diagonal), scaled by dt."""

    pos: float = 1e-8  # m^2/s
    att: float = 1e-8  # rad^2/s
    vel: float = 1e-6  # (m/s)^2/s
    gyro: float = 1e-5  # (rad/s)^2/s
    touch: float = 1.0  # N^2/s
    wind: float = 0.5  # (m/s)^2/s

    def matrix(self, dt):
        d = np.empty(STATE_DIM)
        d[IDX_P] = self.pos
        d[IDX_A] = self.att
        d[IDX_V] = self.vel
        d[IDX_W] = self.gyro
        d[IDX_F] = self.touch
        d[IDX_WIND] = self.wind
        return np.diag(d * dt)


@dataclass
class OdometryMeasurement:
    """Pose/twist measurement: position, attitude, velocity, body rates."""

    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    cov: np.ndarray  # (12, 12), ordered [p, attitude error, v, omega]

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.q = quat_normalize(self.q)
        self.v = np.asarray(self.v, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (12, 12):
            raise ValueError("odometry covariance must be 12x12")


@dataclass
class FilterOutput:
    """Physical quantities read out of a belief."""

    touch: np.ndarray  # world [N]
    wind: np.ndarray  # world [m/s]
    v_inf_body: np.ndarray  # relative airflow, body [m/s]
    drag: np.ndarray  # world [N]


def init_belief(t, odo: OdometryMeasurement, p0=None, sigma_touch=2.0, sigma_wind=2.0):
    """Belief anchored at the first odometry sample, disturbances at zero."""
    mean = np.zeros(STATE_DIM)
    mean[IDX_P] = odo.p
    mean[IDX_V] = odo.v
    mean[IDX_W] = odo.omega
    if p0 is None:
        p0 = np.zeros((STATE_DIM, STATE_DIM))
        p0[0:12, 0:12] = odo.cov
        p0[IDX_F, IDX_F] = sigma_touch**2 * np.eye(3)
        p0[IDX_WIND, IDX_WIND] = sigma_wind**2 * np.eye(3)
    return BeliefState(odo.q, mean, np.asarray(p0, dtype=float), t=float(t))


def _fold_reference(belief: BeliefState):
    """Zero the attitude-error mean by composing it onto the reference.

    First-order reset: covariance is left unchanged.
    """
    e = belief.mean[IDX_A]
    if e @ e > 0.0:
        belief.q_ref = compose_mrp(belief.q_ref, e)
        belief.mean[IDX_A] = 0.0
    return belief


def predict(
    belief: BeliefState,
    u: vehicle.WrenchInput,
    dt: float,
    noise: ProcessNoise,
    params: vehicle.VehicleParams,
    ut: UtParams = UtParams(),
):
    """Process update: propagate sigma points with the vehicle model.

    Each sigma point is advanced one explicit-Euler step (the filter runs
    at command rate, where Euler is adequate); touch force and wind are
    held (random walk).  The new reference quaternion is the propagated
    central point; all points are re-expressed as errors about it.
    """
    if dt < 0.0:
        raise ValueError("negative dt")
    if dt > MAX_PREDICT_DT:
        raise ValueError(f"dt {dt} exceeds single-step limit {MAX_PREDICT_DT}")
    if dt == 0.0:
        return belief.copy()
    sp = sigma_points(belief.mean, belief.cov, ut)
    pts = sp.points
    q = quat_normalize(
        quat_multiply(geometry.quat_from_mrp(pts[:, IDX_A]), belief.q_ref)
    )
    p2, v2, q2, w2 = vehicle.euler_step_arrays(
        pts[:, IDX_P],
        pts[:, IDX_V],
        q,
        pts[:, IDX_W],
        u.thrust,
        np.asarray(u.torque, dtype=float),
        pts[:, IDX_F],
        pts[:, IDX_WIND],
        params,
        dt,
    )
    q_ref = quat_normalize(q2[0])
    a2 = mrp_from_quat(quat_multiply(q2, quat_conjugate(q_ref)))
    out = np.empty_like(pts)
    out[:, IDX_P] = p2
    out[:, IDX_A] = a2
    out[:, IDX_V] = v2
    out[:, IDX_W] = w2
    out[:, IDX_F] = pts[:, IDX_F]
    out[:, IDX_WIND] = pts[:, IDX_WIND]
    mean, cov = geometry.reconstruct(out, sp.wm, sp.wc)
    cov += noise.matrix(dt)
    return BeliefState(q_ref, mean, cov, belief.t + dt)


def _apply_linear_update(belief, innov, h_idx, r_cov, gate):
    """Kalman update for a measurement that reads state block h_idx directly."""
    P = belief.cov
    S = P[h_idx, h_idx] + r_cov
    if gate and not gate_accepts(innov, S):
        return belief, False
    K = np.linalg.solve(S.T, P[:, h_idx].T).T  # P H^T S^-1
    mean = belief.mean + K @ innov
    ikh = np.eye(STATE_DIM)
    ikh[:, h_idx] -= K
    cov = ikh @ P @ ikh.T + K @ r_cov @ K.T
    out = BeliefState(belief.q_ref.copy(), mean, 0.5 * (cov + cov.T), belief.t)
    return _fold_reference(out), True


def gate_accepts(innov, S, quantile=GATE_QUANTILE):
    """Mahalanobis innovation test at the given chi-square quantile."""
    d2 = innov @ np.linalg.solve(S, innov)
    return d2 <= chi2.ppf(quantile, innov.shape[0])


def update_odometry(belief: BeliefState, z: OdometryMeasurement, gate=False):
    """Fuse a pose/twist measurement (linear in the error state).

    The attitude part is converted to error parameters about the current
    reference.  Returns (belief, accepted).
    """
    z_att = mrp_error(z.q, belief.q_ref)
    z_vec = np.concatenate([z.p, z_att, z.v, z.omega])
    innov = z_vec - belief.mean[0:12]
    return _apply_linear_update(belief, innov, slice(0, 12), z.cov, gate)


def _ut_update(belief, z, r_cov, h_batch, ut, gate):
    """Unscented measurement update with vectorized measurement map h_batch.

    h_batch maps stacked sigma points (m, 18) plus the reference
    quaternion to stacked predicted measurements (m, k).
    """
    sp = sigma_points(belief.mean, belief.cov, ut)
    ys = h_batch(sp.points, belief.q_ref)
    y_mean = sp.wm @ ys
    dy = ys - y_mean
    dx = sp.points - belief.mean
    S = dy.T @ (sp.wc[:, None] * dy) + r_cov
    S = 0.5 * (S + S.T)
    innov = z - y_mean
    if gate and not gate_accepts(innov, S):
        return belief, False
    cross = dx.T @ (sp.wc[:, None] * dy)
    K = np.linalg.solve(S.T, cross.T).T
    mean = belief.mean + K @ innov
    cov = belief.cov - K @ S @ K.T
    out = BeliefState(belief.q_ref.copy(), mean, 0.5 * (cov + cov.T), belief.t)
    return _fold_reference(out), True


def update_airflow(
    belief: BeliefState,
    theta,
    r_sigma,
    rig: whisker.WhiskerRig,
    ut: UtParams = UtParams(),
    gate=False,
):
    """Fuse whisker deflection angles, shape (n_sensors, 2).

    Rows with any non-finite entry are dropped (sensor invalid this
    tick).  r_sigma is the per-angle noise standard deviation (scalar or
    per-sensor array).  Returns (belief, accepted).
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (len(rig), 2):
        raise ValueError(f"expected {(len(rig), 2)} angles, got {theta.shape}")
    valid = np.all(np.isfinite(theta), axis=1)
    if not np.any(valid):
        return belief.copy(), False
    mounts = [m for m, ok in zip(rig.mounts, valid) if ok]
    sub = whisker.WhiskerRig(mounts)
    z = theta[valid].ravel()
    sig = np.broadcast_to(np.asarray(r_sigma, dtype=float), (len(rig),))[valid]
    r_cov = np.diag(np.repeat(sig**2, 2))

    def h_batch(pts, q_ref):
        q = quat_normalize(quat_multiply(geometry.quat_from_mrp(pts[:, IDX_A]), q_ref))
        pred = whisker.rig_predict(q, pts[:, IDX_V], pts[:, IDX_W], pts[:, IDX_WIND], sub)
        return pred.reshape(pts.shape[0], -1)

    return _ut_update(belief, z, r_cov, h_batch, ut, gate)


def update_pseudo_airflow(
    belief: BeliefState,
    v_inf_body,
    r_cov,
    ut: UtParams = UtParams(),
    gate=False,
):
    """Fuse a body-frame relative-airflow vector from an external regressor.

    The predicted measurement rotates (wind - velocity) into the body
    frame, so the update tightens wind, velocity and attitude jointly.
    """
    z = np.asarray(v_inf_body, dtype=float)
    r_cov = np.asarray(r_cov, dtype=float)
    if r_cov.ndim == 0:
        r_cov = float(r_cov) * np.eye(3)
    elif r_cov.ndim == 1:
        r_cov = np.diag(r_cov)

    def h_batch(pts, q_ref):
        q = quat_normalize(quat_multiply(geometry.quat_from_mrp(pts[:, IDX_A]), q_ref))
        qc = q.copy()
        qc[:, 1:] = -qc[:, 1:]
        return geometry.quat_rotate(qc, pts[:, IDX_WIND] - pts[:, IDX_V])

    return _ut_update(belief, z, r_cov, h_batch, ut, gate)


def output(belief: BeliefState, params: vehicle.VehicleParams):
    """Read touch force, wind, body relative airflow and drag out of a belief."""
    q = belief.attitude()
    v_inf_w = belief.mean[IDX_WIND] - belief.mean[IDX_V]
    drag = vehicle.drag_force(v_inf_w, params)
    v_inf_b = geometry.quat_rotate(quat_conjugate(q), v_inf_w)
    return FilterOutput(
        touch=belief.mean[IDX_F].copy(),
        wind=belief.mean[IDX_WIND].copy(),
        v_inf_body=v_inf_b,
        drag=drag,
    )
