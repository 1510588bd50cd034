"""Closed-loop hexarotor flight simulator with sensor synthesis.

Produces multi-rate logs: ground truth at 500 Hz, odometry at 100 Hz,
IMU specific force at 200 Hz, whisker fields at 50 Hz and throttle +
commanded wrench at 200 Hz.  The integrator runs internally at 1 kHz
(RK4) so every channel clock lands on exact ticks; the controller, wind
and touch inputs refresh at 500 Hz.

Wind is ambient flow plus cone-shaped gusts (leaf-blower style: a
centerline speed profile with a cosine falloff toward the cone wall and
an on/off schedule).  Touch forces are piecewise-linear world-frame
pulls/pushes.  A configurable rotor-interference channel can add a
throttle- and airflow-dependent bias to the whisker angles, emulating
propwash the whisker model does not capture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import quat_from_axis_angle, quat_multiply, quat_to_matrix
from .vehicle import VehicleParams, VehicleState
from . import whisker as whisker_mod
from .whisker import WhiskerRig, default_rig
from .logio import FlightLog

SIM_RATE = 1000.0
TRUTH_RATE = 500.0
ODO_RATE = 100.0
IMU_RATE = 200.0
WHISKER_RATE = 50.0
THROTTLE_RATE = 200.0

N_ROTORS = 6
SPIN_DIRS = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
ARM_LENGTH = 0.25  # m
K_THRUST = 4.0  # N per unit throttle
K_MOMENT = 0.016  # N m of yaw moment per N of rotor force

PHASE_TAKEOFF = 0
PHASE_GOTO = 1
PHASE_EXECUTE = 2
PHASE_LAND = 3

THETA_LIMIT = 0.5  # rad, mechanical end stop of the whisker spring
DIVERGENCE_BOUND = 25.0  # m, controller blow-up guard


class SimulationDiverged(RuntimeError):
    """Closed-loop run left the arena; carries the log collected so far."""

    def __init__(self, message, partial_log):
        super().__init__(message)
        self.partial_log = partial_log

# fixed per-mount propwash directions (unit 2-vectors in the angle plane)
INTERFERENCE_DIRS = np.array(
    [[0.6, 0.8], [-0.8, 0.6], [math.sqrt(0.5), -math.sqrt(0.5)], [-0.6, 0.2]]
)


# ---------------------------------------------------------------------------
# wind and touch


@dataclass
class ConeGust:
    """Conical jet: speed profile along the centerline, cosine falloff
    toward the cone wall, active on [t_on, t_off)."""

    origin: np.ndarray
    direction: np.ndarray
    half_angle: float = 0.35  # rad
    speed: float = 3.6  # m/s on the centerline
    t_on: float = 0.0
    t_off: float = math.inf
    profile: np.ndarray | None = None  # optional (k, 2) [distance, speed] table

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n < 1e-9:
            raise ValueError("gust direction must be nonzero")
        self.direction = d / n
        if self.profile is not None:
            self.profile = np.asarray(self.profile, dtype=float)

    def velocity(self, p, t):
        if not (self.t_on <= t < self.t_off):
            return np.zeros(3)
        rel = np.asarray(p, dtype=float) - self.origin
        axial = float(rel @ self.direction)
        if axial < 0.05:
            return np.zeros(3)
        radial = rel - axial * self.direction
        off_axis = math.atan2(float(np.linalg.norm(radial)), axial)
        if off_axis >= self.half_angle:
            return np.zeros(3)
        if self.profile is None:
            s = self.speed
        else:
            s = float(np.interp(axial, self.profile[:, 0], self.profile[:, 1]))
        falloff = math.cos(0.5 * math.pi * off_axis / self.half_angle)
        return s * falloff * self.direction


@dataclass
class WindField:
    ambient: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gusts: list[ConeGust] = field(default_factory=list)

    def __post_init__(self):
        self.ambient = np.asarray(self.ambient, dtype=float)

    def at(self, p, t):
        w = self.ambient.copy()
        for g in self.gusts:
            w += g.velocity(p, t)
        return w


@dataclass
class TouchEvent:
    """World-frame force interpolated linearly from f0 at t0 to f1 at t1."""

    t0: float
    t1: float
    f0: np.ndarray
    f1: np.ndarray

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=float)
        self.f1 = np.asarray(self.f1, dtype=float)
        if self.t1 <= self.t0:
            raise ValueError("touch event needs t1 > t0")


@dataclass
class TouchProfile:
    events: list[TouchEvent] = field(default_factory=list)

    def at(self, t):
        f = np.zeros(3)
        for ev in self.events:
            if ev.t0 <= t < ev.t1:
                f += ev.f0 + (ev.f1 - ev.f0) * ((t - ev.t0) / (ev.t1 - ev.t0))
        return f


# ---------------------------------------------------------------------------
# trajectory primitives (position, velocity, acceleration; all C1)


def _smoothstep5(u):
    """Quintic smoothstep and its first two derivatives on [0, 1]."""
    u = min(max(u, 0.0), 1.0)
    s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    ds = 30.0 * u * u * (1.0 - u) ** 2
    dds = 60.0 * u * (1.0 - 3.0 * u + 2.0 * u * u)
    return s, ds, dds


@dataclass
class CircleTrajectory:
    """Horizontal circle flown at a staircase of speeds.

    Angular rate ramps linearly between speed steps (and from/to rest),
    so the speed setpoint is exact during each hold.
    """

    center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.5]))
    radius: float = 2.5
    speeds: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    hold: float = 8.0
    ramp: float = 2.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        omegas = [s / self.radius for s in self.speeds]
        segs = []  # (t0, duration, omega0, slope, theta0)
        t = 0.0
        theta = 0.0
        prev = 0.0
        for om in omegas:
            segs.append((t, self.ramp, prev, (om - prev) / self.ramp, theta))
            theta += 0.5 * (prev + om) * self.ramp
            t += self.ramp
            segs.append((t, self.hold, om, 0.0, theta))
            theta += om * self.hold
            t += self.hold
            prev = om
        segs.append((t, self.ramp, prev, -prev / self.ramp, theta))
        t += self.ramp
        self._segments = segs
        self.duration = t

    def state(self, t):
        t = min(max(t, 0.0), self.duration)
        seg = self._segments[-1]
        for s in self._segments:
            if t < s[0] + s[1]:
                seg = s
                break
        t0, _, om0, slope, th0 = seg
        tau = t - t0
        om = om0 + slope * tau
        th = th0 + om0 * tau + 0.5 * slope * tau * tau
        ct, st = math.cos(th), math.sin(th)
        r = self.radius
        p = self.center + np.array([r * ct, r * st, 0.0])
        v = r * om * np.array([-st, ct, 0.0])
        a = r * slope * np.array([-st, ct, 0.0]) - r * om * om * np.array([ct, st, 0.0])
        return p, v, a


@dataclass
class LineTrajectory:
    """Straight segment with a trapezoidal (or triangular) speed profile."""

    p0: np.ndarray = field(default_factory=lambda: np.array([-5.0, 0.0, 1.5]))
    p1: np.ndarray = field(default_factory=lambda: np.array([5.0, 0.0, 1.5]))
    vmax: float = 1.5
    accel: float = 0.8

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)
        d = self.p1 - self.p0
        self.length = float(np.linalg.norm(d))
        if self.length < 1e-9:
            raise ValueError("degenerate line")
        self.dir = d / self.length
        v = min(self.vmax, math.sqrt(self.accel * self.length))
        self.v_cruise = v
        self.t_acc = v / self.accel
        self.d_acc = 0.5 * v * self.t_acc
        self.t_cruise = max(0.0, (self.length - 2.0 * self.d_acc) / v)
        self.duration = 2.0 * self.t_acc + self.t_cruise

    def state(self, t):
        t = min(max(t, 0.0), self.duration)
        a_max, v = self.accel, self.v_cruise
        if t < self.t_acc:
            s = 0.5 * a_max * t * t
            sv, sa = a_max * t, a_max
        elif t < self.t_acc + self.t_cruise:
            s = self.d_acc + v * (t - self.t_acc)
            sv, sa = v, 0.0
        else:
            tau = self.duration - t
            s = self.length - 0.5 * a_max * tau * tau
            sv, sa = a_max * tau, -a_max
        return self.p0 + s * self.dir, sv * self.dir, sa * self.dir


@dataclass
class JoystickTrajectory:
    """Seeded wandering velocity profile, cosine-blended between random
    waypoint velocities every wp_period seconds (C1, bounded to a box)."""

    seed: int = 0
    duration: float = 45.0
    vmax: float = 4.0
    wp_period: float = 2.5
    start: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 2.0]))
    box_half: np.ndarray = field(default_factory=lambda: np.array([4.0, 4.0, 1.4]))

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.box_half = np.asarray(self.box_half, dtype=float)
        rng = np.random.default_rng(self.seed)
        n_seg = max(1, int(round(self.duration / self.wp_period)))
        self.duration = n_seg * self.wp_period
        vs = [np.zeros(3)]
        pos = self.start.copy()
        T = self.wp_period
        for k in range(1, n_seg):
            raw = rng.normal(size=3)
            raw[2] *= 0.35
            raw = raw / max(np.linalg.norm(raw), 1e-9)
            v = raw * self.vmax * rng.uniform(0.35, 1.0)
            # steer back toward the box center before committing
            v -= 0.6 * (pos + vs[-1] * 0.5 * T - self.start) / T
            n = np.linalg.norm(v)
            if n > self.vmax:
                v *= self.vmax / n
            vs.append(v)
            pos = pos + 0.5 * T * (vs[-2] + vs[-1])
        vs.append(np.zeros(3))
        self._vs = np.array(vs)
        # segment start positions (cosine blend integrates to the midpoint rule)
        ps = [self.start.copy()]
        for k in range(len(vs) - 1):
            ps.append(ps[-1] + 0.5 * T * (self._vs[k] + self._vs[k + 1]))
        self._ps = np.array(ps)

    def state(self, t):
        t = min(max(t, 0.0), self.duration - 1e-12)
        T = self.wp_period
        k = int(t // T)
        s = t - k * T
        va, vb = self._vs[k], self._vs[k + 1]
        dv = vb - va
        c = math.cos(math.pi * s / T)
        p = self._ps[k] + va * s + dv * (0.5 * s - (T / (2.0 * math.pi)) * math.sin(math.pi * s / T))
        v = va + dv * 0.5 * (1.0 - c)
        a = dv * (math.pi / (2.0 * T)) * math.sin(math.pi * s / T)
        return p, v, a


@dataclass
class HoverTrajectory:
    point: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.5]))
    duration: float = 20.0

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)

    def state(self, t):
        return self.point.copy(), np.zeros(3), np.zeros(3)


@dataclass
class FlightPlan:
    """Idle, vertical takeoff, translation to the start point, the
    mission trajectory, then landing. Setpoints are C1 throughout."""

    traj: object
    idle: float = 1.0
    takeoff: float = 3.0
    land: float = 3.0
    tail: float = 1.0
    ground_xy: np.ndarray | None = None

    def __post_init__(self):
        p_start, _, _ = self.traj.state(0.0)
        p_end, _, _ = self.traj.state(self.traj.duration)
        if self.ground_xy is None:
            self.ground_xy = p_start[:2].copy()
        self.ground_xy = np.asarray(self.ground_xy, dtype=float)
        self._p_ground = np.array([self.ground_xy[0], self.ground_xy[1], 0.0])
        self._p_hover = np.array([self.ground_xy[0], self.ground_xy[1], p_start[2]])
        self._p_start = p_start
        self._p_end = p_end
        dist = float(np.linalg.norm(p_start - self._p_hover))
        self.goto = max(1.5, 1.9 * dist / 1.2)
        self.t_takeoff = self.idle
        self.t_goto = self.t_takeoff + self.takeoff
        self.t_execute = self.t_goto + self.goto
        self.t_land = self.t_execute + self.traj.duration
        self.duration = self.t_land + self.land + self.tail

    def setpoint(self, t):
        """Returns (p, v, a, phase)."""
        if t < self.t_takeoff:
            return self._p_ground.copy(), np.zeros(3), np.zeros(3), PHASE_TAKEOFF
        if t < self.t_goto:
            u = (t - self.t_takeoff) / self.takeoff
            s, ds, dds = _smoothstep5(u)
            dz = self._p_hover[2]
            p = self._p_ground + np.array([0.0, 0.0, s * dz])
            v = np.array([0.0, 0.0, ds * dz / self.takeoff])
            a = np.array([0.0, 0.0, dds * dz / self.takeoff**2])
            return p, v, a, PHASE_TAKEOFF
        if t < self.t_execute:
            u = (t - self.t_goto) / self.goto
            s, ds, dds = _smoothstep5(u)
            d = self._p_start - self._p_hover
            return (
                self._p_hover + s * d,
                d * ds / self.goto,
                d * dds / self.goto**2,
                PHASE_GOTO,
            )
        if t < self.t_land:
            p, v, a = self.traj.state(t - self.t_execute)
            return p, v, a, PHASE_EXECUTE
        if t < self.t_land + self.land:
            u = (t - self.t_land) / self.land
            s, ds, dds = _smoothstep5(u)
            dz = -self._p_end[2]
            p = self._p_end + np.array([0.0, 0.0, s * dz])
            v = np.array([0.0, 0.0, ds * dz / self.land])
            a = np.array([0.0, 0.0, dds * dz / self.land**2])
            return p, v, a, PHASE_LAND
        return (
            np.array([self._p_end[0], self._p_end[1], 0.0]),
            np.zeros(3),
            np.zeros(3),
            PHASE_LAND,
        )


# ---------------------------------------------------------------------------
# controller


@dataclass
class ControllerParams:
    kp_pos: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0, 8.0]))
    kd_pos: np.ndarray = field(default_factory=lambda: np.array([4.0, 4.0, 5.0]))
    ki_pos: np.ndarray = field(default_factory=lambda: np.array([1.2, 1.2, 1.5]))
    int_limit: float = 3.0
    kp_att: np.ndarray = field(default_factory=lambda: np.array([160.0, 160.0, 60.0]))
    kd_att: np.ndarray = field(default_factory=lambda: np.array([24.0, 24.0, 14.0]))


def allocation_matrix(arm=ARM_LENGTH, k_moment=K_MOMENT, spin=SPIN_DIRS):
    """Rows map rotor forces to (collective force, body torques)."""
    B = np.zeros((4, N_ROTORS))
    for i in range(N_ROTORS):
        phi = math.radians(30.0) + i * math.radians(60.0)
        B[0, i] = 1.0
        B[1, i] = arm * math.sin(phi)
        B[2, i] = -arm * math.cos(phi)
        B[3, i] = -spin[i] * k_moment
    return B


class Controller:
    """Cascaded position PID -> thrust direction -> attitude PD -> rotors."""

    def __init__(self, params: ControllerParams, vehicle: VehicleParams, k_thrust=K_THRUST):
        self.params = params
        self.vehicle = vehicle
        self.k_thrust = k_thrust
        self.B = allocation_matrix()
        self.B_pinv = np.linalg.pinv(self.B)
        self.integral = np.zeros(3)

    def step(self, state: VehicleState, sp_p, sp_v, sp_a, dt):
        """One control tick; returns (throttles, commanded wrench [f, tau])."""
        par, veh = self.params, self.vehicle
        e_p = sp_p - state.p
        e_v = sp_v - state.v
        self.integral = np.clip(self.integral + e_p * dt, -par.int_limit, par.int_limit)
        a_cmd = sp_a + par.kp_pos * e_p + par.kd_pos * e_v + par.ki_pos * self.integral
        f_des = veh.mass * (a_cmd + np.array([0.0, 0.0, veh.gravity]))
        R = quat_to_matrix(state.q)
        b3 = R[:, 2]
        # satisfy the vertical force balance exactly: f = f_des_z / b3_z
        f_cmd = f_des[2] / max(b3[2], 0.25)
        f_cmd = min(max(f_cmd, 0.0), N_ROTORS * self.k_thrust)
        # attitude setpoint from the desired force direction, yaw held at 0
        n = np.linalg.norm(f_des)
        b3_des = f_des / n if n > 0.1 * veh.mass * veh.gravity else np.array([0.0, 0.0, 1.0])
        b2_des = np.cross(b3_des, np.array([1.0, 0.0, 0.0]))
        b2_des /= np.linalg.norm(b2_des)
        b1_des = np.cross(b2_des, b3_des)
        R_des = np.column_stack([b1_des, b2_des, b3_des])
        e_mat = R_des.T @ R - R.T @ R_des
        e_R = 0.5 * np.array([e_mat[2, 1], e_mat[0, 2], e_mat[1, 0]])
        ang_acc = -par.kp_att * e_R - par.kd_att * state.omega
        tau = veh.inertia @ ang_acc + np.cross(state.omega, veh.inertia @ state.omega)
        u = self.B_pinv @ np.concatenate([[f_cmd / self.k_thrust], tau / self.k_thrust])
        u = np.clip(u, 0.0, 1.0)
        wrench = self.B @ (self.k_thrust * u)
        return u, wrench


# ---------------------------------------------------------------------------
# noise and scenarios


@dataclass
class NoiseSpec:
    odo_pos: float = 0.005  # m
    odo_att: float = math.radians(0.2)  # rad
    odo_vel: float = 0.02  # m/s
    odo_gyro: float = 0.01  # rad/s
    imu_accel: float = 0.05  # m/s^2
    imu_bias: float = 0.02  # m/s^2, constant per run
    whisker_angle: float = 0.005  # rad
    whisker_offset: float = 0.01  # rad, constant per sensor per run
    outlier_prob: float = 0.0  # per sensor-tick spike probability
    outlier_mag: float = 80.0  # counts
    interference_gain: float = 0.0  # rad of angle bias per unit mean-throttle^2

    @staticmethod
    def none():
        # zero every stochastic source; outlier_mag stays meaningful if a
        # caller re-enables outlier_prob on the returned spec
        return NoiseSpec(
            odo_pos=0.0, odo_att=0.0, odo_vel=0.0, odo_gyro=0.0,
            imu_accel=0.0, imu_bias=0.0, whisker_angle=0.0,
            whisker_offset=0.0, outlier_prob=0.0, interference_gain=0.0,
        )


@dataclass
class Scenario:
    name: str
    plan: FlightPlan
    wind: WindField = field(default_factory=WindField)
    touch: TouchProfile = field(default_factory=TouchProfile)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    thrust_scale: float = 1.0
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    rig: WhiskerRig = field(default_factory=default_rig)
    controller: ControllerParams = field(default_factory=ControllerParams)


# fast scalar RK4 on the packed state (hot path; cross-checked against
# vehicle.integrate_step in the tests)


def _deriv_fast(s, f, tq, wind, touch, m_inv, mu1, mu2, g, jinv_j):
    vx, vy, vz = s[3], s[4], s[5]
    qw, qx, qy, qz = s[6], s[7], s[8], s[9]
    wx, wy, wz = s[10], s[11], s[12]
    # thrust along body z, rotated to world
    tx = 2.0 * (qx * qz + qw * qy) * f
    ty = 2.0 * (qy * qz - qw * qx) * f
    tz = (1.0 - 2.0 * (qx * qx + qy * qy)) * f
    ux, uy, uz = wind[0] - vx, wind[1] - vy, wind[2] - vz
    sp = math.sqrt(ux * ux + uy * uy + uz * uz)
    fac = 0.0 if sp < 1e-9 else mu1 + mu2 * sp
    ax = (tx + fac * ux + touch[0]) * m_inv
    ay = (ty + fac * uy + touch[1]) * m_inv
    az = (tz + fac * uz + touch[2]) * m_inv - g
    jinv, J = jinv_j
    hx = J[0][0] * wx + J[0][1] * wy + J[0][2] * wz
    hy = J[1][0] * wx + J[1][1] * wy + J[1][2] * wz
    hz = J[2][0] * wx + J[2][1] * wy + J[2][2] * wz
    rx = tq[0] - (wy * hz - wz * hy)
    ry = tq[1] - (wz * hx - wx * hz)
    rz = tq[2] - (wx * hy - wy * hx)
    return (
        vx,
        vy,
        vz,
        ax,
        ay,
        az,
        0.5 * (-qx * wx - qy * wy - qz * wz),
        0.5 * (qw * wx + qy * wz - qz * wy),
        0.5 * (qw * wy - qx * wz + qz * wx),
        0.5 * (qw * wz + qx * wy - qy * wx),
        jinv[0][0] * rx + jinv[0][1] * ry + jinv[0][2] * rz,
        jinv[1][0] * rx + jinv[1][1] * ry + jinv[1][2] * rz,
        jinv[2][0] * rx + jinv[2][1] * ry + jinv[2][2] * rz,
    )


def _rk4_fast(s, f, tq, wind, touch, consts, dt):
    k1 = _deriv_fast(s, f, tq, wind, touch, *consts)
    s2 = tuple(s[i] + 0.5 * dt * k1[i] for i in range(13))
    k2 = _deriv_fast(s2, f, tq, wind, touch, *consts)
    s3 = tuple(s[i] + 0.5 * dt * k2[i] for i in range(13))
    k3 = _deriv_fast(s3, f, tq, wind, touch, *consts)
    s4 = tuple(s[i] + dt * k3[i] for i in range(13))
    k4 = _deriv_fast(s4, f, tq, wind, touch, *consts)
    out = [s[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(13)]
    qn = math.sqrt(out[6] ** 2 + out[7] ** 2 + out[8] ** 2 + out[9] ** 2)
    for i in range(6, 10):
        out[i] /= qn
    return tuple(out)


TRUTH_COLUMNS = (
    ["px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz"]
    + ["ax", "ay", "az", "thrust", "wind_x", "wind_y", "wind_z"]
    + ["touch_x", "touch_y", "touch_z", "phase"]
)
ODO_COLUMNS = ["px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"]
IMU_COLUMNS = ["ax", "ay", "az"]
THROTTLE_COLUMNS = [f"u{i}" for i in range(N_ROTORS)] + ["f_cmd", "tau_x", "tau_y", "tau_z"]


def whisker_columns(n_sensors):
    cols = []
    for i in range(n_sensors):
        cols += [f"theta_x_{i}", f"theta_y_{i}", f"bx_{i}", f"by_{i}", f"bz_{i}"]
    return cols


def _random_quat_perturb(rng, sigma):
    if sigma == 0.0:
        return None
    return rng.normal(0.0, sigma, 3)


def run_scenario(sc: Scenario) -> FlightLog:
    """Fly the scenario closed-loop and synthesize all sensor channels."""
    rng = np.random.default_rng(sc.seed)
    noise = sc.noise
    veh = sc.vehicle
    n_sensors = len(sc.rig)
    imu_bias = rng.normal(0.0, noise.imu_bias, 3) if noise.imu_bias else np.zeros(3)
    offsets = (
        rng.normal(0.0, noise.whisker_offset, (n_sensors, 2))
        if noise.whisker_offset
        else np.zeros((n_sensors, 2))
    )
    int_dirs = np.array([INTERFERENCE_DIRS[i % len(INTERFERENCE_DIRS)] for i in range(n_sensors)])

    plan = sc.plan
    dt = 1.0 / SIM_RATE
    n_steps = int(round(plan.duration * SIM_RATE)) + 1
    p0, _, _, _ = plan.setpoint(0.0)
    state = VehicleState(p0, np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))
    ctrl = Controller(sc.controller, veh)

    consts = (
        1.0 / veh.mass,
        veh.mu1,
        veh.mu2,
        veh.gravity,
        (veh.inertia_inv.tolist(), veh.inertia.tolist()),
    )
    packed = tuple(np.concatenate([state.p, state.v, state.q, state.omega]))

    truth_rows, odo_rows, imu_rows, whisk_rows, thr_rows = [], [], [], [], []
    t_truth, t_odo, t_imu, t_whisk, t_thr = [], [], [], [], []

    div_ctrl = int(SIM_RATE / TRUTH_RATE)  # controller + input refresh
    div_truth = int(SIM_RATE / TRUTH_RATE)
    div_odo = int(SIM_RATE / ODO_RATE)
    div_imu = int(SIM_RATE / IMU_RATE)
    div_whisk = int(SIM_RATE / WHISKER_RATE)
    div_thr = int(SIM_RATE / THROTTLE_RATE)

    u = np.zeros(N_ROTORS)
    wrench_cmd = np.zeros(4)
    wind = np.zeros(3)
    touch = np.zeros(3)
    phase = PHASE_TAKEOFF
    mean_u2 = 0.0

    def build_log():
        log = FlightLog()
        log.add("truth", t_truth, truth_rows, TRUTH_COLUMNS)
        log.add("odometry", t_odo, odo_rows, ODO_COLUMNS)
        log.add("imu", t_imu, imu_rows, IMU_COLUMNS)
        log.add("whisker", t_whisk, whisk_rows, whisker_columns(n_sensors))
        log.add("throttle", t_thr, thr_rows, THROTTLE_COLUMNS)
        return log

    for k in range(n_steps):
        t = k * dt
        if k % div_ctrl == 0:
            state = VehicleState(
                np.array(packed[0:3]), np.array(packed[3:6]), np.array(packed[6:10]), np.array(packed[10:13])
            )
            if np.linalg.norm(state.p) > DIVERGENCE_BOUND:
                raise SimulationDiverged(
                    f"vehicle left the arena at t={t:.2f}s (|p|="
                    f"{np.linalg.norm(state.p):.1f} m)",
                    build_log(),
                )
            sp_p, sp_v, sp_a, phase = plan.setpoint(t)
            u, wrench_cmd = ctrl.step(state, sp_p, sp_v, sp_a, 1.0 / TRUTH_RATE)
            wind = sc.wind.at(state.p, t)
            touch = sc.touch.at(t)
            mean_u2 = float(np.mean(u)) ** 2
        f_applied = sc.thrust_scale * wrench_cmd[0]
        tau_applied = sc.thrust_scale * wrench_cmd[1:4]

        if k % div_truth == 0:
            d = _deriv_fast(packed, f_applied, tau_applied, wind, touch, *consts)
            t_truth.append(t)
            truth_rows.append(
                list(packed)
                + [d[3], d[4], d[5], f_applied]
                + list(wind)
                + list(touch)
                + [float(phase)]
            )
        if k % div_odo == 0:
            p_m = np.array(packed[0:3]) + rng.normal(0.0, noise.odo_pos, 3) if noise.odo_pos else np.array(packed[0:3])
            v_m = np.array(packed[3:6]) + rng.normal(0.0, noise.odo_vel, 3) if noise.odo_vel else np.array(packed[3:6])
            q_m = np.array(packed[6:10])
            rot = _random_quat_perturb(rng, noise.odo_att)
            if rot is not None:
                q_m = quat_multiply(quat_from_axis_angle(rot), q_m)
            w_m = np.array(packed[10:13]) + rng.normal(0.0, noise.odo_gyro, 3) if noise.odo_gyro else np.array(packed[10:13])
            t_odo.append(t)
            odo_rows.append(list(p_m) + list(q_m) + list(v_m) + list(w_m))
        if k % div_imu == 0:
            d = _deriv_fast(packed, f_applied, tau_applied, wind, touch, *consts)
            a_w = np.array([d[3], d[4], d[5]])
            q_now = np.array(packed[6:10])
            R = quat_to_matrix(q_now)
            spec_b = R.T @ (a_w - np.array([0.0, 0.0, -veh.gravity]))
            if noise.imu_accel:
                spec_b = spec_b + rng.normal(0.0, noise.imu_accel, 3)
            t_imu.append(t)
            imu_rows.append(list(spec_b + imu_bias))
        if k % div_thr == 0:
            t_thr.append(t)
            thr_rows.append(list(u) + list(wrench_cmd))
        if k % div_whisk == 0:
            q_now = np.array(packed[6:10])
            v_now = np.array(packed[3:6])
            w_now = np.array(packed[10:13])
            theta_true = whisker_mod.rig_predict(q_now, v_now, w_now, wind, sc.rig)
            if noise.interference_gain:
                R = quat_to_matrix(q_now)
                v_inf_b = R.T @ (wind - v_now)
                for i, m in enumerate(sc.rig.mounts):
                    v_s = whisker_mod.sensor_airflow(v_inf_b, w_now, m)
                    planar = math.hypot(v_s[0], v_s[1])
                    gain = noise.interference_gain * mean_u2
                    theta_true[i] += gain * (1.0 + 0.8 * math.tanh(planar / 2.0)) * int_dirs[i]
            theta_meas = theta_true + offsets
            if noise.whisker_angle:
                theta_meas = theta_meas + rng.normal(0.0, noise.whisker_angle, (n_sensors, 2))
            # spring end stops
            theta_meas = np.clip(theta_meas, -THETA_LIMIT, THETA_LIMIT)
            row = []
            for i, m in enumerate(sc.rig.mounts):
                b = whisker_mod.synthesize_field(theta_meas[i], m.polarity)
                if noise.outlier_prob and rng.random() < noise.outlier_prob:
                    b[rng.integers(0, 3)] += noise.outlier_mag * rng.choice([-1.0, 1.0])
                row += [theta_meas[i][0], theta_meas[i][1], b[0], b[1], b[2]]
            t_whisk.append(t)
            whisk_rows.append(row)

        packed = _rk4_fast(packed, f_applied, tau_applied, wind, touch, consts, dt)

    return build_log()


# ---------------------------------------------------------------------------
# canonical scenarios


def circular_scenario(seed=1, noise=None, speeds=(1.0, 2.0, 3.0, 4.0, 5.0), hold=8.0,
                      radius=2.5, interference=0.0, wind=None, thrust_scale=1.0):
    noise = NoiseSpec() if noise is None else noise
    if interference:
        noise.interference_gain = interference
    traj = CircleTrajectory(radius=radius, speeds=speeds, hold=hold)
    return Scenario(
        "circular",
        FlightPlan(traj),
        wind=wind if wind is not None else WindField(),
        noise=noise,
        seed=seed,
        thrust_scale=thrust_scale,
    )


def joystick_scenario(seed=2, noise=None, duration=45.0, vmax=4.0, interference=0.0):
    noise = NoiseSpec() if noise is None else noise
    if interference:
        noise.interference_gain = interference
    traj = JoystickTrajectory(seed=seed + 1000, duration=duration, vmax=vmax)
    return Scenario("joystick", FlightPlan(traj), noise=noise, seed=seed)


def line_gust_scenario(seed=3, noise=None, speed=3.6):
    noise = NoiseSpec() if noise is None else noise
    traj = LineTrajectory(p0=np.array([-5.0, 0.0, 1.5]), p1=np.array([5.0, 0.0, 1.5]))
    gust = ConeGust(
        origin=np.array([0.0, 2.8, 1.5]),
        direction=np.array([0.0, -1.0, 0.0]),
        half_angle=0.45,
        speed=speed,
    )
    return Scenario(
        "line_gust", FlightPlan(traj), wind=WindField(gusts=[gust]), noise=noise, seed=seed
    )


def four_phase_scenario(seed=4, noise=None, thrust_scale=1.0, pull=4.0, wind_speed=3.6,
                        phase_len=10.0):
    """Hover; gust on; gust + ramping pull; pull only. Landing afterwards."""
    noise = NoiseSpec() if noise is None else noise
    traj = HoverTrajectory(point=np.array([0.0, 0.0, 1.5]), duration=4.0 * phase_len)
    plan = FlightPlan(traj, ground_xy=np.array([-1.5, 0.0]))
    t0 = plan.t_execute
    gust = ConeGust(
        origin=np.array([2.5, 0.0, 1.5]),
        direction=np.array([-1.0, 0.0, 0.0]),
        half_angle=0.35,
        speed=wind_speed,
        t_on=t0 + phase_len,
        t_off=t0 + 3.0 * phase_len,
    )
    pull_dir = np.array([0.0, 0.0, -1.0])
    touch = TouchProfile(
        [
            TouchEvent(t0 + 2.0 * phase_len, t0 + 3.0 * phase_len, np.zeros(3), pull * pull_dir),
            TouchEvent(t0 + 3.0 * phase_len, t0 + 4.0 * phase_len, pull * pull_dir, pull * pull_dir),
        ]
    )
    return Scenario(
        "four_phase",
        plan,
        wind=WindField(gusts=[gust]),
        touch=touch,
        noise=noise,
        seed=seed,
        thrust_scale=thrust_scale,
    )


def hover_scenario(seed=5, noise=None, duration=8.0, wind=None):
    noise = NoiseSpec() if noise is None else noise
    traj = HoverTrajectory(duration=duration)
    return Scenario(
        "hover",
        FlightPlan(traj),
        wind=wind if wind is not None else WindField(),
        noise=noise,
        seed=seed,
    )


SCENARIOS = {
    "circular": circular_scenario,
    "joystick": joystick_scenario,
    "line_gust": line_gust_scenario,
    "four_phase": four_phase_scenario,
    "hover": hover_scenario,
}
