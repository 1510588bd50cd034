"""Whisker airflow sensors: mounts, field decoding and deflection model.

Each sensor reports two deflection angles of a spring-loaded whisker
carrying a magnet over a magnetometer.  The decoded angles relate to the
airflow at the sensor through a single lumped coefficient c:

    theta_x = -c |v_inf_S| v_inf_S_y
    theta_y = +c |v_inf_S| v_inf_S_x

where v_inf_S is the relative airflow in the sensor frame and |.| is the
full 3-norm.  Sensor frames are given by their position r on the body
and the rotation `rot` whose columns are the sensor axes in body
coordinates (v_B = rot @ v_S).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import quat_rotate

NORTH_UP = "north_up"
SOUTH_UP = "south_up"

DEFAULT_COEFF = 0.01  # rad per (m/s)^2, lumped spring/arm/field constant
DEFAULT_BZ0 = 100.0  # nominal axial field count at rest


def decode_field(b, polarity=NORTH_UP):
    """Magnetic field sample -> deflection angles (theta_x, theta_y).

    South-up mounts negate the field before the arctangents.  A corrected
    axial component b_z <= 0 means the magnet has left the working range;
    those samples decode to NaN.  Broadcasts over leading axes.
    """
    b = np.asarray(b, dtype=float)
    if polarity == SOUTH_UP:
        b = -b
    elif polarity != NORTH_UP:
        raise ValueError(f"unknown polarity {polarity!r}")
    theta_x = -np.arctan2(b[..., 1], b[..., 2])
    theta_y = np.arctan2(b[..., 0], b[..., 2])
    theta = np.stack([theta_x, theta_y], axis=-1)
    return np.where(b[..., 2:3] > 0.0, theta, np.nan)


def synthesize_field(theta, polarity=NORTH_UP, bz0=DEFAULT_BZ0):
    """Deflection angles -> magnetic field sample (decode_field inverse)."""
    theta = np.asarray(theta, dtype=float)
    bx = bz0 * np.tan(theta[..., 1])
    by = -bz0 * np.tan(theta[..., 0])
    bz = np.broadcast_to(bz0, bx.shape)
    b = np.stack([bx, by, bz], axis=-1)
    if polarity == SOUTH_UP:
        b = -b
    return b


def body_airflow(q_wb, v_wind_w, v_w):
    """Relative airflow at the centre of mass, body frame.

    World-frame wind minus world-frame vehicle velocity, rotated into the
    body by the inverse of q_wb.  Broadcasts over leading axes.
    """
    q_wb = np.asarray(q_wb, dtype=float)
    qc = q_wb.copy()
    qc[..., 1:] = -qc[..., 1:]
    v_inf_w = np.asarray(v_wind_w, dtype=float) - np.asarray(v_w, dtype=float)
    return quat_rotate(qc, v_inf_w)


def whisker_drag(v_inf_s, rho, c_d, a_xy):
    """Aerodynamic force on one whisker fin from sensor-frame airflow.

    Quadratic drag (rho/2) c_d A |v| v with the non-isotropic area
    A = diag(a_xy, a_xy, 0): the fin presents no area along its spine, so
    the z component is always zero.
    """
    v_inf_s = np.asarray(v_inf_s, dtype=float)
    speed = np.linalg.norm(v_inf_s, axis=-1, keepdims=True)
    f = 0.5 * rho * c_d * a_xy * speed * v_inf_s
    f = f.copy()
    f[..., 2] = 0.0
    return f


def predict_deflection(v_inf_s, coeff):
    """Deflection angles for sensor-frame relative airflow v_inf_s."""
    v_inf_s = np.asarray(v_inf_s, dtype=float)
    speed = np.linalg.norm(v_inf_s, axis=-1)
    theta_x = -coeff * speed * v_inf_s[..., 1]
    theta_y = coeff * speed * v_inf_s[..., 0]
    return np.stack([theta_x, theta_y], axis=-1)


@dataclass
class SensorMount:
    """Pose, polarity and lumped coefficient of one whisker sensor."""

    name: str
    r: np.ndarray  # position on the body [m]
    rot: np.ndarray  # columns = sensor axes in body coordinates
    coeff: float = DEFAULT_COEFF
    polarity: str = NORTH_UP

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.rot = np.asarray(self.rot, dtype=float)
        if self.rot.shape != (3, 3) or not np.allclose(self.rot @ self.rot.T, np.eye(3), atol=1e-9):
            raise ValueError(f"mount {self.name}: rot must be a rotation matrix")
        if self.polarity not in (NORTH_UP, SOUTH_UP):
            raise ValueError(f"mount {self.name}: unknown polarity {self.polarity!r}")


def sensor_airflow(v_inf_b, omega, mount: SensorMount):
    """Relative airflow at the mount, sensor frame.

    Subtracts the rotational sweep omega x r of the mount point before
    rotating into the sensor axes.  Broadcasts over leading axes of
    v_inf_b / omega.
    """
    v_inf_b = np.asarray(v_inf_b, dtype=float)
    omega = np.asarray(omega, dtype=float)
    local = v_inf_b - np.cross(omega, mount.r)
    return local @ mount.rot  # (rot.T @ local.T).T


@dataclass
class WhiskerRig:
    mounts: list[SensorMount] = field(default_factory=list)

    def __len__(self):
        return len(self.mounts)

    @property
    def coeffs(self):
        return np.array([m.coeff for m in self.mounts])


def default_rig():
    """Four-sensor fixture: two upright on the hull, two outboard with
    horizontal spines so vertical flow stays observable (any three
    sensors still span all axes)."""
    c45, s45 = np.cos(np.pi / 4), np.sin(np.pi / 4)
    return WhiskerRig(
        [
            SensorMount("top_front", [0.10, 0.0, 0.05], np.eye(3)),
            SensorMount(
                "top_back",
                [-0.10, 0.0, 0.05],
                [[c45, -s45, 0.0], [s45, c45, 0.0], [0.0, 0.0, 1.0]],
            ),
            SensorMount(
                "guard_right",
                [0.0, 0.18, 0.0],
                [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
                polarity=SOUTH_UP,
            ),
            SensorMount(
                "guard_left",
                [0.0, -0.18, 0.0],
                [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]],
                polarity=SOUTH_UP,
            ),
        ]
    )


def rig_predict(q_wb, v_w, omega_b, v_wind_w, rig: WhiskerRig):
    """Predicted deflections for every mount, shape (..., n_sensors, 2).

    Inputs may carry a leading batch axis (all broadcast together):
    attitude q_wb, world velocity v_w, body rates omega_b and world wind
    v_wind_w.
    """
    v_inf_b = body_airflow(q_wb, v_wind_w, v_w)
    out = [
        predict_deflection(sensor_airflow(v_inf_b, omega_b, m), m.coeff) for m in rig.mounts
    ]
    return np.stack(out, axis=-2)
