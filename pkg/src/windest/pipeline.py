"""Replay estimation over flight logs and score it against truth.

The replay is event-driven: the belief is predicted forward (explicit
Euler over the error-state sigma points) to every event timestamp in
order; throttle rows refresh the commanded wrench, odometry rows apply
the 12-dimensional linear update, whisker rows apply the unscented
angle update (model route) or the learned relative-airflow pseudo
measurement (regressor route).  Estimates are emitted on the whisker
clock with the fixed estimate-file schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lstm as lstm_mod
from . import logio, sim, ukf
from .geometry import UtParams, quat_rotate
from .logio import DriverConfig, FlightLog, WhiskerDriver
from .vehicle import VehicleParams, drag_force
from .whisker import WhiskerRig, default_rig


@dataclass
class MeasurementNoise:
    odo_pos: float = 0.005
    odo_att: float = np.radians(0.2)
    odo_vel: float = 0.02
    odo_gyro: float = 0.01
    whisker: float = 0.005
    pseudo: float = 0.3

    def odometry_cov(self):
        d = np.concatenate(
            [
                np.full(3, self.odo_pos**2),
                np.full(3, self.odo_att**2),
                np.full(3, self.odo_vel**2),
                np.full(3, self.odo_gyro**2),
            ]
        )
        return np.diag(d)


@dataclass
class EstimatorConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    rig: WhiskerRig = field(default_factory=default_rig)
    process: ukf.ProcessNoise = field(default_factory=ukf.ProcessNoise)
    meas: MeasurementNoise = field(default_factory=MeasurementNoise)
    driver: DriverConfig = field(default_factory=DriverConfig)
    ut: UtParams = field(default_factory=UtParams)
    gate: bool = False
    init_sigma_touch: float = 2.0
    init_sigma_wind: float = 2.0


def config_to_dict(cfg: EstimatorConfig):
    out = {
        "mass_kg": cfg.vehicle.mass,
        "inertia_kgm2": cfg.vehicle.inertia.ravel().copy(),
        "mu1": cfg.vehicle.mu1,
        "mu2": cfg.vehicle.mu2,
        "gravity_mps2": cfg.vehicle.gravity,
        "q_pos": cfg.process.pos,
        "q_att": cfg.process.att,
        "q_vel": cfg.process.vel,
        "q_gyro": cfg.process.gyro,
        "q_touch": cfg.process.touch,
        "q_wind": cfg.process.wind,
        "r_odo_pos_m": cfg.meas.odo_pos,
        "r_odo_att_rad": cfg.meas.odo_att,
        "r_odo_vel_mps": cfg.meas.odo_vel,
        "r_odo_gyro_radps": cfg.meas.odo_gyro,
        "r_whisker_rad": cfg.meas.whisker,
        "r_pseudo_mps": cfg.meas.pseudo,
        "gate_enabled": 1.0 if cfg.gate else 0.0,
        "init_sigma_touch_N": cfg.init_sigma_touch,
        "init_sigma_wind_mps": cfg.init_sigma_wind,
        "driver_alpha": cfg.driver.alpha,
        "driver_nsigma": cfg.driver.nsigma,
        "driver_clamp_rad": cfg.driver.clamp,
    }
    out.update(logio.rig_to_config(cfg.rig))
    return out


def config_from_dict(d: dict):
    cfg = EstimatorConfig()
    kw = {
        "mass": float(d.get("mass_kg", 1.31)),
        "mu1": float(d.get("mu1", 0.20)),
        "mu2": float(d.get("mu2", 0.07)),
        "gravity": float(d.get("gravity_mps2", 9.81)),
    }
    if "inertia_kgm2" in d:
        kw["inertia"] = np.asarray(d["inertia_kgm2"], dtype=float).reshape(3, 3)
    cfg.vehicle = VehicleParams(**kw)
    if "sensor_count" in d:
        cfg.rig = logio.rig_from_config(d)
    cfg.process = ukf.ProcessNoise(
        pos=float(d.get("q_pos", cfg.process.pos)),
        att=float(d.get("q_att", cfg.process.att)),
        vel=float(d.get("q_vel", cfg.process.vel)),
        gyro=float(d.get("q_gyro", cfg.process.gyro)),
        touch=float(d.get("q_touch", cfg.process.touch)),
        wind=float(d.get("q_wind", cfg.process.wind)),
    )
    cfg.meas = MeasurementNoise(
        odo_pos=float(d.get("r_odo_pos_m", cfg.meas.odo_pos)),
        odo_att=float(d.get("r_odo_att_rad", cfg.meas.odo_att)),
        odo_vel=float(d.get("r_odo_vel_mps", cfg.meas.odo_vel)),
        odo_gyro=float(d.get("r_odo_gyro_radps", cfg.meas.odo_gyro)),
        whisker=float(d.get("r_whisker_rad", cfg.meas.whisker)),
        pseudo=float(d.get("r_pseudo_mps", cfg.meas.pseudo)),
    )
    cfg.driver = DriverConfig(
        alpha=float(d.get("driver_alpha", cfg.driver.alpha)),
        nsigma=float(d.get("driver_nsigma", cfg.driver.nsigma)),
        clamp=float(d.get("driver_clamp_rad", cfg.driver.clamp)),
    )
    cfg.gate = bool(d.get("gate_enabled", 0.0))
    cfg.init_sigma_touch = float(d.get("init_sigma_touch_N", cfg.init_sigma_touch))
    cfg.init_sigma_wind = float(d.get("init_sigma_wind_mps", cfg.init_sigma_wind))
    return cfg


def driver_angles(log: FlightLog, cfg: EstimatorConfig):
    """Run the whisker driver over the log; returns (t, theta, accept)."""
    ch = log["whisker"]
    b = logio.whisker_fields(log)
    driver = WhiskerDriver(cfg.rig, cfg.driver)
    theta, accept = driver.run(ch.t, b)
    return ch.t, theta, accept


def pseudo_airflow(log: FlightLog, cfg: EstimatorConfig, params: lstm_mod.LstmParams, theta=None):
    """LSTM relative-airflow pseudo measurements on the whisker clock."""
    rs = logio.resample_to_clock(log, "whisker")
    if theta is None:
        _, theta, _ = driver_angles(log, cfg)
        idx = logio.zoh_indices(log["whisker"].t, rs.t)
        theta = theta[idx]
    feats = lstm_mod.build_features(
        logio.forward_fill(theta),
        rs["odometry"].col("wx", "wy", "wz"),
        rs["imu"].col("ax", "ay", "az"),
        rs["throttle"].cols("u", sim.N_ROTORS),
        sim.SPIN_DIRS,
    )
    return rs.t, lstm_mod.predict_stream(params, feats)


def run_estimate(log: FlightLog, cfg: EstimatorConfig, source="model", weights=None):
    """Replay the filter over a log.

    source "model" fuses whisker angles through the deflection model;
    source "lstm" fuses the learned relative-airflow pseudo measurement
    (weights required).  Returns (t, table) on the whisker clock with
    the estimate-file schema.
    """
    if source not in ("model", "lstm"):
        raise ValueError(f"unknown airflow source {source!r}")
    odo_ch = log["odometry"]
    thr_ch = log["throttle"]
    t_whisk, theta, _ = driver_angles(log, cfg)
    if source == "lstm":
        if weights is None:
            raise ValueError("lstm source needs weights")
        rs_clock = logio.resample_to_clock(log, "whisker").t
        theta_rs = theta[logio.zoh_indices(t_whisk, rs_clock)]
        t_pseudo, vinf_pred = pseudo_airflow(log, cfg, weights, theta=theta_rs)
        pseudo_lookup = {round(t, 9): k for k, t in enumerate(t_pseudo)}

    # event table: (t, kind, row); kinds ordered so commands refresh first
    events = []
    for k, t in enumerate(thr_ch.t):
        events.append((t, 0, k))
    for k, t in enumerate(odo_ch.t):
        events.append((t, 1, k))
    for k, t in enumerate(t_whisk):
        events.append((t, 2, k))
    events.sort(key=lambda e: (e[0], e[1]))

    odo_cov = cfg.meas.odometry_cov()
    wrench = np.array([cfg.vehicle.mass * cfg.vehicle.gravity, 0.0, 0.0, 0.0])
    belief = None
    out_t, out_rows = [], []

    for t, kind, k in events:
        if belief is None:
            if kind == 1:
                z = _odo_measurement(odo_ch, k, odo_cov)
                belief = ukf.init_belief(
                    t, z, sigma_touch=cfg.init_sigma_touch, sigma_wind=cfg.init_sigma_wind
                )
            continue
        dt = t - belief.t
        if dt > 1e-12:
            belief = ukf.predict(
                belief,
                _wrench_input(wrench),
                dt,
                cfg.process,
                cfg.vehicle,
                cfg.ut,
            )
        if kind == 0:
            wrench = np.concatenate(
                [[thr_ch.col("f_cmd")[k]], thr_ch.col("tau_x", "tau_y", "tau_z")[k]]
            )
        elif kind == 1:
            z = _odo_measurement(odo_ch, k, odo_cov)
            belief, _ = ukf.update_odometry(belief, z, gate=cfg.gate)
        else:
            if source == "model":
                belief, _ = ukf.update_airflow(
                    belief, theta[k], cfg.meas.whisker, cfg.rig, cfg.ut, gate=cfg.gate
                )
            else:
                kk = pseudo_lookup.get(round(t, 9))
                if kk is not None:
                    belief, _ = ukf.update_pseudo_airflow(
                        belief, vinf_pred[kk], cfg.meas.pseudo**2, cfg.ut, gate=cfg.gate
                    )
            out = ukf.output(belief, cfg.vehicle)
            out_t.append(t)
            out_rows.append(
                np.concatenate([out.touch, out.wind, out.v_inf_body, out.drag])
            )
    if not out_rows:
        raise ValueError("log produced no estimates (no odometry before whisker data?)")
    return np.array(out_t), np.array(out_rows)


def _wrench_input(wrench):
    from .vehicle import WrenchInput

    return WrenchInput(float(wrench[0]), wrench[1:4])


def _odo_measurement(ch, k, cov):
    return ukf.OdometryMeasurement(
        p=ch.col("px", "py", "pz")[k],
        q=ch.col("qw", "qx", "qy", "qz")[k],
        v=ch.col("vx", "vy", "vz")[k],
        omega=ch.col("wx", "wy", "wz")[k],
        cov=cov,
    )


def training_block(log: FlightLog, cfg: EstimatorConfig, skip=1.0):
    """(features, labels) streams for regressor training, whisker clock.

    Labels are the true body-frame relative airflow; the first `skip`
    seconds (driver calibration window) are dropped.
    """
    t_whisk, theta, _ = driver_angles(log, cfg)
    rs = logio.resample_to_clock(log, "whisker")
    theta_rs = theta[logio.zoh_indices(t_whisk, rs.t)]
    feats = lstm_mod.build_features(
        logio.forward_fill(theta_rs),
        rs["odometry"].col("wx", "wy", "wz"),
        rs["imu"].col("ax", "ay", "az"),
        rs["throttle"].cols("u", sim.N_ROTORS),
        sim.SPIN_DIRS,
    )
    labels = truth_airflow_body(log, rs.t)
    keep = rs.t >= rs.t[0] + skip
    return feats[keep], labels[keep]


# ---------------------------------------------------------------------------
# truth lookups and metrics


def truth_sampled(log: FlightLog, t_query):
    """Truth channel rows held onto arbitrary query times."""
    tr = log["truth"]
    idx = logio.zoh_indices(tr.t, t_query)
    if np.any(idx < 0):
        raise ValueError("query precedes the truth channel")
    return tr.data[idx], tr

def truth_airflow_body(log: FlightLog, t_query):
    rows, tr = truth_sampled(log, t_query)
    cidx = {c: i for i, c in enumerate(tr.columns)}
    v = rows[:, [cidx["vx"], cidx["vy"], cidx["vz"]]]
    q = rows[:, [cidx["qw"], cidx["qx"], cidx["qy"], cidx["qz"]]]
    wind = rows[:, [cidx["wind_x"], cidx["wind_y"], cidx["wind_z"]]]
    qc = q.copy()
    qc[:, 1:] = -qc[:, 1:]
    return quat_rotate(qc, wind - v)


def truth_cols(log: FlightLog, t_query, *names):
    rows, tr = truth_sampled(log, t_query)
    cidx = {c: i for i, c in enumerate(tr.columns)}
    out = rows[:, [cidx[n] for n in names]]
    return out


def truth_drag(log: FlightLog, t_query, vehicle: VehicleParams):
    v = truth_cols(log, t_query, "vx", "vy", "vz")
    wind = truth_cols(log, t_query, "wind_x", "wind_y", "wind_z")
    return drag_force(wind - v, vehicle)


def rms(x, axis=0):
    return np.sqrt(np.mean(np.asarray(x, dtype=float) ** 2, axis=axis))


def airflow_rms(log: FlightLog, t_est, table, window=None):
    """Per-axis RMS error of the body relative-airflow estimate."""
    t_est = np.asarray(t_est, dtype=float)
    mask = np.ones(t_est.shape[0], dtype=bool)
    if window is not None:
        mask &= (t_est >= window[0]) & (t_est <= window[1])
    truth = truth_airflow_body(log, t_est[mask])
    est = np.asarray(table, dtype=float)[mask, 6:9]
    return rms(est - truth)


def window_mask(t, window):
    t = np.asarray(t, dtype=float)
    return (t >= window[0]) & (t <= window[1])
