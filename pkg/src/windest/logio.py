"""Flight-log container, CSV round trip, resampling and the whisker driver.

A log is a directory of per-channel CSV files (`truth.csv`,
`odometry.csv`, `imu.csv`, `whisker.csv`, `throttle.csv`), each with a
time column followed by named data columns.  Values are written with
%.17g so a save/load round trip is bit-exact.

The whisker driver turns raw magnetometer triples into deflection
angles: per-component outlier gate against a low-pass reference (the
reference keeps updating on rejected samples so it converges toward a
genuine step), startup calibration of per-sensor angle offsets, and a
hard clamp on the decoded angles.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import whisker
from .whisker import WhiskerRig, SensorMount


class LogFormatError(ValueError):
    """Malformed log/config/estimate file; message carries file:line."""


@dataclass
class Channel:
    name: str
    t: np.ndarray  # (n,)
    data: np.ndarray  # (n, k)
    columns: list[str]

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[0] != self.t.shape[0]:
            raise ValueError(f"channel {self.name}: data must be (len(t), k)")
        if len(self.columns) != self.data.shape[1]:
            raise ValueError(f"channel {self.name}: column names do not match data width")
        self._index = {c: i for i, c in enumerate(self.columns)}

    def col(self, *names):
        """One or more named columns as an (n,) or (n, len(names)) array."""
        if len(names) == 1:
            return self.data[:, self._index[names[0]]]
        return self.data[:, [self._index[n] for n in names]]

    def cols(self, prefix, count):
        return self.data[:, [self._index[f"{prefix}{i}"] for i in range(count)]]


@dataclass
class FlightLog:
    channels: dict[str, Channel] = field(default_factory=dict)

    def __getitem__(self, name) -> Channel:
        try:
            return self.channels[name]
        except KeyError:
            raise KeyError(f"log has no channel {name!r}; has {sorted(self.channels)}")

    def __contains__(self, name):
        return name in self.channels

    def add(self, name, t, data, columns):
        self.channels[name] = Channel(name, t, data, columns)


def save_log(log: FlightLog, directory):
    os.makedirs(directory, exist_ok=True)
    for name, ch in log.channels.items():
        path = os.path.join(directory, f"{name}.csv")
        with open(path, "w") as fh:
            fh.write("t," + ",".join(ch.columns) + "\n")
            for k in range(ch.t.shape[0]):
                row = [f"{ch.t[k]:.17g}"] + [f"{v:.17g}" for v in ch.data[k]]
                fh.write(",".join(row) + "\n")


def _load_csv(path):
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise LogFormatError(f"{path}:1: empty file")
        cols = [c.strip() for c in header.strip().split(",")]
        if cols[0] != "t":
            raise LogFormatError(f"{path}:1: first column must be 't', got {cols[0]!r}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(cols):
                raise LogFormatError(
                    f"{path}:{lineno}: expected {len(cols)} fields, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise LogFormatError(f"{path}:{lineno}: {exc}") from None
    arr = np.array(rows) if rows else np.empty((0, len(cols)))
    return arr[:, 0], arr[:, 1:], cols[1:]


def load_log(directory) -> FlightLog:
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"log directory {directory} does not exist")
    log = FlightLog()
    for fn in sorted(os.listdir(directory)):
        if not fn.endswith(".csv") or fn == "estimate.csv":
            continue
        name = fn[:-4]
        t, data, columns = _load_csv(os.path.join(directory, fn))
        log.add(name, t, data, columns)
    if not log.channels:
        raise LogFormatError(f"{directory}: no channel CSVs found")
    return log


def zoh_indices(src_t, clock_t):
    """Index of the latest src sample at or before each clock tick."""
    return np.searchsorted(np.asarray(src_t, dtype=float), np.asarray(clock_t, dtype=float), side="right") - 1


@dataclass
class Resampled:
    """All channels held onto a common clock (zero-order hold)."""

    t: np.ndarray
    channels: dict[str, Channel]

    def __getitem__(self, name) -> Channel:
        return self.channels[name]


def resample_to_clock(log: FlightLog, clock_channel="whisker"):
    """Sample-and-hold every channel onto clock_channel's timestamps.

    Only the overlap window (clock ticks covered by every channel) is
    kept, so no value is ever extrapolated.  Running the result through
    again is the identity.
    """
    clock = log[clock_channel].t
    lo = max(ch.t[0] for ch in log.channels.values())
    hi = min(ch.t[-1] for ch in log.channels.values())
    keep = (clock >= lo) & (clock <= hi)
    clock = clock[keep]
    out = {}
    for name, ch in log.channels.items():
        idx = zoh_indices(ch.t, clock)
        out[name] = Channel(name, clock, ch.data[idx], list(ch.columns))
    return Resampled(clock, out)


def forward_fill(arr):
    """Replace NaN rows by the previous finite row (zeros before the first)."""
    arr = np.asarray(arr, dtype=float)
    out = arr.reshape(arr.shape[0], -1).copy()
    bad = ~np.all(np.isfinite(out), axis=1)
    last = np.zeros(out.shape[1])
    for k in range(out.shape[0]):
        if bad[k]:
            out[k] = last
        else:
            last = out[k]
    return out.reshape(arr.shape)


# ---------------------------------------------------------------------------
# whisker driver


@dataclass
class DriverConfig:
    alpha: float = 0.3  # low-pass blend per sample
    nsigma: float = 6.0  # outlier gate width
    threshold_floor: float = 1.0  # counts; keeps the gate sane on clean data
    clamp: float = 0.5  # rad, hard limit on decoded angles
    calib_duration: float = 0.8  # s of startup data used for offsets/thresholds


def recovery_samples(threshold, step, alpha):
    """Samples until a step of the given size is re-admitted.

    The gate checks against the pre-update low-pass value, so after k
    rejected samples the residual is (1-alpha)^k * step and the first
    accepted sample is ceil(log(threshold/step)/log(1-alpha)) + 1.
    """
    if step <= threshold:
        return 1
    return int(math.ceil(math.log(threshold / step) / math.log(1.0 - alpha))) + 1


class WhiskerDriver:
    """Stateful b-field -> angle pipeline for one rig."""

    def __init__(self, rig: WhiskerRig, config: DriverConfig = DriverConfig()):
        self.rig = rig
        self.config = config
        n = len(rig)
        self.lp = None  # (n, 3) low-pass reference, seeded on calibrate/first sample
        self.thresholds = np.full((n, 3), config.threshold_floor)
        self.offsets = np.zeros((n, 2))

    def calibrate(self, b_window):
        """Startup calibration from an (m, n_sensors, 3) stack of rest data.

        Sets per-sensor angle offsets (mean decoded deflection), the
        outlier thresholds (nsigma * component std, floored) and seeds
        the low-pass reference.
        """
        b = np.asarray(b_window, dtype=float)
        if b.ndim != 3 or b.shape[1] != len(self.rig):
            raise ValueError("calibration window must be (m, n_sensors, 3)")
        self.lp = b.mean(axis=0)
        sig = b.std(axis=0)
        self.thresholds = np.maximum(self.config.nsigma * sig, self.config.threshold_floor)
        for i, m in enumerate(self.rig.mounts):
            self.offsets[i] = whisker.decode_field(b[:, i], m.polarity).mean(axis=0)
        return self.offsets

    def process(self, b_row):
        """One tick of raw fields (n_sensors, 3) -> angles (n_sensors, 2).

        Rejected sensors come back NaN; the low-pass reference is
        updated either way.
        """
        b = np.asarray(b_row, dtype=float)
        if self.lp is None:
            self.lp = b.copy()
        accept = np.all(np.abs(b - self.lp) <= self.thresholds, axis=1)
        self.lp = (1.0 - self.config.alpha) * self.lp + self.config.alpha * b
        theta = np.full((len(self.rig), 2), np.nan)
        for i, m in enumerate(self.rig.mounts):
            if accept[i]:
                raw = whisker.decode_field(b[i], m.polarity) - self.offsets[i]
                theta[i] = np.clip(raw, -self.config.clamp, self.config.clamp)
        return theta, accept

    def run(self, t, b_stack, calibrate=True):
        """Drive a whole (n, n_sensors, 3) stream; returns (theta, accept)."""
        t = np.asarray(t, dtype=float)
        b_stack = np.asarray(b_stack, dtype=float)
        if calibrate and t.shape[0]:
            m = int(np.searchsorted(t, t[0] + self.config.calib_duration, side="right"))
            self.calibrate(b_stack[: max(m, 1)])
        thetas = np.empty((t.shape[0], len(self.rig), 2))
        accepts = np.empty((t.shape[0], len(self.rig)), dtype=bool)
        for k in range(t.shape[0]):
            thetas[k], accepts[k] = self.process(b_stack[k])
        return thetas, accepts


def whisker_fields(log: FlightLog):
    """The raw (n, n_sensors, 3) field stack of the whisker channel."""
    ch = log["whisker"]
    n_sensors = sum(1 for c in ch.columns if c.startswith("bx_"))
    cols = []
    for i in range(n_sensors):
        cols += [f"bx_{i}", f"by_{i}", f"bz_{i}"]
    flat = ch.col(*cols)
    return flat.reshape(ch.t.shape[0], n_sensors, 3)


# ---------------------------------------------------------------------------
# estimate files


ESTIMATE_COLUMNS = [
    "touch_x",
    "touch_y",
    "touch_z",
    "wind_x",
    "wind_y",
    "wind_z",
    "vinf_bx",
    "vinf_by",
    "vinf_bz",
    "drag_x",
    "drag_y",
    "drag_z",
]


def save_estimate(path, t, table):
    """Write an estimate table (n, 12) with the fixed column schema."""
    t = np.asarray(t, dtype=float)
    table = np.asarray(table, dtype=float)
    if table.shape != (t.shape[0], len(ESTIMATE_COLUMNS)):
        raise ValueError(f"estimate table must be (n, {len(ESTIMATE_COLUMNS)})")
    with open(path, "w") as fh:
        fh.write("t," + ",".join(ESTIMATE_COLUMNS) + "\n")
        for k in range(t.shape[0]):
            fh.write(",".join([f"{t[k]:.17g}"] + [f"{v:.17g}" for v in table[k]]) + "\n")


def load_estimate(path):
    t, data, cols = _load_csv(path)
    if cols != ESTIMATE_COLUMNS:
        raise LogFormatError(f"{path}:1: unexpected estimate columns {cols}")
    return t, data


# ---------------------------------------------------------------------------
# flat key = value config files


def parse_config(path):
    """key = value file -> dict; values become float, float array or str."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            raw = line.split("#", 1)[0].strip()
            if not raw:
                continue
            if "=" not in raw:
                raise LogFormatError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in raw.split("=", 1))
            if not key:
                raise LogFormatError(f"{path}:{lineno}: empty key")
            parts = val.split()
            try:
                nums = [float(p) for p in parts]
                out[key] = nums[0] if len(nums) == 1 else np.array(nums)
            except ValueError:
                out[key] = val
    return out


def save_config(cfg: dict, path, header=None):
    with open(path, "w") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for key, val in cfg.items():
            if isinstance(val, str):
                fh.write(f"{key} = {val}\n")
            elif np.ndim(val) == 0:
                fh.write(f"{key} = {float(val):.17g}\n")
            else:
                fh.write(f"{key} = " + " ".join(f"{float(v):.17g}" for v in np.ravel(val)) + "\n")


def rig_to_config(rig: WhiskerRig):
    cfg = {"sensor_count": float(len(rig))}
    for i, m in enumerate(rig.mounts):
        cfg[f"sensor{i}_name"] = m.name
        cfg[f"sensor{i}_pos_m"] = m.r.copy()
        cfg[f"sensor{i}_rot"] = m.rot.ravel().copy()
        cfg[f"sensor{i}_coeff"] = m.coeff
        cfg[f"sensor{i}_polarity"] = m.polarity
    return cfg


def rig_from_config(cfg: dict):
    n = int(cfg["sensor_count"])
    mounts = []
    for i in range(n):
        mounts.append(
            SensorMount(
                str(cfg.get(f"sensor{i}_name", f"s{i}")),
                np.asarray(cfg[f"sensor{i}_pos_m"], dtype=float),
                np.asarray(cfg[f"sensor{i}_rot"], dtype=float).reshape(3, 3),
                float(cfg[f"sensor{i}_coeff"]),
                str(cfg.get(f"sensor{i}_polarity", whisker.NORTH_UP)),
            )
        )
    return WhiskerRig(mounts)
