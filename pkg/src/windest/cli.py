"""Command line front end: simulate, identify, train, estimate, score.

Every subcommand reads and writes the plain CSV formats from logio, so
any stage can be rerun or swapped out by hand.  WINDEST_OUT sets the
default output directory; explicit --out flags win.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import acceptance, lstm, pipeline, sim, sysid
from .logio import (
    LogFormatError,
    load_estimate,
    load_log,
    parse_config,
    save_config,
    save_estimate,
    save_log,
)
from .pipeline import EstimatorConfig
from .whisker import WhiskerRig

SCENARIOS = ("hover", "circular", "joystick", "line_gust", "four_phase")


def _out_dir(args):
    d = os.environ.get("WINDEST_OUT", ".")
    os.makedirs(d, exist_ok=True)
    return d


def _load_config(path):
    if path is None:
        return EstimatorConfig()
    return pipeline.config_from_dict(parse_config(path))


# ---------------------------------------------------------------------------
# subcommands


def cmd_sim(args):
    kwargs = {"seed": args.seed}
    if args.interference:
        if args.scenario not in ("circular", "joystick"):
            raise ValueError(f"--interference not supported for {args.scenario}")
        kwargs["interference"] = args.interference
    if args.thrust_scale != 1.0:
        if args.scenario not in ("circular", "four_phase"):
            raise ValueError(f"--thrust-scale not supported for {args.scenario}")
        kwargs["thrust_scale"] = args.thrust_scale
    sc = getattr(sim, f"{args.scenario}_scenario")(**kwargs)
    log = sim.run_scenario(sc)
    out = args.out or os.path.join(_out_dir(args), f"{args.scenario}_{args.seed}")
    save_log(log, out)
    for name in sorted(log.channels):
        ch = log[name]
        print(f"{name}: {ch.t.size} rows, {ch.t[0]:.2f}..{ch.t[-1]:.2f} s")
    print(f"log written to {out}")
    return 0


def cmd_sysid(args):
    log = load_log(args.log)
    cfg = EstimatorConfig()
    odo = log["odometry"]
    q = odo.col("qw", "qx", "qy", "qz")
    v = odo.col("vx", "vy", "vz")
    w = odo.col("wx", "wy", "wz")

    samples = sysid.collect_drag_samples(odo.t, q, v, cfg.vehicle.mass)
    fit = sysid.fit_drag_polynomial(samples)
    t_theta, theta, _ = pipeline.driver_angles(log, cfg)
    coeffs = sysid.identify_rig_coefficients(t_theta, theta, odo.t, q, v, w, cfg.rig)

    cfg.vehicle = replace(cfg.vehicle, mu1=fit.mu1, mu2=fit.mu2)
    cfg.rig = WhiskerRig(
        [replace(m, coeff=float(c)) for m, c in zip(cfg.rig.mounts, coeffs)]
    )
    out = args.out or os.path.join(_out_dir(args), "params.cfg")
    save_config(
        pipeline.config_to_dict(cfg), out, header="identified from a still-air flight"
    )
    print(f"drag polynomial: mu1 {fit.mu1:.5f} N s/m, mu2 {fit.mu2:.5f} N s^2/m^2 "
          f"({len(samples)} samples)")
    print("sensor coefficients: " + ", ".join(f"{c:.6g}" for c in coeffs))
    print(f"params written to {out}")
    return 0


def cmd_train(args):
    cfg = _load_config(args.config)
    blocks = [pipeline.training_block(load_log(d), cfg) for d in args.logs]
    tc = lstm.TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed)
    params, history = lstm.train(blocks, tc)
    out = args.out or os.path.join(_out_dir(args), "weights.csv")
    lstm.save_params(params, out)
    last = history[-1]
    print(f"{len(blocks)} blocks, {args.epochs} epochs: "
          f"train loss {last[1]:.4f}, val loss {last[2]:.4f}")
    print(f"weights written to {out}")
    return 0


def cmd_estimate(args):
    cfg = _load_config(args.config)
    log = load_log(args.log)
    weights = None
    if args.airflow_source == "lstm":
        if args.weights is None:
            raise ValueError("--airflow-source lstm requires --weights")
        weights = lstm.load_params(args.weights)
    t, table = pipeline.run_estimate(log, cfg, source=args.airflow_source, weights=weights)
    out = args.out or os.path.join(_out_dir(args), "estimate.csv")
    save_estimate(out, t, table)
    print(f"{t.size} rows ({args.airflow_source} airflow) written to {out}")
    return 0


def cmd_replay(args):
    cfg = _load_config(args.config)
    log = load_log(args.log)
    t, table = load_estimate(args.estimate)
    r = pipeline.airflow_rms(log, t, table)
    print(f"airflow rms [m/s]: x {r[0]:.3f}  y {r[1]:.3f}  z {r[2]:.3f}")

    drag_true = np.linalg.norm(pipeline.truth_drag(log, t, cfg.vehicle), axis=1)
    drag_est = np.linalg.norm(table[:, 9:12], axis=1)
    err = pipeline.rms(drag_est - drag_true)
    print(f"drag magnitude rms error [N]: {err:.3f} (truth mean {drag_true.mean():.3f})")

    wind_true = np.linalg.norm(
        pipeline.truth_cols(log, t, "wind_x", "wind_y", "wind_z"), axis=1
    )
    touch_true = np.linalg.norm(
        pipeline.truth_cols(log, t, "touch_x", "touch_y", "touch_z"), axis=1
    )
    wind_est = np.linalg.norm(table[:, 3:6], axis=1)
    touch_est = np.linalg.norm(table[:, 0:3], axis=1)
    for label, mask in (("wind phase", wind_true > 0.1), ("touch phase", touch_true > 0.1)):
        if not np.any(mask):
            print(f"{label}: none")
            continue
        print(
            f"{label} ({int(mask.sum())} rows): "
            f"est wind {wind_est[mask].mean():.2f} truth {wind_true[mask].mean():.2f} m/s, "
            f"est touch {touch_est[mask].mean():.2f} truth {touch_true[mask].mean():.2f} N"
        )
    return 0


def cmd_eval(args):
    if args.only:
        picks = sorted({int(s) for s in args.only.split(",")})
        bad = [i for i in picks if not 1 <= i <= len(acceptance.CRITERIA)]
        if bad:
            raise ValueError(f"unknown criteria {bad}")
        art = acceptance.Artifacts()
        ok = True
        for i in picks:
            res = acceptance.CRITERIA[i - 1](art)
            ok &= res.passed
            print(res.line())
        return 0 if ok else 1
    return 0 if acceptance.run_all() else 1


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="windest",
        description="wind, drag and touch estimation for a whisker-equipped multirotor",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sim", help="run a closed-loop flight and write its log")
    s.add_argument("--scenario", choices=SCENARIOS, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--interference", type=float, default=0.0,
                   help="rotor interference gain (circular/joystick)")
    s.add_argument("--thrust-scale", type=float, default=1.0,
                   help="actuator miscalibration factor (circular/four_phase)")
    s.add_argument("--out", help="log directory")
    s.set_defaults(func=cmd_sim)

    s = sub.add_parser("sysid", help="fit drag polynomial and sensor coefficients")
    s.add_argument("log", help="log directory of a still-air flight with speed sweeps")
    s.add_argument("--out", help="output params file")
    s.set_defaults(func=cmd_sysid)

    s = sub.add_parser("train", help="train the airflow regressor on one or more logs")
    s.add_argument("logs", nargs="+", help="log directories")
    s.add_argument("--config", help="estimator params file")
    s.add_argument("--epochs", type=int, default=lstm.TrainConfig.epochs)
    s.add_argument("--lr", type=float, default=lstm.TrainConfig.lr)
    s.add_argument("--seed", type=int, default=lstm.TrainConfig.seed)
    s.add_argument("--out", help="output weights file")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("estimate", help="replay a log through the filter")
    s.add_argument("log", help="log directory")
    s.add_argument("--airflow-source", choices=("model", "lstm"), default="model")
    s.add_argument("--weights", help="regressor weights (for --airflow-source lstm)")
    s.add_argument("--config", help="estimator params file")
    s.add_argument("--out", help="output estimate file")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("replay", help="score an estimate file against logged truth")
    s.add_argument("log", help="log directory")
    s.add_argument("estimate", help="estimate CSV")
    s.add_argument("--config", help="estimator params file")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("eval", help="run the acceptance criteria")
    s.add_argument("--only", help="comma-separated criterion numbers, e.g. 7,9,10")
    s.set_defaults(func=cmd_eval)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LogFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, NotADirectoryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
