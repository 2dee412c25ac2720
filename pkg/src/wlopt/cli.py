"""Command-line front end.

Subcommands:
    fit-engine    identify the engine from synthetic excitation data
    open-loop-slc simulate the manual four-phase loading-cycle demo
    train         train the costate network backward in time
    optimize      sweep switching times and simulate at the optimum
    simulate      closed-loop simulation at a fixed switching time

Exit codes: 0 success, 1 numerical failure, 2 configuration/IO failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import adp, config as cfgmod, engine as eng, plant
from .errors import ConfigError, SimulationAbortedError, WloptError


def _out_dir(cfg, args) -> Path:
    out = Path(args.out if args.out else cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(cfg, args) -> int:
    return int(args.seed) if args.seed is not None else int(cfg["seed"])


def cmd_fit_engine(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    fe = cfg["engine_fit"]
    dt = float(fe["sample_dt"])
    sigma = float(fe["noise_sigma"])

    def make_split(tag, short_dur, long_dur, base_seed, omega_range, fuel_range):
        short = eng.generate_excitation(
            short_dur, float(fe["train_short_pulse"]), dt, base_seed,
            omega_range=tuple(omega_range), fuel_range=tuple(fuel_range),
        )
        long = eng.generate_excitation(
            long_dur, float(fe["train_long_pulse"]), dt, base_seed + 1,
            omega_range=tuple(omega_range), fuel_range=tuple(fuel_range),
        )
        sig = eng.concat_signals(short, long)
        return eng.simulate_truth_engine(sig, noise_sigma=sigma, seed=base_seed + 2, split_tag=tag)

    # torque fit uses the saturation-free envelope, manifold fit the wide one
    torque_train = make_split(
        "training", float(fe["train_short_duration"]), float(fe["train_long_duration"]),
        seed, fe["torque_omega_range"], fe["torque_fuel_range"],
    )
    torque_val = make_split(
        "validation", float(fe["validation_duration"]), float(fe["validation_duration"]),
        seed + 10, fe["torque_omega_range"], fe["torque_fuel_range"],
    )
    mani_train = make_split(
        "training", float(fe["train_short_duration"]), float(fe["train_long_duration"]),
        seed + 20, fe["manifold_omega_range"], fe["manifold_fuel_range"],
    )
    mani_val = make_split(
        "validation", float(fe["validation_duration"]), float(fe["validation_duration"]),
        seed + 30, fe["manifold_omega_range"], fe["manifold_fuel_range"],
    )

    w_te = eng.fit_torque_weights(torque_train)
    fit = eng.fit_manifold_params(
        mani_train, learning_rate=float(fe["learning_rate"]), epochs=int(fe["epochs"])
    )

    weights = eng.EngineWeights(
        w_te=w_te,
        tau1=fit.tau1,
        tau2=fit.tau2,
        a1=fit.a1,
        a2=fit.a2,
        a3=fit.a3,
        scales=torque_train.normalize().scales,
    )

    rows = []
    for tag, ds in (("training", torque_train), ("validation", torque_val)):
        mae = eng.mean_absolute_error(
            eng.predict_torque(w_te, *ds.raw_columns()[:3]), ds.raw_columns()[3]
        )
        rows.append((tag, "torque", mae))
    for tag, ds in (("training", mani_train), ("validation", mani_val)):
        rows.append((tag, "manifold", eng.manifold_validation_mae(fit, ds)))

    weights_path = out / "engine_weights.json"
    weights.to_json(weights_path)
    report_path = out / "engine_fit_report.csv"
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "quantity", "mae"])
        for tag, quantity, mae in rows:
            writer.writerow([tag, quantity, f"{mae:.15g}"])
    eng.save_dataset_csv(torque_train, out / "engine_data_torque_training.csv")
    eng.save_dataset_csv(mani_train, out / "engine_data_manifold_training.csv")

    for tag, quantity, mae in rows:
        print(f"{tag:>10} {quantity:>8} MAE = {mae:.6g}")
    print(f"wrote {weights_path} and {report_path}")
    return 0


def _demo_control_schedule(segments):
    bounds = [(float(s["t"][0]), float(s["t"][1]), np.asarray(s["u"], dtype=float)) for s in segments]

    def u_of_t(t):
        for lo, hi, u in bounds:
            if lo <= t < hi:
                return u
        return bounds[-1][2] if t >= bounds[-1][1] else np.zeros(4)

    return u_of_t


def cmd_open_loop_slc(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    demo = cfg["demo"]
    params = cfgmod.build_params(cfg)
    weights = cfgmod.build_engine_weights(cfg)

    t_bounds = [float(v) for v in demo["t_boundaries"]]
    modes = [plant.Mode.from_name(n) for n in demo["modes"]]
    if len(modes) != len(t_bounds) - 1:
        raise ConfigError("demo.modes must have one entry per phase")
    dt = float(demo["dt"])
    steps = int(round((t_bounds[-1] - t_bounds[0]) / dt))

    def mode_of_t(t):
        for i in range(len(modes)):
            if t < t_bounds[i + 1] or i == len(modes) - 1:
                return modes[i]
        return modes[-1]

    u_of_t = _demo_control_schedule(demo["control_segments"])
    x0 = np.asarray(demo["x0"], dtype=float)

    traj_path = out / "slc_trajectory.csv"
    try:
        traj = plant.integrate_euler(x0, u_of_t, mode_of_t, dt, steps, params, weights)
    except SimulationAbortedError as exc:
        exc.partial.to_csv(traj_path)  # keep whatever completed
        print(f"demo aborted after {exc.partial.n_steps} steps; partial CSV at {traj_path}",
              file=sys.stderr)
        raise

    traj.to_csv(traj_path)

    # per-phase velocity summary (normalized units)
    v = traj.states[:, plant.IX_V]
    beta = traj.states[:, plant.IX_BETA]
    summary = {"phases": [], "final_speed": float(v[-1])}
    for i, mode in enumerate(modes):
        sel = (traj.t >= t_bounds[i]) & (traj.t <= t_bounds[i + 1])
        end_idx = int(np.searchsorted(traj.t, t_bounds[i + 1], side="right")) - 1
        summary["phases"].append(
            {
                "mode": mode.name,
                "t": [t_bounds[i], t_bounds[i + 1]],
                "v_min": float(np.min(v[sel])),
                "v_max": float(np.max(v[sel])),
                "v_end": float(v[end_idx]),
                "beta_end": float(beta[end_idx]),
            }
        )
    beta_scale = params.xs[plant.IX_BETA]
    summary["heading_change_deg"] = float(
        np.degrees(
            abs(summary["phases"][-2]["beta_end"] - summary["phases"][0]["beta_end"])
            * beta_scale
        )
    )
    summary_path = out / "slc_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {traj_path} and {summary_path}")
    for ph in summary["phases"]:
        print(
            f"  {ph['mode']:>8} [{ph['t'][0]:5.2f},{ph['t'][1]:5.2f}] "
            f"V in [{ph['v_min']:+.4f},{ph['v_max']:+.4f}] V_end={ph['v_end']:+.5f}"
        )
    print(f"  heading change {summary['heading_change_deg']:.1f} deg")
    return 0


def cmd_train(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    problem = cfgmod.build_problem(cfg)
    tc = cfgmod.build_training_config(cfg, seed)

    net = adp.train_backward(problem, tc)

    net_path = out / "network.costatenet.json"
    net.save(net_path)
    hist_path = out / "weight_history.csv"
    with open(hist_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k_hat", "frobenius_norm", "rms_residual"])
        for k in range(net.grid.n_prime):
            writer.writerow(
                [k, f"{net.report.frobenius_norm[k]:.17g}", f"{net.report.rms_residual[k]:.17g}"]
            )
    print(f"trained {net.grid.n_prime} steps; wrote {net_path} and {hist_path}")
    return 0


def _load_network(cfg: dict, args):
    problem = cfgmod.build_problem(cfg)
    net_path = Path(args.network) if args.network else Path(args.out if args.out else cfg["out_dir"]) / "network.costatenet.json"
    if not net_path.exists():
        raise ConfigError(f"network file not found: {net_path}")
    try:
        net = adp.CostateNetwork.load(net_path, problem.template)
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"unreadable network file {net_path}: {exc}") from None
    return problem, net


def cmd_optimize(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    problem, net = _load_network(cfg, args)
    x0 = np.asarray(cfg["x0"], dtype=float)
    if np.any(x0 < net.domain_lo) or np.any(x0 > net.domain_hi):
        print("warning: x0 lies outside the training domain; extrapolating", file=sys.stderr)

    sweep = adp.sweep_switching_times(
        net, problem, x0, num_candidates=int(cfg["sweep"]["num_candidates"])
    )
    traj = adp.closed_loop_simulate(net, problem, x0, sweep.t1_star)

    curve_path = out / "cost_curve.csv"
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t1", "cost"])
        for t1, cost in zip(sweep.candidates, sweep.costs):
            writer.writerow([f"{t1:.17g}", f"{cost:.17g}"])
    traj_path = out / "closed_loop_trajectory.csv"
    traj.to_csv(traj_path)
    report = {
        "t1_star": sweep.t1_star,
        "j_star": sweep.j_star,
        "num_candidates": len(sweep.candidates),
        "t1_range": [float(sweep.candidates[0]), float(sweep.candidates[-1])],
        "total_cost": traj.total_cost,
    }
    report_path = out / "optimize_report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"t1* = {sweep.t1_star:.6g}  J* = {sweep.j_star:.6g}")
    print(f"wrote {report_path}, {curve_path}, {traj_path}")
    return 0


def cmd_simulate(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    problem, net = _load_network(cfg, args)
    x0 = np.asarray(cfg["x0"], dtype=float)
    t1 = float(args.t1) if args.t1 is not None else float(cfg["simulate"]["t1"])
    traj = adp.closed_loop_simulate(net, problem, x0, t1)
    traj_path = out / "simulate_trajectory.csv"
    traj.to_csv(traj_path)
    print(f"total cost at t1={t1:.6g}: {traj.total_cost:.6g}; wrote {traj_path}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wlopt",
        description="Switched-system optimal control toolkit for wheel-loader loading cycles",
    )
    parser.add_argument("--config", help="scenario YAML file (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument(
        "--print-config", action="store_true", help="print the resolved config and exit"
    )
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("fit-engine", help="identify the engine from synthetic data")
    sub.add_parser("open-loop-slc", help="simulate the manual loading-cycle demo")
    sub.add_parser("train", help="train the costate network")
    p_opt = sub.add_parser("optimize", help="sweep switching times and simulate the optimum")
    p_opt.add_argument("--network", help="trained network JSON (default: <out>/network.costatenet.json)")
    p_sim = sub.add_parser("simulate", help="closed-loop simulation at a fixed switching time")
    p_sim.add_argument("--network", help="trained network JSON (default: <out>/network.costatenet.json)")
    p_sim.add_argument("--t1", type=float, help="switching time (default: simulate.t1 from config)")
    return parser


_COMMANDS = {
    "fit-engine": cmd_fit_engine,
    "open-loop-slc": cmd_open_loop_slc,
    "train": cmd_train,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
}


def _validate_referenced_files(cfg: dict):
    for key in ("plant_params", "engine_weights"):
        path = cfg[key]
        if path is not None and not Path(path).exists():
            raise ConfigError(f"{key} file not found: {path}")
    csv_path = cfg["reference"].get("csv_path")
    if cfg["reference"]["kind"] == "csv_samples" and csv_path and not Path(csv_path).exists():
        raise ConfigError(f"reference csv_path file not found: {csv_path}")


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config)
        _validate_referenced_files(cfg)
        if args.print_config:
            print(cfgmod.print_config(cfg))
            return 0
        if not args.command:
            parser.print_help()
            return 2
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except WloptError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
