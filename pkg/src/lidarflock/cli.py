"""Command line interface: train, eval, ablate, export, inspect-perception.

This module stays free of numerical imports at load time: when
--single-thread appears on the command line, BLAS thread-count
environment variables are pinned before numpy is first imported, which
is what makes fixed-seed runs byte-identical. All package imports
happen inside the command handlers.

Exit codes: 0 success, 2 configuration error, 3 artifact/IO error,
4 runtime fault.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS")


def _pin_single_thread():
    for var in _THREAD_VARS:
        os.environ[var] = "1"


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="TOML run configuration file")
    common.add_argument("--seed", type=int, default=None,
                        help="override the scenario base seed")
    common.add_argument("--output", default=None,
                        help="override the output directory")
    common.add_argument("--single-thread", action="store_true",
                        help="pin numerical libraries to one thread for "
                             "bit-reproducible output")
    common.add_argument("--verbose", action="store_true",
                        help="log at INFO level")

    parser = argparse.ArgumentParser(
        prog="lidarflock",
        description="Deterministic UAV-swarm collective navigation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", parents=[common],
                       help="configuration utilities")
    p.add_argument("action", choices=["print-defaults"])

    sub.add_parser("train", parents=[common],
                   help="train follower policies with PPO")

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a policy or the baseline controller")
    p.add_argument("--checkpoint", default=None, help="policy checkpoint")
    p.add_argument("--baseline", action="store_true",
                   help="evaluate the rule-based baseline")
    p.add_argument("--mode", choices=["train", "eval"], default=None,
                   help="override sensing mode")

    sub.add_parser("ablate", parents=[common],
                   help="train and evaluate reward ablations")

    p = sub.add_parser("export", parents=[common],
                       help="export a checkpoint to portable JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--format", choices=["json", "manifest"], default="json")
    p.add_argument("--out", default=None, help="output file path")

    p = sub.add_parser("inspect-perception", parents=[common],
                       help="dump per-frame perception stage products")
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--follower", type=int, default=0)

    return parser


# ----- helpers -----

def _load_config(args):
    from .config import RunConfig, parse_config
    cfg = parse_config(path=args.config) if args.config else parse_config()
    if args.seed is not None:
        cfg.scenario.seed = args.seed
    if args.output is not None:
        cfg.output.directory = args.output
    return cfg


def _outdir(cfg):
    path = cfg.output.directory
    os.makedirs(path, exist_ok=True)
    return path


def _write_config_snapshot(cfg, outdir):
    from .config import serialize_config
    with open(os.path.join(outdir, "config.toml"), "w") as f:
        f.write(serialize_config(cfg))


def _check_net_grid(cfg):
    from .config import ConfigError
    if (cfg.net.grid_azimuth, cfg.net.grid_elevation) != (72, 12):
        raise ConfigError("net grid dimensions must match the 72x12 sensor "
                          "grid for closed-loop runs")


def _env_params(cfg, mode):
    from .envs import EnvParams
    return EnvParams(mode=mode,
                     sigma_pos=cfg.env.sigma_pos,
                     sigma_vel=cfg.env.sigma_vel,
                     ego_delay=cfg.env.ego_delay,
                     neighbor_delay=cfg.env.neighbor_delay,
                     grid_delay=cfg.env.grid_delay,
                     reward=cfg.reward,
                     termination=cfg.termination).validate()


def _aggregate_csv(report, path):
    import csv
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "mean", "std"])
        w.writerow(["sr", report.sr, 0.0])
        for name, (mean, std) in report.aggregate.items():
            w.writerow([name, mean, std])


# ----- commands -----

def cmd_config(args):
    from .config import default_config_text
    sys.stdout.write(default_config_text())
    return 0


def cmd_train(args, cfg=None):
    cfg = cfg or _load_config(args)
    _check_net_grid(cfg)
    from .checkpoint import save_policy
    from .envs import make_envs
    from .ppo import train

    outdir = _outdir(cfg)
    _write_config_snapshot(cfg, outdir)
    scenario = cfg.scenario.to_scenario_config()
    envs = make_envs(cfg.train.n_envs, scenario,
                     _env_params(cfg, cfg.env.mode),
                     base_seed=cfg.scenario.seed)
    from .net import ActorCritic
    model = ActorCritic(cfg.net, seed=cfg.scenario.seed)

    def checkpoint_fn(m, update):
        save_policy(m, os.path.join(outdir, f"policy_update{update:05d}.ckpt"),
                    meta={"update": update})

    result = train(
        envs, model, cfg.rl, cfg.train.total_env_steps,
        seed=cfg.scenario.seed,
        log_path=os.path.join(outdir, "training_log.csv"),
        checkpoint_fn=checkpoint_fn if cfg.train.checkpoint_every else None,
        checkpoint_every=cfg.train.checkpoint_every)

    save_policy(model, os.path.join(outdir, "policy_final.ckpt"),
                meta={"env_steps": result.env_steps,
                      "updates": len(result.update_rows),
                      "episodes": len(result.episode_returns)})
    last = result.update_rows[-1] if result.update_rows else {}
    print(f"trained {result.env_steps} env steps, "
          f"{len(result.update_rows)} updates, "
          f"{len(result.episode_returns)} episodes; "
          f"final loss {last.get('loss', float('nan')):.4f}")
    print(f"checkpoint: {os.path.join(outdir, 'policy_final.ckpt')}")
    return 0


def _make_controller(args, cfg):
    from .config import ConfigError
    use_baseline = getattr(args, "baseline", False) \
        or (getattr(args, "checkpoint", None) is None
            and cfg.evaluation.controller == "baseline")
    if use_baseline and getattr(args, "checkpoint", None):
        raise ConfigError("--baseline and --checkpoint are mutually exclusive")
    if use_baseline:
        from .baseline import BaselineController
        return BaselineController(cfg.baseline), "baseline"
    path = getattr(args, "checkpoint", None)
    if path is None:
        raise ConfigError("eval needs --checkpoint or --baseline")
    from .baseline import PolicyController
    from .checkpoint import load_policy
    model, _ = load_policy(path)
    return PolicyController(model, deterministic=True), "policy"


def cmd_eval(args, cfg=None):
    cfg = cfg or _load_config(args)
    from .evalkit import (batch_evaluate, save_trajectory_binary,
                          save_trajectory_jsonl)

    outdir = _outdir(cfg)
    _write_config_snapshot(cfg, outdir)
    controller, kind = _make_controller(args, cfg)
    mode = args.mode or cfg.env.mode
    scenario = cfg.scenario.to_scenario_config()
    seeds = cfg.eval_seeds()
    max_steps = cfg.evaluation.max_steps or None

    report, trials = batch_evaluate(
        controller, scenario, _env_params(cfg, mode), seeds,
        csv_path=os.path.join(outdir, "trials.csv"), max_steps=max_steps)
    _aggregate_csv(report, os.path.join(outdir, "metrics.csv"))

    if cfg.evaluation.save_trajectories:
        for seed, traj in zip(seeds, trials):
            if cfg.evaluation.trajectory_format == "jsonl":
                save_trajectory_jsonl(
                    traj, os.path.join(outdir, f"trajectory_{seed}.jsonl"))
            else:
                save_trajectory_binary(
                    traj, os.path.join(outdir, f"trajectory_{seed}.bin"))

    print(f"evaluated {kind} over {len(seeds)} seeds ({mode} sensing)")
    for line in report.summary_lines():
        print(line)
    return 0


def cmd_ablate(args, cfg=None):
    cfg = cfg or _load_config(args)
    _check_net_grid(cfg)
    from .config import ConfigError, ablation_reward
    if not cfg.ablate.configurations:
        raise ConfigError("ablate.configurations is empty")

    import csv
    import dataclasses

    from .baseline import PolicyController
    from .checkpoint import save_policy
    from .envs import make_envs
    from .evalkit import batch_evaluate
    from .net import ActorCritic
    from .ppo import train

    outdir = _outdir(cfg)
    _write_config_snapshot(cfg, outdir)
    scenario = cfg.scenario.to_scenario_config()
    rows = []
    for name in cfg.ablate.configurations:
        row = {"configuration": name, "sr": "", "mp": "", "fr": "", "ms": "",
               "al": "", "mdo": "", "error": ""}
        try:
            reward = ablation_reward(cfg.reward, name)
            run_cfg = dataclasses.replace(cfg, reward=reward)
            envs = make_envs(cfg.train.n_envs, scenario,
                             _env_params(run_cfg, "train"),
                             base_seed=cfg.scenario.seed)
            model = ActorCritic(cfg.net, seed=cfg.scenario.seed)
            train(envs, model, cfg.rl, cfg.ablate.total_env_steps,
                  seed=cfg.scenario.seed)
            save_policy(model,
                        os.path.join(outdir, f"policy_{name}.ckpt"),
                        meta={"configuration": name})

            # evaluation always scores the full reward definition
            seeds = [cfg.scenario.seed + 1000 + i
                     for i in range(cfg.ablate.eval_trials)]
            report, _ = batch_evaluate(
                PolicyController(model, deterministic=True), scenario,
                _env_params(cfg, "train"), seeds)
            row["sr"] = report.sr
            for metric in ("mp", "fr", "ms", "al", "mdo"):
                if metric in report.aggregate:
                    row[metric] = report.aggregate[metric][0]
        except Exception as exc:     # record and continue with the rest
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
        shown = row["sr"] if row["sr"] != "" else "failed"
        print(f"{name}: SR {shown}")

    path = os.path.join(outdir, "ablation.csv")
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["configuration", "sr", "mp", "fr",
                                          "ms", "al", "mdo", "error"])
        w.writeheader()
        for row in rows:
            w.writerow(row)
    print(f"comparative report: {path}")
    return 0


def cmd_export(args, cfg=None):
    import json

    from .checkpoint import read_header

    cfg = cfg or _load_config(args)
    header, blob = read_header(args.checkpoint)
    out = args.out
    if out is None:
        stem = os.path.splitext(os.path.basename(args.checkpoint))[0]
        out = os.path.join(_outdir(cfg), f"{stem}.{args.format}.json")

    if args.format == "manifest":
        payload = header
    else:
        import numpy as np
        payload = dict(header)
        params = {}
        for layer in header["layers"]:
            start, nbytes = layer["offset"], layer["nbytes"]
            arr = np.frombuffer(blob[start:start + nbytes], dtype="<f4")
            params[layer["name"]] = np.round(
                arr.astype(float), 8).reshape(layer["shape"]).tolist()
        payload["params"] = params

    with open(out, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")
    print(f"exported: {out}")
    return 0


def cmd_inspect_perception(args, cfg=None):
    import json

    import numpy as np

    cfg = cfg or _load_config(args)
    from .config import ConfigError
    from .envs import SwarmEnv
    from .perception import tracks_to_record

    outdir = _outdir(cfg)
    scenario = cfg.scenario.to_scenario_config()
    if not (0 <= args.follower < scenario.n_followers):
        raise ConfigError(f"--follower must be in [0, {scenario.n_followers})")

    env = SwarmEnv(scenario, _env_params(cfg, "eval"),
                   seed=cfg.scenario.seed)
    env.reset()
    follower = args.follower
    tracker = env._trackers[follower]
    path = os.path.join(outdir, "inspect.jsonl")

    def rounded(arr):
        return np.round(np.asarray(arr, dtype=float), 5).tolist()

    with open(path, "w") as f:
        for _ in range(args.frames):
            obs, rewards, done, truncated, info = env.step(
                np.zeros((scenario.n_followers, 3)))
            pts = tracker.last_points
            mask = tracker.last_filter_mask
            record = {
                "t": round(env._t, 6),
                "raw_points": rounded(pts),
                "filtered_points": rounded(pts[mask]) if len(pts) else [],
                "clusters": [
                    {"centroid": rounded(c.centroid),
                     "n_points": int(c.n_points),
                     "hi_ratio": round(float(c.hi_ratio), 6),
                     "mean_range": round(float(c.mean_range), 6),
                     "kept": bool(c.kept)}
                    for c in tracker.last_clusters
                ],
                "tracks": tracks_to_record(tracker.tracks, env._t)["tracks"],
                "validated_ids": [t.id for t in tracker.validated_tracks()],
            }
            f.write(json.dumps(record) + "\n")
            if done or truncated:
                break
    print(f"stage dumps: {path}")
    return 0


# ----- entry point -----

def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if "--single-thread" in argv:
        _pin_single_thread()

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False)
        else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")

    handlers = {
        "config": cmd_config,
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
        "export": cmd_export,
        "inspect-perception": cmd_inspect_perception,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:
        from .checkpoint import CheckpointError
        from .config import ConfigError
        if isinstance(exc, ConfigError):
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        if isinstance(exc, (CheckpointError, OSError)):
            print(f"artifact error: {exc}", file=sys.stderr)
            return 3
        print(f"runtime fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
