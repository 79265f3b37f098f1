"""Episode runner, trajectory persistence, and the six-metric suite.

Metrics follow the evaluation protocol: success rate (SR), mission
progress (MP), flight range (FR, swarm center to farthest UAV), minimum
separation (MS, closest pair), alignment (AL, mean cosine similarity to
the mean velocity), and minimum detection offset (MDO, closest approach
to any sensed obstacle point). Per-step quantities are averaged over
the steps before termination; AL skips steps containing near-zero
velocities; MDO is omitted when nothing was ever detected.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .envs import FAIL_VERDICTS, SwarmEnv

PERCEPTION_RANGE = 10.0
TRAJ_MAGIC = "lidarflock-trajectory"
TRAJ_VERSION = 1


@dataclass
class Trajectory:
    """Recorded episode: frame 0 is the reset state, then one frame per
    control step. UAV index 0 is the leader."""
    times: np.ndarray          # (T,)
    positions: np.ndarray      # (T, N, 3)
    velocities: np.ndarray     # (T, N, 3)
    mdo: np.ndarray            # (T,) nan where nothing detected
    n_perceived: np.ndarray    # (T, F)
    goal: np.ndarray           # (3,)
    verdict: str
    success: bool
    dt: float

    @property
    def n_frames(self):
        return len(self.times)

    @property
    def n_uavs(self):
        return self.positions.shape[1]

    def metric_frames(self):
        """Frame slice the per-step metrics run over: everything before a
        failure verdict's final frame, everything otherwise."""
        if self.verdict in FAIL_VERDICTS and self.n_frames > 1:
            return slice(0, self.n_frames - 1)
        return slice(0, self.n_frames)


def run_episode(env: SwarmEnv, controller, max_steps=None):
    """Close the loop between env and controller and record a Trajectory."""
    obs = env.reset()
    times = [0.0]
    positions = [np.array([s.position for s in env.states])]
    velocities = [np.array([s.velocity for s in env.states])]
    mdo = [env._last_mdo if env._last_mdo is not None else np.nan]
    n_perceived = [list(env._last_n_perceived)]
    verdict = "running"
    steps = 0
    while True:
        altitudes = [env.states[i + 1].position[2]
                     for i in range(env.n_followers)]
        actions = controller.act(obs, altitudes)
        obs, _, done, truncated, info = env.step(actions)
        times.append(info["time"])
        positions.append(info["positions"])
        velocities.append(info["velocities"])
        mdo.append(info["mdo_step"] if info["mdo_step"] is not None else np.nan)
        n_perceived.append(info["n_perceived"])
        steps += 1
        if done or truncated:
            verdict = info["verdict"]
            break
        if max_steps is not None and steps >= max_steps:
            verdict = "truncated"
            break

    positions = np.array(positions)
    leader_final = positions[-1, 0]
    follower_final = positions[-1, 1:]
    near = np.linalg.norm(follower_final - leader_final, axis=1) \
        <= PERCEPTION_RANGE
    success = (verdict == "mission_complete") and bool(np.all(near))
    return Trajectory(
        times=np.array(times),
        positions=positions,
        velocities=np.array(velocities),
        mdo=np.array(mdo, dtype=float),
        n_perceived=np.array(n_perceived, dtype=int),
        goal=env.scenario.goal.copy(),
        verdict=verdict,
        success=success,
        dt=env.dt,
    )


# ===== metrics =====

def metric_sr(trials) -> float:
    """Percentage of successful trials."""
    if not len(trials):
        raise ValueError("need at least one trial")
    return 100.0 * sum(1 for t in trials if t.success) / len(trials)


def metric_mp(traj: Trajectory):
    """Mission progress of the leader, percent. Returns (value, degenerate)
    where degenerate flags a start position already at the goal."""
    p_start = traj.positions[0, 0]
    p_end = traj.positions[-1, 0]
    denom = float(np.linalg.norm(p_start - traj.goal))
    if denom < 1e-12:
        return 100.0, True
    value = (1.0 - float(np.linalg.norm(p_end - traj.goal)) / denom) * 100.0
    return value, False


def step_metric_series(traj: Trajectory):
    """Per-step FR / MS / AL / MDO series over the metric frame window.
    AL entries are nan on skipped steps, MDO nan where nothing detected."""
    sl = traj.metric_frames()
    pos = traj.positions[sl]
    vel = traj.velocities[sl]
    t_steps, n = pos.shape[0], pos.shape[1]

    center = pos.mean(axis=1)
    fr = np.linalg.norm(pos - center[:, None, :], axis=2).max(axis=1)

    ms = np.full(t_steps, np.nan)
    if n >= 2:
        iu = np.triu_indices(n, k=1)
        for t in range(t_steps):
            d = np.linalg.norm(pos[t][iu[0]] - pos[t][iu[1]], axis=1)
            ms[t] = d.min()

    al = np.full(t_steps, np.nan)
    if n >= 2:
        for t in range(t_steps):
            speeds = np.linalg.norm(vel[t], axis=1)
            v_avg = vel[t].mean(axis=0)
            avg_speed = float(np.linalg.norm(v_avg))
            if np.any(speeds < 1e-6) or avg_speed < 1e-6:
                continue
            cos = (vel[t] @ v_avg) / (speeds * avg_speed)
            al[t] = float(np.mean(cos))

    mdo = traj.mdo[sl].copy()
    return {"fr": fr, "ms": ms, "al": al, "mdo": mdo}


def _nanmean_or_none(series):
    valid = series[~np.isnan(series)]
    return float(valid.mean()) if len(valid) else None


def metric_fr_ms_al_mdo(traj: Trajectory):
    """(FR, MS, AL, MDO) episode means. AL and MDO are None when every
    step was skipped / nothing was ever detected."""
    s = step_metric_series(traj)
    fr = float(s["fr"].mean())
    ms = _nanmean_or_none(s["ms"])
    al = _nanmean_or_none(s["al"])
    mdo = _nanmean_or_none(s["mdo"])
    return fr, ms, al, mdo


# ===== batch evaluation =====

@dataclass
class MetricsReport:
    rows: list
    sr: float
    aggregate: dict            # name -> (mean, std) over defined values

    def summary_lines(self):
        out = [f"SR {self.sr:.1f}%"]
        for name, (mean, std) in self.aggregate.items():
            out.append(f"{name.upper()} {mean:.4f} +/- {std:.4f}")
        return out


def batch_evaluate(controller, scenario_config, env_params, seeds,
                   csv_path=None, max_steps=None):
    """Run one episode per seed and aggregate the metric suite."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    rows = []
    trials = []
    for s in seeds:
        env = SwarmEnv(scenario_config, env_params, seed=int(s))
        traj = run_episode(env, controller, max_steps=max_steps)
        trials.append(traj)
        mp, mp_flag = metric_mp(traj)
        fr, ms, al, mdo = metric_fr_ms_al_mdo(traj)
        rows.append({
            "seed": int(s),
            "verdict": traj.verdict,
            "success": int(traj.success),
            "episode_steps": traj.n_frames - 1,
            "mp": mp,
            "mp_degenerate": int(mp_flag),
            "fr": fr,
            "ms": ms,
            "al": al,
            "mdo": mdo,
        })

    sr = metric_sr(trials)
    aggregate = {}
    for name in ("mp", "fr", "ms", "al", "mdo"):
        vals = [r[name] for r in rows if r[name] is not None]
        if vals:
            aggregate[name] = (float(np.mean(vals)), float(np.std(vals)))

    if csv_path is not None:
        fields = ["seed", "verdict", "success", "episode_steps", "mp",
                  "mp_degenerate", "fr", "ms", "al", "mdo"]
        with open(csv_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=fields)
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if r[k] is None else r[k]) for k in fields})
    return MetricsReport(rows=rows, sr=sr, aggregate=aggregate), trials


# ===== persistence =====

def _header_dict(traj: Trajectory):
    return {
        "format": TRAJ_MAGIC,
        "version": TRAJ_VERSION,
        "n_frames": int(traj.n_frames),
        "n_uavs": int(traj.n_uavs),
        "n_followers": int(traj.n_perceived.shape[1]),
        "dt": float(traj.dt),
        "goal": [float(v) for v in traj.goal],
        "verdict": traj.verdict,
        "success": bool(traj.success),
    }


def save_trajectory_jsonl(traj: Trajectory, path):
    """One JSON header line, then one JSON frame per line."""
    with open(path, "w") as f:
        f.write(json.dumps(_header_dict(traj), sort_keys=True) + "\n")
        for t in range(traj.n_frames):
            frame = {
                "t": round(float(traj.times[t]), 9),
                "p": np.round(traj.positions[t], 9).tolist(),
                "v": np.round(traj.velocities[t], 9).tolist(),
                "mdo": None if np.isnan(traj.mdo[t]) else float(traj.mdo[t]),
                "np": traj.n_perceived[t].tolist(),
            }
            f.write(json.dumps(frame) + "\n")


def load_trajectory_jsonl(path) -> Trajectory:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != TRAJ_MAGIC:
            raise ValueError("not a trajectory file")
        frames = [json.loads(line) for line in f if line.strip()]
    return Trajectory(
        times=np.array([fr["t"] for fr in frames]),
        positions=np.array([fr["p"] for fr in frames]),
        velocities=np.array([fr["v"] for fr in frames]),
        mdo=np.array([np.nan if fr["mdo"] is None else fr["mdo"]
                      for fr in frames]),
        n_perceived=np.array([fr["np"] for fr in frames], dtype=int),
        goal=np.array(header["goal"]),
        verdict=header["verdict"],
        success=header["success"],
        dt=header["dt"],
    )


def save_trajectory_binary(traj: Trajectory, path):
    """JSON header + zero byte + little-endian float32 arrays in fixed
    order: times, positions, velocities, mdo, n_perceived."""
    with open(path, "wb") as f:
        f.write(json.dumps(_header_dict(traj), sort_keys=True).encode("utf-8"))
        f.write(b"\0")
        for arr in (traj.times, traj.positions.ravel(),
                    traj.velocities.ravel(), traj.mdo,
                    traj.n_perceived.astype(np.float32).ravel()):
            f.write(np.asarray(arr, dtype="<f4").tobytes())


def load_trajectory_binary(path) -> Trajectory:
    with open(path, "rb") as f:
        raw = f.read()
    sep = raw.find(b"\0")
    if sep < 0:
        raise ValueError("missing header separator")
    header = json.loads(raw[:sep].decode("utf-8"))
    if header.get("format") != TRAJ_MAGIC:
        raise ValueError("not a trajectory file")
    t, n = header["n_frames"], header["n_uavs"]
    nf = header["n_followers"]
    blob = np.frombuffer(raw[sep + 1:], dtype="<f4").astype(float)
    expected = t + 2 * t * n * 3 + t + t * nf
    if len(blob) != expected:
        raise ValueError(f"blob holds {len(blob)} scalars, expected {expected}")
    i = 0

    def take(count, shape):
        nonlocal i
        out = blob[i:i + count].reshape(shape)
        i += count
        return out

    times = take(t, (t,))
    positions = take(t * n * 3, (t, n, 3))
    velocities = take(t * n * 3, (t, n, 3))
    mdo = take(t, (t,))
    n_perceived = take(t * nf, (t, nf)).astype(int)
    return Trajectory(times=times, positions=positions,
                      velocities=velocities, mdo=mdo,
                      n_perceived=n_perceived,
                      goal=np.array(header["goal"]),
                      verdict=header["verdict"], success=header["success"],
                      dt=header["dt"])
