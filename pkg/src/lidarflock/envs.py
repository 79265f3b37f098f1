"""Closed-loop swarm environment for training and evaluation.

One SwarmEnv owns a scenario (leader + followers + pillar field), the
scripted leader planner, per-follower sensing with measurement delays,
reward computation from simulator truth, and the termination verdict
logic. Followers are driven externally through step(); the leader is
driven internally by the local planner.

Two sensing modes:
  train: followers receive ground-truth relative neighbor states
         (visibility-gated, Gaussian-perturbed) and an obstacle grid
         from a reduced static-geometry scan.
  eval:  followers run the full LiDAR -> filter -> cluster -> track
         pipeline; neighbor info comes from validated tracks only.

Delays: ego state 0.1 s, neighbor info 0.2 s, obstacle grid 0.1 s, all
realized with timestamped delay lines (zeros during warm-up).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .lidar import DelayLine, LidarParams, scan
from .observation import GridParams, NeighborSlotPolicy, assemble
from .perception import (ClusterParams, FilterParams, NeighborTracker,
                         perturbed_relative_states)
from .planner import (ApfParams, LeaderPlanner, RrtParams, WaypointMission,
                      advance_mission)
from .reward import RewardParams, TerminationConfig, compute_reward, terminate
from .world import (ScenarioConfig, check_collisions, generate_scenario,
                    step_kinematics)

FAIL_VERDICTS = ("collision_uav", "collision_obstacle", "below_min_alt",
                 "above_max_alt", "leader_lost")
END_VERDICTS = FAIL_VERDICTS + ("truncated", "mission_complete")

# reduced ray grid for static-geometry scans (same FOV as the full sensor,
# one ray per occupancy-grid cell)
STATIC_LIDAR = LidarParams(n_azimuth=72, n_elevation=12)


@dataclass
class EnvParams:
    mode: str = "train"
    sigma_pos: float = 0.02
    sigma_vel: float = 0.05
    ego_delay: float = 0.1
    neighbor_delay: float = 0.2
    grid_delay: float = 0.1
    reward: RewardParams = field(default_factory=RewardParams)
    termination: TerminationConfig = field(default_factory=TerminationConfig)
    grid: GridParams = field(default_factory=GridParams)
    slots: NeighborSlotPolicy = field(default_factory=NeighborSlotPolicy)
    eval_lidar: LidarParams = field(default_factory=LidarParams)
    static_lidar: LidarParams = field(default_factory=lambda: STATIC_LIDAR)
    filter_params: FilterParams = field(default_factory=FilterParams)
    cluster_params: ClusterParams = field(default_factory=ClusterParams)
    apf: ApfParams = field(default_factory=ApfParams)
    rrt: RrtParams = field(default_factory=RrtParams)
    planner_min_z: float = 0.3    # drop ground returns from planner input

    def validate(self):
        if self.mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        for name in ("sigma_pos", "sigma_vel", "ego_delay",
                     "neighbor_delay", "grid_delay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        self.reward.validate()
        return self


def visible_neighbors(states, i, field_):
    """Indices of UAVs truth-visible from UAV i: inside the range gate and
    vertical FOV of the sensor, with a clear line of sight."""
    p_i = states[i].position
    out = []
    for j, s in enumerate(states):
        if j == i:
            continue
        rel = s.position - p_i
        d = float(np.linalg.norm(rel))
        if d < STATIC_LIDAR.d_min or d > STATIC_LIDAR.d_max:
            continue
        el = np.degrees(np.arctan2(rel[2], np.hypot(rel[0], rel[1])))
        if el < STATIC_LIDAR.elev_min_deg or el > STATIC_LIDAR.elev_max_deg:
            continue
        blocked = False
        for k, other in enumerate(states):
            if k in (i, j):
                continue
            if geometry.segment_blocked_by_sphere(p_i, s.position,
                                                  other.position, other.radius):
                blocked = True
                break
        if not blocked and field_ is not None:
            for m in range(field_.n_pillars):
                if geometry.segment_blocked_by_pillar(
                        p_i, s.position, field_.centers_xy[m],
                        field_.radii[m], field_.heights[m]):
                    blocked = True
                    break
        if not blocked:
            out.append(j)
    return out


def pillar_surface_rel(position, field_, max_dist):
    """Relative vector to the nearest surface point of each pillar within
    max_dist of the query position. Used for truth-based reward terms."""
    p = np.asarray(position, dtype=float)
    out = []
    for k in range(field_.n_pillars if field_ is not None else 0):
        c = field_.centers_xy[k]
        r = float(field_.radii[k])
        h = float(field_.heights[k])
        dxy = p[:2] - c
        lat = float(np.hypot(*dxy))
        if lat >= r:
            radial = dxy / lat if lat > 1e-12 else np.array([1.0, 0.0])
            q = np.array([c[0] + r * radial[0], c[1] + r * radial[1],
                          np.clip(p[2], 0.0, h)])
        elif p[2] > h:
            q = np.array([p[0], p[1], h])
        else:
            # inside the solid: nearest wall point at own height
            radial = dxy / lat if lat > 1e-12 else np.array([1.0, 0.0])
            q = np.array([c[0] + r * radial[0], c[1] + r * radial[1], p[2]])
        rel = q - p
        if np.linalg.norm(rel) <= max_dist:
            out.append(rel)
    return np.array(out) if out else np.zeros((0, 3))


class SwarmEnv:
    """Episode-scoped swarm simulation with a gym-like reset/step API."""

    def __init__(self, scenario_config: ScenarioConfig = None,
                 params: EnvParams = None, seed: int = 0):
        self.scenario_config = scenario_config or ScenarioConfig()
        self.params = (params or EnvParams()).validate()
        self.base_seed = int(seed)
        self._episode = -1
        self._finished = True
        self.scenario = None

    @property
    def n_followers(self):
        return self.scenario_config.n_followers

    @property
    def dt(self):
        return self.scenario_config.dt

    # ----- lifecycle -----

    def reset(self):
        self._episode += 1
        ss = np.random.SeedSequence((self.base_seed, self._episode))
        scen_seed = int(ss.generate_state(1)[0])
        kids = ss.spawn(3)
        self._scan_rng = np.random.default_rng(kids[0])
        self._noise_rng = np.random.default_rng(kids[1])
        self._plan_rng = np.random.default_rng(kids[2])

        self.scenario = generate_scenario(self.scenario_config, seed=scen_seed)
        self.states = self.scenario.states
        self.field = self.scenario.field
        self._t = 0.0
        self._finished = False
        self._unseen_elapsed = 0.0
        self._ep_rewards = np.zeros(self.n_followers)
        self._ep_steps = 0
        self._last_mdo = None
        self._last_n_perceived = [0] * self.n_followers

        mission = WaypointMission(
            waypoints=np.array([self.scenario.goal]),
            arrival_tolerance=1.0,
            cruise_speed=self.scenario.cruise_speed)
        self.planner = LeaderPlanner(
            mission, apf=self.params.apf, rrt=self.params.rrt,
            alt_target=self.scenario_config.spawn_altitude)

        p = self.params
        f = self.n_followers
        self._ego_lines = [DelayLine(p.ego_delay) for _ in range(f)]
        self._neigh_lines = [DelayLine(p.neighbor_delay) for _ in range(f)]
        if p.mode == "train":
            self._grid_lines = [DelayLine(p.grid_delay) for _ in range(f)]
            self._cloud_lines = None
            self._trackers = None
        else:
            self._grid_lines = None
            self._cloud_lines = [DelayLine(p.grid_delay) for _ in range(f)]
            self._trackers = [NeighborTracker(p.filter_params,
                                              p.cluster_params)
                              for _ in range(f)]
            self._processed_until = [-np.inf] * f
        self._leader_points = np.zeros((0, 3))

        self._sense()
        return [self._build_obs(i) for i in range(f)]

    # ----- sensing -----

    def _sense(self):
        p = self.params
        now = self._t

        cloud = scan(self.states, self.field, 0, p.static_lidar,
                     rng=self._scan_rng, time=now, include_uavs=False)
        pts_map = geometry.quat_rotate(cloud.sensor_quat, cloud.xyz) \
            + cloud.sensor_pos
        self._leader_points = pts_map[pts_map[:, 2] > p.planner_min_z]
        mdo_candidates = [pts_map] if len(pts_map) else []

        for i in range(self.n_followers):
            s = self.states[i + 1]
            self._ego_lines[i].push(now, (s.velocity.copy(),
                                          s.orientation.copy()))
            if p.mode == "train":
                vis = visible_neighbors(self.states, i + 1, self.field)
                rels = [(self.states[j].position - s.position,
                         self.states[j].velocity - s.velocity) for j in vis]
                rels = perturbed_relative_states(rels, p.sigma_pos,
                                                 p.sigma_vel, self._noise_rng)
                self._neigh_lines[i].push(now, rels)
                self._last_n_perceived[i] = len(vis)

                fc = scan(self.states, self.field, i + 1, p.static_lidar,
                          rng=self._scan_rng, time=now, include_uavs=False)
                self._grid_lines[i].push(now, fc.xyz)
                if len(fc.xyz):
                    fmap = geometry.quat_rotate(fc.sensor_quat, fc.xyz) \
                        + fc.sensor_pos
                    mdo_candidates.append(fmap)
            else:
                fc = scan(self.states, self.field, i + 1, p.eval_lidar,
                          rng=self._scan_rng, time=now, include_uavs=True)
                self._cloud_lines[i].push(now, (fc, s.velocity.copy()))
                env_pts = fc.xyz[fc.intensity < p.filter_params.i_high]
                if len(env_pts):
                    fmap = geometry.quat_rotate(fc.sensor_quat, env_pts) \
                        + fc.sensor_pos
                    mdo_candidates.append(fmap)

        if p.mode == "eval":
            for i in range(self.n_followers):
                item = self._cloud_lines[i].fetch(now)
                if item is None:
                    self._last_n_perceived[i] = 0
                    continue
                dcloud, dvel = item
                if dcloud.frame_time > self._processed_until[i]:
                    self._processed_until[i] = dcloud.frame_time
                    tracker = self._trackers[i]
                    tracker.process_cloud(dcloud, dcloud.sensor_pos,
                                          dcloud.frame_time)
                    rels = tracker.relative_states(dcloud.sensor_pos, dvel)
                    self._neigh_lines[i].push(dcloud.frame_time, rels)
                self._last_n_perceived[i] = len(
                    self._trackers[i].validated_tracks())

        if mdo_candidates:
            pts = np.vstack(mdo_candidates)
            pos = np.array([s.position for s in self.states])
            d = np.linalg.norm(pts[None, :, :] - pos[:, None, :], axis=2)
            self._last_mdo = float(d.min())
        else:
            self._last_mdo = None

    def _build_obs(self, i):
        p = self.params
        now = self._t
        ego = self._ego_lines[i].fetch(now)
        rels = self._neigh_lines[i].fetch(now)
        if p.mode == "train":
            pts = self._grid_lines[i].fetch(now)
        else:
            item = self._cloud_lines[i].fetch(now)
            if item is None:
                pts = None
            else:
                dcloud = item[0]
                pts = dcloud.xyz[dcloud.intensity < p.filter_params.i_high]
        return assemble(ego, rels if rels is not None else [], pts,
                        p.slots, p.grid)

    # ----- stepping -----

    def step(self, actions):
        """Advance one control period. actions: (n_followers, 3) velocity
        commands. Returns (observations, rewards, done, truncated, info)."""
        if self._finished:
            raise RuntimeError("episode over; call reset()")
        actions = np.asarray(actions, dtype=float).reshape(
            self.n_followers, 3)
        if not np.all(np.isfinite(actions)):
            raise ValueError("actions must be finite")

        p = self.params
        cfg = self.scenario_config
        leader_cmd = self.planner.command(self.states[0].position,
                                          self._leader_points, self._t,
                                          self._plan_rng)
        cmds = [leader_cmd] + [actions[i] for i in range(self.n_followers)]
        self.states = [step_kinematics(s, c, cfg.dt, cfg.v_max)
                       for s, c in zip(self.states, cmds)]
        self._t += cfg.dt
        self._ep_steps += 1

        self._sense()

        report = check_collisions(self.states, self.field)
        collided = set()
        for a, b in report.uav_pairs:
            collided.add(a)
            collided.add(b)
        collided.update(report.obstacle_hits)

        positions = np.array([s.position for s in self.states])
        com = positions.mean(axis=0)
        h_leader = float(self.states[0].position[2])
        n_true = len(self.states) - 1
        rewards = np.zeros(self.n_followers)
        breakdowns = []
        for i in range(self.n_followers):
            s = self.states[i + 1]
            others = np.array([st.position for j, st in enumerate(self.states)
                               if j != i + 1])
            obstacle_rel = pillar_surface_rel(s.position, self.field,
                                              p.reward.d_prox)
            bd = compute_reward(
                s.position, s.velocity, others, com, obstacle_rel,
                h_leader, geometry.body_up_z(s.orientation),
                self._last_n_perceived[i], n_true,
                (i + 1) in collided, p.reward)
            rewards[i] = bd.total
            breakdowns.append(bd)
        self._ep_rewards += rewards

        if p.mode == "eval":
            if all(n == 0 for n in self._last_n_perceived):
                self._unseen_elapsed += cfg.dt
            else:
                self._unseen_elapsed = 0.0

        advance_mission(self.states[0].position, self.planner.mission)
        verdict = terminate(self.states, self.field, self._t,
                            p.termination, self._unseen_elapsed,
                            eval_mode=(p.mode == "eval"))
        if verdict in ("running", "truncated") and self.planner.mission.complete:
            verdict = "mission_complete"

        done = verdict in FAIL_VERDICTS
        truncated = verdict in ("truncated", "mission_complete")
        obs = [self._build_obs(i) for i in range(self.n_followers)]

        info = {
            "time": self._t,
            "verdict": verdict,
            "n_perceived": list(self._last_n_perceived),
            "mdo_step": self._last_mdo,
            "reward_terms": [bd.as_dict() for bd in breakdowns],
            "positions": positions,
            "velocities": np.array([s.velocity for s in self.states]),
            "leader_goal": self.scenario.goal.copy(),
        }
        if done or truncated:
            self._finished = True
            info["episode_return"] = float(self._ep_rewards.mean())
            info["episode_length"] = self._ep_steps
            info["follower_returns"] = self._ep_rewards.copy()
        return obs, rewards, done, truncated, info


def make_envs(n_envs, scenario_config=None, params=None, base_seed=0):
    """Independent environments with decorrelated seed streams."""
    return [SwarmEnv(scenario_config, params, seed=base_seed + 7919 * i)
            for i in range(n_envs)]
