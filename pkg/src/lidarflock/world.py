"""Core swarm state, deterministic kinematic stepping, and scenario generation.

A scenario is a procedurally generated map: a square spawn grid of UAVs at
the map center, a goal on a circle around the spawn, and optional cylinder
pillars placed by rejection sampling with a minimum surface gap.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import (
    QUAT_IDENTITY,
    point_to_pillars,
    yaw_to_quat,
)

R_UAV = 0.2            # body sphere radius, m
YAW_ALIGN_SPEED = 0.05  # below this horizontal speed the yaw holds, m/s


class ScenarioError(RuntimeError):
    """Raised when rejection sampling cannot satisfy the placement rules."""


@dataclass
class UavState:
    position: np.ndarray          # (3,) m
    velocity: np.ndarray          # (3,) m/s
    orientation: np.ndarray       # (4,) unit quaternion [w, x, y, z]
    role: str = "follower"        # "leader" | "follower"
    radius: float = R_UAV

    def copy(self):
        return UavState(
            position=self.position.copy(),
            velocity=self.velocity.copy(),
            orientation=self.orientation.copy(),
            role=self.role,
            radius=self.radius,
        )


@dataclass
class ObstacleField:
    centers_xy: np.ndarray        # (P, 2)
    radii: np.ndarray             # (P,)
    heights: np.ndarray           # (P,)
    bounds_half_xy: float         # axis-aligned world half-extent, m
    bounds_z: float = 6.0

    @staticmethod
    def empty(bounds_half_xy=50.0, bounds_z=6.0):
        return ObstacleField(
            centers_xy=np.zeros((0, 2)),
            radii=np.zeros(0),
            heights=np.zeros(0),
            bounds_half_xy=bounds_half_xy,
            bounds_z=bounds_z,
        )

    @property
    def n_pillars(self):
        return len(self.radii)

    def to_dict(self):
        return {
            "pillars": [
                {"center": [float(c[0]), float(c[1])], "radius": float(r), "height": float(h)}
                for c, r, h in zip(self.centers_xy, self.radii, self.heights)
            ],
            "bounds_half_xy": float(self.bounds_half_xy),
            "bounds_z": float(self.bounds_z),
        }


@dataclass
class ScenarioConfig:
    n_followers: int = 4
    min_gap: Optional[float] = None      # None -> no pillars
    goal_radius: float = 30.0
    spawn_spacing: float = 1.6
    leader_speed_range: tuple = (1.0, 1.2)
    seed: int = 0
    episode_time_limit: float = 60.0
    dt: float = 0.1
    # placement knobs beyond the headline parameters
    n_pillars: int = 12
    pillar_radius_range: tuple = (0.3, 0.8)
    pillar_height: float = 5.0
    spawn_altitude: float = 1.5
    spawn_clear_radius: float = 5.0
    goal_clear_radius: float = 2.0
    bounds_margin: float = 10.0
    v_max: float = 2.0

    def validate(self):
        if self.n_followers < 1:
            raise ValueError("n_followers must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        lo, hi = self.leader_speed_range
        if lo > hi:
            raise ValueError("leader_speed_range must be ordered (min, max)")
        if self.min_gap is not None and self.min_gap < 0:
            raise ValueError("min_gap must be >= 0")
        return self


@dataclass
class Scenario:
    config: ScenarioConfig
    field: ObstacleField
    states: list                  # list[UavState], index 0 is the leader
    goal: np.ndarray              # (3,)
    cruise_speed: float

    @property
    def n_uavs(self):
        return len(self.states)


def step_kinematics(state: UavState, command, dt: float, v_max: float = 2.0) -> UavState:
    """Advance one UAV by a velocity command over dt.

    The command is norm-clamped to v_max before integration. Yaw follows
    the horizontal velocity direction once horizontal speed exceeds
    YAW_ALIGN_SPEED; otherwise the orientation is unchanged.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    command = np.asarray(command, dtype=float)
    if command.shape != (3,) or not np.all(np.isfinite(command)):
        raise ValueError("command must be a finite 3-vector")
    speed = np.linalg.norm(command)
    if speed > v_max:
        command = command * (v_max / speed)
    new_pos = state.position + command * dt
    horiz = np.hypot(command[0], command[1])
    if horiz > YAW_ALIGN_SPEED:
        orientation = yaw_to_quat(np.arctan2(command[1], command[0]))
    else:
        orientation = state.orientation.copy()
    return UavState(
        position=new_pos,
        velocity=command.copy(),
        orientation=orientation,
        role=state.role,
        radius=state.radius,
    )


def _spawn_grid(n_uavs: int, spacing: float, goal_dir_xy=None):
    """Centered square grid positions; the goal-side cell leads.

    Putting the leader on the goal-facing edge keeps its departure path
    clear of the followers, which start blind until their trackers warm up.
    """
    side = int(np.ceil(np.sqrt(n_uavs)))
    xs, ys = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    cells = np.column_stack([xs.ravel(), ys.ravel()]).astype(float) * spacing
    cells -= cells.mean(axis=0)
    if goal_dir_xy is None:
        score = -np.hypot(cells[:, 0], cells[:, 1])
    else:
        score = cells @ np.asarray(goal_dir_xy, dtype=float)
    order = np.argsort(-score, kind="stable")
    leader_idx = order[0]
    rest = [i for i in range(len(cells)) if i != leader_idx]
    chosen = [cells[leader_idx]] + [cells[i] for i in rest[: n_uavs - 1]]
    return np.array(chosen)


def generate_scenario(config: ScenarioConfig, seed: Optional[int] = None) -> Scenario:
    """Build a deterministic scenario from (config, seed).

    Raises ScenarioError when pillar rejection sampling exhausts its
    attempt budget.
    """
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n_uavs = config.n_followers + 1

    angle = rng.uniform(0.0, 2.0 * np.pi)
    goal = np.array([
        config.goal_radius * np.cos(angle),
        config.goal_radius * np.sin(angle),
        config.spawn_altitude,
    ])

    cells = _spawn_grid(n_uavs, config.spawn_spacing,
                        goal_dir_xy=(np.cos(angle), np.sin(angle)))
    states = []
    for i, cell in enumerate(cells):
        states.append(UavState(
            position=np.array([cell[0], cell[1], config.spawn_altitude]),
            velocity=np.zeros(3),
            orientation=QUAT_IDENTITY.copy(),
            role="leader" if i == 0 else "follower",
        ))

    bounds_half = config.goal_radius + config.bounds_margin
    field = ObstacleField.empty(bounds_half_xy=bounds_half,
                                bounds_z=config.pillar_height + 1.0)
    if config.min_gap is not None and config.n_pillars > 0:
        centers, radii = [], []
        budget = 200 * config.n_pillars
        attempts = 0
        while len(centers) < config.n_pillars:
            attempts += 1
            if attempts > budget:
                raise ScenarioError(
                    f"could not place {config.n_pillars} pillars with "
                    f"min_gap={config.min_gap} in {budget} attempts")
            c = rng.uniform(-bounds_half, bounds_half, size=2)
            r = rng.uniform(*config.pillar_radius_range)
            if np.hypot(*c) < config.spawn_clear_radius + r:
                continue
            if np.hypot(c[0] - goal[0], c[1] - goal[1]) < config.goal_clear_radius + r:
                continue
            ok = True
            for cc, rr in zip(centers, radii):
                if np.hypot(c[0] - cc[0], c[1] - cc[1]) < r + rr + config.min_gap:
                    ok = False
                    break
            if ok:
                centers.append(c)
                radii.append(r)
        field = ObstacleField(
            centers_xy=np.array(centers),
            radii=np.array(radii),
            heights=np.full(config.n_pillars, config.pillar_height),
            bounds_half_xy=bounds_half,
            bounds_z=config.pillar_height + 1.0,
        )

    lo, hi = config.leader_speed_range
    cruise = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    return Scenario(config=config, field=field, states=states, goal=goal,
                    cruise_speed=cruise)


@dataclass
class CollisionReport:
    uav_pairs: list = field(default_factory=list)      # [(i, j), ...]
    obstacle_hits: list = field(default_factory=list)  # [i, ...]

    @property
    def any_uav(self):
        return len(self.uav_pairs) > 0

    @property
    def any_obstacle(self):
        return len(self.obstacle_hits) > 0


def check_collisions(states, field: ObstacleField) -> CollisionReport:
    """Flag UAV pairs closer than the sum of their radii and UAVs whose
    pillar surface distance is below their own radius."""
    report = CollisionReport()
    n = len(states)
    for i in range(n):
        for j in range(i + 1, n):
            d = np.linalg.norm(states[i].position - states[j].position)
            if d < states[i].radius + states[j].radius:
                report.uav_pairs.append((i, j))
    if field.n_pillars > 0:
        for i in range(n):
            d = point_to_pillars(states[i].position, field.centers_xy,
                                 field.radii, field.heights)
            if d < states[i].radius:
                report.obstacle_hits.append(i)
    return report


def distance_to_obstacles(p, field: ObstacleField) -> float:
    """Euclidean distance from p to the nearest pillar surface; +inf when
    the field is empty. Negative when p is inside a pillar."""
    return point_to_pillars(np.asarray(p, dtype=float),
                            field.centers_xy, field.radii, field.heights)


def snapshot(states):
    """Deep-copied list of states, safe to hold across steps."""
    return [s.copy() for s in states]
