"""Leader guidance: local RRT paths toward the active waypoint plus an
artificial-potential-field velocity command.

Planning happens in the horizontal plane at the leader's altitude. The
RRT grows inside a local window (the sensing radius) and exists to keep
the potential field out of local minima; the APF combines attraction
along the planned path with repulsion from nearby obstacle returns.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import segment_point_distance_2d

log = logging.getLogger(__name__)


@dataclass
class WaypointMission:
    waypoints: list                  # [(3,) arrays]
    active_index: int = 0
    arrival_tolerance: float = 1.0
    cruise_speed: float = 1.0

    def validate(self):
        if self.arrival_tolerance <= 0:
            raise ValueError("arrival_tolerance must be positive")
        if len(self.waypoints) and not (0 <= self.active_index <= len(self.waypoints)):
            raise ValueError("active_index out of range")
        return self

    @property
    def complete(self):
        return self.active_index >= len(self.waypoints)

    @property
    def active_waypoint(self):
        return None if self.complete else np.asarray(self.waypoints[self.active_index], dtype=float)


def advance_mission(position, mission: WaypointMission) -> WaypointMission:
    """Advance past every waypoint whose horizontal distance is inside the
    arrival tolerance. Returns the (mutated) mission."""
    pos = np.asarray(position, dtype=float)
    while not mission.complete:
        wp = mission.active_waypoint
        if np.hypot(pos[0] - wp[0], pos[1] - wp[1]) < mission.arrival_tolerance:
            mission.active_index += 1
        else:
            break
    return mission


@dataclass
class ApfParams:
    k_att: float = 1.0
    k_rep: float = 0.5
    rep_radius: float = 3.0
    lookahead: float = 1.5
    k_alt: float = 1.0
    k_tangent: float = 1.0           # sidestep factor for dead-ahead obstacles
    tangent_cone_deg: float = 25.0

    def validate(self):
        if min(self.k_att, self.k_rep, self.rep_radius) <= 0:
            raise ValueError("APF gains and radius must be positive")
        return self


@dataclass
class RrtParams:
    step: float = 0.5
    max_nodes: int = 2000
    goal_bias: float = 0.1
    window_radius: float = 10.0
    clearance: float = 0.5           # body radius plus margin, to point returns
    replan_period: float = 1.0


def _segment_clear(a_xy, b_xy, points_xy, clearance: float) -> bool:
    if len(points_xy) == 0:
        return True
    return bool(np.min(segment_point_distance_2d(a_xy, b_xy, points_xy)) >= clearance)


def _shortcut(path, points_xy, clearance):
    """Greedy shortcutting: from each kept vertex jump to the farthest
    later vertex reachable on a clear straight segment."""
    out = [path[0]]
    i = 0
    while i < len(path) - 1:
        j = len(path) - 1
        while j > i + 1 and not _segment_clear(path[i], path[j], points_xy, clearance):
            j -= 1
        out.append(path[j])
        i = j
    return out


def plan_local_path(start, goal, obstacle_points_xy, rng,
                    params: RrtParams = None):
    """RRT in the plane from start toward goal, both (2,) arrays.

    The tree grows inside a window of window_radius around start; a goal
    outside the window is replaced by the boundary point toward it.
    Returns a polyline [(2,) ...] or None when no path is found within
    the node budget (including a goal buried inside an obstacle).
    """
    params = params or RrtParams()
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    points = np.asarray(obstacle_points_xy, dtype=float).reshape(-1, 2)

    to_goal = goal - start
    dist_goal = np.linalg.norm(to_goal)
    if dist_goal > params.window_radius:
        goal = start + to_goal * (params.window_radius / dist_goal)

    if len(points) and np.min(np.linalg.norm(points - goal, axis=1)) < params.clearance:
        return None
    if _segment_clear(start, goal, points, params.clearance):
        return [start.copy(), goal.copy()]

    nodes = np.zeros((params.max_nodes, 2))
    parents = np.full(params.max_nodes, -1, dtype=int)
    nodes[0] = start
    n = 1
    while n < params.max_nodes:
        if rng.uniform() < params.goal_bias:
            sample = goal
        else:
            ang = rng.uniform(0.0, 2.0 * np.pi)
            rad = params.window_radius * np.sqrt(rng.uniform())
            sample = start + rad * np.array([np.cos(ang), np.sin(ang)])
        d = np.linalg.norm(nodes[:n] - sample, axis=1)
        nearest = int(np.argmin(d))
        if d[nearest] < 1e-9:
            continue
        new = nodes[nearest] + (sample - nodes[nearest]) * min(1.0, params.step / d[nearest])
        if not _segment_clear(nodes[nearest], new, points, params.clearance):
            continue
        nodes[n] = new
        parents[n] = nearest
        if (np.linalg.norm(new - goal) <= params.step
                and _segment_clear(new, goal, points, params.clearance)):
            path = [goal.copy()]
            idx = n
            while idx >= 0:
                path.append(nodes[idx].copy())
                idx = parents[idx]
            path.reverse()
            return _shortcut(path, points, params.clearance)
        n += 1
    return None


def _lookahead_point(path, pos_xy, lookahead: float):
    """Point `lookahead` meters past the projection of pos onto the path."""
    pts = [np.asarray(p, dtype=float) for p in path]
    # locate the closest point on the polyline
    best_d = np.inf
    best = (0, 0.0)
    for i in range(len(pts) - 1):
        a, b = pts[i], pts[i + 1]
        ab = b - a
        denom = float(ab @ ab)
        s = 0.0 if denom < 1e-18 else float(np.clip((pos_xy - a) @ ab / denom, 0.0, 1.0))
        proj = a + s * ab
        d = float(np.linalg.norm(pos_xy - proj))
        if d < best_d:
            best_d = d
            best = (i, s)
    # walk forward along the remaining length
    i, s = best
    remaining = lookahead
    cur = pts[i] + s * (pts[i + 1] - pts[i])
    while i < len(pts) - 1:
        seg_end = pts[i + 1]
        seg_len = float(np.linalg.norm(seg_end - cur))
        if seg_len >= remaining:
            if seg_len < 1e-12:
                return seg_end
            return cur + (seg_end - cur) * (remaining / seg_len)
        remaining -= seg_len
        cur = seg_end
        i += 1
    return pts[-1]


def apf_command(position, path, obstacle_points, params: ApfParams,
                cruise_speed: float, alt_target: float) -> np.ndarray:
    """Velocity command from path attraction plus point repulsion.

    obstacle_points are (M, 3) map-frame returns; only those within a
    vertical band of the leader's altitude repel. The combined command
    never exceeds cruise_speed in magnitude.
    """
    params.validate()
    pos = np.asarray(position, dtype=float)
    pos_xy = pos[:2]
    target = _lookahead_point(path, pos_xy, params.lookahead)
    to_target = target - pos_xy
    dist = float(np.linalg.norm(to_target))
    att = params.k_att * (to_target / dist) if dist > 1e-9 else np.zeros(2)

    force = att.copy()
    pts = np.asarray(obstacle_points, dtype=float).reshape(-1, 3) \
        if obstacle_points is not None and len(obstacle_points) else np.zeros((0, 3))
    if len(pts):
        band = np.abs(pts[:, 2] - pos[2]) <= 1.5
        pts_xy = pts[band, :2]
        if len(pts_xy):
            offsets = pos_xy - pts_xy
            d = np.linalg.norm(offsets, axis=1)
            near = (d < params.rep_radius) & (d > 1e-9)
            if np.any(near):
                d_n = np.maximum(d[near], 0.05)
                units = offsets[near] / d[near][:, None]
                mag = params.k_rep * (1.0 / d_n - 1.0 / params.rep_radius) / (d_n ** 2)
                rep = units * mag[:, None]
                force += rep.sum(axis=0)
                # dead-ahead returns get a deterministic sidestep so a
                # symmetric head-on case still produces lateral motion
                if dist > 1e-9:
                    ahead_dir = to_target / dist
                    cos_cone = np.cos(np.deg2rad(params.tangent_cone_deg))
                    toward = -units                      # unit(pos -> point)
                    cone = toward @ ahead_dir > cos_cone
                    if np.any(cone):
                        tang = np.column_stack([-toward[cone, 1], toward[cone, 0]])
                        force += params.k_tangent * (tang * mag[cone][:, None]).sum(axis=0)

    norm = float(np.linalg.norm(force))
    horiz = (force / norm) * cruise_speed if norm > 1e-9 else np.zeros(2)
    cmd = np.array([horiz[0], horiz[1], params.k_alt * (alt_target - pos[2])])
    total = float(np.linalg.norm(cmd))
    if total > cruise_speed:
        cmd *= cruise_speed / total
    return cmd


class LeaderPlanner:
    """Holds the mission, replans at a fixed cadence, and emits commands."""

    def __init__(self, mission: WaypointMission, apf: ApfParams = None,
                 rrt: RrtParams = None, alt_target: float = None):
        self.mission = mission.validate()
        self.apf = (apf or ApfParams()).validate()
        self.rrt = rrt or RrtParams()
        self.alt_target = alt_target
        self.path = None
        self.last_plan_time = -np.inf
        self.fallback = False

    def command(self, position, obstacle_points, now: float, rng) -> np.ndarray:
        pos = np.asarray(position, dtype=float)
        advance_mission(pos, self.mission)
        if self.mission.complete:
            alt = self.alt_target if self.alt_target is not None else pos[2]
            return np.array([0.0, 0.0, self.apf.k_alt * (alt - pos[2])])

        wp = self.mission.active_waypoint
        pts = np.asarray(obstacle_points, dtype=float).reshape(-1, 3) \
            if obstacle_points is not None and len(obstacle_points) else np.zeros((0, 3))
        band = np.abs(pts[:, 2] - pos[2]) <= 1.5 if len(pts) else np.zeros(0, dtype=bool)
        pts_xy = pts[band, :2] if len(pts) else np.zeros((0, 2))

        stale = now - self.last_plan_time >= self.rrt.replan_period
        blocked = self.path is not None and not all(
            _segment_clear(self.path[i], self.path[i + 1], pts_xy, self.rrt.clearance)
            for i in range(len(self.path) - 1))
        if self.path is None or stale or blocked:
            self.last_plan_time = now
            planned = plan_local_path(pos[:2], wp[:2], pts_xy, rng, self.rrt)
            if planned is None:
                if not self.fallback:
                    log.warning("local planning failed; falling back to direct attraction")
                self.fallback = True
                to_wp = wp[:2] - pos[:2]
                d = np.linalg.norm(to_wp)
                reach = pos[:2] + to_wp * (min(d, self.rrt.window_radius) / d) \
                    if d > 1e-9 else pos[:2]
                planned = [pos[:2].copy(), reach]
            else:
                self.fallback = False
            self.path = planned

        alt = self.alt_target if self.alt_target is not None else float(wp[2])
        return apf_command(pos, self.path, pts, self.apf,
                           self.mission.cruise_speed, alt)
