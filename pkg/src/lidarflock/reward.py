"""Per-step follower reward terms and episode termination verdicts.

The reward is a weighted sum of four term pairs plus a collision penalty:

  total = w_flock * (separation + cohesion)
        + w_obstacle * (proximity + direction)
        + w_stable * (altitude + attitude)
        + w_perception * (visibility + recovery)
        + collision

All terms are computed from simulator truth; the policy never observes
them directly. Individual terms can be switched off by name, which is how
reward ablations are expressed.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .world import check_collisions

TERM_NAMES = ("separation", "cohesion", "proximity", "direction",
              "altitude", "attitude", "visibility", "recovery", "collision")

VERDICTS = ("running", "collision_uav", "collision_obstacle", "below_min_alt",
            "above_max_alt", "leader_lost", "truncated")


@dataclass
class RewardParams:
    w_flock: float = 1.5
    w_obstacle: float = 2.0
    w_stable: float = 1.0
    w_perception: float = 1.0
    d_sep: float = 1.6
    d_coh: float = 2.0
    r_uav: float = 0.2
    d_prox: float = 3.0
    theta_threshold_deg: float = 20.0
    alpha: float = 0.1
    beta: float = 0.1
    h_recovery: float = 1.0
    collision_penalty: float = -10.0
    disabled_terms: tuple = ()

    def validate(self):
        if self.d_sep <= 2 * self.r_uav:
            raise ValueError("d_sep must exceed 2 * r_uav")
        if self.d_prox <= self.r_uav:
            raise ValueError("d_prox must exceed r_uav")
        for w in (self.w_flock, self.w_obstacle, self.w_stable, self.w_perception):
            if w < 0:
                raise ValueError("weights must be >= 0")
        unknown = set(self.disabled_terms) - set(TERM_NAMES)
        if unknown:
            raise ValueError(f"unknown reward terms: {sorted(unknown)}")
        return self


@dataclass
class RewardBreakdown:
    separation: float = 0.0
    cohesion: float = 0.0
    proximity: float = 0.0
    direction: float = 0.0
    altitude: float = 0.0
    attitude: float = 0.0
    visibility: float = 0.0
    recovery: float = 0.0
    collision: float = 0.0
    total: float = 0.0

    def recompose(self, params: RewardParams) -> float:
        """Total rebuilt from the stored terms; must equal .total to 1e-12."""
        return (params.w_flock * (self.separation + self.cohesion)
                + params.w_obstacle * (self.proximity + self.direction)
                + params.w_stable * (self.altitude + self.attitude)
                + params.w_perception * (self.visibility + self.recovery)
                + self.collision)

    def as_dict(self):
        return {name: getattr(self, name) for name in TERM_NAMES + ("total",)}


def flocking_terms(ego_position, neighbor_positions, com, params: RewardParams):
    """Separation penalty over neighbors inside d_sep and cohesion penalty
    for straying beyond d_coh from the swarm center of mass."""
    ego = np.asarray(ego_position, dtype=float)
    separation = 0.0
    neighbor_positions = np.atleast_2d(np.asarray(neighbor_positions, dtype=float)) \
        if len(neighbor_positions) else np.zeros((0, 3))
    if len(neighbor_positions):
        d = np.linalg.norm(neighbor_positions - ego, axis=1)
        close = d < params.d_sep
        if np.any(close):
            separation = -float(np.sum(
                (params.d_sep - d[close]) / (params.d_sep - 2.0 * params.r_uav)))
    dist_com = float(np.linalg.norm(ego - np.asarray(com, dtype=float)))
    cohesion = -(dist_com - params.d_coh) if dist_com > params.d_coh else 0.0
    return separation, cohesion


def obstacle_terms(velocity, obstacle_points_rel, params: RewardParams):
    """Proximity penalty on the nearest obstacle return and a directional
    penalty over returns within the bearing threshold of the velocity."""
    pts = np.atleast_2d(np.asarray(obstacle_points_rel, dtype=float)) \
        if len(obstacle_points_rel) else np.zeros((0, 3))
    if len(pts) == 0:
        return 0.0, 0.0
    d = np.linalg.norm(pts, axis=1)
    d = d[d > 1e-12]
    if len(d) == 0:
        return 0.0, 0.0
    dmin = float(np.min(d))
    proximity = 0.0
    if dmin < params.d_prox:
        proximity = -(((params.d_prox - dmin) / (params.d_prox - params.r_uav)) ** 4)

    direction = 0.0
    v = np.asarray(velocity, dtype=float)
    speed = float(np.linalg.norm(v))
    if speed > 0.0:
        pts_d = np.linalg.norm(pts, axis=1)
        valid = pts_d > 1e-12
        cos_th = (pts[valid] @ v) / (pts_d[valid] * speed)
        cos_lim = np.cos(np.deg2rad(params.theta_threshold_deg))
        ahead = cos_th > cos_lim
        if np.any(ahead):
            direction = -float(np.sum(
                np.maximum(0.0, params.d_prox - pts_d[valid][ahead]) * speed))
    return proximity, direction


def stability_terms(h_i: float, h_leader: float, up_z: float, params: RewardParams):
    """Gaussian-shaped altitude match to the leader and level-attitude bonus."""
    altitude = float(np.exp(-(((h_i - h_leader) / params.alpha) ** 2)))
    attitude = float(np.exp(-(((up_z - 1.0) / params.beta) ** 2)))
    return altitude, attitude


def perception_terms(n_perceived: int, n_true: int, h_i: float,
                     params: RewardParams):
    """Visibility ratio of perceived to true neighbors, and descent-to-
    recovery-altitude penalty when nothing is perceived."""
    visibility = 1.0 if n_true <= 0 else n_perceived / n_true
    recovery = -abs(h_i - params.h_recovery) if n_perceived == 0 else 0.0
    return visibility, recovery


def compute_reward(ego_position, ego_velocity, neighbor_positions, com,
                   obstacle_points_rel, h_leader, up_z,
                   n_perceived, n_true, collided: bool,
                   params: RewardParams) -> RewardBreakdown:
    sep, coh = flocking_terms(ego_position, neighbor_positions, com, params)
    prox, direc = obstacle_terms(ego_velocity, obstacle_points_rel, params)
    alt, att = stability_terms(float(ego_position[2]), h_leader, up_z, params)
    vis, rec = perception_terms(n_perceived, n_true, float(ego_position[2]), params)
    col = params.collision_penalty if collided else 0.0

    terms = {
        "separation": sep, "cohesion": coh, "proximity": prox,
        "direction": direc, "altitude": alt, "attitude": att,
        "visibility": vis, "recovery": rec, "collision": col,
    }
    for name in params.disabled_terms:
        terms[name] = 0.0
    bd = RewardBreakdown(**terms)
    bd.total = bd.recompose(params)
    return bd


# ===== vectorized batch path =====

def reward_terms_batch(ego_pos, ego_vel, neighbor_pos, com, obstacle_rel,
                       h_leader, up_z, n_perceived, n_true, collided,
                       params: RewardParams):
    """Vectorized reward over N states with fixed neighbor/point counts.

    Shapes: ego_pos/ego_vel (N,3); neighbor_pos (N,K,3); com (N,3);
    obstacle_rel (N,M,3) with M possibly 0; scalars are (N,) arrays.
    Returns a dict of (N,) term arrays plus "total", identical to running
    compute_reward N times.
    """
    ego_pos = np.asarray(ego_pos, dtype=float)
    ego_vel = np.asarray(ego_vel, dtype=float)
    n = len(ego_pos)

    d = np.linalg.norm(neighbor_pos - ego_pos[:, None, :], axis=2)
    close = d < params.d_sep
    sep = -np.sum(np.where(close, (params.d_sep - d), 0.0), axis=1) \
        / (params.d_sep - 2.0 * params.r_uav)

    dist_com = np.linalg.norm(ego_pos - com, axis=1)
    coh = np.where(dist_com > params.d_coh, -(dist_com - params.d_coh), 0.0)

    if obstacle_rel is not None and obstacle_rel.shape[1] > 0:
        od = np.linalg.norm(obstacle_rel, axis=2)
        od = np.where(od > 1e-12, od, np.inf)
        dmin = np.min(od, axis=1)
        prox = np.where(
            dmin < params.d_prox,
            -(((params.d_prox - dmin) / (params.d_prox - params.r_uav)) ** 4),
            0.0)
        speed = np.linalg.norm(ego_vel, axis=1)
        safe_speed = np.where(speed > 0.0, speed, 1.0)
        cos_th = np.einsum("nmk,nk->nm", obstacle_rel, ego_vel) / (od * safe_speed[:, None])
        ahead = cos_th > np.cos(np.deg2rad(params.theta_threshold_deg))
        contrib = np.where(ahead, np.maximum(0.0, params.d_prox - od), 0.0)
        direc = -np.sum(contrib, axis=1) * speed
        direc = np.where(speed > 0.0, direc, 0.0)
    else:
        prox = np.zeros(n)
        direc = np.zeros(n)

    alt = np.exp(-(((ego_pos[:, 2] - h_leader) / params.alpha) ** 2))
    att = np.exp(-(((np.asarray(up_z, dtype=float) - 1.0) / params.beta) ** 2))

    n_true = np.asarray(n_true)
    n_perceived = np.asarray(n_perceived)
    vis = np.where(n_true <= 0, 1.0,
                   n_perceived / np.maximum(n_true, 1))
    rec = np.where(n_perceived == 0,
                   -np.abs(ego_pos[:, 2] - params.h_recovery), 0.0)

    col = np.where(np.asarray(collided, dtype=bool), params.collision_penalty, 0.0)

    terms = {"separation": sep, "cohesion": coh, "proximity": prox,
             "direction": direc, "altitude": alt, "attitude": att,
             "visibility": vis, "recovery": rec, "collision": col}
    for name in params.disabled_terms:
        terms[name] = np.zeros(n)
    terms["total"] = (params.w_flock * (terms["separation"] + terms["cohesion"])
                      + params.w_obstacle * (terms["proximity"] + terms["direction"])
                      + params.w_stable * (terms["altitude"] + terms["attitude"])
                      + params.w_perception * (terms["visibility"] + terms["recovery"])
                      + terms["collision"])
    return terms


# ===== termination =====

@dataclass
class TerminationConfig:
    min_altitude: float = 0.3
    max_altitude: float = 4.0
    t_lost: float = 3.0           # continuous leader-unseen window, eval only
    time_limit: float = 60.0


def terminate(states, field, now: float, config: TerminationConfig,
              leader_unseen_elapsed: float = 0.0,
              eval_mode: bool = False) -> str:
    """First matching verdict in fixed priority order; 'running' otherwise.

    leader_unseen_elapsed is the continuous time during which no follower
    held a validated track on the leader; it only matters in eval mode.
    """
    report = check_collisions(states, field)
    if report.any_uav:
        return "collision_uav"
    if report.any_obstacle:
        return "collision_obstacle"
    alts = np.array([s.position[2] for s in states])
    if np.any(alts < config.min_altitude):
        return "below_min_alt"
    if np.any(alts > config.max_altitude):
        return "above_max_alt"
    if eval_mode and leader_unseen_elapsed > config.t_lost:
        return "leader_lost"
    if now >= config.time_limit - 1e-9:
        return "truncated"
    return "running"
