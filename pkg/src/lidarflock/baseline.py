"""Rule-based follower controller: cohesion + separation flocking (no
alignment term) with potential-field obstacle repulsion and altitude hold.

The controller consumes observation-level inputs only: perceived
neighbor slots and the obstacle occupancy grid from an Observation,
plus an altimeter reading. It serves both as the evaluation baseline
and as a sanity reference for the learned policies.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import QUAT_IDENTITY, quat_rotate
from .observation import GridParams, Observation


@dataclass
class BaselineParams:
    k_coh: float = 1.3
    k_sep: float = 0.7
    d_coh: float = 0.3
    d_sep: float = 2.0
    k_rep: float = 0.5
    rep_radius: float = 3.0
    k_alt: float = 1.0
    alt_target: float = 1.5
    v_max: float = 2.0

    def validate(self):
        if self.d_sep <= 0 or self.d_coh <= 0:
            raise ValueError("interaction radii must be positive")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        return self


def baseline_command(rel_neighbors, obstacle_points_rel, altitude,
                     params: BaselineParams = None) -> np.ndarray:
    """Velocity command from perceived relative neighbor positions and
    relative obstacle points (map-aligned vectors from the UAV).

    cohesion: pull toward the perceived centroid once it sits beyond
    d_coh; separation: inverse-distance horizontal push away from each
    neighbor inside d_sep (vertical conflicts are left to altitude hold
    because the sensor cannot see below the −7 deg elevation limit); obstacle repulsion: potential-field push from points
    inside rep_radius; altitude hold toward alt_target. The sum is
    norm-clamped to v_max.
    """
    p = params or BaselineParams()
    rel = np.asarray(rel_neighbors, dtype=float).reshape(-1, 3)
    cmd = np.zeros(3)

    if len(rel):
        centroid = rel.mean(axis=0)
        dist = float(np.linalg.norm(centroid))
        if dist > p.d_coh:
            cmd += p.k_coh * centroid

        d = np.linalg.norm(rel, axis=1)
        close = (d < p.d_sep) & (d > 1e-9)
        for r, di in zip(rel[close], d[close]):
            # Push laterally only: the vertical FOV is one-sided, so a
            # diving evasion is invisible to the UAV above. Altitude
            # hold owns the z axis; conflicts resolve in the plane.
            away = np.array([r[0], r[1], 0.0])
            nh = np.linalg.norm(away)
            if nh > 1e-9:
                cmd -= p.k_sep * away / (nh * di)

    pts = np.asarray(obstacle_points_rel, dtype=float).reshape(-1, 3)
    if len(pts):
        d = np.linalg.norm(pts, axis=1)
        near = (d < p.rep_radius) & (d > 1e-9)
        for r, di in zip(pts[near], d[near]):
            mag = p.k_rep * (1.0 / di - 1.0 / p.rep_radius) / (di * di)
            cmd -= mag * r / di

    cmd[2] += p.k_alt * (p.alt_target - float(altitude))

    speed = float(np.linalg.norm(cmd))
    if speed > p.v_max:
        cmd *= p.v_max / speed
    return cmd


def decode_grid_points(grid, grid_params: GridParams = None):
    """Reconstruct body-frame obstacle points from an occupancy grid:
    one point per occupied bin at the bin-center direction and the
    range encoded by the proximity channel."""
    gp = grid_params or GridParams()
    grid = np.asarray(grid, dtype=float)
    occ = grid[1] > 0.5
    if not np.any(occ):
        return np.zeros((0, 3))
    az_idx, el_idx = np.nonzero(occ)
    az_step = 2.0 * np.pi / gp.n_azimuth
    el_lo = np.deg2rad(gp.elev_min_deg)
    el_step = np.deg2rad(gp.elev_max_deg - gp.elev_min_deg) / gp.n_elevation
    az = (az_idx + 0.5) * az_step
    el = el_lo + (el_idx + 0.5) * el_step
    rng = (1.0 - grid[0][az_idx, el_idx]) * gp.d_max
    ce = np.cos(el)
    dirs = np.column_stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)])
    return dirs * rng[:, None]


def observation_inputs(obs: Observation, grid_params: GridParams = None):
    """Split an Observation into baseline-controller inputs:
    (rel neighbor positions (K,3), map-aligned obstacle points (M,3))."""
    slots = obs.neighbors.reshape(-1, 7)
    filled = slots[:, 6] > 0.5
    rel_pos = slots[filled, 0:3]

    body_pts = decode_grid_points(obs.grid, grid_params)
    q = obs.ego[3:7]
    if np.linalg.norm(q) < 0.5:
        q = QUAT_IDENTITY
    map_pts = quat_rotate(q, body_pts) if len(body_pts) else body_pts
    return rel_pos, map_pts


class BaselineController:
    """Observation -> action adapter around baseline_command."""

    def __init__(self, params: BaselineParams = None,
                 grid_params: GridParams = None):
        self.params = (params or BaselineParams()).validate()
        self.grid_params = grid_params or GridParams()

    def act(self, obs_list, altitudes):
        actions = np.zeros((len(obs_list), 3))
        for i, obs in enumerate(obs_list):
            rel_pos, map_pts = observation_inputs(obs, self.grid_params)
            actions[i] = baseline_command(rel_pos, map_pts, altitudes[i],
                                          self.params)
        return actions


class PolicyController:
    """Observation -> action adapter around a trained actor-critic."""

    def __init__(self, model, deterministic=True, rng=None):
        self.model = model
        self.deterministic = deterministic
        self.rng = rng or np.random.default_rng(0)

    def act(self, obs_list, altitudes):
        ego = np.stack([o.ego for o in obs_list])
        neigh = np.stack([o.neighbors for o in obs_list])
        grid = np.stack([o.grid for o in obs_list])
        actions, _, _ = self.model.act(ego, neigh, grid, rng=self.rng,
                                       deterministic=self.deterministic)
        return actions
