"""Synthetic spinning-LiDAR model and fixed-latency delivery queues.

A scan casts a fixed azimuth x elevation ray grid from a UAV body frame,
returns the nearest surface per ray (other UAV bodies as spheres, pillar
cylinders, the ground plane), tags intensity by surface class, and gates
ranges. Points are expressed in the sensor (body) frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    quat_to_matrix,
    ray_cylinder,
    ray_ground,
    ray_sphere,
    spherical_dirs,
)


@dataclass
class LidarParams:
    n_azimuth: int = 360
    n_elevation: int = 60
    elev_min_deg: float = -7.0
    elev_max_deg: float = 52.0
    d_min: float = 0.05
    d_max: float = 10.0
    i_uav: float = 200.0
    i_env: float = 50.0
    sigma_intensity: float = 5.0
    sigma_range: float = 0.01
    incidence_falloff: bool = False   # optional cosine falloff past 45 deg

    def noise_free(self):
        from dataclasses import replace
        return replace(self, sigma_intensity=0.0, sigma_range=0.0)


@dataclass
class PointCloud:
    xyz: np.ndarray           # (N, 3) sensor frame
    intensity: np.ndarray     # (N,)
    frame_time: float
    sensor_pos: np.ndarray    # (3,) map frame
    sensor_quat: np.ndarray   # (4,) map frame

    @property
    def n_points(self):
        return len(self.intensity)

    def to_csv(self):
        lines = ["x,y,z,intensity,t"]
        for p, i in zip(self.xyz, self.intensity):
            lines.append(f"{p[0]:.6f},{p[1]:.6f},{p[2]:.6f},{i:.3f},{self.frame_time:.3f}")
        return "\n".join(lines) + "\n"


_DIR_CACHE: dict = {}


def ray_grid(params: LidarParams) -> np.ndarray:
    """Unit ray directions (n_azimuth * n_elevation, 3) in the sensor frame."""
    key = (params.n_azimuth, params.n_elevation,
           params.elev_min_deg, params.elev_max_deg)
    dirs = _DIR_CACHE.get(key)
    if dirs is None:
        az = np.arange(params.n_azimuth) * (2.0 * np.pi / params.n_azimuth)
        el = np.deg2rad(np.linspace(params.elev_min_deg, params.elev_max_deg,
                                    params.n_elevation))
        dirs = spherical_dirs(az, el)
        dirs.setflags(write=False)
        _DIR_CACHE[key] = dirs
    return dirs


def scan(states, field, sensor_idx: int, params: LidarParams,
         rng=None, time: float = 0.0, include_uavs: bool = True) -> PointCloud:
    """Cast the full ray grid from one UAV and return gated, intensity-tagged
    returns. Occlusion falls out of taking the nearest hit per ray.

    include_uavs=False restricts the scene to static geometry (pillars and
    ground), which is what obstacle-only sensing paths use.
    """
    sensor = states[sensor_idx]
    origin = sensor.position
    rot = quat_to_matrix(sensor.orientation)
    dirs_body = ray_grid(params)
    dirs = dirs_body @ rot.T

    t_best = ray_ground(origin, dirs)
    hit_uav = np.full(len(dirs), -1)   # index of the UAV a ray hit, -1 otherwise

    if field is not None and field.n_pillars > 0:
        center_dist = np.hypot(field.centers_xy[:, 0] - origin[0],
                               field.centers_xy[:, 1] - origin[1])
        near = np.nonzero(center_dist - field.radii <= params.d_max)[0]
        for k in near:
            t = ray_cylinder(origin, dirs, field.centers_xy[k],
                             field.radii[k], field.heights[k])
            closer = t < t_best
            t_best = np.where(closer, t, t_best)
            hit_uav[closer] = -1

    if include_uavs:
        for j, other in enumerate(states):
            if j == sensor_idx:
                continue
            gap = np.linalg.norm(other.position - origin)
            if gap - other.radius > params.d_max:
                continue
            t = ray_sphere(origin, dirs, other.position, other.radius)
            closer = t < t_best
            t_best = np.where(closer, t, t_best)
            hit_uav[closer] = j

    hit = np.isfinite(t_best)
    t_exact = t_best[hit]
    t_hit = t_exact
    if params.sigma_range > 0.0:
        t_hit = t_exact + rng.normal(0.0, params.sigma_range, size=t_exact.shape)
    gate = (t_hit >= params.d_min) & (t_hit <= params.d_max)

    dirs_hit = dirs_body[hit][gate]
    dirs_map = dirs[hit][gate]
    t_hit = t_hit[gate]
    t_exact = t_exact[gate]
    uav_idx = hit_uav[hit][gate]
    uav_hit = uav_idx >= 0

    intensity = np.where(uav_hit, params.i_uav, params.i_env)
    if params.incidence_falloff and np.any(uav_hit):
        # sphere returns dim with the incident cosine once the incident
        # angle passes 45 degrees; head-on returns keep full strength
        sel = np.nonzero(uav_hit)[0]
        pts_map = origin + dirs_map[sel] * t_exact[sel, None]
        centers = np.array([states[j].position for j in uav_idx[sel]])
        radii = np.array([states[j].radius for j in uav_idx[sel]])
        normals = (pts_map - centers) / radii[:, None]
        cos_inc = np.abs(np.sum(-dirs_map[sel] * normals, axis=1))
        factor = np.where(cos_inc < np.cos(np.deg2rad(45.0)),
                          cos_inc / np.cos(np.deg2rad(45.0)), 1.0)
        intensity = intensity.astype(float)
        intensity[sel] = intensity[sel] * factor
    if params.sigma_intensity > 0.0:
        intensity = intensity + rng.normal(0.0, params.sigma_intensity,
                                           size=intensity.shape)
    intensity = np.clip(intensity, 0.0, 255.0)

    xyz = dirs_hit * t_hit[:, None]
    return PointCloud(xyz=xyz, intensity=intensity, frame_time=time,
                      sensor_pos=origin.copy(),
                      sensor_quat=sensor.orientation.copy())


def occlusion_filter(ray_ids, ranges):
    """Boolean mask keeping only the minimum-range hit per ray id.

    Ties keep the first occurrence. This mirrors what scan() does
    implicitly and exists so the rule is testable in isolation.
    """
    ray_ids = np.asarray(ray_ids)
    ranges = np.asarray(ranges, dtype=float)
    keep = np.zeros(len(ray_ids), dtype=bool)
    if len(ray_ids) == 0:
        return keep
    order = np.lexsort((np.arange(len(ray_ids)), ranges))
    seen = set()
    for idx in order:
        rid = int(ray_ids[idx])
        if rid not in seen:
            seen.add(rid)
            keep[idx] = True
    return keep


class DelayLine:
    """Timestamped queue delivering the newest payload at least `delay` old.

    Timestamps arrive as multiples of a control step, so the age test
    carries a 1e-9 tolerance against float rounding.
    """

    _EPS = 1e-9

    def __init__(self, delay: float):
        if delay < 0:
            raise ValueError("delay must be >= 0")
        self.delay = delay
        self._items = []          # [(timestamp, payload)], timestamps ascending

    def push(self, timestamp: float, payload):
        if self._items and timestamp < self._items[-1][0]:
            raise ValueError("timestamps must be non-decreasing")
        self._items.append((timestamp, payload))

    def fetch(self, now: float):
        """Newest payload with timestamp <= now - delay, or None during warm-up."""
        cutoff = now - self.delay + self._EPS
        found = None
        found_idx = -1
        for idx, (ts, payload) in enumerate(self._items):
            if ts <= cutoff:
                found = payload
                found_idx = idx
            else:
                break
        if found_idx > 0:
            # older entries can never be the newest-eligible again
            del self._items[:found_idx]
        return found

    def clear(self):
        self._items = []


def delayed_fetch(line: DelayLine, now: float):
    return line.fetch(now)
