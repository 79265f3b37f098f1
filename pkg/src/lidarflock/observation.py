"""Policy observation assembly.

An observation is three blocks: a 7-D ego vector (velocity + attitude
quaternion), a fixed-width neighbor block of nearest-first slots
[rel pos, rel vel, mask], and a two-channel azimuth x elevation polar
occupancy grid over obstacle returns in the yaw-aligned body frame.
All blocks are fed through delay lines upstream; this module is pure
assembly over already-delayed snapshots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EGO_DIM = 7
SLOT_DIM = 7          # [rel px, py, pz, rel vx, vy, vz, mask]
DEFAULT_SLOTS = 6
GRID_CHANNELS = 2


@dataclass
class GridParams:
    n_azimuth: int = 72
    n_elevation: int = 12
    elev_min_deg: float = -7.0
    elev_max_deg: float = 52.0
    d_max: float = 10.0


@dataclass
class NeighborSlotPolicy:
    max_neighbors: int = DEFAULT_SLOTS

    def validate(self):
        if self.max_neighbors < 1:
            raise ValueError("max_neighbors must be >= 1")
        return self


@dataclass
class Observation:
    ego: np.ndarray               # (7,)
    neighbors: np.ndarray         # (SLOT_DIM * max_neighbors,)
    grid: np.ndarray              # (2, n_azimuth, n_elevation)
    warm_up: bool = False

    def flat(self, dtype=np.float32):
        return np.concatenate([
            self.ego, self.neighbors, self.grid.ravel()
        ]).astype(dtype)

    @property
    def size(self):
        return EGO_DIM + len(self.neighbors) + self.grid.size


def observation_size(max_neighbors: int = DEFAULT_SLOTS,
                     grid: GridParams = None) -> int:
    grid = grid or GridParams()
    return EGO_DIM + SLOT_DIM * max_neighbors + GRID_CHANNELS * grid.n_azimuth * grid.n_elevation


def build_ego(delayed_state):
    """7-vector [v_xyz, q_wxyz] from a delayed state snapshot; zeros with a
    warm-up flag when the delay line has nothing old enough yet."""
    if delayed_state is None:
        return np.zeros(EGO_DIM), True
    velocity, quat = delayed_state
    out = np.empty(EGO_DIM)
    out[0:3] = velocity
    out[3:7] = quat
    return out, False


def build_neighbor_block(rel_states, policy: NeighborSlotPolicy = None):
    """Nearest-first slot packing of relative neighbor states.

    rel_states is a sequence of (rel position, rel velocity) pairs. Slots
    beyond the available neighbors stay all-zero with mask 0, so shuffling
    the input never changes the output.
    """
    policy = (policy or NeighborSlotPolicy()).validate()
    block = np.zeros(SLOT_DIM * policy.max_neighbors)
    if not rel_states:
        return block
    ranges = np.array([np.linalg.norm(np.asarray(p)) for p, _ in rel_states])
    order = np.argsort(ranges, kind="stable")
    for slot, idx in enumerate(order[: policy.max_neighbors]):
        rel_p, rel_v = rel_states[idx]
        base = slot * SLOT_DIM
        block[base:base + 3] = rel_p
        block[base + 3:base + 6] = rel_v
        block[base + 6] = 1.0
    return block


def build_occupancy_grid(points_body, params: GridParams = None):
    """Two-channel polar grid from obstacle returns in the body frame.

    Channel 0 holds 1 - d/d_max for the nearest return in each bin
    (clamped to [0, 1]); channel 1 is the binary occupancy mask. Points
    outside the elevation span or beyond d_max are dropped.
    """
    params = params or GridParams()
    grid = np.zeros((GRID_CHANNELS, params.n_azimuth, params.n_elevation))
    points_body = np.asarray(points_body, dtype=float)
    if points_body.size == 0:
        return grid
    d = np.linalg.norm(points_body, axis=1)
    ok = (d > 1e-12) & (d <= params.d_max)
    if not np.any(ok):
        return grid
    pts = points_body[ok]
    d = d[ok]

    az = np.arctan2(pts[:, 1], pts[:, 0]) % (2.0 * np.pi)
    az_bin = np.floor(az / (2.0 * np.pi / params.n_azimuth)).astype(int)
    az_bin = np.clip(az_bin, 0, params.n_azimuth - 1)

    el = np.degrees(np.arctan2(pts[:, 2], np.hypot(pts[:, 0], pts[:, 1])))
    span = params.elev_max_deg - params.elev_min_deg
    in_fov = (el >= params.elev_min_deg - 1e-9) & (el <= params.elev_max_deg + 1e-9)
    el_bin = np.floor((el - params.elev_min_deg) / (span / params.n_elevation)).astype(int)
    el_bin = np.clip(el_bin, 0, params.n_elevation - 1)

    az_bin = az_bin[in_fov]
    el_bin = el_bin[in_fov]
    d = d[in_fov]
    if len(d) == 0:
        return grid

    flat = az_bin * params.n_elevation + el_bin
    nearest = np.full(params.n_azimuth * params.n_elevation, np.inf)
    np.minimum.at(nearest, flat, d)
    occupied = np.isfinite(nearest)
    prox = np.zeros_like(nearest)
    prox[occupied] = np.clip(1.0 - nearest[occupied] / params.d_max, 0.0, 1.0)
    grid[0] = prox.reshape(params.n_azimuth, params.n_elevation)
    grid[1] = occupied.astype(float).reshape(params.n_azimuth, params.n_elevation)
    return grid


def assemble(ego_state, rel_states, obstacle_points_body,
             policy: NeighborSlotPolicy = None,
             grid_params: GridParams = None) -> Observation:
    ego, warm = build_ego(ego_state)
    return Observation(
        ego=ego,
        neighbors=build_neighbor_block(rel_states, policy),
        grid=build_occupancy_grid(
            obstacle_points_body if obstacle_points_body is not None else np.zeros((0, 3)),
            grid_params),
        warm_up=warm,
    )


# ===== flat binary records =====
# Layout version 1: little-endian float32, [ego 7][neighbor slots][grid
# channel-major, azimuth-major within channel]; no header per record.

RECORD_VERSION = 1


def obs_to_bytes(obs: Observation) -> bytes:
    return obs.flat(np.float32).astype("<f4").tobytes()


def obs_from_bytes(buf: bytes, max_neighbors: int = DEFAULT_SLOTS,
                   grid_params: GridParams = None) -> Observation:
    grid_params = grid_params or GridParams()
    flat = np.frombuffer(buf, dtype="<f4").astype(float)
    expected = observation_size(max_neighbors, grid_params)
    if len(flat) != expected:
        raise ValueError(f"record has {len(flat)} scalars, expected {expected}")
    n = SLOT_DIM * max_neighbors
    grid = flat[EGO_DIM + n:].reshape(GRID_CHANNELS, grid_params.n_azimuth,
                                      grid_params.n_elevation)
    return Observation(ego=flat[:EGO_DIM], neighbors=flat[EGO_DIM:EGO_DIM + n],
                       grid=grid)
