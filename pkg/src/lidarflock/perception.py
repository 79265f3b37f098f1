"""Neighbor detection and tracking from stacked LiDAR returns.

Pipeline per frame: stack the last B clouds in the map frame, gate by
range, keep high-intensity points plus low-intensity points near existing
tracks, cluster with DBSCAN, validate cluster sizes against a
distance-adaptive minimum, associate clusters to constant-velocity Kalman
tracks, and validate tracks by their sustained high-intensity ratio.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import quat_to_matrix

log = logging.getLogger(__name__)


@dataclass
class FilterParams:
    b_frames: int = 2
    d_min: float = 0.05
    d_max: float = 10.0
    i_high: float = 170.0
    r_roi: float = 0.3


@dataclass
class ClusterParams:
    epsilon: float = 0.1
    n_min_base: int = 16          # 8 per stacked frame at the reference range
    d_match: float = 0.2
    t_inactive: float = 0.5
    rho_high: float = 0.05
    tau_on: float = 0.01
    r_ref: float = 5.0
    core_min_pts: int = 4         # DBSCAN core threshold; also the n_min floor


def stack_and_gate(clouds, ego_position, params: FilterParams):
    """Merge up to B recent clouds into map-frame points gated by range
    from the current ego position. Returns (points (N,3), intensity (N,))."""
    pts_list, int_list = [], []
    for cloud in clouds:
        if cloud.n_points == 0:
            continue
        rot = quat_to_matrix(cloud.sensor_quat)
        pts_list.append(cloud.xyz @ rot.T + cloud.sensor_pos)
        int_list.append(cloud.intensity)
    if not pts_list:
        return np.zeros((0, 3)), np.zeros(0)
    points = np.concatenate(pts_list, axis=0)
    intensity = np.concatenate(int_list, axis=0)
    rng_from_ego = np.linalg.norm(points - np.asarray(ego_position), axis=1)
    keep = (rng_from_ego >= params.d_min) & (rng_from_ego <= params.d_max)
    return points[keep], intensity[keep]


def intensity_roi_filter(points, intensity, track_centroids, params: FilterParams):
    """Mask keeping high-intensity points plus any point within r_roi of an
    active track centroid. Idempotent by construction (pure predicate)."""
    points = np.asarray(points, dtype=float)
    intensity = np.asarray(intensity, dtype=float)
    keep = intensity >= params.i_high
    if track_centroids is not None and len(track_centroids) > 0 and len(points) > 0:
        centroids = np.asarray(track_centroids, dtype=float)
        diffs = points[:, None, :] - centroids[None, :, :]
        dmin = np.min(np.linalg.norm(diffs, axis=2), axis=1)
        keep = keep | (dmin <= params.r_roi)
    return keep


def dbscan_labels(points, eps: float, min_pts: int):
    """Classic DBSCAN partition labels; -1 is noise.

    Equivalent to seeding clusters in ascending point-index order: core
    points form clusters as the connected components of the core-core
    eps-adjacency graph (numbered by each component's smallest point
    index), and a border point joins the lowest-numbered cluster among
    its core neighbors, which is the cluster that would have claimed it
    first under ascending-seed expansion.

    A single query_pairs pass supplies neighbor counts, the core-core
    edge list, and border adjacency; the CSR graph is assembled from the
    row-sorted edge list without an intermediate COO conversion.
    """
    n = len(points)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    tree = cKDTree(points)
    pairs = tree.query_pairs(eps, output_type="ndarray")
    counts = np.bincount(pairs.ravel(), minlength=n) + 1   # self counts
    core = counts >= min_pts
    core_idx = np.nonzero(core)[0]
    if len(core_idx) == 0:
        return labels

    m = len(core_idx)
    idx_map = np.cumsum(core) - 1          # original index -> core rank
    a_core = core[pairs[:, 0]]
    b_core = core[pairs[:, 1]]
    cc_pairs = pairs[a_core & b_core]
    rows = idx_map[cc_pairs[:, 0]]
    cols = idx_map[cc_pairs[:, 1]]
    by_row = np.argsort(rows, kind="stable")
    rows = rows[by_row]
    cols = cols[by_row]
    indptr = np.searchsorted(rows, np.arange(m + 1))
    graph = csr_matrix(
        (np.ones(len(rows)), cols, indptr), shape=(m, m))
    n_comp, comp = connected_components(graph, directed=False)

    first = np.full(n_comp, n)
    np.minimum.at(first, comp, core_idx)
    order = np.argsort(first, kind="stable")
    rank = np.empty(n_comp, dtype=int)
    rank[order] = np.arange(n_comp)
    labels[core_idx] = rank[comp]

    mixed_ab = a_core & ~b_core            # core -> border
    mixed_ba = b_core & ~a_core            # border -> core
    if mixed_ab.any() or mixed_ba.any():
        border = np.concatenate([pairs[mixed_ab, 1], pairs[mixed_ba, 0]])
        owner = np.concatenate([pairs[mixed_ab, 0], pairs[mixed_ba, 1]])
        cluster = rank[comp[idx_map[owner]]]
        best = np.full(n, n_comp)
        np.minimum.at(best, border, cluster)
        touched = best < n_comp
        labels[touched] = best[touched]
    return labels


def n_min_at_range(r: float, params: ClusterParams) -> int:
    """Distance-adaptive cluster size floor: inverse-square in range,
    anchored at r_ref, never below the core threshold."""
    if r <= 0:
        return np.iinfo(np.int32).max
    scaled = params.n_min_base * (params.r_ref / r) ** 2
    return max(params.core_min_pts, int(np.floor(scaled + 0.5)))


@dataclass
class Cluster:
    centroid: np.ndarray
    n_points: int
    hi_ratio: float               # fraction of points at or above i_high
    mean_range: float
    kept: bool
    point_idx: np.ndarray = None  # indices into the filtered point array


def cluster_points(points, intensity, ego_position, cparams: ClusterParams,
                   i_high: float):
    """DBSCAN plus distance-adaptive size validation.

    Returns every candidate cluster with a kept flag; callers treat
    non-kept candidates as noise.
    """
    points = np.asarray(points, dtype=float)
    labels = dbscan_labels(points, cparams.epsilon, cparams.core_min_pts)
    clusters = []
    ego = np.asarray(ego_position, dtype=float)
    for cid in range(labels.max() + 1 if len(labels) else 0):
        idx = np.nonzero(labels == cid)[0]
        pts = points[idx]
        ranges = np.linalg.norm(pts - ego, axis=1)
        mean_range = float(np.mean(ranges))
        size = len(idx)
        kept = size >= n_min_at_range(mean_range, cparams)
        clusters.append(Cluster(
            centroid=pts.mean(axis=0),
            n_points=size,
            hi_ratio=float(np.mean(intensity[idx] >= i_high)),
            mean_range=mean_range,
            kept=kept,
            point_idx=idx,
        ))
    return clusters


# ===== constant-velocity Kalman tracking =====

_MEAS_H = np.hstack([np.eye(3), np.zeros((3, 3))])


def _transition(dt: float):
    f = np.eye(6)
    f[0, 3] = f[1, 4] = f[2, 5] = dt
    return f


def _process_noise(dt: float, q: float):
    """Continuous white-acceleration model with spectral density q."""
    q11 = q * dt ** 3 / 3.0
    q12 = q * dt ** 2 / 2.0
    q22 = q * dt
    qm = np.zeros((6, 6))
    for a in range(3):
        qm[a, a] = q11
        qm[a, a + 3] = q12
        qm[a + 3, a] = q12
        qm[a + 3, a + 3] = q22
    return qm


@dataclass
class TrackedNeighbor:
    id: int
    x: np.ndarray                 # (6,) [position, velocity], map frame
    covariance: np.ndarray        # (6, 6)
    last_seen: float
    last_predict: float
    hi_streak: float = 0.0        # seconds of sustained high-intensity ratio
    last_good_ratio: Optional[float] = None   # time of last ratio >= rho_high
    validated_since: Optional[float] = None
    active: bool = True
    hits: int = 1
    last_hi_ratio: float = 0.0

    @property
    def centroid(self):
        return self.x[:3]

    @property
    def velocity(self):
        return self.x[3:]

    @property
    def validated(self):
        return self.active and self.validated_since is not None


def kalman_predict(track: TrackedNeighbor, now: float, q_accel: float):
    dt = now - track.last_predict
    if dt <= 0:
        return
    f = _transition(dt)
    track.x = f @ track.x
    track.covariance = f @ track.covariance @ f.T + _process_noise(dt, q_accel)
    track.last_predict = now


def kalman_update(track: TrackedNeighbor, z, meas_std: float):
    p = track.covariance
    r = meas_std ** 2 * np.eye(3)
    s = _MEAS_H @ p @ _MEAS_H.T + r
    k = p @ _MEAS_H.T @ np.linalg.solve(s, np.eye(3))
    innovation = np.asarray(z, dtype=float) - track.x[:3]
    track.x = track.x + k @ innovation
    ikh = np.eye(6) - k @ _MEAS_H
    p = ikh @ p @ ikh.T + k @ r @ k.T   # Joseph form keeps symmetry
    p = 0.5 * (p + p.T)
    eigmin = float(np.min(np.linalg.eigvalsh(p)))
    if eigmin < 0.0:
        p = p + (1e-12 - eigmin) * np.eye(6)
        log.warning("track %d covariance floored (eigmin %.3e)", track.id, eigmin)
    track.covariance = p
    return innovation


def update_validation(track: TrackedNeighbor, hi_ratio: float, now: float,
                      params: ClusterParams):
    """Advance the sustained high-intensity streak; validation latches until
    the track deactivates."""
    track.last_hi_ratio = hi_ratio
    if hi_ratio >= params.rho_high:
        if track.last_good_ratio is not None:
            track.hi_streak += now - track.last_good_ratio
        track.last_good_ratio = now
        if track.hi_streak >= params.tau_on and track.validated_since is None:
            track.validated_since = now
    else:
        track.hi_streak = 0.0
        track.last_good_ratio = None


class NeighborTracker:
    """Per-UAV tracker state: cloud stack plus the live track table."""

    def __init__(self, filter_params: FilterParams = None,
                 cluster_params: ClusterParams = None,
                 q_accel: float = 2.0, meas_std: float = 0.02,
                 init_pos_std: float = 0.05, init_vel_std: float = 2.0):
        self.fp = filter_params or FilterParams()
        self.cp = cluster_params or ClusterParams()
        self.q_accel = q_accel
        self.meas_std = meas_std
        self.init_pos_std = init_pos_std
        self.init_vel_std = init_vel_std
        self.clouds = deque(maxlen=self.fp.b_frames)
        self.tracks: list[TrackedNeighbor] = []
        self._next_id = 0
        # last-frame stage products, kept for inspection dumps
        self.last_points = np.zeros((0, 3))
        self.last_intensity = np.zeros(0)
        self.last_filter_mask = np.zeros(0, dtype=bool)
        self.last_clusters: list[Cluster] = []

    def active_tracks(self):
        return [t for t in self.tracks if t.active]

    def validated_tracks(self):
        return [t for t in self.tracks if t.validated]

    def process_cloud(self, cloud, ego_position, now: float):
        """Ingest one cloud and run the full per-frame pipeline. Returns the
        validated track list."""
        self.clouds.append(cloud)
        points, intensity = stack_and_gate(self.clouds, ego_position, self.fp)

        active = self.active_tracks()
        for t in active:
            kalman_predict(t, now, self.q_accel)

        centroids = np.array([t.centroid for t in active]) if active else None
        mask = intensity_roi_filter(points, intensity, centroids, self.fp)
        clusters = cluster_points(points[mask], intensity[mask], ego_position,
                                  self.cp, self.fp.i_high)
        kept = [c for c in clusters if c.kept]

        self.last_points = points
        self.last_intensity = intensity
        self.last_filter_mask = mask
        self.last_clusters = clusters

        matched_tracks, matched_clusters = self._associate(kept, active, now)

        for c_idx, cluster in enumerate(kept):
            if c_idx in matched_clusters:
                continue
            # only clusters containing at least one high-intensity point
            # may seed a brand-new track
            if cluster.n_points > 0 and cluster.hi_ratio > 0.0:
                self._spawn(cluster, now)

        for t in self.active_tracks():
            if now - t.last_seen > self.cp.t_inactive:
                t.active = False
                t.validated_since = None   # revoked with the track

        return self.validated_tracks()

    def _associate(self, clusters, tracks, now: float):
        matched_t, matched_c = set(), set()
        if clusters and tracks:
            dists = np.array([
                [np.linalg.norm(c.centroid - t.centroid) for t in tracks]
                for c in clusters
            ])
            order = np.argsort(dists, axis=None, kind="stable")
            for flat in order:
                ci, ti = divmod(int(flat), len(tracks))
                if dists[ci, ti] >= self.cp.d_match:
                    break
                if ci in matched_c or ti in matched_t:
                    continue
                matched_c.add(ci)
                matched_t.add(ti)
                track = tracks[ti]
                kalman_update(track, clusters[ci].centroid, self.meas_std)
                track.last_seen = now
                track.hits += 1
                update_validation(track, clusters[ci].hi_ratio, now, self.cp)
        return matched_t, matched_c

    def _spawn(self, cluster: Cluster, now: float):
        x = np.concatenate([cluster.centroid, np.zeros(3)])
        p = np.diag([self.init_pos_std ** 2] * 3 + [self.init_vel_std ** 2] * 3)
        track = TrackedNeighbor(
            id=self._next_id, x=x, covariance=p,
            last_seen=now, last_predict=now,
        )
        self._next_id += 1
        update_validation(track, cluster.hi_ratio, now, self.cp)
        self.tracks.append(track)
        return track

    def relative_states(self, ego_position, ego_velocity):
        """(rel position, rel velocity) per validated track, unperturbed."""
        out = []
        for t in self.validated_tracks():
            out.append((t.centroid - np.asarray(ego_position),
                        t.velocity - np.asarray(ego_velocity)))
        return out


def perturbed_relative_states(rel_states, sigma_pos: float, sigma_vel: float, rng):
    """Training-abstraction noise: truth relative states plus per-axis
    Gaussian error. sigma 0 reproduces the input exactly."""
    out = []
    for rel_p, rel_v in rel_states:
        p = np.asarray(rel_p, dtype=float)
        v = np.asarray(rel_v, dtype=float)
        if sigma_pos > 0:
            p = p + rng.normal(0.0, sigma_pos, size=3)
        if sigma_vel > 0:
            v = v + rng.normal(0.0, sigma_vel, size=3)
        out.append((p, v))
    return out


def tracks_to_record(tracks, frame_time: float):
    """JSON-ready dict of the track table at one frame."""
    return {
        "t": round(float(frame_time), 6),
        "tracks": [
            {
                "id": t.id,
                "centroid": [float(v) for v in t.centroid],
                "velocity": [float(v) for v in t.velocity],
                "active": bool(t.active),
                "validated": bool(t.validated),
                "hi_ratio": float(t.last_hi_ratio),
                "hits": int(t.hits),
            }
            for t in tracks
        ],
    }
