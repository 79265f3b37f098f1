"""Quaternion algebra and analytic ray/shape intersection helpers.

Everything here is pure numpy over float64 arrays. Quaternions are stored
as [w, x, y, z]. Ray routines are vectorized over many rays sharing one
origin, which is the shape a spinning-LiDAR scan needs.
"""
from __future__ import annotations

import numpy as np

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q):
    """Return q scaled to unit norm. Norm must be nonzero."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n <= 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    """3x3 rotation matrix of a unit quaternion (body -> world)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_rotate(q, v):
    """Rotate vector(s) v by unit quaternion q. v is (3,) or (N, 3)."""
    v = np.asarray(v, dtype=float)
    return v @ quat_to_matrix(q).T


def quat_rotate_inverse(q, v):
    """Rotate vector(s) from world into the body frame of q."""
    v = np.asarray(v, dtype=float)
    return v @ quat_to_matrix(q)


def yaw_to_quat(yaw):
    """Quaternion for a pure rotation about +z by yaw radians."""
    h = 0.5 * yaw
    return np.array([np.cos(h), 0.0, 0.0, np.sin(h)])


def quat_yaw(q):
    """Yaw angle of a quaternion (ZYX convention)."""
    w, x, y, z = q
    return np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))


def body_up_z(q):
    """z-component of the body up axis expressed in the world frame."""
    w, x, y, z = q
    return 1 - 2 * (x * x + y * y)


# ===== ray casting =====
# All ray routines take one origin (3,) and unit directions (N, 3) and
# return hit parameters t (N,) with np.inf where the ray misses. Only
# t > eps counts as a hit so a sensor never sees its own surface point.

_T_EPS = 1e-9


def ray_sphere(origin, dirs, center, radius):
    """Smallest positive t with ||origin + t*dirs - center|| = radius."""
    dirs = np.asarray(dirs, dtype=float)
    oc = np.asarray(origin, dtype=float) - np.asarray(center, dtype=float)
    b = dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - c
    t = np.full(len(dirs), np.inf)
    ok = disc >= 0.0
    if not np.any(ok):
        return t
    sq = np.sqrt(disc[ok])
    t0 = -b[ok] - sq
    t1 = -b[ok] + sq
    cand = np.where(t0 > _T_EPS, t0, np.where(t1 > _T_EPS, t1, np.inf))
    t[ok] = cand
    return t


def ray_cylinder(origin, dirs, center_xy, radius, height):
    """First hit on a capped vertical cylinder (wall z in [0, height], top disk).

    The bottom disk sits on the ground plane and is never visible from
    above it, so it is not modeled.
    """
    dirs = np.asarray(dirs, dtype=float)
    n = len(dirs)
    ox = origin[0] - center_xy[0]
    oy = origin[1] - center_xy[1]
    oz = origin[2]
    dx = dirs[:, 0]
    dy = dirs[:, 1]
    dz = dirs[:, 2]

    t_wall = np.full(n, np.inf)
    a = dx * dx + dy * dy
    b = ox * dx + oy * dy
    c = ox * ox + oy * oy - radius * radius
    disc = b * b - a * c
    ok = (disc >= 0.0) & (a > 0.0)
    if np.any(ok):
        sq = np.sqrt(disc[ok])
        ao = a[ok]
        t0 = (-b[ok] - sq) / ao
        t1 = (-b[ok] + sq) / ao
        z0 = oz + t0 * dz[ok]
        z1 = oz + t1 * dz[ok]
        good0 = (t0 > _T_EPS) & (z0 >= 0.0) & (z0 <= height)
        good1 = (t1 > _T_EPS) & (z1 >= 0.0) & (z1 <= height)
        t_wall[ok] = np.where(good0, t0, np.where(good1, t1, np.inf))

    t_top = np.full(n, np.inf)
    moving = np.abs(dz) > 1e-15
    if np.any(moving):
        tt = (height - oz) / dz[moving]
        px = ox + tt * dx[moving]
        py = oy + tt * dy[moving]
        good = (tt > _T_EPS) & (px * px + py * py <= radius * radius)
        sub = t_top[moving]
        sub[good] = tt[good]
        t_top[moving] = sub

    return np.minimum(t_wall, t_top)


def ray_ground(origin, dirs):
    """Hit parameter for the z=0 plane, rays approaching from above only."""
    dirs = np.asarray(dirs, dtype=float)
    dz = dirs[:, 2]
    t = np.full(len(dirs), np.inf)
    if origin[2] <= 0.0:
        return t
    down = dz < -1e-15
    t[down] = -origin[2] / dz[down]
    t[t <= _T_EPS] = np.inf
    return t


# ===== distances =====

def point_to_cylinder(p, center_xy, radius, height):
    """Distance from point(s) to a capped cylinder surface.

    Negative inside the solid (lateral depth), so a `< r` test still
    flags containment. p is (3,) or (N, 3); returns scalar or (N,).
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    pts = p[None, :] if single else p
    dxy = np.hypot(pts[:, 0] - center_xy[0], pts[:, 1] - center_xy[1])
    above = pts[:, 2] > height
    lateral = dxy - radius
    d = np.where(
        above,
        np.hypot(np.maximum(lateral, 0.0), pts[:, 2] - height),
        lateral,
    )
    return float(d[0]) if single else d


def point_to_pillars(p, centers_xy, radii, heights):
    """Min distance from one point to a set of pillars; +inf when empty."""
    if len(centers_xy) == 0:
        return np.inf
    p = np.asarray(p, dtype=float)
    dxy = np.hypot(p[0] - centers_xy[:, 0], p[1] - centers_xy[:, 1])
    lateral = dxy - radii
    above = p[2] > heights
    d = np.where(above, np.hypot(np.maximum(lateral, 0.0), p[2] - heights), lateral)
    return float(np.min(d))


def segment_point_distance(a, b, points):
    """Distance from each of points (N,3) to segment a-b (3,)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ab = b - a
    denom = ab @ ab
    if denom < 1e-18:
        return np.linalg.norm(points - a, axis=1)
    s = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + s[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def segment_point_distance_2d(a_xy, b_xy, points_xy):
    """Planar variant of segment_point_distance."""
    a = np.asarray(a_xy, dtype=float)
    b = np.asarray(b_xy, dtype=float)
    points = np.atleast_2d(np.asarray(points_xy, dtype=float))
    ab = b - a
    denom = ab @ ab
    if denom < 1e-18:
        return np.linalg.norm(points - a, axis=1)
    s = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + s[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def segment_blocked_by_sphere(a, b, center, radius):
    """True when segment a-b passes through the sphere interior."""
    return float(segment_point_distance(a, b, center[None, :])[0]) < radius


def segment_blocked_by_pillar(a, b, center_xy, radius, height):
    """True when segment a-b passes through a solid vertical cylinder
    standing on the ground (axis through center_xy, z in [0, height])."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(center_xy, dtype=float)
    d = b[:2] - a[:2]
    f = a[:2] - c
    aa = d @ d
    if aa < 1e-18:
        # vertical (or degenerate) segment: inside footprint and z overlap
        if np.hypot(*f) >= radius:
            return False
        zlo, zhi = sorted((a[2], b[2]))
        return zlo < height and zhi > 0.0
    # solve |f + s d|^2 = radius^2 for the parameter window inside the wall
    bb = 2.0 * (f @ d)
    cc = f @ f - radius * radius
    disc = bb * bb - 4.0 * aa * cc
    if disc <= 0.0:
        return False
    root = np.sqrt(disc)
    s0 = max((-bb - root) / (2.0 * aa), 0.0)
    s1 = min((-bb + root) / (2.0 * aa), 1.0)
    if s0 >= s1:
        return False
    z0 = a[2] + s0 * (b[2] - a[2])
    z1 = a[2] + s1 * (b[2] - a[2])
    zlo, zhi = min(z0, z1), max(z0, z1)
    return zlo < height and zhi > 0.0


def azimuth_elevation(vecs):
    """Azimuth (about +z from +x, CCW) and elevation angles of vectors (N,3)."""
    vecs = np.atleast_2d(np.asarray(vecs, dtype=float))
    horiz = np.hypot(vecs[:, 0], vecs[:, 1])
    az = np.arctan2(vecs[:, 1], vecs[:, 0])
    el = np.arctan2(vecs[:, 2], horiz)
    return az, el


def spherical_dirs(azimuths, elevations):
    """Unit direction grid from azimuth (A,) x elevation (E,) angles -> (A*E, 3)."""
    az = np.repeat(azimuths, len(elevations))
    el = np.tile(elevations, len(azimuths))
    ce = np.cos(el)
    return np.column_stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)])
