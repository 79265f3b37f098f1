"""Independent brute-force reference implementations for property tests.

Everything here trades speed for obviousness: quadratic scans, explicit
double sums, dense matrices. Production code must match these, not the
other way around.
"""
import numpy as np


def bfs_dbscan(points, eps, min_pts):
    """Textbook DBSCAN via neighborhood BFS over a dense distance matrix.

    Seeds clusters in ascending point-index order, so labels (not just
    the partition) are deterministic.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    nbr = d2 <= eps * eps
    core = nbr.sum(axis=1) >= min_pts
    cid = 0
    for seed in range(n):
        if labels[seed] != -1 or not core[seed]:
            continue
        labels[seed] = cid
        frontier = [seed]
        while frontier:
            q = frontier.pop(0)
            if not core[q]:
                continue
            for j in np.nonzero(nbr[q])[0]:
                if labels[j] == -1:
                    labels[j] = cid
                    frontier.append(j)
        cid += 1
    return labels


def partitions_equal(a, b):
    """Same grouping up to relabeling; noise (-1) must match exactly."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    if not np.array_equal(a == -1, b == -1):
        return False
    seen = {}
    for x, y in zip(a, b):
        if x == -1:
            continue
        if x in seen:
            if seen[x] != y:
                return False
        else:
            if y in seen.values():
                return False
            seen[x] = y
    return True


def gae_double_sum(rewards, values, next_values, dones, truncs, gamma, lam):
    """Advantage as the explicit exponentially weighted sum of TD errors,
    restarted at every episode boundary."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    next_values = np.asarray(next_values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    truncs = np.asarray(truncs, dtype=bool)
    T = len(rewards)
    delta = rewards + gamma * next_values * (~dones) - values
    boundary = dones | truncs
    adv = np.zeros(T)
    for t in range(T):
        acc = 0.0
        w = 1.0
        for l in range(t, T):
            acc += w * delta[l]
            if boundary[l]:
                break
            w *= gamma * lam
        adv[t] = acc
    return adv, adv + values


def kalman_cv_reference(measurements, dt, q, r_std, p0=1e3):
    """Position-measurement Kalman filter on a constant-velocity model,
    written as the plain matrix recursion."""
    zs = np.asarray(measurements, dtype=float)
    F = np.eye(6)
    F[:3, 3:] = np.eye(3) * dt
    H = np.zeros((3, 6))
    H[:, :3] = np.eye(3)
    # white-acceleration process noise, per-axis blocks
    q11 = q * dt ** 3 / 3.0
    q12 = q * dt ** 2 / 2.0
    q22 = q * dt
    Q = np.zeros((6, 6))
    for a in range(3):
        Q[a, a] = q11
        Q[a, 3 + a] = q12
        Q[3 + a, a] = q12
        Q[3 + a, 3 + a] = q22
    R = np.eye(3) * r_std ** 2
    x = np.zeros(6)
    x[:3] = zs[0]
    P = np.eye(6) * p0
    for z in zs[1:]:
        x = F @ x
        P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        x = x + K @ (z - H @ x)
        I_KH = np.eye(6) - K @ H
        P = I_KH @ P @ I_KH.T + K @ R @ K.T
    return x


def metrics_reference(positions, velocities, mdo_steps, goal, success):
    """All six evaluation metrics via explicit per-step loops.

    positions/velocities: (T, N, 3); mdo_steps: (T,) with nan for steps
    without obstacle detections (or None when obstacles never appear).
    Returns dict with sr, mp, fr, ms, al, mdo (mdo None when undefined).
    """
    positions = np.asarray(positions, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    T, N = positions.shape[:2]

    fr_steps, ms_steps, al_steps = [], [], []
    for t in range(T):
        center = positions[t].mean(axis=0)
        fr_steps.append(max(np.linalg.norm(positions[t][i] - center)
                            for i in range(N)))
        best = np.inf
        for i in range(N):
            for j in range(i + 1, N):
                best = min(best, np.linalg.norm(
                    positions[t][i] - positions[t][j]))
        ms_steps.append(best)
        v_avg = velocities[t].mean(axis=0)
        nv = np.linalg.norm(v_avg)
        speeds = [np.linalg.norm(velocities[t][i]) for i in range(N)]
        if nv < 1e-6 or min(speeds) < 1e-6:
            al_steps.append(np.nan)
        else:
            cs = [float(velocities[t][i] @ v_avg) / (speeds[i] * nv)
                  for i in range(N)]
            al_steps.append(float(np.mean(cs)))

    al_arr = np.array(al_steps)
    al = float(np.nanmean(al_arr)) if np.isfinite(al_arr).any() else None

    # mission progress measured at the leader (UAV row 0)
    goal = np.asarray(goal, dtype=float)
    total = np.linalg.norm(positions[0, 0] - goal)
    if total < 1e-12:
        mp = 100.0
    else:
        mp = float(100.0 * (1.0 - np.linalg.norm(positions[-1, 0] - goal) / total))

    if mdo_steps is None:
        mdo = None
    else:
        arr = np.asarray(mdo_steps, dtype=float)
        mdo = float(np.nanmean(arr)) if np.isfinite(arr).any() else None

    return {
        "sr": 100.0 if success else 0.0,
        "mp": mp,
        "fr": float(np.mean(fr_steps)),
        "ms": float(np.mean(ms_steps)),
        "al": al,
        "mdo": mdo,
    }


def point_to_cylinder(p, center_xy, radius, height):
    """Signed lateral distance to the cylinder wall below the top (negative
    inside); above the top, distance to the capped disk/rim."""
    p = np.asarray(p, dtype=float)
    lat = np.hypot(p[0] - center_xy[0], p[1] - center_xy[1]) - radius
    if p[2] <= height:
        return float(lat)
    return float(np.hypot(max(lat, 0.0), p[2] - height))
