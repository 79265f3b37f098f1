"""Leader guidance: missions, local RRT paths, potential-field commands."""
import numpy as np
import pytest

from lidarflock.geometry import segment_point_distance_2d
from lidarflock.planner import (
    ApfParams,
    LeaderPlanner,
    RrtParams,
    WaypointMission,
    _lookahead_point,
    advance_mission,
    apf_command,
    plan_local_path,
)


def mission(*wps, tol=1.0, cruise=1.0):
    return WaypointMission(waypoints=[np.array(w, dtype=float) for w in wps],
                           arrival_tolerance=tol, cruise_speed=cruise)


class TestMission:
    def test_active_and_complete(self):
        m = mission([5.0, 0, 1.5], [10.0, 0, 1.5])
        assert not m.complete
        assert np.array_equal(m.active_waypoint, [5.0, 0, 1.5])
        m.active_index = 2
        assert m.complete and m.active_waypoint is None

    def test_advance_within_tolerance(self):
        m = mission([5.0, 0, 1.5], [10.0, 0, 1.5])
        advance_mission([4.5, 0.0, 1.5], m)
        assert m.active_index == 1

    def test_advance_ignores_altitude(self):
        m = mission([5.0, 0, 1.5])
        advance_mission([5.0, 0.0, 9.0], m)
        assert m.complete

    def test_advance_skips_stacked_waypoints(self):
        m = mission([5.0, 0, 1.5], [5.2, 0, 1.5], [20.0, 0, 1.5])
        advance_mission([5.0, 0.0, 1.5], m)
        assert m.active_index == 2

    def test_no_advance_beyond_tolerance(self):
        m = mission([5.0, 0, 1.5])
        advance_mission([3.0, 0.0, 1.5], m)
        assert m.active_index == 0

    def test_validate(self):
        with pytest.raises(ValueError):
            mission([1, 0, 0], tol=0.0).validate()
        bad = mission([1, 0, 0])
        bad.active_index = 5
        with pytest.raises(ValueError):
            bad.validate()


class TestPlanLocalPath:
    def path_is_clear(self, path, pts, clearance):
        return all(
            np.min(segment_point_distance_2d(path[i], path[i + 1], pts))
            >= clearance
            for i in range(len(path) - 1))

    def test_free_space_direct(self):
        rng = np.random.default_rng(0)
        path = plan_local_path([0.0, 0.0], [5.0, 0.0], np.zeros((0, 2)), rng)
        assert len(path) == 2
        assert np.allclose(path[0], [0, 0]) and np.allclose(path[1], [5, 0])

    def test_goal_clipped_to_window(self):
        rng = np.random.default_rng(1)
        path = plan_local_path([0.0, 0.0], [40.0, 0.0], np.zeros((0, 2)), rng)
        assert np.allclose(path[-1], [10.0, 0.0])

    def test_buried_goal_unreachable(self):
        rng = np.random.default_rng(2)
        pts = np.array([[5.0, 0.0], [5.1, 0.0]])
        assert plan_local_path([0.0, 0.0], [5.05, 0.0], pts, rng) is None

    def test_routes_around_wall(self):
        rng = np.random.default_rng(3)
        ys = np.arange(-2.0, 2.0 + 1e-9, 0.1)
        wall = np.column_stack([np.full_like(ys, 2.5), ys])
        params = RrtParams()
        path = plan_local_path([0.0, 0.0], [5.0, 0.0], wall, rng, params)
        assert path is not None
        assert np.allclose(path[0], [0, 0]) and np.allclose(path[-1], [5, 0])
        assert self.path_is_clear(path, wall, params.clearance)

    def test_deterministic_given_rng(self):
        ys = np.arange(-2.0, 2.0 + 1e-9, 0.1)
        wall = np.column_stack([np.full_like(ys, 2.5), ys])
        a = plan_local_path([0.0, 0.0], [5.0, 0.0], wall,
                            np.random.default_rng(7))
        b = plan_local_path([0.0, 0.0], [5.0, 0.0], wall,
                            np.random.default_rng(7))
        assert len(a) == len(b)
        assert all(np.array_equal(p, q) for p, q in zip(a, b))

    def test_enclosed_start_exhausts_budget(self):
        rng = np.random.default_rng(4)
        ang = np.arange(0.0, 2 * np.pi, 0.1)
        ring = 1.5 * np.column_stack([np.cos(ang), np.sin(ang)])
        params = RrtParams(max_nodes=400)
        assert plan_local_path([0.0, 0.0], [5.0, 0.0], ring, rng,
                               params) is None


class TestLookahead:
    def test_straight_segment(self):
        path = [np.array([0.0, 0.0]), np.array([10.0, 0.0])]
        pt = _lookahead_point(path, np.array([2.0, 1.0]), 1.5)
        assert np.allclose(pt, [3.5, 0.0])

    def test_clamps_to_path_end(self):
        path = [np.array([0.0, 0.0]), np.array([10.0, 0.0])]
        pt = _lookahead_point(path, np.array([9.5, 0.0]), 3.0)
        assert np.allclose(pt, [10.0, 0.0])

    def test_walks_around_corner(self):
        path = [np.array([0.0, 0.0]), np.array([2.0, 0.0]),
                np.array([2.0, 2.0])]
        pt = _lookahead_point(path, np.array([1.9, 0.0]), 1.0)
        assert np.allclose(pt, [2.0, 0.9])


class TestApfCommand:
    PATH = [np.array([0.0, 0.0]), np.array([10.0, 0.0])]

    def test_free_space_heads_down_path(self):
        cmd = apf_command([0.0, 0.0, 1.5], self.PATH, None, ApfParams(),
                          cruise_speed=1.0, alt_target=1.5)
        assert np.allclose(cmd, [1.0, 0.0, 0.0], atol=1e-9)

    def test_altitude_correction(self):
        cmd = apf_command([0.0, 0.0, 1.0], self.PATH, None, ApfParams(),
                          cruise_speed=1.0, alt_target=1.5)
        assert cmd[2] > 0.0
        assert np.linalg.norm(cmd) <= 1.0 + 1e-12

    def test_repulsion_pushes_away(self):
        pts = np.array([[1.0, 0.5, 1.5]])
        cmd = apf_command([0.0, 0.0, 1.5], self.PATH, pts, ApfParams(),
                          cruise_speed=1.0, alt_target=1.5)
        assert cmd[1] < 0.0        # point on the left pushes right

    def test_out_of_band_points_ignored(self):
        free = apf_command([0.0, 0.0, 1.5], self.PATH, None, ApfParams(),
                           cruise_speed=1.0, alt_target=1.5)
        high = np.array([[1.0, 0.5, 4.0]])
        cmd = apf_command([0.0, 0.0, 1.5], self.PATH, high, ApfParams(),
                          cruise_speed=1.0, alt_target=1.5)
        assert np.allclose(cmd, free)

    def test_head_on_produces_sidestep(self):
        pts = np.array([[1.0, 0.0, 1.5]])
        cmd = apf_command([0.0, 0.0, 1.5], self.PATH, pts, ApfParams(),
                          cruise_speed=1.0, alt_target=1.5)
        assert abs(cmd[1]) > 1e-6

    def test_speed_cap_random_scenes(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            pts = rng.uniform(-3, 3, size=(rng.integers(0, 20), 3))
            pos = rng.uniform(-2, 2, size=3)
            cmd = apf_command(pos, self.PATH, pts, ApfParams(),
                              cruise_speed=1.2, alt_target=1.5)
            assert np.linalg.norm(cmd) <= 1.2 + 1e-12

    def test_validate(self):
        with pytest.raises(ValueError):
            ApfParams(k_att=-1.0).validate()


class TestLeaderPlanner:
    def planner(self, *wps, **kw):
        return LeaderPlanner(mission(*wps), **kw)

    def test_complete_mission_hovers(self):
        p = self.planner([5.0, 0, 1.5], alt_target=1.5)
        p.mission.active_index = 1
        cmd = p.command([3.0, 0.0, 1.2], None, 0.0, np.random.default_rng(0))
        assert cmd[0] == 0.0 and cmd[1] == 0.0
        assert cmd[2] == pytest.approx(0.3)

    def test_arrival_advances_then_completes(self):
        p = self.planner([5.0, 0, 1.5])
        rng = np.random.default_rng(1)
        p.command([5.0, 0.0, 1.5], None, 0.0, rng)
        assert p.mission.complete

    def test_plans_once_per_period(self):
        p = self.planner([8.0, 0, 1.5])
        rng = np.random.default_rng(2)
        p.command([0.0, 0.0, 1.5], None, 0.0, rng)
        first = p.last_plan_time
        p.command([0.5, 0.0, 1.5], None, 0.5, rng)
        assert p.last_plan_time == first       # inside the replan period
        p.command([1.0, 0.0, 1.5], None, 1.0, rng)
        assert p.last_plan_time == 1.0

    def test_blocked_path_forces_replan(self):
        p = self.planner([8.0, 0, 1.5])
        rng = np.random.default_rng(3)
        p.command([0.0, 0.0, 1.5], None, 0.0, rng)
        assert len(p.path) == 2                # straight shot
        ys = np.arange(-1.5, 1.5 + 1e-9, 0.1)
        wall = np.column_stack([np.full_like(ys, 4.0), ys,
                                np.full_like(ys, 1.5)])
        p.command([0.0, 0.0, 1.5], wall, 0.3, rng)
        assert p.last_plan_time == 0.3         # replanned before the period
        assert len(p.path) > 2

    def test_fallback_on_unplannable_goal(self):
        p = self.planner([5.0, 0, 1.5])
        rng = np.random.default_rng(4)
        pts = np.array([[5.0, 0.0, 1.5], [5.1, 0.0, 1.5]])
        cmd = p.command([0.0, 0.0, 1.5], pts, 0.0, rng)
        assert p.fallback
        assert np.all(np.isfinite(cmd))
        later = p.command([0.0, 0.0, 1.5], None, 2.0, rng)
        assert not p.fallback                  # planning recovers
        assert np.all(np.isfinite(later))

    def test_command_deterministic(self):
        ys = np.arange(-1.5, 1.5 + 1e-9, 0.1)
        wall = np.column_stack([np.full_like(ys, 4.0), ys,
                                np.full_like(ys, 1.5)])
        outs = []
        for _ in range(2):
            p = self.planner([8.0, 0, 1.5])
            rng = np.random.default_rng(6)
            cmds = [p.command([0.1 * k, 0.0, 1.5], wall, 0.1 * k, rng)
                    for k in range(5)]
            outs.append(np.array(cmds))
        assert np.array_equal(outs[0], outs[1])
