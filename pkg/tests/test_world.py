"""World model: kinematic stepping, scenario generation, collisions."""
import numpy as np
import pytest

from lidarflock.geometry import QUAT_IDENTITY, quat_yaw
from lidarflock.world import (
    R_UAV,
    ObstacleField,
    ScenarioConfig,
    ScenarioError,
    UavState,
    check_collisions,
    distance_to_obstacles,
    generate_scenario,
    step_kinematics,
)

from oracles import point_to_cylinder


def make_state(pos=(0.0, 0.0, 1.0), vel=(0.0, 0.0, 0.0), role="follower"):
    return UavState(
        position=np.array(pos, dtype=float),
        velocity=np.array(vel, dtype=float),
        orientation=QUAT_IDENTITY.copy(),
        role=role,
    )


class TestStepKinematics:
    def test_linear_update(self):
        s = step_kinematics(make_state(), np.array([1.0, 0.0, 0.0]), 0.1)
        assert np.allclose(s.position, [0.1, 0.0, 1.0])
        assert np.allclose(s.velocity, [1.0, 0.0, 0.0])

    def test_zero_command_holds_position(self):
        s0 = make_state(pos=(2.0, 3.0, 1.5))
        s = step_kinematics(s0, np.zeros(3), 0.1)
        assert np.allclose(s.position, [2.0, 3.0, 1.5])

    def test_overspeed_command_clamped(self):
        cmd = np.array([10.0, 0.0, 0.0])
        s = step_kinematics(make_state(), cmd, 0.1, v_max=2.0)
        assert np.isclose(np.linalg.norm(s.velocity), 2.0)
        assert np.allclose(s.position, [0.2, 0.0, 1.0])

    def test_clamp_preserves_direction(self):
        cmd = np.array([3.0, 4.0, 0.0])
        s = step_kinematics(make_state(), cmd, 0.1, v_max=2.0)
        assert np.allclose(s.velocity / np.linalg.norm(s.velocity),
                           cmd / np.linalg.norm(cmd))

    def test_nonfinite_command_rejected(self):
        with pytest.raises(ValueError):
            step_kinematics(make_state(), np.array([np.nan, 0.0, 0.0]), 0.1)
        with pytest.raises(ValueError):
            step_kinematics(make_state(), np.array([np.inf, 0.0, 0.0]), 0.1)

    def test_nonpositive_dt_rejected(self):
        with pytest.raises(ValueError):
            step_kinematics(make_state(), np.zeros(3), 0.0)

    def test_yaw_follows_horizontal_velocity(self):
        s = step_kinematics(make_state(), np.array([1.0, 1.0, 0.0]), 0.1)
        assert np.isclose(quat_yaw(s.orientation), np.pi / 4)

    def test_slow_command_keeps_orientation(self):
        s0 = make_state()
        s = step_kinematics(s0, np.array([0.01, 0.0, 0.0]), 0.1)
        assert np.allclose(s.orientation, s0.orientation)

    def test_displacement_matches_speed(self):
        rng = np.random.default_rng(0)
        s = make_state()
        for _ in range(50):
            cmd = rng.normal(size=3) * 2.0
            nxt = step_kinematics(s, cmd, 0.1)
            step = np.linalg.norm(nxt.position - s.position)
            assert np.isclose(step, np.linalg.norm(nxt.velocity) * 0.1)
            s = nxt

    def test_role_and_radius_carried(self):
        s = step_kinematics(make_state(role="leader"), np.zeros(3), 0.1)
        assert s.role == "leader"
        assert s.radius == R_UAV


class TestGenerateScenario:
    def test_same_seed_identical(self):
        cfg = ScenarioConfig(n_followers=4, min_gap=5.0, seed=7)
        a = generate_scenario(cfg)
        b = generate_scenario(cfg)
        assert np.array_equal(a.goal, b.goal)
        assert a.cruise_speed == b.cruise_speed
        assert np.array_equal(a.field.centers_xy, b.field.centers_xy)
        for sa, sb in zip(a.states, b.states):
            assert np.array_equal(sa.position, sb.position)

    def test_different_seed_differs(self):
        cfg = ScenarioConfig(n_followers=4)
        a = generate_scenario(cfg, seed=1)
        b = generate_scenario(cfg, seed=2)
        assert not np.allclose(a.goal, b.goal)

    def test_goal_on_radius_circle(self):
        sc = generate_scenario(ScenarioConfig(goal_radius=30.0), seed=3)
        assert abs(np.hypot(sc.goal[0], sc.goal[1]) - 30.0) < 1e-9

    def test_min_gap_honored_over_seeds(self):
        cfg = ScenarioConfig(n_followers=2, min_gap=5.0, n_pillars=6,
                             goal_radius=30.0)
        for seed in range(100):
            field = generate_scenario(cfg, seed=seed).field
            c, r = field.centers_xy, field.radii
            for i in range(len(r)):
                for j in range(i + 1, len(r)):
                    gap = np.hypot(*(c[i] - c[j])) - r[i] - r[j]
                    assert gap >= 5.0 - 1e-12

    def test_spawn_grid_spacing(self):
        sc = generate_scenario(ScenarioConfig(n_followers=4,
                                              spawn_spacing=1.6), seed=11)
        pos = np.array([s.position for s in sc.states])
        n = len(pos)
        dists = [np.linalg.norm(pos[i] - pos[j])
                 for i in range(n) for j in range(i + 1, n)]
        assert min(dists) >= 1.6 - 1e-12

    def test_leader_first_and_goal_side(self):
        sc = generate_scenario(ScenarioConfig(n_followers=4), seed=5)
        assert sc.states[0].role == "leader"
        assert all(s.role == "follower" for s in sc.states[1:])
        goal_dir = sc.goal[:2] / np.linalg.norm(sc.goal[:2])
        proj = [float(s.position[:2] @ goal_dir) for s in sc.states]
        assert proj[0] == max(proj)

    def test_larger_swarm_expands_grid(self):
        sc = generate_scenario(ScenarioConfig(n_followers=11), seed=0)
        assert sc.n_uavs == 12
        pos = np.array([s.position for s in sc.states])
        n = len(pos)
        dists = [np.linalg.norm(pos[i] - pos[j])
                 for i in range(n) for j in range(i + 1, n)]
        assert min(dists) >= sc.config.spawn_spacing - 1e-12

    def test_pillars_respect_spawn_clearing(self):
        cfg = ScenarioConfig(min_gap=1.0, n_pillars=10)
        for seed in range(10):
            field = generate_scenario(cfg, seed=seed).field
            surface = np.hypot(field.centers_xy[:, 0],
                               field.centers_xy[:, 1]) - field.radii
            assert np.all(surface >= cfg.spawn_clear_radius - 1e-12)

    def test_no_pillars_without_min_gap(self):
        sc = generate_scenario(ScenarioConfig(min_gap=None), seed=0)
        assert sc.field.n_pillars == 0

    def test_cruise_speed_within_range(self):
        cfg = ScenarioConfig(leader_speed_range=(1.0, 1.2))
        for seed in range(20):
            sc = generate_scenario(cfg, seed=seed)
            assert 1.0 <= sc.cruise_speed <= 1.2

    def test_impossible_layout_raises(self):
        cfg = ScenarioConfig(n_followers=1, min_gap=200.0, n_pillars=30,
                             goal_radius=10.0)
        with pytest.raises(ScenarioError):
            generate_scenario(cfg, seed=0)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            ScenarioConfig(n_followers=0).validate()
        with pytest.raises(ValueError):
            ScenarioConfig(dt=0.0).validate()
        with pytest.raises(ValueError):
            ScenarioConfig(leader_speed_range=(2.0, 1.0)).validate()


class TestCheckCollisions:
    def test_uav_pair_below_threshold(self):
        a = make_state(pos=(0.0, 0.0, 1.0))
        b = make_state(pos=(0.39, 0.0, 1.0))
        rep = check_collisions([a, b], ObstacleField.empty())
        assert rep.any_uav and rep.uav_pairs == [(0, 1)]

    def test_uav_pair_at_threshold_clear(self):
        a = make_state(pos=(0.0, 0.0, 1.0))
        b = make_state(pos=(0.41, 0.0, 1.0))
        rep = check_collisions([a, b], ObstacleField.empty())
        assert not rep.any_uav

    def test_near_pillar_but_clear(self):
        field = ObstacleField(centers_xy=np.array([[0.0, 0.0]]),
                              radii=np.array([0.5]),
                              heights=np.array([5.0]),
                              bounds_half_xy=20.0)
        s = make_state(pos=(0.75, 0.0, 1.0))   # 0.25 m from the surface
        rep = check_collisions([s], field)
        assert not rep.any_obstacle

    def test_inside_pillar_flagged(self):
        field = ObstacleField(centers_xy=np.array([[0.0, 0.0]]),
                              radii=np.array([0.5]),
                              heights=np.array([5.0]),
                              bounds_half_xy=20.0)
        s = make_state(pos=(0.0, 0.0, 1.0))    # on the pillar axis
        rep = check_collisions([s], field)
        assert rep.obstacle_hits == [0]


class TestDistanceToObstacles:
    def field_one(self):
        return ObstacleField(centers_xy=np.array([[0.0, 0.0]]),
                             radii=np.array([1.0]),
                             heights=np.array([5.0]),
                             bounds_half_xy=20.0)

    def test_lateral_distance(self):
        assert np.isclose(
            distance_to_obstacles(np.array([3.0, 0.0, 1.0]), self.field_one()),
            2.0)

    def test_empty_field_is_infinite(self):
        assert distance_to_obstacles(np.zeros(3), ObstacleField.empty()) == np.inf

    def test_above_top_matches_oracle(self):
        field = self.field_one()
        rng = np.random.default_rng(2)
        for _ in range(200):
            p = rng.uniform([-4, -4, 5.0], [4, 4, 9.0])
            want = point_to_cylinder(p, np.zeros(2), 1.0, 5.0)
            got = distance_to_obstacles(p, field)
            assert np.isclose(got, want, atol=1e-12)

    def test_nearest_of_many(self):
        field = ObstacleField(centers_xy=np.array([[0.0, 0.0], [10.0, 0.0]]),
                              radii=np.array([1.0, 2.0]),
                              heights=np.array([5.0, 5.0]),
                              bounds_half_xy=30.0)
        d = distance_to_obstacles(np.array([7.0, 0.0, 1.0]), field)
        assert np.isclose(d, 1.0)   # the wide pillar is closer
