"""Observation assembly: ego vector, neighbor slots, polar grid, records."""
import numpy as np
import pytest

from lidarflock.observation import (
    DEFAULT_SLOTS,
    EGO_DIM,
    GRID_CHANNELS,
    GridParams,
    NeighborSlotPolicy,
    Observation,
    SLOT_DIM,
    assemble,
    build_ego,
    build_neighbor_block,
    build_occupancy_grid,
    obs_from_bytes,
    obs_to_bytes,
    observation_size,
)


def grid_oracle(points, params):
    """Scalar re-derivation of the polar grid: per-point binning with a
    running minimum range per bin."""
    nearest = {}
    for p in np.asarray(points, dtype=float).reshape(-1, 3):
        d = float(np.linalg.norm(p))
        if d <= 1e-12 or d > params.d_max:
            continue
        el = np.degrees(np.arctan2(p[2], np.hypot(p[0], p[1])))
        if el < params.elev_min_deg - 1e-9 or el > params.elev_max_deg + 1e-9:
            continue
        az = np.arctan2(p[1], p[0]) % (2 * np.pi)
        ia = min(int(az // (2 * np.pi / params.n_azimuth)), params.n_azimuth - 1)
        span = params.elev_max_deg - params.elev_min_deg
        ie = int((el - params.elev_min_deg) // (span / params.n_elevation))
        ie = min(max(ie, 0), params.n_elevation - 1)
        key = (ia, ie)
        nearest[key] = min(nearest.get(key, np.inf), d)
    grid = np.zeros((2, params.n_azimuth, params.n_elevation))
    for (ia, ie), d in nearest.items():
        grid[0, ia, ie] = np.clip(1.0 - d / params.d_max, 0.0, 1.0)
        grid[1, ia, ie] = 1.0
    return grid


class TestSizes:
    def test_default_total(self):
        assert observation_size() == 7 + 7 * 6 + 2 * 72 * 12

    def test_custom(self):
        gp = GridParams(n_azimuth=10, n_elevation=4)
        assert observation_size(3, gp) == 7 + 21 + 80

    def test_observation_size_property(self):
        obs = assemble(None, [], None)
        assert obs.size == observation_size()
        assert obs.flat().shape == (observation_size(),)


class TestEgo:
    def test_warmup_gives_zeros(self):
        ego, warm = build_ego(None)
        assert warm and np.all(ego == 0.0) and ego.shape == (EGO_DIM,)

    def test_layout(self):
        v = np.array([0.1, -0.2, 0.3])
        q = np.array([0.9, 0.0, 0.1, 0.2])
        ego, warm = build_ego((v, q))
        assert not warm
        assert np.array_equal(ego[:3], v)
        assert np.array_equal(ego[3:], q)


class TestNeighborBlock:
    def test_empty(self):
        block = build_neighbor_block([])
        assert block.shape == (SLOT_DIM * DEFAULT_SLOTS,)
        assert np.all(block == 0.0)

    def test_single(self):
        rel = [(np.array([1.0, 2.0, 0.0]), np.array([0.1, 0.0, 0.0]))]
        block = build_neighbor_block(rel)
        assert np.array_equal(block[:3], [1.0, 2.0, 0.0])
        assert np.array_equal(block[3:6], [0.1, 0.0, 0.0])
        assert block[6] == 1.0
        assert np.all(block[7:] == 0.0)

    def test_nearest_first(self):
        rel = [(np.array([3.0, 0.0, 0.0]), np.zeros(3)),
               (np.array([1.0, 0.0, 0.0]), np.zeros(3)),
               (np.array([2.0, 0.0, 0.0]), np.zeros(3))]
        block = build_neighbor_block(rel)
        assert block[0] == 1.0 and block[7] == 2.0 and block[14] == 3.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        rel = [(rng.uniform(-5, 5, 3), rng.uniform(-1, 1, 3))
               for _ in range(5)]
        base = build_neighbor_block(rel)
        for _ in range(10):
            order = rng.permutation(5)
            assert np.array_equal(build_neighbor_block([rel[i] for i in order]),
                                  base)

    def test_overflow_keeps_nearest(self):
        rel = [(np.array([float(r), 0.0, 0.0]), np.zeros(3))
               for r in range(9, 0, -1)]
        block = build_neighbor_block(rel)
        filled = block.reshape(DEFAULT_SLOTS, SLOT_DIM)
        assert np.array_equal(filled[:, 0], [1, 2, 3, 4, 5, 6])
        assert np.all(filled[:, 6] == 1.0)

    def test_mask_column_pattern(self):
        rel = [(np.ones(3), np.zeros(3))] * 2
        block = build_neighbor_block(rel).reshape(DEFAULT_SLOTS, SLOT_DIM)
        assert block[:, 6].tolist() == [1, 1, 0, 0, 0, 0]
        assert np.all(block[2:] == 0.0)

    def test_policy_width(self):
        rel = [(np.ones(3), np.zeros(3))] * 4
        block = build_neighbor_block(rel, NeighborSlotPolicy(max_neighbors=2))
        assert block.shape == (14,)

    def test_bad_policy(self):
        with pytest.raises(ValueError):
            NeighborSlotPolicy(max_neighbors=0).validate()


class TestOccupancyGrid:
    def test_empty(self):
        grid = build_occupancy_grid(np.zeros((0, 3)))
        assert grid.shape == (GRID_CHANNELS, 72, 12)
        assert np.all(grid == 0.0)

    def test_single_point_bin_and_value(self):
        # dead ahead at 5 m, level: azimuth bin 0; elevation 0 deg falls
        # in bin floor((0+7)/(59/12)) = 1
        grid = build_occupancy_grid(np.array([[5.0, 0.0, 0.0]]))
        assert grid[1, 0, 1] == 1.0
        assert grid[0, 0, 1] == pytest.approx(0.5)
        assert grid[1].sum() == 1.0

    def test_beyond_range_dropped(self):
        grid = build_occupancy_grid(np.array([[10.5, 0.0, 0.0]]))
        assert np.all(grid == 0.0)

    def test_below_fov_dropped(self):
        # 45 deg below horizontal is far outside the -7 deg floor
        grid = build_occupancy_grid(np.array([[1.0, 0.0, -1.0]]))
        assert np.all(grid == 0.0)

    def test_nearest_wins_in_shared_bin(self):
        pts = np.array([[4.0, 0.0, 0.0], [8.0, 0.0, 0.0]])
        grid = build_occupancy_grid(pts)
        assert grid[0, 0, 1] == pytest.approx(1.0 - 4.0 / 10.0)

    def test_azimuth_wrap(self):
        # just below the +x axis: az = 2*pi - eps lands in the last bin
        grid = build_occupancy_grid(np.array([[5.0, -0.01, 0.0]]))
        assert grid[1, 71, 1] == 1.0

    def test_invariants_random(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pts = rng.uniform(-8, 8, size=(200, 3))
            grid = build_occupancy_grid(pts)
            occ = grid[1]
            assert set(np.unique(occ)) <= {0.0, 1.0}
            assert np.all(grid[0] >= 0.0) and np.all(grid[0] <= 1.0)
            assert np.all(grid[0][occ == 0.0] == 0.0)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(2)
        gp = GridParams()
        for _ in range(10):
            pts = rng.uniform(-9, 9, size=(300, 3))
            assert np.allclose(build_occupancy_grid(pts, gp),
                               grid_oracle(pts, gp), atol=1e-12)

    def test_small_grid_oracle(self):
        rng = np.random.default_rng(3)
        gp = GridParams(n_azimuth=8, n_elevation=3, d_max=4.0)
        for _ in range(10):
            pts = rng.uniform(-4, 4, size=(80, 3))
            assert np.allclose(build_occupancy_grid(pts, gp),
                               grid_oracle(pts, gp), atol=1e-12)


class TestAssemble:
    def test_warmup_propagates(self):
        obs = assemble(None, [], None)
        assert obs.warm_up
        assert np.all(obs.flat() == 0.0)

    def test_full_assembly(self):
        ego_state = (np.array([1.0, 0.0, 0.0]), np.array([1.0, 0, 0, 0]))
        rel = [(np.array([2.0, 0.0, 0.0]), np.zeros(3))]
        pts = np.array([[5.0, 0.0, 0.0]])
        obs = assemble(ego_state, rel, pts)
        assert not obs.warm_up
        assert obs.ego[0] == 1.0
        assert obs.neighbors[6] == 1.0
        assert obs.grid[1].sum() == 1.0


class TestRecords:
    def test_round_trip(self):
        rng = np.random.default_rng(4)
        ego_state = (rng.normal(size=3), rng.normal(size=4))
        rel = [(rng.uniform(-3, 3, 3), rng.uniform(-1, 1, 3))
               for _ in range(3)]
        pts = rng.uniform(-6, 6, size=(50, 3))
        obs = assemble(ego_state, rel, pts)
        back = obs_from_bytes(obs_to_bytes(obs))
        assert np.array_equal(back.flat(), obs.flat())
        assert back.grid.shape == obs.grid.shape

    def test_length_check(self):
        with pytest.raises(ValueError):
            obs_from_bytes(b"\x00" * 12)

    def test_byte_length(self):
        obs = assemble(None, [], None)
        assert len(obs_to_bytes(obs)) == 4 * observation_size()
