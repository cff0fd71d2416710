import numpy as np
import pytest
from scipy import stats

from gridquery import (
    build_index,
    chebyshev_offsets,
    neighborhood,
    neighborhood_layers,
    quantize,
    quantize_points,
    seeded_rng,
)

from conftest import make_cloud, unit_config


def grid_cloud(cells):
    """Cloud with the requested number of points inside each unit voxel.

    ``cells`` maps (u, v, w) -> count; points are placed deterministically
    inside their cell, in dict order.
    """
    pts = []
    for (u, v, w), count in cells.items():
        for j in range(count):
            frac = (j + 1) / (count + 1)
            pts.append((u + frac, v + frac, w + 0.5))
    return make_cloud(pts)


class TestQuantize:
    def test_floor_not_truncation(self):
        assert quantize((2.5, 0.3, -1.2), (1, 1, 1)) == (2, 0, -2)

    def test_origin(self):
        assert quantize((0, 0, 0), (0.7, 2.0, 5.0)) == (0, 0, 0)

    def test_exact_boundary(self):
        assert quantize((3.0, 3.0, 3.0), (1.5, 1.0, 3.0)) == (2, 3, 1)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            quantize((np.nan, 0, 0), (1, 1, 1))
        with pytest.raises(ValueError):
            quantize_points(np.array([[np.inf, 0, 0]]), (1, 1, 1))

    def test_vectorized_matches_scalar(self, rng):
        pts = rng.normal(scale=5.0, size=(200, 3))
        vs = (0.3, 0.7, 1.1)
        vec = quantize_points(pts, vs)
        for i in range(len(pts)):
            assert tuple(vec[i]) == quantize(pts[i], vs)


class TestBuildIndex:
    def test_cap_semantics_single_voxel(self, rng):
        cloud = make_cloud([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.3, 0.3, 0.3], [0.4, 0.4, 0.4]])
        idx = build_index(cloud, unit_config(n_v=3), rng)
        assert idx.n_occupied == 1
        assert len(idx.bucket((0, 0, 0))) == 3
        assert idx.total((0, 0, 0)) == 4

    def test_two_voxels(self, rng):
        cloud = make_cloud([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5]])
        idx = build_index(cloud, unit_config(), rng)
        assert idx.n_occupied == 2
        assert len(idx.bucket((0, 0, 0))) == 1
        assert len(idx.bucket((1, 0, 0))) == 1

    def test_bucket_cap_on_annotated_grid(self, rng):
        cloud = grid_cloud({(0, 0, 0): 7, (1, 0, 0): 2, (2, 1, 0): 3, (0, 2, 0): 5})
        idx = build_index(cloud, unit_config(n_v=3), rng)
        for coord, count in {(0, 0, 0): 7, (1, 0, 0): 2, (2, 1, 0): 3, (0, 2, 0): 5}.items():
            assert idx.total(coord) == count
            assert len(idx.bucket(coord)) == min(count, 3)

    def test_partition_and_census_properties(self):
        rng_data = seeded_rng(42)
        cloud = make_cloud(rng_data.normal(scale=2.0, size=(500, 3)))
        cfg = unit_config(n_v=2)
        idx = build_index(cloud, cfg, seeded_rng(0))
        # census: every arrival counted exactly once
        assert int(idx.per_voxel_total.sum()) == 500
        seen = set()
        for vid in range(idx.n_occupied):
            bucket = idx.bucket_by_id(vid)
            assert 1 <= len(bucket) <= 2
            assert idx.per_voxel_total[vid] >= len(bucket)
            for i in bucket:
                assert i not in seen  # at most one bucket per point
                seen.add(int(i))
                assert quantize(cloud.positions[i], cfg.voxel_size) == idx.coord_of(vid)

    def test_coords_sorted_lexicographically(self, rng):
        cloud = make_cloud(seeded_rng(3).normal(scale=3.0, size=(200, 3)))
        idx = build_index(cloud, unit_config(), rng)
        rows = [tuple(r) for r in idx.coords]
        assert rows == sorted(rows)

    def test_deterministic_and_worker_invariant(self):
        cloud = make_cloud(seeded_rng(11).normal(scale=1.5, size=(400, 3)))
        cfg = unit_config(voxel=0.5, n_v=2)
        a = build_index(cloud, cfg, seeded_rng(5))
        b = build_index(cloud, cfg, seeded_rng(5))
        c = build_index(cloud, cfg, seeded_rng(5), workers=4)
        for other in (b, c):
            np.testing.assert_array_equal(a.coords, other.coords)
            np.testing.assert_array_equal(a._stored, other._stored)
            np.testing.assert_array_equal(a.per_voxel_total, other.per_voxel_total)

    def test_reservoir_keeps_uniform_sample(self):
        # 12 points in one voxel, cap 3: every point should be kept with
        # probability 1/4. Pooled chi-square over 2000 builds.
        cloud = make_cloud([[0.05 * i, 0.0, 0.0] for i in range(1, 13)])
        cfg = unit_config(n_v=3)
        counts = np.zeros(12)
        for seed in range(2000):
            idx = build_index(cloud, cfg, seeded_rng(seed))
            counts[idx.bucket((0, 0, 0))] += 1
        chi = stats.chisquare(counts, f_exp=np.full(12, counts.sum() / 12))
        assert chi.pvalue > 0.001

    def test_empty_cloud_rejected(self, rng):
        with pytest.raises(ValueError):
            build_index(make_cloud(np.empty((0, 3))), unit_config(), rng)


class TestNeighborhood:
    def test_isolated_voxel(self, rng):
        cloud = grid_cloud({(5, 5, 5): 2})
        idx = build_index(cloud, unit_config(), rng)
        nb = neighborhood(idx, (5, 5, 5), r=1)
        assert nb.occupied_neighbors == [(5, 5, 5)]
        np.testing.assert_array_equal(np.sort(nb.context_point_indices), [0, 1])

    def test_full_block_has_27_neighbors(self, rng):
        cells = {(u, v, w): 1 for u in range(3) for v in range(3) for w in range(3)}
        idx = build_index(grid_cloud(cells), unit_config(), rng)
        nb = neighborhood(idx, (1, 1, 1), r=1)
        assert len(nb.occupied_neighbors) == 27

    def test_context_is_box_restricted(self, rng):
        # center (2,1) in a flat layout: context points come from exactly
        # the occupied cells of the surrounding box
        cells = {(0, 0, 0): 4, (1, 0, 0): 1, (2, 0, 0): 2, (2, 1, 0): 3, (0, 2, 0): 2, (1, 2, 0): 1}
        cloud = grid_cloud(cells)
        idx = build_index(cloud, unit_config(n_v=3), rng)
        nb = neighborhood(idx, (2, 1, 0), r=1)
        assert set(nb.occupied_neighbors) == {(1, 0, 0), (2, 0, 0), (2, 1, 0)}
        expected = np.concatenate(
            [idx.bucket((1, 0, 0)), idx.bucket((2, 0, 0)), idx.bucket((2, 1, 0))]
        )
        np.testing.assert_array_equal(np.sort(nb.context_point_indices), np.sort(expected))

    def test_scan_order_is_offset_lexicographic(self, rng):
        cells = {(0, 0, 0): 1, (1, 1, 1): 1, (0, 1, 0): 1, (1, 0, 0): 1}
        idx = build_index(grid_cloud(cells), unit_config(), rng)
        nb = neighborhood(idx, (0, 0, 0), r=1)
        rel = [(u, v, w) for (u, v, w) in nb.occupied_neighbors]
        assert rel == sorted(rel)
        parts = [idx.bucket(c) for c in nb.occupied_neighbors]
        np.testing.assert_array_equal(nb.context_point_indices, np.concatenate(parts))

    def test_unoccupied_center_is_an_error(self, rng):
        idx = build_index(grid_cloud({(0, 0, 0): 1}), unit_config(), rng)
        with pytest.raises(ValueError):
            neighborhood(idx, (9, 9, 9), r=1)

    def test_no_duplicate_context_indices(self, rng):
        cloud = make_cloud(seeded_rng(8).normal(scale=1.2, size=(300, 3)))
        idx = build_index(cloud, unit_config(voxel=0.5, n_v=4), rng)
        for vid in range(0, idx.n_occupied, 7):
            nb = neighborhood(idx, idx.coord_of(vid), r=1)
            assert len(np.unique(nb.context_point_indices)) == len(nb.context_point_indices)


class TestNeighborhoodLayers:
    def test_isolated_voxel_layers(self, rng):
        idx = build_index(grid_cloud({(3, 3, 3): 2}), unit_config(), rng)
        layers = neighborhood_layers(idx, (3, 3, 3), r=1)
        assert len(layers) == 2
        assert len(layers[0]) == 2
        assert len(layers[1]) == 0

    def test_face_adjacent_neighbor(self, rng):
        idx = build_index(grid_cloud({(0, 0, 0): 2, (1, 0, 0): 3}), unit_config(), rng)
        layers = neighborhood_layers(idx, (0, 0, 0), r=1)
        np.testing.assert_array_equal(np.sort(layers[0]), np.sort(idx.bucket((0, 0, 0))))
        np.testing.assert_array_equal(np.sort(layers[1]), np.sort(idx.bucket((1, 0, 0))))

    def test_layers_match_bruteforce_shell_classification(self, rng):
        # random occupancy in a 5x5x5 grid, r=2: each context point's shell
        # is its voxel's Chebyshev distance from the center
        data_rng = seeded_rng(77)
        occupied = {}
        for u in range(5):
            for v in range(5):
                for w in range(5):
                    if data_rng.random() < 0.4:
                        occupied[(u, v, w)] = int(data_rng.integers(1, 4))
        occupied[(2, 2, 2)] = 2  # center must be occupied
        cloud = grid_cloud(occupied)
        idx = build_index(cloud, unit_config(n_v=4), rng)
        layers = neighborhood_layers(idx, (2, 2, 2), r=2)

        center = np.array([2, 2, 2])
        vox = quantize_points(cloud.positions, (1, 1, 1))
        expected = {level: [] for level in range(3)}
        for vid in range(idx.n_occupied):
            dist = int(np.max(np.abs(idx.coords[vid] - center)))
            if dist <= 2:
                expected[dist].extend(idx.bucket_by_id(vid).tolist())
        for level in range(3):
            assert sorted(layers[level].tolist()) == sorted(expected[level])
        # shells partition the full-neighborhood context
        nb = neighborhood(idx, (2, 2, 2), r=2)
        union = np.concatenate(layers)
        assert len(np.unique(union)) == len(union)
        assert sorted(union.tolist()) == sorted(nb.context_point_indices.tolist())
        assert np.all(vox[union][:, 0] >= 0)


class TestChebyshevOffsets:
    def test_counts_and_order(self):
        offs = chebyshev_offsets(1)
        assert offs.shape == (27, 3)
        assert [tuple(o) for o in offs] == sorted(tuple(o) for o in offs)
        assert tuple(offs[0]) == (-1, -1, -1)
        assert tuple(offs[-1]) == (1, 1, 1)
