import numpy as np
import pytest

from gridquery import PointCloud, SamplingConfig, seeded_rng, spawn_rngs, validate_cloud
from gridquery.cloud import validate_feature_table

from conftest import make_cloud


class TestPointCloud:
    def test_basic_shape_and_defaults(self):
        c = make_cloud([[0, 0, 0], [1, 2, 3]])
        assert c.n == 2
        assert c.weights.tolist() == [1.0, 1.0]
        assert c.features is None

    def test_point_view(self):
        c = make_cloud([[1, 2, 3]], weights=[2.5], features=[[9.0, 8.0]])
        p = c.point(0)
        assert p.coverage_weight == 2.5
        assert p.features.tolist() == [9.0, 8.0]

    def test_subset_keeps_order(self):
        c = make_cloud(np.arange(15).reshape(5, 3), weights=[1, 2, 3, 4, 5])
        s = c.subset([3, 1])
        assert s.weights.tolist() == [4.0, 2.0]
        assert s.positions[0].tolist() == [9.0, 10.0, 11.0]

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            PointCloud(np.zeros((3, 3)), weights=np.ones(2))


class TestValidateCloud:
    def test_clean_cloud_is_ok(self):
        report = validate_cloud(make_cloud([[0, 0, 0], [1, 1, 1], [2, 2, 2]]))
        assert report.ok

    def test_nan_coordinate_reported_with_index(self):
        pts = [[0, 0, 0], [1, 1, 1], [np.nan, 0, 0]]
        report = validate_cloud(make_cloud(pts))
        assert not report.ok
        assert [i.index for i in report.issues] == [2]
        assert report.issues[0].kind == "non-finite"

    def test_underweight_point_reported(self):
        report = validate_cloud(make_cloud([[0, 0, 0]], weights=[0.5]))
        assert [i.kind for i in report.issues] == ["weight"]

    def test_every_violation_listed(self):
        pts = [[np.inf, 0, 0], [0, 0, 0], [np.nan, 1, 1]]
        report = validate_cloud(make_cloud(pts, weights=[1, 0, 1]))
        kinds = sorted(i.kind for i in report.issues)
        assert kinds == ["non-finite", "non-finite", "weight"]

    def test_ragged_features_reported(self):
        # point 0 has a 4-dim feature vector, point 1 none
        issues = validate_feature_table([np.zeros(4), None])
        assert len(issues) == 1
        assert issues[0].kind == "inconsistent-features"
        assert validate_feature_table([np.zeros(4), np.zeros(4)]) == []


class TestSamplingConfig:
    def test_scalar_voxel_size_broadcasts(self):
        cfg = SamplingConfig(voxel_size=0.5, m=1, k=1)
        assert cfg.voxel_size == (0.5, 0.5, 0.5)

    def test_storage_cap_defaults_to_k(self):
        assert SamplingConfig(voxel_size=1.0, m=1, k=7).storage_cap == 7
        assert SamplingConfig(voxel_size=1.0, m=1, k=7, n_v=3).storage_cap == 3

    @pytest.mark.parametrize(
        "kw",
        [
            {"voxel_size": 0.0, "m": 1, "k": 1},
            {"voxel_size": 1.0, "m": 0, "k": 1},
            {"voxel_size": 1.0, "m": 1, "k": 0},
            {"voxel_size": 1.0, "m": 1, "k": 1, "n_v": 0},
            {"voxel_size": 1.0, "m": 1, "k": 1, "neighborhood_radius": -1},
            {"voxel_size": 1.0, "m": 1, "k": 1, "beta": -0.1},
            {"voxel_size": 1.0, "m": 1, "k": 1, "short_group_policy": "pad"},
        ],
    )
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            SamplingConfig(**kw)


class TestSeededRng:
    def test_same_seed_same_stream(self):
        a = seeded_rng(7).integers(0, 1000, size=100)
        b = seeded_rng(7).integers(0, 1000, size=100)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = seeded_rng(7).integers(0, 1000, size=100)
        b = seeded_rng(8).integers(0, 1000, size=100)
        assert not np.array_equal(a, b)

    def test_shuffle_is_a_permutation(self):
        perm = seeded_rng(7).permutation(10)
        assert sorted(perm.tolist()) == list(range(10))

    def test_spawned_children_are_stable(self):
        a = [g.integers(0, 10**9) for g in spawn_rngs(seeded_rng(5), 4)]
        b = [g.integers(0, 10**9) for g in spawn_rngs(seeded_rng(5), 4)]
        assert a == b
        assert len(set(a)) == len(a)
