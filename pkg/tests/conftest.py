import numpy as np
import pytest

from gridquery import PointCloud, SamplingConfig, seeded_rng


@pytest.fixture
def rng():
    return seeded_rng(1234)


def make_cloud(positions, weights=None, features=None) -> PointCloud:
    return PointCloud(np.asarray(positions, dtype=np.float64), weights, features)


def unit_config(m=4, k=4, voxel=1.0, **kw) -> SamplingConfig:
    return SamplingConfig(voxel_size=voxel, m=m, k=k, **kw)
