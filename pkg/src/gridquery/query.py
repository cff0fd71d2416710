"""Node point querying: picking the K points that form one group.

Baselines scan the raw cloud (``ball_query`` within a Euclidean radius,
``knn_bruteforce`` over all points). The index-backed queries work on a
center voxel's neighborhood context instead: ``cube_query`` draws
uniformly from the context points, ``knn_layered`` collects nearest
points shell by shell and stops as soon as the quota is met.

Distance ties always break toward the lower point index. Groups that
cannot fill K are padded by cycling the drawn indices ("repeat" policy,
the default) or left short ("reject").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .voxelgrid import Neighborhood, VoxelCoord, VoxelPointIndex, neighborhood_layers

__all__ = [
    "QueryResult",
    "ball_query",
    "cube_query",
    "knn_bruteforce",
    "knn_layered",
    "voxel_query",
    "ball_radius_half_diagonal",
    "ball_radius_matching_voxel_volume",
]


@dataclass
class QueryResult:
    """Up to K node point indices plus how the quota went.

    ``truncated`` is set when fewer than K candidates existed;
    ``padded`` when the repeat policy cycled indices to reach length K.
    ``shells_inspected`` counts neighborhood shells actually visited
    (layered k-NN only, None elsewhere).
    """

    node_indices: np.ndarray
    truncated: bool = False
    padded: bool = False
    shells_inspected: int | None = None


def _finalize(drawn: np.ndarray, k: int, policy: str, shells: int | None = None) -> QueryResult:
    drawn = np.asarray(drawn, dtype=np.int64)
    if len(drawn) >= k:
        return QueryResult(drawn, shells_inspected=shells)
    if len(drawn) == 0 or policy == "reject":
        return QueryResult(drawn, truncated=True, shells_inspected=shells)
    # Cycle the drawn indices so every candidate stays represented.
    return QueryResult(np.resize(drawn, k), truncated=True, padded=True, shells_inspected=shells)


def ball_query(
    cloud: PointCloud,
    center_position,
    radius: float,
    k: int,
    rng: np.random.Generator,
    policy: str = "repeat",
) -> QueryResult:
    """Uniform K-subset of the points within ``radius`` of the center.

    Scans all N points. Returns an empty (truncated) result when nothing
    is in range.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center_position, dtype=np.float64)
    d2 = np.sum((cloud.positions - center) ** 2, axis=1)
    candidates = np.flatnonzero(d2 <= radius * radius)
    if len(candidates) > k:
        drawn = rng.choice(candidates, size=k, replace=False)
    else:
        drawn = candidates
    return _finalize(drawn, k, policy)


def cube_query(
    index: VoxelPointIndex,
    nbhd: Neighborhood,
    k: int,
    rng: np.random.Generator,
    policy: str = "repeat",
) -> QueryResult:
    """Uniform K-subset of a neighborhood's context points.

    O(K) given the prebuilt index; the context pool is already capped at
    n_v points per voxel, so dense spots cannot crowd out sparse ones.
    """
    candidates = nbhd.context_point_indices
    if len(candidates) == 0:
        raise ValueError("neighborhood has no context points")
    if len(candidates) > k:
        drawn = rng.choice(candidates, size=k, replace=False)
    else:
        drawn = candidates
    return _finalize(drawn, k, policy)


def voxel_query(
    index: VoxelPointIndex,
    center: VoxelCoord,
    k: int,
    rng: np.random.Generator,
    policy: str = "repeat",
) -> QueryResult:
    """Uniform K-subset of the center voxel's own bucket (no neighborhood
    reach). Companion to naive-grid sampling: groups never cross voxel
    boundaries, so they have no spatial overlap."""
    candidates = index.bucket(center)
    if len(candidates) > k:
        drawn = rng.choice(candidates, size=k, replace=False)
    else:
        drawn = candidates
    return _finalize(drawn, k, policy)


def _k_nearest(positions: np.ndarray, pool: np.ndarray, center: np.ndarray, k: int) -> np.ndarray:
    """K nearest of ``pool`` (point indices) to ``center``; ties break to
    the lower point index. Linear-time selection, result ordered by
    (distance, index)."""
    d2 = np.sum((positions[pool] - center) ** 2, axis=1)
    if k >= len(pool):
        sel = np.arange(len(pool))
    else:
        kth = np.partition(d2, k - 1)[k - 1]
        below = np.flatnonzero(d2 < kth)
        at = np.flatnonzero(d2 == kth)
        # pool is in ascending index order, so the first entries of `at`
        # are the lowest-index ties.
        sel = np.concatenate([below, at[: k - len(below)]])
    sel = sel[np.lexsort((pool[sel], d2[sel]))]
    return pool[sel]


def knn_bruteforce(
    cloud: PointCloud,
    center_position,
    k: int,
    policy: str = "repeat",
) -> QueryResult:
    """Exact K nearest neighbors over the whole cloud."""
    if k < 1:
        raise ValueError("k must be >= 1")
    center = np.asarray(center_position, dtype=np.float64)
    pool = np.arange(len(cloud), dtype=np.int64)
    return _finalize(_k_nearest(cloud.positions, pool, center, k), k, policy)


def knn_layered(
    index: VoxelPointIndex,
    center_voxel: VoxelCoord,
    center_position,
    k: int,
    r: int | None = None,
    strict: bool = False,
    policy: str = "repeat",
) -> QueryResult:
    """K nearest context points, collected shell by shell.

    Walks the Chebyshev shells 0..r around the center voxel. A shell that
    fits entirely within the remaining quota is taken whole (no sorting);
    otherwise only the quota's worth of nearest points in that shell is
    kept, and the walk stops once the quota is met. Cost is bounded by the
    context size (n_v points per occupied neighbor voxel), independent of N.

    The shell-wise early stop is the literal traversal semantics: a outer-
    shell point can in principle be nearer than an inner-shell one, and
    ``strict=True`` instead finishes all shells and selects the exact K
    nearest over the full context set.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if r is None:
        r = index.config.neighborhood_radius
    center = np.asarray(center_position, dtype=np.float64)
    layers = neighborhood_layers(index, center_voxel, r)

    if strict:
        pool = np.concatenate(layers) if layers else np.empty(0, dtype=np.int64)
        pool = np.sort(pool)
        taken = _k_nearest(index.positions, pool, center, min(k, len(pool)))
        return _finalize(taken, k, policy, shells=len(layers))

    collected: list[np.ndarray] = []
    quota = k
    shells = 0
    for layer in layers:
        shells += 1
        if len(layer) <= quota:
            taken = layer
        else:
            taken = _k_nearest(index.positions, np.sort(layer), center, quota)
        collected.append(taken)
        quota -= len(taken)
        if quota <= 0:
            break
    nodes = np.concatenate(collected) if collected else np.empty(0, dtype=np.int64)
    return _finalize(nodes, k, policy, shells=shells)


def ball_radius_half_diagonal(voxel_size) -> float:
    """Default ball radius for like-for-like comparisons: half the voxel
    cube's space diagonal."""
    vs = np.asarray(voxel_size, dtype=np.float64)
    return 0.5 * float(np.sqrt(np.sum(vs * vs)))


def ball_radius_matching_voxel_volume(voxel_size) -> float:
    """Ball radius whose sphere volume equals one voxel's volume."""
    vs = np.asarray(voxel_size, dtype=np.float64)
    return float((3.0 * np.prod(vs) / (4.0 * np.pi)) ** (1.0 / 3.0))
