"""End-to-end grouping: index build, center sampling, node querying, and
group-center synthesis.

Each group's center carries the sum of its node coverage weights and sits
at the coverage-weighted barycenter of its node positions, so a center
"remembers" how many original points it aggregates. Chaining runs feed
each level's synthesized centers into the next level as its input cloud.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np

from . import query as q
from . import sampling
from .cloud import PointCloud, SamplingConfig
from .query import QueryResult
from .voxelgrid import VoxelCoord, VoxelPointIndex, build_index, neighborhood, quantize

__all__ = [
    "PointGroup",
    "GroupingOutput",
    "cagq",
    "chain",
    "group_center",
    "serialize_groups",
    "write_groups",
    "parse_groups",
    "SAMPLERS",
    "QUERIERS",
]

SAMPLERS = ("rps", "fps", "rvs", "cas", "naive_grid")
QUERIERS = ("ball", "cube", "knn", "layered_knn", "voxel")

_INDEX_QUERIERS = ("cube", "layered_knn", "voxel")
_RNG_QUERIERS = ("ball", "cube", "voxel")


@dataclass
class PointGroup:
    """K node points plus their synthesized center.

    ``center_voxel`` is None for point-centered samplers in
    keep-sampled-center mode only; otherwise it names the voxel the query
    was anchored at.
    """

    center_voxel: VoxelCoord | None
    nodes: QueryResult
    center_position: np.ndarray
    center_weight: float


@dataclass
class GroupingOutput:
    """All groups of one structuring level plus the downsampled cloud of
    their centers (positions + accumulated weights, no features)."""

    groups: list[PointGroup]
    downsampled_cloud: PointCloud
    warnings: list[str] = field(default_factory=list)

    @property
    def m_effective(self) -> int:
        return len(self.groups)


def group_center(positions: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, float]:
    """Coverage-weighted barycenter and summed weight of a node list.

    Repeat-padded nodes contribute once per occurrence, keeping the center
    a pure function of the node list.
    """
    w = np.asarray(weights, dtype=np.float64)
    total = float(np.sum(w))
    center = (w[:, None] * np.asarray(positions, dtype=np.float64)).sum(axis=0) / total
    return center, total


def cagq(
    cloud: PointCloud,
    config: SamplingConfig,
    sampling_method: str,
    query_method: str,
    rng: np.random.Generator,
    workers: int = 1,
    keep_sampled_center: bool = False,
    ball_radius: float | None = None,
    strict_knn: bool = False,
) -> GroupingOutput:
    """One structuring level: sample M centers, query K nodes per center,
    synthesize group centers.

    Deterministic under a fixed rng state for any ``workers`` count: the
    sequential stages consume the stream in a fixed order and per-center
    query streams are spawned children, independent of scheduling.

    The voxel-point index is built only when the method pair needs it, so
    baseline combinations (rps/fps + ball/knn) are not charged for it.
    """
    if sampling_method not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampling_method!r}; expected one of {SAMPLERS}")
    if query_method not in QUERIERS:
        raise ValueError(f"unknown querier {query_method!r}; expected one of {QUERIERS}")
    if sampling_method == "naive_grid" and query_method != "voxel":
        raise ValueError("naive_grid sampling restricts queries to the center voxel; use query_method='voxel'")
    if len(cloud) == 0:
        raise ValueError("empty input cloud")

    needs_index = sampling_method in sampling.VOXEL_METHODS or query_method in _INDEX_QUERIERS
    index: VoxelPointIndex | None = None
    if needs_index:
        index = build_index(cloud, config, rng, workers=workers)

    warnings: list[str] = []
    if sampling_method == "rps":
        selection = sampling.rps(cloud, config.m, rng)
    elif sampling_method == "fps":
        selection = sampling.fps(cloud, config.m, rng)
    elif sampling_method == "rvs":
        selection = sampling.rvs(index, config.m, rng)
    elif sampling_method == "cas":
        selection = sampling.cas(index, config.m, config.beta, rng, config.neighborhood_radius)
    else:
        selection = sampling.naive_grid(index, config.m, rng)
    if selection.m_effective < config.m:
        warnings.append(
            f"requested {config.m} centers but pool holds {selection.m_effective}; "
            f"m_effective={selection.m_effective}"
        )

    centers_pos, centers_vox = _center_anchors(cloud, config, selection, index)
    child_rngs = rng.spawn(selection.m_effective) if query_method in _RNG_QUERIERS else None
    radius = ball_radius
    if query_method == "ball" and radius is None:
        radius = q.ball_radius_half_diagonal(config.voxel_size)

    def run_one(i: int) -> QueryResult:
        if query_method == "ball":
            return q.ball_query(cloud, centers_pos[i], radius, config.k, child_rngs[i], config.short_group_policy)
        if query_method == "cube":
            nb = neighborhood(index, centers_vox[i], config.neighborhood_radius)
            return q.cube_query(index, nb, config.k, child_rngs[i], config.short_group_policy)
        if query_method == "voxel":
            return q.voxel_query(index, centers_vox[i], config.k, child_rngs[i], config.short_group_policy)
        if query_method == "knn":
            return q.knn_bruteforce(cloud, centers_pos[i], config.k, config.short_group_policy)
        return q.knn_layered(
            index,
            centers_vox[i],
            centers_pos[i],
            config.k,
            config.neighborhood_radius,
            strict=strict_knn,
            policy=config.short_group_policy,
        )

    m_eff = selection.m_effective
    if workers > 1 and m_eff > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, range(m_eff)))
    else:
        results = [run_one(i) for i in range(m_eff)]

    groups: list[PointGroup] = []
    for i, res in enumerate(results):
        if len(res.node_indices) == 0:
            warnings.append(f"group {i}: no candidates in range, dropped")
            continue
        if keep_sampled_center and selection.point_indices is not None:
            c_pos = cloud.positions[selection.point_indices[i]].copy()
            c_w = float(np.sum(cloud.weights[res.node_indices]))
            vox = None
        else:
            c_pos, c_w = group_center(
                cloud.positions[res.node_indices], cloud.weights[res.node_indices]
            )
            vox = centers_vox[i]
        groups.append(PointGroup(vox, res, c_pos, c_w))

    if groups:
        down = PointCloud(
            np.stack([g.center_position for g in groups]),
            np.asarray([g.center_weight for g in groups], dtype=np.float64),
        )
    else:
        raise ValueError("no group could be formed (all queries came back empty)")
    return GroupingOutput(groups, down, warnings)


def _center_anchors(
    cloud: PointCloud,
    config: SamplingConfig,
    selection: sampling.CenterSelection,
    index: VoxelPointIndex | None,
) -> tuple[np.ndarray, list[VoxelCoord]]:
    """Per-center query anchors: a position and a voxel coordinate.

    Voxel-centered selections anchor at the voxel's geometric center;
    point-centered selections anchor at the sampled point, quantizing it
    to reach the voxel-based queries.
    """
    vs = config.voxel_size_array
    if selection.is_voxel_method:
        coords = selection.voxel_coords
        pos = (coords.astype(np.float64) + 0.5) * vs
        vox = [(int(u), int(v), int(w)) for u, v, w in coords]
    else:
        pos = cloud.positions[selection.point_indices]
        vox = [quantize(p, vs) for p in pos]
    return pos, vox


def chain(
    cloud: PointCloud,
    configs: list[SamplingConfig],
    methods: list[tuple[str, str]] | tuple[str, str],
    rng: np.random.Generator,
    workers: int = 1,
) -> list[GroupingOutput]:
    """Run several structuring levels, each consuming the previous level's
    synthesized centers. Group counts must strictly decrease."""
    if not configs:
        raise ValueError("need at least one level")
    ms = [c.m for c in configs]
    if any(b >= a for a, b in zip(ms, ms[1:])):
        raise ValueError(f"level group counts must strictly decrease, got {ms}")
    if isinstance(methods, tuple) and methods and isinstance(methods[0], str):
        methods = [methods] * len(configs)  # type: ignore[list-item]
    if len(methods) != len(configs):
        raise ValueError("need one (sampler, querier) pair per level")

    outputs: list[GroupingOutput] = []
    current = cloud
    for cfg, (smp, qry) in zip(configs, methods):
        if len(current) == 0:
            raise ValueError("level received an empty cloud")
        out = cagq(current, cfg, smp, qry, rng, workers=workers)
        outputs.append(out)
        current = out.downsampled_cloud
    return outputs


def serialize_groups(output: GroupingOutput) -> str:
    """Line format, one group per line: ``cx cy cz w k idx1 ... idxk``."""
    lines = []
    for g in output.groups:
        idx = " ".join(str(int(i)) for i in g.nodes.node_indices)
        cx, cy, cz = (repr(float(v)) for v in g.center_position)
        lines.append(f"{cx} {cy} {cz} {repr(g.center_weight)} {len(g.nodes.node_indices)} {idx}")
    return "\n".join(lines) + "\n"


def write_groups(output: GroupingOutput, sink: str | Path | TextIO) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(serialize_groups(output))
    else:
        sink.write(serialize_groups(output))


def parse_groups(text: str) -> list[tuple[np.ndarray, float, np.ndarray]]:
    """Inverse of :func:`serialize_groups`: (center, weight, node indices)
    per line."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        toks = line.split()
        if len(toks) < 5:
            raise ValueError(f"line {lineno}: expected 'cx cy cz w k idx...'")
        center = np.array([float(toks[0]), float(toks[1]), float(toks[2])])
        weight = float(toks[3])
        k = int(toks[4])
        if len(toks) != 5 + k:
            raise ValueError(f"line {lineno}: declared {k} nodes, found {len(toks) - 5}")
        rows.append((center, weight, np.array([int(t) for t in toks[5:]], dtype=np.int64)))
    return rows
