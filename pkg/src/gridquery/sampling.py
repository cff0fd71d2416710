"""Center selection: where the point groups get anchored.

Point-centered baselines (``rps``, ``fps``) pick group centers among the
input points. Voxel-centered methods (``rvs``, ``cas``, ``naive_grid``)
pick occupied voxels from the voxel-point index instead, which makes the
selection insensitive to point density imbalance.

``cas`` greedily improves a random voxel selection: every unpicked
occupied voxel once gets to challenge a random incumbent, and the swap is
accepted when the coverage gained by adding the challenger exceeds the
coverage lost by dropping the incumbent. With ``beta == 0`` every
accepted swap strictly increases the number of covered occupied voxels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .voxelgrid import VoxelCoord, VoxelPointIndex

__all__ = [
    "CenterSelection",
    "CoverageState",
    "CasTrace",
    "rps",
    "fps",
    "rvs",
    "cas",
    "cas_with_trace",
    "naive_grid",
    "coverage_state",
    "coverage_gain_if_added",
    "coverage_loss_if_removed",
    "POINT_METHODS",
    "VOXEL_METHODS",
]

POINT_METHODS = ("rps", "fps")
VOXEL_METHODS = ("rvs", "cas", "naive_grid")


@dataclass
class CenterSelection:
    """M distinct centers: point indices or occupied-voxel ids/coords.

    ``m_effective`` is the count actually selected, which is less than the
    requested M when the pool (points or occupied voxels) runs out.
    """

    method: str
    m_effective: int
    point_indices: np.ndarray | None = None
    voxel_ids: np.ndarray | None = None
    voxel_coords: np.ndarray | None = None

    @property
    def is_voxel_method(self) -> bool:
        return self.voxel_ids is not None

    def voxels(self) -> list[VoxelCoord]:
        if self.voxel_coords is None:
            raise ValueError(f"{self.method} selects points, not voxels")
        return [(int(u), int(v), int(w)) for u, v, w in self.voxel_coords]


@dataclass
class CoverageState:
    """Per-voxel incumbent-coverage counters.

    ``counts[v]`` is the number of incumbents whose neighborhood block
    contains occupied voxel id ``v``; ``covered_count`` is the number of
    occupied voxels with a nonzero counter.
    """

    index: VoxelPointIndex
    r: int
    counts: np.ndarray
    covered_count: int

    def count_of(self, coord: VoxelCoord) -> int:
        return int(self.counts[self.index.voxel_id(coord)])

    def as_dict(self) -> dict[VoxelCoord, int]:
        return {self.index.coord_of(i): int(c) for i, c in enumerate(self.counts)}


@dataclass
class CasTrace:
    """Diagnostics from one coverage-aware sampling run."""

    initial_covered: int = 0
    swaps: list[tuple[int, int]] = field(default_factory=list)  # (before, after)
    challengers_seen: int = 0

    @property
    def accepted(self) -> int:
        return len(self.swaps)


def rps(cloud: PointCloud, m: int, rng: np.random.Generator) -> CenterSelection:
    """Uniform draw of ``m`` distinct point indices (all of them if m >= N)."""
    if len(cloud) == 0:
        raise ValueError("cannot sample from an empty cloud")
    if m < 1:
        raise ValueError("m must be >= 1")
    take = min(m, len(cloud))
    picks = rng.choice(len(cloud), size=take, replace=False).astype(np.int64)
    return CenterSelection("rps", take, point_indices=picks)


def fps(cloud: PointCloud, m: int, rng: np.random.Generator) -> CenterSelection:
    """Exact farthest point sampling, O(N*M).

    The seed point is drawn from ``rng``; every later pick maximizes the
    Euclidean distance to the already-selected set, ties broken by lowest
    point index (numpy argmax picks the first maximum).
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("cannot sample from an empty cloud")
    if m < 1:
        raise ValueError("m must be >= 1")
    take = min(m, n)
    picks = np.empty(take, dtype=np.int64)
    picks[0] = int(rng.integers(0, n))
    pos = cloud.positions
    d2 = np.sum((pos - pos[picks[0]]) ** 2, axis=1)
    d2[picks[0]] = -1.0  # exclude selected points from the argmax
    for i in range(1, take):
        nxt = int(np.argmax(d2))
        picks[i] = nxt
        d2 = np.minimum(d2, np.sum((pos - pos[nxt]) ** 2, axis=1))
        d2[nxt] = -1.0
    return CenterSelection("fps", take, point_indices=picks)


def rvs(index: VoxelPointIndex, m: int, rng: np.random.Generator) -> CenterSelection:
    """Uniform draw of ``m`` distinct occupied voxels."""
    return _draw_voxels(index, m, rng, "rvs")


def naive_grid(index: VoxelPointIndex, m: int, rng: np.random.Generator) -> CenterSelection:
    """Same uniform voxel draw as :func:`rvs`, but tagged so downstream
    node querying stays inside each center voxel's own bucket (no
    neighborhood reach, hence no spatial overlap between groups)."""
    return _draw_voxels(index, m, rng, "naive_grid")


def _draw_voxels(index: VoxelPointIndex, m: int, rng: np.random.Generator, tag: str) -> CenterSelection:
    if index.n_occupied == 0:
        raise ValueError("index has no occupied voxels")
    if m < 1:
        raise ValueError("m must be >= 1")
    take = min(m, index.n_occupied)
    ids = rng.choice(index.n_occupied, size=take, replace=False).astype(np.int64)
    return CenterSelection(tag, take, voxel_ids=ids, voxel_coords=index.coords[ids])


def coverage_state(
    index: VoxelPointIndex, voxel_ids: np.ndarray, r: int | None = None
) -> CoverageState:
    """From-scratch coverage recount for a set of incumbent voxel ids."""
    if r is None:
        r = index.config.neighborhood_radius
    nbm = index.neighbor_matrix(r)
    counts = np.zeros(index.n_occupied, dtype=np.int64)
    for vid in np.asarray(voxel_ids, dtype=np.int64):
        row = nbm[vid]
        counts[row[row >= 0]] += 1
    return CoverageState(index, r, counts, int(np.count_nonzero(counts)))


def _occupied_block(index: VoxelPointIndex, vid: int, r: int) -> np.ndarray:
    row = index.neighbor_matrix(r)[vid]
    return row[row >= 0]


def coverage_gain_if_added(
    index: VoxelPointIndex,
    state: CoverageState,
    challenger: VoxelCoord | int,
    beta: float = 0.0,
) -> float:
    """Heuristic score for adding a challenger voxel to the incumbents.

    Counts the occupied voxels of the challenger's block that no incumbent
    covers yet, minus ``beta`` times the mean incumbent-coverage of the
    block (the over-coverage penalty, normalized by the block's cell count
    excluding the center). Empty cells contribute nothing to either term.
    """
    vid = challenger if isinstance(challenger, (int, np.integer)) else index.voxel_id(challenger)
    block = _occupied_block(index, int(vid), state.r)
    c = state.counts[block]
    gain = float(np.count_nonzero(c == 0))
    if beta != 0.0:
        lam = (2 * state.r + 1) ** 3 - 1
        if lam > 0:
            gain -= beta * float(c.sum()) / lam
    return gain


def coverage_loss_if_removed(
    index: VoxelPointIndex, state: CoverageState, incumbent: VoxelCoord | int
) -> float:
    """Heuristic score for dropping an incumbent: the number of occupied
    voxels in its block that only this incumbent covers."""
    vid = incumbent if isinstance(incumbent, (int, np.integer)) else index.voxel_id(incumbent)
    block = _occupied_block(index, int(vid), state.r)
    return float(np.count_nonzero(state.counts[block] == 1))


def cas(
    index: VoxelPointIndex,
    m: int,
    beta: float,
    rng: np.random.Generator,
    r: int | None = None,
) -> CenterSelection:
    """Coverage-aware center voxel selection (greedy challenger pass)."""
    selection, _, _ = cas_with_trace(index, m, beta, rng, r)
    return selection


def cas_with_trace(
    index: VoxelPointIndex,
    m: int,
    beta: float,
    rng: np.random.Generator,
    r: int | None = None,
) -> tuple[CenterSelection, CoverageState, CasTrace]:
    """:func:`cas` plus the incrementally maintained coverage state and a
    record of every accepted swap's covered-count transition.

    Procedure: start from a uniform voxel draw, then walk all unpicked
    occupied voxels once in a shuffled order; each challenger challenges
    one uniformly drawn incumbent and replaces it iff its addition gain
    exceeds the incumbent's removal loss. Both heuristics are evaluated on
    the coverage state as of the challenge, and the state is updated
    incrementally on acceptance.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if r is None:
        r = index.config.neighborhood_radius
    init = rvs(index, m, rng)
    incumbents = init.voxel_ids.copy()
    state = coverage_state(index, incumbents, r)
    trace = CasTrace(initial_covered=state.covered_count)

    mask = np.ones(index.n_occupied, dtype=bool)
    mask[incumbents] = False
    challengers = rng.permutation(np.flatnonzero(mask))
    trace.challengers_seen = len(challengers)

    nbm = index.neighbor_matrix(r)
    counts = state.counts
    lam = (2 * r + 1) ** 3 - 1
    covered = state.covered_count
    for ch in challengers:
        slot = int(rng.integers(0, len(incumbents)))
        inc = incumbents[slot]
        ch_block = nbm[ch]
        ch_block = ch_block[ch_block >= 0]
        inc_block = nbm[inc]
        inc_block = inc_block[inc_block >= 0]
        c_ch = counts[ch_block]
        h_add = float(np.count_nonzero(c_ch == 0))
        if beta != 0.0 and lam > 0:
            h_add -= beta * float(c_ch.sum()) / lam
        h_rmv = float(np.count_nonzero(counts[inc_block] == 1))
        if h_add > h_rmv:
            before = covered
            covered += int(np.count_nonzero(counts[ch_block] == 0))
            counts[ch_block] += 1
            covered -= int(np.count_nonzero(counts[inc_block] == 1))
            counts[inc_block] -= 1
            incumbents[slot] = ch
            trace.swaps.append((before, covered))
    state.covered_count = covered
    selection = CenterSelection(
        "cas", len(incumbents), voxel_ids=incumbents, voxel_coords=index.coords[incumbents]
    )
    return selection, state, trace
