"""Voxel-point index: spatial hash from integer voxel coordinates to points.

Points are quantized by componentwise floor of ``position / voxel_size``.
Each occupied voxel stores up to ``n_v`` point indices; when more points
land in a voxel, the stored subset is chosen by reservoir sampling so it
is a uniform sample of the voxel's points (a config-visible policy; the
per-voxel arrival total is kept regardless).

Only occupied voxels exist in the map, so extents are unbounded and
negative coordinates are legal. Internally occupied voxels get dense ids
``0..V-1`` in lexicographic coordinate order, which keeps neighborhood
resolution and coverage bookkeeping vectorizable.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, SamplingConfig

__all__ = [
    "VoxelCoord",
    "quantize",
    "quantize_points",
    "VoxelPointIndex",
    "Neighborhood",
    "build_index",
    "neighborhood",
    "neighborhood_layers",
    "chebyshev_offsets",
]

VoxelCoord = tuple[int, int, int]


def quantize(position, voxel_size) -> VoxelCoord:
    """Map one position to its voxel coordinate (floor, not truncation)."""
    pos = np.asarray(position, dtype=np.float64)
    vs = np.asarray(voxel_size, dtype=np.float64)
    if not np.all(np.isfinite(pos)):
        raise ValueError(f"non-finite position {pos}")
    if not np.all(vs > 0):
        raise ValueError(f"voxel_size must be positive, got {vs}")
    q = np.floor(pos / vs).astype(np.int64)
    return (int(q[0]), int(q[1]), int(q[2]))


def quantize_points(positions: np.ndarray, voxel_size) -> np.ndarray:
    """Vectorized :func:`quantize`: (N, 3) positions to (N, 3) int64 coords."""
    pos = np.asarray(positions, dtype=np.float64)
    vs = np.asarray(voxel_size, dtype=np.float64)
    if not np.all(np.isfinite(pos)):
        raise ValueError("non-finite position in input")
    return np.floor(pos / vs).astype(np.int64)


def chebyshev_offsets(r: int) -> np.ndarray:
    """All ((2r+1)^3, 3) integer offsets with max-norm <= r, in
    lexicographic (du, dv, dw) order."""
    span = np.arange(-r, r + 1, dtype=np.int64)
    grid = np.meshgrid(span, span, span, indexing="ij")
    return np.stack(grid, axis=-1).reshape(-1, 3)


class VoxelPointIndex:
    """Immutable voxel-to-points map plus the occupied-voxel set.

    Attributes
    ----------
    coords : (V, 3) int64, occupied voxel coordinates, lexicographically
        sorted; row ``i`` is voxel id ``i``.
    per_voxel_total : (V,) int64, total arrivals per voxel including
        points dropped by the storage cap.
    config : the SamplingConfig the index was built with.
    """

    def __init__(
        self,
        coords: np.ndarray,
        stored: np.ndarray,
        stored_ptr: np.ndarray,
        per_voxel_total: np.ndarray,
        config: SamplingConfig,
        positions: np.ndarray,
    ):
        self.coords = coords
        self._stored = stored
        self._stored_ptr = stored_ptr
        self.per_voxel_total = per_voxel_total
        self.config = config
        self.positions = positions  # read-only view of the source cloud
        self.n_points = len(positions)
        self._id_by_coord: dict[VoxelCoord, int] = {
            (int(u), int(v), int(w)): i for i, (u, v, w) in enumerate(coords)
        }
        self._neighbor_cache: dict[int, np.ndarray] = {}

    @property
    def n_occupied(self) -> int:
        return len(self.coords)

    @property
    def occupied(self):
        """Set-like view of the occupied voxel coordinates."""
        return self._id_by_coord.keys()

    def __contains__(self, coord: VoxelCoord) -> bool:
        return tuple(coord) in self._id_by_coord

    def voxel_id(self, coord: VoxelCoord) -> int:
        try:
            return self._id_by_coord[tuple(coord)]
        except KeyError:
            raise KeyError(f"voxel {tuple(coord)} is not occupied") from None

    def coord_of(self, vid: int) -> VoxelCoord:
        u, v, w = self.coords[vid]
        return (int(u), int(v), int(w))

    def bucket(self, coord: VoxelCoord) -> np.ndarray:
        """Stored point indices of an occupied voxel (length 1..n_v)."""
        return self.bucket_by_id(self.voxel_id(coord))

    def bucket_by_id(self, vid: int) -> np.ndarray:
        return self._stored[self._stored_ptr[vid] : self._stored_ptr[vid + 1]]

    def total(self, coord: VoxelCoord) -> int:
        return int(self.per_voxel_total[self.voxel_id(coord)])

    @property
    def stored_counts(self) -> np.ndarray:
        return np.diff(self._stored_ptr)

    def neighbor_id_of(self, vid: int, offset: np.ndarray) -> int:
        """Voxel id at coords[vid] + offset, or -1 when absent."""
        u, v, w = self.coords[vid] + offset
        return self._id_by_coord.get((int(u), int(v), int(w)), -1)

    def neighbor_matrix(self, r: int) -> np.ndarray:
        """(V, (2r+1)^3) int64: occupied-neighbor voxel ids, -1 where the
        cell at that offset is empty. Columns follow the lexicographic
        offset order of :func:`chebyshev_offsets`. Cached per radius."""
        if r not in self._neighbor_cache:
            self._neighbor_cache[r] = self._build_neighbor_matrix(r)
        return self._neighbor_cache[r]

    def _build_neighbor_matrix(self, r: int) -> np.ndarray:
        offsets = chebyshev_offsets(r)
        n_cells = len(offsets)
        v = self.n_occupied
        if v == 0:
            return np.empty((0, n_cells), dtype=np.int64)
        mins = self.coords.min(axis=0)
        dims = self.coords.max(axis=0) - mins + 1
        # Linearized lookup needs the grid volume to fit in int64.
        if int(np.prod(dims.astype(object))) >= 2**62:
            return self._build_neighbor_matrix_hashed(offsets)
        occ_linear = np.ravel_multi_index((self.coords - mins).T, dims)
        out = np.empty((v, n_cells), dtype=np.int64)
        chunk = max(1, min(v, 2**22 // n_cells + 1))
        for lo in range(0, v, chunk):
            hi = min(v, lo + chunk)
            nb = self.coords[lo:hi, None, :] + offsets[None, :, :]
            in_bounds = np.all((nb >= mins) & (nb <= mins + dims - 1), axis=2)
            shifted = np.where(in_bounds[..., None], nb - mins, 0)
            lin = np.ravel_multi_index(
                (shifted[..., 0], shifted[..., 1], shifted[..., 2]), dims
            )
            pos = np.searchsorted(occ_linear, lin)
            pos[pos >= v] = v - 1
            found = in_bounds & (occ_linear[pos] == lin)
            out[lo:hi] = np.where(found, pos, -1)
        return out

    def _build_neighbor_matrix_hashed(self, offsets: np.ndarray) -> np.ndarray:
        out = np.full((self.n_occupied, len(offsets)), -1, dtype=np.int64)
        for i in range(self.n_occupied):
            base = self.coords[i]
            for j, off in enumerate(offsets):
                key = (int(base[0] + off[0]), int(base[1] + off[1]), int(base[2] + off[2]))
                out[i, j] = self._id_by_coord.get(key, -1)
        return out


@dataclass
class Neighborhood:
    """Occupied voxels within Chebyshev radius r of a center (center
    included) and the concatenation of their stored points."""

    center: VoxelCoord
    occupied_neighbors: list[VoxelCoord]
    context_point_indices: np.ndarray


def build_index(
    cloud: PointCloud,
    config: SamplingConfig,
    rng: np.random.Generator,
    workers: int = 1,
) -> VoxelPointIndex:
    """One-pass build of the voxel-point index.

    Quantizes every point, collects the occupied set, and keeps at most
    ``config.storage_cap`` point indices per voxel (reservoir policy, so
    the kept subset is a uniform sample of each voxel's arrivals). The
    result is identical for any ``workers`` count and a fixed rng state:
    parallelism only chunks the quantization pass, and the cap is applied
    voxel-by-voxel in deterministic id order afterwards.
    """
    if len(cloud) == 0:
        raise ValueError("cannot index an empty cloud")
    vs = config.voxel_size_array
    if workers > 1 and len(cloud) >= 4 * workers:
        bounds = np.linspace(0, len(cloud), workers + 1, dtype=np.intp)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    lambda se: quantize_points(cloud.positions[se[0] : se[1]], vs),
                    zip(bounds[:-1], bounds[1:]),
                )
            )
        vox = np.vstack(parts)
    else:
        vox = quantize_points(cloud.positions, vs)

    # Stable group-by voxel: within a voxel, points keep arrival order.
    order = np.lexsort((vox[:, 2], vox[:, 1], vox[:, 0]))
    sorted_vox = vox[order]
    if len(order) == 1:
        starts = np.array([0], dtype=np.intp)
    else:
        change = np.any(sorted_vox[1:] != sorted_vox[:-1], axis=1)
        starts = np.concatenate([[0], np.flatnonzero(change) + 1]).astype(np.intp)
    counts = np.diff(np.concatenate([starts, [len(order)]])).astype(np.int64)
    coords = np.ascontiguousarray(sorted_vox[starts])

    cap = config.storage_cap
    kept = np.minimum(counts, cap)
    stored_ptr = np.concatenate([[0], np.cumsum(kept)]).astype(np.int64)
    stored = np.empty(int(stored_ptr[-1]), dtype=np.int64)
    order64 = order.astype(np.int64)
    for i in range(len(coords)):
        arrivals = order64[starts[i] : starts[i] + counts[i]]
        if counts[i] <= cap:
            stored[stored_ptr[i] : stored_ptr[i + 1]] = arrivals
        else:
            res = arrivals[:cap].copy()
            draws = rng.integers(0, np.arange(cap + 1, counts[i] + 1))
            for t, j in enumerate(draws):
                if j < cap:
                    res[j] = arrivals[cap + t]
            stored[stored_ptr[i] : stored_ptr[i + 1]] = res
    return VoxelPointIndex(coords, stored, stored_ptr, counts, config, cloud.positions)


def neighborhood(index: VoxelPointIndex, center: VoxelCoord, r: int | None = None) -> Neighborhood:
    """Occupied voxels of the (2r+1)^3 block around ``center`` plus their
    stored points, concatenated in lexicographic offset order.

    ``center`` must be occupied; anything else is a caller bug.
    """
    if r is None:
        r = index.config.neighborhood_radius
    cid = _require_occupied(index, center)
    vids = _block_ids(index, cid, r)
    neighbors = [index.coord_of(v) for v in vids]
    if vids:
        context = np.concatenate([index.bucket_by_id(v) for v in vids])
    else:
        context = np.empty(0, dtype=np.int64)
    return Neighborhood(tuple(center), neighbors, context)


def neighborhood_layers(
    index: VoxelPointIndex, center: VoxelCoord, r: int | None = None
) -> list[np.ndarray]:
    """Stored points of the block around ``center`` split by Chebyshev
    shell: element L holds the points of occupied voxels at shell
    distance exactly L. Shells partition the neighborhood context set."""
    if r is None:
        r = index.config.neighborhood_radius
    cid = _require_occupied(index, center)
    offsets = chebyshev_offsets(r)
    shell_of = np.abs(offsets).max(axis=1)
    vids = _block_ids_per_offset(index, cid, offsets)
    layers = []
    for level in range(r + 1):
        cols = np.flatnonzero(shell_of == level)
        parts = [index.bucket_by_id(vids[j]) for j in cols if vids[j] >= 0]
        layers.append(np.concatenate(parts) if parts else np.empty(0, dtype=np.int64))
    return layers


def _require_occupied(index: VoxelPointIndex, center: VoxelCoord) -> int:
    try:
        return index.voxel_id(center)
    except KeyError:
        raise ValueError(f"center voxel {tuple(center)} is not occupied") from None


def _block_ids_per_offset(index: VoxelPointIndex, cid: int, offsets: np.ndarray) -> np.ndarray:
    r = int(np.abs(offsets).max()) if len(offsets) else 0
    if r in index._neighbor_cache:
        return index._neighbor_cache[r][cid]
    base = index.coords[cid]
    out = np.empty(len(offsets), dtype=np.int64)
    for j, off in enumerate(offsets):
        key = (int(base[0] + off[0]), int(base[1] + off[1]), int(base[2] + off[2]))
        out[j] = index._id_by_coord.get(key, -1)
    return out


def _block_ids(index: VoxelPointIndex, cid: int, r: int) -> list[int]:
    per_offset = _block_ids_per_offset(index, cid, chebyshev_offsets(r))
    return [int(v) for v in per_offset if v >= 0]
