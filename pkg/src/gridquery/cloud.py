"""Core domain types: points, clouds, sampling configuration, RNG plumbing.

A cloud is stored struct-of-arrays (positions, coverage weights, optional
features) so the structuring hot paths stay vectorized. ``Point`` is a
convenience view over one row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "Point",
    "PointCloud",
    "SamplingConfig",
    "ValidationIssue",
    "ValidationReport",
    "validate_cloud",
    "validate_feature_table",
    "seeded_rng",
    "spawn_rngs",
]


@dataclass(frozen=True)
class Point:
    """One point: xyz position, coverage weight, optional feature vector."""

    position: np.ndarray
    coverage_weight: float = 1.0
    features: np.ndarray | None = None


@dataclass
class PointCloud:
    """An ordered, indexable point collection.

    Point order is significant: every index returned by the structuring
    operations refers back into these arrays.

    positions : (N, 3) float64
    weights   : (N,) float64, coverage weights (>= 1 for raw input points)
    features  : (N, F) float64 or None; either every point has an F-vector
                or no point has features
    """

    positions: np.ndarray
    weights: np.ndarray = None  # type: ignore[assignment]
    features: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        if self.weights is None:
            self.weights = np.ones(len(self.positions), dtype=np.float64)
        else:
            self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.positions),):
            raise ValueError("weights must be one scalar per point")
        if self.features is not None:
            self.features = np.ascontiguousarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or len(self.features) != len(self.positions):
                raise ValueError("features must be (N, F)")

    @property
    def n(self) -> int:
        return len(self.positions)

    def __len__(self) -> int:
        return len(self.positions)

    def point(self, i: int) -> Point:
        feats = None if self.features is None else self.features[i]
        return Point(self.positions[i], float(self.weights[i]), feats)

    def __iter__(self) -> Iterator[Point]:
        return (self.point(i) for i in range(len(self)))

    def subset(self, indices: np.ndarray) -> "PointCloud":
        """New cloud holding the given rows, in the given order."""
        idx = np.asarray(indices, dtype=np.intp)
        feats = None if self.features is None else self.features[idx]
        return PointCloud(self.positions[idx], self.weights[idx], feats)


@dataclass(frozen=True)
class SamplingConfig:
    """Parameters shared by the indexing/sampling/querying stages.

    voxel_size          : (vx, vy, vz), all > 0, in world units
    m                   : number of groups to sample
    k                   : node points per group
    n_v                 : per-voxel storage cap; defaults to ``k``
    neighborhood_radius : Chebyshev radius r; the neighborhood is the
                          (2r+1)^3 voxel block around a center
    beta                : over-coverage penalty used by coverage-aware
                          sampling (0 disables the penalty)
    seed                : RNG seed for every randomized stage
    short_group_policy  : "repeat" pads under-filled groups by cycling the
                          drawn indices; "reject" leaves them short
    """

    voxel_size: tuple[float, float, float]
    m: int
    k: int
    n_v: int | None = None
    neighborhood_radius: int = 1
    beta: float = 0.0
    seed: int = 0
    short_group_policy: str = "repeat"

    def __post_init__(self) -> None:
        vs = tuple(float(v) for v in np.atleast_1d(np.asarray(self.voxel_size, dtype=np.float64)).ravel())
        if len(vs) == 1:
            vs = (vs[0], vs[0], vs[0])
        if len(vs) != 3 or any(not np.isfinite(v) or v <= 0 for v in vs):
            raise ValueError(f"voxel_size must be 3 positive finite reals, got {self.voxel_size!r}")
        object.__setattr__(self, "voxel_size", vs)
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n_v is not None and self.n_v < 1:
            raise ValueError("n_v must be >= 1")
        if self.neighborhood_radius < 0:
            raise ValueError("neighborhood_radius must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.short_group_policy not in ("repeat", "reject"):
            raise ValueError("short_group_policy must be 'repeat' or 'reject'")

    @property
    def storage_cap(self) -> int:
        """Effective per-voxel cap: n_v, or k when n_v is unset."""
        return self.k if self.n_v is None else self.n_v

    @property
    def voxel_size_array(self) -> np.ndarray:
        return np.asarray(self.voxel_size, dtype=np.float64)


@dataclass(frozen=True)
class ValidationIssue:
    index: int | None
    kind: str
    detail: str

    def __str__(self) -> str:
        where = "cloud" if self.index is None else f"point {self.index}"
        return f"{where}: {self.kind}: {self.detail}"


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:
        return self.ok


def validate_cloud(cloud: PointCloud) -> ValidationReport:
    """Check every cloud invariant and report all violations.

    Checks, per point: finite coordinates, coverage weight >= 1, and
    feature presence/dimension consistent across the cloud. Never raises;
    the report lists one issue per violation with the offending index.
    """
    report = ValidationReport()
    if len(cloud) == 0:
        report.issues.append(ValidationIssue(None, "empty", "cloud has no points"))
        return report

    bad = np.flatnonzero(~np.isfinite(cloud.positions).all(axis=1))
    for i in bad:
        report.issues.append(
            ValidationIssue(int(i), "non-finite", f"position {cloud.positions[i]} has NaN/Inf")
        )

    light = np.flatnonzero(~(cloud.weights >= 1.0))
    for i in light:
        report.issues.append(
            ValidationIssue(int(i), "weight", f"coverage weight {cloud.weights[i]} < 1")
        )

    if cloud.features is not None:
        bad_feat = np.flatnonzero(~np.isfinite(cloud.features).all(axis=1))
        for i in bad_feat:
            report.issues.append(ValidationIssue(int(i), "non-finite", "feature vector has NaN/Inf"))
    return report


def validate_feature_table(features: Sequence[np.ndarray | None]) -> list[ValidationIssue]:
    """Report inconsistent per-point feature dimensions in a ragged table.

    Used when points arrive one at a time (file ingestion) before being
    packed into a dense array.
    """
    dims = {(-1 if f is None else len(f)) for f in features}
    if len(dims) <= 1:
        return []
    return [
        ValidationIssue(
            None,
            "inconsistent-features",
            f"points carry feature dims {sorted(d for d in dims if d >= 0)}"
            + (" and some carry none" if -1 in dims else ""),
        )
    ]


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic random stream: same seed, same draws, always.

    The returned generator supports uniform integer draws, permutations
    and choice without replacement; it is single-owner and must not be
    shared between concurrent tasks (see :func:`spawn_rngs`).
    """
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child streams from ``rng``.

    Children depend only on the parent's spawn history, not on how work is
    later scheduled, so parallel code that hands stream ``i`` to task ``i``
    produces the same output at any worker count.
    """
    return rng.spawn(n)
