"""Synthetic cloud generators for tests and benchmarks.

Three shapes: a uniform box (the boring baseline), gaussian clusters
(density imbalance: a few dense blobs), and a thin spherical shell (the
surface-like geometry where farthest-point picks gravitate to the rim).
"""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud, seeded_rng

__all__ = ["synth_cloud", "SYNTH_KINDS"]

SYNTH_KINDS = ("uniform", "gaussian_clusters", "sphere_surface")


def synth_cloud(kind: str, n: int, params: dict | None = None, seed: int = 0) -> PointCloud:
    """Deterministic synthetic cloud of ``n`` unit-weight points.

    kind="uniform":           params side (default 1.0); coords in [0, side)^3
    kind="gaussian_clusters": params clusters (8), spread (0.05), side (1.0);
                              cluster centers uniform in the box, points
                              normal around them
    kind="sphere_surface":    params radius (1.0); exact-radius shell
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    params = dict(params or {})
    rng = seeded_rng(seed)
    if kind == "uniform":
        side = float(params.pop("side", 1.0))
        _reject_extras(kind, params)
        if side <= 0:
            raise ValueError("side must be positive")
        pts = rng.random((n, 3)) * side
    elif kind == "gaussian_clusters":
        clusters = int(params.pop("clusters", 8))
        spread = float(params.pop("spread", 0.05))
        side = float(params.pop("side", 1.0))
        _reject_extras(kind, params)
        if clusters < 1:
            raise ValueError("clusters must be >= 1")
        if spread < 0 or side <= 0:
            raise ValueError("spread must be >= 0 and side > 0")
        centers = rng.random((clusters, 3)) * side
        owner = rng.integers(0, clusters, size=n)
        pts = centers[owner] + rng.normal(0.0, spread, size=(n, 3))
    elif kind == "sphere_surface":
        radius = float(params.pop("radius", 1.0))
        _reject_extras(kind, params)
        if radius <= 0:
            raise ValueError("radius must be positive")
        vec = rng.normal(size=(n, 3))
        norms = np.linalg.norm(vec, axis=1, keepdims=True)
        # A zero draw has measure zero but would divide by zero; redraw it.
        while np.any(norms == 0.0):
            bad = np.flatnonzero(norms[:, 0] == 0.0)
            vec[bad] = rng.normal(size=(len(bad), 3))
            norms = np.linalg.norm(vec, axis=1, keepdims=True)
        pts = vec / norms * radius
    else:
        raise ValueError(f"unknown kind {kind!r}; expected one of {SYNTH_KINDS}")
    return PointCloud(pts)


def _reject_extras(kind: str, params: dict) -> None:
    if params:
        raise ValueError(f"unknown params for {kind}: {sorted(params)}")
