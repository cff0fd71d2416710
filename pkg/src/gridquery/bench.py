"""Coverage and latency measurement across method combinations.

The headline metric is occupied-space coverage: of all voxels the input
cloud occupies, the fraction touched by the queried node points. The
sweep driver runs (sampler, querier) pairs over a grid of problem sizes,
records median latency over repetitions, and fits log-log scaling slopes.

Latency attribution: a combination pays for exactly what it uses. The
pipeline builds the voxel index inside the timed region only for
index-based methods, while baseline combinations time their full scans.
Absolute numbers are machine-bound; orderings and slopes are the stable
signal.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np
from scipy import stats

from .cloud import PointCloud, SamplingConfig, seeded_rng
from .pipeline import GroupingOutput, cagq
from .sampling import VOXEL_METHODS
from .synth import synth_cloud
from .voxelgrid import quantize_points

__all__ = [
    "BenchRecord",
    "CSV_HEADER",
    "occupied_space_coverage",
    "default_voxel_size",
    "run_sweep",
    "scaling_fit",
    "ScalingFit",
    "records_to_csv",
    "format_table",
    "table2_grid",
    "TABLE2_METHODS",
    "time_median_ns",
    "cloud_source_from_kind",
]

CSV_HEADER = "sampler,querier,N,M,K,coverage_pct,latency_ns,reps,seed"

# Condition grid (N, K, M) for the standard 12-row comparison.
_TABLE2_CELLS = (
    (1024, 8, 8),
    (1024, 8, 128),
    (1024, 128, 32),
    (1024, 128, 128),
    (8192, 8, 64),
    (8192, 8, 1024),
    (8192, 128, 256),
    (8192, 128, 1024),
    (81920, 32, 1024),
    (81920, 32, 10240),
    (81920, 128, 1024),
    (81920, 128, 10240),
)

TABLE2_METHODS = (
    ("rps", "ball"),
    ("fps", "ball"),
    ("rvs", "cube"),
    ("cas", "cube"),
    ("rps", "knn"),
    ("fps", "knn"),
    ("rvs", "layered_knn"),
    ("cas", "layered_knn"),
)


def table2_grid() -> list[tuple[int, int, int]]:
    """The 12 standard (N, M, K) conditions, in report row order."""
    return [(n, m, k) for n, k, m in _TABLE2_CELLS]


@dataclass
class BenchRecord:
    """One sweep cell: a method pair at one problem size.

    ``latency_ns`` is the median over ``reps`` timed runs;
    ``coverage_pct`` the mean. ``includes_build`` and ``latency_tainted``
    are instrumentation flags and stay out of the CSV schema.
    """

    sampler: str
    querier: str
    n: int
    m: int
    k: int
    coverage_pct: float
    latency_ns: int
    reps: int
    seed: int
    includes_build: bool = False
    latency_tainted: bool = False

    def csv_row(self) -> str:
        return (
            f"{self.sampler},{self.querier},{self.n},{self.m},{self.k},"
            f"{self.coverage_pct:.4f},{self.latency_ns},{self.reps},{self.seed}"
        )


def occupied_space_coverage(original: PointCloud, groups: GroupingOutput, voxel_size) -> float:
    """Percentage of the original cloud's occupied voxels touched by the
    groups' node points, at the given voxel size."""
    if len(original) == 0:
        raise ValueError("empty original cloud")
    denom_vox = quantize_points(original.positions, voxel_size)
    denom = len(np.unique(denom_vox, axis=0))
    node_idx = np.concatenate([g.nodes.node_indices for g in groups.groups])
    touched = quantize_points(original.positions[node_idx], voxel_size)
    num = len(np.unique(touched, axis=0))
    return 100.0 * num / denom


def default_voxel_size(cloud: PointCloud, grid_res: int = 32) -> tuple[float, float, float]:
    """Cube voxels sized so the bounding box's longest edge spans
    ``grid_res`` cells."""
    extent = cloud.positions.max(axis=0) - cloud.positions.min(axis=0)
    longest = float(extent.max())
    if longest <= 0:
        longest = 1.0
    edge = longest / grid_res
    return (edge, edge, edge)


def time_median_ns(fn: Callable[[], object], reps: int, warmup: int = 2) -> tuple[int, list[object]]:
    """Median wall time of ``fn`` over ``reps`` runs after warmup, on the
    monotonic clock. Returns (median_ns, per-rep results)."""
    for _ in range(warmup):
        fn()
    times = []
    results = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        results.append(fn())
        times.append(time.perf_counter_ns() - t0)
    return int(np.median(times)), results


def cloud_source_from_kind(kind: str, params: dict | None = None) -> Callable[[int, int], PointCloud]:
    """Adapter: a synth kind as a (n, seed) -> cloud source."""
    return lambda n, seed: synth_cloud(kind, n, params, seed)


def _materialize(cloud_source, n: int, seed: int) -> PointCloud:
    if isinstance(cloud_source, PointCloud):
        if len(cloud_source) < n:
            raise ValueError(f"source cloud has {len(cloud_source)} points, cell needs {n}")
        if len(cloud_source) == n:
            return cloud_source
        picks = seeded_rng(seed).choice(len(cloud_source), size=n, replace=False)
        return cloud_source.subset(np.sort(picks))
    return cloud_source(n, seed)


def run_sweep(
    cloud_source,
    grid: Sequence[tuple[int, int, int]],
    methods: Sequence[tuple[str, str]],
    reps: int = 5,
    seed: int = 0,
    voxel_size=None,
    grid_res: int = 32,
    warmup: int = 2,
    n_v: int | None = None,
    parallel: bool = False,
    on_warning: Callable[[str], None] | None = None,
) -> list[BenchRecord]:
    """Run every (N, M, K) x (sampler, querier) combination.

    ``cloud_source`` is either a PointCloud (uniformly subsampled down to
    each cell's N; smaller sources are an error) or a callable
    ``(n, seed) -> PointCloud``. Unsatisfiable cells are skipped with a
    warning. Voxel size defaults to a cube grid over the cell cloud's
    bounding box (``grid_res`` cells along the longest edge).

    Cells run sequentially for clean timing; ``parallel=True`` runs them
    concurrently and marks every latency as contention-tainted.
    """
    if reps < 3:
        raise ValueError("reps must be >= 3")
    master = seeded_rng(seed)
    jobs = []
    for cell_i, (n, m, k) in enumerate(grid):
        if n < 1 or m < 1 or k < 1:
            if on_warning:
                on_warning(f"skipping unsatisfiable cell N={n} M={m} K={k}")
            continue
        cloud_seed = int(master.integers(2**63))
        rep_seeds = [
            [int(master.integers(2**63)) for _ in range(reps)] for _ in range(len(methods))
        ]
        jobs.append((cell_i, n, m, k, cloud_seed, rep_seeds))

    def run_cell(job) -> list[BenchRecord]:
        _, n, m, k, cloud_seed, rep_seeds = job
        cloud = _materialize(cloud_source, n, cloud_seed)
        vs = voxel_size if voxel_size is not None else default_voxel_size(cloud, grid_res)
        out: list[BenchRecord] = []
        for mi, (sampler, querier) in enumerate(methods):
            config = SamplingConfig(voxel_size=vs, m=m, k=k, n_v=n_v)
            coverages = []
            times = []
            for ri in range(reps):
                run_seed = rep_seeds[mi][ri]
                for _ in range(warmup if ri == 0 else 0):
                    cagq(cloud, config, sampler, querier, seeded_rng(run_seed))
                t0 = time.perf_counter_ns()
                result = cagq(cloud, config, sampler, querier, seeded_rng(run_seed))
                times.append(time.perf_counter_ns() - t0)
                coverages.append(occupied_space_coverage(cloud, result, vs))
            out.append(
                BenchRecord(
                    sampler,
                    querier,
                    n,
                    m,
                    k,
                    float(np.mean(coverages)),
                    int(np.median(times)),
                    reps,
                    seed,
                    includes_build=(sampler in VOXEL_METHODS or querier in ("cube", "layered_knn", "voxel")),
                    latency_tainted=parallel,
                )
            )
        return out

    if parallel and len(jobs) > 1:
        with ThreadPoolExecutor() as pool:
            nested = list(pool.map(run_cell, jobs))
    else:
        nested = [run_cell(j) for j in jobs]
    return [rec for cell in nested for rec in cell]


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    n_points: int


def scaling_fit(records: Iterable[BenchRecord], axis: str) -> ScalingFit:
    """OLS fit of log(latency) against log(axis) with a 95% CI on the
    slope. Needs >= 4 distinct axis values spanning at least 16x."""
    attr = {"N": "n", "M": "m", "K": "k"}.get(axis)
    if attr is None:
        raise ValueError("axis must be 'N', 'M' or 'K'")
    xs = np.array([getattr(r, attr) for r in records], dtype=np.float64)
    ys = np.array([r.latency_ns for r in records], dtype=np.float64)
    distinct = np.unique(xs)
    if len(distinct) < 4:
        raise ValueError(f"need >= 4 distinct {axis} values, got {len(distinct)}")
    if distinct.max() / distinct.min() < 16:
        raise ValueError(f"{axis} span must be >= 16x, got {distinct.max() / distinct.min():.1f}x")
    fit = stats.linregress(np.log(xs), np.log(ys))
    t_crit = stats.t.ppf(0.975, len(xs) - 2)
    return ScalingFit(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        ci_low=float(fit.slope - t_crit * fit.stderr),
        ci_high=float(fit.slope + t_crit * fit.stderr),
        n_points=len(xs),
    )


def records_to_csv(records: Iterable[BenchRecord], sink: str | Path | TextIO | None = None) -> str:
    """Serialize records to the pinned CSV schema (UTF-8, LF)."""
    text = CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in records)
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    elif sink is not None:
        sink.write(text)
    return text


def format_table(records: Sequence[BenchRecord]) -> str:
    """Aligned two-section report: a coverage block then a latency block,
    one row per (N, K, M) condition and one column per method pair."""
    combos: list[tuple[str, str]] = []
    cells: list[tuple[int, int, int]] = []
    for r in records:
        if (r.sampler, r.querier) not in combos:
            combos.append((r.sampler, r.querier))
        if (r.n, r.k, r.m) not in cells:
            cells.append((r.n, r.k, r.m))
    by_key = {((r.n, r.k, r.m), (r.sampler, r.querier)): r for r in records}

    def block(title: str, fmt: Callable[[BenchRecord], str]) -> list[str]:
        head = f"{'N':>8} {'K':>5} {'M':>7} | " + " ".join(
            f"{s}+{q}".rjust(16) for s, q in combos
        )
        lines = [title, "-" * len(head), head, "-" * len(head)]
        for cell in cells:
            row = f"{cell[0]:>8} {cell[1]:>5} {cell[2]:>7} | "
            row += " ".join(
                (fmt(by_key[(cell, combo)]) if (cell, combo) in by_key else "-").rjust(16)
                for combo in combos
            )
            lines.append(row)
        return lines

    out = block("Occupied space coverage (%)", lambda r: f"{r.coverage_pct:.1f}")
    out.append("")
    out += block("Latency (ms, median)", lambda r: f"{r.latency_ns / 1e6:.2f}")
    return "\n".join(out) + "\n"
