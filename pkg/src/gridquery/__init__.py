"""gridquery: voxel-grid point cloud structuring and benchmarking.

Builds a voxel-point index over a cloud, samples group centers (random or
coverage-aware, over points or occupied voxels), queries node points per
center (ball/cube/k-NN, with a shell-layered fast path), synthesizes
weighted group centers, and measures occupied-space coverage and latency
across problem scales. A pure-numpy reference forward pass for grid
context aggregation is included for verification work.
"""

from .cloud import (
    Point,
    PointCloud,
    SamplingConfig,
    ValidationIssue,
    ValidationReport,
    seeded_rng,
    spawn_rngs,
    validate_cloud,
)
from .voxelgrid import (
    Neighborhood,
    VoxelCoord,
    VoxelPointIndex,
    build_index,
    chebyshev_offsets,
    neighborhood,
    neighborhood_layers,
    quantize,
    quantize_points,
)
from .sampling import (
    CasTrace,
    CenterSelection,
    CoverageState,
    cas,
    cas_with_trace,
    coverage_gain_if_added,
    coverage_loss_if_removed,
    coverage_state,
    fps,
    naive_grid,
    rps,
    rvs,
)
from .query import (
    QueryResult,
    ball_query,
    ball_radius_half_diagonal,
    ball_radius_matching_voxel_volume,
    cube_query,
    knn_bruteforce,
    knn_layered,
    voxel_query,
)
from .pipeline import (
    GroupingOutput,
    PointGroup,
    cagq,
    chain,
    group_center,
    parse_groups,
    serialize_groups,
    write_groups,
)
from .synth import synth_cloud
from .gca import (
    GcaConfig,
    MlpSpec,
    edge_attention,
    finite_diff_check,
    gca_forward,
    grid_context_pool,
    load_gca_config,
    save_gca_config,
    seeded_gca_config,
    seeded_mlp,
)
from .bench import (
    BenchRecord,
    occupied_space_coverage,
    records_to_csv,
    run_sweep,
    scaling_fit,
    table2_grid,
)
from .io import (
    PointFileError,
    load_cloud,
    load_cloud_ascii,
    load_cloud_binary,
    save_cloud_ascii,
    save_cloud_binary,
)

__version__ = "0.1.0"
