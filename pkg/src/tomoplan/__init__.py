"""tomoplan: multi-layer tomogram maps and 3D navigation on point clouds."""

from .cloud_io import CloudFormatError, FORMATS, PointCloud, load_cloud, save_cloud
from .config import ConfigError, PipelineConfig, load_config
from .planner import (
    NoPathError,
    PathResult,
    PlanningError,
    SnapError,
    build_reference_graph,
    plan_path,
)
from .scenes import SCENE_KINDS, SceneSpec, generate_scene, spiral_ground_levels
from .simplify import simplify_tomogram, unique_cells
from .tomogram import (
    GridSizeError,
    Layer,
    Tomogram,
    TomogramSlice,
    build_tomogram,
    load_tomogram,
    rasterize_index,
    save_tomogram,
)
from .trajectory import (
    DegeneratePathError,
    InfeasibleTrajectoryError,
    InvalidRegionError,
    OptConfig,
    Trajectory,
    TrajectoryPiece,
    optimize_trajectory,
    query_elevation_bilinear,
    sample_trajectory,
)
from .traversability import (
    InflationKernel,
    TravParams,
    build_kernel,
    evaluate_tomogram,
    fuse_costs,
    ground_cost,
    inflate,
    interval_cost,
)

__version__ = "0.1.0"
