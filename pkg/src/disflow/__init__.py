"""Fast dense optical flow by inverse patch search, multi-scale weighted
densification, and variational refinement; with stereo mode, flow chaining,
end-point-error evaluation, and Middlebury .flo / PNM file I/O."""

from .core import (
    DisParams,
    ImagePyramid,
    ParameterError,
    PyramidLevel,
    VarParams,
    bilinear_map,
    bilinear_sample,
    build_pyramid,
    coarsest_scale_for,
    image_gradients,
    upsample_flow,
)
from .densification import (
    PatchGrid,
    create_grid,
    densify,
    densify_bidirectional,
    init_patches,
    reset_outliers,
)
from .flowio import (
    FileFormatError,
    UNKNOWN_FLOW,
    flow_to_color,
    flow_valid_mask,
    read_flo,
    read_image,
    write_flo,
    write_image,
)
from .inverse_search import (
    PatchState,
    optimize_patch,
    precompute_patch,
    residual_transform,
)
from .metrics import EpeStats, endpoint_error, endpoint_error_map, error_threshold_curve
from .pipeline import (
    SparseMatch,
    compose_flows,
    dis_flow,
    dis_flow_on_pyramids,
    dis_stereo,
    sparse_correspondences,
    warmup,
)
from .variational import DataTensors, compute_tensors, refine

__version__ = "0.1.0"

__all__ = [
    "DisParams",
    "VarParams",
    "ParameterError",
    "ImagePyramid",
    "PyramidLevel",
    "PatchGrid",
    "PatchState",
    "EpeStats",
    "DataTensors",
    "SparseMatch",
    "FileFormatError",
    "UNKNOWN_FLOW",
    "build_pyramid",
    "coarsest_scale_for",
    "image_gradients",
    "bilinear_sample",
    "bilinear_map",
    "upsample_flow",
    "create_grid",
    "init_patches",
    "reset_outliers",
    "densify",
    "densify_bidirectional",
    "precompute_patch",
    "optimize_patch",
    "residual_transform",
    "compute_tensors",
    "refine",
    "dis_flow",
    "dis_flow_on_pyramids",
    "dis_stereo",
    "sparse_correspondences",
    "compose_flows",
    "warmup",
    "endpoint_error",
    "endpoint_error_map",
    "error_threshold_curve",
    "read_image",
    "write_image",
    "read_flo",
    "write_flo",
    "flow_to_color",
    "flow_valid_mask",
]
