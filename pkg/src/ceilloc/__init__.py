"""Pose refinement for coarse place recognition using ceiling-camera
homographies.

The package refines a coarse localisation match by estimating the planar
homography between a ceiling-facing query image and pose-annotated reference
images, converting it to a metric pose correction, and falling back to the
coarse pose whenever the refinement is not trustworthy.
"""

from .config import FilterConfig, PipelineConfig, RansacConfig, parse_config, write_config
from .homest import (
    Intrinsics,
    PoseDelta,
    RansacResult,
    ScaleEstimate,
    decompose,
    dlt,
    estimate_scale,
    ransac_homography,
    select_physical,
)
from .matcher import FlowVector, MatchConfig, match_all, match_point
from .pipeline import (
    ErrorReport,
    LocalisationOutput,
    evaluate,
    evaluate_coarse,
    refine_one,
    refine_traverse,
)
from .refdb import (
    ConfusionMatrix,
    Pose2,
    RefDatabase,
    RefEntry,
    best_match,
    load_database,
    lookup_ceiling,
    neighbors,
)
from .sampler import SamplePoint, SelectConfig, select_greedy, select_grid, suppress

__version__ = "0.1.0"
