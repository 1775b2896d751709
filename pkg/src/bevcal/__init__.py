"""bevcal: calibrated object-level uncertainty from BEV occupancy grids."""

from .calibrate import (
    BetaMap,
    IsotonicMap,
    QuantileMap,
    calibrate_grid,
    fit_beta,
    fit_isotonic,
    fit_quantile_map,
    load_map,
    save_map,
)
from .core import (
    AnnotatedObject,
    AnnotationMask,
    DetectedObject,
    FrameRecord,
    Gaussian2D,
    GridMeta,
    ProbGrid,
    SplitAssignment,
    ValidationError,
    assign_splits,
)
from .evaluate import (
    RegressionCurve,
    ReliabilityReport,
    compute_regression_curve,
    compute_reliability,
    ks_uniform_statistic,
)
from .extract import ExtractionConfig, SamplePoints, build_sample_points, extract_objects, fit_gmm, seed_clusters
from .grid_io import GridFormatError, GridLengthError, read_grid_file, write_grid_file
from .kernels import backend_name
from .matching import MatchResult, area_labels, match_frame, presence_labels
from .pipeline import RunConfig, run_pipeline
from .synth import DistortionSpec, SynthConfig, SynthObject, generate_dataset, oracle_presence, render_frame
from .uncertainty import (
    LocationQuantiles,
    PresenceConfig,
    RegionSpec,
    ellipse_cells,
    location_quantiles,
    mahalanobis_threshold,
    presence_probability,
    undetected_area_probability,
)

__version__ = "0.1.0"
