"""Flow-density fundamental diagram analysis for smart motorways."""

__version__ = "0.1.0"

from .models import (  # noqa: F401
    DataSummary,
    FdModelKind,
    FdModelParams,
    PARAM_NAMES,
    default_bounds,
    flux,
    validate,
)
from .traffic import (  # noqa: F401
    EventCategory,
    EventRecord,
    FlowDensityPoint,
    Link,
    LinkSeries,
    Observation,
    PointScales,
    SignReading,
    SpeedLimit,
    compute_density,
    count_events,
    derive_points,
    resolve_speed_limit,
    scale_points,
    segment_by_limit,
)
from .dataio import IngestError, IngestResult, ingest, read_dataset, write_dataset  # noqa: F401
from .kde import (  # noqa: F401
    BandwidthMatrix,
    DensityGrid,
    KdeModel,
    evaluate,
    evaluate_grid,
    find_modes,
    integrated_squared_error,
    rule_of_thumb_bandwidth,
)
from .fitting import (  # noqa: F401
    FitConfig,
    FitError,
    FitResult,
    compare_models,
    fit,
    fit_segmented,
    goodness,
)
from .medoids import (  # noqa: F401
    ClaraConfig,
    MedoidResult,
    ModeTrajectory,
    clara,
    distance_distribution,
    exact_kmedoids,
    mode_trajectory,
)
from .hac import (  # noqa: F401
    ClusterSummary,
    Dendrogram,
    ParameterVector,
    cut,
    hac_ward,
    rescale_parameter_vectors,
    summarize,
)
from .synth import LinkSynthSpec, SynthSpec, build_series, generate, generate_segmented  # noqa: F401
