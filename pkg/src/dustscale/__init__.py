"""Raster downscaling pipeline around a pluggable predictor.

Regridding, leakage-safe seasonal splitting, patch extraction, halo+Hann
stitching, Wasserstein domain-similarity diagnostics, semivariogram and
temporal-structure evaluation, and autoregressive rollout.
"""

__version__ = "0.1.0"

from .raster import (  # noqa: F401
    DEFAULT_FLOOR_EPS,
    FieldStack,
    Grid,
    Space,
    StandardizationParams,
    StaticField,
    daterange,
    fit_standardizer,
    from_log10,
    load_field,
    load_stack,
    save_field,
    save_stack,
    standardize,
    to_log10,
)
from .regrid import (  # noqa: F401
    RegridPlan,
    bicubic_regrid,
    block_average,
    make_bicubic_plan,
    regrid_field,
    regrid_stack,
)
from .pipeline import (  # noqa: F401
    Patch,
    PatchSpec,
    SeasonWindow,
    SplitAssignment,
    build_season_windows,
    extract_patches,
    group_by_day,
    patch_origins,
    season_index,
    season_of,
    temporal_split,
)
from .stitch import (  # noqa: F401
    HaloRule,
    StitchAccumulator,
    accumulate,
    core_region,
    finalize,
    stitch_patches,
    taper_weights,
)
from .similarity import (  # noqa: F401
    JointNormBounds,
    WdReport,
    joint_normalize,
    wasserstein_exact,
    wasserstein_hist,
    wd_report,
)
from .diagnostics import (  # noqa: F401
    AcfPacf,
    LagCurve,
    MetricsReport,
    PairSample,
    SphericalFit,
    VariogramEstimate,
    acf_pacf,
    all_pairs,
    day_metrics,
    empirical_variogram,
    eval_metrics,
    fit_spherical,
    haversine_km,
    lag_metrics,
    regional_mean_series,
    sample_pairs,
    spherical_model,
    stack_variogram,
    variogram_bins,
)
from .predictor import (  # noqa: F401
    PredictorInput,
    PredictorSpec,
    RolloutState,
    StaticFields,
    fit_ridge_patch,
    predict_day,
    rollout,
    soft_clip,
)
from .demo import make_world, run_demo  # noqa: F401
