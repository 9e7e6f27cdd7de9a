"""Storm-to-employment panel analytics.

Links tropical-cyclone tracks and gridded precipitation to county-level
employment series, then provides hazard-conditioned composites, two-way
fixed-effects and event-study DiD estimation, PCA pattern extraction, and
MLR / random-forest predictive modeling with hazard-scaling scenarios.
"""

from .econometrics import (
    DidResult,
    FixedEffectsFit,
    PanelDesign,
    build_panel_design,
    did_event_study,
    fit_fixed_effects,
    within_transform,
)
from .hazard import (
    Incident,
    attach_precip,
    haversine_km,
    mask_overland,
    match_incidents,
    read_incidents,
    translation_speed,
    write_incidents,
)
from .ingest import (
    CovariatePanel,
    EmploymentPanel,
    Entity,
    EntityRegistry,
    LandMask,
    PrecipGrid,
    SECTORS,
    TrackPoint,
    TrackSet,
    interpolate_covariates,
    parse_covariates,
    parse_employment,
    parse_entities,
    parse_landmask,
    parse_precip,
    parse_tracks,
    read_precip_binary,
    write_precip_binary,
)
from .panel import (
    CompositeCell,
    EventRow,
    EventTable,
    build_event_table,
    composite_matrix,
    conditioned_distribution,
    fractional_change,
    named_condition,
    read_event_table,
    t_test_zero,
    write_event_table,
)
from .patterns import PcaModel, extreme_composites, fit_pca, pca_on_table, standardize
from .predict import (
    CvReport,
    FeatureSpec,
    ForestModel,
    ForestParams,
    LinearModel,
    cross_validate,
    default_feature_spec,
    design_matrix,
    feature_importance,
    fit_forest,
    fit_mlr,
    read_forest,
    scenario_predict,
    temporal_kfold,
    train_on_table,
    write_forest,
)

__version__ = "0.1.0"
