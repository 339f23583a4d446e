"""Ensemble Kalman inversion with adaptive regularisation and geostatistical priors."""

from .ensemble import (
    EkiConfig,
    EkiSchedule,
    EnsembleStats,
    InflationConfig,
    LocalisationConfig,
    ObservationModel,
    ParameterEnsemble,
    PredictionEnsemble,
    compute_kalman_gain,
    data_misfit,
    eki_update,
    estimate_stats,
    resample_failed,
    select_alpha_dmc,
)
from .fields import GridSpec, MaternHyper, matern_covariance, sample_interface_gp, sample_wm_field
from .forward import (
    FailureInjectionModel,
    ForwardModel,
    ForwardOutcome,
    LinearGaussianModel,
    SliceForwardModel,
    generate_synthetic_data,
)
from .inversion import RunManifest, RunResult, run_eki, sample_initial_ensemble
from .parallel import parallel_evaluate
from .priors import (
    LevelSetConfig,
    PriorGraph,
    SlicePrior,
    TransformSpec,
    apply_level_set,
    build_slice_instance,
    transform_scalar,
)
from .robustness import apply_inflation, augment_with_variates, bootstrap_localisation, inflation_factor
from .slicemodel import SliceModelSpec, WellSpec, observe, solve_pressure, solve_temperature

__version__ = "0.1.0"
