"""Online drift-parameter estimation for linear SDEs.

Mean-field Kalman-Bucy estimation of a scalar drift factor from continuous
observations, with subsampled, high-frequency (bias-corrected) and
pre-filtered assimilation schemes, the closed-form frequentist theory they
are tested against, and a seeded Monte Carlo harness.
"""

from .analysis import (
    FrequentistMoments,
    MatrixEstimate,
    MeanTrajectory,
    SubsampleDiagnostic,
    bias_term,
    biased_frequentist_mean,
    estimate_fast_drift,
    frequentist_moments,
    sigma_closed_form,
    subsample_diagnostic,
)
from .errors import ConfigError, EnkbfError, NumericError
from .estimators import (
    Ensemble,
    EstimatorTrace,
    GaussianPosterior,
    ParameterTrace,
    SchemeConfig,
    enkbf_step_highfreq,
    enkbf_step_strat,
    enkbf_step_subsampled,
    gaussian_prior_sampler,
    kalman_gain,
    run_ensemble,
    run_estimator,
    run_filtered_estimator,
    run_sgd,
    write_trace_csv,
)
from .harness import (
    AggregateStats,
    ExperimentConfig,
    MonteCarloResult,
    TrialRecord,
    analytic_overlay,
    config_from_json,
    config_to_json,
    experiment_filtered,
    experiment_single_scale,
    experiment_two_scale,
    predicted_bias_rate,
    run_monte_carlo,
    write_outputs,
)
from .models import (
    ExtendedStationaryCovariance,
    FilterConfig,
    LinearModel,
    TwoScaleModel,
    damped_rotation,
    extended_stationary_covariance,
    frobenius,
    model_from_json,
    model_to_json,
    rotation_drift,
    spde_advection_diffusion,
    stationary_covariance,
)
from .paths import (
    IteratedIncrement,
    ObservationPath,
    TwoScaleBundle,
    bracket_sum,
    chen_combine,
    derive_seed,
    ito_integral,
    iterated_integral,
    noise_stream,
    simulate_filtered,
    simulate_reference,
    simulate_reference_batch,
    simulate_two_scale,
    simulate_two_scale_batch,
    window_reduce,
    write_path_csv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
