"""Time-scale generation for measured atomic clock ensembles.

Builds the two-state clock ensemble model, filters it despite the
unobservable ensemble mean (standard, determinate, and stationary Kalman
forms), synchronizes the clocks to an explicit ensemble mean with
observer-based feedback, and evaluates everything through Allan variance.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .allan import (
    AllanPlot,
    GammaMatrix,
    allan_pi,
    allan_plot,
    analytical_allan_clock,
    gamma_matrix,
    optimal_weight,
    statistical_allan,
    variance_vector,
    weight_long,
    weight_short,
    write_allan_plots,
)
from .control import (
    ControllerConfig,
    ControllerStep,
    EemPolicy,
    SyncDestination,
    check_collective_gain,
    check_obs_gain,
    controller_init,
    default_collective_gain,
    default_obs_gain,
    destination_trajectory,
    eem_controller_step,
    sync_error,
    write_command_log_csv,
)
from .decomp import (
    Decomposition,
    EnsembleWeight,
    decompose,
    expand_input,
    generalized_inverse,
    project_state,
    reconstruct_state,
    weight_vector,
)
from .errors import ConfigError, ConvergenceError, NumericalError
from .filters import (
    DeterminateKFState,
    StandardKFState,
    StationaryGains,
    StationaryKFState,
    determinate_kf_init,
    determinate_kf_step,
    solve_stationary,
    standard_kf_init,
    standard_kf_step,
    stationary_kf_init,
    stationary_kf_step,
    unobservable_covariance_from_observable,
    unobservable_gain_from_observable,
    write_gains_json,
)
from .models import (
    DiscreteClockModel,
    EnsembleModel,
    MeasurementStructure,
    NoiseParams,
    build_ensemble,
    discretize,
    star_measurement,
)
from .presets import (
    DEMO_MEAS_STD,
    DEMO_SIGMA1,
    DEMO_SIGMA2,
    demo_ensemble,
    demo_noise_params,
)
from .scenarios import KINDS, ScenarioConfig, run_scenario, validate_config
from .simkit import (
    NoiseSampler,
    TrajectoryRecord,
    digital_imitation,
    reference_timescale,
    simulate,
    step,
    write_trajectory_csv,
)
