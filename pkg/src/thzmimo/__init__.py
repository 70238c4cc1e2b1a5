"""Simulation and estimation toolkit for single-carrier THz extremely-large
MIMO channels under dual-wideband fading (aperture beam squint, multipath
delays and molecular absorption)."""

__version__ = "0.1.0"

from .beamspace import (
    BeamspaceFactors,
    beamspace_to_channel,
    build_f1,
    build_f2,
    channel_to_beamspace,
)
from .channel import (
    ChannelRealization,
    DelaySelector,
    PathParams,
    aliasing_budget,
    aperture_delay,
    delay_index,
    molecular_absorption,
    path_gain_std,
    realize_channel,
    steering_coeff,
)
from .config import ConfigError, SystemConfig, load_config
from .estimators import (
    AdmmState,
    EstimationResult,
    admm_estimate,
    estimate_e_given_h,
    estimate_h_given_e,
    idealized_decomposed,
    init_from_position,
    ls_baseline,
    nmse,
    omp_baseline,
)
from .harness import Scenario, convergence_trace, delay_profile_report, run_sweep
from .solvers import LassoProblem, SolverReport, lasso, omp, project_onehot, threshold
from .training import (
    RxBlock,
    TrainingSet,
    add_awgn,
    build_phi,
    build_qvec,
    gen_training,
    synthesize_rx_direct,
    synthesize_rx_matrix,
)
