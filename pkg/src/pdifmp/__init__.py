"""Simulation and convergence analysis of piecewise diffusion Markov processes."""

from .core import (
    CumulativeKernel,
    HybridState,
    ModeSet,
    PDifMPModel,
    SamplerKernel,
    Trajectory,
    cumulative_weights,
    sample_mode,
    validate_model,
)
from .drivers import DriverStream, fork_for_path
from .flows import (
    EulerMaruyama,
    ExactGBMFlow,
    GliomaSplitting,
    em_interpolate,
    em_step,
    exact_gbm_flow,
    glioma_splitting_step,
    phi1,
)
from .jump_engine import (
    JumpAdaptedGrid,
    accept_candidate,
    apply_jump,
    next_jump,
    simulate_batch,
    simulate_coupled_pair,
    simulate_path,
)
from .models import (
    BuiltModel,
    GbmJumpParams,
    GliomaParams,
    build_model,
    list_model_ids,
    make_example1,
    make_example2,
    make_gbm_jump,
    make_glioma,
)
from .analysis import (
    ConvergenceReport,
    fit_slope,
    grow_weak_error_estimate,
    ks_statistic,
    strong_rmse,
    sup_difference,
    weak_error_estimate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
