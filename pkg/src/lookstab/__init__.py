"""Lookahead over minibatch SGD on synthetic convex problems.

Library surface: loss families and generators (problems), the two-timescale
optimizer (optimizer), perturbed-dataset coupling and stability estimation
(coupling), bound evaluators and presets (bounds), experiment orchestration
(experiments) and the command-line front end (cli).
"""

from .bounds import (
    BoundInputs,
    BoundReport,
    ConvexPreset,
    StronglyConvexPreset,
    cvx_excess_shape,
    cvx_l1_bound,
    cvx_l2_bound,
    cvx_opt_bound,
    gen_gap_from_l1,
    gen_gap_from_l2,
    preset_convex,
    preset_strongly_convex,
    strcvx_contraction_factor,
    strcvx_l1_bound,
    strcvx_l2_bound,
    strcvx_opt_bound,
    strcvx_param_error_bound,
)
from .coupling import (
    CoupledRun,
    NeighborPair,
    StabilityEstimate,
    coupled_run,
    derive_seed,
    estimate_stability,
    estimate_stability_detailed,
    make_neighbor,
)
from .experiments import (
    ExperimentSpec,
    PlotSpec,
    RiskReport,
    emit_plots,
    run_risk_experiment,
    run_speedup_experiment,
    run_stability_sweep,
)
from .optimizer import (
    LookaheadConfig,
    StepSchedule,
    Trajectory,
    averaged_iterate,
    draw_index_stream,
    lookahead_run,
    sample_minibatch,
    sgd_inner,
    validate_step_windows,
)
from .problems import (
    ConfigurationError,
    DataPoint,
    Dataset,
    GeneratorSpec,
    LossModel,
    NoUniqueMinimizerError,
    check_gradient_maps,
    check_self_bounding,
    empirical_grad,
    empirical_minimizer,
    empirical_risk,
    generate_dataset,
    loss_grad,
    loss_value,
    minibatch_grad,
)

__version__ = "0.1.0"
