"""Robust data-driven MPC from one noisy input-output trajectory.

The package certifies system constants directly from data, computes an
output-constraint tightening that keeps the noise-perturbed closed loop
inside its constraints, solves the receding-horizon problem as a convex QP,
and ships a reproducible experiment harness.
"""

from .plant import (
    NoiseSpec,
    RealizationError,
    StateSpaceModel,
    Trajectory,
    equilibrium_check,
    gamma_oracle,
    realize_transfer_function,
    rho_oracle,
    simulate,
)
from .hankel import (
    DataRecord,
    ExcitationReport,
    HankelMatrix,
    build_H_uxi,
    extended_state_sequence,
    hankel,
    is_persistently_exciting,
    load_record,
    membership_residual,
    save_record,
    trajectory_from_alpha,
    zero_input_output_basis,
)
from .geometry import PolytopeVertexSet, enumerate_box_subspace_vertices
from .solvers import (
    LinearProgram,
    QuadraticProgram,
    SolveReport,
    Tolerances,
    induced_inf_norm,
    induced_one_norm,
    lp_duality_gap,
    pseudoinverse,
    solve_lp,
    solve_qp,
)
from .constants import (
    EstimationError,
    SystemConstants,
    certify_constants,
    compute_cpe,
    compute_xi_max,
    estimate_gamma,
    estimate_rho,
    oracle_constants,
)
from .tightening import (
    PrecheckReport,
    TighteningCoefficients,
    compute_coefficients,
    feasibility_precheck,
    tightened_margin,
)
from .mpc import (
    ControllerState,
    InfeasibleStepError,
    InfeasibleTighteningError,
    LinearStageCost,
    MpcConfig,
    MpcSolution,
    QuadraticStageCost,
    assemble,
    make_controller,
    n_step_apply,
    prediction_error_diagnostic,
    solve_step,
)
from .harness import (
    ClosedLoopLog,
    ConfigError,
    ExperimentConfig,
    example_config,
    export,
    export_log_csv,
    export_log_json,
    generate_data,
    plot_input_svg,
    plot_output_svg,
    reproduce_example,
    run_closed_loop,
)

__version__ = "0.1.0"
