"""Drift-removing diffeomorphisms for SDEs with irregular drift.

The pipeline: audit the problem's standing assumptions (model), solve the
drift resolvent equation on a grid (resolvent), build and certify the
transformation phi = id + psi (transform), simulate the original and
transformed dynamics with their stochastic flow and Malliavin derivatives
(flowsim), and certify existence of densities by kernel estimates, the
change-of-variables identity, and a conditional-variance reconstruction
(density).  The harness wires these into reproducible experiments.
"""

from .errors import ConfigError, NumericalError, ZvonkinError
from .model import (
    AssumptionReport,
    FunctionalG,
    HolderReport,
    SdeProblem,
    VectorField,
    check_assumptions,
    default_grid,
    estimate_holder_seminorm,
)
from .catalog import (
    brownian_problem,
    linear_problem,
    make_diffusion,
    make_drift,
    make_functional,
    problem_from_config,
    rough_problem,
)
from .resolvent import (
    GridFunction,
    LambdaSweep,
    McResolventEstimate,
    ResolventSolution,
    apply_kolmogorov,
    lambda_sweep,
    load_solution,
    save_solution,
    select_lambda,
    solve_resolvent_fd,
    solve_resolvent_mc,
)
from .transform import (
    DiffeoReport,
    EllipticityReport,
    ZvonkinTransform,
    build_transform,
    verify_diffeo,
    verify_ellipticity,
)
from .flowsim import (
    FdCheck,
    NondegeneracyReport,
    PathEnsemble,
    TransformPath,
    brownian_terminal_functional,
    dG_derivative,
    euler_maruyama,
    jacobian_closed_form,
    jacobian_variational,
    malliavin_derivative_x,
    malliavin_derivative_y,
    malliavin_fd_check,
    nondegeneracy_ensemble,
    simulate_equivalent_pair,
    transform_path,
    transform_terminal_functional,
)
from .density import (
    CovReport,
    DensityEstimate,
    KsReport,
    NVEstimate,
    change_of_variables_check,
    kde,
    ks_distance,
    nourdin_viens_density,
    silverman_bandwidth,
)
from .harness import (
    ExperimentConfig,
    VerifyReport,
    config_from_dict,
    load_config,
    run_pipeline,
    verify_pipeline,
)

__version__ = "0.1.0"
