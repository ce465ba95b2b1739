"""Data-driven finite abstractions of black-box control systems.

The package turns one-step samples of an unknown discrete-time plant into a
finite symbolic model, certifies a quantitative closeness bound between the
two with a user-chosen confidence, and synthesizes safety controllers on the
certified abstraction.
"""

__version__ = "0.1.0"

from .abf import (
    AbfCertificate,
    AbfTemplate,
    BasisFunction,
    custom_template,
    default_psi,
    diagonal_even_power_template,
    epsilon_tilde,
    eval_V,
    in_relation,
    phi1,
    phi2,
    psi_for_target_gamma,
    quadratic_form_template,
    read_certificate,
    recover_gamma_rho,
    write_certificate,
)
from .abstraction import (
    FiniteAbstraction,
    Grid,
    build_abstraction,
    cells_within,
    quantize,
    read_abstraction,
    representative,
    representatives,
    write_abstraction,
)
from .bounds import (
    LipschitzInputs,
    SampleSpec,
    data_requirement_surface,
    estimate_lipschitz_from_data,
    gershgorin_lambda_max,
    lipschitz_linear,
    lipschitz_nonlinear,
    min_samples,
)
from .errors import (
    AbfkitError,
    ConfigError,
    DataAcquisitionError,
    InfeasibleError,
    InsufficientDataError,
    LpInfeasibleError,
    NumericError,
    OutOfDomainError,
    TemplateError,
)
from .scenario import (
    Rejection,
    ScenarioProblem,
    SolveReport,
    constraint_value,
    solve_sop,
    verdict,
)
from .synthesis import (
    SafetyController,
    Trajectory,
    max_invariant_set,
    refine,
    simulate_closed_loop,
)
from .systems import (
    BlackBoxSystem,
    Dataset,
    ExternalCommandSystem,
    InputSet,
    SamplePair,
    StateBox,
    collect_dataset,
    dc_motor,
    dc_motor_input_set,
    dc_motor_step,
    jet_engine,
    jet_engine_input_set,
    jet_engine_step,
    read_dataset,
    sample_states,
    write_dataset,
)
