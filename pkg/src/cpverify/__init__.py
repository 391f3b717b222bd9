"""Verification of feedforward ReLU networks via conic moment relaxations.

The toolkit covers the full loop: lift the verification problem onto a
bordered moment matrix, solve doubly-non-negative or baseline SDP relaxations
with a built-in first-order solver, compute exact ground truth by activation
pattern enumeration, and certify relaxation exactness through non-negative
factorization of the optimal matrix.
"""

from .network import (
    Activations,
    InputPolytope,
    NeuronBounds,
    OutputHalfspace,
    ReluNetwork,
    forward,
    load_network,
    network_from_json,
    network_to_json,
    propagate_bounds,
    random_network,
    save_network,
)
from .lifting import (
    LiftedRow,
    LiftingLayout,
    assemble_lifted,
    build_layout,
    expand_input_row,
    expand_network_row,
    objective_vector,
    rank_one_moment,
    split_activations,
)
from .formulations import (
    Cone,
    ConicProgram,
    ConstraintTag,
    MatrixConstraint,
    ablate,
    add_linear_pair,
    add_strengthening_bounds,
    build_0sos,
    build_cpp_constraints,
    build_qc,
    build_sdr,
    build_triangle_sdr,
    cross_quadratic,
    dump_program,
)
from .solver import (
    SolveResult,
    SolveStatus,
    SolverConfig,
    admm_solve,
    project_nonneg,
    project_psd,
    solve,
)
from .oracle import (
    ActivationPattern,
    LinearProgram,
    LpResult,
    LpStatus,
    OracleResult,
    exact_verify,
    pattern_lp,
    refined_upper_bound,
    sample_upper_bound,
    solve_lp,
)
from .recovery import (
    Certificate,
    CertifyConfig,
    Factorization,
    NmfConfig,
    Witness,
    certificate_to_json,
    certify,
    extract_inputs,
    nonneg_factorize,
)
from .harness import (
    ExperimentConfig,
    InstanceRecord,
    build_formulation,
    case_study_network,
    case_study_rule,
    records_to_csv,
    relative_error,
    run_ablation,
    run_case_study,
    run_comparison,
)

__version__ = "0.1.0"
