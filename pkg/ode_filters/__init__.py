from .calibration import (
    CalibrationResult,
    apply_calibration,
    calibrate_sigma2,
    log_marginal,
    quasi_ml_calibrate,
)
from .diagnostics import (
    RunMetrics,
    StabilityCertificate,
    certify_stability,
    compute_metrics,
    empirical_decay,
)
from .exceptions import (
    CalibrationError,
    ConditioningError,
    ConfigurationError,
    DegenerateCalibrationWarning,
    DegenerateSampleError,
    DivergenceWarning,
    NoFixedPointError,
    NumericalOverflowError,
    OdeFilterError,
    PriorSpecificationError,
    ProblemDefinitionError,
    PseudoDensityWarning,
    SingularInnovationError,
    SolverParameterWarning,
    UnsupportedInitError,
    WeightCollapseError,
    WeightCollapseWarning,
)
from .gaussian import (
    FilterTrace,
    SigmaPointRule,
    UpdateVariant,
    VariantTag,
    bq_reduction_check,
    condition_joint_gaussian,
    predict,
    run_filter,
    update_affine_exact,
    update_ek0,
    update_ekf,
    update_ker,
    update_ukf,
)
from .harness import ExperimentConfig, ExperimentHarness
from .particle import (
    ParticleEnsemble,
    PfRun,
    ProposalKind,
    ProposalTag,
    count_local_maxima,
    kde_estimate,
    log_weight_increment,
    propose,
    resample,
    run_pf,
    sign_split,
)
from .priors import (
    DiscretePrior,
    GaussBelief,
    InitMode,
    IwpSpec,
    LtiSdePrior,
    block_projection,
    discretize_general,
    discretize_iwp,
    initial_belief,
)
from .problems import (
    AffineField,
    OdeProblem,
    get_problem,
    make_bernoulli,
    make_fitzhugh_nagumo,
    make_linear_oscillator,
    make_logistic,
)

__all__ = [
    "AffineField",
    "CalibrationError",
    "CalibrationResult",
    "ConditioningError",
    "ConfigurationError",
    "DegenerateCalibrationWarning",
    "DegenerateSampleError",
    "DiscretePrior",
    "DivergenceWarning",
    "ExperimentConfig",
    "ExperimentHarness",
    "FilterTrace",
    "GaussBelief",
    "InitMode",
    "IwpSpec",
    "LtiSdePrior",
    "NoFixedPointError",
    "NumericalOverflowError",
    "OdeFilterError",
    "OdeProblem",
    "ParticleEnsemble",
    "PfRun",
    "PriorSpecificationError",
    "ProblemDefinitionError",
    "ProposalKind",
    "ProposalTag",
    "PseudoDensityWarning",
    "RunMetrics",
    "SigmaPointRule",
    "SingularInnovationError",
    "SolverParameterWarning",
    "StabilityCertificate",
    "UnsupportedInitError",
    "UpdateVariant",
    "VariantTag",
    "WeightCollapseError",
    "WeightCollapseWarning",
    "apply_calibration",
    "block_projection",
    "bq_reduction_check",
    "calibrate_sigma2",
    "certify_stability",
    "compute_metrics",
    "condition_joint_gaussian",
    "count_local_maxima",
    "discretize_general",
    "discretize_iwp",
    "empirical_decay",
    "get_problem",
    "initial_belief",
    "kde_estimate",
    "log_marginal",
    "log_weight_increment",
    "make_bernoulli",
    "make_fitzhugh_nagumo",
    "make_linear_oscillator",
    "make_logistic",
    "predict",
    "propose",
    "quasi_ml_calibrate",
    "resample",
    "run_filter",
    "run_pf",
    "sign_split",
    "update_affine_exact",
    "update_ek0",
    "update_ekf",
    "update_ker",
    "update_ukf",
]
