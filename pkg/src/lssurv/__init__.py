"""Survival inference in a covariates-only target population, powered by a
censored, response-shifted source sample."""

from .data import Dataset, SourceRecord, TargetRecord
from .errors import (
    DegenerateBandwidth,
    DomainError,
    DomainEscape,
    EmptyTail,
    EmptyTarget,
    EnvelopeFailure,
    LssurvError,
    NoEvents,
    NonConvergence,
    NumericalUnderflow,
    ParseError,
    QuadratureFailure,
    SchemaError,
    SingularA,
    TooManyFailures,
    ValidationError,
)
from .estimator import (
    FitOptions,
    FitResult,
    SelectionReport,
    bic_criterion,
    bic_select,
    conditional_functional,
    fit,
)
from .likelihood import (
    LikelihoodContext,
    SFunctionals,
    approx_loglik,
    qhat_T,
    qhat_T_star,
    s_functionals,
    score,
)
from .models import (
    REGISTRY,
    REGISTRY_ORDER,
    SurvivalModel,
    density,
    get_model,
    log_density_grad,
    ratio_depends_on_z,
    sample_event_time,
    survival,
)
from .nonparam import (
    InfluenceContext,
    KmFit,
    empirical_measure,
    gamma0_hat,
    influence_context,
    influence_evaluator,
    kaplan_meier,
    km_influence,
)
from .shift_test import (
    RatioEstimate,
    ShiftTestResult,
    label_shift_test,
    ratio_estimate,
    stute_joint_cdf,
)
from .simulation import (
    McReport,
    QzSpec,
    SimConfig,
    generate_dataset,
    run_mc_study,
    sample_z_given_t,
)
from .stepfun import DiscreteMeasure, StepFunction, jump_at, step_eval
from .variance import VarianceParts, asymptotic_variance, eta_q_hat

__version__ = "0.1.0"
