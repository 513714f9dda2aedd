"""Hamiltonian Monte Carlo with general auxiliaries and stochastic gradients.

The package couples two samplers — plain stochastic-gradient HMC and the
alternating-direction variant that stays reversible for asymmetric momentum
distributions — with an empirical verification harness: integrator order
sweeps, acceptance and moment bound checks, spectral-gap witnesses, and
total-variation decay experiments, all reproducible from a single seed.
"""

__version__ = "0.1.0"

from .errors import (
    AdhmcError,
    AuxiliarySamplingError,
    ConfigurationError,
    EstimatorError,
    IntegrationError,
    ModelValidationError,
    OracleConfigurationError,
    ReferenceFlowError,
)
from .integrators import (
    ErrorSweepResult,
    LeapfrogConfig,
    leapfrog_jacobian_determinant,
    leapfrog_step,
    leapfrog_trajectory,
    one_step_error_sweep,
    quadrature_identity_check,
    reference_flow,
)
from .models import (
    CertificateReport,
    Component,
    KineticModel,
    MomentDescriptors,
    PhaseState,
    PotentialModel,
    SmoothnessCertificate,
    estimate_moments,
    sample_auxiliary,
    verify_certificate,
)
from .oracles import (
    ExactOracle,
    GradientOracle,
    LipschitzMoments,
    MinibatchOracle,
    check_unbiasedness,
    exact_oracle,
    minibatch_oracle,
)
from .samplers import (
    ChainRecord,
    SamplerConfig,
    acceptance_log_ratio_hmc,
    adhmc_step,
    reversibility_check_adhmc,
    run_chain,
    sghmc_step,
)
from .diagnostics import (
    BoundConstants,
    DirichletEstimate,
    acceptance_bound_constants,
    dirichlet_form_estimate,
    dirichlet_ratio_vs_autocorr,
    energy_error_bound_check,
    gradient_moment_check,
    kl_pushforward_estimate,
    quadratic_form_moment_check,
    step_size_advisor,
    tv_decay_estimate,
)
from .zoo import KINETIC_IDS, POTENTIAL_IDS, make_kinetic, make_potential

__all__ = [name for name in dir() if not name.startswith("_")]
