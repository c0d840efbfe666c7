"""Monte Carlo and closed-form toolkit for amplified quantum measurement.

Simulates measurement-by-amplification as forward-backward stochastic
trajectories in phase space and checks the resulting statistics (outcome
distributions, postselected conditional variances, entangled-meter
correlations) against closed-form results.
"""

from .analytic import (
    FringeTerm,
    GaussComponent,
    GaussFringeDensity,
    Marginal1D,
    MeterMoments,
    PostselectedMoments,
    TimeOutOfRange,
    UnsupportedPhase,
    born_p,
    born_x,
    conditional_given_meter_x,
    conditional_p_given_x,
    fbc_from_wigner,
    inferred_state_A_analytic,
    marginal_p,
    marginal_x,
    meter_conditional_variances,
    q_single_mode,
    two_mode_q,
    variances_postselected_analytic,
    wigner_cat,
)
from .core import (
    AmplifierSpec,
    ModeSpec,
    NonNormalizedAmplitudes,
    NonPositiveSteps,
    Scenario,
    ScenarioError,
    SuperpositionSpec,
    TimeGrid,
    TwoModeSpec,
    ZeroGain,
    validate_scenario,
)
from .postselect import (
    EmptyBranch,
    EmptyEnsemble,
    InferredState,
    MomentEstimate,
    PostselectedEnsemble,
    TooFewSamples,
    UncertaintyProduct,
    bin_by_sign,
    build_loops,
    infer_state_A_numeric,
    meter_sign_agreement,
    observed_variances,
    uncertainty_product,
)
from .sampler import (
    BadWeights,
    EnvelopeViolation,
    RngStream,
    sample_fringe_density,
    sample_gauss_mixture,
    sample_p_given_x,
)
from .sde_engine import (
    Trajectory,
    TrajectoryEnsemble,
    ou_step,
    simulate_p_measurement,
    simulate_single_mode,
    simulate_two_mode,
)
from .stats import (
    BadEdges,
    DensityComparison,
    Histogram,
    compare_density,
    histogram,
    ks_critical,
    ks_statistic,
)

__all__ = [
    "AmplifierSpec",
    "BadEdges",
    "BadWeights",
    "DensityComparison",
    "EmptyBranch",
    "EmptyEnsemble",
    "EnvelopeViolation",
    "FringeTerm",
    "GaussComponent",
    "GaussFringeDensity",
    "Histogram",
    "InferredState",
    "Marginal1D",
    "MeterMoments",
    "ModeSpec",
    "MomentEstimate",
    "NonNormalizedAmplitudes",
    "NonPositiveSteps",
    "PostselectedEnsemble",
    "PostselectedMoments",
    "RngStream",
    "Scenario",
    "ScenarioError",
    "SuperpositionSpec",
    "TimeGrid",
    "TimeOutOfRange",
    "TooFewSamples",
    "Trajectory",
    "TrajectoryEnsemble",
    "TwoModeSpec",
    "UncertaintyProduct",
    "UnsupportedPhase",
    "ZeroGain",
    "bin_by_sign",
    "born_p",
    "born_x",
    "build_loops",
    "compare_density",
    "conditional_given_meter_x",
    "conditional_p_given_x",
    "fbc_from_wigner",
    "histogram",
    "infer_state_A_numeric",
    "inferred_state_A_analytic",
    "ks_critical",
    "ks_statistic",
    "marginal_p",
    "marginal_x",
    "meter_conditional_variances",
    "meter_sign_agreement",
    "observed_variances",
    "ou_step",
    "q_single_mode",
    "sample_fringe_density",
    "sample_gauss_mixture",
    "sample_p_given_x",
    "simulate_p_measurement",
    "simulate_single_mode",
    "simulate_two_mode",
    "two_mode_q",
    "uncertainty_product",
    "validate_scenario",
    "variances_postselected_analytic",
    "wigner_cat",
]

__version__ = "0.1.0"
