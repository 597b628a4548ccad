"""Cube thinning of MCMC output.

Reweight a chain with control variates, then draw a balanced subsample of
exactly ``M`` points with the cube method, so that the control-variate
constraints carry over to the subsample.
"""

from ._backend import NAME as backend
from .chainio import ingest_chain, write_chain
from .control_variates import (
    Chain,
    ControlVariateMatrix,
    WeightedSample,
    beta_ols,
    cv_weights,
    gibbs_cv_truncnorm,
    score_cv_diagonal,
    score_cv_full,
    weighted_estimate,
)
from .cube import BalancedProblem, FlightState, cube_sample, flight_phase, flight_step, landing_phase
from .errors import *  # noqa: F401,F403
from .metrics import (
    EmpiricalSignedMeasure,
    SteinKernelConfig,
    energy_distance,
    gaussian_map,
    ksd,
    median_bandwidth,
    star_discrepancy,
    stein_kernel,
)
from .numerics import LinearProgram, ols, project_to_null, pseudo_inverse, solve_lp
from .samplers import (
    TruncatedNormalTarget,
    gaussian_ar_chain,
    gaussian_score,
    random_spd,
    truncnorm_gibbs,
    truncnorm_mean,
)
from .thinning import (
    SignedSubsample,
    build_constraints,
    cube_thin,
    normalize_weights,
    standard_thin,
    stein_thin_greedy,
    subsample_estimate,
)

__version__ = "0.1.0"
