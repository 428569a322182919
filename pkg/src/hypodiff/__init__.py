"""Estimation for partially observed hypoelliptic diffusions.

A strong order 1.5 scheme gives a non-degenerate Gaussian pseudo-transition;
on top of it sit split contrast estimators for complete data, a particle
filter for the hidden rough coordinates and SAEM for partial observations.
"""
__version__ = "0.1.0"

from .errors import (DegeneracyError, DomainError, ExplosionError, FilterCollapseError, HypoDiffError,
                     InvalidArgumentError, ModelViolationError, MStepSingularError, NotApplicableError,
                     NumericError)
from .models import (FitzHughNagumo, HarmonicOscillator, ParamSet, StateVector, SynapticConductance,
                     check_hypoellipticity, eval_diffusion_diag, eval_drift, get_model)
from .moments import log_density_scheme, mean_and_cov, order_check, scheme_moments
from .simulate import Trajectory, simulate_euler_fine, simulate_exact_ho, simulate_scheme15, subsample
from .estimators import ContrastOptions, EstimationResult, estimate_complete, euler_contrast_baseline
from .smc import ParticleSystem, sample_smoothing_path, smc_filter
from .saem import SaemSchedule, saem_run
from .init import auto_init
