"""Numerical laboratory for alpha-denoising with exact scores.

``phi_alpha(y) = y + alpha sigma^2 grad log p_Y(y)`` interpolates between no
denoising (alpha = 0), half-denoising (1/2) and the posterior mean (1).  The
package provides exact noised-score oracles for tractable targets, distance
estimators, bound evaluators, the probability-flow ODE with DDIM / Euler
samplers, and experiment drivers.
"""

from .bounds import (
    BoundConstants,
    ConstantEstimate,
    constant_C,
    constants_smoothed,
    cor2_prefactors,
    lemma4_constant,
    prop3_prefactor,
    prop4_prefactor,
    prop_p_prefactors,
    subspace_w2_decomposition,
)
from .denoise import denoise_batch, denoise_point, optimal_alpha_gaussian
from .flow import (
    Schedule,
    ddim_step,
    euler_step,
    extract_alpha_schedule,
    multistep_sample,
    pf_ode_integrate,
)
from .lab import (
    CurveTable,
    SlopeFit,
    SweepConfig,
    audit_bounds,
    fit_rate,
    lemma4_fd_check,
    mixture_decay_check,
    persist_curves,
    read_curves,
    run_sweep,
)
from .metrics import (
    DistanceReport,
    KernelSpec,
    charfn_distance_empirical,
    charfn_distance_gaussian,
    dirac_mixture_w2_quadrature,
    empirical_w2_assignment,
    empirical_wp_1d,
    gaussian_w2_alpha,
    gaussian_w2_closed,
    mmd_ustat,
)
from .targets import (
    BumpDensity1D,
    DiagonalGaussian,
    DiracMixture,
    Gaussian1D,
    GaussianMixture,
    NoisedScoreOracle,
    SampleBatch,
    SubspaceGaussian,
    add_noise,
    posterior_mean,
    sample_target,
    score,
    score_of_clean_density,
)

__version__ = "0.1.0"
