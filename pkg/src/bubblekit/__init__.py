"""Deciding whether a nonnegative martingale is a bubble.

A discrete-time nonnegative martingale is a *bubble* when it loses
expected mass at a drawdown: E[S at the k-th strict drop] < E[S_0].
The package quantifies this three ways —

* Monte Carlo: simulate the chain, stop at drawdowns, estimate the lost
  mass (:mod:`bubblekit.montecarlo`);
* analytic certificates: for Markov kernels, verdicts from the
  down-move probability a(x) and relative-recovery mass b(x)
  (:mod:`bubblekit.kernels`), and for independent returns from the
  series sum a_k / sum b_k dichotomy (:mod:`bubblekit.iid`);
* the mass functional: solve M(x) = integral of M against the kernel
  from x upward; M(x) = x exactly when no mass is lost
  (:mod:`bubblekit.volterra`).

Continuous-time strict local martingales enter through barrier-schedule
discretization (:mod:`bubblekit.ctdiscretize`).
"""

from . import ctdiscretize, iid, kernels, montecarlo, volterra
from .ctdiscretize import (BubbleReport, DeterministicBarrierSchedule,
                           GBMBarrierKernel, InverseBesselKernel,
                           RelativeBarrierSchedule, bessel_bubble_report,
                           bessel_cdf, discretize_sde_path,
                           sample_bessel_step)
from .errors import (BubblekitError, CertificateRejectionError, ConfigError,
                     DegenerateModelError, HypothesisViolationError,
                     KernelInvariantError, MonotonicityViolationError,
                     NonConvergenceError, QuadratureError, TailMassError)
from .iid import (ContinuousFactorLaw, DiscreteFactorLaw, IIDReturnModel,
                  SeriesBound, TailDeclaration, appendix_product,
                  appendix_product_lower_bound, geometric_down_model,
                  harmonic_ladder_model, iid_binomial_model, iid_bubble_check,
                  survival_product, survival_product_limit_bounds)
from .kernels import (AffineDropKernel, BubbleCertificates, BubbleVerdict,
                      DecayBound, DegenerateKernel, ExponentialRatioKernel,
                      FloorBound, GaussianLogStepKernel, MarkovKernel,
                      TabulatedKernel, TwoPointKernel, binomial_kernel,
                      classify_markov_bubble, diagnose, double_or_floor_kernel,
                      probability_down, relative_recovery, sample_step)
from .montecarlo import (DrawdownEstimate, DrawdownRecord, PathBatch,
                         drawdowns, estimate_mass_loss, estimate_monotone_run,
                         horizon_ladder, mass_loss_ladder, simulate,
                         stopped_values)
from .volterra import (CallFunction, GridFunction, SolveReport,
                       apply_operator, certify_subsolution, contraction_solve,
                       picard_from_identity)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
