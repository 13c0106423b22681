"""Markov transition kernels for nonnegative martingales.

A kernel K(x, dy) gives the one-step law of the process from state x > 0.
The package works with kernels that preserve mass and mean (martingale
property) and asks two structural questions about their sub-diagonal part:
how likely is a strict down-move, and how much relative mass comes back
below (1+eps)x.  Those two diagnostics drive both the analytic bubble
criteria (:mod:`bubblekit.kernels.classify`) and the fixed-point equation
for the expected drawdown loss (:mod:`bubblekit.volterra`).
"""

from .base import (
    KernelDiagnostics,
    MarkovKernel,
    diagnose,
    probability_down,
    relative_recovery,
    sample_step,
)
from .families import (
    AffineDropKernel,
    DegenerateKernel,
    ExponentialRatioKernel,
    GaussianLogStepKernel,
    TabulatedKernel,
    TwoPointKernel,
    binomial_kernel,
    double_or_floor_kernel,
)
from .classify import (
    BubbleCertificates,
    BubbleVerdict,
    DecayBound,
    FloorBound,
    classify_markov_bubble,
)

__all__ = [
    "MarkovKernel",
    "KernelDiagnostics",
    "probability_down",
    "relative_recovery",
    "diagnose",
    "sample_step",
    "TwoPointKernel",
    "DegenerateKernel",
    "AffineDropKernel",
    "ExponentialRatioKernel",
    "GaussianLogStepKernel",
    "TabulatedKernel",
    "double_or_floor_kernel",
    "binomial_kernel",
    "BubbleCertificates",
    "BubbleVerdict",
    "DecayBound",
    "FloorBound",
    "classify_markov_bubble",
]
