"""Differentially private adaptation of frozen classifiers with residual adapters."""

from privadapt.privacy import (
    DEFAULT_ALPHAS,
    BestDp,
    DiscreteDistribution,
    NoiseSpec,
    PrivacyBudget,
    RdpCurve,
    best_dp,
    compose,
    compose_repeated,
    rdp_to_dp,
    renyi_divergence,
    sample_noise,
)

__version__ = "0.1.0"
