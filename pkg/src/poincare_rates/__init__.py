"""Convergence-rate bounds for Markov chains from decay profiles."""

from . import comparison, kernels, oracle, rate_core, weights
from .comparison import apply_chain, chain_strong, chain_weak, spectral_gap_correct
from .kernels import ExpExp, PMSpec, PolyPoly, estimate_decay, imh_beta, imh_rate, pm_rate
from .oracle import FiniteChain, verify_theorem1
from .rate_core import (
    PhiFunctional,
    Polynomial,
    RateBound,
    StretchedExp,
    StrongPI,
    Tabulated,
    beta_from_config,
)

__all__ = [
    "comparison",
    "kernels",
    "oracle",
    "rate_core",
    "weights",
    "apply_chain",
    "chain_strong",
    "chain_weak",
    "spectral_gap_correct",
    "ExpExp",
    "PolyPoly",
    "PMSpec",
    "estimate_decay",
    "imh_beta",
    "imh_rate",
    "pm_rate",
    "FiniteChain",
    "verify_theorem1",
    "PhiFunctional",
    "Polynomial",
    "RateBound",
    "StretchedExp",
    "StrongPI",
    "Tabulated",
    "beta_from_config",
]
