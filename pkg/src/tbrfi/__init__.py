"""Passive time-bin reference-frame-independent QKD: simulation and analysis."""

from tbrfi.qstate import BasisPair, HybridPairState, OutcomeProbs, expectation, outcome_probabilities

__all__ = [
    "BasisPair",
    "HybridPairState",
    "OutcomeProbs",
    "expectation",
    "outcome_probabilities",
]

__version__ = "0.1.0"
