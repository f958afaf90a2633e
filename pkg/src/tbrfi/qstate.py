"""Closed-form model of the hybrid polarization / time-bin pair state.

The shared state is (|H,E> + exp(i*phi)|V,L>)/sqrt(2), with H/E mapped to the
+1 eigenstate of Z on each side.  Noise enters through two visibilities:
``visibility_z`` scales the Z x Z correlation and ``visibility_xy`` scales
both superposition correlations.

Sign convention: <Y x X> = +visibility_xy * sin(phi), which is what the literal
Pauli matrices give for the state above.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class Basis(str, enum.Enum):
    Z = "Z"
    X = "X"
    Y = "Y"


class BasisPair(enum.Enum):
    """Alice basis (Z, X, Y) x Bob basis (Z, X)."""

    ZZ = (Basis.Z, Basis.Z)
    ZX = (Basis.Z, Basis.X)
    XZ = (Basis.X, Basis.Z)
    XX = (Basis.X, Basis.X)
    YZ = (Basis.Y, Basis.Z)
    YX = (Basis.Y, Basis.X)

    @property
    def alice(self) -> Basis:
        return self.value[0]

    @property
    def bob(self) -> Basis:
        return self.value[1]

    @classmethod
    def of(cls, alice: Basis | str, bob: Basis | str) -> "BasisPair":
        return cls((Basis(alice), Basis(bob)))

    @property
    def label(self) -> str:
        return self.name


# Stable ordering used for array layouts (counts tables, CSV columns).
BASIS_PAIRS: tuple[BasisPair, ...] = tuple(BasisPair)
KEY_PAIR = BasisPair.ZZ
C_PAIRS = (BasisPair.XX, BasisPair.YX)


@dataclass(frozen=True)
class HybridPairState:
    phase: float = 0.0
    visibility_z: float = 1.0
    visibility_xy: float = 1.0

    def __post_init__(self) -> None:
        for name in ("visibility_z", "visibility_xy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not math.isfinite(self.phase):
            raise ValueError(f"phase must be finite, got {self.phase}")

    def with_phase(self, phase: float) -> "HybridPairState":
        return HybridPairState(phase, self.visibility_z, self.visibility_xy)


class OutcomeProbs(NamedTuple):
    """Joint outcome probabilities, '+' = +1 eigenvalue (H / early)."""

    pp: float
    pm: float
    mp: float
    mm: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


def expectation(state: HybridPairState, pair: BasisPair) -> float:
    """Correlation <A x B> for the given basis pair."""
    if pair is BasisPair.ZZ:
        return state.visibility_z
    if pair is BasisPair.XX:
        return state.visibility_xy * math.cos(state.phase)
    if pair is BasisPair.YX:
        return state.visibility_xy * math.sin(state.phase)
    return 0.0


def expectation_array(pair: BasisPair, phases: np.ndarray, visibility_z: float,
                      visibility_xy: float) -> np.ndarray:
    """Vectorised :func:`expectation` over an array of phases."""
    phases = np.asarray(phases, dtype=float)
    if pair is BasisPair.ZZ:
        return np.full(phases.shape, visibility_z)
    if pair is BasisPair.XX:
        return visibility_xy * np.cos(phases)
    if pair is BasisPair.YX:
        return visibility_xy * np.sin(phases)
    return np.zeros(phases.shape)


def probs_from_expectation(e):
    """(p++, p+-, p-+, p--) = (1 + a*b*e)/4; works on scalars or arrays."""
    e = np.asarray(e, dtype=float)
    same = (1.0 + e) / 4.0
    diff = (1.0 - e) / 4.0
    return np.stack([same, diff, diff, same], axis=-1)


def outcome_probabilities(state: HybridPairState, pair: BasisPair) -> OutcomeProbs:
    e = expectation(state, pair)
    return OutcomeProbs((1 + e) / 4, (1 - e) / 4, (1 - e) / 4, (1 + e) / 4)


def c_parameter_exact(state: HybridPairState) -> float:
    return math.hypot(expectation(state, BasisPair.XX), expectation(state, BasisPair.YX))
