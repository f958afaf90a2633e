"""Estimators over basis-sorted coincidence counts.

Error bars are first-order propagated Poisson counting errors.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from tbrfi.qstate import BASIS_PAIRS, BasisPair


class EmptyBlockError(ValueError):
    """Raised when an estimator is handed a fourfold with no counts."""


@dataclass(frozen=True)
class FourfoldCounts:
    pp: int = 0
    pm: int = 0
    mp: int = 0
    mm: int = 0

    def __post_init__(self) -> None:
        if min(self.pp, self.pm, self.mp, self.mm) < 0:
            raise ValueError(f"counts must be non-negative: {self}")

    @classmethod
    def from_array(cls, a) -> "FourfoldCounts":
        a = [int(x) for x in a]
        return cls(*a)

    def total(self) -> int:
        return self.pp + self.pm + self.mp + self.mm

    def as_array(self) -> np.ndarray:
        return np.array([self.pp, self.pm, self.mp, self.mm], dtype=np.int64)

    def __add__(self, other: "FourfoldCounts") -> "FourfoldCounts":
        return FourfoldCounts(self.pp + other.pp, self.pm + other.pm,
                              self.mp + other.mp, self.mm + other.mm)


@dataclass(frozen=True)
class BasisPairCounts:
    """One analysis block: a fourfold per basis pair plus timing."""

    counts: dict
    block_start: float = 0.0
    block_duration: float = 1.0
    unclassified: int = 0

    def __post_init__(self) -> None:
        if self.block_duration <= 0:
            raise ValueError("block_duration must be positive")
        full = {p: self.counts.get(p, FourfoldCounts()) for p in BASIS_PAIRS}
        object.__setattr__(self, "counts", full)

    def __getitem__(self, pair: BasisPair) -> FourfoldCounts:
        return self.counts[pair]

    @classmethod
    def from_table(cls, table, block_start=0.0, block_duration=1.0, unclassified=0):
        """Build from a (6, 4) array ordered as ``BASIS_PAIRS``."""
        table = np.asarray(table)
        counts = {p: FourfoldCounts.from_array(table[i]) for i, p in enumerate(BASIS_PAIRS)}
        return cls(counts, block_start, block_duration, int(unclassified))

    def table(self) -> np.ndarray:
        return np.stack([self.counts[p].as_array() for p in BASIS_PAIRS])

    def total(self) -> int:
        return int(self.table().sum())

    def merged(self, other: "BasisPairCounts") -> "BasisPairCounts":
        """Concatenate two blocks into one spanning both."""
        start = min(self.block_start, other.block_start)
        end = max(self.block_start + self.block_duration, other.block_start + other.block_duration)
        return BasisPairCounts.from_table(self.table() + other.table(), start, end - start,
                                          self.unclassified + other.unclassified)


def merge_blocks(blocks: Sequence[BasisPairCounts]) -> BasisPairCounts:
    out = blocks[0]
    for b in blocks[1:]:
        out = out.merged(b)
    return out


def _correlated_split(c: FourfoldCounts) -> tuple[int, int]:
    total = c.total()
    if total == 0:
        raise EmptyBlockError("no coincidences in fourfold")
    return c.pp + c.mm, c.pm + c.mp


def expectation_from_counts(c: FourfoldCounts) -> tuple[float, float]:
    """Correlation estimate and its Poisson standard error.

    Returns ``(e, sigma_e)`` with e = (n++ + n-- - n+- - n-+)/total.
    """
    same, diff = _correlated_split(c)
    n = same + diff
    e = (same - diff) / n
    err = 2.0 * math.sqrt(same * diff / n**3)
    return e, err


def qber_from_counts(c: FourfoldCounts) -> tuple[float, float]:
    """Anti-correlated fraction and its Poisson standard error."""
    same, diff = _correlated_split(c)
    n = same + diff
    return diff / n, math.sqrt(same * diff / n**3)


class CParameter(float):
    """Float subclass carrying a ``clipped`` flag."""

    clipped: bool

    def __new__(cls, value: float, clipped: bool = False):
        obj = super().__new__(cls, value)
        obj.clipped = clipped
        return obj


def c_parameter(e_xx: float, e_yx: float) -> CParameter:
    """sqrt(e_xx**2 + e_yx**2), clipped to 1 (with a flag) when noise overshoots."""
    c = math.hypot(e_xx, e_yx)
    if c > 1.0:
        return CParameter(1.0, clipped=True)
    return CParameter(c)


@dataclass(frozen=True)
class BlockEstimate:
    block_start: float
    block_duration: float
    e_xx: float = math.nan
    e_yx: float = math.nan
    c64: float = math.nan
    qber_z: float = math.nan
    qber_x: float = math.nan
    phase: float = math.nan
    phase_unwrapped: float = math.nan
    e_xx_err: float = math.nan
    e_yx_err: float = math.nan
    c64_err: float = math.nan
    qber_z_err: float = math.nan
    qber_x_err: float = math.nan
    phase_err: float = math.nan
    n_total: int = 0
    n_keymap: int = 0
    m_xx: int = 0
    m_yx: int = 0
    c_clipped: bool = False
    ok: bool = True
    error: str = ""

    @classmethod
    def gap(cls, counts: BasisPairCounts, reason: str) -> "BlockEstimate":
        return cls(counts.block_start, counts.block_duration, n_total=counts.total(),
                   ok=False, error=reason)


def block_estimate(counts: BasisPairCounts) -> BlockEstimate:
    for pair in (BasisPair.XX, BasisPair.YX, BasisPair.ZZ):
        if counts[pair].total() == 0:
            raise EmptyBlockError(f"basis pair {pair.label} has no coincidences "
                                  f"in block starting {counts.block_start:g} s")
    e_xx, s_xx = expectation_from_counts(counts[BasisPair.XX])
    e_yx, s_yx = expectation_from_counts(counts[BasisPair.YX])
    q_z, s_qz = qber_from_counts(counts[BasisPair.ZZ])
    c = c_parameter(e_xx, e_yx)
    raw = math.hypot(e_xx, e_yx)
    if raw > 0:
        s_c = math.sqrt((e_xx * s_xx) ** 2 + (e_yx * s_yx) ** 2) / raw
        s_phi = math.sqrt((e_yx * s_xx) ** 2 + (e_xx * s_yx) ** 2) / raw**2
    else:
        s_c = math.hypot(s_xx, s_yx)
        s_phi = math.pi
    phase = math.atan2(e_yx, e_xx)
    return BlockEstimate(
        block_start=counts.block_start,
        block_duration=counts.block_duration,
        e_xx=e_xx, e_yx=e_yx, c64=float(c), qber_z=q_z, qber_x=(1.0 - float(c)) / 2.0,
        phase=phase, phase_unwrapped=phase,
        e_xx_err=s_xx, e_yx_err=s_yx, c64_err=s_c, qber_z_err=s_qz, qber_x_err=s_c / 2.0,
        phase_err=s_phi,
        n_total=counts.total(),
        n_keymap=counts[BasisPair.ZZ].total(),
        m_xx=counts[BasisPair.XX].total(),
        m_yx=counts[BasisPair.YX].total(),
        c_clipped=c.clipped,
    )


def time_series(blocks: Iterable[BasisPairCounts]) -> list[BlockEstimate]:
    """Per-block estimates with the phase unwrapped across valid blocks.

    Blocks that cannot be estimated become gap markers (``ok=False``).
    """
    out: list[BlockEstimate] = []
    prev: float | None = None
    offset = 0.0
    for counts in blocks:
        try:
            est = block_estimate(counts)
        except EmptyBlockError as exc:
            out.append(BlockEstimate.gap(counts, str(exc)))
            continue
        if est.c_clipped:
            warnings.warn(f"C clipped to 1 in block starting {est.block_start:g} s",
                          stacklevel=2)
        unwrapped = est.phase + offset
        if prev is not None:
            # nearest-branch continuation
            k = round((prev - unwrapped) / (2 * math.pi))
            offset += 2 * math.pi * k
            unwrapped += 2 * math.pi * k
        prev = unwrapped
        out.append(replace(est, phase_unwrapped=unwrapped))
    return out


CSV_FIELDS = (
    "block_start", "block_duration", "ok",
    "e_xx", "e_xx_err", "e_yx", "e_yx_err",
    "c64", "c64_err", "qber_z", "qber_z_err", "qber_x", "qber_x_err",
    "phase", "phase_unwrapped", "phase_err",
    "n_total", "n_keymap", "m_xx", "m_yx", "c_clipped",
)


def estimate_row(est: BlockEstimate) -> dict:
    return {k: getattr(est, k) for k in CSV_FIELDS}


def write_estimates_csv(path, estimates: Sequence[BlockEstimate], extra: dict | None = None) -> None:
    """Write one row per block.  ``extra`` maps column name -> per-block values."""
    extra = extra or {}
    fields = list(CSV_FIELDS) + list(extra)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for i, est in enumerate(estimates):
            row = estimate_row(est)
            row["ok"] = int(est.ok)
            row["c_clipped"] = int(est.c_clipped)
            for k, vals in extra.items():
                row[k] = vals[i]
            w.writerow(row)
