"""Monte Carlo estimate of C-parameter smearing under a drifting phase.

Each trial draws ``n_signals`` pair detections spread evenly over the block,
each carrying its own instantaneous phase, assigns every detection to X x X or
Y x X by a fair coin, samples the joint outcome from the Born-rule
probabilities, and evaluates C from the accumulated counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from tbrfi import keyrate
from tbrfi.qstate import BasisPair, expectation_array
from tbrfi.stats import FourfoldCounts, c_parameter, expectation_from_counts


@dataclass(frozen=True)
class DriftScenario:
    n_signals: int = 3000
    block_time: float = 1.0
    total_phase_change: float = 0.0
    initial_phase: float = 0.0
    trials: int = 300
    seed: int = 0
    visibility_z: float = 0.916
    visibility_xy: float = 0.885
    poisson_arrivals: bool = False
    # optional tabulated trajectory: (times in s, phases in rad); overrides the ramp
    phase_table: tuple | None = None

    def __post_init__(self) -> None:
        if self.n_signals < 1:
            raise ValueError("n_signals must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.block_time <= 0:
            raise ValueError("block_time must be positive")

    @property
    def drift_rate(self) -> float:
        return self.total_phase_change / self.block_time


@dataclass(frozen=True)
class SmearingResult:
    mean_c: float
    std_c: float
    analytic_c: float
    trials: int
    c_values: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def sem(self) -> float:
        return self.std_c / math.sqrt(self.trials)


def analytic_smearing(c0: float, total_phase_change: float) -> float:
    """c0 * |sin(d/2) / (d/2)|: C of a block whose phase ramps linearly by d."""
    if not 0.0 <= c0 <= 1.0:
        raise ValueError(f"c0 must lie in [0, 1], got {c0}")
    half = total_phase_change / 2.0
    if half == 0.0:
        return c0
    return c0 * abs(math.sin(half) / half)


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    # substream keyed by (seed, trial) so results do not depend on scheduling
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _signal_phases(s: DriftScenario, rng: np.random.Generator) -> np.ndarray:
    n = s.n_signals
    if s.poisson_arrivals:
        times = np.sort(rng.random(n)) * s.block_time
    else:
        times = np.arange(n) / n * s.block_time
    if s.phase_table is not None:
        t_tab, phi_tab = (np.asarray(a, dtype=float) for a in s.phase_table)
        return np.interp(times, t_tab, phi_tab)
    return s.initial_phase + times / s.block_time * s.total_phase_change


def sample_block_counts(s: DriftScenario, rng: np.random.Generator) -> dict:
    """One trial: fourfold counts for X x X and Y x X."""
    phases = _signal_phases(s, rng)
    is_yx = rng.random(phases.size) < 0.5
    e = np.where(is_yx,
                 expectation_array(BasisPair.YX, phases, s.visibility_z, s.visibility_xy),
                 expectation_array(BasisPair.XX, phases, s.visibility_z, s.visibility_xy))
    # Alice's outcome is a fair coin; Bob agrees with probability (1 + E)/2
    alice_minus = rng.random(phases.size) < 0.5
    agree = rng.random(phases.size) < (1.0 + e) / 2.0
    bob_minus = alice_minus ^ ~agree
    outcome = 2 * alice_minus + bob_minus  # ++, +-, -+, --
    idx = 4 * is_yx + outcome
    table = np.bincount(idx, minlength=8).reshape(2, 4)
    return {BasisPair.XX: FourfoldCounts.from_array(table[0]),
            BasisPair.YX: FourfoldCounts.from_array(table[1])}


def _trial_c(s: DriftScenario, trial: int) -> float:
    counts = sample_block_counts(s, _trial_rng(s.seed, trial))
    try:
        e_xx, _ = expectation_from_counts(counts[BasisPair.XX])
        e_yx, _ = expectation_from_counts(counts[BasisPair.YX])
    except ValueError:
        return math.nan  # only reachable for tiny n_signals
    return float(c_parameter(e_xx, e_yx))


def simulate_block_c(s: DriftScenario) -> SmearingResult:
    cs = np.array([_trial_c(s, i) for i in range(s.trials)])
    cs = cs[np.isfinite(cs)]
    std = float(cs.std(ddof=1)) if cs.size > 1 else 0.0
    return SmearingResult(
        mean_c=float(cs.mean()),
        std_c=std,
        analytic_c=analytic_smearing(s.visibility_xy, s.total_phase_change),
        trials=int(cs.size),
        c_values=cs,
    )


@dataclass(frozen=True)
class SweepRow:
    rate: float
    total_phase_change: float
    result: SmearingResult
    asymptotic_rate: float
    analytic_rate: float


SWEEP_FIELDS = ("rate", "total_phase_change", "mean_c", "std_c", "analytic_c",
                "asymptotic_rate", "analytic_asymptotic_rate")


def sweep_drift_rates(rates: Sequence[float], template: DriftScenario) -> list[SweepRow]:
    """One Monte Carlo block per drift rate (rad/s), plus key-rate columns."""
    if len(rates) == 0:
        raise ValueError("rate grid must be non-empty")
    q_z = (1.0 - template.visibility_z) / 2.0
    rows = []
    for rate in rates:
        s = replace(template, total_phase_change=rate * template.block_time)
        res = simulate_block_c(s)
        rows.append(SweepRow(
            rate=float(rate),
            total_phase_change=s.total_phase_change,
            result=res,
            asymptotic_rate=keyrate.asymptotic_rate(q_z, min(res.mean_c, 1.0)),
            analytic_rate=keyrate.asymptotic_rate(q_z, res.analytic_c),
        ))
    return rows


def sweep_rows_as_dicts(rows: Sequence[SweepRow]) -> list[dict]:
    return [{"rate": r.rate, "total_phase_change": r.total_phase_change,
             "mean_c": r.result.mean_c, "std_c": r.result.std_c,
             "analytic_c": r.result.analytic_c, "asymptotic_rate": r.asymptotic_rate,
             "analytic_asymptotic_rate": r.analytic_rate} for r in rows]


def threshold_rate(rows: Sequence[SweepRow], reduction: float = 0.05,
                   column: str = "asymptotic_rate") -> float:
    """Smallest |drift rate| at which the key rate has dropped by ``reduction``.

    The baseline is the zero-drift row; crossing points are linearly
    interpolated.  Returns NaN if the sweep never reaches the reduction.
    """
    ordered = sorted(rows, key=lambda r: abs(r.rate))
    if ordered[0].rate != 0.0:
        raise ValueError("threshold search needs a zero-drift row as baseline")
    base = getattr(ordered[0], column)
    if base <= 0:
        return math.nan
    prev_x, prev_y = 0.0, 0.0
    for r in ordered[1:]:
        x = abs(r.rate)
        y = 1.0 - getattr(r, column) / base
        if y >= reduction:
            if y == prev_y:
                return x
            return prev_x + (reduction - prev_y) * (x - prev_x) / (y - prev_y)
        prev_x, prev_y = x, y
    return math.nan
