"""Physical-layer simulator: pair source, losses, detectors and timing.

Pair emission is a Poisson process.  Thinning a Poisson process by
independent per-arm survival splits it into three independent Poisson
processes (both photons detected, Alice only, Bob only), which is how the
generator samples them; undetected pairs are never materialised.

Timestamps are integer picoseconds.  Alice's tag carries ``alice_delay_ps``
plus jitter; Bob's tag carries ``bob_delay_ps`` plus the arrival-slot offset
(0, one or two time-bin separations) plus jitter and a uniform modal
dispersion smear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from tbrfi.qstate import BasisPair, probs_from_expectation, expectation_array

PS_PER_S = 1_000_000_000_000


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class SourceModel:
    pair_rate: float = 1.0e7
    heralding_efficiency: float = 0.20
    visibility_z: float = 0.916
    visibility_xy: float = 0.885
    phase0: float = 0.0
    phase_rate: float = 0.0
    # optional tabulated trajectory (times_s, phases_rad); overrides the ramp
    phase_table: tuple | None = None

    def __post_init__(self) -> None:
        if self.pair_rate <= 0:
            raise ValueError("pair_rate must be positive")
        for name in ("heralding_efficiency", "visibility_z", "visibility_xy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def phase_at(self, t_s: np.ndarray) -> np.ndarray:
        if self.phase_table is not None:
            t_tab, phi_tab = (np.asarray(a, dtype=float) for a in self.phase_table)
            return np.interp(t_s, t_tab, phi_tab)
        return self.phase0 + self.phase_rate * np.asarray(t_s, dtype=float)


@dataclass(frozen=True)
class ChannelModel:
    ptc_throughput: float = 0.354
    channel_throughput: float = 0.861
    ta_throughput: float = 0.670
    analyzer_throughput: float = 0.496
    alice_total_efficiency: float = 0.093
    bob_total_efficiency: float = 0.011
    fiber_length: float = 15.0            # m
    modal_dispersion: float = 0.353       # ns/km
    time_bin_separation: float = 2.2      # ns
    detector_jitter_sigma: float = 300.0  # ps, per detector
    dark_count_rate: float = 100.0        # counts/s per detector

    def __post_init__(self) -> None:
        for name in ("ptc_throughput", "channel_throughput", "ta_throughput",
                     "analyzer_throughput", "alice_total_efficiency", "bob_total_efficiency"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.time_bin_separation <= 0:
            raise ValueError("time_bin_separation must be positive")
        if min(self.fiber_length, self.modal_dispersion, self.detector_jitter_sigma,
               self.dark_count_rate) < 0:
            raise ValueError("lengths, dispersion, jitter and dark rate must be non-negative")

    @property
    def dispersion_smear_ps(self) -> float:
        return self.fiber_length / 1000.0 * self.modal_dispersion * 1000.0

    @property
    def ptc_adjusted_throughput(self) -> float:
        """PTC throughput with the intrinsic 50% polarizer loss divided out."""
        return self.ptc_throughput / 0.5

    @property
    def bob_optical_throughput(self) -> float:
        return self.ptc_throughput * self.channel_throughput * self.ta_throughput

    @property
    def bin_separation_ps(self) -> int:
        return int(round(self.time_bin_separation * 1000.0))


ALICE_DEFAULT = {0: ("Z", +1), 1: ("Z", -1), 2: ("X", +1), 3: ("X", -1), 4: ("Y", +1), 5: ("Y", -1)}
BOB_DEFAULT = {6: +1, 7: -1}


@dataclass(frozen=True)
class DetectorLayout:
    """Channel map plus fixed path delays.

    Bob's arrival slots sit at ``bob_delay_ps + k * separation`` for k = 0, 1, 2
    relative to the emission: slot 0 is early-only (Z = +), slot 2 late-only
    (Z = -), slot 1 is the interference slot read out by the TA port.
    """

    alice: dict = field(default_factory=lambda: dict(ALICE_DEFAULT))
    bob: dict = field(default_factory=lambda: dict(BOB_DEFAULT))
    alice_delay_ps: int = 10_000
    bob_delay_ps: int = 35_000
    name: str = "default-6+2"

    def validate(self) -> None:
        a_keys, b_keys = set(self.alice), set(self.bob)
        if len(self.alice) != 6 or len(self.bob) != 2:
            raise LayoutError("layout needs six Alice channels and two Bob channels")
        if a_keys & b_keys:
            raise LayoutError(f"channels shared between Alice and Bob: {sorted(a_keys & b_keys)}")
        if any(not 0 <= c < 256 for c in a_keys | b_keys):
            raise LayoutError("channel ids must fit in one byte")
        wanted = {(b, s) for b in "ZXY" for s in (+1, -1)}
        got = {(str(b), int(s)) for b, s in self.alice.values()}
        if got != wanted:
            raise LayoutError(f"Alice map must cover each (basis, outcome) once, got {sorted(got)}")
        if sorted(self.bob.values()) != [-1, 1]:
            raise LayoutError("Bob map must assign one port to each X outcome")
        if self.alice_delay_ps < 0 or self.bob_delay_ps < 0:
            raise LayoutError("path delays must be non-negative")

    @property
    def base_delay_ps(self) -> int:
        return self.bob_delay_ps - self.alice_delay_ps

    def alice_channel(self, basis: str, sign: int) -> int:
        for ch, (b, s) in self.alice.items():
            if b == basis and s == sign:
                return ch
        raise KeyError((basis, sign))

    def alice_lookup(self) -> np.ndarray:
        """(6,) channel ids indexed by 2*basis_index + (sign == -1), bases Z, X, Y."""
        return np.array([self.alice_channel(b, s) for b in "ZXY" for s in (+1, -1)], dtype=np.uint8)

    def bob_lookup(self) -> np.ndarray:
        """(2,) channel ids indexed by (port outcome == -1)."""
        inv = {s: ch for ch, s in self.bob.items()}
        return np.array([inv[+1], inv[-1]], dtype=np.uint8)

    def to_dict(self) -> dict:
        return {"name": self.name,
                "alice": {str(k): [v[0], int(v[1])] for k, v in self.alice.items()},
                "bob": {str(k): int(v) for k, v in self.bob.items()},
                "alice_delay_ps": self.alice_delay_ps, "bob_delay_ps": self.bob_delay_ps}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorLayout":
        lay = cls(alice={int(k): (v[0], int(v[1])) for k, v in d["alice"].items()},
                  bob={int(k): int(v) for k, v in d["bob"].items()},
                  alice_delay_ps=int(d["alice_delay_ps"]), bob_delay_ps=int(d["bob_delay_ps"]),
                  name=d.get("name", "custom"))
        lay.validate()
        return lay


def expected_coincidence_rate(src: SourceModel, ch: ChannelModel) -> float:
    return src.pair_rate * ch.alice_total_efficiency * ch.bob_total_efficiency


@dataclass
class TagStream:
    """Sorted timestamps (ps, uint64) with matching channel ids (uint8)."""

    t: np.ndarray
    ch: np.ndarray

    def __len__(self) -> int:
        return int(self.t.size)

    @classmethod
    def empty(cls) -> "TagStream":
        return cls(np.empty(0, np.uint64), np.empty(0, np.uint8))

    @classmethod
    def concat(cls, parts: list["TagStream"]) -> "TagStream":
        if not parts:
            return cls.empty()
        return cls(np.concatenate([p.t for p in parts]), np.concatenate([p.ch for p in parts]))

    def sorted(self) -> "TagStream":
        order = np.lexsort((self.ch, self.t))
        return TagStream(self.t[order], self.ch[order])

    def split_before(self, t_ps: int) -> tuple["TagStream", "TagStream"]:
        k = int(np.searchsorted(self.t, np.uint64(t_ps), side="left"))
        return TagStream(self.t[:k], self.ch[:k]), TagStream(self.t[k:], self.ch[k:])


def _to_ps(times_s: np.ndarray, offset_ps: np.ndarray | float) -> np.ndarray:
    t = np.rint(times_s * PS_PER_S + offset_ps)
    return np.clip(t, 0, None).astype(np.uint64)


def _uniform_times(rng: np.random.Generator, rate: float, t0: float, span: float) -> np.ndarray:
    n = rng.poisson(rate * span) if rate > 0 else 0
    return np.sort(t0 + rng.random(n) * span)


def _sample_pairs(rng, times, src: SourceModel):
    """Basis choices and joint outcomes for detected pairs.

    Returns alice basis index (0=Z, 1=X, 2=Y), alice sign bit (1 = '-'),
    bob Z/X flag (True = interference slot), bob sign bit.
    """
    n = times.size
    a_basis = rng.integers(0, 3, n)
    bob_x = rng.random(n) < 0.5
    phases = src.phase_at(times)
    e = np.zeros(n)
    zz = (a_basis == 0) & ~bob_x
    xx = (a_basis == 1) & bob_x
    yx = (a_basis == 2) & bob_x
    e[zz] = src.visibility_z
    e[xx] = expectation_array(BasisPair.XX, phases[xx], src.visibility_z, src.visibility_xy)
    e[yx] = expectation_array(BasisPair.YX, phases[yx], src.visibility_z, src.visibility_xy)
    # categorical draw over (++, +-, -+, --)
    cdf = np.cumsum(probs_from_expectation(e), axis=1)
    u = rng.random(n)
    k = (u[:, None] >= cdf[:, :3]).sum(axis=1)
    return a_basis, (k >= 2).astype(np.int64), bob_x, (k % 2).astype(np.int64)


def simulate_shard(index: int, t0: float, span: float, src: SourceModel, ch: ChannelModel,
                   layout: DetectorLayout, seed: int) -> tuple[TagStream, TagStream]:
    """Tags for emissions in [t0, t0 + span), each stream sorted."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    ea, eb = ch.alice_total_efficiency, ch.bob_total_efficiency
    r = src.pair_rate
    sep = ch.bin_separation_ps
    jit = ch.detector_jitter_sigma
    smear = ch.dispersion_smear_ps
    a_map = layout.alice_lookup()
    b_map = layout.bob_lookup()

    # coincident pairs
    tp = _uniform_times(rng, r * ea * eb, t0, span)
    a_basis, a_minus, bob_x, b_minus = _sample_pairs(rng, tp, src)
    a_ch_pair = a_map[2 * a_basis + a_minus]
    slot = np.where(bob_x, 1, np.where(b_minus == 1, 2, 0))
    port_minus = np.where(bob_x, b_minus, rng.integers(0, 2, tp.size))
    b_ch_pair = b_map[port_minus]

    # unheralded singles
    ta = _uniform_times(rng, r * ea * (1.0 - eb), t0, span)
    a_ch_single = a_map[rng.integers(0, 6, ta.size)]
    tb = _uniform_times(rng, r * (1.0 - ea) * eb, t0, span)
    slot_single = rng.choice(3, size=tb.size, p=[0.25, 0.5, 0.25])
    b_ch_single = b_map[rng.integers(0, 2, tb.size)]

    def jitter(n):
        return rng.normal(0.0, jit, n) if jit > 0 else np.zeros(n)

    def disp(n):
        return rng.random(n) * smear if smear > 0 else np.zeros(n)

    a_t = np.concatenate([
        _to_ps(tp, layout.alice_delay_ps + jitter(tp.size)),
        _to_ps(ta, layout.alice_delay_ps + jitter(ta.size)),
    ])
    b_t = np.concatenate([
        _to_ps(tp, layout.bob_delay_ps + slot * sep + jitter(tp.size) + disp(tp.size)),
        _to_ps(tb, layout.bob_delay_ps + slot_single * sep + jitter(tb.size) + disp(tb.size)),
    ])
    a_c = np.concatenate([a_ch_pair, a_ch_single])
    b_c = np.concatenate([b_ch_pair, b_ch_single])

    # dark counts, uniform per detector
    dark_a, dark_ac, dark_b, dark_bc = [], [], [], []
    for c in sorted(layout.alice):
        t = _uniform_times(rng, ch.dark_count_rate, t0, span)
        dark_a.append(_to_ps(t, 0.0))
        dark_ac.append(np.full(t.size, c, np.uint8))
    for c in sorted(layout.bob):
        t = _uniform_times(rng, ch.dark_count_rate, t0, span)
        dark_b.append(_to_ps(t, 0.0))
        dark_bc.append(np.full(t.size, c, np.uint8))

    alice = TagStream(np.concatenate([a_t, *dark_a]), np.concatenate([a_c, *dark_ac]).astype(np.uint8))
    bob = TagStream(np.concatenate([b_t, *dark_b]), np.concatenate([b_c, *dark_bc]).astype(np.uint8))
    return alice.sorted(), bob.sorted()


def shard_bounds(duration: float, shard: float) -> list[tuple[int, float, float]]:
    n = max(1, math.ceil(duration / shard - 1e-12)) if duration > 0 else 0
    return [(k, k * shard, min(shard, duration - k * shard)) for k in range(n)]


def iter_tagstream(duration: float, src: SourceModel, ch: ChannelModel, layout: DetectorLayout,
                   seed: int, shard: float = 1.0) -> Iterator[tuple[TagStream, TagStream]]:
    """Yield globally ordered chunks, one per shard.

    Tags whose timestamp spills past the shard boundary (path delays, jitter)
    are carried into the next chunk so that concatenating the chunks gives a
    sorted stream.
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    layout.validate()
    carry_a, carry_b = TagStream.empty(), TagStream.empty()
    bounds = shard_bounds(duration, shard)
    for k, t0, span in bounds:
        a, b = simulate_shard(k, t0, span, src, ch, layout, seed)
        a = TagStream.concat([carry_a, a]).sorted()
        b = TagStream.concat([carry_b, b]).sorted()
        if k == len(bounds) - 1:
            yield a, b
            return
        edge = int(round((t0 + span) * PS_PER_S))
        out_a, carry_a = a.split_before(edge)
        out_b, carry_b = b.split_before(edge)
        yield out_a, out_b


def simulate_tagstream(duration: float, src: SourceModel, ch: ChannelModel,
                       layout: DetectorLayout, seed: int, shard: float = 1.0) -> tuple[TagStream, TagStream]:
    parts = list(iter_tagstream(duration, src, ch, layout, seed, shard))
    return TagStream.concat([p[0] for p in parts]), TagStream.concat([p[1] for p in parts])
