"""Coincidence finding and basis classification over sorted tag streams.

Matching rule
-------------
Bob tags are visited in time order.  A Bob tag may pair with any unused Alice
tag whose delay ``t_bob - t_alice`` lies in
``[d0 - window_halfwidth, d0 + 2*sep + window_halfwidth]``.  Among those it
takes the one whose delay is closest to a slot centre (d0, d0 + sep,
d0 + 2*sep); ties go to the earlier Alice tag.  Each tag is used at most once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from tbrfi.photonics import PS_PER_S, DetectorLayout, TagStream
from tbrfi.qstate import BASIS_PAIRS, BasisPair
from tbrfi.stats import BasisPairCounts


class UnsortedStreamError(ValueError):
    pass


class NoPeaksError(ValueError):
    pass


@dataclass(frozen=True)
class CoincidenceConfig:
    base_delay_ps: int = 25_000
    slot_halfwidth_ps: int = 500
    window_halfwidth_ps: int | None = None
    time_bin_separation_ps: int = 2200
    layout: DetectorLayout = field(default_factory=DetectorLayout)

    def __post_init__(self) -> None:
        if self.window_halfwidth_ps is None:
            object.__setattr__(self, "window_halfwidth_ps", self.slot_halfwidth_ps)
        if self.time_bin_separation_ps <= 0:
            raise ValueError("time_bin_separation_ps must be positive")
        if not 0 < self.slot_halfwidth_ps < self.time_bin_separation_ps / 2:
            raise ValueError("slot_halfwidth_ps must be positive and below half the slot spacing")
        if self.window_halfwidth_ps < self.slot_halfwidth_ps:
            raise ValueError("window_halfwidth_ps must cover the slot half-width")

    @property
    def slot_centers(self) -> tuple[int, int, int]:
        d0, s = self.base_delay_ps, self.time_bin_separation_ps
        return d0, d0 + s, d0 + 2 * s

    @property
    def window(self) -> tuple[int, int]:
        return (self.base_delay_ps - self.window_halfwidth_ps,
                self.base_delay_ps + 2 * self.time_bin_separation_ps + self.window_halfwidth_ps)


@numba.njit(cache=True)
def _is_sorted(t):
    for i in range(1, t.size):
        if t[i] < t[i - 1]:
            return i
    return -1


@numba.njit(cache=True)
def _slot_distance(d, d0, sep):
    best = abs(d - d0)
    for k in range(1, 3):
        x = abs(d - d0 - k * sep)
        if x < best:
            best = x
    return best


@numba.njit(cache=True)
def _match(at, bt, lo, hi, d0, sep):
    na, nb = at.size, bt.size
    used = np.zeros(na, dtype=np.bool_)
    out_a = np.empty(min(na, nb), dtype=np.int64)
    out_b = np.empty(min(na, nb), dtype=np.int64)
    m = 0
    j0 = 0
    for i in range(nb):
        tb = bt[i]
        while j0 < na and tb - at[j0] > hi:
            j0 += 1
        best = -1
        best_score = np.int64(0)
        j = j0
        while j < na and tb - at[j] >= lo:
            if not used[j]:
                s = _slot_distance(tb - at[j], d0, sep)
                if best < 0 or s < best_score:
                    best = j
                    best_score = s
            j += 1
        if best >= 0:
            used[best] = True
            out_a[m] = best
            out_b[m] = i
            m += 1
    return out_a[:m], out_b[:m]


def _as_i64(t: np.ndarray) -> np.ndarray:
    t = np.ascontiguousarray(t)
    if t.dtype == np.uint64:
        return t.view(np.int64)
    return t.astype(np.int64, copy=False)


def _check_sorted(t: np.ndarray, name: str) -> None:
    bad = _is_sorted(t)
    if bad >= 0:
        raise UnsortedStreamError(f"{name} stream not sorted at index {bad}")


@dataclass
class Coincidences:
    """Matched pairs, ordered by Alice timestamp.

    ``pair`` indexes ``BASIS_PAIRS`` (-1 when unclassified); ``outcome`` is
    2*(alice == -) + (bob == -).
    """

    alice_idx: np.ndarray
    bob_idx: np.ndarray
    alice_t: np.ndarray
    delay: np.ndarray
    alice_ch: np.ndarray
    bob_ch: np.ndarray
    pair: np.ndarray | None = None
    outcome: np.ndarray | None = None
    slot: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.alice_idx.size)

    @property
    def classified(self) -> np.ndarray:
        return self.pair >= 0


def find_coincidences(alice: TagStream, bob: TagStream, cfg: CoincidenceConfig) -> Coincidences:
    at, bt = _as_i64(alice.t), _as_i64(bob.t)
    _check_sorted(at, "alice")
    _check_sorted(bt, "bob")
    lo, hi = cfg.window
    ia, ib = _match(at, bt, np.int64(lo), np.int64(hi), np.int64(cfg.base_delay_ps),
                    np.int64(cfg.time_bin_separation_ps))
    order = np.argsort(ia, kind="stable")
    ia, ib = ia[order], ib[order]
    return Coincidences(ia, ib, at[ia], bt[ib] - at[ia], alice.ch[ia], bob.ch[ib])


def _alice_tables(layout: DetectorLayout):
    basis = np.full(256, -1, np.int64)
    minus = np.zeros(256, np.int64)
    for ch, (b, s) in layout.alice.items():
        basis[ch] = "ZXY".index(b)
        minus[ch] = int(s < 0)
    return basis, minus


def _bob_tables(layout: DetectorLayout):
    known = np.zeros(256, np.bool_)
    minus = np.zeros(256, np.int64)
    for ch, s in layout.bob.items():
        known[ch] = True
        minus[ch] = int(s < 0)
    return known, minus


_PAIR_INDEX = {p.value: i for i, p in enumerate(BASIS_PAIRS)}
# (alice basis index, bob is X) -> BASIS_PAIRS index
_PAIR_LUT = np.array([[_PAIR_INDEX[(a, b)] for b in ("Z", "X")] for a in ("Z", "X", "Y")])


def classify(c: Coincidences, cfg: CoincidenceConfig) -> Coincidences:
    """Attach basis pair / outcome labels; out-of-slot delays get ``pair = -1``."""
    d0, sep, hw = cfg.base_delay_ps, cfg.time_bin_separation_ps, cfg.slot_halfwidth_ps
    rel = c.delay - d0
    slot = np.rint(rel / sep).astype(np.int64)
    resid = np.abs(rel - slot * sep)
    a_basis_t, a_minus_t = _alice_tables(cfg.layout)
    b_known, b_minus_t = _bob_tables(cfg.layout)
    a_basis = a_basis_t[c.alice_ch]
    ok = (slot >= 0) & (slot <= 2) & (resid <= hw) & (a_basis >= 0) & b_known[c.bob_ch]
    bob_x = slot == 1
    bob_minus = np.where(bob_x, b_minus_t[c.bob_ch], (slot == 2).astype(np.int64))
    pair = np.where(ok, _PAIR_LUT[np.clip(a_basis, 0, 2), bob_x.astype(np.int64)], -1)
    outcome = np.where(ok, 2 * a_minus_t[c.alice_ch] + bob_minus, -1)
    c.pair, c.outcome, c.slot = pair, outcome, np.where(ok, slot, -1)
    return c


def classify_one(alice_ch: int, bob_ch: int, delay_ps: int, cfg: CoincidenceConfig):
    """Scalar convenience wrapper: ``(BasisPair, (a, b))`` or ``None``."""
    c = Coincidences(np.zeros(1, np.int64), np.zeros(1, np.int64), np.zeros(1, np.int64),
                     np.array([delay_ps], np.int64), np.array([alice_ch], np.uint8),
                     np.array([bob_ch], np.uint8))
    classify(c, cfg)
    if c.pair[0] < 0:
        return None
    o = int(c.outcome[0])
    sign = lambda bit: -1 if bit else +1  # noqa: E731
    return BASIS_PAIRS[int(c.pair[0])], (sign(o >> 1), sign(o & 1))


def accumulate(c: Coincidences, block_duration: float, t_origin_ps: int = 0,
               n_blocks: int | None = None) -> list[BasisPairCounts]:
    """Bin classified coincidences into blocks by Alice timestamp.

    Events past the last block (when ``n_blocks`` is given) land in it.
    """
    if block_duration <= 0:
        raise ValueError("block_duration must be positive")
    if c.pair is None:
        raise ValueError("coincidences must be classified before accumulation")
    block_ps = block_duration * PS_PER_S
    blk = np.floor((c.alice_t - t_origin_ps) / block_ps).astype(np.int64)
    blk = np.clip(blk, 0, None)
    if n_blocks is None:
        n_blocks = int(blk.max()) + 1 if blk.size else 0
    blk = np.minimum(blk, max(n_blocks - 1, 0))
    ok = c.pair >= 0
    flat = (blk[ok] * len(BASIS_PAIRS) + c.pair[ok]) * 4 + c.outcome[ok]
    table = np.bincount(flat, minlength=n_blocks * len(BASIS_PAIRS) * 4)
    table = table.reshape(n_blocks, len(BASIS_PAIRS), 4)
    uncl = np.bincount(blk[~ok], minlength=n_blocks)
    start0 = t_origin_ps / PS_PER_S
    return [BasisPairCounts.from_table(table[k], start0 + k * block_duration, block_duration,
                                       int(uncl[k])) for k in range(n_blocks)]


@numba.njit(cache=True)
def _count_delays(at, bt, lo, hi):
    n = 0
    j0 = 0
    for i in range(bt.size):
        while j0 < at.size and bt[i] - at[j0] > hi:
            j0 += 1
        j = j0
        while j < at.size and bt[i] - at[j] >= lo:
            n += 1
            j += 1
    return n


@numba.njit(cache=True)
def _fill_delays(at, bt, lo, hi, out):
    n = 0
    j0 = 0
    for i in range(bt.size):
        while j0 < at.size and bt[i] - at[j0] > hi:
            j0 += 1
        j = j0
        while j < at.size and bt[i] - at[j] >= lo:
            out[n] = bt[i] - at[j]
            n += 1
            j += 1


def pair_delays(alice: TagStream, bob: TagStream, lo_ps: int, hi_ps: int) -> np.ndarray:
    """Every Bob-minus-Alice delay in [lo, hi], all pairs."""
    at, bt = _as_i64(alice.t), _as_i64(bob.t)
    _check_sorted(at, "alice")
    _check_sorted(bt, "bob")
    n = _count_delays(at, bt, np.int64(lo_ps), np.int64(hi_ps))
    out = np.empty(n, np.int64)
    _fill_delays(at, bt, np.int64(lo_ps), np.int64(hi_ps), out)
    return out


def delay_histogram(alice: TagStream, bob: TagStream, range_ps: tuple[int, int],
                    bin_width_ps: int) -> tuple[np.ndarray, np.ndarray]:
    """(bin_centres_ps, counts) of all-pairs delays over ``range_ps``."""
    lo, hi = range_ps
    edges = np.arange(lo, hi + bin_width_ps, bin_width_ps, dtype=np.int64)
    d = pair_delays(alice, bob, lo, int(edges[-1]) - 1)
    counts, _ = np.histogram(d, bins=edges)
    return (edges[:-1] + edges[1:]) / 2.0, counts


@dataclass(frozen=True)
class Calibration:
    base_delay_ps: float
    centers_ps: tuple
    spacing_ps: float
    widths_ps: tuple
    areas: tuple
    area_errors: tuple
    background_per_bin: float


def _triple_gauss(x, b, a0, a1, a2, m0, m1, m2, s):
    g = lambda a, m: a * np.exp(-0.5 * ((x - m) / s) ** 2)  # noqa: E731
    return b + g(a0, m0) + g(a1, m1) + g(a2, m2)


def calibrate(alice: TagStream, bob: TagStream, range_ps: tuple[int, int] = (-100_000, 100_000),
              bin_width_ps: int = 50, min_separation_ps: int = 1000,
              significance: float = 6.0) -> tuple[Calibration, tuple[np.ndarray, np.ndarray]]:
    """Locate the three arrival-slot peaks in the delay histogram.

    Peaks start as the three highest mutually separated maxima, are refined
    to background-corrected centroids of the raw delays, and, when the
    binning resolves them, to the centres of a common-width triple Gaussian
    fit.  Areas are background-subtracted counts within half a peak gap.
    """
    centres, counts = delay_histogram(alice, bob, range_ps, bin_width_ps)
    if counts.sum() == 0:
        raise NoPeaksError("no delays in histogram range")
    order = np.argsort(counts, kind="stable")[::-1]
    guard = max(1, min_separation_ps // bin_width_ps)
    picks: list[int] = []
    for k in order:
        if all(abs(k - p) >= guard for p in picks):
            picks.append(int(k))
        if len(picks) == 3:
            break
    if len(picks) < 3:
        raise NoPeaksError("fewer than three separated maxima")
    picks.sort()
    coarse = [float(centres[p]) for p in picks]
    half = 0.45 * min(coarse[1] - coarse[0], coarse[2] - coarse[1])
    off_peak = np.all([np.abs(centres - c) > half for c in coarse], axis=0)
    background = float(counts[off_peak].mean()) if off_peak.any() else 0.0
    d = pair_delays(alice, bob, range_ps[0], range_ps[1])
    bg_density = background / bin_width_ps
    refined, areas, errs = [], [], []
    for c0 in coarse:
        c0, area, n_sel, sigma = _centroid(d, c0, half, bg_density)
        bg = bg_density * 2 * half
        if area < significance * math.sqrt(max(bg, 1.0)):
            raise NoPeaksError(f"peak near {c0:.0f} ps not significant "
                               f"({area:.1f} over background {bg:.1f})")
        # narrow peaks: shrink the window to cut background noise in the centroid
        narrow = max(5.0 * sigma, float(bin_width_ps))
        if narrow < half:
            c0, _, _, _ = _centroid(d, c0, narrow, bg_density)
        refined.append(c0)
        areas.append(area)
        errs.append(math.sqrt(n_sel + bg))
    refined, widths = _fit_peaks(centres, counts, refined, areas, background, bin_width_ps, d, half)
    spacing = (refined[2] - refined[0]) / 2.0
    cal = Calibration(refined[0], tuple(refined), spacing, widths, tuple(areas), tuple(errs), background)
    return cal, (centres, counts)


def _centroid(d, c0, half, bg_density):
    """Background-corrected centroid iterated to convergence.

    Returns (centre, area, raw count, background-corrected std).
    """
    bg = bg_density * 2 * half
    for _ in range(100):
        sel = d[(d >= c0 - half) & (d <= c0 + half)]
        area = sel.size - bg
        if sel.size == 0 or area <= 0:
            break
        # flat background is symmetric about c0, so it adds bg * c0 to the sum
        c1 = (float(sel.sum()) - bg * c0) / area
        done = abs(c1 - c0) < 1e-3
        c0 = c1
        if done:
            break
    sel = d[(d >= c0 - half) & (d <= c0 + half)].astype(np.float64)
    area = sel.size - bg
    if area <= 0:
        return c0, area, sel.size, math.inf
    second = float(np.sum((sel - c0) ** 2)) - bg * half * half / 3.0
    return c0, area, sel.size, math.sqrt(max(second / area, 0.0))


def _fit_peaks(centres, counts, peaks, areas, background, bin_w, d, half):
    from scipy.optimize import curve_fit

    raw = []
    for m in peaks:
        sel = d[(d >= m - half) & (d <= m + half)]
        raw.append(float(sel.std()) if sel.size > 1 else 0.0)
    if max(raw) < 2 * bin_w:
        return list(peaks), tuple(raw)
    mask = (centres > peaks[0] - 2 * half) & (centres < peaks[2] + 2 * half)
    x, y = centres[mask], counts[mask].astype(float)
    s0 = float(np.mean(raw))
    amps = [a * bin_w / (math.sqrt(2 * math.pi) * s0) for a in areas]
    p0 = [background, *amps, *peaks, s0]
    try:
        popt, _ = curve_fit(_triple_gauss, x, y, p0=p0, sigma=np.sqrt(np.maximum(y, 1.0)),
                            maxfev=20000)
    except RuntimeError:
        return list(peaks), tuple(raw)
    s = abs(float(popt[-1]))
    return [float(m) for m in popt[4:7]], (s, s, s)


def analyse_streams(alice: TagStream, bob: TagStream, cfg: CoincidenceConfig,
                    block_duration: float = 1.0, duration: float | None = None,
                    t_origin_ps: int = 0) -> tuple[list[BasisPairCounts], Coincidences]:
    """find -> classify -> accumulate."""
    c = classify(find_coincidences(alice, bob, cfg), cfg)
    n_blocks = None
    if duration is not None:
        n_blocks = max(1, math.ceil(duration / block_duration - 1e-9)) if duration > 0 else 0
    return accumulate(c, block_duration, t_origin_ps, n_blocks), c
