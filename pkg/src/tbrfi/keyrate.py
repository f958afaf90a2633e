"""Eve's information bound, asymptotic key rate and finite-size key length.

Conventions
-----------
* ``c64`` is the 6-state/4-state C-parameter; the 6-state value is
  ``C66 = 2 * c64**2`` so ``sqrt(C66 / 2) == c64`` inside the bound.
* Key-map sifting is 1/6: Alice picks Z with probability 1/3 and Bob lands in
  an early/late slot with probability 1/2.
* Finite-size deviations default to the Scarani-Renner form
  ``sqrt((2 ln(1/eps_pe) + d ln(m + 1)) / m)`` with ``d = 4`` outcomes per
  basis pair; a Hoeffding form is also available.  ``calibration_table``
  enumerates every supported reading of the key-length bracket.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

SIFT = 1.0 / 6.0

NORMALIZATIONS = ("per_signal", "per_keybit", "literal")
NQ_READINGS = ("sacrifice", "leak_factor")
DEVIATIONS = ("scarani_renner", "hoeffding")


@dataclass(frozen=True)
class SecurityParams:
    eps_smooth: float = 2.5e-9
    eps_ec: float = 2.5e-9
    eps_pa: float = 2.5e-9
    eps_pe: float = 2.5e-9
    n_q: float = 0.1
    f: float = 1.2
    deviation: str = "scarani_renner"
    outcomes: int = 4
    normalization: str = "per_signal"
    nq_reading: str = "sacrifice"

    def __post_init__(self) -> None:
        for name in ("eps_smooth", "eps_ec", "eps_pa", "eps_pe"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 <= self.n_q <= 1.0:
            raise ValueError(f"n_q must lie in [0, 1], got {self.n_q}")
        if self.f < 1.0:
            raise ValueError(f"f must be >= 1, got {self.f}")
        if self.deviation not in DEVIATIONS:
            raise ValueError(f"deviation must be one of {DEVIATIONS}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.nq_reading not in NQ_READINGS:
            raise ValueError(f"nq_reading must be one of {NQ_READINGS}")
        if self.outcomes < 1:
            raise ValueError("outcomes must be positive")


@dataclass(frozen=True)
class ChannelEstimate:
    """Whole-block channel parameters.  Sample counts default to N/6 each."""

    q_z: float
    c64: float
    n_total: int
    n_keymap: int | None = None
    m_xx: int | None = None
    m_yx: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.q_z <= 0.5:
            raise ValueError(f"q_z must lie in [0, 0.5], got {self.q_z}")
        if not 0.0 <= self.c64 <= 1.0:
            raise ValueError(f"c64 must lie in [0, 1], got {self.c64}")
        if self.n_total < 0:
            raise ValueError("n_total must be non-negative")
        for name in ("n_keymap", "m_xx", "m_yx"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, self.n_total * SIFT)
        if self.n_keymap > self.n_total:
            raise ValueError("n_keymap cannot exceed n_total")


@dataclass(frozen=True)
class KeyResult:
    rate: float
    secret_bits: int
    n_total: int
    asymptotic_rate: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def zero_key(self) -> bool:
        return self.secret_bits == 0


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"binary entropy needs p in [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def c66_from_c64(c64: float) -> float:
    return 2.0 * c64 * c64


def _uv(q: float, c64: float) -> tuple[float, float, float]:
    u = min(c64 / (1.0 - q), 1.0)
    radicand = c64 * c64 - (1.0 - q) ** 2 * u * u
    v = math.sqrt(max(0.0, radicand)) / q if q > 0 else 0.0
    return u, min(v, 1.0), radicand


def eve_information(q: float, c64: float) -> float:
    """Upper bound on Eve's information per key bit given (Q, C64)."""
    if not 0.0 <= q < 0.5:
        raise ValueError(f"eve_information needs q in [0, 0.5), got {q}")
    if not 0.0 <= c64 <= 1.0:
        raise ValueError(f"eve_information needs c64 in [0, 1], got {c64}")
    u, v, _ = _uv(q, c64)
    return (1.0 - q) * binary_entropy((1.0 + u) / 2.0) + q * binary_entropy((1.0 + v) / 2.0)


def asymptotic_rate(q: float, c64: float) -> float:
    """Secret bits per coincidence in the infinite-data limit."""
    if q >= 0.5:
        return 0.0
    c64 = min(max(c64, 0.0), 1.0)
    return SIFT * max(0.0, 1.0 - binary_entropy(q) - eve_information(q, c64))


def deviation(m: float, eps: float, form: str = "scarani_renner", outcomes: int = 4) -> float:
    """Worst-case statistical deviation of an estimate from ``m`` samples."""
    if m <= 0:
        raise ValueError("deviation needs a positive sample count")
    if form == "hoeffding":
        return math.sqrt(math.log(2.0 / eps) / (2.0 * m))
    if form == "scarani_renner":
        return math.sqrt((2.0 * math.log(1.0 / eps) + outcomes * math.log(m + 1.0)) / m)
    raise ValueError(f"unknown deviation form {form!r}")


def hoeffding_deviation(m: float, eps: float) -> float:
    return deviation(m, eps, "hoeffding")


def finite_adjustments(est: ChannelEstimate, sp: SecurityParams) -> tuple[float, float]:
    """Pessimistic (Q', C') from finite sample sizes.

    Q' adds the deviation for the ``n_q * n`` sacrificed key-map bits.  Each
    superposition correlation may be off by its own deviation; the worst
    case over the unknown phase shortens the (e_xx, e_yx) vector by the
    norm of the two deviations.
    """
    m_q = sp.n_q * est.n_keymap
    if m_q <= 0 or est.m_xx <= 0 or est.m_yx <= 0:
        raise ValueError("finite adjustments need non-zero sample counts")
    q_prime = est.q_z + deviation(m_q, sp.eps_pe, sp.deviation, sp.outcomes)
    xi_xx = deviation(est.m_xx, sp.eps_pe, sp.deviation, sp.outcomes)
    xi_yx = deviation(est.m_yx, sp.eps_pe, sp.deviation, sp.outcomes)
    c_prime = max(0.0, est.c64 - math.hypot(xi_xx, xi_yx))
    return q_prime, c_prime


def finite_key(est: ChannelEstimate, sp: SecurityParams = SecurityParams()) -> KeyResult:
    """Secret fraction r_N and key length for a block of ``n_total`` coincidences."""
    N = est.n_total
    asym = asymptotic_rate(est.q_z, est.c64)
    diag: dict = {"normalization": sp.normalization, "nq_reading": sp.nq_reading,
                  "deviation": sp.deviation, "N": N, "n": est.n_keymap,
                  "q_z": est.q_z, "c64": est.c64}
    if N <= 0 or est.n_keymap <= 0:
        diag["reason"] = "no key-map detections"
        return KeyResult(0.0, 0, N, asym, diag)
    n = est.n_keymap
    q_p, c_p = finite_adjustments(est, sp)
    diag.update(q_prime=q_p, c_prime=c_p)
    if q_p >= 0.5:
        diag["reason"] = "Q' >= 1/2"
        return KeyResult(0.0, 0, N, asym, diag)

    i_e = eve_information(q_p, c_p)
    h_q = binary_entropy(q_p)
    if sp.nq_reading == "sacrifice":
        n_eff, leak = (1.0 - sp.n_q) * n, sp.f * h_q
    else:
        n_eff, leak = n, sp.n_q * sp.f * h_q
    smooth = 7.0 * math.sqrt(math.log2(2.0 / sp.eps_smooth) / n)
    ec = math.log2(2.0 / sp.eps_ec)
    pa = 2.0 * math.log2(1.0 / sp.eps_pa)
    coherent = 30.0 * math.log2(N + 1.0)
    per_bit = 1.0 - i_e - leak - smooth
    prefactor = n_eff / N

    if sp.normalization == "per_signal":
        rate = prefactor * per_bit - (ec + pa + coherent) / N
    elif sp.normalization == "per_keybit":
        rate = prefactor * (per_bit - (ec + pa) / n_eff - coherent / N)
    else:  # literal: absolute bit counts inside the bracket
        rate = prefactor * (per_bit - ec - pa - coherent / N)

    diag.update(I_E=i_e, h_Q=h_q, leak_ec=leak, smoothing=smooth, eps_ec_bits=ec,
                eps_pa_bits=pa, coherent_bits=coherent, prefactor=prefactor,
                per_bit_bracket=per_bit, rate_unclipped=rate)
    if rate <= 0:
        diag["reason"] = _binding_term(diag)
        return KeyResult(0.0, 0, N, asym, diag)
    bits = max(0, math.floor(rate * N))
    return KeyResult(rate, bits, N, asym, diag)


def _binding_term(diag: dict) -> str:
    if diag["per_bit_bracket"] <= 0:
        terms = {"I_E(Q',C')": diag["I_E"], "f*h(Q')": diag["leak_ec"],
                 "smoothing 7*sqrt(...)": diag["smoothing"]}
        name = max(terms, key=terms.get)
        return f"per-bit bracket negative; largest term {name} = {terms[name]:.4f}"
    return "fixed finite-size costs (eps terms, 30*log2(N+1)) exceed the extractable bits"


def rate_series(blocks: Sequence, q_attr: str = "qber_z", c_attr: str = "c64") -> list[tuple[float, float]]:
    """Asymptotic rate per block as ``(rate, sigma)``; gaps yield NaN."""
    if len(blocks) == 0:
        raise ValueError("rate_series needs at least one block")
    out = []
    for b in blocks:
        q = getattr(b, q_attr)
        c = getattr(b, c_attr)
        if not getattr(b, "ok", True) or not (math.isfinite(q) and math.isfinite(c)):
            out.append((math.nan, math.nan))
            continue
        r = asymptotic_rate(q, c)
        sq = getattr(b, q_attr + "_err", 0.0) or 0.0
        sc = getattr(b, c_attr + "_err", 0.0) or 0.0
        dq = _partial(lambda x: asymptotic_rate(x, c), q, 0.0, 0.5 - 1e-9)
        dc = _partial(lambda x: asymptotic_rate(q, x), c, 0.0, 1.0)
        out.append((r, math.hypot(dq * sq, dc * sc)))
    return out


def _partial(fn, x: float, lo: float, hi: float, h: float = 1e-6) -> float:
    a, b = max(lo, x - h), min(hi, x + h)
    if b <= a:
        return 0.0
    return (fn(b) - fn(a)) / (b - a)


def calibration_table(est: ChannelEstimate, base: SecurityParams, target: float | None = None):
    """Evaluate every (normalization, n_q reading, deviation form) combination."""
    rows = []
    for dev in DEVIATIONS:
        for nq in NQ_READINGS:
            for norm in NORMALIZATIONS:
                sp = replace(base, deviation=dev, nq_reading=nq, normalization=norm)
                res = finite_key(est, sp)
                row = {"deviation": dev, "nq_reading": nq, "normalization": norm,
                       "rate": res.rate, "secret_bits": res.secret_bits,
                       "rate_unclipped": res.diagnostics.get("rate_unclipped", 0.0)}
                if target:
                    row["ratio_to_target"] = res.rate / target
                rows.append(row)
    return rows


def format_report(res: KeyResult, sp: SecurityParams, reference: dict | None = None) -> str:
    """Human-auditable breakdown of every term in the key-length formula."""
    d = res.diagnostics
    lines = [
        "finite-size key report",
        "----------------------",
        f"N (raw coincidences)        : {res.n_total}",
        f"n (key-map detections)      : {d.get('n', 0):.1f}",
        f"Q_z, C64                    : {d.get('q_z', math.nan):.5f}, {d.get('c64', math.nan):.5f}",
        f"asymptotic rate (analytic)  : {res.asymptotic_rate:.5f} bits/coincidence",
        f"security params             : {asdict(sp)}",
    ]
    for key, label in (("q_prime", "Q'"), ("c_prime", "C'"), ("I_E", "I_E(Q',C')"),
                       ("h_Q", "h(Q')"), ("leak_ec", "EC leakage per bit"),
                       ("smoothing", "7*sqrt(log2(2/eps)/n)"), ("eps_ec_bits", "log2(2/eps_EC)"),
                       ("eps_pa_bits", "2*log2(1/eps_PA)"), ("coherent_bits", "30*log2(N+1)"),
                       ("prefactor", "key-bit prefactor"), ("per_bit_bracket", "per-bit bracket"),
                       ("rate_unclipped", "r_N before clipping")):
        if key in d:
            lines.append(f"{label:<28}: {d[key]:.6g}")
    lines.append(f"secret fraction r_N         : {res.rate:.6f}")
    lines.append(f"secret bits                 : {res.secret_bits}")
    if res.zero_key:
        lines.append(f"ZERO KEY: {d.get('reason', 'non-positive key length')}")
    for k, v in (reference or {}).items():
        lines.append(f"reference {k:<18}: {v}")
    return "\n".join(lines)
