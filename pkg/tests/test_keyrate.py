import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tbrfi.keyrate import (
    ChannelEstimate,
    SecurityParams,
    asymptotic_rate,
    binary_entropy,
    c66_from_c64,
    calibration_table,
    deviation,
    eve_information,
    finite_adjustments,
    finite_key,
    format_report,
    hoeffding_deviation,
    rate_series,
)

mpmath.mp.dps = 40


def mp_h(p):
    p = mpmath.mpf(p)
    if p in (0, 1):
        return mpmath.mpf(0)
    return -p * mpmath.log(p, 2) - (1 - p) * mpmath.log(1 - p, 2)


def mp_eve(q, c):
    """High-precision evaluation of the documented (u, v) bound."""
    q, c = mpmath.mpf(q), mpmath.mpf(c)
    u = min(c / (1 - q), mpmath.mpf(1))
    rad = c**2 - (1 - q) ** 2 * u**2
    v = mpmath.sqrt(max(rad, 0)) / q if q > 0 else mpmath.mpf(0)
    return (1 - q) * mp_h((1 + u) / 2) + q * mp_h((1 + v) / 2)


def test_binary_entropy_examples():
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    oracle = float(mp_h("0.042"))
    assert oracle == pytest.approx(0.2514, abs=5e-5)
    assert binary_entropy(0.042) == pytest.approx(oracle, rel=1e-13)


@pytest.mark.parametrize("p", [-0.1, 1.1])
def test_binary_entropy_domain(p):
    with pytest.raises(ValueError):
        binary_entropy(p)


def test_c66():
    assert c66_from_c64(1.0) == 2.0
    assert c66_from_c64(0.0) == 0.0
    assert c66_from_c64(0.8845) == pytest.approx(1.5647, abs=1e-4)


def test_eve_information_examples():
    assert eve_information(0.0, 1.0) == 0.0
    assert eve_information(0.0, 0.0) == 1.0
    oracle = float(mp_eve("0.042", "0.8845"))
    assert oracle == pytest.approx(0.267, abs=5e-4)
    assert eve_information(0.042, 0.8845) == pytest.approx(oracle, rel=1e-12)
    with pytest.raises(ValueError):
        eve_information(0.5, 0.5)


physical = st.tuples(st.floats(0, 0.499), st.floats(0, 1)).filter(
    lambda qc: qc[1] ** 2 <= (1 - qc[0]) ** 2 + qc[0] ** 2)


@given(physical)
def test_eve_information_matches_oracle_and_range(qc):
    q, c = qc
    val = eve_information(q, c)
    assert 0.0 <= val <= 1.0 + 1e-12
    assert val == pytest.approx(float(mp_eve(q, c)), abs=1e-9)


@given(st.floats(0.001, 0.499), st.floats(0, 1))
def test_v_clamp_only_in_noise(q, c):
    u = min(c / (1 - q), 1.0)
    rad = c * c - (1 - q) ** 2 * u * u
    if u < 1.0:
        assert abs(rad) < 1e-9


def test_rate_ceiling_and_operating_point():
    assert asymptotic_rate(0.0, 1.0) == 1 / 6
    assert asymptotic_rate(0.5 - 1e-12, 0.7) == pytest.approx(0.0, abs=1e-9)
    r = asymptotic_rate(0.042, 0.8845)
    oracle = float((1 - mp_h("0.042") - mp_eve("0.042", "0.8845")) / 6)
    assert r == pytest.approx(oracle, rel=1e-12)
    assert r == pytest.approx(0.080, abs=0.001)


def test_rate_monotone_on_grid():
    qs = np.linspace(0, 0.3, 151)
    cs = np.linspace(0, 1, 151)
    grid = np.array([[asymptotic_rate(q, c) for c in cs] for q in qs])
    assert np.all(np.diff(grid, axis=1) >= -1e-15)
    # in q: checked where phase errors are at least the bit errors, c <= 1 - 2q
    q2, c2 = np.meshgrid(qs, cs, indexing="ij")
    inside = c2 <= 1 - 2 * q2 + 1e-12
    both = inside[1:] & inside[:-1]
    assert np.all(np.diff(grid, axis=0)[both] <= 1e-15)


def test_rate_rises_with_q_near_u_edge():
    # known feature of the bound: as c / (1 - q) -> 1 the phase term collapses
    assert asymptotic_rate(0.05, 0.95) > asymptotic_rate(0.0475, 0.95)


def test_v_saturates_outside_bloch_region():
    # c^2 > (1 - q)^2 + q^2 would give v > 1; v is held at 1
    assert eve_information(0.25, 1.0) == pytest.approx(0.0, abs=1e-15)


def test_hoeffding_deviation_example():
    direct = math.sqrt(math.log(2 / 2.5e-9) / 20_000)
    assert direct == pytest.approx(0.0320, abs=5e-5)
    assert hoeffding_deviation(10_000, 2.5e-9) == pytest.approx(direct, rel=1e-14)
    assert deviation(10_000, 2.5e-9, "hoeffding") == hoeffding_deviation(10_000, 2.5e-9)


def test_scarani_renner_deviation_closed_form():
    m, eps = 5e4, 2.5e-9
    expected = math.sqrt((2 * math.log(1 / eps) + 4 * math.log(m + 1)) / m)
    assert deviation(m, eps) == pytest.approx(expected)
    with pytest.raises(ValueError):
        deviation(0, eps)


@pytest.mark.parametrize("form", ["hoeffding", "scarani_renner"])
def test_adjustments_asymptotic_limit(form):
    est = ChannelEstimate(0.042, 0.8845, 10**18)
    q, c = finite_adjustments(est, SecurityParams(deviation=form))
    assert q == pytest.approx(0.042, abs=1e-6)
    assert c == pytest.approx(0.8845, abs=1e-6)


def test_adjustments_zero_qber_is_additive():
    est = ChannelEstimate(0.0, 0.9, 60_000)
    sp = SecurityParams(deviation="hoeffding")
    q, c = finite_adjustments(est, sp)
    assert q == pytest.approx(hoeffding_deviation(0.1 * 10_000, 2.5e-9))
    xi = hoeffding_deviation(10_000, 2.5e-9)
    assert c == pytest.approx(0.9 - math.sqrt(2) * xi)


def test_zero_samples_rejected():
    with pytest.raises(ValueError):
        finite_adjustments(ChannelEstimate(0.04, 0.9, 100, m_xx=0), SecurityParams())


def test_estimate_validation():
    with pytest.raises(ValueError):
        ChannelEstimate(0.6, 0.9, 100)
    with pytest.raises(ValueError):
        ChannelEstimate(0.04, 0.9, 100, n_keymap=200)
    with pytest.raises(ValueError):
        SecurityParams(f=0.9)
    with pytest.raises(ValueError):
        SecurityParams(eps_pa=0.0)


def test_small_block_gives_zero_key():
    res = finite_key(ChannelEstimate(0.042, 0.8845, 1000), SecurityParams(f=1.0))
    assert res.zero_key and res.rate == 0.0 and "reason" in res.diagnostics


@pytest.mark.parametrize("norm", ["per_signal", "per_keybit", "literal"])
@pytest.mark.parametrize("form", ["hoeffding", "scarani_renner"])
def test_finite_never_exceeds_asymptotic(norm, form):
    sp = SecurityParams(normalization=norm, deviation=form, f=1.0)
    for n in np.geomspace(1e3, 1e12, 20):
        for q, c in [(0.01, 0.97), (0.042, 0.8845), (0.08, 0.8)]:
            res = finite_key(ChannelEstimate(q, c, int(n)), sp)
            assert res.rate <= res.asymptotic_rate + 1e-15
            assert res.secret_bits >= 0


def test_finite_converges_on_n_ladder():
    sp = SecurityParams(f=1.0)
    asym = asymptotic_rate(0.042, 0.8845)
    rates = [finite_key(ChannelEstimate(0.042, 0.8845, int(n)), sp).rate for n in 10.0 ** np.arange(5, 17)]
    assert np.all(np.diff(rates) >= 0)
    # sacrifice of n_q leaves (1 - n_q) of the asymptotic value
    assert rates[-1] == pytest.approx(0.9 * asym, rel=1e-3)


def test_secret_bits_is_floor():
    res = finite_key(ChannelEstimate(0.042, 0.8845, 487_936), SecurityParams(f=1.0))
    assert res.secret_bits == math.floor(res.rate * 487_936)
    for key in ("I_E", "h_Q", "q_prime", "c_prime", "smoothing", "coherent_bits"):
        assert key in res.diagnostics


def test_report_and_calibration_table():
    est = ChannelEstimate(0.042, 0.8845, 487_936)
    sp = SecurityParams(f=1.0)
    text = format_report(finite_key(est, sp), sp, {"target_fraction": 0.00571})
    assert "30*log2(N+1)" in text and "target_fraction" in text
    rows = calibration_table(est, sp, target=0.00571)
    assert {r["normalization"] for r in rows} == {"per_signal", "per_keybit", "literal"}
    assert len(rows) == 12


class _Blk:
    def __init__(self, q, c, ok=True):
        self.qber_z, self.c64, self.ok = q, c, ok
        self.qber_z_err, self.c64_err = 0.002, 0.01


def test_rate_series():
    flat = rate_series([_Blk(0.042, 0.8845)] * 5)
    assert len({r for r, _ in flat}) == 1
    assert flat[0][1] > 0
    assert rate_series([_Blk(0.04, 0.0)])[0][0] == 0.0
    assert math.isnan(rate_series([_Blk(0.04, 0.9, ok=False)])[0][0])
    with pytest.raises(ValueError):
        rate_series([])
