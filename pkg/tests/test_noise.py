"""Telegraph-process and flicker-bath tests.

The oracles here are deliberately primitive: a per-sample sign-walking
simulator, Riemann sums, scipy quadrature, and brute-force ensembles.  They
share no code with the implementations they check.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from fluxrtn._rng import substream
from fluxrtn.errors import ParameterError, RangeError
from fluxrtn.noise import (
    SIGN_CORRELATION_RATE_FACTOR,
    FlickerBath,
    RtnPath,
    RtnSource,
    build_flicker_bath,
    estimate_psd,
    flicker_psd_theory,
    flicker_value_at,
    log_log_slope,
    lorentzian_psd,
    rtn_integral,
    rtn_value_at,
    sample_bath_traces,
    sample_path_bundle,
    sample_rtn_path,
    sample_switching_rate,
)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def walking_values(path: RtnPath, query_times: np.ndarray) -> np.ndarray:
    """Naive oracle: walk the grid carrying the current sign, flip on switches."""
    out = np.empty(query_times.size)
    sign = path.initial_sign
    next_switch = 0
    for i, t in enumerate(query_times):
        while next_switch < path.switch_times.size and path.switch_times[next_switch] <= t:
            sign = -sign
            next_switch += 1
        out[i] = sign * path.source.amplitude_phi0
    return out


def riemann_integral(path: RtnPath, t: float, step: float) -> float:
    grid = np.arange(0.0, t, step)
    return float(np.sum(walking_values(path, grid)) * step)


def fit_correlation_rate(taus: np.ndarray, corr: np.ndarray) -> tuple[float, float]:
    """Log-linear least squares on positive correlation values; returns (rate, r_squared)."""
    keep = corr > 0.02
    y = np.log(corr[keep])
    x = taus[keep]
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1.0 - resid.var() / y.var()
    return -slope, r2


# ---------------------------------------------------------------------------
# sample_switching_rate
# ---------------------------------------------------------------------------


def test_switching_rate_endpoints_and_midpoint():
    assert sample_switching_rate(1e2, 1e9, 0.0) == pytest.approx(1e2)
    assert sample_switching_rate(1e2, 1e9, 1.0) == pytest.approx(1e9)
    assert sample_switching_rate(1e2, 1e9, 0.5) == pytest.approx(math.sqrt(1e2 * 1e9))


def test_switching_rate_vectorized_and_validated():
    u = np.linspace(0, 1, 11)
    rates = sample_switching_rate(10.0, 1000.0, u)
    assert rates.shape == u.shape
    assert np.all(np.diff(rates) > 0)
    with pytest.raises(ParameterError):
        sample_switching_rate(100.0, 10.0, 0.5)
    with pytest.raises(ParameterError):
        sample_switching_rate(0.0, 10.0, 0.5)


# ---------------------------------------------------------------------------
# sample_rtn_path
# ---------------------------------------------------------------------------


def test_zero_rate_path_is_constant():
    src = RtnSource(switching_rate_hz=0.0, amplitude_phi0=1e-5)
    path = sample_rtn_path(src, 1e-3, substream(3, 0))
    assert path.switch_times.size == 0
    for t in (0.0, 5e-4, 1e-3):
        assert abs(rtn_value_at(path, t)) == pytest.approx(1e-5)


def test_zero_switch_fraction_matches_poisson():
    # lambda*T = 2.5e-3; P(n=0) = exp(-0.0025) = 0.9975031...
    src = RtnSource(switching_rate_hz=50.0, amplitude_phi0=1e-5)
    rng = substream(11, 0)
    draws = 100_000
    zero = sum(1 for _ in range(draws) if sample_rtn_path(src, 50e-6, rng).switch_times.size == 0)
    p = math.exp(-50.0 * 50e-6)
    sd = math.sqrt(p * (1 - p) / draws)
    assert abs(zero / draws - p) < 5 * sd


def test_sign_autocorrelation_decays_at_twice_the_event_rate():
    # Distinguishes exp(-lambda*tau) from exp(-2*lambda*tau) with a brute
    # ensemble.  The parity of a Poisson count flips at rate 2*lambda, and
    # the fitted rate must land on that convention.
    lam, horizon = 50.0, 50e-3
    rng = substream(12, 0)
    draws = 20_000
    taus = np.linspace(0.0, 2.0 / (2 * lam), 9)[1:]
    src = RtnSource(switching_rate_hz=lam, amplitude_phi0=1.0e-5)
    acc = np.zeros(taus.size)
    for _ in range(draws):
        path = sample_rtn_path(src, horizon, rng)
        v0 = rtn_value_at(path, 0.0)
        acc += np.sign(v0) * np.sign(rtn_value_at(path, taus))
    corr = acc / draws
    rate, r2 = fit_correlation_rate(taus, corr)
    assert r2 > 0.99
    sse_single = np.sum((corr - np.exp(-lam * taus)) ** 2)
    sse_double = np.sum((corr - np.exp(-2 * lam * taus)) ** 2)
    assert sse_double < sse_single / 10
    assert rate == pytest.approx(SIGN_CORRELATION_RATE_FACTOR * lam, rel=0.05)


def test_path_validation():
    src = RtnSource(switching_rate_hz=10.0, amplitude_phi0=1e-5)
    with pytest.raises(ParameterError):
        RtnPath(source=src, initial_sign=0, switch_times=np.array([]), horizon_s=1.0)
    with pytest.raises(ParameterError):
        RtnPath(source=src, initial_sign=1, switch_times=np.array([0.2, 0.2]), horizon_s=1.0)
    with pytest.raises(ParameterError):
        RtnPath(source=src, initial_sign=1, switch_times=np.array([0.5, 0.4]), horizon_s=1.0)
    with pytest.raises(ParameterError):
        RtnPath(source=src, initial_sign=1, switch_times=np.array([1.5]), horizon_s=1.0)
    with pytest.raises(ParameterError):
        sample_rtn_path(src, -1.0, substream(0, 0))


def test_source_validation():
    with pytest.raises(ParameterError):
        RtnSource(switching_rate_hz=-1.0, amplitude_phi0=1e-5)
    with pytest.raises(ParameterError):
        RtnSource(switching_rate_hz=10.0, amplitude_phi0=0.02)  # above the weak-coupling bound
    with pytest.raises(ParameterError):
        RtnSource(switching_rate_hz=10.0, amplitude_phi0=-1e-6)


# ---------------------------------------------------------------------------
# rtn_value_at / rtn_integral
# ---------------------------------------------------------------------------


def test_value_trivial_paths():
    src = RtnSource(switching_rate_hz=10.0, amplitude_phi0=1e-5)
    flat = RtnPath(source=src, initial_sign=1, switch_times=np.array([]), horizon_s=1e-5)
    assert rtn_value_at(flat, 7e-6) == pytest.approx(1e-5)
    one = RtnPath(source=src, initial_sign=1, switch_times=np.array([1e-6]), horizon_s=3e-6)
    assert rtn_value_at(one, 2e-6) == pytest.approx(-1e-5)
    assert rtn_value_at(one, 0.5e-6) == pytest.approx(1e-5)
    # a switch exactly at t counts as having happened
    assert rtn_value_at(one, 1e-6) == pytest.approx(-1e-5)


def test_value_against_walking_oracle():
    src = RtnSource(switching_rate_hz=2e5, amplitude_phi0=3e-5)
    rng = substream(13, 0)
    for _ in range(5):
        path = sample_rtn_path(src, 1e-4, rng)
        grid = np.linspace(0.0, 1e-4, 1000)
        np.testing.assert_allclose(rtn_value_at(path, grid), walking_values(path, grid), rtol=0, atol=0)


def test_value_range_error():
    src = RtnSource(switching_rate_hz=10.0, amplitude_phi0=1e-5)
    path = RtnPath(source=src, initial_sign=1, switch_times=np.array([]), horizon_s=1e-6)
    with pytest.raises(RangeError):
        rtn_value_at(path, 2e-6)
    with pytest.raises(RangeError):
        rtn_integral(path, -1e-9)


def test_integral_trivial_cases():
    src = RtnSource(switching_rate_hz=10.0, amplitude_phi0=1e-5)
    flat = RtnPath(source=src, initial_sign=1, switch_times=np.array([]), horizon_s=1e-5)
    assert rtn_integral(flat, 4e-6) == pytest.approx(1e-5 * 4e-6)
    # one switch at t1 before t: s0*b*(2*t1 - t)
    one = RtnPath(source=src, initial_sign=1, switch_times=np.array([1e-6]), horizon_s=1e-5)
    assert rtn_integral(one, 3e-6) == pytest.approx(1e-5 * (2e-6 - 3e-6))


def test_integral_against_riemann_oracle():
    src = RtnSource(switching_rate_hz=3e5, amplitude_phi0=2e-5)
    rng = substream(14, 0)
    step = 0.2e-9
    for _ in range(3):
        path = sample_rtn_path(src, 2e-6, rng)
        for t in (0.7e-6, 1.3e-6, 2e-6):
            bound = src.amplitude_phi0 * step * (path.switch_times.size + 1)
            assert abs(rtn_integral(path, t) - riemann_integral(path, t, step)) <= bound


def test_integral_derivative_matches_value_between_switches():
    src = RtnSource(switching_rate_hz=1e5, amplitude_phi0=1e-5)
    rng = substream(15, 0)
    path = sample_rtn_path(src, 1e-4, rng)
    h = 1e-10
    # probe midpoints of inter-switch gaps, away from the kinks
    edges = np.concatenate([[0.0], path.switch_times, [path.horizon_s]])
    mids = 0.5 * (edges[:-1] + edges[1:])
    mids = mids[(mids > h) & (mids < path.horizon_s - h)]
    deriv = (rtn_integral(path, mids + h) - rtn_integral(path, mids - h)) / (2 * h)
    np.testing.assert_allclose(deriv, rtn_value_at(path, mids), rtol=1e-3)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    t_pair=st.tuples(st.floats(0, 1e-4), st.floats(0, 1e-4)),
)
def test_integral_is_lipschitz_with_path_amplitude(seed, t_pair):
    src = RtnSource(switching_rate_hz=5e4, amplitude_phi0=1e-5)
    path = sample_rtn_path(src, 1e-4, substream(seed, 1))
    t1, t2 = sorted(t_pair)
    assert abs(rtn_integral(path, t2) - rtn_integral(path, t1)) <= src.amplitude_phi0 * (t2 - t1) + 1e-18
    assert abs(rtn_value_at(path, t1)) == pytest.approx(src.amplitude_phi0)


# ---------------------------------------------------------------------------
# PathBundle
# ---------------------------------------------------------------------------


def test_bundle_matches_per_path_sums():
    rng = substream(16, 0)
    rates = np.array([30.0, 4e4, 8e5, 2e6])
    amps = np.array([1e-5, 2e-5, 5e-6, 1e-6])
    bundle = sample_path_bundle(rates, amps, 1e-4, rng)
    paths = [bundle.path(i) for i in range(bundle.n_paths)]
    ts = np.sort(substream(16, 1).random(200)) * 1e-4
    value_ref = sum(rtn_value_at(p, ts) for p in paths)
    integral_ref = sum(rtn_integral(p, ts) for p in paths)
    np.testing.assert_allclose(bundle.value_sum_at(ts), value_ref, rtol=0, atol=1e-20)
    np.testing.assert_allclose(bundle.integral_sum_at(ts), integral_ref, rtol=1e-12, atol=1e-22)


def test_bundle_scalar_queries_and_validation():
    bundle = sample_path_bundle(np.array([100.0]), np.array([1e-5]), 1e-3, substream(17, 0))
    assert isinstance(bundle.value_sum_at(5e-4), float)
    assert isinstance(bundle.integral_sum_at(5e-4), float)
    with pytest.raises(RangeError):
        bundle.value_sum_at(2e-3)
    with pytest.raises(ParameterError):
        sample_path_bundle(np.array([1.0, 2.0]), np.array([1e-5]), 1e-3, substream(17, 1))


# ---------------------------------------------------------------------------
# flicker bath
# ---------------------------------------------------------------------------


def test_single_source_bath_degenerates_to_one_rtn():
    bath = build_flicker_bath(1, 1e-5, 1e2, 1e9, substream(18, 0))
    assert bath.n_sources == 1
    [src] = bath.sources()
    assert 1e2 <= src.switching_rate_hz <= 1e9
    assert src.amplitude_phi0 == 1e-5


def test_bath_log_rates_are_uniform():
    bath = build_flicker_bath(1000, 1e-6, 1e2, 1e9, substream(18, 1))
    assert bath.log_rate_ks_pvalue() > 0.01
    bath.check_log_uniformity()  # must not raise


def test_bath_validation():
    with pytest.raises(ParameterError):
        build_flicker_bath(0, 1e-6, 1e2, 1e9, substream(18, 2))
    with pytest.raises(ParameterError):
        FlickerBath(amplitude_phi0=1e-6, rates_hz=np.array([1.0]), lambda_min_hz=10.0, lambda_max_hz=100.0)
    with pytest.raises(ParameterError):
        FlickerBath(amplitude_phi0=0.5, rates_hz=np.array([50.0]), lambda_min_hz=10.0, lambda_max_hz=100.0)


def test_flicker_value_trivial_and_cancellation():
    assert flicker_value_at([], 1e-6) == 0.0
    src = RtnSource(switching_rate_hz=10.0, amplitude_phi0=1e-5)
    up = RtnPath(source=src, initial_sign=1, switch_times=np.array([]), horizon_s=1e-3)
    down = RtnPath(source=src, initial_sign=-1, switch_times=np.array([]), horizon_s=1e-3)
    assert flicker_value_at([up, down], 5e-4) == pytest.approx(0.0)


def test_flicker_ensemble_mean_is_zero():
    # central-limit bound: |mean| < 5 * b * sqrt(N) / sqrt(draws)
    n, b, draws = 50, 1e-5, 3000
    bath = build_flicker_bath(n, b, 1e2, 1e6, substream(19, 0))
    rng = substream(19, 1)
    t = 25e-6
    total = 0.0
    for _ in range(draws):
        bundle = sample_path_bundle(
            bath.rates_hz, np.full(n, b), 50e-6, rng
        )
        total += bundle.value_sum_at(t)
    assert abs(total / draws) < 5 * b * math.sqrt(n) / math.sqrt(draws)


# ---------------------------------------------------------------------------
# lorentzian_psd / flicker_psd_theory
# ---------------------------------------------------------------------------


def test_lorentzian_zero_and_half_power_points():
    lam, b = 1e4, 1e-5
    assert lorentzian_psd(lam, b, 0.0) == pytest.approx(b**2 * 2.0 / lam)
    assert lorentzian_psd(lam, b, lam) == pytest.approx(b**2 / lam)
    with pytest.raises(ParameterError):
        lorentzian_psd(0.0, b, 1.0)


def test_lorentzian_integral_matches_quadrature():
    # integral over all omega of 2*lambda/(omega^2 + lambda^2) is 2*pi
    lam = 3e3
    val, err = integrate.quad(lambda w: 2 * lam / (w**2 + lam**2), -np.inf, np.inf)
    assert val == pytest.approx(2 * math.pi, rel=1e-9)
    assert val == pytest.approx(2 * math.atan(np.inf) * 2, rel=1e-9)


def test_psd_theory_asymptote_and_slope():
    bath = build_flicker_bath(4000, 1e-6, 1e2, 1e9, substream(20, 0))
    w = 2 * math.pi * np.logspace(4, 6, 40)  # well inside the band
    theory = flicker_psd_theory(bath, w)
    np.testing.assert_allclose(theory.integral_form, theory.one_over_f, rtol=0.01)
    slope = log_log_slope(w / (2 * math.pi), theory.one_over_f, 0.0, np.inf)
    assert slope == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ParameterError):
        flicker_psd_theory(bath, np.array([0.0]))


def test_psd_theory_sum_close_to_integral_form():
    bath = build_flicker_bath(10_000, 1e-6, 1e2, 1e9, substream(20, 1))
    w = 2 * math.pi * np.logspace(3.5, 6.5, 60)
    theory = flicker_psd_theory(bath, w)
    rel = theory.lorentzian_sum / theory.integral_form - 1.0
    assert np.sqrt(np.mean(rel**2)) < 0.05


# ---------------------------------------------------------------------------
# estimate_psd
# ---------------------------------------------------------------------------


def test_psd_single_rtn_matches_lorentzian():
    lam, b = 2e4, 1e-5
    bath = FlickerBath(
        amplitude_phi0=b, rates_hz=np.array([lam]), lambda_min_hz=lam / 2, lambda_max_hz=lam * 2
    )
    traces = sample_bath_traces(bath, 10_000, 100e-9, 400, master_seed=21)
    est = estimate_psd(traces, 100e-9, normalization_frequency_hz=1e4, cell_average_correction=True)
    # a sampled telegraph ensemble decorrelates at twice the event rate
    theory = lorentzian_psd(SIGN_CORRELATION_RATE_FACTOR * lam, b, 2 * math.pi * est.frequencies_hz)
    idx = np.argmin(np.abs(est.frequencies_hz - est.normalization_frequency_hz))
    theory = theory / theory[idx]
    band = est.frequencies_hz <= 1e6
    log_dev = np.log(est.values[band]) - np.log(theory[band])
    assert np.sqrt(np.mean(log_dev**2)) < 0.10


def test_psd_flicker_slope_minus_one():
    bath = build_flicker_bath(800, 1e-6, 1e2, 1e9, substream(22, 0))
    traces = sample_bath_traces(bath, 8192, 50e-9, 60, master_seed=22, split_threshold=0.125)
    est = estimate_psd(
        traces, 50e-9, normalization_frequency_hz=8e5,
        cell_average_correction=True, max_frequency_hz=5e6,
    )
    slope = log_log_slope(est.frequencies_hz, est.values, 1e4, 5e6)
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_psd_flicker_matches_lorentzian_sum():
    bath = build_flicker_bath(800, 1e-6, 1e2, 1e9, substream(22, 5))
    traces = sample_bath_traces(bath, 8192, 50e-9, 80, master_seed=23, split_threshold=0.125)
    est = estimate_psd(
        traces, 50e-9, normalization_frequency_hz=8e5,
        cell_average_correction=True, max_frequency_hz=5e6,
    )
    theory = flicker_psd_theory(bath, 2 * math.pi * est.frequencies_hz)
    idx = np.argmin(np.abs(est.frequencies_hz - est.normalization_frequency_hz))
    ref = theory.lorentzian_sum / theory.lorentzian_sum[idx]
    band = (est.frequencies_hz >= 1e4) & (est.frequencies_hz <= 5e6)
    log_dev = np.log(est.values[band]) - np.log(ref[band])
    assert np.sqrt(np.mean(log_dev**2)) < 0.15


def test_psd_constant_ensemble_is_zero():
    src_traces = np.ones((4, 256)) * 3e-6  # constant traces: mean subtraction leaves nothing
    est = estimate_psd(src_traces, 1e-7, normalization_frequency_hz=1e5)
    assert np.all(est.values == 0.0)


def test_psd_zero_amplitude_bath_is_zero():
    bath = FlickerBath(
        amplitude_phi0=0.0, rates_hz=np.array([1e3, 1e4]), lambda_min_hz=1e2, lambda_max_hz=1e5
    )
    traces = sample_bath_traces(bath, 2048, 100e-9, 4, master_seed=24)
    est = estimate_psd(traces, 100e-9, normalization_frequency_hz=1e5)
    assert np.all(est.values == 0.0)


def test_psd_normalization_and_validation():
    rng = substream(25, 0)
    traces = rng.standard_normal((8, 1024))
    est = estimate_psd(traces, 1e-7, normalization_frequency_hz=1e6)
    idx = np.argmin(np.abs(est.frequencies_hz - est.normalization_frequency_hz))
    assert est.values[idx] == pytest.approx(1.0)
    assert np.all(est.values >= 0)
    with pytest.raises(ParameterError):
        estimate_psd(traces, 1e-7, normalization_frequency_hz=1e9)  # beyond Nyquist
    with pytest.raises(ParameterError):
        estimate_psd(traces, 1e-7, window="flying")
    with pytest.raises(ParameterError):
        estimate_psd(traces[:, :1], 1e-7)
    hann = estimate_psd(traces, 1e-7, normalization_frequency_hz=1e6, window="hann")
    assert hann.values.shape == est.values.shape


def test_sample_bath_traces_reproducible_across_threads():
    bath = build_flicker_bath(100, 1e-6, 1e2, 1e8, substream(26, 0))
    a = sample_bath_traces(bath, 2048, 100e-9, 8, master_seed=26, threads=1)
    b = sample_bath_traces(bath, 2048, 100e-9, 8, master_seed=26, threads=4)
    assert np.array_equal(a, b)


def test_sample_bath_traces_second_moment():
    # stationary variance of the cell-averaged sum must match the exact
    # formula Var = sum_i (2 b^2/(a_i d)) (1 - (1 - e^(-a_i d))/(a_i d))
    bath = build_flicker_bath(200, 1e-6, 1e3, 1e8, substream(27, 0))
    dt = 100e-9
    traces = sample_bath_traces(bath, 4096, dt, 100, master_seed=27)
    a = 2.0 * bath.rates_hz * dt
    rho = np.exp(-a)
    var_exact = (2 * bath.amplitude_phi0**2 / a * (1 - (1 - rho) / a)).sum()
    var_mc = traces.var()
    assert var_mc == pytest.approx(var_exact, rel=0.05)
