"""Telegraph and 1/f flux-noise processes: sampling, exact integrals, spectra.

A single fluctuator is a random telegraph process

    RTN(t) = s0 * b * (-1)^N(t)

with N(t) a Poisson counting process of rate ``lambda`` (switches per
second), s0 a fair random initial sign, and b the flux coupling amplitude in
Phi0 units.  A path is sampled by drawing the number of switches on the
horizon from Poisson(lambda*T) and placing them at sorted uniform times.

Because every Poisson event flips the sign, the sign autocorrelation of a
sampled path decays at *twice* the event rate:

    E[RTN(t) RTN(s)] = b^2 * exp(-2*lambda*|t - s|)

(the parity of a Poisson(lambda*tau) count is even with probability
(1 + exp(-2*lambda*tau))/2).  ``SIGN_CORRELATION_RATE_FACTOR`` records this;
theory curves compared against sampled ensembles must use the knee
2*lambda, while :func:`lorentzian_psd` keeps the conventional form
2*lambda/(omega^2 + lambda^2) in which ``lambda`` denotes the correlation
decay rate itself.

A 1/f bath is the sum of many independent fluctuators of equal amplitude
whose rates are log-uniform on [lambda_min, lambda_max].  Summing their
Lorentzians gives a spectrum proportional to 1/omega in the band
lambda_min << omega << lambda_max.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._rng import STREAM_TRACE, indexed_map, substream
from .errors import ParameterError, RangeError

# Validation bound on per-fluctuator coupling, in Phi0 units.  The linearized
# phase treatment downstream is only trusted for weak coupling.
MAX_AMPLITUDE_PHI0 = 0.01

# Empirical decay rate of the sampled sign autocorrelation, in units of the
# Poisson event rate.  Fixed by the process definition (see module docstring)
# and confirmed by the brute-force two-time-product test.
SIGN_CORRELATION_RATE_FACTOR = 2.0

# Fluctuators with switching_rate * dt above this are aggregated as an
# exact-covariance Gaussian when synthesizing grid traces (see
# sample_bath_traces); slower ones are sampled switch by switch.
FAST_SPLIT_THRESHOLD = 0.25


@dataclass(frozen=True)
class RtnSource:
    """One telegraph fluctuator: switching rate in Hz, amplitude in Phi0."""

    switching_rate_hz: float
    amplitude_phi0: float

    def __post_init__(self) -> None:
        if not (self.switching_rate_hz >= 0 and math.isfinite(self.switching_rate_hz)):
            raise ParameterError(
                f"switching_rate_hz must be non-negative and finite, got {self.switching_rate_hz}"
            )
        if not (0.0 <= self.amplitude_phi0 <= MAX_AMPLITUDE_PHI0):
            raise ParameterError(
                f"amplitude_phi0 must lie in [0, {MAX_AMPLITUDE_PHI0}], got {self.amplitude_phi0}"
            )


@dataclass(frozen=True)
class RtnPath:
    """One realization of a telegraph process on [0, horizon].

    ``switch_times`` must be strictly increasing and inside the horizon;
    ``initial_sign`` is +1 or -1.  The path value at time t is
    initial_sign * b * (-1)^k with k the number of switches at or before t.
    """

    source: RtnSource
    initial_sign: int
    switch_times: np.ndarray
    horizon_s: float

    def __post_init__(self) -> None:
        if self.initial_sign not in (-1, 1):
            raise ParameterError(f"initial_sign must be +1 or -1, got {self.initial_sign}")
        if not (self.horizon_s > 0 and math.isfinite(self.horizon_s)):
            raise ParameterError(f"horizon_s must be positive and finite, got {self.horizon_s}")
        times = np.asarray(self.switch_times, dtype=float)
        if times.ndim != 1:
            raise ParameterError("switch_times must be one-dimensional")
        if times.size:
            if times[0] < 0.0 or times[-1] > self.horizon_s:
                raise ParameterError("switch_times must lie within [0, horizon]")
            if np.any(np.diff(times) <= 0.0):
                raise ParameterError("switch_times must be strictly increasing")
        object.__setattr__(self, "switch_times", times)


def sample_switching_rate(lambda_min_hz: float, lambda_max_hz: float, u) :
    """Map uniform variates u in [0, 1] to rates log-uniform on [lambda_min, lambda_max].

    Inverse-CDF of the density P(lambda) proportional to 1/lambda:
    u = 0 gives lambda_min, u = 1 gives lambda_max, u = 0.5 the geometric
    midpoint sqrt(lambda_min * lambda_max).
    """
    if not (0 < lambda_min_hz < lambda_max_hz) or not math.isfinite(lambda_max_hz):
        raise ParameterError(
            f"need 0 < lambda_min < lambda_max finite, got [{lambda_min_hz}, {lambda_max_hz}]"
        )
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr < 0.0) | (u_arr > 1.0)):
        raise ParameterError("u must lie in [0, 1]")
    out = lambda_min_hz * (lambda_max_hz / lambda_min_hz) ** u_arr
    return out if np.ndim(u) else float(out)


def sample_rtn_path(source: RtnSource, horizon_s: float, rng: np.random.Generator) -> RtnPath:
    """Draw one telegraph path: Poisson switch count, sorted uniform times, fair sign."""
    if not (horizon_s > 0 and math.isfinite(horizon_s)):
        raise ParameterError(f"horizon_s must be positive and finite, got {horizon_s}")
    n = int(rng.poisson(source.switching_rate_hz * horizon_s))
    times = np.sort(rng.random(n)) * horizon_s
    sign = 1 if rng.random() < 0.5 else -1
    return RtnPath(source=source, initial_sign=sign, switch_times=times, horizon_s=horizon_s)


def _check_query_times(t, horizon_s: float) -> np.ndarray:
    t_arr = np.asarray(t, dtype=float)
    if np.any((t_arr < 0.0) | (t_arr > horizon_s)):
        raise RangeError(f"query times must lie in [0, {horizon_s}]")
    return t_arr


def rtn_value_at(path: RtnPath, t):
    """Path value at time(s) t; a switch exactly at t counts as having happened."""
    t_arr = _check_query_times(t, path.horizon_s)
    k = np.searchsorted(path.switch_times, t_arr, side="right")
    out = path.initial_sign * path.source.amplitude_phi0 * np.where(k % 2 == 0, 1.0, -1.0)
    return out if np.ndim(t) else float(out)


def rtn_integral(path: RtnPath, t):
    """Exact integral of the path from 0 to t (piecewise-linear, grid free).

    With k switches t_1 < ... < t_k <= t the integral is
    s0 * b * (sum_j (-1)^(j+1) * 2 * t_j  +  (-1)^k * t).
    """
    t_arr = _check_query_times(t, path.horizon_s)
    times = path.switch_times
    alt = np.where(np.arange(times.size) % 2 == 0, 1.0, -1.0)
    prefix = np.concatenate([[0.0], 2.0 * np.cumsum(alt * times)])
    k = np.searchsorted(times, t_arr, side="right")
    parity = np.where(k % 2 == 0, 1.0, -1.0)
    out = path.initial_sign * path.source.amplitude_phi0 * (prefix[k] + parity * t_arr)
    return out if np.ndim(t) else float(out)


class PathBundle:
    """Many telegraph paths over one horizon, stored as flat arrays.

    Equivalent to a list of RtnPath but supports vectorized evaluation of the
    summed value and the summed exact integral over all member paths, which
    is what the dephasing pipeline needs.  Construction sorts all switch
    events once; value/integral queries are then searchsorted lookups.
    """

    def __init__(
        self,
        amplitudes_phi0: np.ndarray,
        initial_signs: np.ndarray,
        counts: np.ndarray,
        times_grouped: np.ndarray,
        horizon_s: float,
        rates_hz: np.ndarray | None = None,
    ) -> None:
        self.amplitudes_phi0 = np.asarray(amplitudes_phi0, dtype=float)
        self.initial_signs = np.asarray(initial_signs, dtype=int)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.times_grouped = np.asarray(times_grouped, dtype=float)
        self.horizon_s = float(horizon_s)
        self.rates_hz = None if rates_hz is None else np.asarray(rates_hz, dtype=float)
        n = self.amplitudes_phi0.size
        if not (self.initial_signs.size == n and self.counts.size == n):
            raise ParameterError("bundle arrays disagree on the number of paths")
        if self.counts.sum() != self.times_grouped.size:
            raise ParameterError("switch-time array length does not match counts")
        self._starts = np.concatenate([[0], np.cumsum(self.counts)])
        self._build_events()

    def _build_events(self) -> None:
        # Flatten to a single time-ordered event list.  Each event toggles its
        # owner's contribution; the jump size depends on the owner's switch
        # parity, recovered with a stable argsort by owner of the time-ordered
        # sequence (stability keeps events time-ordered within each owner).
        k_total = self.times_grouped.size
        owners = np.repeat(np.arange(self.counts.size), self.counts)
        order_t = np.argsort(self.times_grouped, kind="stable")
        t_sorted = self.times_grouped[order_t]
        owners_t = owners[order_t]
        group = np.argsort(owners_t, kind="stable")
        ranks_grouped = np.arange(k_total) - np.repeat(self._starts[:-1], self.counts)
        ranks_t = np.empty(k_total, dtype=np.int64)
        ranks_t[group] = ranks_grouped
        signed_amp = self.amplitudes_phi0 * self.initial_signs
        deltas_t = -2.0 * signed_amp[owners_t] * (1.0 - 2.0 * (ranks_t % 2))
        base = float(signed_amp.sum())
        # levels[j]: summed value after j events; event_integral[j]: exact
        # integral of the sum from 0 to the j-th event time.
        self._event_times = np.concatenate([[0.0], t_sorted])
        self._levels = base + np.concatenate([[0.0], np.cumsum(deltas_t)])
        self._event_integral = np.concatenate(
            [[0.0], np.cumsum(self._levels[:-1] * np.diff(self._event_times))]
        )

    @property
    def n_paths(self) -> int:
        return self.amplitudes_phi0.size

    def path(self, i: int) -> RtnPath:
        """Materialize member i as an RtnPath (sorting its own switch times)."""
        sl = slice(self._starts[i], self._starts[i + 1])
        rate = 1.0 if self.rates_hz is None else float(self.rates_hz[i])
        src = RtnSource(switching_rate_hz=rate, amplitude_phi0=float(self.amplitudes_phi0[i]))
        return RtnPath(
            source=src,
            initial_sign=int(self.initial_signs[i]),
            switch_times=np.sort(self.times_grouped[sl]),
            horizon_s=self.horizon_s,
        )

    def value_sum_at(self, t):
        """Sum of all member values at time(s) t."""
        t_arr = _check_query_times(t, self.horizon_s)
        k = np.searchsorted(self._event_times[1:], t_arr, side="right")
        out = self._levels[k]
        return out if np.ndim(t) else float(out)

    def integral_sum_at(self, t):
        """Sum over members of the exact integral from 0 to t."""
        t_arr = _check_query_times(t, self.horizon_s)
        k = np.searchsorted(self._event_times[1:], t_arr, side="right")
        out = self._event_integral[k] + self._levels[k] * (t_arr - self._event_times[k])
        return out if np.ndim(t) else float(out)


def sample_path_bundle(
    rates_hz: np.ndarray,
    amplitudes_phi0: np.ndarray,
    horizon_s: float,
    rng: np.random.Generator,
) -> PathBundle:
    """Sample one path per (rate, amplitude) pair as a PathBundle.

    Each member follows the same law as :func:`sample_rtn_path`.  Draw order
    (counts vector, all switch times, all signs) is fixed and part of the
    reproducibility contract.
    """
    rates = np.asarray(rates_hz, dtype=float)
    amps = np.asarray(amplitudes_phi0, dtype=float)
    if rates.shape != amps.shape or rates.ndim != 1:
        raise ParameterError("rates and amplitudes must be 1-D arrays of equal length")
    if not (horizon_s > 0 and math.isfinite(horizon_s)):
        raise ParameterError(f"horizon_s must be positive and finite, got {horizon_s}")
    counts = rng.poisson(rates * horizon_s)
    times = rng.random(int(counts.sum())) * horizon_s
    signs = rng.integers(0, 2, size=rates.size) * 2 - 1
    return PathBundle(
        amplitudes_phi0=amps,
        initial_signs=signs,
        counts=counts,
        times_grouped=times,
        horizon_s=horizon_s,
        rates_hz=rates,
    )


@dataclass(frozen=True)
class FlickerBath:
    """A set of equal-amplitude fluctuators with log-uniform switching rates."""

    amplitude_phi0: float
    rates_hz: np.ndarray
    lambda_min_hz: float
    lambda_max_hz: float

    def __post_init__(self) -> None:
        rates = np.asarray(self.rates_hz, dtype=float)
        if rates.ndim != 1 or rates.size == 0:
            raise ParameterError("rates_hz must be a non-empty 1-D array")
        if not (0 < self.lambda_min_hz < self.lambda_max_hz):
            raise ParameterError("need 0 < lambda_min < lambda_max")
        if np.any(rates < self.lambda_min_hz) or np.any(rates > self.lambda_max_hz):
            raise ParameterError("bath rates must lie within [lambda_min, lambda_max]")
        if not (0.0 <= self.amplitude_phi0 <= MAX_AMPLITUDE_PHI0):
            raise ParameterError(
                f"amplitude_phi0 must lie in [0, {MAX_AMPLITUDE_PHI0}], got {self.amplitude_phi0}"
            )
        object.__setattr__(self, "rates_hz", rates)

    @property
    def n_sources(self) -> int:
        return self.rates_hz.size

    @property
    def density_prefactor(self) -> float:
        """P0 = N / ln(lambda_max/lambda_min), the log-uniform rate density."""
        return self.n_sources / math.log(self.lambda_max_hz / self.lambda_min_hz)

    def sources(self) -> list[RtnSource]:
        return [
            RtnSource(switching_rate_hz=float(r), amplitude_phi0=self.amplitude_phi0)
            for r in self.rates_hz
        ]

    def log_rate_ks_pvalue(self) -> float:
        """KS p-value of log(rates) against the uniform law they should follow."""
        from scipy import stats

        span = math.log(self.lambda_max_hz) - math.log(self.lambda_min_hz)
        u = (np.log(self.rates_hz) - math.log(self.lambda_min_hz)) / span
        return float(stats.kstest(u, "uniform").pvalue)

    def check_log_uniformity(self, significance: float = 0.01) -> None:
        p = self.log_rate_ks_pvalue()
        if p < significance:
            raise ParameterError(
                f"bath rates fail log-uniformity (KS p = {p:.3g} < {significance})"
            )


def build_flicker_bath(
    n_sources: int,
    amplitude_phi0: float,
    lambda_min_hz: float,
    lambda_max_hz: float,
    rng: np.random.Generator,
) -> FlickerBath:
    """Draw a bath of ``n_sources`` log-uniform rates at a common amplitude."""
    if n_sources < 1:
        raise ParameterError(f"n_sources must be >= 1, got {n_sources}")
    rates = sample_switching_rate(lambda_min_hz, lambda_max_hz, rng.random(n_sources))
    return FlickerBath(
        amplitude_phi0=amplitude_phi0,
        rates_hz=np.asarray(rates, dtype=float),
        lambda_min_hz=lambda_min_hz,
        lambda_max_hz=lambda_max_hz,
    )


def flicker_value_at(paths: Sequence[RtnPath], t):
    """Sum of telegraph path values at time(s) t (one bath realization)."""
    if len(paths) == 0:
        return np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else 0.0
    total = rtn_value_at(paths[0], t)
    for p in paths[1:]:
        total = total + rtn_value_at(p, t)
    return total


def lorentzian_psd(switching_rate_hz: float, amplitude_phi0: float, omega_rad_s):
    """Lorentzian spectrum b^2 * 2*lambda / (omega^2 + lambda^2).

    ``switching_rate_hz`` plays the role of the correlation decay rate; for
    a spectrum matching a *sampled* telegraph ensemble pass
    SIGN_CORRELATION_RATE_FACTOR times the event rate.
    """
    if not switching_rate_hz > 0:
        raise ParameterError(f"switching_rate_hz must be positive, got {switching_rate_hz}")
    if amplitude_phi0 < 0:
        raise ParameterError(f"amplitude_phi0 must be >= 0, got {amplitude_phi0}")
    w = np.asarray(omega_rad_s, dtype=float)
    out = amplitude_phi0**2 * 2.0 * switching_rate_hz / (w**2 + switching_rate_hz**2)
    return out if np.ndim(omega_rad_s) else float(out)


@dataclass(frozen=True)
class FlickerPsdTheory:
    """Three theory curves for one bath on a common angular-frequency grid."""

    omega_rad_s: np.ndarray
    lorentzian_sum: np.ndarray
    integral_form: np.ndarray
    one_over_f: np.ndarray


def flicker_psd_theory(bath: FlickerBath, omega_rad_s) -> FlickerPsdTheory:
    """Bath spectrum three ways: exact member sum, rate-integral, 1/f asymptote.

    - lorentzian_sum: sum of member Lorentzians at the bath's actual rates;
    - integral_form: 2 b^2 P0 (arctan(lambda_max/omega) - arctan(lambda_min/omega)) / omega,
      the continuum limit of the sum for log-uniform rates;
    - one_over_f: pi * b^2 * P0 / omega, the mid-band asymptote.
    """
    w = np.atleast_1d(np.asarray(omega_rad_s, dtype=float))
    if np.any(w <= 0):
        raise ParameterError("omega_rad_s must be positive")
    b2 = bath.amplitude_phi0**2
    total = np.zeros_like(w)
    for start in range(0, bath.n_sources, 512):
        lam = bath.rates_hz[start : start + 512, None]
        total += (2.0 * b2 * lam / (w[None, :] ** 2 + lam**2)).sum(axis=0)
    p0 = bath.density_prefactor
    integral = 2.0 * b2 * p0 * (np.arctan(bath.lambda_max_hz / w) - np.arctan(bath.lambda_min_hz / w)) / w
    asymptote = math.pi * b2 * p0 / w
    return FlickerPsdTheory(
        omega_rad_s=w, lorentzian_sum=total, integral_form=integral, one_over_f=asymptote
    )


# ---------------------------------------------------------------------------
# Grid-trace synthesis for spectral estimation
# ---------------------------------------------------------------------------


def _cell_average_covariance(rates_hz: np.ndarray, amplitude: float, dt: float, n_lags: int):
    """Exact autocovariance of per-cell averages of a telegraph sum.

    For one fluctuator with correlation decay a = 2*lambda and cell width d,
    the cell-average process A_j = (1/d) * integral over cell j has

        Var(A)        = (2 b^2/(a d)) * (1 - (1 - rho)/(a d)),   rho = exp(-a d)
        Cov(A_0, A_m) = (b^2/(a d)^2) * (1 - rho)^2 * rho^(m-1),  m >= 1

    Independent fluctuators add.  Returns gamma[0..n_lags].
    """
    a = 2.0 * rates_hz * dt  # a*d, dimensionless
    rho = np.exp(-a)
    b2 = amplitude**2
    var = (2.0 * b2 / a) * (1.0 - (1.0 - rho) / a)
    c1 = (b2 / a**2) * (1.0 - rho) ** 2
    gamma = np.empty(n_lags + 1)
    gamma[0] = var.sum()
    powers = np.ones_like(rho)
    for m in range(1, n_lags + 1):
        gamma[m] = (c1 * powers).sum()
        powers *= rho
    return gamma


class _FastAggregate:
    """Circulant-embedding sampler for the summed fast-fluctuator cell averages.

    The aggregate of many independent bounded fluctuators is Gaussian to CLT
    accuracy; its second-order law (hence the spectrum) is matched exactly via
    the closed-form cell-average covariance, which decays geometrically, so a
    modest circulant embedding is exact up to a ~1e-16 truncation tail.
    """

    def __init__(self, rates_hz: np.ndarray, amplitude: float, dt: float, n_samples: int):
        rho_max = math.exp(-2.0 * float(rates_hz.min()) * dt)
        n_lags = min(n_samples, max(8, int(40.0 / -math.log(rho_max)) + 2))
        gamma = _cell_average_covariance(rates_hz, amplitude, dt, n_lags)
        size = 1 << int(math.ceil(math.log2(n_samples + n_lags + 1)))
        row = np.zeros(size)
        row[: n_lags + 1] = gamma
        row[size - n_lags :] = gamma[1:][::-1]
        eig = np.fft.rfft(row).real
        if eig.min() < -1e-9 * max(gamma[0], 1e-300) * size:
            raise ParameterError("circulant embedding of the fast-bath covariance failed")
        self._sqrt_eig = np.sqrt(np.clip(eig, 0.0, None))
        self._size = size
        self._n_samples = n_samples

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        g = rng.standard_normal(self._size)
        y = np.fft.irfft(np.fft.rfft(g) * self._sqrt_eig, n=self._size)
        return y[: self._n_samples]


def _slow_cell_averages(
    rates_hz: np.ndarray,
    amplitude: float,
    n_samples: int,
    dt: float,
    rng: np.random.Generator,
) -> np.ndarray:
    horizon = n_samples * dt
    bundle = sample_path_bundle(
        rates_hz, np.full(rates_hz.size, amplitude), horizon, rng
    )
    edges = np.arange(n_samples + 1) * dt
    integral = bundle.integral_sum_at(edges)
    return np.diff(integral) / dt


def sample_bath_traces(
    bath: FlickerBath,
    n_samples: int,
    dt_s: float,
    n_realizations: int,
    master_seed: int,
    threads: int = 1,
    split_threshold: float = FAST_SPLIT_THRESHOLD,
) -> np.ndarray:
    """Sample flux-noise traces of the bath on a uniform grid, cell averaged.

    Each returned row m (shape (n_realizations, n_samples)) holds the
    per-cell averages (1/dt) * integral of the summed bath flux over cell j,
    for an independent realization drawn from substream (master_seed, trace, m).

    Cell averaging, rather than point sampling, is what makes spectral
    estimation on this grid faithful: fluctuators switching faster than the
    grid would otherwise fold their full variance into the band as a white
    floor.  Members with rate*dt <= split_threshold are sampled exactly
    switch by switch; the aggregate of faster members is drawn as a Gaussian
    with the exact aggregate covariance (see _FastAggregate).  Pass
    cell_average_correction=True to :func:`estimate_psd` to undo the
    cell-average filter in the spectrum.
    """
    if n_samples < 2:
        raise ParameterError(f"n_samples must be >= 2, got {n_samples}")
    if not dt_s > 0:
        raise ParameterError(f"dt_s must be positive, got {dt_s}")
    if n_realizations < 1:
        raise ParameterError(f"n_realizations must be >= 1, got {n_realizations}")
    fast_mask = bath.rates_hz * dt_s > split_threshold
    slow_rates = bath.rates_hz[~fast_mask]
    fast_rates = bath.rates_hz[fast_mask]
    aggregate = (
        _FastAggregate(fast_rates, bath.amplitude_phi0, dt_s, n_samples)
        if fast_rates.size and bath.amplitude_phi0 > 0
        else None
    )

    def one(m: int) -> np.ndarray:
        rng = substream(master_seed, STREAM_TRACE, m)
        trace = np.zeros(n_samples)
        if slow_rates.size and bath.amplitude_phi0 > 0:
            trace += _slow_cell_averages(slow_rates, bath.amplitude_phi0, n_samples, dt_s, rng)
        if aggregate is not None:
            trace += aggregate.sample(rng)
        return trace

    rows = indexed_map(one, n_realizations, threads)
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# Spectral estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PsdEstimate:
    """Averaged periodogram, normalized to 1 at the bin nearest the requested frequency."""

    frequencies_hz: np.ndarray
    values: np.ndarray
    normalization_frequency_hz: float
    n_realizations: int
    dt_s: float

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.values) < 0):
            raise ParameterError("PSD values must be non-negative")


def estimate_psd(
    traces: np.ndarray,
    dt_s: float,
    normalization_frequency_hz: float = 8e5,
    window: str | None = None,
    cell_average_correction: bool = False,
    max_frequency_hz: float | None = None,
) -> PsdEstimate:
    """Averaged, mean-subtracted periodogram of an ensemble of traces.

    Each realization has its own mean removed, is optionally Hann windowed,
    and contributes |DFT|^2 * dt / n; realizations are averaged in index
    order with one pairwise reduction.  With ``cell_average_correction`` the
    averaged spectrum is divided by sinc^2(f*dt), undoing the transfer
    function of per-cell averaging so the estimate is unbiased for the
    continuous-time spectrum in band.  ``max_frequency_hz`` truncates the
    returned grid; sampling traces at dt/2 and keeping bins up to the
    target grid's Nyquist pushes fold-over out of the reported band (an
    anti-alias filter emulated by oversampling).  Finally the curve is
    scaled so the bin nearest ``normalization_frequency_hz`` reads 1
    (skipped when that bin is exactly zero, e.g. a zero-amplitude bath).
    """
    arr = np.asarray(traces, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ParameterError("traces must be (n_realizations, n_samples >= 2)")
    if not dt_s > 0:
        raise ParameterError(f"dt_s must be positive, got {dt_s}")
    n = arr.shape[1]
    x = arr - arr.mean(axis=1, keepdims=True)
    if window is None or window == "none":
        scale = dt_s / n
    elif window == "hann":
        w = np.hanning(n)
        x = x * w
        scale = dt_s / (n * float(np.mean(w**2)))
    else:
        raise ParameterError(f"unknown window {window!r} (use 'hann' or none)")
    spectra = np.abs(np.fft.rfft(x, axis=1)) ** 2 * scale
    mean_psd = spectra.mean(axis=0)
    freqs = np.fft.rfftfreq(n, dt_s)[1:]
    vals = mean_psd[1:]
    if cell_average_correction:
        vals = vals / np.sinc(freqs * dt_s) ** 2
    if max_frequency_hz is not None:
        if not max_frequency_hz > 0:
            raise ParameterError(f"max_frequency_hz must be positive, got {max_frequency_hz}")
        keep = freqs <= max_frequency_hz * (1.0 + 1e-12)
        if keep.sum() < 2:
            raise ParameterError("max_frequency_hz leaves fewer than two bins")
        freqs, vals = freqs[keep], vals[keep]
    df = freqs[0]
    if not (freqs[0] - 0.5 * df <= normalization_frequency_hz <= freqs[-1] + 0.5 * df):
        raise ParameterError(
            f"normalization frequency {normalization_frequency_hz:.6g} Hz is outside the "
            f"resolvable band [{freqs[0]:.6g}, {freqs[-1]:.6g}] Hz"
        )
    idx = int(np.argmin(np.abs(freqs - normalization_frequency_hz)))
    ref = vals[idx]
    if ref > 0:
        vals = vals / ref
    return PsdEstimate(
        frequencies_hz=freqs,
        values=vals,
        normalization_frequency_hz=float(freqs[idx]),
        n_realizations=arr.shape[0],
        dt_s=dt_s,
    )


def log_log_slope(frequencies_hz: np.ndarray, values: np.ndarray, f_lo: float, f_hi: float) -> float:
    """Least-squares slope of log(values) vs log(f) over [f_lo, f_hi]."""
    f = np.asarray(frequencies_hz, dtype=float)
    v = np.asarray(values, dtype=float)
    mask = (f >= f_lo) & (f <= f_hi) & (v > 0)
    if mask.sum() < 2:
        raise ParameterError("fewer than two usable points in the requested band")
    return float(np.polyfit(np.log(f[mask]), np.log(v[mask]), 1)[0])
