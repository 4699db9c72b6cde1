"""Monte Carlo Ramsey dephasing of a flux-tunable transmon.

Each repetition draws one realization of every noise source (a 1/f bath of
telegraph fluctuators plus any strong individual fluctuators), accumulates
the dephasing phase along the free-evolution time axis, and contributes
exp(i*phase).  The ensemble average D(t) = <exp(i*phase(t))> multiplies the
relaxation factor exp(-t/(2*T1)) to give the fringe envelope, and the
excited-state probability read out after the second pi/2 pulse is

    p1(t) = (1 + Re[exp(i*delta_omega*t) * D(t)] * exp(-t/(2*T1))) / 2

with delta_omega the deliberate detuning.  Any residual mean phase of D is
folded into the oscillation rather than the envelope.

Two phase-accumulation modes are supported:

- "linearized" (default): phase = (domega01/dphi) * integral of the summed
  flux deviation, using the exact piecewise integral of every telegraph
  path; grid free.
- "grid": rectangle-rule sum of omega01(phi_b + dphi(tau)) - omega01(phi_b)
  on a fine uniform grid (default 0.2 ns), keeping the full nonlinearity of
  the transmon spectrum.  Slow; it exists as the fidelity reference for the
  linearized mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import fit as fit_mod
from ._rng import (
    STREAM_BATH_RATES,
    STREAM_REPETITION,
    indexed_map,
    substream,
)
from .errors import DomainError, ParameterError, RangeError
from .noise import (
    FlickerBath,
    PathBundle,
    RtnPath,
    RtnSource,
    build_flicker_bath,
    rtn_integral,
    rtn_value_at,
    sample_path_bundle,
    sample_rtn_path,
)
from .qubit import TransmonParams, WorkingPoint, invert_frequency, transmon_frequency

MODES = ("linearized", "grid")


@dataclass(frozen=True)
class BathSpec:
    """Parameters of the 1/f bath attached to a Ramsey run."""

    n_sources: int = 3000
    amplitude_phi0: float = 1e-6
    lambda_min_hz: float = 1e2
    lambda_max_hz: float = 1e6

    def __post_init__(self) -> None:
        if self.n_sources < 1:
            raise ParameterError(f"n_sources must be >= 1, got {self.n_sources}")
        if not (0 < self.lambda_min_hz < self.lambda_max_hz):
            raise ParameterError("need 0 < lambda_min < lambda_max")

    def build(self, rng: np.random.Generator) -> FlickerBath:
        return build_flicker_bath(
            self.n_sources, self.amplitude_phi0, self.lambda_min_hz, self.lambda_max_hz, rng
        )


@dataclass(frozen=True)
class RamseyConfig:
    """Everything one Ramsey Monte Carlo run needs."""

    params: TransmonParams = TransmonParams()
    phi_b: float = -0.06051
    t1_s: float = 20e-6
    delta_omega_rad_s: float = 2.0 * math.pi * 5e5
    horizon_s: float = 50e-6
    output_step_s: float = 50e-9
    repetitions: int = 3000
    mode: str = "linearized"
    integration_step_s: float = 0.2e-9
    master_seed: int = 12345
    threads: int = 1
    bath: BathSpec | None = None
    strong: tuple[RtnSource, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.horizon_s > 0 and math.isfinite(self.horizon_s)):
            raise ParameterError(f"horizon_s must be positive and finite, got {self.horizon_s}")
        if not (0 < self.output_step_s <= self.horizon_s):
            raise ParameterError("output_step_s must lie in (0, horizon_s]")
        if not (0 < self.integration_step_s <= self.horizon_s):
            raise ParameterError("integration_step_s must lie in (0, horizon_s]")
        if self.repetitions < 1:
            raise ParameterError(f"repetitions must be >= 1, got {self.repetitions}")
        if not self.t1_s > 0:
            raise ParameterError(f"t1_s must be positive, got {self.t1_s}")
        if self.threads < 1:
            raise ParameterError(f"threads must be >= 1, got {self.threads}")
        object.__setattr__(self, "strong", tuple(self.strong))

    def output_times(self) -> np.ndarray:
        n = int(math.floor(self.horizon_s / self.output_step_s + 1e-9))
        return self.output_step_s * np.arange(n + 1)


@dataclass(frozen=True)
class NoiseRealization:
    """One repetition's worth of sampled noise paths."""

    bath_bundle: PathBundle | None
    strong_paths: tuple[RtnPath, ...]
    horizon_s: float

    def flux_value(self, t):
        """Summed flux deviation of every source at time(s) t, in Phi0."""
        total = np.zeros(np.shape(t)) if np.ndim(t) else 0.0
        if self.bath_bundle is not None:
            total = total + self.bath_bundle.value_sum_at(t)
        for p in self.strong_paths:
            total = total + rtn_value_at(p, t)
        return total

    def flux_integral(self, t):
        """Summed exact integral of the flux deviation from 0 to t, in Phi0*s."""
        total = np.zeros(np.shape(t)) if np.ndim(t) else 0.0
        if self.bath_bundle is not None:
            total = total + self.bath_bundle.integral_sum_at(t)
        for p in self.strong_paths:
            total = total + rtn_integral(p, t)
        return total


def build_noise_realization(
    bath: FlickerBath | None,
    strong: Sequence[RtnSource],
    horizon_s: float,
    rng: np.random.Generator,
) -> NoiseRealization:
    """Draw one path per source; bath first, then strong sources in order."""
    bundle = None
    if bath is not None:
        amps = np.full(bath.n_sources, bath.amplitude_phi0)
        bundle = sample_path_bundle(bath.rates_hz, amps, horizon_s, rng)
    paths = tuple(sample_rtn_path(s, horizon_s, rng) for s in strong)
    return NoiseRealization(bath_bundle=bundle, strong_paths=paths, horizon_s=horizon_s)


def accumulate_phase(
    realization: NoiseRealization,
    working_point: WorkingPoint,
    times: np.ndarray,
    mode: str = "linearized",
    integration_step_s: float = 0.2e-9,
) -> np.ndarray:
    """Dephasing phase (rad) accumulated by ``times`` for one realization."""
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    t = np.asarray(times, dtype=float)
    if np.any(t < 0) or np.any(t > realization.horizon_s):
        raise RangeError("times must lie within [0, horizon]")
    if mode == "linearized":
        return working_point.domega_dphi * realization.flux_integral(t)
    dt = float(integration_step_s)
    n_cells = int(math.ceil(t.max() / dt - 1e-12)) if t.max() > 0 else 0
    tau = dt * np.arange(n_cells)
    if n_cells:
        dphi = realization.flux_value(tau)
        delta_w = (
            transmon_frequency(working_point.params, working_point.phi_b + dphi)
            - working_point.omega01
        )
    else:
        delta_w = np.zeros(0)
    cum = np.concatenate([[0.0], np.cumsum(delta_w) * dt])
    idx = np.minimum((t / dt).astype(int), n_cells)
    frac = t - idx * dt
    edge = np.minimum(idx, max(n_cells - 1, 0))
    last = delta_w[edge] if n_cells else np.zeros_like(t)
    return cum[idx] + frac * last


@dataclass(frozen=True)
class DecayTrace:
    """Monte Carlo decay factor and derived Ramsey observables on a time grid."""

    times_s: np.ndarray
    decay: np.ndarray  # complex <exp(i*phase)>
    envelope: np.ndarray
    p1: np.ndarray
    delta_omega_rad_s: float
    repetitions: int
    failures: tuple[tuple[int, str], ...] = ()


def ramsey_curve(times: np.ndarray, decay: np.ndarray, t1_s: float, delta_omega_rad_s: float) -> np.ndarray:
    """Excited-state probability from a decay factor, detuning, and relaxation."""
    t = np.asarray(times, dtype=float)
    relax = np.exp(-t / (2.0 * t1_s)) if not math.isinf(t1_s) else np.ones_like(t)
    return 0.5 * (1.0 + relax * (np.exp(1j * delta_omega_rad_s * t) * decay).real)


def decay_factor_mc(
    config: RamseyConfig,
    bath: FlickerBath | None = None,
    stream_prefix: tuple[int, ...] = (),
) -> DecayTrace:
    """Run the Ramsey Monte Carlo described in the module docstring.

    The bath's switching rates are drawn once (stream (seed, bath-rates))
    and shared by all repetitions; repetition m draws its paths from stream
    (seed, repetition, *stream_prefix, m), so results are independent of
    thread count.  A repetition that raises is recorded in ``failures`` and
    excluded from the average instead of aborting the ensemble.
    """
    if bath is None and config.bath is not None:
        bath = config.bath.build(substream(config.master_seed, STREAM_BATH_RATES))
    wp = WorkingPoint.at_flux(config.params, config.phi_b)
    times = config.output_times()
    rows = np.zeros((config.repetitions, times.size), dtype=complex)
    ok = np.zeros(config.repetitions, dtype=bool)
    errors: list[tuple[int, str]] = []

    def one(m: int) -> None:
        rng = substream(config.master_seed, STREAM_REPETITION, *stream_prefix, m)
        try:
            realization = build_noise_realization(bath, config.strong, config.horizon_s, rng)
            phase = accumulate_phase(
                realization, wp, times, config.mode, config.integration_step_s
            )
            rows[m] = np.exp(1j * phase)
            ok[m] = True
        except Exception as exc:  # noqa: BLE001 - per-repetition fault isolation
            errors.append((m, repr(exc)))

    indexed_map(one, config.repetitions, config.threads)
    if not ok.any():
        raise ParameterError(
            f"every repetition failed; first failure: {sorted(errors)[0][1] if errors else 'unknown'}"
        )
    decay = rows[ok].mean(axis=0)
    relax = np.exp(-times / (2.0 * config.t1_s)) if not math.isinf(config.t1_s) else np.ones_like(times)
    envelope = np.abs(decay) * relax
    p1 = ramsey_curve(times, decay, config.t1_s, config.delta_omega_rad_s)
    return DecayTrace(
        times_s=times,
        decay=decay,
        envelope=envelope,
        p1=p1,
        delta_omega_rad_s=config.delta_omega_rad_s,
        repetitions=int(ok.sum()),
        failures=tuple(sorted(errors)),
    )


def binomial_readout(p1: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Finite-sampling emulation: binomial counts over ``shots`` per point."""
    if shots < 1:
        raise ParameterError(f"shots must be >= 1, got {shots}")
    probs = np.clip(np.asarray(p1, dtype=float), 0.0, 1.0)
    return rng.binomial(shots, probs) / float(shots)


def doublet_splitting(working_point: WorkingPoint, amplitude_phi0: float) -> float:
    """Fringe-splitting estimate 2*|domega01/dphi|*b for one strong fluctuator."""
    return 2.0 * abs(working_point.domega_dphi) * amplitude_phi0


def beating_envelope_model(times, base_envelope, delta_omega_split: float):
    """Slow-fluctuator beating: envelope * |cos(delta_omega_split * t / 2)|."""
    if delta_omega_split < 0:
        raise ParameterError(f"delta_omega_split must be >= 0, got {delta_omega_split}")
    t = np.asarray(times, dtype=float)
    return np.asarray(base_envelope, dtype=float) * np.abs(np.cos(0.5 * delta_omega_split * t))


def multi_rtn_envelope_model(times, base_envelope, couplings_rad_s):
    """Independent slow fluctuators multiply: envelope * prod_j |cos(v_j * t)|."""
    t = np.asarray(times, dtype=float)
    out = np.asarray(base_envelope, dtype=float).copy()
    for v in couplings_rad_s:
        out *= np.abs(np.cos(float(v) * t))
    return out


def distribute_amplitudes(total_amplitude_phi0: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Split a total amplitude uniformly on the simplex (ordered uniform gaps)."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not total_amplitude_phi0 >= 0:
        raise ParameterError(f"total amplitude must be >= 0, got {total_amplitude_phi0}")
    cuts = np.sort(rng.random(n - 1))
    return np.diff(np.concatenate([[0.0], cuts, [1.0]])) * total_amplitude_phi0


def beating_contrast(
    times: np.ndarray,
    envelope: np.ndarray,
    reference_envelope: np.ndarray,
    delta_omega_split: float,
) -> float:
    """Depth of the first beat node: 1 - envelope/reference at t = pi/delta_omega_split.

    ``delta_omega_split`` is the doublet splitting the total amplitude would
    produce if carried by a single fluctuator; its envelope |cos(split*t/2)|
    has its first node at pi/split.  A full node gives contrast ~1; splitting
    the amplitude across several fluctuators fills the node in and the
    contrast drops toward 0.  The node value is linearly interpolated from
    the two bracketing grid points; the reference envelope is the noise-free
    (no strong RTN) one.

    Measuring at the fixed node time, rather than min over the beat window,
    keeps the metric monotone under amplitude splitting: a split ensemble
    still has envelope zeros of its own inside the window, just elsewhere.
    """
    if not delta_omega_split > 0:
        raise ParameterError("delta_omega_split must be positive")
    t = np.asarray(times, dtype=float)
    t_node = math.pi / delta_omega_split
    if t_node <= t[0] or t_node > t[-1]:
        raise ParameterError(
            f"first beat node at {t_node:.3e} s falls outside the time grid "
            f"[{t[0]:.3e}, {t[-1]:.3e}]"
        )
    env = np.interp(t_node, t, np.asarray(envelope, dtype=float))
    ref = np.interp(t_node, t, np.asarray(reference_envelope, dtype=float))
    if ref <= 1e-12:
        raise ParameterError("reference envelope vanishes at the beat node")
    return float(1.0 - env / ref)


@dataclass(frozen=True)
class SweepResult:
    """Envelopes and fitted decay times across a qubit-frequency sweep."""

    f01_hz: np.ndarray
    phi_b: np.ndarray
    times_s: np.ndarray
    envelopes: np.ndarray  # (n_rows, n_times)
    t2star_s: np.ndarray
    fit_converged: np.ndarray
    skipped: tuple[tuple[float, str], ...] = ()


def frequency_sweep(f01_grid_hz: Sequence[float], base: RamseyConfig) -> SweepResult:
    """Repeat the Ramsey Monte Carlo across target qubit frequencies.

    The bath (its switching rates) is drawn once and shared by every row;
    row i uses repetition streams (seed, repetition, i, m).  Unattainable
    frequencies are skipped and reported in ``skipped``; T2* per surviving
    row comes from a pure-exponential envelope fit.
    """
    grid = np.asarray(list(f01_grid_hz), dtype=float)
    if grid.size < 1:
        raise ParameterError("f01 grid must contain at least one frequency")
    bath = None
    if base.bath is not None:
        bath = base.bath.build(substream(base.master_seed, STREAM_BATH_RATES))
    times = base.output_times()
    kept_f01: list[float] = []
    kept_phi: list[float] = []
    rows: list[np.ndarray] = []
    skipped: list[tuple[float, str]] = []
    for i, f01 in enumerate(grid):
        try:
            phi = invert_frequency(base.params, float(f01))
        except DomainError as exc:
            skipped.append((float(f01), str(exc)))
            continue
        trace = decay_factor_mc(replace(base, phi_b=phi), bath=bath, stream_prefix=(i,))
        kept_f01.append(float(f01))
        kept_phi.append(phi)
        rows.append(trace.envelope)
    if not rows:
        raise ParameterError("every requested frequency was unattainable")
    envelopes = np.asarray(rows)
    results = fit_mod.extract_t2star_sweep(times, envelopes)
    t2 = np.array([1.0 / r.gamma if r.converged and r.gamma > 0 else math.nan for r in results])
    conv = np.array([r.converged for r in results], dtype=bool)
    return SweepResult(
        f01_hz=np.asarray(kept_f01),
        phi_b=np.asarray(kept_phi),
        times_s=times,
        envelopes=envelopes,
        t2star_s=t2,
        fit_converged=conv,
        skipped=tuple(skipped),
    )
