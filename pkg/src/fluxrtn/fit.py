"""Least-squares extraction of Ramsey decay parameters.

Two fringe models are fitted to excited-state probability traces:

    exponential:  p1(t) = (1 + cos(dw*t) * exp(-g*t)) / 2
    beating:      p1(t) = (1 + cos(dw*t) * exp(-g*t) * |cos(ds*t/2)|) / 2

plus a pure-exponential envelope model exp(-g*t) for frequency sweeps.  The
optimizer is a damped least-squares (Levenberg-Marquardt style) loop with
analytic Jacobians; the |cos| factor is handled with a one-sided derivative
at its nodes (sign taken as +1 where cos >= 0).  Damping is adapted
multiplicatively: divided by 3 on a successful step, doubled on a rejected
one.  Iterations cap at 200 with step tolerance 1e-10 and relative cost
tolerance 1e-12.

Initialization is data driven: the oscillation frequency from the dominant
DFT peak of 2*p1 - 1 (parabolic refinement), the decay rate from a
log-linear fit of the rectified envelope hull, and the beat splitting from
two sources: the offset of the strongest DFT sideband flanking the carrier
(the rectified beat factor puts lines at +-ds around it) and the hull's
node-like minima (depth judged against the local decay), which seed starts
at the node spacing 2*pi/dt_nodes and at pi/t_node of the earliest minima.
A nested-model F-test decides whether the beating model is statistically
preferred.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError

MAX_ITERATIONS = 200
STEP_TOL = 1e-10
COST_TOL = 1e-12
MULTI_STARTS = 5
# Oscillation amplitudes below this are treated as non-identifiable rather
# than fitted to noise.
MIN_OSC_AMPLITUDE = 1e-3


@dataclass(frozen=True)
class FitResult:
    model: str
    gamma: float
    delta_omega: float
    delta_omega_split: float
    residual_rms: float
    converged: bool
    iterations: int
    message: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def exponential_ramsey_model(times, gamma: float, delta_omega: float) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    return 0.5 * (1.0 + np.cos(delta_omega * t) * np.exp(-gamma * t))


def beating_ramsey_model(
    times, gamma: float, delta_omega: float, delta_omega_split: float
) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    return 0.5 * (
        1.0
        + np.cos(delta_omega * t) * np.exp(-gamma * t) * np.abs(np.cos(0.5 * delta_omega_split * t))
    )


def _levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    p0: np.ndarray,
) -> tuple[np.ndarray, float, int, bool]:
    p = np.asarray(p0, dtype=float).copy()
    r = residual(p)
    cost = float(r @ r)
    mu = 1e-3
    iterations = 0
    converged = False
    while iterations < MAX_ITERATIONS:
        jac = jacobian(p)
        hess = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(hess).copy()
        diag = np.maximum(diag, 1e-12 * max(float(diag.max()), 1e-300))
        accepted = False
        while iterations < MAX_ITERATIONS:
            iterations += 1
            try:
                step = np.linalg.solve(hess + mu * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess + mu * np.diag(diag), -grad, rcond=None)[0]
            r_new = residual(p + step)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                mu = max(mu / 3.0, 1e-14)
                accepted = True
                break
            mu *= 2.0
            if mu > 1e14:
                return p, cost, iterations, False
        if not accepted:
            break
        step_small = bool(np.all(np.abs(step) <= STEP_TOL * (np.abs(p) + STEP_TOL)))
        cost_drop_small = (cost - cost_new) <= COST_TOL * max(cost, 1e-300)
        p = p + step
        r = r_new
        cost = cost_new
        if step_small or cost_drop_small:
            converged = True
            break
    return p, cost, iterations, converged


def _check_trace(times, p1) -> tuple[np.ndarray, np.ndarray, float]:
    t = np.asarray(times, dtype=float)
    y = np.asarray(p1, dtype=float)
    if t.ndim != 1 or t.shape != y.shape or t.size < 8:
        raise ParameterError("times and p1 must be equal-length 1-D arrays with >= 8 points")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ParameterError("times must be strictly increasing")
    return t, y, float(np.median(dt))


def _init_delta_omega(t: np.ndarray, osc: np.ndarray, dt: float) -> float:
    spec = np.abs(np.fft.rfft(osc - osc.mean()))
    if spec.size < 3:
        return math.pi / (t[-1] - t[0])
    k = int(np.argmax(spec[1:])) + 1
    # Parabolic refinement around the peak bin (log magnitude).
    if 1 <= k < spec.size - 1 and spec[k - 1] > 0 and spec[k + 1] > 0 and spec[k] > 0:
        la, lb, lc = np.log(spec[k - 1 : k + 2])
        denom = la - 2.0 * lb + lc
        shift = 0.5 * (la - lc) / denom if denom < 0 else 0.0
        shift = float(np.clip(shift, -0.5, 0.5))
    else:
        shift = 0.0
    return 2.0 * math.pi * (k + shift) / (osc.size * dt)


def _envelope_hull(t: np.ndarray, osc: np.ndarray, delta_omega0: float, dt: float):
    period = 2.0 * math.pi / max(delta_omega0, 2.0 * math.pi / (t[-1] - t[0] + dt))
    block = max(1, int(round(period / dt)))
    mags = np.abs(osc)
    hull_t, hull_v = [], []
    for start in range(0, osc.size, block):
        stop = min(start + block, osc.size)
        j = start + int(np.argmax(mags[start:stop]))
        hull_t.append(t[j])
        hull_v.append(mags[j])
    return np.asarray(hull_t), np.asarray(hull_v)


def _init_gamma(hull_t: np.ndarray, hull_v: np.ndarray, t_span: float) -> float:
    usable = hull_v > max(1e-4, 0.05 * float(hull_v.max(initial=0.0)))
    if usable.sum() < 2:
        return 1.0 / t_span
    slope = np.polyfit(hull_t[usable], np.log(hull_v[usable]), 1)[0]
    return float(max(-slope, 0.05 / t_span))


def _init_split_sideband(osc: np.ndarray, dt: float, delta_omega0: float) -> float | None:
    """Beat splitting from the strongest DFT sideband flanking the carrier.

    |cos(ds*t/2)| contributes spectral lines at offsets ds, 2*ds, ... around
    the carrier, the +-ds pair carrying about a third of the carrier
    amplitude.  Returns None when nothing rises clearly above the local
    floor, e.g. for a plain exponential fringe.
    """
    spec = np.abs(np.fft.rfft(osc - osc.mean()))
    if spec.size < 8:
        return None
    bin_w = 2.0 * math.pi / (osc.size * dt)
    k0 = delta_omega0 / bin_w
    # keep clear of the carrier's linewidth shoulder
    guard = 3.0
    offsets = np.abs(np.arange(spec.size) - k0)
    search = (offsets > guard) & (np.arange(spec.size) >= 1)
    if search.sum() < 4:
        return None
    floor = float(np.median(spec[search]))
    k = int(np.flatnonzero(search)[np.argmax(spec[search])])
    if spec[k] < 4.0 * floor:
        return None
    shift = 0.0
    if 1 <= k < spec.size - 1 and spec[k - 1] > 0 and spec[k + 1] > 0:
        la, lb, lc = np.log(spec[k - 1 : k + 2])
        denom = la - 2.0 * lb + lc
        if denom < 0:
            shift = float(np.clip(0.5 * (la - lc) / denom, -0.5, 0.5))
    return abs(k + shift - k0) * bin_w


def _hull_minima(hull_t: np.ndarray, hull_v: np.ndarray, gamma0: float) -> np.ndarray:
    """Times of interior local minima of the hull, earliest first.

    Depth is judged relative to the local decay exp(-gamma0*t), otherwise a
    decaying envelope makes every late-time point look like the deepest
    minimum and the beat-node spacing is misread.  Minima deeper than half
    the local envelope are kept; if none qualify, all interior minima are
    returned so the multistart still has something to work with.
    """
    if hull_v.size < 3:
        return np.empty(0)
    interior = np.where((hull_v[1:-1] < hull_v[:-2]) & (hull_v[1:-1] <= hull_v[2:]))[0] + 1
    interior = interior[hull_t[interior] > 0]
    if interior.size == 0:
        return np.empty(0)
    relative = hull_v[interior] * np.exp(np.minimum(gamma0 * hull_t[interior], 600.0))
    node_like = interior[relative < 0.5]
    chosen = node_like if node_like.size else interior
    return np.sort(hull_t[chosen])


def fit_exponential_ramsey(times, p1) -> FitResult:
    """Fit the exponentially decaying fringe model; see module docstring."""
    t, y, dt = _check_trace(times, p1)
    osc = 2.0 * y - 1.0
    if np.max(np.abs(osc)) < MIN_OSC_AMPLITUDE:
        return FitResult(
            model="exponential",
            gamma=math.nan,
            delta_omega=math.nan,
            delta_omega_split=0.0,
            residual_rms=float(np.sqrt(np.mean(osc**2))) / 2.0,
            converged=False,
            iterations=0,
            message="non-identifiable: oscillation amplitude below threshold",
        )
    dw0 = _init_delta_omega(t, osc, dt)
    hull_t, hull_v = _envelope_hull(t, osc, dw0, dt)
    g0 = _init_gamma(hull_t, hull_v, t[-1] - t[0])

    def residual(p: np.ndarray) -> np.ndarray:
        return exponential_ramsey_model(t, p[0], p[1]) - y

    def jacobian(p: np.ndarray) -> np.ndarray:
        g, dw = p
        damp = np.exp(-g * t)
        return np.column_stack(
            [-0.5 * t * np.cos(dw * t) * damp, -0.5 * t * np.sin(dw * t) * damp]
        )

    p, cost, iters, conv = _levenberg_marquardt(residual, jacobian, np.array([g0, dw0]))
    gamma, dw = float(p[0]), abs(float(p[1]))
    message = ""
    if conv and gamma <= 0:
        conv = False
        message = "non-identifiable: fitted envelope does not decay"
    return FitResult(
        model="exponential",
        gamma=gamma,
        delta_omega=dw,
        delta_omega_split=0.0,
        residual_rms=float(np.sqrt(cost / t.size)),
        converged=conv,
        iterations=iters,
        message=message,
    )


def fit_beating_ramsey(times, p1) -> FitResult:
    """Fit the beating fringe model, multi-starting from envelope minima."""
    t, y, dt = _check_trace(times, p1)
    osc = 2.0 * y - 1.0
    if np.max(np.abs(osc)) < MIN_OSC_AMPLITUDE:
        return FitResult(
            model="beating",
            gamma=math.nan,
            delta_omega=math.nan,
            delta_omega_split=math.nan,
            residual_rms=float(np.sqrt(np.mean(osc**2))) / 2.0,
            converged=False,
            iterations=0,
            message="non-identifiable: oscillation amplitude below threshold",
        )
    dw0 = _init_delta_omega(t, osc, dt)
    hull_t, hull_v = _envelope_hull(t, osc, dw0, dt)
    g0 = _init_gamma(hull_t, hull_v, t[-1] - t[0])
    minima = _hull_minima(hull_t, hull_v, g0)
    span = t[-1] - t[0]
    ds_starts: list[float] = []
    sideband = _init_split_sideband(osc, dt, dw0)
    if sideband is not None and sideband > 0:
        ds_starts.append(sideband)
    if minima.size >= 2:
        # consecutive beat nodes are 2*pi/ds apart; the spacing survives
        # even when the first node is missed
        spacing = float(np.median(np.diff(minima)))
        if spacing > 0:
            ds_starts.append(2.0 * math.pi / spacing)
    ds_starts += [math.pi / tm for tm in minima[: MULTI_STARTS - len(ds_starts)] if tm > 0]
    if not ds_starts:
        ds_starts = [math.pi / span]

    def residual(p: np.ndarray) -> np.ndarray:
        return beating_ramsey_model(t, p[0], p[1], p[2]) - y

    def jacobian(p: np.ndarray) -> np.ndarray:
        g, dw, ds = p
        damp = np.exp(-g * t)
        c = np.cos(0.5 * ds * t)
        beat = np.abs(c)
        side = np.where(c >= 0, 1.0, -1.0)  # one-sided at the nodes
        cosw = np.cos(dw * t)
        return np.column_stack(
            [
                -0.5 * t * cosw * damp * beat,
                -0.5 * t * np.sin(dw * t) * damp * beat,
                -0.25 * t * cosw * damp * side * np.sin(0.5 * ds * t),
            ]
        )

    best: tuple[np.ndarray, float, int, bool] | None = None
    total_iters = 0
    for ds0 in ds_starts:
        p, cost, iters, conv = _levenberg_marquardt(
            residual, jacobian, np.array([g0, dw0, ds0])
        )
        total_iters += iters
        if best is None or cost < best[1]:
            best = (p, cost, iters, conv)
    p, cost, _, conv = best
    gamma, dw, ds = float(p[0]), abs(float(p[1])), abs(float(p[2]))
    message = ""
    if conv and gamma <= 0:
        conv = False
        message = "non-identifiable: fitted envelope does not decay"
    return FitResult(
        model="beating",
        gamma=gamma,
        delta_omega=dw,
        delta_omega_split=ds,
        residual_rms=float(np.sqrt(cost / t.size)),
        converged=conv,
        iterations=total_iters,
        message=message,
    )


def fit_envelope(times, envelope) -> FitResult:
    """Fit a pure exponential exp(-gamma*t) to a fringe envelope."""
    t = np.asarray(times, dtype=float)
    e = np.asarray(envelope, dtype=float)
    if t.shape != e.shape or t.size < 4:
        raise ParameterError("times and envelope must be equal-length 1-D arrays with >= 4 points")
    if float(e.min()) > 0.9:
        return FitResult(
            model="envelope",
            gamma=math.nan,
            delta_omega=0.0,
            delta_omega_split=0.0,
            residual_rms=math.nan,
            converged=False,
            iterations=0,
            message="non-identifiable: envelope never decays below 0.9",
        )
    usable = e > 0.05
    if usable.sum() >= 2 and np.ptp(t[usable]) > 0:
        g0 = max(-float(np.polyfit(t[usable], np.log(e[usable]), 1)[0]), 0.05 / t[-1])
    else:
        g0 = 1.0 / t[-1]

    def residual(p: np.ndarray) -> np.ndarray:
        return np.exp(-p[0] * t) - e

    def jacobian(p: np.ndarray) -> np.ndarray:
        return (-t * np.exp(-p[0] * t))[:, None]

    p, cost, iters, conv = _levenberg_marquardt(residual, jacobian, np.array([g0]))
    gamma = float(p[0])
    message = ""
    if conv and gamma <= 0:
        conv = False
        message = "non-identifiable: fitted envelope does not decay"
    return FitResult(
        model="envelope",
        gamma=gamma,
        delta_omega=0.0,
        delta_omega_split=0.0,
        residual_rms=float(np.sqrt(cost / t.size)),
        converged=conv,
        iterations=iters,
        message=message,
    )


def extract_t2star_sweep(times, envelopes) -> list[FitResult]:
    """Envelope fit per sweep row; T2* of a row is 1/gamma of its result."""
    env = np.asarray(envelopes, dtype=float)
    if env.ndim != 2:
        raise ParameterError("envelopes must be a 2-D array (rows, times)")
    return [fit_envelope(times, env[i]) for i in range(env.shape[0])]


def prefer_beating(
    exponential: FitResult, beating: FitResult, n_points: int, alpha: float = 0.05
) -> tuple[bool, float, float]:
    """Nested-model F-test: is the beating model statistically preferred?

    Returns (preferred, F statistic, p value).  The beating model nests the
    exponential one (delta_omega_split = 0), adding one parameter.
    """
    if not (0 < alpha < 1):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if n_points <= 3:
        raise ParameterError("need more points than the larger model's parameter count")
    from scipy import stats

    rss_e = exponential.residual_rms**2 * n_points
    rss_b = beating.residual_rms**2 * n_points
    if not (math.isfinite(rss_e) and math.isfinite(rss_b)):
        return False, math.nan, math.nan
    if rss_b <= 1e-280:
        return (rss_e > 10.0 * rss_b), math.inf, 0.0
    f_stat = max((rss_e - rss_b) / (rss_b / (n_points - 3)), 0.0)
    p_value = float(stats.f.sf(f_stat, 1, n_points - 3))
    return bool(p_value < alpha), float(f_stat), p_value
