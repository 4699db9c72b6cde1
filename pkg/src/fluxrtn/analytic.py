"""Closed-form and series dephasing factors for telegraph noise.

For a qubit whose angular frequency is shifted by v * sign(t), with sign(t)
a telegraph process of event rate lambda (fair initial sign), the ensemble
dephasing factor D(t) = <exp(i * integral of the shift)> obeys a two-state
linear system: conditioning on the current sign, the two conditional
averages drift at +-i*v and exchange at rate lambda.  Its closed-form
solution is

    D(t) = exp(-lambda*t) * (cos(mu*t) + (lambda/mu) * sin(mu*t)),
    mu = sqrt(v^2 - lambda^2)

continued through mu -> 0 and imaginary mu.  Expanding the same average in
the number of telegraph events gives the series computed by
:func:`truncated_decay`: the order-n term is exp(-lambda*t) * lambda^n times
the ordered n-fold integral of cos(v * (2*sum_k (-1)^(k+1) t_k + (-1)^n t)),
the cosine being the average over the initial sign.  At v = 0 the series
sums Poisson weights and returns 1 at every order cutoff's limit.

Independent noise sources multiply: :func:`product_decay`.
"""
from __future__ import annotations

import math
import warnings
from typing import Sequence

import numpy as np

from .errors import ParameterError

MAX_SERIES_ORDER = 6  # 32-node quadrature per level; cost grows as 32^n

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
_CHUNK = 1 << 16


def _check_times(times) -> np.ndarray:
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ParameterError("times must be finite and >= 0")
    return t


def exact_decay(switching_rate_hz: float, coupling_rad_s: float, times) -> np.ndarray:
    """Ensemble dephasing factor of a single telegraph source, closed form.

    ``switching_rate_hz`` is the Poisson event rate of the sampled process
    (each event flips the sign, so the sign correlation decays at twice this
    rate).  ``coupling_rad_s`` is the angular-frequency shift magnitude
    v = |domega01/dphi| * b.  Returns a complex array (imaginary part zero
    by sign symmetry).
    """
    lam = float(switching_rate_hz)
    if not (lam > 0 and math.isfinite(lam)):
        raise ParameterError(f"switching_rate_hz must be positive and finite, got {lam}")
    v = abs(float(coupling_rad_s))
    t = _check_times(times)
    q = v * v - lam * lam  # mu^2, sign decides oscillating vs overdamped
    out = np.empty(t.shape)
    small = np.abs(q) * t * t < 1e-10
    if small.any():
        ts = t[small]
        x = q * ts * ts
        cos_series = 1.0 - x / 2.0 + x * x / 24.0 - x**3 / 720.0
        sinc_series = 1.0 - x / 6.0 + x * x / 120.0 - x**3 / 5040.0
        out[small] = np.exp(-lam * ts) * (cos_series + lam * ts * sinc_series)
    big = ~small
    if big.any():
        tb = t[big]
        if q > 0:
            mu = math.sqrt(q)
            out[big] = np.exp(-lam * tb) * (np.cos(mu * tb) + (lam / mu) * np.sin(mu * tb))
        else:
            # Overdamped: both exponents are negative; this form never overflows.
            kappa = math.sqrt(-q)
            out[big] = 0.5 * (1.0 + lam / kappa) * np.exp(-(lam - kappa) * tb) + 0.5 * (
                1.0 - lam / kappa
            ) * np.exp(-(lam + kappa) * tb)
    result = out.astype(complex)
    return result if np.ndim(times) else complex(result[0])


def _ordered_integral(level: int, n: int, v: float, lower: np.ndarray, t: float) -> np.ndarray:
    """Gauss-Legendre recursion for the ordered n-fold phase integral.

    Integrates exp(i*2*v*(-1)^(level+1)*s) times the next level over
    s in [lower, t], vectorized over the array of lower limits.
    """
    if lower.size > _CHUNK:
        return np.concatenate(
            [
                _ordered_integral(level, n, v, lower[i : i + _CHUNK], t)
                for i in range(0, lower.size, _CHUNK)
            ]
        )
    half = 0.5 * (t - lower)
    nodes = 0.5 * (t + lower)[:, None] + half[:, None] * _GL_NODES[None, :]
    sign = 1.0 if level % 2 == 1 else -1.0
    f = np.exp((2j * v * sign) * nodes)
    if level < n:
        f = f * _ordered_integral(level + 1, n, v, nodes.reshape(-1), t).reshape(nodes.shape)
    return (f @ _GL_WEIGHTS) * half


def truncated_decay(switching_rate_hz: float, coupling_rad_s: float, times, n_max: int) -> np.ndarray:
    """Dephasing factor truncated at ``n_max`` telegraph events.

    Term n is exp(-lambda*t) * lambda^n times the ordered integral described
    in the module docstring, evaluated by recursive 32-node Gauss-Legendre
    quadrature (cost 32^n per time point; n_max above 6 is rejected).  The
    omitted remainder is bounded by the Poisson tail P(N > n_max); a warning
    is emitted when that tail exceeds 1e-6 at the largest time.
    """
    lam = float(switching_rate_hz)
    if not (lam > 0 and math.isfinite(lam)):
        raise ParameterError(f"switching_rate_hz must be positive and finite, got {lam}")
    if not isinstance(n_max, (int, np.integer)) or not (0 <= n_max <= MAX_SERIES_ORDER):
        raise ParameterError(f"n_max must be an integer in [0, {MAX_SERIES_ORDER}], got {n_max}")
    v = abs(float(coupling_rad_s))
    t = _check_times(times)
    from scipy import stats

    tail = float(stats.poisson.sf(n_max, lam * t.max())) if t.size else 0.0
    if tail >= 1e-6:
        warnings.warn(
            f"Poisson tail beyond n_max={n_max} is {tail:.2e} at t={t.max():.3g}s; "
            "the truncated series may be far from the full decay factor",
            stacklevel=2,
        )
    out = np.cos(v * t).astype(complex)  # zero-switch term
    for ti, tv in enumerate(t):
        total = 0.0 + 0.0j
        lam_pow = 1.0
        for n in range(1, int(n_max) + 1):
            lam_pow *= lam
            if tv == 0.0:
                continue
            block = _ordered_integral(1, n, v, np.array([0.0]), float(tv))[0]
            boundary_sign = 1.0 if n % 2 == 0 else -1.0
            total += lam_pow * (block * np.exp(1j * v * boundary_sign * tv)).real
        out[ti] += total
    out *= np.exp(-lam * t)
    return out if np.ndim(times) else complex(out[0])


def product_decay(components: Sequence[tuple[float, float]], times) -> np.ndarray:
    """Product of exact single-source decay factors over independent sources.

    ``components`` is a sequence of (switching_rate_hz, coupling_rad_s)
    pairs; an empty sequence gives the identity (all ones).
    """
    t = _check_times(times)
    out = np.ones(t.shape, dtype=complex)
    for rate, coupling in components:
        out *= exact_decay(rate, coupling, t)
    return out if np.ndim(times) else complex(out[0])
