"""Flux-tunable transmon spectrum, working points, and relaxation.

The qubit transition frequency follows the standard split-junction transmon
expression

    omega01(phi) = 2*pi*1e9 * (sqrt(8 * ec * ej * |cos(pi * phi)|) - ec)

with ``ec`` and ``ej`` the charging and Josephson energies expressed as
frequencies in GHz and ``phi`` the flux bias in units of the flux quantum.
The point phi = 0 is the sweet spot: the frequency is maximal and its flux
derivative vanishes, so first-order sensitivity to flux noise grows from
zero as the qubit is tuned away from it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError

TWO_PI_GHZ = 2.0 * math.pi * 1e9
# Guard band around half-integer flux where |cos(pi*phi)| ~ 0 and the
# symmetric-junction expression (and its derivative) blow up.
MIN_ABS_COS = 0.01
# Transmon-regime guard: the expression above drops the charge dispersion,
# which is only safe for large ej/ec.
MIN_EJ_OVER_EC = 20.0


@dataclass(frozen=True)
class TransmonParams:
    """Charging and Josephson energies, as frequencies in GHz."""

    ec_ghz: float = 0.2
    ej_ghz: float = 15.0

    def __post_init__(self) -> None:
        if not (self.ec_ghz > 0 and math.isfinite(self.ec_ghz)):
            raise ParameterError(f"ec_ghz must be positive and finite, got {self.ec_ghz}")
        if not (self.ej_ghz > 0 and math.isfinite(self.ej_ghz)):
            raise ParameterError(f"ej_ghz must be positive and finite, got {self.ej_ghz}")
        if self.ej_ghz / self.ec_ghz < MIN_EJ_OVER_EC:
            raise ParameterError(
                f"ej/ec = {self.ej_ghz / self.ec_ghz:.3g} is below the transmon-regime "
                f"bound {MIN_EJ_OVER_EC}"
            )


def _abs_cos_checked(phi_b: np.ndarray) -> np.ndarray:
    c = np.abs(np.cos(np.pi * phi_b))
    if np.any(c <= MIN_ABS_COS):
        bad = np.asarray(phi_b)[c <= MIN_ABS_COS] if np.ndim(phi_b) else phi_b
        raise DomainError(
            f"flux bias {bad} is too close to half-integer flux: "
            f"|cos(pi*phi)| <= {MIN_ABS_COS}"
        )
    return c


def transmon_frequency(params: TransmonParams, phi_b):
    """Qubit angular frequency omega01 in rad/s at flux bias ``phi_b`` (Phi0 units).

    Accepts scalars or arrays.  Raises DomainError within the guard band
    around half-integer flux.
    """
    phi = np.asarray(phi_b, dtype=float)
    c = _abs_cos_checked(phi)
    f_ghz = np.sqrt(8.0 * params.ec_ghz * params.ej_ghz * c) - params.ec_ghz
    if np.any(f_ghz <= 0):
        raise DomainError("transmon frequency is non-positive for the requested flux bias")
    out = TWO_PI_GHZ * f_ghz
    return out if np.ndim(phi_b) else float(out)


def frequency_derivative(params: TransmonParams, phi_b):
    """d(omega01)/d(phi_b) in rad/s per Phi0, analytically.

    Zero exactly at integer flux (the sweet spots); odd in phi_b.
    """
    phi = np.asarray(phi_b, dtype=float)
    c = _abs_cos_checked(phi)
    sign = np.where(np.cos(np.pi * phi) >= 0, 1.0, -1.0)
    root = np.sqrt(8.0 * params.ec_ghz * params.ej_ghz)
    out = -TWO_PI_GHZ * root * math.pi * np.sin(np.pi * phi) * sign / (2.0 * np.sqrt(c))
    return out if np.ndim(phi_b) else float(out)


def invert_frequency(params: TransmonParams, f01_hz: float) -> float:
    """Flux bias on the principal branch [0, 0.5) that realizes ``f01_hz``.

    The principal branch covers frequencies from the half-flux guard band up
    to the sweet-spot maximum sqrt(8*ec*ej) - ec; anything outside raises
    DomainError.
    """
    if not (f01_hz > 0 and math.isfinite(f01_hz)):
        raise ParameterError(f"f01_hz must be positive and finite, got {f01_hz}")
    f_ghz = f01_hz / 1e9
    cos_val = (f_ghz + params.ec_ghz) ** 2 / (8.0 * params.ec_ghz * params.ej_ghz)
    if cos_val > 1.0:
        fmax = (math.sqrt(8.0 * params.ec_ghz * params.ej_ghz) - params.ec_ghz) * 1e9
        raise DomainError(f"target {f01_hz:.6g} Hz exceeds the sweet-spot maximum {fmax:.6g} Hz")
    if cos_val <= MIN_ABS_COS:
        raise DomainError(
            f"target {f01_hz:.6g} Hz lies below the attainable band "
            f"(requires |cos(pi*phi)| <= {MIN_ABS_COS})"
        )
    return math.acos(cos_val) / math.pi


@dataclass(frozen=True)
class WorkingPoint:
    """A flux bias together with the local frequency and flux sensitivity."""

    params: TransmonParams
    phi_b: float
    omega01: float
    domega_dphi: float

    @classmethod
    def at_flux(cls, params: TransmonParams, phi_b: float) -> "WorkingPoint":
        return cls(
            params=params,
            phi_b=float(phi_b),
            omega01=transmon_frequency(params, phi_b),
            domega_dphi=frequency_derivative(params, phi_b),
        )

    @classmethod
    def at_frequency(cls, params: TransmonParams, f01_hz: float) -> "WorkingPoint":
        return cls.at_flux(params, invert_frequency(params, f01_hz))


def t2_from_t1_tphi(t1_s: float, t2phi_s: float) -> float:
    """Total Ramsey decay time from relaxation and pure-dephasing times.

    1/T2 = 1/(2*T1) + 1/T2phi.  Either argument may be math.inf.
    """
    if not t1_s > 0:
        raise ParameterError(f"t1_s must be positive, got {t1_s}")
    if not t2phi_s > 0:
        raise ParameterError(f"t2phi_s must be positive, got {t2phi_s}")
    if math.isinf(t2phi_s):
        return 2.0 * t1_s
    if math.isinf(t1_s):
        return t2phi_s
    return 2.0 * t1_s * t2phi_s / (2.0 * t1_s + t2phi_s)


def _check_density_matrix(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ParameterError(f"density matrix must be 2x2, got shape {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=1e-9):
        raise ParameterError("density matrix is not Hermitian")
    if not math.isclose(float(rho.trace().real), 1.0, abs_tol=1e-9):
        raise ParameterError(f"density matrix trace is {rho.trace().real}, expected 1")
    if np.linalg.eigvalsh(rho).min() < -1e-9:
        raise ParameterError("density matrix is not positive semidefinite")
    return rho


def density_matrix_evolution(
    rho0: np.ndarray,
    t: float,
    t1_s: float,
    accumulated_phase: float = 0.0,
) -> np.ndarray:
    """Free evolution of a qubit density matrix in the rotating frame.

    The excited population relaxes as exp(-t/T1) with the lost weight
    restored to the ground state (the map is trace preserving), and the
    coherences decay at half that rate while acquiring the dephasing phase:

        rho11(t) = rho11(0) * exp(-t/T1)
        rho00(t) = 1 - rho11(t)
        rho01(t) = rho01(0) * exp(-t/(2*T1)) * exp(+i*phase)

    The map preserves positivity: |rho01(t)|^2 <= rho00(t)*rho11(t) holds
    whenever it holds at t = 0.
    """
    rho = _check_density_matrix(rho0)
    if t < 0:
        raise ParameterError(f"t must be >= 0, got {t}")
    if not t1_s > 0:
        raise ParameterError(f"t1_s must be positive, got {t1_s}")
    decay = math.exp(-t / t1_s) if not math.isinf(t1_s) else 1.0
    rho11 = rho[1, 1].real * decay
    rho01 = rho[0, 1] * math.sqrt(decay) * np.exp(1j * accumulated_phase)
    return np.array([[1.0 - rho11, rho01], [rho01.conjugate(), rho11]], dtype=complex)
