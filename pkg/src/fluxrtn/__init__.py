"""Telegraph flux noise and transmon Ramsey dephasing toolkit.

The package simulates ensembles of two-level fluctuators coupled to the flux
bias of a tunable transmon, computes the resulting Ramsey decay by Monte
Carlo, and cross-checks it against closed-form decay factors.  See the
``fluxrtn`` command-line tool for batch runs that emit CSV/JSON.
"""
from .analytic import exact_decay, product_decay, truncated_decay
from .errors import DomainError, FluxRtnError, ParameterError, RangeError
from .fit import (
    FitResult,
    beating_ramsey_model,
    exponential_ramsey_model,
    fit_beating_ramsey,
    fit_envelope,
    fit_exponential_ramsey,
    prefer_beating,
)
from .noise import (
    FlickerBath,
    PathBundle,
    PsdEstimate,
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
from .qubit import (
    TransmonParams,
    WorkingPoint,
    density_matrix_evolution,
    frequency_derivative,
    invert_frequency,
    t2_from_t1_tphi,
    transmon_frequency,
)
from .ramsey import (
    BathSpec,
    DecayTrace,
    RamseyConfig,
    SweepResult,
    beating_contrast,
    beating_envelope_model,
    binomial_readout,
    decay_factor_mc,
    distribute_amplitudes,
    doublet_splitting,
    frequency_sweep,
    multi_rtn_envelope_model,
    ramsey_curve,
)

__version__ = "0.1.0"

__all__ = [
    "BathSpec",
    "DecayTrace",
    "DomainError",
    "FitResult",
    "FlickerBath",
    "FluxRtnError",
    "ParameterError",
    "PathBundle",
    "PsdEstimate",
    "RamseyConfig",
    "RangeError",
    "RtnPath",
    "RtnSource",
    "SweepResult",
    "TransmonParams",
    "WorkingPoint",
    "beating_contrast",
    "beating_envelope_model",
    "beating_ramsey_model",
    "binomial_readout",
    "build_flicker_bath",
    "decay_factor_mc",
    "density_matrix_evolution",
    "distribute_amplitudes",
    "doublet_splitting",
    "estimate_psd",
    "exact_decay",
    "exponential_ramsey_model",
    "fit_beating_ramsey",
    "fit_envelope",
    "fit_exponential_ramsey",
    "flicker_psd_theory",
    "flicker_value_at",
    "frequency_derivative",
    "frequency_sweep",
    "invert_frequency",
    "log_log_slope",
    "lorentzian_psd",
    "multi_rtn_envelope_model",
    "prefer_beating",
    "product_decay",
    "ramsey_curve",
    "rtn_integral",
    "rtn_value_at",
    "sample_bath_traces",
    "sample_path_bundle",
    "sample_rtn_path",
    "sample_switching_rate",
    "t2_from_t1_tphi",
    "transmon_frequency",
    "truncated_decay",
]
