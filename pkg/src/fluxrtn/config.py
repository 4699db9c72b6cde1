"""Layered run configuration: defaults file, user TOML, environment, flags.

Precedence, lowest to highest: packaged defaults.toml, the --config file,
FLUXRTN_* environment variables, explicit CLI flags.  Unknown keys are
rejected at every layer so typos fail loudly (exit code 2 in the CLI).  The
effective configuration, its SHA-256 hash, and the seed are echoed into
every output file header so a result is reproducible from its artifacts
alone.
"""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass
from importlib import resources
from typing import Mapping

from .errors import ParameterError
from .noise import RtnSource
from .qubit import TransmonParams
from .ramsey import BathSpec, RamseyConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_PREFIX = "FLUXRTN_"


def _load_defaults() -> dict:
    text = resources.files("fluxrtn").joinpath("defaults.toml").read_text(encoding="utf-8")
    return tomllib.loads(text)


def _merge(base: dict, overlay: dict, path: str = "") -> None:
    for key, value in overlay.items():
        full = f"{path}{key}"
        if key not in base:
            raise ParameterError(f"unknown config key: {full}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ParameterError(f"config key {full} must be a table")
            _merge(base[key], value, f"{full}.")
        else:
            if isinstance(value, dict):
                raise ParameterError(f"config key {full} is not a table")
            base[key] = _coerce(full, base[key], value)


def _coerce(full: str, default, value):
    """Check an override against the default's type; int widens to float."""
    if isinstance(default, bool) or isinstance(value, bool):
        if isinstance(default, bool) and isinstance(value, bool):
            return value
        raise ParameterError(f"config key {full} expects a boolean, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)):
            return float(value)
        raise ParameterError(f"config key {full} expects a number, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, int):
            return value
        raise ParameterError(f"config key {full} expects an integer, got {value!r}")
    if isinstance(default, str) and not isinstance(value, str):
        raise ParameterError(f"config key {full} expects a string, got {value!r}")
    return value


def _apply_env(data: dict, env: Mapping[str, str]) -> None:
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX) :].lower().split("__")
        raw = env[name]
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        node = data
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ParameterError(f"environment override {name} addresses unknown key")
            node = node[part]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ParameterError(f"environment override {name} addresses unknown key")
        if isinstance(node[leaf], dict):
            raise ParameterError(f"environment override {name} must address a leaf key")
        node[leaf] = _coerce(".".join(parts), node[leaf], value)


_STRONG_KEYS = {"switching_rate_hz", "amplitude_phi0"}


def _validate_strong(entries) -> None:
    if not isinstance(entries, list):
        raise ParameterError("ramsey.strong must be an array of tables")
    for entry in entries:
        if not isinstance(entry, dict) or set(entry) != _STRONG_KEYS:
            raise ParameterError(
                "each ramsey.strong entry needs exactly the keys "
                "switching_rate_hz and amplitude_phi0"
            )


@dataclass(frozen=True)
class RunConfig:
    """The fully merged configuration plus its provenance hash."""

    data: dict

    @property
    def seed(self) -> int:
        return int(self.data["run"]["seed"])

    @property
    def threads(self) -> int:
        return int(self.data["run"]["threads"])

    @property
    def out_dir(self) -> str:
        return str(self.data["run"]["out"])

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def canonical_json(self) -> str:
        # run.threads and run.out steer execution, not results; leaving them
        # out keeps outputs byte-identical across thread counts and locations
        data = {k: dict(v) for k, v in self.data.items()}
        data["run"] = {k: v for k, v in data["run"].items() if k not in ("threads", "out")}
        return json.dumps(data, sort_keys=True, separators=(",", ":"))


def load_config(
    config_path: str | None = None,
    env: Mapping[str, str] | None = None,
    flag_overrides: Mapping[str, object] | None = None,
) -> RunConfig:
    """Merge all configuration layers; raises ParameterError on any bad key."""
    data = _load_defaults()
    if config_path is not None:
        try:
            with open(config_path, "rb") as fh:
                user = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ParameterError(f"config file not found: {config_path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ParameterError(f"config file {config_path} is not valid TOML: {exc}") from exc
        _merge(data, user)
    _apply_env(data, env if env is not None else {})
    if flag_overrides:
        for dotted, value in flag_overrides.items():
            if value is None:
                continue
            node = data
            *parents, leaf = dotted.split(".")
            for part in parents:
                node = node[part]
            node[leaf] = _coerce(dotted, node[leaf], value)
    _validate_strong(data["ramsey"]["strong"])
    seed = data["run"]["seed"]
    if not isinstance(seed, int) or not (0 <= seed < 2**64):
        raise ParameterError(f"run.seed must be an integer in [0, 2^64), got {seed!r}")
    if not isinstance(data["run"]["threads"], int) or data["run"]["threads"] < 1:
        raise ParameterError(f"run.threads must be a positive integer, got {data['run']['threads']!r}")
    return RunConfig(data=data)


def transmon_params(cfg: RunConfig) -> TransmonParams:
    q = cfg.data["qubit"]
    return TransmonParams(ec_ghz=float(q["ec_ghz"]), ej_ghz=float(q["ej_ghz"]))


def ramsey_config(cfg: RunConfig, mode: str | None = None) -> RamseyConfig:
    q = cfg.data["qubit"]
    r = cfg.data["ramsey"]
    bath_cfg = r["bath"]
    bath = None
    if bath_cfg["enabled"]:
        bath = BathSpec(
            n_sources=int(bath_cfg["n_sources"]),
            amplitude_phi0=float(bath_cfg["amplitude_phi0"]),
            lambda_min_hz=float(bath_cfg["lambda_min_hz"]),
            lambda_max_hz=float(bath_cfg["lambda_max_hz"]),
        )
    strong = tuple(
        RtnSource(
            switching_rate_hz=float(s["switching_rate_hz"]),
            amplitude_phi0=float(s["amplitude_phi0"]),
        )
        for s in r["strong"]
    )
    return RamseyConfig(
        params=transmon_params(cfg),
        phi_b=float(q["phi_b"]),
        t1_s=float(q["t1_s"]),
        delta_omega_rad_s=2.0 * math.pi * float(r["delta_omega_hz"]),
        horizon_s=float(r["horizon_s"]),
        output_step_s=float(r["output_step_s"]),
        repetitions=int(r["repetitions"]),
        mode=str(mode if mode is not None else r["mode"]),
        integration_step_s=float(r["integration_step_s"]),
        master_seed=cfg.seed,
        threads=cfg.threads,
        bath=bath,
        strong=strong,
    )
