"""Batch command-line front end.

Usage:
    fluxrtn psd      --config run.toml --out results/
    fluxrtn ramsey   --seed 7 --mode grid
    fluxrtn sweep    --threads 4
    fluxrtn multi-rtn
    fluxrtn fit      --config fit.toml      # [fit] input = "ramsey.csv"

Global flags: --config PATH, --seed N, --out DIR, --mode {linearized,grid},
--threads N.  Environment variables FLUXRTN_SECTION__KEY override any config
leaf.  Every CSV/JSON output starts with '#' metadata lines carrying the
tool version, config hash, seed, and the full effective configuration.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.  Output
files appear atomically: they are staged with a .tmp suffix and renamed only
after the whole command succeeded, so a failed run leaves no partial files.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from ._rng import STREAM_AMPLITUDES, STREAM_READOUT, substream
from .config import RunConfig, load_config, ramsey_config, transmon_params
from .errors import ParameterError
from .fit import fit_beating_ramsey, fit_exponential_ramsey, prefer_beating
from .noise import (
    RtnSource,
    build_flicker_bath,
    estimate_psd,
    flicker_psd_theory,
    sample_bath_traces,
)
from .qubit import WorkingPoint
from .ramsey import (
    beating_contrast,
    binomial_readout,
    decay_factor_mc,
    distribute_amplitudes,
    doublet_splitting,
    frequency_sweep,
)
from ._rng import STREAM_BATH_RATES


class OutputStage:
    """Stages output files and commits them atomically at the end of a command."""

    def __init__(self, out_dir: str, cfg: RunConfig) -> None:
        self.out_dir = out_dir
        self._staged: list[tuple[str, str]] = []
        self._header = [
            f"# fluxrtn {__version__}",
            f"# config_hash: {cfg.config_hash()}",
            f"# seed: {cfg.seed}",
            f"# config: {cfg.canonical_json()}",
        ]
        os.makedirs(out_dir, exist_ok=True)

    @staticmethod
    def _format(value) -> str:
        if isinstance(value, (float, np.floating)):
            return repr(float(value))
        return str(value)

    def write_csv(self, name: str, columns: dict) -> None:
        final = os.path.join(self.out_dir, name)
        tmp = final + ".tmp"
        keys = list(columns)
        rows = zip(*(columns[k] for k in keys))
        with open(tmp, "w", newline="") as fh:
            for line in self._header:
                fh.write(line + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(keys)
            for row in rows:
                writer.writerow([self._format(v) for v in row])
        self._staged.append((tmp, final))

    def write_json(self, name: str, payload: dict) -> None:
        final = os.path.join(self.out_dir, name)
        tmp = final + ".tmp"
        with open(tmp, "w") as fh:
            for line in self._header:
                fh.write(line + "\n")
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self._staged.append((tmp, final))

    def commit(self) -> None:
        for tmp, final in self._staged:
            os.replace(tmp, final)
        self._staged.clear()

    def abort(self) -> None:
        for tmp, _ in self._staged:
            try:
                os.remove(tmp)
            except FileNotFoundError:
                pass
        self._staged.clear()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML config file")
    common.add_argument("--seed", type=int, metavar="N", help="override run.seed")
    common.add_argument("--out", metavar="DIR", help="override run.out output directory")
    common.add_argument(
        "--mode", choices=["linearized", "grid"], help="override ramsey.mode phase accumulation"
    )
    common.add_argument("--threads", type=int, metavar="N", help="override run.threads")
    parser = argparse.ArgumentParser(
        prog="fluxrtn",
        description="Telegraph flux noise and Ramsey dephasing simulator",
    )
    parser.add_argument("--version", action="version", version=f"fluxrtn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("psd", parents=[common], help="1/f bath spectrum: estimate vs theory")
    sub.add_parser("ramsey", parents=[common], help="Ramsey fringe Monte Carlo plus fits")
    sub.add_parser("sweep", parents=[common], help="Ramsey envelopes across qubit frequencies")
    sub.add_parser("multi-rtn", parents=[common], help="beat contrast vs fluctuator splitting")
    sub.add_parser("fit", parents=[common], help="fit fringe models to an existing CSV")
    return parser


def _cmd_psd(cfg: RunConfig, stage: OutputStage) -> None:
    p = cfg.data["psd"]
    bath = build_flicker_bath(
        int(p["n_sources"]),
        float(p["amplitude_phi0"]),
        float(p["lambda_min_hz"]),
        float(p["lambda_max_hz"]),
        substream(cfg.seed, STREAM_BATH_RATES),
    )
    # sample twice as fast as the reporting grid and keep bins up to the
    # reporting grid's Nyquist: fold-over lands outside the emitted band
    dt_report = float(p["dt_s"])
    dt_sim = 0.5 * dt_report
    n_samples = 2 * int(round(float(p["horizon_s"]) / dt_report))
    traces = sample_bath_traces(
        bath,
        n_samples,
        dt_sim,
        int(p["realizations"]),
        cfg.seed,
        threads=cfg.threads,
        split_threshold=0.25 * dt_sim / dt_report,
    )
    window = None if p["window"] in ("none", "") else str(p["window"])
    est = estimate_psd(
        traces,
        dt_sim,
        normalization_frequency_hz=float(p["normalization_frequency_hz"]),
        window=window,
        cell_average_correction=True,
        max_frequency_hz=0.5 / dt_report,
    )
    theory = flicker_psd_theory(bath, 2.0 * math.pi * est.frequencies_hz)
    idx = int(np.argmin(np.abs(est.frequencies_hz - est.normalization_frequency_hz)))

    def _normalized(curve: np.ndarray) -> np.ndarray:
        ref = curve[idx]
        return curve / ref if ref > 0 else curve

    stage.write_csv(
        "psd.csv",
        {
            "freq_hz": est.frequencies_hz,
            "psd_estimated": est.values,
            "psd_lorentzian_sum": _normalized(theory.lorentzian_sum),
            "psd_ideal_1f": _normalized(theory.one_over_f),
        },
    )


def _fit_payload(times: np.ndarray, p1: np.ndarray, alpha: float, model: str) -> dict:
    payload: dict = {}
    if model in ("exponential", "both"):
        payload["exponential"] = fit_exponential_ramsey(times, p1).as_dict()
    if model in ("beating", "both"):
        payload["beating"] = fit_beating_ramsey(times, p1).as_dict()
    if model == "both":
        exp_res = fit_exponential_ramsey(times, p1)
        beat_res = fit_beating_ramsey(times, p1)
        preferred, f_stat, p_value = prefer_beating(exp_res, beat_res, times.size, alpha)
        payload["beating_preferred"] = preferred
        payload["f_statistic"] = f_stat
        payload["p_value"] = p_value
    return payload


def _cmd_ramsey(cfg: RunConfig, stage: OutputStage, mode: str | None) -> None:
    rc = ramsey_config(cfg, mode=mode)
    trace = decay_factor_mc(rc)
    p1 = trace.p1
    r = cfg.data["ramsey"]
    if r["emulate_readout"]:
        p1 = binomial_readout(p1, int(r["readout_shots"]), substream(cfg.seed, STREAM_READOUT))
    stage.write_csv(
        "ramsey.csv",
        {
            "time_s": trace.times_s,
            "p1": p1,
            "envelope": trace.envelope,
            "decay_re": trace.decay.real,
            "decay_im": trace.decay.imag,
        },
    )
    stage.write_json(
        "fit.json", _fit_payload(trace.times_s, p1, float(cfg.data["fit"]["alpha"]), "both")
    )


def _cmd_sweep(cfg: RunConfig, stage: OutputStage, mode: str | None) -> None:
    s = cfg.data["sweep"]
    rc = replace(ramsey_config(cfg, mode=mode), repetitions=int(s["repetitions"]))
    grid = np.linspace(float(s["f01_min_ghz"]) * 1e9, float(s["f01_max_ghz"]) * 1e9, int(s["n_points"]))
    result = frequency_sweep(grid, rc)
    for f01, reason in result.skipped:
        print(f"sweep: skipped f01 = {f01:.6g} Hz ({reason})", file=sys.stderr)
    n_rows, n_t = result.envelopes.shape
    stage.write_csv(
        "sweep.csv",
        {
            "f01_hz": np.repeat(result.f01_hz, n_t),
            "time_s": np.tile(result.times_s, n_rows),
            "envelope": result.envelopes.reshape(-1),
        },
    )
    conv = result.fit_converged
    t2_vals = [repr(float(v)) for v in result.t2star_s]
    f01_col = [repr(float(v)) for v in result.f01_hz]
    good = result.t2star_s[conv & np.isfinite(result.t2star_s)]
    f01_col += ["mean", "max"]
    t2_vals += [repr(float(good.mean())) if good.size else "nan",
                repr(float(good.max())) if good.size else "nan"]
    conv_col = [str(bool(c)) for c in conv] + [str(int(good.size))] * 2
    stage.write_csv(
        "t2star.csv",
        {"f01_hz": f01_col, "t2star_s": t2_vals, "converged": conv_col},
    )


def _cmd_multi_rtn(cfg: RunConfig, stage: OutputStage, mode: str | None) -> None:
    m = cfg.data["multi_rtn"]
    rc = ramsey_config(cfg, mode=mode)
    rc = replace(
        rc,
        phi_b=float(m["phi_b"]),
        repetitions=int(m["repetitions"]),
        bath=rc.bath if m["bath_enabled"] else None,
        strong=(),
    )
    wp = WorkingPoint.at_flux(rc.params, rc.phi_b)
    total_b = float(m["total_amplitude_phi0"])
    split = doublet_splitting(wp, total_b)
    rate = 50.0  # strong fluctuators are quasi-static on the Ramsey horizon
    times = rc.output_times()
    reference = np.exp(-times / (2.0 * rc.t1_s))
    ns_col, seed_col, t_col, env_col = [], [], [], []
    c_ns, c_seed, c_val = [], [], []
    for n in [int(v) for v in m["n_sources_list"]]:
        for s in range(int(m["n_seeds"])):
            amps = distribute_amplitudes(total_b, n, substream(cfg.seed, STREAM_AMPLITUDES, n, s))
            strong = tuple(RtnSource(switching_rate_hz=rate, amplitude_phi0=float(a)) for a in amps)
            trace = decay_factor_mc(replace(rc, strong=strong), stream_prefix=(n, s))
            ns_col.append(np.full(times.size, n))
            seed_col.append(np.full(times.size, s))
            t_col.append(times)
            env_col.append(trace.envelope)
            c_ns.append(n)
            c_seed.append(s)
            c_val.append(beating_contrast(times, trace.envelope, reference, split))
    stage.write_csv(
        "multi_rtn.csv",
        {
            "n_sources": np.concatenate(ns_col).astype(int),
            "seed": np.concatenate(seed_col).astype(int),
            "time_s": np.concatenate(t_col),
            "envelope": np.concatenate(env_col),
        },
    )
    stage.write_csv(
        "contrast.csv",
        {"n_sources": c_ns, "seed": c_seed, "beating_contrast": c_val},
    )


def _cmd_fit(cfg: RunConfig, stage: OutputStage) -> None:
    f = cfg.data["fit"]
    path = str(f["input"])
    if not path:
        raise ParameterError("fit.input must point at a CSV file with time_s and p1 columns")
    if not os.path.exists(path):
        raise ParameterError(f"fit input file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ParameterError(f"fit input {path} contains no data")
    header = rows[0]
    if "time_s" not in header or "p1" not in header:
        raise ParameterError(f"fit input {path} must have time_s and p1 columns, got {header}")
    ti, pi = header.index("time_s"), header.index("p1")
    try:
        times = np.array([float(r[ti]) for r in rows[1:]])
        p1 = np.array([float(r[pi]) for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ParameterError(f"fit input {path} has malformed rows: {exc}") from exc
    model = str(f["model"])
    if model not in ("exponential", "beating", "both"):
        raise ParameterError(f"fit.model must be exponential, beating, or both, got {model!r}")
    stage.write_json("fit.json", _fit_payload(times, p1, float(f["alpha"]), model))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(
            config_path=args.config,
            env=os.environ,
            flag_overrides={
                "run.seed": args.seed,
                "run.threads": args.threads,
                "run.out": args.out,
            },
        )
    except ParameterError as exc:
        print(f"fluxrtn: config error: {exc}", file=sys.stderr)
        return 2
    stage = None
    try:
        stage = OutputStage(cfg.out_dir, cfg)
        if args.command == "psd":
            _cmd_psd(cfg, stage)
        elif args.command == "ramsey":
            _cmd_ramsey(cfg, stage, args.mode)
        elif args.command == "sweep":
            _cmd_sweep(cfg, stage, args.mode)
        elif args.command == "multi-rtn":
            _cmd_multi_rtn(cfg, stage, args.mode)
        elif args.command == "fit":
            _cmd_fit(cfg, stage)
        stage.commit()
        return 0
    except ParameterError as exc:
        if stage is not None:
            stage.abort()
        print(f"fluxrtn: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        if stage is not None:
            stage.abort()
        print(f"fluxrtn: runtime failure: {exc!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
