"""Command-line front end.

Subcommands expose each pipeline: ``crosstalk`` (probability vs detuning
curve), ``ramsey`` (fringes under an off-resonant laser), ``cluster``
(multi-emitter sequence), ``fit-ple`` and ``localize`` (spectrum and scan
image fits), ``yield`` (register-yield sweep) and ``sample-dist``
(distribution fitting and sampling).

Options resolve as: built-in defaults < ``--config`` JSON file < explicit
flags. Every output file embeds a metadata header with the tool version,
seed and the fully resolved configuration, and identical invocations
produce byte-identical files. Exit codes: 0 success, 1 runtime or
convergence failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .crosstalk import CrosstalkBreakdown, transition_crosstalk
from .ensemble import (
    kde_fit,
    load_zpl_dataset,
    sample as kde_sample,
    summary_stats,
    surrogate_dataset,
    write_density_csv,
    write_zpl_csv,
)
from .errors import (
    ConvergenceError,
    DegenerateInputError,
    DomainError,
    ParseError,
    UnsolvableError,
)
from .fitting import (
    fit_gaussian_psf,
    fit_lorentzian_sum,
    load_psf_image,
    load_spectrum,
    lorentzian_sum,
    write_psf_image,
)
from .sequences import ClusterSequenceSpec, load_cluster, run_cluster_sequence
from .spin import (
    estimate_crosstalk_from_contrast,
    fringe_amplitude_ratio,
    ramsey_with_crosstalk,
    write_sequence_csv,
)
from .units import ghz_to_angular_mhz
from .yield_mc import (
    ReadoutPreset,
    estimates_to_dicts,
    msr_preset,
    ssr_preset,
    write_yield_csv,
    yield_sweep,
)

# Fixed default seed so unseeded runs are still reproducible.
DEFAULT_SEED = 42

OUT_DIR_ENV = "NVREGISTER_OUT_DIR"


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError as exc:
        raise DomainError(f"bad numeric list {text!r}") from exc


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in _parse_float_list(text)]


def _load_preset(spec) -> ReadoutPreset:
    if isinstance(spec, dict):
        return ReadoutPreset.from_dict(spec)
    name = str(spec)
    if name.lower() == "msr":
        return msr_preset()
    if name.lower() == "ssr":
        return ssr_preset()
    path = Path(name)
    if not path.is_file():
        raise DomainError(
            f"preset {name!r} is neither 'msr', 'ssr' nor an existing JSON file"
        )
    return ReadoutPreset.from_dict(json.loads(path.read_text(encoding="utf-8")))


class _Resolver:
    """Merge defaults, config-file values and explicit flags (flags win)."""

    def __init__(self, args: argparse.Namespace, defaults: dict):
        self.args = args
        self.defaults = defaults
        self.file_values = {}
        if args.config is not None:
            path = Path(args.config)
            if not path.is_file():
                raise FileNotFoundError(f"config file not found: {path}")
            doc = json.loads(path.read_text(encoding="utf-8"))
            if not isinstance(doc, dict):
                raise DomainError("config file must contain a JSON object")
            self.file_values = doc
        self.resolved: dict = {}

    def get(self, key: str):
        flag = getattr(self.args, key, None)
        if flag is not None:
            value = flag
        elif key in self.file_values:
            value = self.file_values[key]
        else:
            value = self.defaults[key]
        self.resolved[key] = value
        return value

    def require_file(self, key: str) -> Path:
        value = self.get(key)
        if value is None:
            raise DomainError(f"missing required input {key!r}")
        path = Path(value)
        if not path.is_file():
            raise FileNotFoundError(f"{key} file not found: {path}")
        return path


def _out_dir(resolver: _Resolver) -> Path:
    value = resolver.get("out_dir")
    if value is None:
        value = os.environ.get(OUT_DIR_ENV, ".")
    # The output location does not influence any output bytes; keeping it
    # out of the embedded config makes identical runs byte-identical no
    # matter where they land.
    resolver.resolved.pop("out_dir", None)
    path = Path(value)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _metadata(command: str, seed: int, resolver: _Resolver) -> dict:
    config = json.dumps(resolver.resolved, sort_keys=True, separators=(",", ":"), default=str)
    return {
        "tool": "nvregister",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
    }


def _write_csv(path, header: str, rows, metadata: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in metadata.items():
            fh.write(f"# {key}={value}\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row) + "\n")


def _write_json(path, payload: dict, metadata: dict) -> None:
    doc = {"metadata": metadata}
    doc.update(payload)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_crosstalk(args) -> list[Path]:
    defaults = {
        "preset": "msr",
        "detuning_min_ghz": 0.0,
        "detuning_max_ghz": 40.0,
        "points": 401,
        "out_dir": None,
    }
    res = _Resolver(args, defaults)
    preset = _load_preset(res.get("preset"))
    lo = float(res.get("detuning_min_ghz"))
    hi = float(res.get("detuning_max_ghz"))
    points = int(res.get("points"))
    if points < 2 or hi <= lo:
        raise DomainError("need detuning_max_ghz > detuning_min_ghz and points >= 2")
    out = _out_dir(res)
    seed = args.seed

    omega = preset.resolved_omega_mhz()
    grid = np.linspace(lo, hi, points)
    gammas = transition_crosstalk(
        omega, ghz_to_angular_mhz(grid), preset.gamma_mhz, preset.duration_us
    )
    meta = _metadata("crosstalk", seed, res)
    meta.update(
        preset=preset.name,
        omega_mhz=repr(omega),
        gamma_mhz=repr(preset.gamma_mhz),
        duration_us=repr(preset.duration_us),
        assumed_defaults="gamma=1/(12ns), msr_duration=0.6us unless overridden",
    )
    target = out / "crosstalk_curve.csv"
    _write_csv(target, "detuning_ghz,gamma", zip(grid.tolist(), gammas.tolist()), meta)
    return [target]


def cmd_ramsey(args) -> list[Path]:
    defaults = {
        "preset": "msr",
        "detunings_ghz": "0,0.5,1,2,4,8,16",
        "tau_min_ns": 0.0,
        "tau_max_ns": 2000.0,
        "tau_points": 101,
        "mw_detuning_mhz": 2.0,
        "t2_star_ns": 2000.0,
        "out_dir": None,
    }
    res = _Resolver(args, defaults)
    preset = _load_preset(res.get("preset"))
    detunings = res.get("detunings_ghz")
    detunings = _parse_float_list(detunings) if isinstance(detunings, str) else [float(d) for d in detunings]
    taus = np.linspace(
        float(res.get("tau_min_ns")), float(res.get("tau_max_ns")), int(res.get("tau_points"))
    )
    mw = float(res.get("mw_detuning_mhz"))
    t2 = float(res.get("t2_star_ns"))
    out = _out_dir(res)
    meta = _metadata("ramsey", args.seed, res)

    omega = preset.resolved_omega_mhz()
    reference = ramsey_with_crosstalk(mw, taus, t2, breakdown=None)
    written = []
    ref_path = out / "reference.csv"
    write_sequence_csv(ref_path, reference, {**meta, "detuning_ghz": "none (no-laser reference)"})
    written.append(ref_path)

    summary_rows = []
    for idx, det in enumerate(detunings):
        gamma = transition_crosstalk(
            omega, ghz_to_angular_mhz(det), preset.gamma_mhz, preset.duration_us
        )
        breakdown = CrosstalkBreakdown.from_probability(gamma)
        fringe = ramsey_with_crosstalk(mw, taus, t2, breakdown=breakdown)
        path = out / f"ramsey_{idx:02d}.csv"
        write_sequence_csv(path, fringe, {**meta, "detuning_ghz": repr(float(det))})
        written.append(path)
        ratio = fringe_amplitude_ratio(fringe.contrast, reference.contrast)
        summary_rows.append(
            (float(det), float(gamma), float(ratio), min(max(1.0 - ratio, 0.0), 1.0))
        )

    summary = out / "summary.csv"
    _write_csv(
        summary,
        "detuning_ghz,gamma,amplitude_ratio,crosstalk_estimate",
        summary_rows,
        {**meta, "omega_mhz": repr(omega)},
    )
    written.append(summary)
    return written


def cmd_cluster(args) -> list[Path]:
    defaults = {"cluster": None, "sequence": None, "out_dir": None}
    res = _Resolver(args, defaults)
    cluster_path = res.require_file("cluster")
    sequence_path = res.require_file("sequence")
    out = _out_dir(res)
    meta = _metadata("cluster", args.seed, res)

    cluster = load_cluster(json.loads(cluster_path.read_text(encoding="utf-8")))
    spec = ClusterSequenceSpec.from_json(sequence_path.read_text(encoding="utf-8"))
    results = run_cluster_sequence(cluster, spec)
    reference = run_cluster_sequence(cluster, spec.without_lasers())

    written = []
    for label in sorted(results):
        path = out / f"sequence_{label}.csv"
        write_sequence_csv(
            path, results[label], {**meta, "emitter": label, "observable": results[label].observable}
        )
        written.append(path)
    for label in sorted(reference):
        path = out / f"reference_{label}.csv"
        write_sequence_csv(
            path, reference[label], {**meta, "emitter": label, "observable": reference[label].observable}
        )
        written.append(path)

    degradation = {}
    for label, result in sorted(results.items()):
        if result.observable != "contrast" or label not in reference:
            continue
        ratio = fringe_amplitude_ratio(result.contrast, reference[label].contrast)
        degradation[label] = {
            "amplitude_ratio": ratio,
            "degradation": 1.0 - ratio,
            "crosstalk_estimate": min(max(1.0 - ratio, 0.0), 1.0),
        }
    report = out / "degradation.json"
    _write_json(report, {"spectator_degradation": degradation}, meta)
    written.append(report)
    return written


def cmd_fit_ple(args) -> list[Path]:
    defaults = {"input": None, "peaks": None, "poisson_weighting": False, "out_dir": None}
    res = _Resolver(args, defaults)
    input_path = res.require_file("input")
    n_peaks = res.get("peaks")
    if n_peaks is None:
        raise DomainError("missing required option --peaks")
    n_peaks = int(n_peaks)
    weighting = bool(res.get("poisson_weighting"))
    out = _out_dir(res)
    meta = _metadata("fit-ple", args.seed, res)

    spectrum = load_spectrum(input_path)
    fit = fit_lorentzian_sum(spectrum, n_peaks, poisson_weighting=weighting)
    params = [fit.baseline]
    for p in fit.peaks:
        params.extend((p.center_ghz, p.fwhm_ghz, p.amplitude))
    model = lorentzian_sum(spectrum.frequency_ghz, np.array(params))

    report = out / "ple_fit.json"
    _write_json(
        report,
        {
            "baseline": fit.baseline,
            "residual_rms": fit.residual_rms,
            "n_iterations": fit.n_iterations,
            "peaks": [
                {"center_ghz": p.center_ghz, "fwhm_ghz": p.fwhm_ghz, "amplitude": p.amplitude}
                for p in fit.peaks
            ],
            "covariance": fit.covariance.tolist(),
            "warnings": list(fit.warnings),
        },
        meta,
    )
    residuals = out / "ple_residuals.csv"
    _write_csv(
        residuals,
        "frequency_ghz,counts,model,residual",
        zip(
            spectrum.frequency_ghz.tolist(),
            spectrum.counts.tolist(),
            model.tolist(),
            (spectrum.counts - model).tolist(),
        ),
        meta,
    )
    return [report, residuals]


def cmd_localize(args) -> list[Path]:
    defaults = {"input": None, "out_dir": None}
    res = _Resolver(args, defaults)
    input_path = res.require_file("input")
    out = _out_dir(res)
    meta = _metadata("localize", args.seed, res)

    image = load_psf_image(input_path)
    result = fit_gaussian_psf(image)
    report = out / "localization.json"
    _write_json(
        report,
        {
            "center_nm": list(result.center_nm),
            "sigma_psf_nm": list(result.sigma_psf_nm),
            "amplitude": result.amplitude,
            "offset": result.offset,
            "std_error_center_nm": list(result.std_error_center_nm),
            "precision_nm": result.precision_nm,
            "residual_rms": result.residual_rms,
            "n_iterations": result.n_iterations,
            "covariance": result.covariance.tolist(),
        },
        meta,
    )
    return [report]


def _load_distribution(res: _Resolver, seed: int):
    dataset_path = res.get("dataset")
    surrogate = res.get("surrogate")
    if dataset_path is not None and surrogate is not None:
        raise DomainError("give either a dataset file or a surrogate, not both")
    if dataset_path is not None:
        path = Path(dataset_path)
        if not path.is_file():
            raise FileNotFoundError(f"dataset file not found: {path}")
        return load_zpl_dataset(path), None
    if surrogate is not None:
        return surrogate_dataset(str(surrogate), seed=seed), str(surrogate)
    raise DomainError("missing input: give --dataset or --surrogate")


def cmd_yield(args) -> list[Path]:
    defaults = {
        "dataset": None,
        "surrogate": None,
        "bandwidth": "auto",
        "weighting": "transition",
        "preset": "msr",
        "n_values": "1,2,3,5,7,9",
        "thresholds": "0.001,0.01,0.1",
        "trials": 10000,
        "mode": "worst_case",
        "workers": 1,
        "out_dir": None,
    }
    res = _Resolver(args, defaults)
    seed = args.seed
    dataset, surrogate = _load_distribution(res, seed)
    bandwidth = res.get("bandwidth")
    if bandwidth != "auto":
        bandwidth = float(bandwidth)
    model = kde_fit(dataset, bandwidth, weighting=str(res.get("weighting")))
    preset = _load_preset(res.get("preset"))
    n_values = res.get("n_values")
    n_values = _parse_int_list(n_values) if isinstance(n_values, str) else [int(v) for v in n_values]
    thresholds = res.get("thresholds")
    thresholds = (
        _parse_float_list(thresholds) if isinstance(thresholds, str) else [float(v) for v in thresholds]
    )
    trials = int(res.get("trials"))
    mode = str(res.get("mode"))
    workers = int(res.get("workers"))
    out = _out_dir(res)

    estimates = yield_sweep(model, n_values, thresholds, preset, trials, seed, mode=mode, workers=workers)
    meta = _metadata("yield", seed, res)
    meta.update(
        preset=preset.name,
        omega_mhz=repr(preset.resolved_omega_mhz()),
        gamma_mhz=repr(preset.gamma_mhz),
        duration_us=repr(preset.duration_us),
        bandwidth_ghz=repr(model.bandwidth_ghz),
        dataset_size=dataset.count,
        surrogate=surrogate or "none",
        assumed_defaults="gamma=1/(12ns), msr_duration=0.6us, calibration anchor (16 GHz, 1%)",
    )
    csv_path = out / "yield_sweep.csv"
    write_yield_csv(csv_path, estimates, meta)
    json_path = out / "yield_sweep.json"
    _write_json(json_path, {"estimates": estimates_to_dicts(estimates)}, meta)
    return [csv_path, json_path]


def cmd_sample_dist(args) -> list[Path]:
    defaults = {
        "dataset": None,
        "surrogate": None,
        "bandwidth": "auto",
        "weighting": "transition",
        "n_samples": 1000,
        "out_dir": None,
    }
    res = _Resolver(args, defaults)
    seed = args.seed
    dataset, surrogate = _load_distribution(res, seed)
    bandwidth = res.get("bandwidth")
    if bandwidth != "auto":
        bandwidth = float(bandwidth)
    model = kde_fit(dataset, bandwidth, weighting=str(res.get("weighting")))
    n_samples = int(res.get("n_samples"))
    out = _out_dir(res)
    meta = _metadata("sample-dist", seed, res)
    mean, std, count = summary_stats(dataset)
    meta.update(
        dataset_mean_ghz=repr(mean),
        dataset_std_ghz=repr(std),
        dataset_size=count,
        bandwidth_ghz=repr(model.bandwidth_ghz),
        surrogate=surrogate or "none",
    )

    written = []
    if surrogate is not None:
        ds_path = out / "surrogate_dataset.csv"
        write_zpl_csv(ds_path, dataset, {**meta, "note": "Gaussian surrogate, not measured data"})
        written.append(ds_path)
    kde_path = out / "kde.json"
    _write_json(kde_path, {"kde": model.to_dict()}, meta)
    written.append(kde_path)
    density_path = out / "density.csv"
    write_density_csv(density_path, model, metadata=meta)
    written.append(density_path)
    draws = kde_sample(model, seed, n_samples)
    samples_path = out / "samples.csv"
    _write_csv(samples_path, "frequency_ghz", ((float(v),) for v in draws), meta)
    written.append(samples_path)
    return written


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file; explicit flags override it")
    sub.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"RNG seed (default {DEFAULT_SEED})")
    sub.add_argument("--out-dir", dest="out_dir", help=f"output directory (or ${OUT_DIR_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvregister",
        description="Crosstalk modeling, sequence simulation, spectral fitting and register-yield tools",
    )
    parser.add_argument("--version", action="version", version=f"nvregister {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("crosstalk", help="crosstalk probability vs laser detuning")
    _add_common(p)
    p.add_argument("--preset", help="msr, ssr, or a preset JSON file")
    p.add_argument("--detuning-min-ghz", dest="detuning_min_ghz", type=float)
    p.add_argument("--detuning-max-ghz", dest="detuning_max_ghz", type=float)
    p.add_argument("--points", type=int)
    p.set_defaults(func=cmd_crosstalk)

    p = subs.add_parser("ramsey", help="Ramsey fringes under an off-resonant laser")
    _add_common(p)
    p.add_argument("--preset")
    p.add_argument("--detunings-ghz", dest="detunings_ghz", help="comma-separated laser detunings")
    p.add_argument("--tau-min-ns", dest="tau_min_ns", type=float)
    p.add_argument("--tau-max-ns", dest="tau_max_ns", type=float)
    p.add_argument("--tau-points", dest="tau_points", type=int)
    p.add_argument("--mw-detuning-mhz", dest="mw_detuning_mhz", type=float)
    p.add_argument("--t2-star-ns", dest="t2_star_ns", type=float)
    p.set_defaults(func=cmd_ramsey)

    p = subs.add_parser("cluster", help="multi-emitter sequence with readout crosstalk")
    _add_common(p)
    p.add_argument("--cluster", help="cluster JSON file")
    p.add_argument("--sequence", help="sequence JSON file")
    p.set_defaults(func=cmd_cluster)

    p = subs.add_parser("fit-ple", help="multi-Lorentzian fit of an excitation spectrum")
    _add_common(p)
    p.add_argument("--input", help="spectrum CSV (frequency_ghz,counts)")
    p.add_argument("--peaks", type=int, help="number of peaks to fit")
    p.add_argument("--poisson-weighting", dest="poisson_weighting", action="store_const", const=True)
    p.set_defaults(func=cmd_fit_ple)

    p = subs.add_parser("localize", help="Gaussian-spot localization of a scan image")
    _add_common(p)
    p.add_argument("--input", help="scan image text file")
    p.set_defaults(func=cmd_localize)

    p = subs.add_parser("yield", help="register-yield Monte Carlo sweep")
    _add_common(p)
    p.add_argument("--dataset", help="measured frequency CSV")
    p.add_argument("--surrogate", choices=["pcd", "scd"], help="generate a Gaussian surrogate instead")
    p.add_argument("--bandwidth", help="KDE bandwidth in GHz, or 'auto'")
    p.add_argument("--weighting", choices=["transition", "site"])
    p.add_argument("--preset", help="msr, ssr, or a preset JSON file")
    p.add_argument("--n-values", dest="n_values", help="comma-separated register sizes")
    p.add_argument("--thresholds", help="comma-separated crosstalk tolerances")
    p.add_argument("--trials", type=int)
    p.add_argument("--mode", choices=["worst_case", "permissive"])
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_yield)

    p = subs.add_parser("sample-dist", help="fit a KDE and draw samples from it")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--surrogate", choices=["pcd", "scd"])
    p.add_argument("--bandwidth")
    p.add_argument("--weighting", choices=["transition", "site"])
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.set_defaults(func=cmd_sample_dist)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        written = args.func(args)
    except (ParseError, DomainError, DegenerateInputError, FileNotFoundError,
            json.JSONDecodeError, KeyError) as exc:
        print(f"nvregister: input error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, UnsolvableError) as exc:
        print(f"nvregister: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
