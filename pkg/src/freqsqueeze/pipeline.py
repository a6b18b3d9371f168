"""Configuration-driven end-to-end run.

Stages, in order: ``dopa`` (squeezing and supermodes), ``loss`` before
conversion, ``afc`` (frequency conversion), ``loss`` after it, ``binning``
onto spectrometer pixels, ``sampling`` of pixel photon counts and
``detection`` (EM gain, readout, thresholding and analog inversion).

A run is a pure function of the configuration: every random draw comes
from ``numpy.random.SeedSequence(seed)`` spawned once per stage.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import detector as det
from .gaussian import (
    LossChannel,
    apply_loss,
    bloch_messiah,
    covariance_from_greens,
    save_covariance,
)
from .nlo import (
    DispersionProfile,
    FrequencyGrid,
    PropagationConfig,
    PumpPulse,
    design_poling,
    gaussian_pump,
    monochromatic_pump,
    save_poling_csv,
    solve_afc,
    solve_dopa,
)
from .photon_stats import mean_photons, photon_covariance, sample_patterns, write_samples_csv

__all__ = [
    "ConfigError",
    "PipelineError",
    "PipelineBundle",
    "load_schema",
    "load_config",
    "validate_config",
    "canonical_json",
    "config_hash",
    "run_pipeline",
    "run_sweep",
    "emit_report",
    "set_path",
]

# hafnian cost grows exponentially with the photon number of a pattern
EXACT_MAX_MEAN_PHOTONS = 10.0

STAGES = ("config", "dopa", "loss", "afc", "binning", "sampling", "detection", "report")

_DEFAULTS = {
    "seed": 0,
    "output_dir": "out",
    "grid": {"center": 0.0},
    "dopa": {"kappa": 1.0, "z_steps": 64, "dispersion": {}, "pump_dispersion": None},
    "afc": None,
    "loss": {"pre_afc_eta": 1.0, "post_afc_eta": 1.0, "thermal_nbar": 0.0},
    "spectrometer": {"n_bins": 8, "psf_sigma": 0.6, "min_points_per_bin": 4},
    "detector": {"profile": "default", "threshold_sigmas": 5.0, "histogram_bins": 64},
    "sampling": {"shots": 1000, "method": "copula", "max_cutoff": 40},
    "sweep": None,
}
_AFC_DEFAULTS = {
    "enabled": True,
    "kappa": 1.0,
    "z_steps": 64,
    "dispersion_ir": {},
    "dispersion_vis": {},
    "pump_dispersion": None,
    "poling": None,
}


class ConfigError(ValueError):
    """Invalid configuration; raised before any computation."""


class PipelineError(RuntimeError):
    """A stage failed; ``bundle`` holds everything produced before it."""

    def __init__(self, stage: str, cause: BaseException, bundle: "PipelineBundle"):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.bundle = bundle


@dataclass
class PipelineBundle:
    """Everything a run produced, keyed for :func:`emit_report`."""

    config: dict
    tables: dict = field(default_factory=dict)
    covariances: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    extra_files: dict = field(default_factory=dict)
    completed: list = field(default_factory=list)
    failed_stage: str | None = None


# --- configuration --------------------------------------------------------------


def load_schema() -> dict:
    text = resources.files("freqsqueeze").joinpath("schema/pipeline.schema.json").read_text()
    return json.loads(text)


def _merge(defaults, given):
    if given is None:
        return copy.deepcopy(defaults)
    if isinstance(defaults, dict) and isinstance(given, dict):
        out = copy.deepcopy(defaults)
        for k, v in given.items():
            out[k] = _merge(defaults.get(k), v) if k in defaults else copy.deepcopy(v)
        return out
    return copy.deepcopy(given)


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Copy of ``cfg`` with ``cfg[a][b]... = value`` for ``dotted = 'a.b...'``."""
    out = copy.deepcopy(cfg)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"'{dotted}' does not name a field of the configuration")
        node = node[k]
    node[keys[-1]] = value
    return out


def validate_config(raw: dict) -> dict:
    """Schema validation, defaults and cross-field checks."""
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    cfg = _merge(_DEFAULTS, raw)
    if cfg["afc"] is not None:
        cfg["afc"] = _merge(_AFC_DEFAULTS, cfg["afc"])
    N = cfg["grid"]["n_modes"]
    Np = 2 * N - 1
    for stage in ("dopa", "afc"):
        sec = cfg.get(stage)
        if not sec:
            continue
        pump = sec["pump"]
        shape = pump.get("shape", "gaussian")
        if shape == "gaussian" and "fwhm" not in pump:
            raise ConfigError(f"{stage}/pump: a gaussian pump needs 'fwhm'")
        for mask in ("mu", "phi"):
            if pump.get(mask) is not None and len(pump[mask]) != Np:
                raise ConfigError(f"{stage}/pump/{mask}: needs {Np} values (pump grid of 2 n_modes - 1)")
    spec = cfg["spectrometer"]
    if N < spec["n_bins"] * spec["min_points_per_bin"]:
        raise ConfigError(
            f"spectrometer: {spec['n_bins']} bins need at least {spec['n_bins'] * spec['min_points_per_bin']} grid points, "
            f"grid has {N}"
        )
    if cfg["sampling"]["method"] == "exact" and N > 16:
        raise ConfigError("sampling: exact sampling is limited to 16 modes")
    try:
        _detector_config(cfg)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"detector: {exc}") from None
    if cfg["sweep"] is not None:
        set_path(cfg, cfg["sweep"]["parameter"], 0.0)
    return cfg


def load_config(source) -> dict:
    """Read and validate a JSON configuration from a path or a dict."""
    if isinstance(source, dict):
        raw = source
    else:
        try:
            raw = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: invalid JSON ({exc})") from None
    return validate_config(raw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical configuration; where the output goes is not part of it."""
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


# --- stage helpers ---------------------------------------------------------------


def _dispersion(d: dict | None) -> DispersionProfile | None:
    if d is None:
        return None
    return DispersionProfile(tuple(d.get("beta_coeffs", ())), d.get("beta0_rate", 0.0), d.get("offset", 0.0))


def _pump(p: dict, grid: FrequencyGrid) -> PumpPulse:
    if p.get("shape", "gaussian") == "monochromatic":
        pulse = monochromatic_pump(grid, p["peak"])
    else:
        pulse = gaussian_pump(grid, p["peak"], p["fwhm"], p.get("chirp", 0.0))
    return pulse.with_masks(p.get("mu"), p.get("phi"))


def _detector_config(cfg: dict) -> det.EmccdConfig:
    d = cfg["detector"]
    overrides = {k: d[k] for k in ("gain", "readout_sigma", "qe", "adc_k", "bias", "dark_rate") if k in d}
    return det.EmccdConfig.from_profile(d.get("profile", "default"), **overrides)


def _optics(cfg: dict, bundle: PipelineBundle | None = None):
    """DOPA, losses and AFC. Returns the detected fine-grid state and its grid."""
    N = cfg["grid"]["n_modes"]
    spacing = cfg["grid"]["spacing"]
    center = cfg["grid"]["center"]
    ir_grid = FrequencyGrid(N, center, spacing)

    stage = "dopa"
    try:
        d = cfg["dopa"]
        pgrid = FrequencyGrid(2 * N - 1, 2 * center, spacing)
        G = solve_dopa(
            _pump(d["pump"], pgrid),
            _dispersion(d["dispersion"]),
            PropagationConfig(length=d["length"], z_steps=d["z_steps"], kappa=d["kappa"]),
            pump_disp=_dispersion(d["pump_dispersion"]),
        )
        sigma_ir = covariance_from_greens(G)
        if bundle is not None:
            bm = bloch_messiah(G)
            bundle.tables["supermodes.csv"] = (
                ["index", "r", "mean_photons", "squeezing_db"],
                [[k, r, n, db] for k, (r, n, db) in enumerate(zip(bm.squeezing_params, bm.mean_photons, bm.squeezing_db))],
            )
            top = min(N, 8)
            bundle.tables["supermode_spectra.csv"] = (
                ["omega"] + [f"mode{k}" for k in range(top)],
                [[w] + list(np.abs(bm.output_modes[i, :top]) ** 2) for i, w in enumerate(ir_grid.omega)],
            )
            bundle.covariances["sigma_ir.gcov"] = sigma_ir
            bundle.summary["dopa_total_mean_photons"] = float(mean_photons(sigma_ir).sum())
            bundle.summary["dopa_max_squeezing_r"] = float(bm.squeezing_params[0]) if N else 0.0
            bundle.completed.append("dopa")

        stage = "loss"
        loss = cfg["loss"]
        sigma = apply_loss(sigma_ir, LossChannel.uniform(loss["pre_afc_eta"], N, loss["thermal_nbar"]))

        afc = cfg["afc"]
        grid = ir_grid
        conversion = None
        if afc is not None and afc["enabled"]:
            stage = "afc"
            pg = FrequencyGrid(2 * N - 1, 0.0, spacing)
            poling = None
            mode = "rotating"
            if afc["poling"] is not None:
                pol = afc["poling"]
                poling = design_poling(
                    pol["beta_i"],
                    pol["beta_f"],
                    afc["length"],
                    pol.get("quantum", 2.5e-8),
                    pol.get("tanh_fraction", 0.0),
                    pol.get("end_span"),
                )
                mode = "explicit"
            B = solve_afc(
                _pump(afc["pump"], pg),
                _dispersion(afc["dispersion_ir"]),
                _dispersion(afc["dispersion_vis"]),
                poling,
                PropagationConfig(length=afc["length"], z_steps=afc["z_steps"], kappa=afc["kappa"], poling_mode=mode),
                pump_disp=_dispersion(afc["pump_dispersion"]),
            )
            sigma = B.visible_covariance(sigma)
            conversion = np.linalg.norm(B.G_vis_ir, axis=0) ** 2
            if bundle is not None:
                if poling is not None:
                    bundle.extra_files["poling.csv"] = poling
                bundle.completed.append("afc")

        stage = "loss"
        sigma = apply_loss(sigma, LossChannel.uniform(loss["post_afc_eta"], N, loss["thermal_nbar"]))
        if bundle is not None:
            bundle.completed.append("loss")
    except Exception as exc:
        if bundle is None:
            raise
        raise PipelineError(stage, exc, bundle) from exc
    return sigma, grid, sigma_ir, conversion


def run_pipeline(cfg: dict) -> PipelineBundle:
    """Run every stage; stage failures raise :class:`PipelineError` carrying the partial bundle."""
    if "grid" not in cfg or "n_modes" not in cfg.get("grid", {}) or "sampling" not in cfg:
        cfg = validate_config(cfg)
    bundle = PipelineBundle(config=cfg)
    seeds = np.random.SeedSequence(cfg["seed"]).spawn(3)

    sigma, grid, sigma_ir, conversion = _optics(cfg, bundle)
    n_ir = mean_photons(sigma_ir)
    n_det = mean_photons(sigma)
    rows = [[w, a, b] for w, a, b in zip(grid.offsets, n_ir, n_det)]
    header = ["detuning", "mean_photons_dopa", "mean_photons_detected"]
    if conversion is not None:
        header.append("conversion")
        rows = [r + [c] for r, c in zip(rows, conversion)]
    bundle.tables["spectrum.csv"] = (header, rows)
    bundle.covariances["sigma_detected.gcov"] = sigma
    fine_cov = photon_covariance(sigma)
    bundle.arrays["photon_covariance_fine.csv"] = fine_cov
    bundle.summary["detected_total_mean_photons"] = float(n_det.sum())
    if conversion is not None:
        bundle.summary["mean_conversion"] = float(conversion.mean())

    stage = "binning"
    try:
        sc = cfg["spectrometer"]
        spec = det.SpectrometerConfig.uniform(grid, sc["n_bins"], sc["psf_sigma"], sc["min_points_per_bin"])
        binned = det.bin_covariance(sigma, spec)
        bundle.tables["binned_mean.csv"] = (["pixel", "mean_photons"], [[p, m] for p, m in enumerate(binned.mean)])
        bundle.arrays["binned_covariance.csv"] = binned.covariance
        bundle.completed.append("binning")

        stage = "sampling"
        smp = cfg["sampling"]
        shots = smp["shots"]
        if smp["method"] == "exact":
            if n_det.sum() > EXACT_MAX_MEAN_PHOTONS:
                raise ValueError(
                    f"exact sampling of a state with {n_det.sum():.3g} mean photons is intractable "
                    f"(limit {EXACT_MAX_MEAN_PHOTONS}); use the copula sampler"
                )
            rng = np.random.default_rng(seeds[0])
            patterns = sample_patterns(sigma, shots, seed=int(rng.integers(2**63)), max_cutoff=smp["max_cutoff"])
            counts = det.route_photons(patterns, binned.weights, rng)
        else:
            counts = det.sample_binned_counts(binned.mean, binned.covariance, shots, seeds[0])
        bundle.arrays["samples.csv"] = counts
        bundle.completed.append("sampling")

        stage = "detection"
        cam = _detector_config(cfg)
        frames = det.simulate_frames(counts, cam, seeds[1])
        t = cfg["detector"]["threshold_sigmas"] * cam.readout_sigma
        clicks = det.threshold_frames(frames, t)
        bundle.arrays["frames.csv"] = frames
        bundle.arrays["clicks.csv"] = clicks.astype(np.int64)
        nb = cfg["detector"]["histogram_bins"]
        if frames.size:
            hist, edges = np.histogram(frames.ravel(), bins=nb)
        else:
            hist, edges = np.zeros(nb, dtype=np.int64), np.linspace(0.0, 1.0, nb + 1)
        bundle.tables["analog_histogram.csv"] = (
            ["bin_low", "bin_high", "count"],
            [[lo, hi, int(c)] for lo, hi, c in zip(edges[:-1], edges[1:], hist)],
        )
        per_frame = clicks.sum(axis=1) if clicks.size else np.zeros(0, dtype=np.int64)
        ch = np.bincount(per_frame, minlength=clicks.shape[1] + 1) if clicks.ndim == 2 else np.zeros(1, dtype=np.int64)
        bundle.tables["click_histogram.csv"] = (["clicks_per_frame", "frames"], [[k, int(c)] for k, c in enumerate(ch)])
        if shots > 0:
            raw = det.raw_moments(frames)
            moments = det.analog_invert_moments(raw, cam.gain, cam.readout_sigma)
            qe = cam.qe if cam.qe > 0 else 1.0
            bundle.tables["analog_moments.csv"] = (
                ["pixel", "recovered_mean_photons", "recovered_variance_photoelectrons", "model_mean_photons"],
                [[p, a / qe, v, m] for p, (a, v, m) in enumerate(zip(moments.n, moments.variance, binned.mean))],
            )
            bundle.summary["click_rate"] = float(clicks.mean())
        bundle.summary["threshold_electrons"] = float(t)
        bundle.completed.append("detection")
    except Exception as exc:
        raise PipelineError(stage, exc, bundle) from exc

    if cfg["sweep"] is not None:
        sw = cfg["sweep"]
        bundle.tables["sweep.csv"] = run_sweep(cfg, sw["parameter"], sw["values"], sw.get("workers", 1))
    bundle.summary["seed"] = cfg["seed"]
    bundle.summary["config_sha256"] = config_hash(cfg)
    return bundle


def _sweep_point(args):
    cfg, parameter, value = args
    point = validate_config(set_path(cfg, parameter, value))
    sigma, _, sigma_ir, conversion = _optics(point)
    conv = float(conversion.mean()) if conversion is not None else float("nan")
    return [value, float(mean_photons(sigma_ir).sum()), float(mean_photons(sigma).sum()), conv]


def run_sweep(cfg: dict, parameter: str, values, workers: int = 1):
    """Optics-only runs over ``values`` of one dotted parameter, merged in input order."""
    base = {k: v for k, v in cfg.items() if k != "sweep"}
    base["sweep"] = None
    jobs = [(base, parameter, float(v)) for v in values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    return (["value", "dopa_total_mean_photons", "detected_total_mean_photons", "mean_conversion"], rows)


# --- report ---------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return repr(float(v))


def _write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def emit_report(bundle: PipelineBundle, out_dir) -> Path:
    """Write tables, arrays, covariances and ``manifest.json``; returns the manifest path.

    The manifest lists the configuration hash, the seed, the stages that
    completed and the SHA-256 of every written file. It carries no
    timestamps, so identical runs give identical manifests.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (header, rows) in sorted(bundle.tables.items()):
        _write_table(out / name, header, rows)
        written.append(name)
    for name, arr in sorted(bundle.arrays.items()):
        arr = np.asarray(arr)
        if name in ("samples.csv", "clicks.csv"):
            write_samples_csv(out / name, arr)
        elif name == "frames.csv":
            det.write_frames_csv(out / name, arr)
            det.write_frames_binary(out / "frames.bin", arr)
            written.append("frames.bin")
        else:
            _write_table(out / name, [f"c{k}" for k in range(arr.shape[1])], arr.tolist())
        written.append(name)
    for name, sigma in sorted(bundle.covariances.items()):
        save_covariance(sigma, out / name, fmt="bin")
        written.append(name)
    for name, obj in sorted(bundle.extra_files.items()):
        if name == "poling.csv":
            save_poling_csv(obj, out / name)
            written.append(name)
    summary = dict(bundle.summary)
    summary["completed_stages"] = list(bundle.completed)
    if bundle.failed_stage is not None:
        summary["failed_stage"] = bundle.failed_stage
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    written.append("summary.json")
    stored = {k: v for k, v in bundle.config.items() if k != "output_dir"}
    (out / "config.json").write_text(json.dumps(stored, sort_keys=True, indent=2) + "\n")
    written.append("config.json")

    manifest = {
        "config_sha256": config_hash(bundle.config),
        "seed": bundle.config.get("seed"),
        "completed_stages": list(bundle.completed),
        "failed_stage": bundle.failed_stage,
        "files": {name: _sha256(out / name) for name in sorted(set(written))},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path
