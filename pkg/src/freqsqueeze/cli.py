"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure
(non-convergence, non-physical state, failed fit), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import detector as det
from .fitting import FitError, fit_parametric_gain, fit_saturation
from .nlo import ConvergenceError, design_poling, save_poling_csv
from .pipeline import ConfigError, PipelineError, emit_report, load_config, run_pipeline
from .simulability import SimulabilityInput, epsilon_surface, simulability_epsilon

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(raw: dict, pairs) -> dict:
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: '{p}' is not a section")
        node[parts[-1]] = _parse_value(value)
    return raw


def _out_dir(args, default="out") -> Path:
    out = Path(args.out_dir or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_xy(path):
    """Two or three numeric columns (x, y[, sigma]); a non-numeric first row is a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] not in (2, 3):
        raise ConfigError(f"{path}: expected 2 or 3 numeric columns")
    sigma = data[:, 2] if data.shape[1] == 3 else None
    return data[:, 0], data[:, 1], sigma


def _grid(spec: str) -> np.ndarray:
    """``start:stop:num`` or a comma-separated list."""
    try:
        if ":" in spec:
            a, b, n = spec.split(":")
            return np.linspace(float(a), float(b), int(n))
        return np.array([float(v) for v in spec.split(",")])
    except ValueError:
        raise ConfigError(f"cannot parse grid {spec!r}; use start:stop:num or a,b,c") from None


# --- subcommands ----------------------------------------------------------------


def cmd_run(args) -> int:
    raw = _apply_overrides(_read_json(args.config), args.set)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out_dir is not None:
        raw["output_dir"] = args.out_dir
    cfg = load_config(raw)
    out = Path(cfg["output_dir"])
    try:
        bundle = run_pipeline(cfg)
    except PipelineError as exc:
        exc.bundle.failed_stage = exc.stage
        emit_report(exc.bundle, out)
        raise
    manifest = emit_report(bundle, out)
    print(json.dumps({"manifest": str(manifest), **bundle.summary}, sort_keys=True))
    return EXIT_OK


def _emit_fit(result, args, name) -> int:
    out = _out_dir(args)
    doc = result.to_dict()
    (out / name).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def _fit(func, args, name) -> int:
    P, y, s = _read_xy(args.data)
    try:
        result = func(P, y, s)
    except ValueError as exc:
        # malformed data; FitError (non-convergence) is a numeric failure
        raise ConfigError(f"{args.data}: {exc}") from None
    return _emit_fit(result, args, name)


def cmd_fit_gain(args) -> int:
    return _fit(fit_parametric_gain, args, "fit_gain.json")


def cmd_fit_saturation(args) -> int:
    return _fit(fit_saturation, args, "fit_saturation.json")


def cmd_simulability(args) -> int:
    if args.eta_d_grid or args.p_d_grid:
        if not (args.eta_d_grid and args.p_d_grid):
            raise ConfigError("--eta-d-grid and --p-d-grid go together")
        ed, pd = _grid(args.eta_d_grid), _grid(args.p_d_grid)
        try:
            surf = epsilon_surface(ed, pd, args.r, args.eta, args.K)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        path = _out_dir(args) / "simulability_surface.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eta_D", "p_D", "epsilon"])
            for i, a in enumerate(ed):
                for j, b in enumerate(pd):
                    w.writerow([repr(float(a)), repr(float(b)), repr(float(surf[i, j]))])
        print(str(path))
        return EXIT_OK
    try:
        inp = SimulabilityInput(args.r, args.eta, args.eta_d, args.p_d, args.K)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(json.dumps({"epsilon": simulability_epsilon(inp)}))
    return EXIT_OK


def cmd_roc(args) -> int:
    section = _read_json(args.config).get("detector", {})
    for key in ("gain", "readout_sigma", "qe", "dark_rate"):
        v = getattr(args, key)
        if v is not None:
            section[key] = v
    if args.profile is not None:
        section["profile"] = args.profile
    overrides = {k: section[k] for k in ("gain", "readout_sigma", "qe", "adc_k", "bias", "dark_rate") if k in section}
    try:
        cam = det.EmccdConfig.from_profile(section.get("profile", "default"), **overrides)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"detector: {exc}") from None
    if not cam.readout_sigma > 0:
        raise ConfigError("detector: the ROC model needs positive readout noise")
    t = _grid(args.thresholds) if args.thresholds else np.linspace(0, 10 * cam.readout_sigma, 101)
    roc = det.roc_curve(cam, t)
    path = _out_dir(args) / "roc.csv"
    det.write_roc_csv(path, t, roc)
    print(str(path))
    return EXIT_OK


def cmd_poling(args) -> int:
    afc = _read_json(args.config).get("afc", {}) or {}
    pol = dict(afc.get("poling") or {})
    for key in ("beta_i", "beta_f", "quantum", "tanh_fraction", "end_span"):
        v = getattr(args, key)
        if v is not None:
            pol[key] = v
    length = args.length if args.length is not None else afc.get("length")
    if length is None or "beta_i" not in pol or "beta_f" not in pol:
        raise ConfigError("poling needs --length, --beta-i and --beta-f (or an afc section in --config)")
    try:
        prof = design_poling(
            pol["beta_i"], pol["beta_f"], length, pol.get("quantum", 2.5e-8), pol.get("tanh_fraction", 0.0), pol.get("end_span")
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    path = _out_dir(args) / "poling.csv"
    save_poling_csv(prof, path)
    print(json.dumps({"path": str(path), "domains": int(len(prof.domain_lengths)), "length": prof.total_length}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqsqueeze", description="Multimode squeezed-light pipeline and analyses.")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
    p.add_argument("--out-dir", default=None, help="output directory (overrides the config)")
    # the global flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the full pipeline from a JSON config", parents=[common])
    r.add_argument("config")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config field (JSON value)")
    r.set_defaults(func=cmd_run)

    for name, func, what in (
        ("fit-gain", cmd_fit_gain, "fit etaM sinh^2(sqrt(P/P0)) to power,mean[,sigma] CSV"),
        ("fit-saturation", cmd_fit_saturation, "fit c_max (1 - exp(-P/P_sat)) to power,conversion[,sigma] CSV"),
    ):
        f = sub.add_parser(name, help=what, parents=[common])
        f.add_argument("data")
        f.set_defaults(func=func)

    s = sub.add_parser("simulability", help="minimal total-variation distance of the classical simulability bound", parents=[common])
    s.add_argument("--r", type=float, required=True)
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("--eta-d", type=float, default=1.0)
    s.add_argument("--p-d", type=float, default=0.0)
    s.add_argument("--K", type=int, required=True)
    s.add_argument("--eta-d-grid", help="surface mode: start:stop:num or list")
    s.add_argument("--p-d-grid", help="surface mode: start:stop:num or list")
    s.set_defaults(func=cmd_simulability)

    c = sub.add_parser("roc", help="false-click rate and detection efficiency against threshold", parents=[common])
    c.add_argument("--config")
    c.add_argument("--profile")
    c.add_argument("--gain", type=float)
    c.add_argument("--readout-sigma", dest="readout_sigma", type=float)
    c.add_argument("--qe", type=float)
    c.add_argument("--dark-rate", dest="dark_rate", type=float)
    c.add_argument("--thresholds", help="electrons, start:stop:num or list")
    c.set_defaults(func=cmd_roc)

    q = sub.add_parser("poling", help="design a chirped quasi-phase-matching domain pattern", parents=[common])
    q.add_argument("--config")
    q.add_argument("--length", type=float, help="crystal length (m)")
    q.add_argument("--beta-i", dest="beta_i", type=float, help="initial spatial frequency (1/m)")
    q.add_argument("--beta-f", dest="beta_f", type=float, help="final spatial frequency (1/m)")
    q.add_argument("--quantum", type=float, help="domain length quantum (m)")
    q.add_argument("--tanh-fraction", dest="tanh_fraction", type=float)
    q.add_argument("--end-span", dest="end_span", type=float)
    q.set_defaults(func=cmd_poling)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc.cause, OSError) else EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConvergenceError, FitError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
