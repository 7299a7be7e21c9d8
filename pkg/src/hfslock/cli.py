"""``hfslock`` command-line interface.

Exit status: 0 success, 1 invalid input or configuration, 2 numerical
failure (fit not converged, lock lost).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, kernels
from .angular import HalfInt, HfsConstants
from .config import Config, ConfigError, build_line, build_lock, scan_axis
from .fitter import FitError, FitProblem, fit, snr_estimate
from .levels import MG_REFERENCES, DatabaseError, classify, load_database, mg_offset, predict
from .lineshape import noise_for_snr, read_trace_csv, synthesize, write_trace_csv
from .linearize import (DEFAULT_FSR_MHZ, DEFAULT_FSR_UNCERTAINTY_MHZ, DEFAULT_PROMINENCE, Anchor,
                        LinearizeError, linearize_trace, write_sidecar)
from .locksim import run_lock

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


class NumericalFailure(RuntimeError):
    """Raised after outputs are written when the computation itself failed."""


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, HalfInt):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


class Run:
    """Collects what a command read, wrote and resolved, for the manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.config: dict = {}
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.seeds: dict = {}

    def input(self, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"input file not found: {p}")
        self.inputs.append(p)
        return p

    def output(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p

    def emit_json(self, obj, out: Optional[str]) -> None:
        text = _dump(obj)
        if out:
            self.output(out).write_text(text)
        else:
            sys.stdout.write(text)

    def manifest(self) -> dict:
        argv = {k: v for k, v in vars(self.args).items() if k not in ("func", "manifest")}
        return {
            "tool": "hfslock",
            "version": __version__,
            "backend": kernels.BACKEND,
            "command": self.command,
            "arguments": argv,
            "configuration": self.config,
            "seeds": self.seeds,
            "inputs": {str(p): _sha256(p) for p in self.inputs},
            "outputs": {str(p): _sha256(p) for p in self.outputs if p.exists()},
        }


def _manifest_path(args, run: Run) -> Optional[Path]:
    if args.manifest:
        return Path(args.manifest)
    if run.outputs:
        first = run.outputs[0]
        return first.with_name(first.name + ".manifest.json")
    return None


# ------------------------------------------------------------- commands

def cmd_synth(args, run: Run) -> None:
    cfg = Config.load(run.input(args.config))
    model, i, jl, ju = build_line(cfg)
    axis = scan_axis(cfg, model)
    if cfg.has("noise.snr") and cfg.has("noise.sigma"):
        raise ConfigError(f"{cfg.source}: give either noise.snr or noise.sigma, not both")
    if cfg.has("noise.snr"):
        sigma = noise_for_snr(model, axis, cfg.get_float("noise.snr", positive=True))
    else:
        sigma = cfg.get_float("noise.sigma", 0.0, minimum=0.0)
    seed = args.seed if args.seed is not None else cfg.get_int("noise.seed", None)
    cfg.resolved["noise.seed"] = seed
    cfg.resolved["noise.sigma_resolved"] = sigma
    cfg.check_unused()
    if not args.out:
        raise ConfigError("synth needs --out for the trace CSV")
    trace = synthesize(model, axis, sigma, seed=seed)
    write_trace_csv(trace, run.output(args.out))
    run.config = cfg.resolved
    run.seeds = {"noise": seed}


def cmd_fit(args, run: Run) -> None:
    trace = read_trace_csv(run.input(args.trace))
    if not trace.frequency_axis_valid:
        raise ConfigError(f"{args.trace} has no calibrated frequency axis (sample-index abscissa); "
                          f"run 'hfslock linearize' on it first")
    fixed = [name for group in (args.fix or []) for name in group.split(",") if name]
    problem = FitProblem.create(
        trace, args.I, args.J_lower, args.J_upper,
        HfsConstants(args.A_lower, args.B_lower), HfsConstants(args.A_upper, args.B_upper),
        cog=args.cog, gaussian_fwhm=args.gaussian_fwhm, lorentzian_fwhm=args.lorentzian_fwhm,
        fixed=fixed)
    result = fit(problem, max_iter=args.max_iter)
    if not args.out:
        raise ConfigError("fit needs --out for the result JSON")
    out = run.output(args.out)
    dev = run.output(args.deviation or out.with_suffix(".deviation.csv"))
    doc = result.to_json()
    doc["snr_estimate"] = snr_estimate(trace, result) if result.converged else None
    doc["n_samples"] = len(trace)
    doc["deviation_csv"] = dev.name
    out.write_text(_dump(doc))
    write_trace_csv(result.deviation, dev)
    run.config = {"initial": dict(zip(problem.names, problem.initial.tolist())), "fixed": fixed}
    if not result.converged:
        raise NumericalFailure(f"fit did not converge: {result.message}")


def cmd_predict(args, run: Run) -> None:
    db = load_database(run.input(args.db))
    lines = predict(db, (args.window[0], args.window[1]), args.temperature)
    run.config = {"window_nm": list(args.window), "temperature_k": args.temperature}
    run.emit_json([p.to_json() for p in lines], args.out)


def cmd_classify(args, run: Run) -> None:
    db = load_database(run.input(args.db))
    lines = classify(db, args.wavelength, args.tolerance, args.temperature)
    run.config = {"wavelength_nm": args.wavelength, "tolerance_nm": args.tolerance,
                  "temperature_k": args.temperature}
    run.emit_json([p.to_json() for p in lines], args.out)


def cmd_mg_offset(args, run: Run) -> None:
    isotopes = sorted(MG_REFERENCES) if args.isotope == "all" else [int(args.isotope)]
    rows = []
    for iso in isotopes:
        ref = MG_REFERENCES[iso]
        rows.append({
            "isotope": iso,
            "reference_fourth_subharmonic_nm": ref.fourth_subharmonic,
            "wavelength_nm": args.wavelength,
            "offset_mhz": mg_offset(args.wavelength, ref),
        })
    run.config = {"wavelength_nm": args.wavelength, "isotope": args.isotope}
    run.emit_json(rows, args.out)


def cmd_linearize(args, run: Run) -> None:
    trace = read_trace_csv(run.input(args.trace))
    anchor = Anchor(args.anchor_sample, args.anchor_frequency, args.anchor_uncertainty)
    if trace.frequency_axis_valid:
        raise ConfigError(f"{args.trace} already has a frequency axis")
    out_trace, axis = linearize_trace(trace, anchor, args.fsr, args.fsr_uncertainty, args.min_prominence,
                                      args.refine)
    if not args.out:
        raise ConfigError("linearize needs --out for the calibrated trace CSV")
    out = run.output(args.out)
    write_trace_csv(out_trace, out)
    write_sidecar(axis, run.output(args.sidecar or out.with_suffix(".axis.json")))
    run.config = {"fsr_mhz": args.fsr, "fsr_uncertainty_mhz": args.fsr_uncertainty,
                  "anchor": [anchor.sample, anchor.frequency, anchor.uncertainty],
                  "min_prominence": args.min_prominence, "refine": args.refine}


def cmd_lock(args, run: Run) -> None:
    cfg = Config.load(run.input(args.config))
    laser, config, engaged = build_lock(cfg, args.seed)
    if args.open_loop:
        engaged = False
        cfg.resolved["lock.engaged"] = False
    cfg.check_unused()
    if not args.out:
        raise ConfigError("lock needs --out (output directory)")
    result = run_lock(laser, config, engaged)
    out_dir = Path(args.out)
    result.write_csv(run.output(out_dir / "lockrun.csv"))
    result.write_stats(run.output(out_dir / "stats.json"))
    run.config = cfg.resolved
    run.seeds = {"laser": laser.seed, "detector": config.detector_seed}
    if engaged and not result.locked:
        raise NumericalFailure("lock lost: laser left the capture range of the discriminator")


# --------------------------------------------------------------- parser

def _global_flags(default):
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=default, help="override every random seed of the run")
    g.add_argument("--out", default=default, help="output file (directory for 'lock')")
    g.add_argument("--manifest", default=default,
                   help="run manifest path (default: <first output>.manifest.json)")
    return g


def build_parser() -> argparse.ArgumentParser:
    # accepted before or after the subcommand; the subcommand copies must not
    # overwrite a value given before it, hence SUPPRESS there
    common = _global_flags(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="hfslock", description=__doc__.splitlines()[0],
                                parents=[_global_flags(None)])
    p.add_argument("--version", action="version", version=f"hfslock {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="synthesize a hyperfine scan from a config file")
    s.add_argument("config")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit", parents=[common], help="fit a calibrated scan")
    s.add_argument("trace")
    s.add_argument("--I", required=True, dest="I", help="nuclear spin, e.g. 5/2")
    s.add_argument("--J-lower", required=True, dest="J_lower")
    s.add_argument("--J-upper", required=True, dest="J_upper")
    s.add_argument("--A-lower", type=float, required=True, dest="A_lower")
    s.add_argument("--B-lower", type=float, default=0.0, dest="B_lower")
    s.add_argument("--A-upper", type=float, required=True, dest="A_upper")
    s.add_argument("--B-upper", type=float, default=0.0, dest="B_upper")
    s.add_argument("--cog", type=float, default=0.0)
    s.add_argument("--gaussian-fwhm", type=float, default=375.0)
    s.add_argument("--lorentzian-fwhm", type=float, default=20.0)
    s.add_argument("--fix", action="append", help="comma-separated parameter names to hold; 'intensities' "
                                                  "holds all intensities")
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--deviation", default=None, help="deviation CSV (default: <out>.deviation.csv)")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", parents=[common], help="Ritz lines in a vacuum wavelength window")
    s.add_argument("db")
    s.add_argument("--window", type=float, nargs=2, required=True, metavar=("MIN_NM", "MAX_NM"))
    s.add_argument("--temperature", type=float, default=2000.0)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("classify", parents=[common], help="candidate assignments of a measured line")
    s.add_argument("db")
    s.add_argument("--wavelength", type=float, required=True, help="vacuum wavelength, nm")
    s.add_argument("--tolerance", type=float, default=0.005, help="nm")
    s.add_argument("--temperature", type=float, default=2000.0)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("mg-offset", parents=[common], help="offset from the Mg+ 4th sub-harmonics")
    s.add_argument("--wavelength", type=float, default=1118.5397, help="vacuum wavelength, nm")
    s.add_argument("--isotope", choices=("24", "25", "26", "all"), default="all")
    s.set_defaults(func=cmd_mg_offset)

    s = sub.add_parser("linearize", parents=[common], help="frequency axis from FPI markers")
    s.add_argument("trace")
    s.add_argument("--fsr", type=float, default=DEFAULT_FSR_MHZ, help="MHz")
    s.add_argument("--fsr-uncertainty", type=float, default=DEFAULT_FSR_UNCERTAINTY_MHZ, help="MHz")
    s.add_argument("--anchor-sample", type=float, required=True)
    s.add_argument("--anchor-frequency", type=float, required=True, help="MHz")
    s.add_argument("--anchor-uncertainty", type=float, default=50.0, help="MHz")
    s.add_argument("--min-prominence", type=float, default=DEFAULT_PROMINENCE)
    s.add_argument("--refine", choices=("lsq", "three_point"), default="lsq")
    s.add_argument("--sidecar", default=None, help="axis JSON (default: <out>.axis.json)")
    s.set_defaults(func=cmd_linearize)

    s = sub.add_parser("lock", parents=[common], help="simulate the frequency lock")
    s.add_argument("config")
    s.add_argument("--open-loop", action="store_true", help="run with the regulator disengaged")
    s.set_defaults(func=cmd_lock)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    run = Run(args.command, args)
    status = EXIT_OK
    try:
        args.func(args, run)
    except NumericalFailure as exc:
        print(f"hfslock {args.command}: {exc}", file=sys.stderr)
        status = EXIT_NUMERICAL
    except (ConfigError, FitError, DatabaseError, LinearizeError, ValueError, OSError) as exc:
        print(f"hfslock {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"hfslock {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    path = _manifest_path(args, run)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_dump(run.manifest()))
    return status


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
