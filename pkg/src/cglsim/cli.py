"""Command line entry point: config parsing, dispatch, report emission.

Reports are CSV files with '#'-prefixed metadata lines (seeds, config
hash, condition margins); exit codes are the machine contract:

    0  run completed and every verdict passed
    2  a structural hypothesis was violated (condition error)
    3  the run completed but a trend verdict failed
    1  internal error

Field-sample files use a flat binary layout for exact round-trips:
a 32-byte header (magic ``CGLF``, dimension, modes per axis, period,
sample count, reserved padding), then little-endian float64 pairs
(re, im) per wavevector in spectral lattice order, sample by sample.
"""

from __future__ import annotations

import argparse
import dataclasses
import difflib
import hashlib
import os
import struct
import sys

try:
    import tomllib
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as tomllib

from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .coefficients import ConditionError, check_conditions
from .experiments import (
    ExperimentConfig,
    run_first_bogolyubov,
    run_global_averaging,
    run_periodicity_check,
    run_second_bogolyubov,
)
from .measures import EmpiricalMeasure, wasserstein2
from .sde_integrator import solve_ensemble
from .torus_spectral import make_grid

__all__ = [
    "main",
    "parse_config",
    "RunManifest",
    "write_field_samples",
    "read_field_samples",
]

_HEADER = struct.Struct("<4sIIdI8x")      # magic, dim, N, period, n_samples
_MAGIC = b"CGLF"

_TUPLE_KEYS = {"epsilon_grid", "depth_schedule", "eval_time_grid",
               "thresholds"}


@dataclasses.dataclass(frozen=True)
class RunManifest:
    config_path: str
    config_hash: str
    out_dir: str
    subcommand: str
    timestamp: str
    version: str


# -- config ------------------------------------------------------------------

def parse_config(path) -> ExperimentConfig:
    """Load and validate a TOML experiment config.

    Top-level keys mirror :class:`ExperimentConfig` fields; unknown keys
    are rejected with the nearest valid name.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"{path}: {exc}") from exc

    valid = {f.name for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, value in raw.items():
        if key not in valid:
            near = difflib.get_close_matches(key, sorted(valid), n=1)
            hint = f"; did you mean {near[0]!r}?" if near else ""
            raise ValueError(f"{path}: unknown key {key!r}{hint}")
        if key in _TUPLE_KEYS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    if "thresholds" in kwargs:
        kwargs["thresholds"] = dict(kwargs["thresholds"])
    return ExperimentConfig(**kwargs)


def config_hash(config: ExperimentConfig) -> str:
    blob = repr(sorted(dataclasses.asdict(config).items()))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _quarter(config: ExperimentConfig) -> ExperimentConfig:
    """Shrink a config for smoke runs; verdicts are not meaningful."""
    return dataclasses.replace(
        config,
        n_paths=max(8, config.n_paths // 4),
        n_bootstrap=max(20, config.n_bootstrap // 4),
        modes_per_dim=max(8, config.modes_per_dim // 2),
        depth_schedule=tuple(config.depth_schedule[:3]),
    )


# -- binary field samples ----------------------------------------------------

def write_field_samples(path, measure: EmpiricalMeasure):
    grid = measure.grid
    if not measure.is_uniform:
        raise ValueError("field-sample files hold uniform clouds only")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, grid.dimension, grid.modes_per_dim,
                              grid.period, measure.n_samples))
        inter = np.empty(measure.samples.shape + (2,))
        inter[..., 0] = measure.samples.real
        inter[..., 1] = measure.samples.imag
        fh.write(inter.astype("<f8").tobytes())


def read_field_samples(path) -> EmpiricalMeasure:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, dim, n, period, n_samples = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        grid = make_grid(dim, n, period)
        body = np.frombuffer(fh.read(), dtype="<f8")
    expected = n_samples * grid.n_lattice * 2
    if body.size != expected:
        raise ValueError(
            f"{path}: expected {expected} floats, found {body.size}")
    body = body.reshape(n_samples, grid.n_lattice, 2)
    return EmpiricalMeasure.from_coeffs(grid, body[..., 0] + 1j * body[..., 1])


# -- CSV emission ------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w", newline="\n") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _meta_lines(manifest: RunManifest, config: ExperimentConfig,
                extra: dict) -> list:
    lines = [
        f"subcommand: {manifest.subcommand}",
        f"config_hash: {manifest.config_hash}",
        f"version: {manifest.version}",
        f"base_seed: {config.base_seed}",
    ]
    for key, val in extra.items():
        lines.append(f"{key}: {val}")
    return lines


def _condition_lines(config: ExperimentConfig) -> list:
    report = check_conditions(config.family(config.grid()))
    out = [f"condition {name}: margin {_fmt(report.margins[name])} "
           f"satisfied {report.satisfied[name]}"
           for name in sorted(report.margins)]
    out.append(f"p_max: {_fmt(report.p_max)}")
    return out


# -- subcommands -------------------------------------------------------------

def _cmd_check(manifest, config, out_dir):
    grid = config.grid()
    report = check_conditions(config.family(grid))
    rows = [{"condition": name,
             "margin": report.margins.get(name, float("nan")),
             "satisfied": report.satisfied[name]}
            for name in sorted(report.satisfied)]
    _write_csv(out_dir / "check.csv",
               _meta_lines(manifest, config, {"p_max": _fmt(report.p_max)}),
               ["condition", "margin", "satisfied"], rows)
    for row in rows:
        print(f"{row['condition']:12s} margin {row['margin']:+.4g} "
              f"{'ok' if row['satisfied'] else 'VIOLATED'}")
    if report.violations:
        for name, witness in report.violations.items():
            print(f"refuted constant {name}: {witness}")
        return 2
    return 0


def _cmd_simulate(manifest, config, out_dir):
    grid = config.grid()
    eps = config.epsilon_grid[-1]
    cset = config.family(grid, epsilon=eps)
    check_conditions(cset).require("gamma_floor")
    dt = config.dt_for(eps)
    result = solve_ensemble(
        config.initial_field(grid), config.start_s, config.horizon_T,
        config.integrator(dt), cset, config.n_paths,
        config.seed_for("simulate"))
    rows = [{"moment": k, "value": v} for k, v in sorted(
        result.moments.items())]
    extra = {"epsilon": _fmt(float(eps)), "dt": _fmt(dt),
             "n_paths": config.n_paths, "n_blown": result.n_blown,
             "ensemble_seed": result.base_seed}
    _write_csv(out_dir / "simulate_moments.csv",
               _meta_lines(manifest, config, extra)
               + _condition_lines(config),
               ["moment", "value"], rows)
    write_field_samples(out_dir / "samples_final.cglf", result.measures[-1])
    print(f"simulated {config.n_paths} paths over T={config.horizon_T} "
          f"(epsilon={eps}); moments in simulate_moments.csv")
    return 0


def _convergence_csv(manifest, config, out_dir, report, filename):
    rows = [{k: r[k] for k in ("epsilon", "estimate", "ci_low", "ci_high",
                               "n_paths", "dt", "seed")}
            for r in report.rows]
    extra = {
        "experiment": report.experiment,
        "threshold": _fmt(report.threshold),
        "monotone": report.monotone,
        "below_threshold": report.below_threshold,
        "verdict": "PASS" if report.passed else "FAIL",
    }
    for name, val in sorted(report.metadata["condition_margins"].items()):
        extra[f"margin_{name}"] = _fmt(val)
    _write_csv(out_dir / filename, _meta_lines(manifest, config, extra),
               ["epsilon", "estimate", "ci_low", "ci_high",
                "n_paths", "dt", "seed"], rows)
    for r in report.rows:
        print(f"epsilon {r['epsilon']:<8g} estimate {r['estimate']:.6g} "
              f"ci [{r['ci_low']:.6g}, {r['ci_high']:.6g}]")
    print(f"verdict: {'PASS' if report.passed else 'FAIL'} "
          f"(monotone={report.monotone}, "
          f"final<threshold={report.below_threshold})")
    return 0 if report.passed else 3


def _cmd_bogolyubov1(manifest, config, out_dir):
    return _convergence_csv(manifest, config, out_dir,
                            run_first_bogolyubov(config), "bogolyubov1.csv")


def _cmd_bogolyubov2(manifest, config, out_dir):
    return _convergence_csv(manifest, config, out_dir,
                            run_second_bogolyubov(config), "bogolyubov2.csv")


def _cmd_global(manifest, config, out_dir):
    return _convergence_csv(manifest, config, out_dir,
                            run_global_averaging(config), "global.csv")


def _cmd_periodicity(manifest, config, out_dir):
    report = run_periodicity_check(config)
    rows = [{k: r[k] for k in ("t", "w2", "ci_low", "ci_high")}
            for r in report["rows"]]
    extra = {
        "experiment": "periodicity",
        "probe_period": _fmt(report["probe_period"]),
        "bias_floor": _fmt(report["bias_floor"]),
        "verdict": "PASS" if report["passed"] else "FAIL",
    }
    _write_csv(out_dir / "periodicity.csv",
               _meta_lines(manifest, config, extra),
               ["t", "w2", "ci_low", "ci_high"], rows)
    for r in report["rows"]:
        print(f"t {r['t']:<8g} W2 {r['w2']:.6g} "
              f"ci [{r['ci_low']:.6g}, {r['ci_high']:.6g}]")
    print(f"bias floor {report['bias_floor']:.6g}; "
          f"verdict: {'PASS' if report['passed'] else 'FAIL'}")
    return 0 if report["passed"] else 3


def _cmd_wasserstein(manifest, config, out_dir, files):
    mu = read_field_samples(files[0])
    nu = read_field_samples(files[1])
    dist = wasserstein2(mu, nu)
    print(_fmt(float(dist)))
    return 0


_COMMANDS = {
    "check": _cmd_check,
    "simulate": _cmd_simulate,
    "bogolyubov1": _cmd_bogolyubov1,
    "bogolyubov2": _cmd_bogolyubov2,
    "periodicity": _cmd_periodicity,
    "global": _cmd_global,
}


# -- entry point -------------------------------------------------------------

def _apply_thread_cap():
    cap = os.environ.get("CGL_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cglsim",
        description="Averaging experiments for stochastic Ginzburg-Landau "
                    "dynamics with oscillating coefficients")
    parser.add_argument("subcommand",
                        choices=sorted(_COMMANDS) + ["wasserstein"])
    parser.add_argument("files", nargs="*",
                        help="two sample files (wasserstein only)")
    parser.add_argument("--config", type=Path, default=None)
    parser.add_argument("--out", type=Path, default=Path("."))
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config base seed")
    parser.add_argument("--paths", type=int, default=None)
    parser.add_argument("--quick", action="store_true",
                        help="quarter-size smoke run")
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config) if args.config \
            else ExperimentConfig()
        if args.seed is not None:
            config = dataclasses.replace(config, base_seed=args.seed)
        if args.paths is not None:
            config = dataclasses.replace(config, n_paths=args.paths)
        if args.quick:
            config = _quarter(config)

        out_dir = args.out
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(
            config_path=str(args.config or "<defaults>"),
            config_hash=config_hash(config),
            out_dir=str(out_dir),
            subcommand=args.subcommand,
            timestamp=datetime.now(timezone.utc).isoformat(),
            version=__version__,
        )
        if args.subcommand == "wasserstein":
            if len(args.files) != 2:
                raise ValueError(
                    "wasserstein needs exactly two sample files")
            return _cmd_wasserstein(manifest, config, out_dir, args.files)
        if args.files:
            raise ValueError(
                f"{args.subcommand} takes no positional file arguments")
        return _COMMANDS[args.subcommand](manifest, config, out_dir)
    except ConditionError as exc:
        print(f"condition error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
