"""Command-line front end.

Subcommands: ``lift`` (full pipeline to a differentiable lift), ``analyze``
(flatness reports at detected zeros), ``synth`` (scrambled ground-truth
fixtures), ``verify`` (residual check of an existing lift).  Exit codes are a
stable contract: 0 success, 1 verification failure, 2 parse/config errors,
3 non-real or inconsistent invariant data, 4 orbit mismatch of one-sided
derivatives, 5 residual contract violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flatness, group, invariants, lifter, verify
from .errors import (
    Inconsistent,
    NonHyperbolic,
    OrbitLiftError,
    OrbitMismatch,
    ResidualExceeded,
)

log = logging.getLogger("orbitlift")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARSE = 2
EXIT_NONREAL = 3
EXIT_ORBIT = 4
EXIT_RESIDUAL = 5

_TOLERANCE_KEYS = {"tol_zero", "tol_deriv", "tol_im", "residual_tol", "tol_cluster"}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    """Validated run configuration; unknown keys are rejected."""

    group: dict
    map_spec: str = "symmetric"
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    io: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(data: dict) -> "Config":
        allowed = {"group", "map", "tolerances", "seed", "io"}
        extra = set(data) - allowed
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "group" not in data:
            raise ConfigError("config needs a 'group' entry")
        tolerances = dict(data.get("tolerances", {}))
        bad = set(tolerances) - _TOLERANCE_KEYS
        if bad:
            raise ConfigError(f"unknown tolerance keys: {sorted(bad)}")
        for key, val in tolerances.items():
            if not (isinstance(val, (int, float)) and val > 0):
                raise ConfigError(f"tolerance {key} must be a positive number")
        io = dict(data.get("io", {}))
        if set(io) - {"csv_precision"}:
            raise ConfigError(f"unknown io keys: {sorted(set(io) - {'csv_precision'})}")
        return Config(
            group=data["group"],
            map_spec=data.get("map", "symmetric"),
            tolerances=tolerances,
            seed=int(data.get("seed", 0)),
            io=io,
        )

    @staticmethod
    def from_file(path: str) -> "Config":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        cfg = Config.from_dict(data)
        cfg.io["_base_dir"] = str(Path(path).resolve().parent)
        return cfg

    def tol(self, key: str, default: float) -> float:
        return float(self.tolerances.get(key, default))


def _fmt(x: float) -> str:
    return repr(float(x))


def read_csv(path: str, prefix: str) -> tuple[np.ndarray, np.ndarray]:
    """Read a `t,<prefix>1..<prefix>k` CSV; returns (grid, values)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ConfigError(f"{path}: empty CSV")
    header = [c.strip() for c in lines[0].split(",")]
    if header[0] != "t" or len(header) < 2:
        raise ConfigError(f"{path}: header must start with 't' followed by value columns")
    expected = [f"{prefix}{i}" for i in range(1, len(header))]
    if header[1:] != expected:
        raise ConfigError(f"{path}: expected columns {['t'] + expected}, got {header}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ConfigError(f"{path}: row with {len(parts)} fields, expected {len(header)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    data = np.asarray(rows)
    if len(data) < 3:
        raise ConfigError(f"{path}: need at least 3 samples")
    return data[:, 0], data[:, 1:]


def write_csv(path: str, grid: np.ndarray, values: np.ndarray, prefix: str):
    cols = ["t"] + [f"{prefix}{i}" for i in range(1, values.shape[1] + 1)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for t, row in zip(grid, values):
            fh.write(",".join([_fmt(t)] + [_fmt(v) for v in row]) + "\n")


def write_report(path: str, payload: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2))
        fh.write("\n")


def _build_context(cfg: Config, n_value_columns: int):
    rep = group.load_group_spec(cfg.group)
    if cfg.map_spec == "symmetric":
        omap = invariants.symmetric_orbit_map(rep.dim)
    else:
        base = Path(cfg.io.get("_base_dir", "."))
        with open(base / cfg.map_spec, encoding="utf-8") as fh:
            omap = invariants.from_generator_spec(json.load(fh))
    if omap.dim != rep.dim:
        raise ConfigError(f"map dimension {omap.dim} does not match group dimension {rep.dim}")
    if n_value_columns != omap.n_invariants:
        raise ConfigError(
            f"curve has {n_value_columns} value columns but the map produces {omap.n_invariants}"
        )
    return rep, omap


def cmd_lift(args) -> int:
    cfg = Config.from_file(args.config)
    _apply_overrides(cfg, args)
    grid, values = read_csv(args.curve, "y")
    rep, omap = _build_context(cfg, values.shape[1])
    curve = flatness.SampledCurve(grid, values, omap.degrees)

    fiber = None
    if args.fiber:
        fgrid, fiber = read_csv(args.fiber, "v")
        if len(fgrid) != len(grid) or np.abs(fgrid - grid).max() > 0:
            raise ConfigError("fiber CSV grid does not match the curve grid")

    tol_zero = cfg.tol("tol_zero", flatness.DEFAULT_TOL_ZERO)
    tol_deriv = cfg.tol("tol_deriv", lifter.DEFAULT_TOL_DERIV)
    residual_tol = cfg.tolerances.get("residual_tol")
    lift = lifter.lift_continuous(
        rep, omap, curve, fiber_oracle=fiber, tol_zero=tol_zero,
        residual_tol=residual_tol, jobs=args.jobs,
    )
    lift = lifter.repair_differentiable(rep, omap, curve, lift, tol_zero=tol_zero, tol_deriv=tol_deriv)
    report = verify.verification_report(
        rep, omap, curve, lift,
        tol_deriv=tol_deriv,
        tol_cluster=cfg.tol("tol_cluster", verify.DEFAULT_TOL_CLUSTER),
        tol_zero=tol_zero,
        seed=cfg.seed,
    )

    out_lift = args.out_lift or _default_out(args.curve, ".lift.csv")
    out_report = args.out_report or _default_out(args.curve, ".report.json")
    write_csv(out_lift, lift.grid, lift.points, "v")
    payload = report.to_dict()
    payload["command"] = "lift"
    write_report(out_report, payload)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_analyze(args) -> int:
    cfg = Config.from_file(args.config)
    _apply_overrides(cfg, args)
    grid, values = read_csv(args.curve, "y")
    rep, omap = _build_context(cfg, values.shape[1])
    curve = flatness.SampledCurve(grid, values, omap.degrees)
    tol_zero = cfg.tol("tol_zero", flatness.DEFAULT_TOL_ZERO)
    zero_set = lifter.detect_zero_set(curve, tol_zero)
    zeros = []
    runs = []
    for (s, e), accum in zip(zero_set.intervals, zero_set.accumulation_flags):
        if accum:
            runs.append({"start": float(grid[s]), "end": float(grid[e]), "accumulation_like": True})
            continue
        for k in range(s, e + 1):
            rep_fl = flatness.check_multiplicity_lemma(curve, k, tol_zero=tol_zero)
            entry = rep_fl.to_dict()
            entry["instant"] = float(grid[k])
            zeros.append(entry)
    payload = {
        "schema_version": verify.SCHEMA_VERSION,
        "command": "analyze",
        "zeros": zeros,
        "accumulation_runs": runs,
        "tolerances": {"tol_zero": tol_zero},
        "seed": cfg.seed,
        "rng": verify.RNG_NAME,
    }
    out_report = args.out_report or _default_out(args.curve, ".analysis.json")
    write_report(out_report, payload)
    return EXIT_OK


def cmd_synth(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        data = json.load(fh)
    spec = verify.SynthSpec.from_dict(data)
    if args.seed is not None:
        spec = verify.SynthSpec(spec.group, spec.poly_coeffs, spec.trig_terms, spec.grid, args.seed, spec.map_spec)
    curve, scrambled, truth = verify.synthesize(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "curve.csv", curve.grid, curve.values, "y")
    write_csv(out_dir / "scrambled.csv", curve.grid, scrambled, "v")
    write_csv(out_dir / "truth.csv", truth.grid, truth.points, "v")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = Config.from_file(args.config)
    _apply_overrides(cfg, args)
    grid, values = read_csv(args.curve, "y")
    lgrid, points = read_csv(args.lift, "v")
    if len(lgrid) != len(grid) or np.abs(lgrid - grid).max() > 0:
        raise ConfigError("lift grid does not match curve grid")
    rep, omap = _build_context(cfg, values.shape[1])
    if points.shape[1] != rep.dim:
        raise ConfigError(f"lift has {points.shape[1]} coordinates, expected {rep.dim}")
    curve = flatness.SampledCurve(grid, values, omap.degrees)
    residual_tol = cfg.tol("residual_tol", lifter.DEFAULT_RESIDUAL_FACTOR * (1.0 + float(np.abs(values).max())))
    lift = lifter.SampledLift(grid, points, (), residual_tol)
    report = verify.verification_report(
        rep, omap, curve, lift,
        tol_deriv=cfg.tol("tol_deriv", lifter.DEFAULT_TOL_DERIV),
        tol_cluster=cfg.tol("tol_cluster", verify.DEFAULT_TOL_CLUSTER),
        tol_zero=cfg.tol("tol_zero", flatness.DEFAULT_TOL_ZERO),
        seed=cfg.seed,
    )
    payload = report.to_dict()
    payload["command"] = "verify"
    out_report = args.out_report or _default_out(args.curve, ".verify.json")
    write_report(out_report, payload)
    return EXIT_OK if report.passed else EXIT_FAIL


def _default_out(curve_path: str, suffix: str) -> str:
    p = Path(curve_path)
    return str(p.with_name(p.stem + suffix))


def _apply_overrides(cfg: Config, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "tol_zero", None) is not None:
        cfg.tolerances["tol_zero"] = args.tol_zero
    if getattr(args, "tol_deriv", None) is not None:
        cfg.tolerances["tol_deriv"] = args.tol_deriv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orbitlift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="path to the JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for per-interval lifting")
        p.add_argument("--tol-zero", dest="tol_zero", type=float, default=None)
        p.add_argument("--tol-deriv", dest="tol_deriv", type=float, default=None)
        p.add_argument("--out-report", default=None)

    p_lift = sub.add_parser("lift", help="lift a curve CSV to a differentiable lift CSV plus report")
    p_lift.add_argument("curve")
    p_lift.add_argument("--fiber", default=None, help="optional per-sample fiber representatives CSV")
    p_lift.add_argument("--out-lift", default=None)
    common(p_lift)
    p_lift.set_defaults(func=cmd_lift)

    p_an = sub.add_parser("analyze", help="flatness reports at every detected zero of a curve CSV")
    p_an.add_argument("curve")
    common(p_an)
    p_an.set_defaults(func=cmd_analyze)

    p_sy = sub.add_parser("synth", help="generate curve/scrambled/truth CSV fixtures from a synth spec")
    p_sy.add_argument("spec")
    p_sy.add_argument("--out-dir", default=".")
    p_sy.add_argument("--seed", type=int, default=None)
    p_sy.set_defaults(func=cmd_synth)

    p_ve = sub.add_parser("verify", help="check an existing lift CSV against its curve CSV")
    p_ve.add_argument("curve")
    p_ve.add_argument("lift")
    common(p_ve)
    p_ve.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("ORBITLIFT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (NonHyperbolic, Inconsistent) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONREAL
    except OrbitMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ORBIT
    except ResidualExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESIDUAL
    except (ConfigError, OSError, json.JSONDecodeError, ValueError, OrbitLiftError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
