"""Command-line front end.

Subcommands dispatch to the library modules; every run writes its data files
plus a manifest with content digests.  Identical config and seed reproduce
byte-identical data payloads (the manifest carries the only timestamp).

Exit codes: 0 success, 1 numerical-tolerance failure (the failing invariant is
named on stderr), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .polytope import (
    box_polytope,
    gc_polytope,
    gc_variable_names,
    gc_weight,
    lattice_points,
    polytope_to_json,
    weyl_dim,
)
from .toric import ConvexDeformation, QuadraticNu, SectionDensity, SymplecticPotential, polytope_grid
from .flag import gc_map, random_flags
from .flow import DegenerationFamily, FlowSingularityError
from .lab import (
    AdaptiveSchedule,
    ConvergenceError,
    ExperimentConfig,
    ExpSchedule,
    QuadratureError,
    combined_experiment,
    concentration_sup,
    decay_slope,
    delta_pairing,
    gc_vs_torus_moment_check,
    outside_mass,
)

__all__ = ["main"]


class UsageError(Exception):
    pass


class ToleranceFailure(Exception):
    def __init__(self, invariant: str, detail: str):
        super().__init__(f"{invariant}: {detail}")
        self.invariant = invariant


# -- formatting and artifact plumbing -------------------------------------------


def fmt(v) -> str:
    """17-significant-digit rendering so that hashes are meaningful."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path: Path, header: list, rows: list):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_gnuplot(path: Path, comment: str, columns: list[str], table: np.ndarray):
    lines = [f"# {comment}", "# " + " ".join(columns)]
    for row in np.atleast_2d(table):
        lines.append(" ".join(fmt(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def finish_run(out_dir: Path, command: str, config: dict, artifacts: list[Path]):
    manifest = {
        "tool": "gcq",
        "version": __version__,
        "command": command,
        "config": config,
        "created": datetime.now(timezone.utc).isoformat(),
        "artifacts": [
            {"path": p.name, "sha256": _sha256(p)} for p in sorted(artifacts)
        ],
    }
    write_json(out_dir / "manifest.json", manifest)


# -- configuration merging -------------------------------------------------------


def merge_config(defaults: dict, config_path: str | None, overrides: dict) -> dict:
    """defaults < file < flags; unknown file keys are a usage error."""
    cfg = dict(defaults)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {config_path}")
        except json.JSONDecodeError as e:
            raise UsageError(f"malformed config JSON: {e}")
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    if "seed" in cfg and os.environ.get("GCQ_SEED"):
        try:
            cfg["seed"] = int(os.environ["GCQ_SEED"])
        except ValueError:
            raise UsageError("GCQ_SEED must be an integer")
    return cfg


def parse_floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}")


def parse_ranges(text: str) -> list[tuple[int, int]]:
    """'0..3' or '0..3,0..2' -> [(0, 3), (0, 2)]."""
    out = []
    for part in str(text).split(","):
        lo, sep, hi = part.partition("..")
        if sep != ".." or not lo or not hi:
            raise UsageError(f"expected lo..hi range, got {part!r}")
        try:
            out.append((int(lo), int(hi)))
        except ValueError:
            raise UsageError(f"range bounds must be integers: {part!r}")
    return out


def positive_weights(a: tuple) -> tuple:
    if len(a) == 0 or any(v <= 0 for v in a):
        raise UsageError("weights a must be positive")
    return a


def out_dir_for(args, default: str) -> Path:
    d = Path(args.out if args.out else default)
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- polytope --------------------------------------------------------------------


def cmd_polytope(args) -> int:
    a = tuple(int(v) for v in parse_floats(args.a))
    positive_weights(a)
    n = args.n
    if len(a) != n - 1:
        raise UsageError(f"need n-1 = {n - 1} weights, got {len(a)}")
    P = gc_polytope(n, a)
    pts = lattice_points(P)
    dim = weyl_dim(gc_weight(a))
    out = out_dir_for(args, "gcq-polytope")
    artifacts = []
    if args.action in ("gen", "lattice"):
        rows = [list(p) for p in pts]
        csv = out / "lattice.csv"
        write_csv(csv, list(gc_variable_names(n)), rows)
        artifacts.append(csv)
    if args.action == "gen":
        pj = out / "polytope.json"
        pj.write_text(polytope_to_json(P) + "\n")
        artifacts.append(pj)
    summary = out / "summary.json"
    write_json(summary, {"n": n, "a": list(a), "lattice": len(pts), "weyl": dim,
                         "match": len(pts) == dim})
    artifacts.append(summary)
    finish_run(out, f"polytope {args.action}", {"n": n, "a": list(a)}, artifacts)
    print(f"lattice={len(pts)} weyl={dim} match={'true' if len(pts) == dim else 'false'}")
    if len(pts) != dim:
        raise ToleranceFailure("lattice-weyl-match", f"{len(pts)} != {dim}")
    return 0


# -- toric -----------------------------------------------------------------------

TORIC_DEFAULTS = {
    "delta": "0..3",
    "m": "1",
    "s": "10,20,40",
    "eps": 0.3,
    "nu_scale": 1.0,
    "per_axis": 256,
}


def cmd_toric(args) -> int:
    cfg = merge_config(TORIC_DEFAULTS, args.config, {
        "delta": args.delta, "m": args.m, "s": args.s, "eps": args.eps,
        "nu_scale": args.nu_scale, "per_axis": args.per_axis,
    })
    ranges = parse_ranges(cfg["delta"])
    P = box_polytope(ranges)
    m = tuple(float(v) for v in parse_floats(cfg["m"]))
    if len(m) != P.dim:
        raise UsageError(f"m must have dimension {P.dim}")
    if not P.contains(np.array(m), strict=True):
        raise UsageError("m must be an interior point")
    svals = parse_floats(cfg["s"])
    eps = float(cfg["eps"])
    per_axis = int(cfg["per_axis"])
    nu = QuadraticNu(float(cfg["nu_scale"]) * np.eye(P.dim))
    pot = SymplecticPotential(P, 0.0, ConvexDeformation(nu))

    rows = []
    profiles = []
    for s in svals:
        dens = SectionDensity(pot.at_s(float(s)), m)
        mass = outside_mass(P, dens, m, eps, per_axis=per_axis)
        sup = concentration_sup(P, dens, m, eps, per_axis=per_axis)
        pair_one = delta_pairing(P, dens, lambda x: np.ones(x.shape[:-1]), per_axis=per_axis)
        pair_x1 = delta_pairing(P, dens, lambda x: x[..., 0], per_axis=per_axis)
        if not (0.0 <= mass <= 1.0):
            raise ToleranceFailure("mass-range", f"outside mass {mass} at s={s}")
        if abs(pair_one - 1.0) > 1e-9:
            raise ToleranceFailure("normalization", f"<1, tau> = {pair_one} at s={s}")
        rows.append([s, mass, sup, pair_one, pair_x1])
        if P.dim == 1:
            pts, logvol = polytope_grid(P, per_axis)
            ld = dens.log_magnitude(pts)
            from scipy.special import logsumexp
            prof = np.exp(ld - logsumexp(ld + logvol))
            profiles.append((s, pts[:, 0], prof))

    out = out_dir_for(args, "gcq-toric")
    artifacts = []
    csv = out / "cells.csv"
    write_csv(csv, ["s", "outside_mass", "sup_outside", "pairing_one", "pairing_x1"], rows)
    artifacts.append(csv)
    pos = [(r[0], r[1]) for r in rows if r[0] > 0 and r[1] > 0]
    slope = decay_slope(*zip(*pos)) if len(pos) >= 2 else None
    summary = out / "summary.json"
    write_json(summary, {"config": cfg, "slope": slope})
    artifacts.append(summary)
    if profiles:
        table = np.column_stack([profiles[0][1]] + [p[2] for p in profiles])
        dat = out / "profile.dat"
        write_gnuplot(dat, "normalized density profiles",
                      ["x"] + [f"s={fmt(p[0])}" for p in profiles], table)
        artifacts.append(dat)
    finish_run(out, "toric concentrate", cfg, artifacts)
    print(f"cells={len(rows)} slope={fmt(slope)}")
    return 0


# -- flag ------------------------------------------------------------------------

FLAG_DEFAULTS = {"n": 3, "a": "1,1", "count": 100, "seed": 0}


def cmd_flag(args) -> int:
    cfg = merge_config(FLAG_DEFAULTS, args.config, {
        "n": args.n, "a": args.a, "count": args.count, "seed": args.seed,
    })
    n = int(cfg["n"])
    a = positive_weights(parse_floats(cfg["a"]))
    if len(a) != n - 1:
        raise UsageError(f"need n-1 = {n - 1} weights, got {len(a)}")
    count = int(cfg["count"])
    flags = random_flags(n, count, seed=int(cfg["seed"]))
    P = gc_polytope(n, a)
    names = gc_variable_names(n)
    rows = []
    worst = 0.0
    for i, V in enumerate(flags):
        pat = gc_map(V, a)
        flat = pat.flatten(drop_top=True)
        rows.append([i] + list(flat))
        if not pat.interlacing_ok(tol=1e-10):
            raise ToleranceFailure("interlacing", f"flag {i} violates interlacing")
        support = float(P.support_values(np.array(flat)).min())
        worst = min(worst, support)
    if worst < -1e-10:
        raise ToleranceFailure("polytope-containment", f"min support {worst}")
    out = out_dir_for(args, "gcq-flag")
    csv = out / "patterns.csv"
    write_csv(csv, ["flag"] + list(names), rows)
    summary = out / "summary.json"
    write_json(summary, {"config": cfg, "count": count, "min_support": worst})
    finish_run(out, "flag dump", cfg, [csv, summary])
    print(f"flags={count} min_support={fmt(worst)}")
    return 0


# -- flow ------------------------------------------------------------------------

FLOW_DEFAULTS = {"a": "1,1", "t1": 1.0, "t0": 0.5, "h": 1e-3, "seed": 0}


def cmd_flow(args) -> int:
    cfg = merge_config(FLOW_DEFAULTS, args.config, {
        "a": args.a, "t1": args.t1, "t0": args.t0, "h": args.h, "seed": args.seed,
    })
    a = positive_weights(parse_floats(cfg["a"]))
    t1, t0, h = float(cfg["t1"]), float(cfg["t0"]), float(cfg["h"])
    if h <= 0:
        raise UsageError("h must be positive")
    fam = DegenerationFamily(a)
    V = random_flags(3, 1, seed=int(cfg["seed"]))[0]
    state = fam.embed_flag(V, t1)
    res = fam.flow(state, t1 - t0, h=h, record=True)
    out = out_dir_for(args, "gcq-flow")
    csv = out / "trajectory.csv"
    write_csv(csv, ["step", "re_t", "im_t"],
              [[i, float(np.real(t)), float(np.imag(t))] for i, t in enumerate(res.t_path)])
    summary = out / "summary.json"
    write_json(summary, {
        "config": cfg, "steps": res.steps, "h_effective": res.h,
        "t_deviation": res.t_deviation, "max_residual": res.max_residual,
        "min_grad_norm": res.min_grad_norm, "direction_err": res.direction_err,
    })
    finish_run(out, "flow run", cfg, [csv, summary])
    print(f"steps={res.steps} t_deviation={fmt(res.t_deviation)} "
          f"max_residual={fmt(res.max_residual)}")
    if res.t_deviation > 1e-6:
        raise ToleranceFailure("t-deviation", f"{res.t_deviation} > 1e-6")
    if res.max_residual > 1e-8:
        raise ToleranceFailure("fiber-residual", f"{res.max_residual} > 1e-8")
    return 0


# -- lab -------------------------------------------------------------------------

LAB_DEFAULTS = {
    "a": "2,2",
    "pattern": "2;3,1",
    "s_grid": "0,5,10,20,40",
    "eps": 0.3,
    "nu_scale": 1.0,
    "schedule": "exp",
    "schedule_rate": 5.0,
    "per_axis": 32,
    "flow_per_axis": 10,
    "h": 1e-3,
    "spot_points": 6,
    "seed": 0,
    "jobs": 1,
}


def _parse_pattern(text: str) -> tuple:
    rows = []
    for part in str(text).split(";"):
        rows.append(tuple(float(v) for v in part.split(",")))
    return tuple(rows)


def cmd_lab_combined(args) -> int:
    cfg = merge_config(LAB_DEFAULTS, args.config, {
        "a": args.a, "pattern": args.pattern, "s_grid": args.s_grid,
        "eps": args.eps, "per_axis": args.per_axis,
        "flow_per_axis": args.flow_per_axis, "h": args.h, "jobs": args.jobs,
    })
    if cfg["schedule"] == "exp":
        schedule = ExpSchedule(float(cfg["schedule_rate"]))
    elif cfg["schedule"] == "adaptive":
        schedule = AdaptiveSchedule()
    else:
        raise UsageError(f"unknown schedule policy {cfg['schedule']!r}")
    try:
        ecfg = ExperimentConfig(
            a=positive_weights(parse_floats(cfg["a"])),
            pattern=_parse_pattern(cfg["pattern"]),
            nu=QuadraticNu(float(cfg["nu_scale"]) * np.eye(3)),
            s_grid=parse_floats(cfg["s_grid"]),
            eps=float(cfg["eps"]),
            schedule=schedule,
            per_axis=int(cfg["per_axis"]),
            flow_per_axis=int(cfg["flow_per_axis"]),
            h=float(cfg["h"]),
            spot_points=int(cfg["spot_points"]),
            seed=int(cfg["seed"]),
            jobs=int(cfg["jobs"]),
        )
    except ValueError as e:
        raise UsageError(str(e))
    rep = combined_experiment(ecfg)

    out = out_dir_for(args, "gcq-lab")
    rows = [c.as_row() for c in rep.cells]
    header = list(rows[0].keys())
    csv = out / "cells.csv"
    write_csv(csv, header, [[r[k] for k in header] for r in rows])
    summary = out / "summary.json"
    write_json(summary, {
        "config": cfg, "xi_star": list(rep.xi_star), "lift": list(rep.lift),
        "slope": rep.slope, "monotone": rep.monotone, "incomplete": rep.incomplete,
    })
    finish_run(out, "lab combined", cfg, [csv, summary])
    print(f"cells={len(rows)} slope={fmt(rep.slope)} monotone={fmt(rep.monotone)}")
    for c in rep.cells:
        if not (0.0 <= c.outside_mass <= 1.0):
            raise ToleranceFailure("mass-range", f"outside mass {c.outside_mass} at s={c.s}")
        if abs(c.pairings["one"] - 1.0) > 1e-6:
            raise ToleranceFailure("pairing-normalization",
                                   f"<1,tau> = {c.pairings['one']} at s={c.s}")
    if not rep.monotone:
        raise ToleranceFailure("outside-mass-monotone", "mass not strictly decreasing in s")
    return 0


GCCHECK_DEFAULTS = {"t": "0.1,0.02", "samples": 20, "seed": 0, "h": 1e-3, "a": "1,1"}


def cmd_lab_gc_check(args) -> int:
    cfg = merge_config(GCCHECK_DEFAULTS, args.config, {
        "t": args.t, "samples": args.samples, "seed": args.seed, "h": args.h,
    })
    tvals = parse_floats(cfg["t"])
    a = positive_weights(parse_floats(cfg["a"]))
    rows = []
    for t in tvals:
        d = gc_vs_torus_moment_check(float(t), samples=int(cfg["samples"]),
                                     a=a, seed=int(cfg["seed"]), h=float(cfg["h"]))
        rows.append([t, d])
    out = out_dir_for(args, "gcq-lab")
    csv = out / "gc_check.csv"
    write_csv(csv, ["t", "discrepancy"], rows)
    summary = out / "summary.json"
    write_json(summary, {"config": cfg, "rows": [[float(r[0]), float(r[1])] for r in rows]})
    finish_run(out, "lab gc-check", cfg, [csv, summary])
    print(" ".join(f"d({fmt(r[0])})={fmt(r[1])}" for r in rows))
    for (ta, da), (tb, db) in zip(rows, rows[1:]):
        if ta > tb and not db < da:
            raise ToleranceFailure("moment-trend",
                                   f"discrepancy({tb}) = {db} not below discrepancy({ta}) = {da}")
    return 0


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gcq", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"gcq {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("polytope", help="polytope generation and lattice counts")
    p.add_argument("action", choices=["gen", "count", "lattice"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--a", required=True, help="comma-separated positive integers")
    p.add_argument("--out")
    p.set_defaults(func=cmd_polytope)

    t = sub.add_parser("toric", help="toric concentration experiments")
    t.add_argument("action", choices=["concentrate"])
    t.add_argument("--config")
    t.add_argument("--delta", help="box as lo..hi[,lo..hi...]")
    t.add_argument("--m", help="lattice point, comma-separated")
    t.add_argument("--s", help="deformation strengths, comma-separated")
    t.add_argument("--eps", type=float)
    t.add_argument("--nu-scale", dest="nu_scale", type=float)
    t.add_argument("--per-axis", dest="per_axis", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_toric)

    f = sub.add_parser("flag", help="random flag ensembles and their patterns")
    f.add_argument("action", choices=["dump"])
    f.add_argument("--config")
    f.add_argument("--n", type=int)
    f.add_argument("--a")
    f.add_argument("--count", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--out")
    f.set_defaults(func=cmd_flag)

    w = sub.add_parser("flow", help="family flow integration")
    w.add_argument("action", choices=["run"])
    w.add_argument("--config")
    w.add_argument("--a")
    w.add_argument("--t1", type=float)
    w.add_argument("--t0", type=float)
    w.add_argument("--h", type=float)
    w.add_argument("--seed", type=int)
    w.add_argument("--out")
    w.set_defaults(func=cmd_flow)

    l = sub.add_parser("lab", help="combined concentration experiments")
    lsub = l.add_subparsers(dest="action", required=True)
    lc = lsub.add_parser("combined")
    lc.add_argument("--config")
    lc.add_argument("--a")
    lc.add_argument("--pattern", help="rows below the top, e.g. '2;3,1'")
    lc.add_argument("--s-grid", dest="s_grid")
    lc.add_argument("--eps", type=float)
    lc.add_argument("--per-axis", dest="per_axis", type=int)
    lc.add_argument("--flow-per-axis", dest="flow_per_axis", type=int)
    lc.add_argument("--h", type=float)
    lc.add_argument("--jobs", type=int)
    lc.add_argument("--out")
    lc.set_defaults(func=cmd_lab_combined)
    lg = lsub.add_parser("gc-check")
    lg.add_argument("--config")
    lg.add_argument("--t", help="comma-separated t values, decreasing")
    lg.add_argument("--samples", type=int)
    lg.add_argument("--seed", type=int)
    lg.add_argument("--h", type=float)
    lg.add_argument("--out")
    lg.set_defaults(func=cmd_lab_gc_check)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except ToleranceFailure as e:
        print(f"tolerance failure: {e}", file=sys.stderr)
        return 1
    except QuadratureError as e:
        print(f"tolerance failure: quadrature: {e}", file=sys.stderr)
        return 1
    except ConvergenceError as e:
        print(f"tolerance failure: convergence: {e}", file=sys.stderr)
        return 1
    except FlowSingularityError as e:
        print(f"tolerance failure: flow-singularity: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
