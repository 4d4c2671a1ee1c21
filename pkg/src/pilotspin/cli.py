"""Command-line entry point: ``pilotspin <subcommand> ...``.

Exit codes: 0 success, 1 validation or solver failure, 2 bad arguments or config.
"""
from __future__ import annotations

import argparse
import importlib.resources
import json
import math
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analytic, eprb, guidance, pauli_oracle, sterngerlach, streams
from .core import ConfigError, PhysicalConfig, PilotSpinError, SpinOrientation, derive, load_config

_PI_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)?)\*?pi(?:/(\d+\.?\d*))?$")


def parse_angle(text: str) -> float:
    """Radians by default; '45deg' is degrees; '2pi/3' and 'pi' are accepted."""
    s = text.strip().lower().replace(" ", "")
    try:
        if s.endswith("deg"):
            return math.radians(float(s[:-3]))
        m = _PI_RE.match(s)
        if m:
            coef = m.group(1)
            k = 1.0 if coef in ("", "+") else (-1.0 if coef == "-" else float(coef))
            den = float(m.group(2)) if m.group(2) else 1.0
            return k * math.pi / den
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an angle: {text!r}") from None


def parse_angle_list(text: str) -> list[float]:
    return [parse_angle(t) for t in text.split(",") if t.strip()]


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer seed: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


# ---------------------------------------------------------------------------
# output helpers


SCHEMAS = ("config", "manifest", "sg_summary", "epr_report", "validation_report")


def load_schema(name: str) -> dict:
    """JSON schema shipped with the package for one of the CLI documents."""
    if name not in SCHEMAS:
        raise KeyError(f"no schema named {name!r}")
    text = importlib.resources.files("pilotspin").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def write_json(path: Path, obj) -> None:
    # json uses repr for floats: the shortest string that round-trips exactly
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _resolved(cfg: PhysicalConfig) -> dict:
    d = derive(cfg)
    return {"config": cfg.to_dict(), "derived": {"dt_transit": d.dt_transit, "z_delta": d.z_delta, "u": d.u, "t_decoherence": d.t_decoherence}}


def _manifest(args, cfg: PhysicalConfig, outputs: list[Path], wall: float, extra: dict | None = None) -> dict:
    inputs = {k: v for k, v in vars(args).items() if k not in ("func", "jobs", "manifest", "config")}
    m = {
        "subcommand": args.command,
        **_resolved(cfg),
        "seed": getattr(args, "seed", None),
        "arguments": inputs,
        "version": __version__,
        "wall_time": wall,
        "jobs": getattr(args, "jobs", 1),
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        m.update(extra)
    return m


def _emit_manifest(args, cfg, outputs, t0, extra=None):
    man = _manifest(args, cfg, outputs, time.perf_counter() - t0, extra)
    if args.manifest:
        target = Path(args.manifest)
    elif outputs:
        target = outputs[0].with_name(outputs[0].name + ".manifest.json")
    else:
        print(json.dumps(man), file=sys.stderr)
        return
    write_json(target, man)


# ---------------------------------------------------------------------------
# subcommands


def cmd_config(args, cfg) -> int:
    t0 = time.perf_counter()
    print(json.dumps(_resolved(cfg)["config"] | {"derived": _resolved(cfg)["derived"]}, indent=2))
    _emit_manifest(args, cfg, [], t0)
    return 0


def cmd_sg_run(args, cfg) -> int:
    t0 = time.perf_counter()
    if args.mixture:
        source = sterngerlach.IsotropicMixture(args.measure)
    else:
        source = sterngerlach.PureState(args.theta0, args.phi0)
    record = args.record_every if args.out else 0
    spec = sterngerlach.SGRunSpec(args.n, source, args.seed, args.t_final, record_every=record)
    stats_ = sterngerlach.run_ensemble(spec, cfg, jobs=args.jobs)
    summary = stats_.summary()
    summary["source"] = {"kind": "mixture", "measure": args.measure} if args.mixture else {"kind": "pure", "theta0": args.theta0, "phi0": args.phi0}
    summary["seed"] = args.seed
    chi = sterngerlach.chi_square_impacts(stats_.impacts, stats_.t_final, cfg, math.pi / 2 if args.mixture else args.theta0)
    summary["chi_square"] = {"statistic": chi.statistic, "dof": chi.dof, "p_value": chi.p_value}
    outputs = []
    if args.out:
        p = Path(args.out)
        analytic.write_rows_csv(p, guidance.TRAJECTORY_COLUMNS, sterngerlach.trajectory_rows(stats_.trajectories, cfg))
        outputs.append(p)
    if args.summary:
        p = Path(args.summary)
        write_json(p, summary)
        outputs.append(p)
    else:
        print(json.dumps(summary, indent=2))
    _emit_manifest(args, cfg, outputs, t0)
    return 0


def cmd_epr_run(args, cfg) -> int:
    t0 = time.perf_counter()
    deltas = args.sweep if args.sweep else [args.delta]
    batches: list = []
    reports = eprb.correlation_sweep(deltas, args.n_pairs, args.seed, cfg, jobs=args.jobs, batches=batches)
    out = [r.to_dict() for r in reports]
    extra = {}
    if args.chsh:
        res = eprb.chsh(args.n_pairs, args.seed, cfg, jobs=args.jobs)
        extra = {"chsh": {"S": res.s, "sigma": res.sigma, "reports": [r.to_dict() for r in res.reports]}}
    outputs = []
    if args.out_pairs:
        p = Path(args.out_pairs)
        rows = (row for b in batches for row in eprb.pair_rows(b))
        analytic.write_rows_csv(p, eprb.PAIR_COLUMNS, rows)
        outputs.append(p)
    doc = {"seed": args.seed, "reports": out, **extra}
    if args.report:
        p = Path(args.report)
        write_json(p, doc)
        outputs.append(p)
    else:
        print(json.dumps(doc, indent=2))
    _emit_manifest(args, cfg, outputs, t0)
    return 0


def cmd_validate(args, cfg) -> int:
    t0 = time.perf_counter()
    thetas = args.thetas if args.thetas else list(pauli_oracle.VALIDATION_THETAS)
    results = pauli_oracle.run_validation(cfg, thetas, n_z=args.n_z, field_steps=args.field_steps, free_steps=args.free_steps)
    width = max(len(r.case) for r in results)
    print(f"{'case':<{width}}  {'L2':>10}  {'Linf':>10}  {'drift':>10}  result")
    for r in results:
        print(f"{r.case:<{width}}  {r.l2:10.3e}  {r.linf:10.3e}  {r.norm_drift:10.3e}  {'pass' if r.passed else 'FAIL'}")
    outputs = []
    if args.report:
        p = Path(args.report)
        write_json(p, {"cases": [{"case": r.case, "l2": r.l2, "linf": r.linf, "norm_drift": r.norm_drift, "tolerance": r.tolerance, "passed": r.passed} for r in results]})
        outputs.append(p)
    _emit_manifest(args, cfg, outputs, t0)
    return 0 if all(r.passed for r in results) else 1


def cmd_density(args, cfg) -> int:
    t0 = time.perf_counter()
    s0 = cfg.sigma0
    zs = np.linspace(-args.half_width * s0, args.half_width * s0, args.nz)
    p = Path(args.out)
    if args.kind == "spinor":
        xs = np.linspace(-args.half_width * s0, args.half_width * s0, args.nx)
        spin = SpinOrientation(args.theta0, args.phi0)
        rows = analytic.evaluate_grid(xs, zs, args.t, spin, cfg, in_field=args.in_field)
        analytic.write_rows_csv(p, analytic.GRID_COLUMNS, rows)
    elif args.kind == "mixture":
        dens = analytic.sg_mixture_density(zs, args.t, cfg)
        analytic.write_rows_csv(p, ("z", "t", "density"), zip(zs, np.full(len(zs), args.t), dens))
    else:
        za, zb = np.meshgrid(zs, zs, indexing="ij")
        dens = analytic.eprb_joint_density(za, zb, args.t, cfg)
        analytic.write_rows_csv(p, ("zA", "zB", "t", "density"), zip(za.ravel(), zb.ravel(), np.full(za.size, args.t), dens.ravel()))
    _emit_manifest(args, cfg, [p], t0)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with PhysicalConfig fields (SI units)")
    common.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("--manifest", help="where to write the run manifest (default: beside the first output)")

    p = argparse.ArgumentParser(prog="pilotspin", description="Pilot-wave Stern-Gerlach and EPR-B simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("config", parents=[common], help="print the resolved configuration")
    c.set_defaults(func=cmd_config)

    s = sub.add_parser("sg-run", parents=[common], help="single-particle Stern-Gerlach ensemble")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--theta0", type=parse_angle, help="pure state polar angle")
    src.add_argument("--mixture", action="store_true", help="random spin directions")
    s.add_argument("--measure", choices=("uniform-theta", "sphere"), default="uniform-theta")
    s.add_argument("--phi0", type=parse_angle, default=0.0)
    s.add_argument("--n", type=_positive_int, default=1000)
    s.add_argument("--seed", type=_seed, default=streams.default_seed())
    s.add_argument("--t-final", type=float, default=None, help="time after magnet exit, s (default: screen)")
    s.add_argument("--out", help="trajectory CSV")
    s.add_argument("--record-every", type=_positive_int, default=100, help="integrator steps between CSV samples")
    s.add_argument("--summary", help="summary JSON (default: stdout)")
    s.set_defaults(func=cmd_sg_run)

    e = sub.add_parser("epr-run", parents=[common], help="two-step EPR-B experiment")
    e.add_argument("--delta", type=parse_angle, default=0.0, help="analyzer angle (radians, or e.g. 45deg)")
    e.add_argument("--sweep", type=parse_angle_list, help="comma-separated analyzer angles")
    e.add_argument("--chsh", action="store_true", help="also run the four CHSH settings")
    e.add_argument("--n-pairs", type=_positive_int, default=1000)
    e.add_argument("--seed", type=_seed, default=streams.default_seed())
    e.add_argument("--out-pairs", help="per-pair CSV")
    e.add_argument("--report", help="correlation report JSON (default: stdout)")
    e.set_defaults(func=cmd_epr_run)

    v = sub.add_parser("validate", parents=[common], help="compare closed forms with the Pauli solver")
    v.add_argument("--thetas", type=parse_angle_list)
    v.add_argument("--n-z", type=_positive_int, default=4096)
    v.add_argument("--field-steps", type=_positive_int, default=4000)
    v.add_argument("--free-steps", type=_positive_int, default=2000)
    v.add_argument("--report", help="JSON report")
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("density", parents=[common], help="dump analytic spinors or densities on a grid")
    d.add_argument("--kind", choices=("spinor", "mixture", "joint"), default="spinor")
    d.add_argument("--t", type=float, default=0.0, help="time after magnet exit (or in the magnet with --in-field), s")
    d.add_argument("--in-field", action="store_true")
    d.add_argument("--theta0", type=parse_angle, default=math.pi / 2)
    d.add_argument("--phi0", type=parse_angle, default=0.0)
    d.add_argument("--half-width", type=float, default=10.0, help="grid half width in sigma0")
    d.add_argument("--nx", type=_positive_int, default=41)
    d.add_argument("--nz", type=_positive_int, default=201)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_density)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        derive(cfg)
        if getattr(args, "seed", None) is None and hasattr(args, "seed"):
            args.seed = streams.default_seed()
        return args.func(args, cfg)
    except (ConfigError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"pilotspin: error: {exc}", file=sys.stderr)
        return 2
    except PilotSpinError as exc:
        print(f"pilotspin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
