"""Command line entry point: ``noncollide <command> ...``.

Exit codes: 0 success, 1 invalid system, 2 bad arguments or config,
3 an acceptance check (rate band or moment z-scores) failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .brownian import generate
from .harness import (
    DEFAULT_SCHEME,
    RATE_BAND,
    Z_MAX,
    PlanError,
    collision_stats,
    collisions_to_csv,
    default_workers,
    dyson_moment_check,
    strong_error,
)
from .integrators import SchemeKind, run_sd, run_em, run_tamed
from .model import ConfigError, load_spec, validate

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_BAND = 0, 1, 2, 3
SCHEMES = [k.value for k in SchemeKind]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _diag(code: int, kind: str, message: str) -> None:
    print(json.dumps({"level": "error", "code": code, "kind": kind, "message": message}), file=sys.stderr)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _provenance(spec, seed, scheme) -> dict:
    return {
        "tool": "noncollide",
        "version": __version__,
        "seed": seed,
        "scheme": scheme,
        "spec_sha256": spec.content_hash(),
    }


def _emit(text: str, out_dir, name: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_valid(path, strict=False):
    spec = load_spec(path)
    report = validate(spec, strict=strict)
    if not report.ok:
        msgs = "; ".join(f"{rule}: {msg}" for rule, msg in report.violations)
        _diag(EXIT_INVALID, "validation", msgs)
        return spec, None
    return spec, report


def cmd_validate(args) -> int:
    spec = load_spec(args.config)
    report = validate(spec, strict=args.strict)
    print(_dumps(report.to_dict()), end="")
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_simulate(args) -> int:
    spec, report = _load_valid(args.config)
    if report is None:
        return EXIT_INVALID
    try:
        grid = generate(args.seed, args.path, spec.d, args.steps, spec.horizon)
    except ValueError as exc:
        raise UsageError(str(exc))
    kind = SchemeKind(args.scheme)
    if kind.is_sd:
        traj = run_sd(spec, grid, 1, kind)
    elif kind is SchemeKind.EULER_MARUYAMA:
        traj = run_em(spec, grid, 1)
    else:
        traj = run_tamed(spec, grid, 1)
    traj.meta = _provenance(spec, args.seed, kind.value) | {
        "path_id": args.path,
        "steps": args.steps,
        "aborted": int(traj.aborted),
        "violation_steps": traj.violation_steps,
        "guard_activations": traj.guard_activations,
    }
    _emit(traj.to_csv(), args.out, f"trajectory_{kind.value}_seed{args.seed}_path{args.path}.csv")
    return EXIT_OK


def cmd_convergence(args) -> int:
    spec, report = _load_valid(args.config)
    if report is None:
        return EXIT_INVALID
    kind = SchemeKind(args.scheme)
    try:
        table = strong_error(spec, kind, args.seed, args.paths, args.factors, args.ref, args.nfine, args.workers)
    except PlanError as exc:
        raise UsageError(str(exc))
    table.meta = _provenance(spec, args.seed, kind.value) | table.meta
    summary = table.summary()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"convergence_{kind.value}_seed{args.seed}"
    (out / f"{stem}.csv").write_text(table.to_csv())
    (out / f"{stem}.json").write_text(_dumps(summary))
    print(_dumps(summary), end="")
    if not table.in_band():
        _diag(EXIT_BAND, "rate-band", f"fitted rate {table.fitted_rate:.4g} outside {list(RATE_BAND)}")
        return EXIT_BAND
    return EXIT_OK


def cmd_compare(args) -> int:
    spec, report = _load_valid(args.config)
    if report is None:
        return EXIT_INVALID
    kinds = [SchemeKind.SD_PER_STEP, SchemeKind.SD_COMPOSED, SchemeKind.EULER_MARUYAMA, SchemeKind.TAMED_EULER]
    try:
        rows = [collision_stats(spec, k, args.seed, args.paths, args.factor, args.nfine, args.workers) for k in kinds]
    except PlanError as exc:
        raise UsageError(str(exc))
    meta = _provenance(spec, args.seed, ",".join(k.value for k in kinds)) | {
        "paths": args.paths,
        "n_fine": args.nfine,
        "factor": args.factor,
    }
    _emit(collisions_to_csv(rows, meta), args.out, f"compare_seed{args.seed}.csv")
    return EXIT_OK


def cmd_moment_check(args) -> int:
    spec, report = _load_valid(args.config)
    if report is None:
        return EXIT_INVALID
    kind = SchemeKind(args.scheme)
    try:
        rep = dyson_moment_check(spec, args.seed, args.paths, args.t, args.nfine, args.factor, kind, args.workers)
    except PlanError as exc:
        raise UsageError(str(exc))
    except ValueError as exc:
        raise ConfigError(str(exc))
    rep.meta = _provenance(spec, args.seed, kind.value) | rep.meta
    text = _dumps(rep.to_dict())
    if args.out is not None:
        _emit(text, args.out, f"moments_{kind.value}_seed{args.seed}.json")
    print(text, end="")
    if not rep.passed():
        _diag(EXIT_BAND, "moment-z", f"max |z| = {rep.max_abs_z():.3g} exceeds {Z_MAX}")
        return EXIT_BAND
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="noncollide", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"noncollide {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, paths=True):
        sp.add_argument("--config", required=True, help="JSON system configuration")
        sp.add_argument("--seed", type=int, default=0)
        if paths:
            sp.add_argument("--paths", type=int, default=1000)
            sp.add_argument("--nfine", type=int, default=4096, help="finest grid steps (power of two)")
            sp.add_argument("--workers", type=int, default=default_workers())

    sp = sub.add_parser("validate", help="check a configuration")
    sp.add_argument("--config", required=True)
    sp.add_argument("--strict", action="store_true", help="treat convergence hypotheses as violations")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("simulate", help="one trajectory as CSV")
    common(sp, paths=False)
    sp.add_argument("--scheme", choices=SCHEMES, default=DEFAULT_SCHEME.value)
    sp.add_argument("--steps", type=int, required=True, help="number of steps (power of two)")
    sp.add_argument("--path", type=int, default=0, help="Brownian path id")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("convergence", help="strong error table and fitted rate")
    common(sp)
    sp.add_argument("--scheme", choices=SCHEMES, default=DEFAULT_SCHEME.value)
    sp.add_argument("--factors", type=_int_list, required=True)
    sp.add_argument("--ref", type=int, required=True, help="reference coarsening factor")
    sp.add_argument("--out", default=".")
    sp.set_defaults(func=cmd_convergence)

    sp = sub.add_parser("compare", help="collision statistics for all schemes")
    common(sp)
    sp.add_argument("--factor", type=int, required=True)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("moment-check", help="Dyson moment identities")
    common(sp)
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--factor", type=int, default=1)
    sp.add_argument("--scheme", choices=SCHEMES, default=DEFAULT_SCHEME.value)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_moment_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _diag(EXIT_USAGE, "usage", str(exc))
        return EXIT_USAGE
    except ConfigError as exc:
        _diag(EXIT_USAGE, "config", str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
