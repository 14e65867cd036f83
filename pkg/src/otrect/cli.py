"""Command-line front end: ``otrect <command> [options]``.

Exit codes: 0 success, 1 a check or certificate failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .costs import BUILTIN_COSTS, CostModel, builtin_cost
from .errors import DegeneracyError, InputError, OTRectError, UnsupportedOperationError, VerificationError
from .jacobian import estimate_map, jacobian_residual, parse_density, pushforward_check
from .measures import (
    kantorovich_cost,
    read_measure_csv,
    read_pairs_csv,
    read_plan_json,
    support,
    write_measure_csv,
    write_pairs_csv,
    write_plan_json,
)
from .monotonicity import check_cyclical, check_pairwise
from .nondegeneracy import DIRECTIONS, classify_point, twist_scan
from .rectifier import rectify

log = logging.getLogger("otrect")

EXIT_OK, EXIT_FAILED, EXIT_INPUT = 0, 1, 2


# -- output helpers ----------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_report(path, command: str, body: dict) -> dict:
    """Write a JSON report. Everything except ``timestamp`` is deterministic."""
    doc = {
        "command": command,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        **body,
    }
    doc = _jsonable(doc)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    return doc


def _sibling(out, suffix: str):
    if not out:
        return None
    p = Path(out)
    return p.with_name(p.stem + suffix)


def _write_rows(path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _floats(text: str, what: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.replace(";", ",").split(",") if t.strip()], dtype=float)
    except ValueError:
        raise InputError(f"{what}: expected comma-separated numbers, got {text!r}") from None


# -- cost / data loading --------------------------------------------------------


def _make_cost(name: str, dim: int, *arrays) -> CostModel:
    """Built-in cost sized for the data. Globally defined costs get a box covering it."""
    key = name.strip().lower()
    if key in ("bilinear", "quadratic") and arrays:
        pts = np.vstack([np.asarray(a, dtype=float).reshape(-1, dim) for a in arrays])
        reach = max(1.0, float(np.abs(pts).max()) * 1.01)
        return builtin_cost(name, dim, box=(-reach, reach))
    return builtin_cost(name, dim)


def _load_pairs(args):
    if bool(args.plan) == bool(args.pairs):
        raise InputError("give exactly one of --plan or --pairs")
    if args.plan:
        plan = read_plan_json(args.plan)
        return plan, support(plan)
    s = read_pairs_csv(args.pairs)
    return s, s


# -- commands ---------------------------------------------------------------------


def cmd_solve(args) -> int:
    from .solver import solve_exact

    src = read_measure_csv(args.source)
    tgt = read_measure_csv(args.target)
    if src.dim != tgt.dim:
        raise InputError("source and target have different dimensions")
    model = _make_cost(args.cost, src.dim, src.points, tgt.points)
    plan = solve_exact(src, tgt, model)
    value = kantorovich_cost(plan, model)
    if args.out:
        out_dir = os.path.dirname(os.path.abspath(args.out))
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_plan_json(
            plan,
            args.out,
            os.path.relpath(os.path.abspath(args.source), out_dir),
            os.path.relpath(os.path.abspath(args.target), out_dir),
            extra={"cost": model.label, "objective": value, "version": __version__,
                   "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")},
        )
    if args.dual:
        phi, psi = plan.potentials
        write_report(args.dual, "solve", {"phi": phi, "psi": psi, "dual_value": float(src.weights @ phi + tgt.weights @ psi)})
    print(f"optimal cost {value:.12g} with {plan.nnz} support entries ({src.size} x {tgt.size})")
    return EXIT_OK


def cmd_check_monotone(args) -> int:
    _, pairs = _load_pairs(args)
    model = _make_cost(args.cost, pairs.dim, pairs.x, pairs.y)
    if args.cycles < 2:
        raise InputError("--cycles must be at least 2")
    rng = np.random.default_rng(args.seed)
    if args.cycles == 2:
        rep = check_pairwise(pairs, model, args.tol, rng=rng)
    else:
        rep = check_cyclical(pairs, model, args.cycles, args.tol, rng=rng)
    write_report(args.out, "check-monotone", {"cost": model.label, "pairs": len(pairs), "report": rep.to_dict()})
    print(f"{rep.verdict}: {len(rep.violations)} violation(s) among {rep.checked} cycle(s) of length <= {rep.cycle_length}")
    for idx, d in rep.violations[:5]:
        print(f"  pairs {list(idx)}: defect {d:.6g}")
    return EXIT_OK if rep.passed else EXIT_FAILED


def cmd_rectify(args) -> int:
    data, pairs = _load_pairs(args)
    model = _make_cost(args.cost, pairs.dim, pairs.x, pairs.y)
    base = None
    if args.base:
        vals = _floats(args.base, "--base")
        if len(vals) != 2 * model.dim:
            raise InputError(f"--base needs {2 * model.dim} numbers (x0 then y0)")
        base = (vals[: model.dim], vals[model.dim :])
    radius = None if args.radius in (None, "auto") else float(args.radius)
    cert = rectify(
        data, model, base=base, radius=radius, eps_target=args.eps_target, samples=args.samples,
        conservative=args.conservative, seed=args.seed, tolerance=args.tol,
    )
    write_report(args.out, "rectify", {"cost": model.label, "certificate": cert.to_dict()})
    csv_path = args.csv or _sibling(args.out, "_uv.csv")
    if csv_path and cert.u is not None:
        n = model.dim
        head = [f"u{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)] + ["ratio"]
        _write_rows(csv_path, head, (list(u) + list(v) + [r] for u, v, r in zip(cert.u, cert.v, cert.point_ratios)))
    print(
        f"{cert.verdict}: epsilon {cert.epsilon:.4g}, Lipschitz bound {cert.lipschitz_bound:.4g}, "
        f"max ratio {cert.max_ratio:.4g} over {cert.pairs_in_neighborhood} pair(s)"
    )
    if cert.reason:
        print(f"  {cert.reason}")
    return EXIT_OK if cert.certified else EXIT_FAILED


def _parse_grid(spec: str, box) -> np.ndarray:
    """``m`` (m points per axis over ``box``, right end open) or ``lo:hi:m,...`` per axis."""
    spec = str(spec).strip()
    n = box.dim
    if ":" not in spec:
        try:
            m = int(spec)
        except ValueError:
            raise InputError(f"bad grid spec {spec!r}") from None
        if m < 1:
            raise InputError("grid needs at least one point per axis")
        return box.grid(m, endpoint=False)
    axes = []
    for part in spec.split(","):
        bits = part.split(":")
        if len(bits) != 3:
            raise InputError(f"bad grid axis {part!r}; use lo:hi:m")
        lo, hi, m = float(bits[0]), float(bits[1]), int(bits[2])
        if m < 1:
            raise InputError("grid needs at least one point per axis")
        axes.append(np.linspace(lo, hi, m, endpoint=False))
    if len(axes) != n:
        raise InputError(f"grid spec has {len(axes)} axes, cost has dimension {n}")
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)


def cmd_analyze_cost(args) -> int:
    model = builtin_cost(args.cost, args.dim)
    directions = DIRECTIONS if args.direction == "both" else (args.direction,)
    reports, rows = {}, []
    degenerate = 0
    collisions = 0
    for direction in directions:
        fixed_box, arg_box = (model.x_box, model.y_box) if direction == "x-to-y" else (model.y_box, model.x_box)
        fixed = _floats(args.fixed, "--fixed") if args.fixed else fixed_box.center
        if len(fixed) != model.dim:
            raise InputError(f"--fixed needs {model.dim} numbers")
        pts = _parse_grid(args.grid, arg_box)
        rep = twist_scan(model, direction, fixed, pts, args.collision_tol, args.separation_floor)
        collisions += len(rep.collisions)
        reports[direction] = rep.to_dict(points=pts)
        for p in pts:
            x, y = (fixed, p) if direction == "x-to-y" else (p, fixed)
            c = classify_point(model, x, y, args.threshold, args.method)
            degenerate += c.degenerate
            rows.append([direction, *c.row()])
    write_report(
        args.out, "analyze-cost",
        {"cost": model.label, "threshold": args.threshold, "method": args.method,
         "degenerate_points": degenerate, "classified_points": len(rows), "twist": reports},
    )
    csv_path = args.csv or _sibling(args.out, "_classification.csv")
    if csv_path:
        n = model.dim
        head = ["direction", *(f"x{i + 1}" for i in range(n)), *(f"y{i + 1}" for i in range(n)),
                "determinant", "sigma_min", "sigma_max", "degenerate"]
        _write_rows(csv_path, head, rows)
    for direction, rep in reports.items():
        print(f"{direction}: {rep['collision_count']} collision(s) on {rep['samples']} samples")
    print(f"{degenerate} of {len(rows)} classified point(s) degenerate")
    if args.strict and (degenerate or collisions):
        return EXIT_FAILED
    return EXIT_OK


def cmd_jacobian(args) -> int:
    plan = read_plan_json(args.plan)
    est = estimate_map(plan, args.grid_scale)
    n = est.dim
    f_plus = parse_density(args.f_plus, n)
    f_minus = parse_density(args.f_minus, n)
    rep = jacobian_residual(est, f_plus, f_minus, args.neighbors, workers=args.threads or 1)
    body = {"report": rep.to_dict(), "split_fraction": est.split_fraction}
    if args.cells:
        body["pushforward_discrepancy"] = pushforward_check(est, plan.source, plan.target, args.cells)
    write_report(args.out, "jacobian", body)
    csv_path = args.csv or _sibling(args.out, "_samples.csv")
    if csv_path:
        rep.write_csv(csv_path)
    print(
        f"{len(rep.samples)} sample(s), {rep.skipped} skipped, {rep.flagged} split-mass; "
        f"max residual {rep.max_residual:.4g}, mean {rep.mean_residual:.4g}"
    )
    if args.tol is not None and rep.max_residual > args.tol:
        return EXIT_FAILED
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .reproduce import example31_summary, example32_summary

    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    if args.example == "3.1":
        res = example31_summary(args.grid or 16, seed=args.seed)
        if out_dir:
            gamma = res["plans"]["gamma"]
            write_measure_csv(gamma.source, out_dir / "source.csv")
            write_measure_csv(gamma.target, out_dir / "target.csv")
            for name, plan in res["plans"].items():
                write_plan_json(plan, out_dir / f"{name}.json", "source.csv", "target.csv")
            for name, cert in res["certificates"].items():
                write_report(out_dir / f"certificate_{name}.json", "reproduce", {"certificate": cert.to_dict()})
                if cert.u is not None:
                    head = ["u1", "u2", "v1", "v2", "ratio"]
                    _write_rows(out_dir / f"certificate_{name}_uv.csv", head,
                                (list(u) + list(v) + [r] for u, v, r in zip(cert.u, cert.v, cert.point_ratios)))
    else:
        res = example32_summary(args.samples, grid=args.grid or 50, seed=args.seed)
        if out_dir:
            write_pairs_csv(res["surface"], out_dir / "surface.csv")
            for name, rep in res["twist"].items():
                write_report(out_dir / f"twist_{name}.json", "reproduce", {"twist": rep.to_dict()})
    summary = res["summary"]
    target = args.out or (out_dir / "summary.json" if out_dir else None)
    write_report(target, "reproduce", {"summary": summary})
    for name, ok in summary["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if summary["passed"] else EXIT_FAILED


# -- parser ---------------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="seed for every sampling step (default 0)")
    p.add_argument("--threads", type=int, default=os.cpu_count(), help="cap on worker threads")
    p.add_argument("--config", help="JSON file supplying any option; command-line flags win")
    p.add_argument("--out", help="report path (plan JSON for solve)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="otrect", description="Exact discrete optimal transport with structural certificates.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    costs = ", ".join(BUILTIN_COSTS)

    p = sub.add_parser("solve", parents=[common], help="solve a discrete transport problem exactly")
    p.add_argument("--source", required=True, help="source measure CSV (x1..xn,weight)")
    p.add_argument("--target", required=True, help="target measure CSV")
    p.add_argument("--cost", required=True, help=f"built-in cost: {costs}")
    p.add_argument("--dual", help="write dual potentials JSON here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check-monotone", parents=[common], help="check b-monotonicity of a plan support or pair set")
    p.add_argument("--plan")
    p.add_argument("--pairs", help="pairs CSV (x1..xn,y1..yn[,mass])")
    p.add_argument("--cost", required=True)
    p.add_argument("--cycles", type=int, default=2, help="longest reassignment cycle to test (2..6)")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_check_monotone)

    p = sub.add_parser("rectify", parents=[common], help="certify a local Lipschitz graph over the diagonal")
    p.add_argument("--plan")
    p.add_argument("--pairs")
    p.add_argument("--cost", required=True)
    p.add_argument("--base", help="base point as x0 then y0 coordinates, comma separated")
    p.add_argument("--radius", default="auto", help="neighbourhood radius or 'auto'")
    p.add_argument("--eps-target", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=1000, help="Hessian samples for the epsilon estimate")
    p.add_argument("--conservative", action="store_true", help="inflate the epsilon estimate by 1.25")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--csv", help="(u, v, ratio) rows; defaults next to --out")
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("analyze-cost", parents=[common], help="classify non-degeneracy and scan for twist collisions")
    p.add_argument("--cost", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--grid", default="50", help="m, or lo:hi:m per axis (comma separated)")
    p.add_argument("--direction", choices=[*DIRECTIONS, "both"], default="both")
    p.add_argument("--fixed", help="fixed point (defaults to the centre of its box)")
    p.add_argument("--threshold", type=float, default=1e-10)
    p.add_argument("--method", choices=["auto", "analytic", "finite-difference"], default="auto")
    p.add_argument("--collision-tol", type=float, default=1e-9)
    p.add_argument("--separation-floor", type=float, default=1e-6)
    p.add_argument("--strict", action="store_true", help="exit 1 on any degenerate point or collision")
    p.add_argument("--csv", help="classification CSV; defaults next to --out")
    p.set_defaults(func=cmd_analyze_cost)

    p = sub.add_parser("jacobian", parents=[common], help="check the change-of-variables equation for a plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--f-plus", required=True, help="uniform[:lo:hi], gaussian[:mean:sd] or density CSV")
    p.add_argument("--f-minus", required=True)
    p.add_argument("--neighbors", type=int, help="neighbours per affine fit (default 2n+2)")
    p.add_argument("--grid-scale", type=float, help="split-mass threshold (default from target spacing)")
    p.add_argument("--cells", type=int, help="also run the pushforward check on this many cells per axis")
    p.add_argument("--tol", type=float, help="exit 1 if the max residual exceeds this")
    p.add_argument("--csv", help="per-sample CSV; defaults next to --out")
    p.set_defaults(func=cmd_jacobian)

    p = sub.add_parser("reproduce", parents=[common], help="rebuild the worked examples and check their invariants")
    p.add_argument("--example", choices=["3.1", "3.2"], required=True)
    p.add_argument("--grid", type=int, help="points per axis (3.1, default 16) or twist-scan grid (3.2, default 50)")
    p.add_argument("--samples", type=int, default=64, help="surface pairs for example 3.2")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_reproduce)
    return parser


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    return None


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    return cfg


def parse_args(argv, parser=None):
    """Parse ``argv``, filling unset options from ``--config`` when given.

    The config is applied as subcommand defaults before parsing, so it may
    supply required options; explicit flags still win.
    """
    parser = parser or build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if not a.startswith("-")), None)
    sp = _subparser(parser, command) if command else None
    if known.config and sp is not None:
        cfg = _load_config(known.config)
        by_dest = {a.dest: a for a in sp._actions}
        clean = {}
        for key, value in cfg.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in by_dest or dest in ("config", "help", "func"):
                raise InputError(f"config key {key!r} is not an option of {command}")
            clean[dest] = value
            by_dest[dest].required = False
        sp.set_defaults(**clean)
    return parser.parse_args(argv)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parse_args(argv, parser)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, UnsupportedOperationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (VerificationError, DegeneracyError) as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except OTRectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
