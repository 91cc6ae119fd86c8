"""``localmin`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 unreadable or inconsistent data,
3 numerical failure (memory cap, divergence, failed self-check).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import identities, randmat
from .bounds import (
    DEFAULT_STRUCTURE_TOL,
    corollary1_bound,
    corollary2_bound,
    detect_structure,
    theorem2_bound,
)
from .linalg import CutoffCriterion, MatrixFormatError, read_matrix, write_csv
from .minima import DEFAULT_MEMORY_CAP, MemoryCapError, assemble_D, compute_J
from .network import EPS_ACT, activation_patterns, forward, load_params
from .sweep import DESK_DATA, PAPER_DATA, SweepConfig, gen_synthetic, run_sweep, write_sweep_outputs
from .trainer import TrainConfig, TrainingDiverged

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: top level must be a JSON object")
    return cfg


def _read(path, name):
    if path is None:
        raise UsageError(f"--{name} is required")
    try:
        return read_matrix(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None


def _csv_list(text, name):
    try:
        if isinstance(text, (list, tuple)):
            return [int(tok) for tok in text]
        return [int(tok) for tok in str(text).split(",") if tok.strip() != ""]
    except ValueError:
        raise UsageError(f"--{name} expects comma-separated integers, got {text!r}") from None


# -- subcommands ------------------------------------------------------------

def cmd_gen_data(args, cfg, out: Path) -> int:
    base = dict(PAPER_DATA if args.profile == "paper" else DESK_DATA)
    base.update({k: v for k, v in cfg.get("data", {}).items() if k in base})
    for key in ("depth", "width", "input_dim", "output_dim", "m"):
        v = getattr(args, key)
        if v is not None:
            base[key] = v
    X, Y, manifest = gen_synthetic(seed=args.seed, **base)
    write_csv(out / "X.csv", X)
    write_csv(out / "Y.csv", Y)
    _dump_json(out / "data_manifest.json", manifest)
    print(f"wrote {X.shape[0]} samples to {out}")
    return EXIT_OK


def _load_point(args):
    X = _read(args.X, "X")
    Y = _read(args.Y, "Y")
    if args.params is None:
        raise UsageError("--params is required")
    try:
        params = load_params(args.params)
    except FileNotFoundError as exc:
        raise DataError(f"{exc.filename}: no such file") from None
    if X.shape[0] != Y.shape[0]:
        raise DataError(f"{args.Y}: has {Y.shape[0]} rows, {args.X} has {X.shape[0]}")
    if X.shape[1] != params.arch.input_dim:
        raise DataError(f"{args.X}: has {X.shape[1]} columns, network expects {params.arch.input_dim}")
    if Y.shape[1] != params.arch.output_dim:
        raise DataError(f"{args.Y}: has {Y.shape[1]} columns, network outputs {params.arch.output_dim}")
    return params, X, Y


def cmd_analyze(args, cfg, out: Path) -> int:
    params, X, Y = _load_point(args)
    trace = forward(params, X)
    pats = activation_patterns(trace, args.eps_act)
    rep = compute_J(trace, pats, params, Y, args.cutoff, args.memory_cap)
    body = rep.to_json()
    body.update(rank=rep.rank, cutoff=rep.cutoff, criterion=CutoffCriterion.parse(args.cutoff).value,
                min_abs_preactivation=pats.min_abs_preactivation)
    _dump_json(out / "report.json", body)
    print(json.dumps({k: body[k] for k in ("L", "J_direct", "J_decomposed", "grad_norm", "differentiable")}))
    return EXIT_OK


def cmd_sweep(args, cfg, out: Path) -> int:
    sc = dict(cfg.get("sweep", {}))
    if args.depths is not None:
        sc["depths"] = _csv_list(args.depths, "depths")
    if args.widths is not None:
        sc["widths"] = _csv_list(args.widths, "widths")
    if args.analyze_at is not None:
        sc["analyze_at"] = args.analyze_at
    train = TrainConfig.synthetic(**cfg.get("train", {}))
    if args.epochs is not None:
        train = TrainConfig(**{**train.to_json(), "epochs": args.epochs})
    sc.update(seed=args.seed, criterion=args.cutoff, train=train)
    try:
        sweep_cfg = SweepConfig.from_json(sc)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if args.X or args.Y:
        X, Y = _read(args.X, "X"), _read(args.Y, "Y")
        if X.shape[0] != Y.shape[0]:
            raise DataError(f"{args.Y}: has {Y.shape[0]} rows, {args.X} has {X.shape[0]}")
        data = {"source": "files", "X": str(args.X), "Y": str(args.Y)}
    else:
        X, Y, data = gen_synthetic(seed=args.seed, **DESK_DATA)
        data = {"source": "synthetic", **data}
    cells = run_sweep(sweep_cfg, X, Y, jobs=args.jobs)
    write_sweep_outputs(out, sweep_cfg, cells)
    _dump_json(out / "sweep_config.json", {**sweep_cfg.to_json(), "data": data})
    bad = sum(1 for c in cells if c.error)
    print(f"{len(cells)} cells written to {out}" + (f" ({bad} failed)" if bad else ""))
    return EXIT_OK


def cmd_bound(args, cfg, out: Path) -> int:
    params, X, Y = _load_point(args)
    H = params.arch.depth
    if not 0 <= args.t <= H:
        raise UsageError(f"--t must lie in [0, {H}]")
    trace = forward(params, X)
    pats = activation_patterns(trace, args.eps_act)
    cert = detect_structure(trace, params, args.n, args.t, args.structure, args.tol)
    if cert is None:
        print(f"no {args.structure} structure with n={args.n}, t={args.t} at tolerance {args.tol}",
              file=sys.stderr)
        return EXIT_NUMERIC
    subsets = [tuple(_csv_list(s, "subset")) for s in (args.subset or [",".join(map(str, range(args.t, H + 1)))])]
    d = assemble_D(trace, pats, params, args.memory_cap)
    reports = []
    for S in subsets:
        try:
            reports.append(theorem2_bound(trace, pats, params, Y, cert, S, args.cutoff, d).to_json())
            reports.append(corollary1_bound(trace, pats, params, Y, cert, S, args.cutoff, d).to_json())
            if args.structure == "strong" and set(S) <= {args.t, H}:
                reports.append(corollary2_bound(trace, pats, params, Y, cert, S, args.cutoff, d).to_json())
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    _dump_json(out / "bound.json", {"certificate": cert.to_json(), "bounds": reports,
                                    "differentiable": pats.differentiable})
    for r in reports:
        print(f"{r['kind']:<11} S={r['S']} bound={r['bound']:.6g} L={r['L']:.6g}")
    return EXIT_OK


def cmd_prop2(args, cfg, out: Path) -> int:
    if args.trials < 1 or min(args.m, args.dx, args.d) < 1:
        raise UsageError("--trials, --m, --dx and --d must be >= 1")
    results, summary = randmat.rank_experiment(args.regime, args.m, args.dx, args.d, args.trials,
                                               args.seed, args.cutoff, args.pattern)
    # the probe gets its own streams so it never overlaps the per-trial seeds [seed, trial]
    Lam = randmat.sample_pattern(args.m, args.d, [args.seed, 2**32 - 1, 0], args.pattern)
    smin, sizes = randmat.pattern_condition_probe(Lam, args.regime, args.probe_samples, [args.seed, 2**32 - 1, 1])
    summary["pattern_probe"] = {"min_observed_smin": smin, "index_sizes_tested": sizes,
                                "samples": args.probe_samples}
    summary["constant_conditions"] = randmat.prop2_conditions(
        args.regime, args.m, args.dx, args.d, args.delta if args.delta is not None else smin)
    with open(out / "prop2_trials.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        fields = list(asdict(results[0]))
        w.writerow(fields)
        for r in results:
            row = asdict(r)
            w.writerow([format(row[f], ".17g") if isinstance(row[f], float) else row[f] for f in fields])
    _dump_json(out / "prop2_summary.json", summary)
    print(f"full rank in {summary['full_rank_trials']}/{args.trials} trials; "
          f"mean loss ratio {summary['loss_ratio_mean']:.5f} (center {summary['predicted_ratio']:.5f})")
    return EXIT_OK


def cmd_lemma_check(args, cfg, out: Path) -> int:
    results = identities.run_all(seed=args.seed, criterion=args.cutoff)
    _dump_json(out / "lemma_check.json", results)
    for r in results:
        print(f"{'PASS' if r['ok'] else 'FAIL'} {r['name']} max_error={r['max_error']}")
    return EXIT_OK if all(r["ok"] for r in results) else EXIT_NUMERIC


COMMANDS = {
    "gen-data": cmd_gen_data,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "bound": cmd_bound,
    "prop2": cmd_prop2,
    "lemma-check": cmd_lemma_check,
}


def _global_flags(p, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="base random seed (default 0)")
    p.add_argument("--cutoff", choices=[c.value for c in CutoffCriterion], default=d("press"),
                   help="numerical-rank cutoff rule")
    p.add_argument("--jobs", type=int, default=d(1), help="worker processes for the sweep")
    p.add_argument("--out", default=d("."), help="output directory")
    p.add_argument("--config", default=d(None), help="JSON config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="localmin", description="Loss values at differentiable local minima of deep nets.")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="synthetic data from a random tanh network")
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.add_argument("--m", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--input-dim", "--dx", dest="input_dim", type=int)
    p.add_argument("--output-dim", "--dy", dest="output_dim", type=int)

    def point_flags(q):
        q.add_argument("--params", help="parameter directory (manifest.json + W*.bin)")
        q.add_argument("--X", help="input matrix file (.csv or .bin)")
        q.add_argument("--Y", help="target matrix file (.csv or .bin)")
        q.add_argument("--eps-act", type=float, default=EPS_ACT)
        q.add_argument("--memory-cap", type=int, default=DEFAULT_MEMORY_CAP)

    p = sub.add_parser("analyze", parents=[common], help="J(theta) and its decomposition at one point")
    point_flags(p)

    p = sub.add_parser("sweep", parents=[common], help="depth x width heat maps of sqrt(J)")
    p.add_argument("--X")
    p.add_argument("--Y")
    p.add_argument("--depths", help="comma-separated, default 1,2,3")
    p.add_argument("--widths", help="comma-separated, default 2,4,8,16")
    p.add_argument("--epochs", type=int)
    p.add_argument("--analyze-at", choices=["init", "trained", "both"])

    p = sub.add_parser("bound", parents=[common], help="regression-baseline bounds from linear-unit structure")
    point_flags(p)
    p.add_argument("--structure", choices=["weak", "strong"], default="weak")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--tol", type=float, default=DEFAULT_STRUCTURE_TOL)
    p.add_argument("--subset", action="append", help="layers of S, e.g. \"0,2,3\" (repeatable)")

    p = sub.add_parser("prop2", parents=[common], help="rank dichotomy Monte Carlo for shallow nets")
    p.add_argument("--regime", choices=["under", "over"], required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--dx", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--pattern", choices=["coin", "sign"], default="coin")
    p.add_argument("--probe-samples", type=int, default=200)
    p.add_argument("--delta", type=float)

    sub.add_parser("lemma-check", parents=[common], help="run the identity self-checks")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _load_config(args.config)
        for key in ("seed", "cutoff", "jobs"):
            if key in cfg and f"--{key}" not in argv:
                setattr(args, key, cfg[key])
        for key, value in cfg.get(args.command, {}).items():
            attr = key.replace("-", "_")
            if hasattr(args, attr) and getattr(args, attr) is None:
                setattr(args, attr, value)
        CutoffCriterion.parse(args.cutoff)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        print(f"localmin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MatrixFormatError) as exc:
        print(f"localmin: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (MemoryCapError, TrainingDiverged, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"localmin: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"localmin: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
