"""Command-line entry point: ``igmra {fit,stream,eval,compare,experiment,bounds}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

import numpy as np

from .experiment import (ExperimentConfig, compare_ground_truth, export, load_points_csv, make_dataset,
                         run_experiment, tree_record)
from .gmra import GmraTree
from .linalg import lemma1_gap_bound, lemma2_angle_bound, prop1_scaling_probe, random_covariance_probe
from .streaming import StreamState


class CliError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _coerce(name: str, raw: str):
    default = ExperimentConfig.__dataclass_fields__[name].default
    raw = raw.strip()
    if name == "seeds":
        return [int(s) for s in raw.replace(",", " ").split()] if raw else None
    if name == "inherit_below":
        return None if raw.lower() in ("", "none") else int(raw)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_settings(lines, source: str) -> dict:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    out = {}
    for num, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{source}:{num}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise CliError(f"{source}:{num}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise CliError(f"{source}:{num}: bad value {value!r} for {key}") from None
    return out


def build_config(args) -> ExperimentConfig:
    settings = {}
    if getattr(args, "config", None):
        settings.update(parse_settings(Path(args.config).read_text().splitlines(), args.config))
    settings.update(parse_settings(getattr(args, "set", None) or [], "--set"))
    if getattr(args, "dataset", None):
        settings["dataset"] = args.dataset
    if getattr(args, "seed", None) is not None:
        settings["seed"] = args.seed
        settings.pop("seeds", None)
    if getattr(args, "jobs", None):
        settings["jobs"] = args.jobs
    cfg = ExperimentConfig(**settings)
    cfg.validate()
    return cfg


def emit(rows: list[dict], fmt: str, dest: Path | None = None) -> None:
    if fmt == "json":
        text = json.dumps(rows if len(rows) != 1 else rows[0], indent=1, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        cols = list(rows[0]) if rows else []
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (r[c] for c in cols)])
        text = buf.getvalue()
    if dest is None:
        sys.stdout.write(text)
    else:
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(text)


def tree_metrics(tree: GmraTree, points=None) -> dict:
    rec = tree_record(tree, 0)
    row = {"points": tree.covertree.size, "leaves": rec.leaf_count, "depth": rec.depth,
           "global_mse": rec.global_mse, "max_leaf_mse": rec.max_leaf_mse, "version": tree.version}
    if points is not None:
        row["eval_points"] = int(points.shape[0])
        row["eval_mse"] = tree.global_mse(points)
    return row


def _load_tree(path) -> GmraTree:
    return StreamState.load(path).tree


# -- subcommands --------------------------------------------------------------

def cmd_fit(args):
    cfg = build_config(args)
    train, stream = make_dataset(cfg, cfg.seeds[0])
    pts = np.vstack([train, stream]) if args.all else train
    state = StreamState(GmraTree.batch_construct(pts, cfg.gmra_config()))
    if args.out:
        state.save(args.out)
    emit([tree_metrics(state.tree)], args.format)


def cmd_stream(args):
    state = StreamState.load(args.checkpoint)
    if args.input:
        pts = load_points_csv(args.input)
    else:
        cfg = build_config(args)
        pts = make_dataset(cfg, cfg.seeds[0])[1]
    if pts.shape[1] != state.tree.covertree.dim:
        raise CliError(f"input has {pts.shape[1]} columns, checkpoint has dimension {state.tree.covertree.dim}")
    state.ingest_many(pts, block=args.block)
    state.save(args.out or args.checkpoint)
    row = tree_metrics(state.tree)
    row["increments_seen"] = state.increments_seen
    emit([row], args.format)


def cmd_eval(args):
    tree = _load_tree(args.tree)
    pts = load_points_csv(args.points) if args.points else None
    emit([tree_metrics(tree, pts)], args.format, Path(args.out) if args.out else None)


def cmd_compare(args):
    cfg = build_config(args)
    reports = compare_ground_truth(cfg)
    rows = []
    for seed, rep in zip(cfg.seeds, reports):
        rows.append({"seed": seed, "rmse": rep.rmse, "max_leaf_angle": rep.max_angle(),
                     "max_leaf_angle_large": rep.max_angle(cfg.min_split), "matched_leaves": rep.matched,
                     "unmatched_leaves": rep.unmatched, "same_structure": rep.same_structure})
    emit(rows, args.format, Path(args.out) if args.out else None)


def cmd_experiment(args):
    cfg = build_config(args)
    bundle = run_experiment(cfg, keep_states=False)
    out = Path(args.out or "results")
    written = export(bundle, out, args.format, plots=not args.no_plots)
    last = bundle.summary()[-1]
    print(json.dumps({"out": str(out), "files": [p.name for p in written], "final": last}, sort_keys=True))


def cmd_bounds(args):
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    rows = []
    if args.suite in ("lemma1", "all"):
        held = 0
        for k in range(args.probes):
            d, m = (2, 4)[k % 2], (1, 5)[(k // 2) % 2]
            p = random_covariance_probe(rng, 12, d, m)
            held += lemma1_gap_bound(p.cov, d, p.update).holds
        rows.append({"suite": "lemma1", "probes": args.probes, "applicable": args.probes, "holds": held,
                     "spearman": ""})
    if args.suite in ("lemma2", "all"):
        app = held = 0
        for k in range(args.probes):
            d, m = (2, 4)[k % 2], (1, 5)[(k // 2) % 2]
            p = random_covariance_probe(rng, 12, d, m)
            chk = lemma2_angle_bound(p.cov, d, p.update, p.n)
            if chk.applicable:
                app += 1
                held += chk.holds
        rows.append({"suite": "lemma2", "probes": args.probes, "applicable": app, "holds": held, "spearman": ""})
    if args.suite in ("prop1", "all"):
        probe = prop1_scaling_probe(args.probes, (12, 2, 5), seed=args.seed or 0)
        rows.append({"suite": "prop1", "probes": args.probes, "applicable": args.probes, "holds": "",
                     "spearman": probe.spearman})
    emit(rows, args.format, Path(args.out) if args.out else None)


def make_parser() -> Parser:
    parser = Parser(prog="igmra", description="Incremental GMRA for streaming point clouds")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    def common(p, config=True):
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        if config:
            p.add_argument("--config", help="flat key=value settings file")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
            p.add_argument("--dataset", help="swissroll, roll+plane or csv:<path>")
            p.add_argument("--jobs", type=int)
        return p

    p = common(sub.add_parser("fit", help="batch-construct a tree and save it"))
    p.add_argument("--all", action="store_true", help="fit training and stream points together")
    p.set_defaults(func=cmd_fit)

    p = common(sub.add_parser("stream", help="resume a checkpoint and ingest points"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", help="CSV of points to ingest (default: the dataset's stream part)")
    p.add_argument("--block", type=int, default=1)
    p.set_defaults(func=cmd_stream)

    p = common(sub.add_parser("eval", help="metrics of a saved tree"), config=False)
    p.add_argument("--tree", required=True)
    p.add_argument("--points", help="CSV of points to project")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("compare", help="incremental vs batch on the same points"))
    p.set_defaults(func=cmd_compare)

    p = common(sub.add_parser("experiment", help="full streaming experiment with exports"))
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = common(sub.add_parser("bounds", help="randomized checks of the update error bounds"), config=False)
    p.add_argument("--suite", choices=("lemma1", "lemma2", "prop1", "all"), default="all")
    p.add_argument("--probes", type=int, default=500)
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        args.func(args)
    except Exception as exc:  # report every failure as one parsable line
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
