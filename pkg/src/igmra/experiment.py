"""Experiment pipeline: batch init, streaming, checkpoint telemetry, export."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gmra import GmraConfig, GmraTree
from .streaming import ComparisonReport, StreamState, compare_trees
from .synth import hyperplane, interleave_order, rng_for, roll_plane_patch, swiss_roll

SUMMARY_COLUMNS = ["increment", "mse_mean", "mse_stderr", "max_leaf_mse_mean",
                   "leaf_count_min", "leaf_count_q1", "leaf_count_med", "leaf_count_q3", "leaf_count_max",
                   "depth", "maxmse_cell_size"]
RECORD_COLUMNS = ["increment", "global_mse", "max_leaf_mse", "leaf_count", "depth", "maxmse_cell_size"]


@dataclass
class ExperimentConfig:
    dataset: str = "swissroll"
    n_train: int = 500
    n_stream: int = 4500
    n_plane: int = 1000  # plane points inside the stream for roll+plane
    plane: str = "diagonal"
    d: int = 2
    epsilon: float = 0.1
    min_split: int = 30
    max_depth: int = 12
    inherit_below: int | None = None
    repeats: int = 1
    seed: int = 0
    seeds: list[int] | None = None
    dense_until: int = 100
    growth: float = 1.3
    block: int = 1
    jobs: int = 1

    def __post_init__(self):
        if self.seeds is None:
            self.seeds = [self.seed + k for k in range(self.repeats)]
        else:
            self.seeds = [int(s) for s in self.seeds]

    def validate(self) -> None:
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if len(self.seeds) != self.repeats:
            raise ValueError(f"seeds has {len(self.seeds)} entries but repeats={self.repeats}")
        if self.n_train < self.min_split:
            raise ValueError(f"n_train={self.n_train} must be at least min_split={self.min_split}")
        if self.n_stream < 0:
            raise ValueError("n_stream must be >= 0")
        if self.dataset == "roll+plane" and not 0 <= self.n_plane <= self.n_stream:
            raise ValueError("n_plane must lie in [0, n_stream]")
        if self.dataset not in ("swissroll", "roll+plane") and not self.dataset.startswith("csv:"):
            raise ValueError(f"unknown dataset {self.dataset!r}; use swissroll, roll+plane or csv:<path>")
        if self.growth <= 1:
            raise ValueError("growth must be > 1")
        self.gmra_config().validate()

    def gmra_config(self) -> GmraConfig:
        return GmraConfig(d=self.d, epsilon=self.epsilon, min_split=self.min_split,
                          max_depth=self.max_depth, inherit_below=self.inherit_below)


@dataclass
class ExperimentRecord:
    increment: int
    global_mse: float
    max_leaf_mse: float
    leaf_count: int
    depth: int
    maxmse_cell_size: int
    seconds: float = 0.0


@dataclass
class RepeatResult:
    seed: int
    records: list[ExperimentRecord]
    state: StreamState | None = None
    initial_leaf_bases: dict = field(default_factory=dict)


@dataclass
class ExperimentBundle:
    config: ExperimentConfig
    repeats: list[RepeatResult]

    def summary(self) -> list[dict]:
        return summarize([r.records for r in self.repeats])


def checkpoints(total: int, dense_until: int = 100, growth: float = 1.3) -> list[int]:
    """Increments to log: every one up to ``dense_until``, then geometric, always the last."""
    out = list(range(min(total, dense_until) + 1))
    k = float(max(dense_until, 1))
    while True:
        k *= growth
        step = int(np.ceil(k))
        if step >= total:
            break
        if step > out[-1]:
            out.append(step)
    if out[-1] != total:
        out.append(total)
    return out


def load_points_csv(path) -> np.ndarray:
    """Numeric CSV, one point per row; a non-numeric first row is a header."""
    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: no rows")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        pts = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric value ({exc})") from None
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError(f"{path}: rows must have equal length")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{path}: non-finite value")
    return pts


def child_seeds(seed: int, k: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def make_dataset(config: ExperimentConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Training rows and stream rows for one repeat."""
    n0, m = config.n_train, config.n_stream
    if config.dataset == "swissroll":
        pts = swiss_roll(n0 + m, seed)
        return pts[:n0], pts[n0:]
    if config.dataset == "roll+plane":
        s_roll, s_plane, s_mix = child_seeds(seed, 3)
        roll = swiss_roll(n0 + m - config.n_plane, s_roll)
        stream_roll = roll[n0:]
        if config.n_plane == 0:
            return roll[:n0], stream_roll
        plane = hyperplane(config.n_plane, s_plane, **roll_plane_patch(config.plane))
        order = interleave_order([len(stream_roll), config.n_plane], s_mix)
        stream = np.empty((m, 3))
        stream[order == 0] = stream_roll
        stream[order == 1] = plane
        return roll[:n0], stream
    pts = load_points_csv(config.dataset[4:])
    if pts.shape[0] < n0:
        raise ValueError(f"csv has {pts.shape[0]} rows, fewer than n_train={n0}")
    pts = pts[rng_for(seed).permutation(pts.shape[0])]
    return pts[:n0], pts[n0: n0 + m]


def tree_record(tree: GmraTree, increment: int, seconds: float = 0.0) -> ExperimentRecord:
    leaves = tree.leaves()
    worst = max(leaves, key=lambda n: (n.running_mse, tuple(-v for v in n.cell_id)))
    return ExperimentRecord(increment, tree.global_mse(), worst.running_mse, len(leaves),
                            tree.depth(), worst.count, seconds)


def run_repeat(config: ExperimentConfig, seed: int, keep_state: bool = True) -> RepeatResult:
    train, stream = make_dataset(config, seed)
    state = StreamState.from_training(train, config.gmra_config())
    initial = {c: n.basis.copy() for c, n in state.tree.nodes.items() if n.is_leaf}
    marks = checkpoints(stream.shape[0], config.dense_until, config.growth)
    records = [tree_record(state.tree, 0)]
    done = 0
    for mark in marks[1:]:
        t0 = time.perf_counter()
        state.ingest_many(stream[done:mark], block=config.block)
        records.append(tree_record(state.tree, mark, time.perf_counter() - t0))
        done = mark
    return RepeatResult(seed, records, state if keep_state else None, initial)


def _run_repeat_light(args):
    config, seed = args
    return run_repeat(config, seed, keep_state=False)


def run_experiment(config: ExperimentConfig, keep_states: bool = True) -> ExperimentBundle:
    config.validate()
    if config.jobs > 1 and config.repeats > 1 and not keep_states:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_repeat_light, [(config, s) for s in config.seeds]))
    else:
        results = [run_repeat(config, s, keep_states) for s in config.seeds]
    return ExperimentBundle(config, results)


def compare_ground_truth(config: ExperimentConfig, bundle: ExperimentBundle | None = None) -> list[ComparisonReport]:
    """Incremental vs batch-on-everything comparison, one report per repeat."""
    if bundle is None or any(r.state is None for r in bundle.repeats):
        bundle = run_experiment(config, keep_states=True)
    return [compare_trees(r.state.tree) for r in bundle.repeats]


def summarize(tables: list[list[ExperimentRecord]]) -> list[dict]:
    """Aggregate per-repeat tables row by row (tables share their increments)."""
    if not tables or not tables[0]:
        return []
    rows = []
    for recs in zip(*tables):
        incs = {r.increment for r in recs}
        if len(incs) != 1:
            raise ValueError("repeat tables have different checkpoints")
        mse = np.array([r.global_mse for r in recs])
        leaves = np.array([r.leaf_count for r in recs], dtype=float)
        q = np.percentile(leaves, [0, 25, 50, 75, 100])
        rows.append({
            "increment": recs[0].increment,
            "mse_mean": float(mse.mean()),
            "mse_stderr": float(mse.std(ddof=1) / np.sqrt(len(mse))) if len(mse) > 1 else 0.0,
            "max_leaf_mse_mean": float(np.mean([r.max_leaf_mse for r in recs])),
            "leaf_count_min": float(q[0]), "leaf_count_q1": float(q[1]), "leaf_count_med": float(q[2]),
            "leaf_count_q3": float(q[3]), "leaf_count_max": float(q[4]),
            "depth": float(np.mean([r.depth for r in recs])),
            "maxmse_cell_size": float(np.median([r.maxmse_cell_size for r in recs])),
        })
    return rows


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_table(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def export(bundle: ExperimentBundle, out_dir, fmt: str = "csv", plots: bool = True) -> list[Path]:
    """Write summary and per-repeat tables, timings and SVG panels; return written paths."""
    from .svgplot import write_panels

    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = bundle.summary()
    written = []
    if fmt == "csv":
        path = out / "summary.csv"
        write_table(path, SUMMARY_COLUMNS, summary)
        written.append(path)
        for k, rep in enumerate(bundle.repeats):
            path = out / f"repeat_{k}.csv"
            write_table(path, RECORD_COLUMNS, [dataclasses.asdict(r) for r in rep.records])
            written.append(path)
    else:
        path = out / "summary.json"
        payload = {
            "config": dataclasses.asdict(bundle.config),
            "summary": summary,
            "repeats": [{"seed": r.seed, "records": [{c: getattr(x, c) for c in RECORD_COLUMNS} for x in r.records]}
                        for r in bundle.repeats],
        }
        path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
        written.append(path)
    timing = {str(r.seed): [x.seconds for x in r.records] for r in bundle.repeats}
    path = out / "timing.json"
    path.write_text(json.dumps(timing) + "\n")
    written.append(path)
    if plots and summary:
        written.extend(write_panels(summary, bundle.config.epsilon, bundle.config.min_split, out))
    return written
