"""Incremental GMRA: insert streamed points and keep every cell current.

Each ingest inserts the point into the cover tree, folds it into the
covariance factorization of every materialized cell on its root-to-leaf
chain (low-rank covariance update plus a symmetric Brand update), refreshes
the scaling bases, MSE and wavelet quantities that depend on them, and then
splits any cell the policy says is due.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covertree import CellId
from .gmra import GmraConfig, GmraNode, GmraTree
from .linalg import (CovarianceUpdate, PrincipalAngles, cov_rank1_terms, cov_rankm_terms,
                     principal_angles, update_covariance_svd, update_mean)

MAX_BLOCK = 32


@dataclass(frozen=True)
class SplitPolicy:
    epsilon: float = 0.1
    min_split: int = 30
    max_depth: int = 12

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.min_split < 2:
            raise ValueError("min_split must be >= 2")

    @classmethod
    def from_config(cls, cfg: GmraConfig) -> "SplitPolicy":
        return cls(cfg.epsilon, cfg.min_split, cfg.max_depth)


@dataclass(frozen=True)
class SplitDecision:
    split: bool
    reason: str
    count: int
    mse: float
    depth: int


@dataclass
class IngestReport:
    index: int
    touched: list[CellId]
    created: list[CellId] = field(default_factory=list)
    splits: list[tuple[CellId, list[CellId]]] = field(default_factory=list)
    mse: dict[CellId, float] = field(default_factory=dict)


@dataclass
class ComparisonReport:
    rmse: float
    leaf_angles: dict[CellId, float]
    leaf_counts: dict[CellId, int]
    matched: int
    unmatched: int
    same_structure: bool

    def max_angle(self, min_count: int = 0) -> float:
        vals = [a for c, a in self.leaf_angles.items() if self.leaf_counts[c] >= min_count]
        return max(vals, default=0.0)


class StreamState:
    def __init__(self, tree: GmraTree):
        self.tree = tree
        self.policy = SplitPolicy.from_config(tree.config)
        self.increments_seen = 0
        self.snapshots: dict[CellId, list[tuple[int, np.ndarray]]] = {}

    @classmethod
    def from_training(cls, points, config: GmraConfig) -> "StreamState":
        return cls(GmraTree.batch_construct(points, config))

    # -- split policy ---------------------------------------------------------

    def evaluate_split(self, cell: CellId) -> SplitDecision:
        tree = self.tree
        if cell not in tree.nodes:
            raise KeyError(f"unknown cell {cell}")
        node = tree.nodes[cell]
        depth = tree.scale(cell)
        p = self.policy
        args = (node.count, node.running_mse, depth)
        if not node.is_leaf:
            return SplitDecision(False, "already split", *args)
        if node.count < p.min_split:
            return SplitDecision(False, "too few points", *args)
        if node.running_mse <= p.epsilon:
            return SplitDecision(False, "within tolerance", *args)
        if cell[0] <= tree.covertree.min_level:
            return SplitDecision(False, "at maximum depth", *args)
        return SplitDecision(True, "due", *args)

    def apply_split(self, cell: CellId) -> list[CellId]:
        """Split ``cell`` and cascade into any children that are themselves due."""
        splits = self.tree.grow_from(cell)
        return [c for _, kids in splits for c in kids]

    # -- ingestion ------------------------------------------------------------

    def _check(self, point) -> np.ndarray:
        x = np.asarray(point, dtype=float).reshape(-1)
        if x.shape[0] != self.tree.covertree.dim:
            raise ValueError(f"point has dimension {x.shape[0]}, tree has {self.tree.covertree.dim}")
        if not np.all(np.isfinite(x)):
            raise ValueError("point has non-finite coordinates")
        return x

    def ingest(self, point) -> IngestReport:
        return self.ingest_many(np.atleast_2d(self._check(point)), block=1)[0]

    def ingest_many(self, points, block: int = 1) -> list[IngestReport]:
        """Ingest rows in order; ``block > 1`` batches covariance updates per cell.

        With blocks, every point is inserted into the cover tree first and the
        cells touched by the block receive one rank-m update; splits are then
        evaluated once for the block.
        """
        if not 1 <= block <= MAX_BLOCK:
            raise ValueError(f"block must be in [1, {MAX_BLOCK}]")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        reports = []
        for start in range(0, pts.shape[0], block):
            chunk = [self._check(x) for x in pts[start: start + block]]
            reports.extend(self._ingest_block(chunk))
        return reports

    def _ingest_block(self, chunk: list[np.ndarray]) -> list[IngestReport]:
        tree = self.tree
        reports = []
        pending: dict[CellId, list[np.ndarray]] = {}
        for x in chunk:
            out = tree.covertree.insert(x)
            if out.promoted:
                tree.promote_root(out.promoted)
            touched, created = [], []
            parent = None
            for cell in out.chain:
                node = tree.nodes.get(cell)
                if node is None:
                    if parent is None or parent.is_leaf:
                        break
                    node = tree.new_cell(cell, parent.cell_id)
                    created.append(cell)
                pending.setdefault(cell, []).append(x)
                touched.append(cell)
                parent = node
                if node.is_leaf:
                    break
            reports.append(IngestReport(out.index, touched, created))
            self.increments_seen += 1

        # parents before children so inherited bases are current
        order = sorted(pending, key=lambda c: -c[0])
        for cell in order:
            absorb(tree.nodes[cell], np.array(pending[cell]))
        refreshed = set()
        for cell in order:
            node = tree.nodes[cell]
            tree.refresh_basis(node)
        for cell in order:
            node = tree.nodes[cell]
            for c in [cell, *node.children]:
                if c in refreshed:
                    continue
                refreshed.add(c)
                kid = tree.nodes[c]
                if kid.inherited and c not in pending:
                    tree.refresh_basis(kid)
                tree.refresh_wavelets(kid)
        tree.version += 1

        leaves = [r.touched[-1] for r in reports if r.touched]
        fresh = [c for r in reports for c in r.created]
        seen, cand = set(), []
        for c in leaves + fresh:
            if c not in seen:
                seen.add(c)
                cand.append(c)
        splits = tree.grow(cand)
        reports[-1].splits = splits
        for r in reports:
            r.mse = {c: tree.nodes[c].running_mse for c in r.touched}
        return reports

    # -- telemetry ------------------------------------------------------------

    def snapshot(self, cells=None) -> None:
        """Remember current bases (all cells by default) for drift queries."""
        for cell in cells if cells is not None else list(self.tree.nodes):
            basis = self.tree.nodes[cell].basis.copy()
            self.snapshots.setdefault(cell, []).append((self.increments_seen, basis))

    def subspace_drift(self, cell: CellId, window: int = 0) -> PrincipalAngles:
        """Principal angles between the newest snapshot at least ``window`` increments old and now."""
        if cell not in self.tree.nodes:
            raise KeyError(f"unknown cell {cell}")
        old = [b for inc, b in self.snapshots.get(cell, ()) if self.increments_seen - inc >= window]
        if not old:
            raise LookupError(f"no snapshot of {cell} at least {window} increments old")
        return principal_angles(old[-1], self.tree.nodes[cell].basis)

    def rebuild_check(self, points=None) -> ComparisonReport:
        """Compare against a batch tree built on every point seen so far."""
        return compare_trees(self.tree, points)

    # -- checkpoint ------------------------------------------------------------

    def save(self, path) -> None:
        arrs = self.tree.to_arrays()
        arrs["stream"] = np.array(json.dumps({"increments_seen": self.increments_seen}))
        with open(Path(path), "wb") as fh:
            np.savez(fh, **arrs)

    @classmethod
    def load(cls, path) -> "StreamState":
        with np.load(Path(path), allow_pickle=False) as arrs:
            data = {k: arrs[k] for k in arrs.files}
        state = cls(GmraTree.from_arrays(data))
        if "stream" in data:
            state.increments_seen = int(json.loads(str(data["stream"]))["increments_seen"])
        return state


def absorb(node: GmraNode, new_points: np.ndarray) -> None:
    """Fold rows of ``new_points`` into a node's mean, covariance SVD and trace."""
    new_points = np.atleast_2d(new_points)
    start = 0
    if node.count == 0:
        node.center = new_points[0].copy()
        node.count = 1
        node.trace = 0.0
        start = 1
    if start < new_points.shape[0] and node.count == 1:
        # covariance of two points: (x - c)(x - c)^T / 2
        x = new_points[start]
        col = (x - node.center)[:, None]
        _apply(node, CovarianceUpdate(0.0, 0.5, col, 1, 1))
        node.center, node.count = update_mean(node.center, 1, x[:, None])
        start += 1
    rest = new_points[start:]
    if rest.shape[0] == 1:
        upd = cov_rank1_terms(node.center, node.count, rest[0])
    elif rest.shape[0] > 1:
        upd = cov_rankm_terms(node.center, node.count, rest.T)
    else:
        return
    _apply(node, upd)
    node.center, node.count = update_mean(node.center, node.count, rest.T)


def _apply(node: GmraNode, upd: CovarianceUpdate) -> None:
    node.cov = update_covariance_svd(node.cov, upd, node.cov.rank)
    node.trace = upd.a * node.trace + upd.trace_increment


def compare_trees(tree: GmraTree, points=None) -> ComparisonReport:
    """RMSE between leaf projections of ``tree`` and of a batch rebuild, plus leaf angles.

    The rebuild uses the same configuration, point order and bottom level,
    so its cover tree is identical and cells can be matched by id.
    """
    ct = tree.covertree
    pts = ct.points if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    batch = GmraTree.batch_construct(ct.points, tree.config, min_level=ct.min_level)
    if points is None:
        diff = tree.leaf_projections() - batch.leaf_projections()
    else:
        diff = tree.project_all(pts) - batch.project_all(pts)
    rmse = float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))
    angles, counts = {}, {}
    unmatched = 0
    for leaf in tree.leaves():
        other = batch.nodes.get(leaf.cell_id)
        if other is None:
            unmatched += 1
            continue
        angles[leaf.cell_id] = principal_angles(leaf.basis, other.basis).max_angle
        counts[leaf.cell_id] = leaf.count
    same = {c for c, n in tree.nodes.items() if n.is_leaf} == {c for c, n in batch.nodes.items() if n.is_leaf}
    return ComparisonReport(rmse, angles, counts, len(angles), unmatched, same)

