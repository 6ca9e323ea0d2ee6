"""Geometric multi-resolution analysis over a cover-tree partition.

Each materialized cell carries its mean, a thin SVD of its sample
covariance, the scaling basis (top-``d`` principal directions), the running
mean squared residual against its own affine plane, and the wavelet
constant/basis relating it to its parent cell. Cells are refined while
``count >= min_split``, ``MSE > epsilon`` and the depth cap allows.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .covertree import CellId, CoverTree
from .linalg import ThinSvd, fix_signs, thin_svd

WAVELET_TOL = 1e-10
FORMAT = "igmra-tree/1"


class StaleTreeError(RuntimeError):
    """Coefficients were produced by a different version of the tree."""


@dataclass
class GmraConfig:
    d: int = 2
    epsilon: float = 0.1
    min_split: int = 30
    max_depth: int = 12
    rank_pad: int = 5
    base: float = 2.0
    inherit_below: int | None = None  # cells smaller than this use the parent basis; None means min_split

    def validate(self, dim: int | None = None) -> None:
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.min_split < 2:
            raise ValueError("min_split must be >= 2")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.rank_pad < 0:
            raise ValueError("rank_pad must be >= 0")
        if self.inherit_below is not None and self.inherit_below < 0:
            raise ValueError("inherit_below must be >= 0")
        if dim is not None and self.d >= dim:
            raise ValueError(f"d={self.d} must be smaller than the ambient dimension {dim}")

    @property
    def inherit_threshold(self) -> int:
        return self.min_split if self.inherit_below is None else self.inherit_below

    def rank(self, dim: int) -> int:
        return min(self.d + self.rank_pad, dim)


@dataclass
class GmraNode:
    cell_id: CellId
    parent: CellId | None
    count: int
    center: np.ndarray
    cov: ThinSvd
    trace: float
    basis: np.ndarray = None
    sing_vals: np.ndarray = None
    inherited: bool = False
    running_mse: float = 0.0
    wavelet_const: np.ndarray = None
    wavelet_basis: np.ndarray = None
    children: list[CellId] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class WaveletCoefficients:
    """Multiscale code of one point.

    ``coarse`` holds the root scaling coordinates; for every finer scale
    ``details[k] = (wavelet coords, parent-plane correction)``.
    """

    version: int
    cells: list[CellId]
    coarse: np.ndarray
    details: list[tuple[np.ndarray, np.ndarray]]


def covariance_stats(points: np.ndarray, rank: int):
    """Mean, symmetric thin SVD of the sample covariance, and its exact trace."""
    n, dim = points.shape
    center = points.mean(axis=0)
    if n < 2:
        return center, ThinSvd.zeros(dim, rank), 0.0
    cov = np.cov(points, rowvar=False).reshape(dim, dim)
    return center, thin_svd(cov, rank, symmetric=True), float(np.trace(cov))


def copy_svd(svd: ThinSvd) -> ThinSvd:
    u = svd.u.copy()
    return ThinSvd(u, svd.s.copy(), u)


class GmraTree:
    def __init__(self, covertree: CoverTree, config: GmraConfig):
        config.validate(covertree.dim)
        self.covertree = covertree
        self.config = config
        self.nodes: dict[CellId, GmraNode] = {}
        self.version = 0
        self._rank = config.rank(covertree.dim)

    # -- construction -------------------------------------------------------

    @classmethod
    def batch_construct(cls, points, config: GmraConfig, min_level: int | None = None) -> "GmraTree":
        """Build the cover tree on ``points`` (in order) and refine cells top-down."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2:
            raise ValueError("points must be an (n, D) array")
        config.validate(pts.shape[1])
        if pts.shape[0] < config.min_split:
            raise ValueError(f"need at least min_split={config.min_split} points, got {pts.shape[0]}")
        ct = CoverTree.build(pts, base=config.base, max_depth=config.max_depth, min_level=min_level)
        tree = cls(ct, config)
        root = tree.fit_cell(ct.root_cell, None)
        tree.refresh_geometry(root)
        tree.grow([root.cell_id])
        return tree

    def fit_cell(self, cell: CellId, parent: CellId | None) -> GmraNode:
        """Create a node from the exact statistics of the cell's members."""
        pts = self.covertree.points[self.covertree.members(cell)]
        center, cov, trace = covariance_stats(pts, self._rank)
        node = GmraNode(cell, parent, pts.shape[0], center, cov, trace)
        self.nodes[cell] = node
        return node

    def split_due(self, node: GmraNode) -> bool:
        cfg = self.config
        return (node.is_leaf and node.count >= cfg.min_split and node.running_mse > cfg.epsilon
                and node.cell_id[0] > self.covertree.min_level)

    def split(self, cell: CellId) -> list[CellId]:
        """Materialize the next-level cover-tree cells of ``cell`` as children."""
        node = self.nodes[cell]
        if cell[0] <= self.covertree.min_level:
            raise ValueError(f"cell {cell} is at the depth cap")
        if not node.is_leaf:
            raise ValueError(f"cell {cell} is already split")
        kids = self.covertree.child_cells(cell)
        for child in kids:
            fitted = self.fit_cell(child, cell)
            self.refresh_geometry(fitted)
        node.children = list(kids)
        self.version += 1
        return kids

    def grow(self, cells) -> list[tuple[CellId, list[CellId]]]:
        """Split every due cell reachable from ``cells`` (breadth first)."""
        done = []
        queue = deque(cells)
        while queue:
            cell = queue.popleft()
            if self.split_due(self.nodes[cell]):
                kids = self.split(cell)
                done.append((cell, kids))
                queue.extend(kids)
        return done

    def grow_from(self, cell: CellId) -> list[tuple[CellId, list[CellId]]]:
        """Split ``cell`` unconditionally, then cascade into due children."""
        kids = self.split(cell)
        return [(cell, kids), *self.grow(kids)]

    def new_cell(self, cell: CellId, parent: CellId) -> GmraNode:
        """Empty child created when an insertion opens a new cover-tree cell."""
        dim = self.covertree.dim
        node = GmraNode(cell, parent, 0, np.zeros(dim), ThinSvd.zeros(dim, self._rank), 0.0)
        self.nodes[cell] = node
        self.nodes[parent].children.append(cell)
        return node

    def promote_root(self, levels: list[int]) -> None:
        """Replicate the old root cell at the newly opened levels above it."""
        root = self.covertree.root
        below = (min(levels) - 1, root)
        for level in sorted(levels):
            old = self.nodes[below]
            node = GmraNode((level, root), None, old.count, old.center.copy(),
                            copy_svd(old.cov), old.trace, children=[below])
            old.parent = node.cell_id
            self.nodes[node.cell_id] = node
            below = node.cell_id
        cell = below
        while True:
            node = self.nodes[cell]
            self.refresh_geometry(node)
            if cell[0] < min(levels):
                break
            cell = node.children[0]
        self.version += 1

    # -- per-node geometry ----------------------------------------------------

    def refresh_geometry(self, node: GmraNode) -> None:
        """Recompute scaling basis, MSE and wavelet quantities of one node."""
        self.refresh_basis(node)
        self.refresh_wavelets(node)

    def refresh_basis(self, node: GmraNode) -> None:
        d = self.config.d
        node.sing_vals = node.cov.s[:d].copy()
        parent = self.nodes.get(node.parent) if node.parent is not None else None
        if node.count < self.config.inherit_threshold and parent is not None:
            node.basis = parent.basis
            node.inherited = True
        else:
            node.basis = node.cov.u[:, :d]
            node.inherited = False
        node.running_mse = self._mse_from_stats(node)

    def _mse_from_stats(self, node: GmraNode) -> float:
        n = node.count
        if n < 2:
            return 0.0
        if node.inherited:
            proj = np.sqrt(node.cov.s) * (node.cov.u.T @ node.basis).T
            captured = float(np.sum(proj**2))
        else:
            captured = float(np.sum(node.cov.s[: self.config.d]))
        return max(0.0, (n - 1) / n * (node.trace - captured))

    def refresh_wavelets(self, node: GmraNode) -> None:
        dim = self.covertree.dim
        if node.parent is None:
            node.wavelet_const = np.zeros(dim)
            node.wavelet_basis = np.zeros((dim, 0))
            return
        par = self.nodes[node.parent]
        phi = par.basis
        shift = node.center - par.center
        node.wavelet_const = shift - phi @ (phi.T @ shift)
        outside = node.basis - phi @ (phi.T @ node.basis)
        u, s, _ = np.linalg.svd(outside, full_matrices=False)
        (psi,) = fix_signs(u[:, s > WAVELET_TOL])
        node.wavelet_basis = psi

    # -- structure queries ----------------------------------------------------

    @property
    def root(self) -> CellId:
        return self.covertree.root_cell

    def scale(self, cell: CellId) -> int:
        return self.covertree.scale(cell[0])

    def leaves(self) -> list[GmraNode]:
        return [n for n in self.nodes.values() if n.is_leaf]

    def depth(self) -> int:
        return max(self.scale(n.cell_id) for n in self.leaves())

    def member_chain(self, index: int) -> list[CellId]:
        """Materialized cells containing stored point ``index``, root to leaf."""
        out = []
        for cell in self.covertree.chain_of(index):
            if cell not in self.nodes:
                break
            out.append(cell)
            if self.nodes[cell].is_leaf:
                break
        return out

    def route(self, point) -> list[CellId]:
        """Root-to-leaf cells for a point.

        Stored points follow their cover-tree membership; other points descend
        greedily to the child with the nearest center (ties: lowest cell id).
        """
        x = np.asarray(point, dtype=float).reshape(-1)
        if x.shape[0] != self.covertree.dim:
            raise ValueError("point dimension does not match the tree")
        idx = self.covertree.find(x)
        if idx >= 0:
            return self.member_chain(idx)
        cell = self.root
        out = [cell]
        while not self.nodes[cell].is_leaf:
            kids = self.nodes[cell].children
            centers = np.array([self.nodes[k].center for k in kids])
            dist = np.linalg.norm(centers - x, axis=1)
            best = dist.min()
            cell = min(k for k, dd in zip(kids, dist) if dd == best)
            out.append(cell)
        return out

    # -- projection and wavelets ---------------------------------------------

    def project_cell(self, cell: CellId, points) -> np.ndarray:
        """Orthogonal projection onto the affine plane of one cell."""
        node = self.nodes[cell]
        x = np.asarray(points, dtype=float)
        centered = x - node.center
        return node.center + (centered @ node.basis) @ node.basis.T

    def project(self, point, scale: int | None = None) -> np.ndarray:
        """Approximation of ``point`` at ``scale`` (default: its leaf).

        Scales finer than the point's leaf resolve to the leaf itself.
        """
        chain = self.route(point)
        if scale is None:
            cell = chain[-1]
        else:
            if scale < 1 or scale > self.depth():
                raise ValueError(f"scale {scale} outside [1, {self.depth()}]")
            cell = chain[min(scale, len(chain)) - 1]
        return self.project_cell(cell, np.asarray(point, dtype=float).reshape(-1))

    def wavelet_coefficients(self, point) -> WaveletCoefficients:
        x = np.asarray(point, dtype=float).reshape(-1)
        chain = self.route(x)
        nodes = [self.nodes[c] for c in chain]
        root = nodes[0]
        coarse = root.basis.T @ (x - root.center)
        details = []
        for par, node in zip(nodes, nodes[1:]):
            xs = node.center + node.basis @ (node.basis.T @ (x - node.center))
            wav = node.wavelet_basis.T @ (xs - node.center)
            corr = par.basis.T @ (x - xs)
            details.append((wav, corr))
        return WaveletCoefficients(self.version, list(chain), coarse, details)

    def reconstruct(self, coeffs: WaveletCoefficients) -> np.ndarray:
        """Sum the telescoping series back to the finest-scale approximation."""
        if coeffs.version != self.version:
            raise StaleTreeError(f"coefficients from tree version {coeffs.version}, tree is at {self.version}")
        nodes = [self.nodes[c] for c in coeffs.cells]
        x = nodes[0].center + nodes[0].basis @ coeffs.coarse
        for par, node, (wav, corr) in zip(nodes, nodes[1:], coeffs.details):
            x = x + node.wavelet_basis @ wav + node.wavelet_const - par.basis @ corr
        return x

    # -- errors -------------------------------------------------------------

    def cell_mse(self, cell: CellId, members=None) -> float:
        """Mean squared distance from points to the cell's plane (default: its members)."""
        if members is None:
            members = self.covertree.points[self.covertree.members(cell)]
        pts = np.atleast_2d(np.asarray(members, dtype=float))
        if pts.shape[0] == 0:
            raise ValueError("cell_mse needs at least one point")
        resid = pts - self.project_cell(cell, pts)
        return float(np.mean(np.sum(resid**2, axis=1)))

    def global_mse(self, points=None) -> float:
        """Mean squared residual of points projected onto their leaf planes.

        Without arguments this is evaluated from the running statistics over
        every stored point; with ``points`` each one is routed and projected.
        """
        if points is None:
            total = sum(n.count * n.running_mse for n in self.leaves())
            return total / self.covertree.size
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 0:
            raise ValueError("global_mse needs at least one point")
        resid = pts - self.project_all(pts)
        return float(np.mean(np.sum(resid**2, axis=1)))

    def project_all(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.array([self.project(x) for x in pts])

    def leaf_projections(self) -> np.ndarray:
        """Leaf-plane projections of every stored point, in storage order."""
        ct = self.covertree
        out = np.empty_like(ct.points)
        for leaf in self.leaves():
            idx = ct.members(leaf.cell_id)
            out[idx] = self.project_cell(leaf.cell_id, ct.points[idx])
        return out

    # -- persistence ----------------------------------------------------------

    def to_arrays(self) -> dict[str, np.ndarray]:
        ct = self.covertree
        cells = list(self.nodes)
        nodes = [self.nodes[c] for c in cells]
        dim, r, d = ct.dim, self._rank, self.config.d
        k = len(nodes)
        no_parent = (np.iinfo(np.int64).min, -1)
        child_flat = [c for n in nodes for c in n.children]
        psi = np.zeros((k, dim, d))
        for i, n in enumerate(nodes):
            psi[i, :, : n.wavelet_basis.shape[1]] = n.wavelet_basis
        meta = {
            "format": FORMAT,
            "config": asdict(self.config),
            "version": self.version,
            "covertree": {"dim": dim, "base": ct.base, "root": ct.root,
                          "root_level": ct.root_level, "min_level": ct.min_level},
        }
        return {
            "meta": np.array(json.dumps(meta)),
            "ct_points": ct.points.copy(),
            "ct_top": np.array(ct.top, dtype=np.int64),
            "ct_parent": np.array(ct.parent, dtype=np.int64),
            "ct_owner": np.array(ct.owner, dtype=np.int64),
            "cell": np.array(cells, dtype=np.int64).reshape(k, 2),
            "parent": np.array([n.parent if n.parent else no_parent for n in nodes], dtype=np.int64).reshape(k, 2),
            "n_children": np.array([len(n.children) for n in nodes], dtype=np.int64),
            "children": np.array(child_flat, dtype=np.int64).reshape(len(child_flat), 2),
            "count": np.array([n.count for n in nodes], dtype=np.int64),
            "center": np.array([n.center for n in nodes]).reshape(k, dim),
            "cov_u": np.array([n.cov.u for n in nodes]).reshape(k, dim, r),
            "cov_s": np.array([n.cov.s for n in nodes]).reshape(k, r),
            "trace": np.array([n.trace for n in nodes]),
            "mse": np.array([n.running_mse for n in nodes]),
            "psi": psi,
            "psi_rank": np.array([n.wavelet_basis.shape[1] for n in nodes], dtype=np.int64),
        }

    @classmethod
    def from_arrays(cls, arrs) -> "GmraTree":
        meta = json.loads(str(arrs["meta"]))
        if meta.get("format") != FORMAT:
            raise ValueError(f"unsupported tree format {meta.get('format')!r}")
        info = meta["covertree"]
        pts = np.asarray(arrs["ct_points"], dtype=float)
        ct = CoverTree.restore(pts, info["base"], info["root"], info["root_level"], info["min_level"],
                               arrs["ct_top"].tolist(), arrs["ct_parent"].tolist(), arrs["ct_owner"].tolist())
        tree = cls(ct, GmraConfig(**meta["config"]))
        tree.version = int(meta["version"])
        kids = arrs["children"].tolist()
        offset = 0
        order = []
        for i, cell in enumerate(map(tuple, arrs["cell"].tolist())):
            par = tuple(arrs["parent"][i].tolist())
            u = arrs["cov_u"][i].copy()
            node = GmraNode(cell, None if par[1] < 0 else par, int(arrs["count"][i]),
                            arrs["center"][i].copy(), ThinSvd(u, arrs["cov_s"][i].copy(), u),
                            float(arrs["trace"][i]))
            nk = int(arrs["n_children"][i])
            node.children = [tuple(c) for c in kids[offset: offset + nk]]
            offset += nk
            node.wavelet_basis = arrs["psi"][i][:, : int(arrs["psi_rank"][i])].copy()
            tree.nodes[cell] = node
            order.append(node)
        # parents precede children in insertion order, so inherited bases resolve top-down
        for node in sorted(order, key=lambda n: -n.cell_id[0]):
            tree.refresh_basis(node)
            tree.refresh_wavelets(node)
        for node, mse in zip(order, arrs["mse"]):
            node.running_mse = float(mse)
        return tree

    def save(self, path) -> None:
        with open(Path(path), "wb") as fh:
            np.savez(fh, **self.to_arrays())

    @classmethod
    def load(cls, path) -> "GmraTree":
        with np.load(Path(path), allow_pickle=False) as arrs:
            return cls.from_arrays({k: arrs[k] for k in arrs.files})
