"""Cover tree with an explicit, level-indexed cell partition.

Every stored point owns a node with a *top level*; by nesting the node is
also present at every lower level down to ``min_level``. A cell at level
``l`` is identified by ``(l, p)`` where ``p`` is the index of the node's
point, and contains that point's whole subtree at level ``l``. Points that
would need a node below ``min_level`` are absorbed as extra members of the
nearest bottom-level node, which also covers exact duplicates.

Cells are keyed by absolute level so identifiers stay stable when an outlier
forces the root to a higher level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CellId = tuple[int, int]


@dataclass
class InsertOutcome:
    """Cells touched by one insertion, ordered root first."""

    index: int
    chain: list[CellId]
    created: list[CellId] = field(default_factory=list)
    promoted: list[int] = field(default_factory=list)


class CoverTree:
    def __init__(self, dim: int, base: float = 2.0, capacity: int = 256):
        if base <= 1:
            raise ValueError("base must be > 1")
        self.dim = dim
        self.base = float(base)
        self._pts = np.empty((capacity, dim))
        self.size = 0
        self.top: list[int] = []
        self.parent: list[int] = []
        # children[p][level] -> node indices whose top level is ``level`` and parent is p
        self.children: list[dict[int, list[int]]] = []
        self.owner: list[int] = []  # -1 for nodes, else the absorbing node
        self.absorbed: list[list[int]] = []
        self.root = -1
        self.root_level = 0
        self.min_level = 0
        self._lookup: dict[bytes, int] = {}  # exact coordinates -> first index

    # -- basic accessors ----------------------------------------------------

    @property
    def points(self) -> np.ndarray:
        return self._pts[: self.size]

    @property
    def root_cell(self) -> CellId:
        return (self.root_level, self.root)

    def radius(self, level: int) -> float:
        return self.base ** level

    def is_node(self, i: int) -> bool:
        return self.owner[i] < 0

    def scale(self, level: int) -> int:
        """Scale index ``s`` of a level (the root level has scale 1)."""
        return self.root_level - level + 1

    def level_of_scale(self, s: int) -> int:
        return self.root_level - s + 1

    def levels(self) -> range:
        return range(self.root_level, self.min_level - 1, -1)

    def _append(self, x: np.ndarray) -> int:
        if self.size == self._pts.shape[0]:
            grown = np.empty((2 * self._pts.shape[0], self.dim))
            grown[: self.size] = self._pts[: self.size]
            self._pts = grown
        i = self.size
        self._pts[i] = x
        self.size += 1
        self.top.append(self.min_level)
        self.parent.append(-1)
        self.children.append({})
        self.owner.append(-1)
        self.absorbed.append([])
        self._lookup.setdefault((self._pts[i] + 0.0).tobytes(), i)
        return i

    def _check_point(self, point) -> np.ndarray:
        x = np.asarray(point, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"point has dimension {x.shape[0]}, tree has {self.dim}")
        if not np.all(np.isfinite(x)):
            raise ValueError("point has non-finite coordinates")
        return x

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, points, base: float = 2.0, max_depth: int | None = 12,
              min_level: int | None = None) -> "CoverTree":
        """Insert ``points`` in order; the root level comes from their spread.

        The root is the first point and sits at the smallest level whose
        radius covers every other point. Levels below
        ``root_level - max_depth + 1`` are not materialized unless
        ``min_level`` is given explicitly.
        """
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("build needs a non-empty (n, D) array of points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points have non-finite coordinates")
        tree = cls(pts.shape[1], base, capacity=max(16, pts.shape[0]))
        far = float(np.max(np.linalg.norm(pts - pts[0], axis=1)))
        level = tree._level_for(far) if far > 0 else 0
        if min_level is None:
            min_level = level - (max_depth if max_depth is not None else 64) + 1
        tree.root_level = level
        tree.min_level = min(min_level, level)
        tree.root = tree._append(pts[0])
        tree.top[tree.root] = tree.root_level
        for x in pts[1:]:
            tree.insert(x)
        return tree

    def _level_for(self, dist: float) -> int:
        level = math.ceil(math.log(dist, self.base))
        # guard against floating point in the logarithm
        while self.base ** level < dist:
            level += 1
        while self.base ** (level - 1) >= dist:
            level -= 1
        return level

    def _kids(self, q: int, level: int) -> list[int]:
        """Nodes present at ``level`` whose parent at ``level + 1`` is ``q`` (self first)."""
        return [q, *self.children[q].get(level, ())]

    def _nearest(self, x: np.ndarray, cand: list[int]) -> tuple[int, float]:
        dist = np.linalg.norm(self._pts[cand] - x, axis=1)
        best = float(dist.min())
        winner = min(c for c, dd in zip(cand, dist) if dd == best)
        return winner, best

    def insert(self, point) -> InsertOutcome:
        """Insert one point and report the root-to-leaf chain of cells containing it."""
        x = self._check_point(point)
        if self.root < 0:
            raise ValueError("tree is empty; use CoverTree.build")
        promoted = []
        d_root = float(np.linalg.norm(self._pts[self.root] - x))
        if d_root > self.radius(self.root_level):
            new_level = self._level_for(d_root)
            promoted = list(range(self.root_level + 1, new_level + 1))
            self.root_level = new_level
            self.top[self.root] = new_level

        # descend through cover sets; covers[k] is the cover set at level root_level - k
        covers = [[self.root]]
        level = self.root_level
        absorb_into = -1
        while level > self.min_level:
            cand = [c for q in covers[-1] for c in self._kids(q, level - 1)]
            dist = np.linalg.norm(self._pts[cand] - x, axis=1)
            nxt = [c for c, dd in zip(cand, dist) if dd <= self.radius(level)]
            if not nxt:
                break
            covers.append(nxt)
            level -= 1
        if level == self.min_level:
            # no node may be created below the bottom level: absorb into the nearest close node
            q_set = covers[-1]
            dist = np.linalg.norm(self._pts[q_set] - x, axis=1)
            close = [q for q, dd in zip(q_set, dist) if dd <= self.radius(level)]
            if close:
                absorb_into, _ = self._nearest(x, close)

        i = self._append(x)
        created: list[CellId] = []
        if absorb_into >= 0:
            self.owner[i] = absorb_into
            self.absorbed[absorb_into].append(i)
        else:
            # deepest cover set with a node within its radius becomes the parent level
            parent, parent_level = -1, None
            for k in range(len(covers) - 1, -1, -1):
                lvl = self.root_level - k
                q_set = covers[k]
                dist = np.linalg.norm(self._pts[q_set] - x, axis=1)
                ok = [q for q, dd in zip(q_set, dist) if dd <= self.radius(lvl)]
                if ok:
                    parent, _ = self._nearest(x, ok)
                    parent_level = lvl
                    break
            if parent < 0:
                raise RuntimeError("cover tree insertion found no parent")  # unreachable with root promotion
            self.parent[i] = parent
            self.top[i] = parent_level - 1
            self.children[parent].setdefault(parent_level - 1, []).append(i)
            created = [(lvl, i) for lvl in range(parent_level - 1, self.min_level - 1, -1)]
        return InsertOutcome(i, self.chain_of(i), created, promoted)

    # -- queries ------------------------------------------------------------

    def ancestor(self, i: int, level: int) -> int:
        """Node whose cell contains point ``i`` at ``level``."""
        if not self.min_level <= level <= self.root_level:
            raise ValueError(f"level {level} outside [{self.min_level}, {self.root_level}]")
        j = self.owner[i] if self.owner[i] >= 0 else i
        while self.top[j] < level:
            j = self.parent[j]
        return j

    def chain_of(self, i: int) -> list[CellId]:
        """Cells containing point ``i`` from the root level down to ``min_level``."""
        j = self.owner[i] if self.owner[i] >= 0 else i
        path = [j]
        while self.parent[path[-1]] >= 0:
            path.append(self.parent[path[-1]])
        path.reverse()
        chain = []
        for t, node in enumerate(path):
            lo = self.top[path[t + 1]] + 1 if t + 1 < len(path) else self.min_level
            chain.extend((lvl, node) for lvl in range(self.top[node], lo - 1, -1))
        return chain

    def child_cells(self, cell: CellId) -> list[CellId]:
        level, p = cell
        if level <= self.min_level:
            return []
        return [(level - 1, c) for c in self._kids(p, level - 1)]

    def parent_cell(self, cell: CellId) -> CellId | None:
        level, p = cell
        if level >= self.root_level:
            return None
        if self.top[p] > level:
            return (level + 1, p)
        return (level + 1, self.parent[p])

    def members(self, cell: CellId) -> list[int]:
        """Indices of all points in a cell."""
        level, p = cell
        out: list[int] = []
        stack = [(p, level)]
        while stack:
            q, lvl = stack.pop()
            out.append(q)
            out.extend(self.absorbed[q])
            for child_level, kids in self.children[q].items():
                if child_level < lvl:
                    stack.extend((c, child_level) for c in kids)
        return sorted(out)

    def partition_at(self, level: int) -> dict[CellId, list[int]]:
        """Cells at ``level`` mapped to their member indices."""
        if not self.min_level <= level <= self.root_level:
            raise ValueError(f"level {level} outside [{self.min_level}, {self.root_level}]")
        cells: dict[CellId, list[int]] = {}
        for i in range(self.size):
            cells.setdefault((level, self.ancestor(i, level)), []).append(i)
        return cells

    def find(self, point) -> int:
        """Index of a stored point with exactly these coordinates, or -1."""
        x = self._check_point(point)
        return self._lookup.get((x + 0.0).tobytes(), -1)

    @classmethod
    def restore(cls, points, base, root, root_level, min_level, top, parent, owner) -> "CoverTree":
        """Rebuild a tree from its stored arrays (inverse of saving them)."""
        pts = np.asarray(points, dtype=float)
        tree = cls(pts.shape[1], base, capacity=max(16, pts.shape[0]))
        tree.root_level, tree.min_level = int(root_level), int(min_level)
        for x in pts:
            tree._append(x)
        tree.root = int(root)
        tree.top = [int(t) for t in top]
        tree.parent = [int(p) for p in parent]
        tree.owner = [int(o) for o in owner]
        for i in range(tree.size):
            if tree.owner[i] >= 0:
                tree.absorbed[tree.owner[i]].append(i)
            elif tree.parent[i] >= 0:
                tree.children[tree.parent[i]].setdefault(tree.top[i], []).append(i)
        return tree


def check_invariants(tree: CoverTree) -> list[str]:
    """Brute-force verification of covering, separation and nesting at every level.

    Expands the implicit representation into explicit per-level node lists
    with parents and checks each level by pairwise distances. Returns a list
    of human-readable violations (empty when the tree is valid).
    """
    problems = []
    pts = tree.points
    nodes = [i for i in range(tree.size) if tree.is_node(i)]
    explicit: dict[int, dict[int, int]] = {}
    for level in tree.levels():
        explicit[level] = {}
        for i in nodes:
            if tree.top[i] > level:
                explicit[level][i] = i
            elif tree.top[i] == level:
                explicit[level][i] = tree.parent[i]
    for level in tree.levels():
        here = explicit[level]
        if level < tree.root_level:
            for i, par in here.items():
                if par < 0:
                    problems.append(f"level {level}: node {i} has no parent")
                    continue
                if par not in explicit[level + 1]:
                    problems.append(f"level {level}: node {i} has parent {par} absent at level {level + 1}")
                elif np.linalg.norm(pts[i] - pts[par]) > tree.radius(level + 1) * (1 + 1e-12):
                    problems.append(f"level {level}: node {i} farther than covering radius from {par}")
        ids = sorted(here)
        if len(ids) > 1:
            sub = pts[ids]
            dist = np.linalg.norm(sub[:, None, :] - sub[None, :, :], axis=2)
            np.fill_diagonal(dist, np.inf)
            if dist.min() <= tree.radius(level):
                problems.append(f"level {level}: separation violated (min distance {dist.min():.3g})")
        if level > tree.min_level:
            for i in here:
                if i not in explicit[level - 1]:
                    problems.append(f"level {level}: node {i} missing at level {level - 1}")
    for i in range(tree.size):
        if not tree.is_node(i):
            j = tree.owner[i]
            if np.linalg.norm(pts[i] - pts[j]) > tree.radius(tree.min_level) * (1 + 1e-12):
                problems.append(f"absorbed point {i} farther than the bottom radius from {j}")
    if explicit and set(explicit[tree.root_level]) != {tree.root}:
        problems.append("root level must contain only the root")
    return problems
