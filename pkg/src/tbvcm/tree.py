"""Regression trees over the action space.

Three building strategies share one tree representation:

``cart``
    Greedy recursive partitioning maximizing the reduction of the sum of
    squared errors.
``subsampled``
    CART grown on a subsample drawn once per tree without replacement; the
    leaf values use the subsample only.
``random``
    Completely random trees: split columns and points are drawn without
    looking at the targets, leaf values are the means of all routed targets.

Continuous splits send ``z <= threshold`` left.  Categorical splits store
the levels seen on each side; levels seen on neither side are handled by the
unseen-level policy (``"majority"`` follows the child holding more training
rows, ``"strict"`` raises).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ActionSchema
from .errors import UnseenLevelError, UsageError

STRATEGIES = ("cart", "subsampled", "random")
UNSEEN_POLICIES = ("majority", "strict")

# Gains at or below this fraction of the node's total sum of squares count as zero.
_REL_GAIN_TOL = 1e-12
# Above this many levels the random categorical split is drawn by rejection.
_ENUMERATE_LEVELS = 12


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 5
    min_leaf: int = 20
    strategy: str = "cart"
    subsample: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if self.max_depth < 0:
            raise UsageError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise UsageError("min_leaf must be >= 1")
        if self.strategy not in STRATEGIES:
            raise UsageError(f"unknown tree strategy {self.strategy!r}")
        if not 0.0 < self.subsample <= 1.0:
            raise UsageError("subsample fraction must lie in (0, 1]")


@dataclass(frozen=True)
class Split:
    """A binary split of one action column.

    Continuous columns use ``threshold``; categorical columns use the level
    code sets ``left_levels`` and ``right_levels``.
    """

    column: int
    threshold: float | None = None
    left_levels: frozenset[int] | None = None
    right_levels: frozenset[int] | None = None

    def __post_init__(self):
        if self.threshold is None:
            if not self.left_levels or not self.right_levels:
                raise UsageError("categorical split needs non-empty level sets on both sides")
            if self.left_levels & self.right_levels:
                raise UsageError("level sets must be disjoint")
        elif not math.isfinite(self.threshold):
            raise UsageError("threshold must be finite")

    @property
    def categorical(self) -> bool:
        return self.threshold is None


def candidate_splits(values, categorical: bool = False, targets=None, *, column: int = 0,
                     rng: np.random.Generator | None = None) -> list[Split]:
    """Candidate splits of a single action column.

    Continuous: midpoints between consecutive distinct values.  Categorical:
    levels are ordered by their mean target and every prefix of that order is
    a cut.  With ``rng`` given, a categorical column instead yields one random
    non-trivial level partition.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise UsageError("empty column")
    if not categorical:
        u = np.unique(values)
        return [Split(column, threshold=_midpoint(a, b)) for a, b in zip(u[:-1], u[1:])]
    codes = values.astype(np.int64)
    present = np.unique(codes)
    if present.size < 2:
        return []
    if rng is not None:
        mask = 0
        while mask == 0 or mask == (1 << present.size) - 1:
            mask = int(rng.integers(1, 1 << present.size))
        left = frozenset(int(c) for k, c in enumerate(present) if mask >> k & 1)
        return [Split(column, left_levels=left, right_levels=frozenset(map(int, present)) - left)]
    if targets is None:
        raise UsageError("categorical candidate splits need targets")
    targets = np.asarray(targets, dtype=float)
    order = _levels_by_mean(codes, targets, present)
    out = []
    for k in range(1, order.size):
        out.append(Split(column, left_levels=frozenset(map(int, order[:k])),
                         right_levels=frozenset(map(int, order[k:]))))
    return out


def _midpoint(a: float, b: float) -> float:
    t = a + (b - a) / 2.0
    # adjacent floats: the midpoint may round onto b
    return a if t >= b else t


def _levels_by_mean(codes, targets, present):
    width = int(present.max()) + 1
    cnt = np.bincount(codes, minlength=width)[present]
    tot = np.bincount(codes, weights=targets, minlength=width)[present]
    means = tot / cnt
    return present[np.lexsort((present, means))]


class DecisionTree:
    """Immutable binary tree stored as flat node arrays.

    Node 0 is the root.  ``left[k] == -1`` marks a leaf.  ``count[k]`` is the
    number of rows (of the set used for leaf values) that reached node ``k``.
    """

    def __init__(self, feature, threshold, left, right, value, count,
                 left_levels: dict[int, frozenset[int]] | None = None,
                 right_levels: dict[int, frozenset[int]] | None = None):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.count = np.asarray(count, dtype=np.int64)
        self.left_levels = {int(k): frozenset(map(int, v)) for k, v in (left_levels or {}).items()}
        self.right_levels = {int(k): frozenset(map(int, v)) for k, v in (right_levels or {}).items()}
        for arr in (self.feature, self.threshold, self.left, self.right, self.value, self.count):
            arr.setflags(write=False)
        self._build_tables()

    def _build_tables(self):
        cat_nodes = sorted(self.left_levels)
        width = 1 + max((max(self.left_levels[k] | self.right_levels[k]) for k in cat_nodes), default=0)
        # 0 left, 1 right, 2 unseen
        table = np.full((self.n_nodes, width), 2, dtype=np.int8)
        for k in cat_nodes:
            table[k, list(self.left_levels[k])] = 0
            table[k, list(self.right_levels[k])] = 1
        self._side = table
        self._is_cat = np.zeros(self.n_nodes, dtype=bool)
        self._is_cat[cat_nodes] = True

    @property
    def n_nodes(self) -> int:
        return len(self.value)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left < 0))

    def is_leaf(self, k: int) -> bool:
        return bool(self.left[k] < 0)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for k in range(self.n_nodes):
            if self.left[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def split_at(self, k: int) -> Split | None:
        if self.is_leaf(k):
            return None
        if self._is_cat[k]:
            return Split(int(self.feature[k]), left_levels=self.left_levels[k],
                         right_levels=self.right_levels[k])
        return Split(int(self.feature[k]), threshold=float(self.threshold[k]))

    def apply(self, z, unseen: str = "majority") -> np.ndarray:
        """Leaf index reached by every row of ``z``."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        node = np.zeros(z.shape[0], dtype=np.int64)
        active = np.arange(z.shape[0])
        while active.size:
            nd = node[active]
            inner = self.left[nd] >= 0
            active, nd = active[inner], nd[inner]
            if not active.size:
                break
            v = z[active, self.feature[nd]]
            go_left = v <= self.threshold[nd]
            cat = self._is_cat[nd]
            if cat.any():
                go_left[cat] = self._categorical_left(nd[cat], v[cat], unseen)
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    def _categorical_left(self, nd, v, unseen):
        codes = v.astype(np.int64)
        width = self._side.shape[1]
        ok = (codes >= 0) & (codes < width) & (codes == v)
        side = np.full(nd.shape, 2, dtype=np.int8)
        side[ok] = self._side[nd[ok], codes[ok]]
        lost = side == 2
        if lost.any():
            if unseen == "strict":
                k = int(nd[lost][0])
                raise UnseenLevelError(
                    f"level code {v[lost][0]:g} of action column {self.feature[k]} was not seen at node {k}")
            side[lost] = np.where(self.count[self.left[nd[lost]]] >= self.count[self.right[nd[lost]]], 0, 1)
        return side == 0

    def predict(self, z, unseen: str = "majority") -> np.ndarray:
        return self.value[self.apply(z, unseen)]

    def route(self, z, unseen: str = "majority") -> int:
        """Leaf index for a single action row."""
        return int(self.apply(np.asarray(z, dtype=float).reshape(1, -1), unseen)[0])

    def structure_weight(self, train_z, z, i: int, unseen: str = "majority") -> float:
        """Tree structure function: ``1/k`` if ``z`` shares the leaf of training
        row ``i`` and that leaf holds ``k`` training rows, else 0 (0/0 = 0)."""
        train_leaves = self.apply(train_z, unseen)
        leaf = self.route(z, unseen)
        if train_leaves[i] != leaf:
            return 0.0
        k = int(np.sum(train_leaves == leaf))
        return 1.0 / k if k else 0.0

    def structure_weights(self, train_z, z, unseen: str = "majority") -> np.ndarray:
        """Matrix of structure weights, rows indexing ``z`` and columns the training rows."""
        train_leaves = self.apply(train_z, unseen)
        leaves = self.apply(z, unseen)
        sizes = np.bincount(train_leaves, minlength=self.n_nodes).astype(float)
        same = leaves[:, None] == train_leaves[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(same, 1.0 / sizes[leaves][:, None], 0.0)
        return w

    def same_structure(self, other: "DecisionTree") -> bool:
        return (np.array_equal(self.feature, other.feature)
                and np.array_equal(self.threshold, other.threshold, equal_nan=True)
                and np.array_equal(self.left, other.left)
                and np.array_equal(self.right, other.right)
                and self.left_levels == other.left_levels
                and self.right_levels == other.right_levels)

    def to_nodes(self) -> list[dict]:
        nodes = []
        for k in range(self.n_nodes):
            if self.left[k] < 0:
                nodes.append({"leaf": True, "value": float(self.value[k]), "count": int(self.count[k])})
                continue
            node = {"leaf": False, "column": int(self.feature[k]), "left": int(self.left[k]),
                    "right": int(self.right[k]), "count": int(self.count[k]), "value": float(self.value[k])}
            if self._is_cat[k]:
                node["levels_left"] = sorted(self.left_levels[k])
                node["levels_right"] = sorted(self.right_levels[k])
            else:
                node["threshold"] = float(self.threshold[k])
            nodes.append(node)
        return nodes

    @classmethod
    def from_nodes(cls, nodes: Sequence[dict]) -> "DecisionTree":
        m = len(nodes)
        if m == 0:
            raise UsageError("a tree needs at least one node")
        feature = np.zeros(m, dtype=np.int64)
        threshold = np.full(m, np.nan)
        left = np.full(m, -1, dtype=np.int64)
        right = np.full(m, -1, dtype=np.int64)
        value = np.zeros(m)
        count = np.zeros(m, dtype=np.int64)
        ll, rl = {}, {}
        for k, nd in enumerate(nodes):
            value[k] = float(nd["value"])
            count[k] = int(nd["count"])
            if nd["leaf"]:
                continue
            feature[k] = int(nd["column"])
            left[k], right[k] = int(nd["left"]), int(nd["right"])
            if not (k < left[k] < m and k < right[k] < m):
                raise UsageError(f"node {k} has invalid child indices")
            if "threshold" in nd:
                threshold[k] = float(nd["threshold"])
            else:
                ll[k] = frozenset(nd["levels_left"])
                rl[k] = frozenset(nd["levels_right"])
        return cls(feature, threshold, left, right, value, count, ll, rl)


# --------------------------------------------------------------------------
# Building
# --------------------------------------------------------------------------


def presort(z) -> list[np.ndarray]:
    """Stable argsort of every action column, reusable across trees on the same rows."""
    z = np.asarray(z, dtype=float)
    return [np.argsort(z[:, c], kind="stable") for c in range(z.shape[1])]


class _Builder:
    def __init__(self, z, g, cfg: TreeConfig, categorical: Sequence[bool], rng):
        self.z = z
        self.g = g
        self.cfg = cfg
        self.categorical = list(categorical)
        self.rng = rng
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.count = [], []
        self.left_levels, self.right_levels = {}, {}

    def _new_node(self, rows):
        k = len(self.value)
        self.feature.append(0)
        self.threshold.append(np.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(np.mean(self.g[rows])))
        self.count.append(int(rows.size))
        return k

    def grow(self, rows, sorted_cols, depth, allow_split=True):
        k = self._new_node(rows)
        if not allow_split or depth >= self.cfg.max_depth or rows.size < 2 * self.cfg.min_leaf:
            return k
        if self.cfg.strategy == "random":
            split = self._random_split(rows, sorted_cols)
        else:
            split = self._best_split(rows, sorted_cols)
        if split is None:
            return k
        c = split.column
        col = self.z[:, c]
        mark = np.zeros(len(self.z), dtype=bool)
        if split.categorical:
            mark[rows] = np.isin(col[rows], list(split.left_levels))
            self.left_levels[k] = split.left_levels
            self.right_levels[k] = split.right_levels
        else:
            mark[rows] = col[rows] <= split.threshold
            self.threshold[k] = split.threshold
        self.feature[k] = c
        go = mark[rows]
        left_sorted = [None if s is None else s[mark[s]] for s in sorted_cols]
        right_sorted = [None if s is None else s[~mark[s]] for s in sorted_cols]
        self.left[k] = self.grow(rows[go], left_sorted, depth + 1)
        self.right[k] = self.grow(rows[~go], right_sorted, depth + 1)
        return k

    def _best_split(self, rows, sorted_cols):
        g = self.g
        if np.ptp(g[rows]) == 0.0:
            return None
        n = rows.size
        mu = float(np.mean(g[rows]))
        sst = float(np.sum((g[rows] - mu) ** 2))
        best_gain, best = _REL_GAIN_TOL * sst, None
        m = self.cfg.min_leaf
        for c in range(self.z.shape[1]):
            if self.categorical[c]:
                gain, split = self._scan_categorical(rows, c, mu, n)
            else:
                gain, split = self._scan_continuous(sorted_cols[c], c, mu, n, m)
            if split is not None and gain > best_gain:
                best_gain, best = gain, split
        return best

    def _scan_continuous(self, order, c, mu, n, m):
        v = self.z[order, c]
        if v[0] == v[-1]:
            return 0.0, None
        gc = self.g[order] - mu
        cs = np.cumsum(gc)[:-1]
        total = cs[-1] + gc[-1]
        kk = np.arange(1, n)
        valid = v[:-1] < v[1:]
        valid[: m - 1] = False
        valid[n - m:] = False
        if not valid.any():
            return 0.0, None
        sl = cs
        sr = total - sl
        gain = sl * sl / kk + sr * sr / (n - kk) - total * total / n
        gain = np.where(valid, gain, -np.inf)
        pos = int(np.argmax(gain))
        return float(gain[pos]), Split(c, threshold=_midpoint(float(v[pos]), float(v[pos + 1])))

    def _scan_categorical(self, rows, c, mu, n):
        codes = self.z[rows, c].astype(np.int64)
        width = int(codes.max()) + 1
        cnt_all = np.bincount(codes, minlength=width)
        present = np.flatnonzero(cnt_all)
        if present.size < 2:
            return 0.0, None
        gc = self.g[rows] - mu
        sums = np.bincount(codes, weights=gc, minlength=width)[present]
        cnt = cnt_all[present]
        order = np.lexsort((present, sums / cnt))
        csum = np.cumsum(sums[order])[:-1]
        ccnt = np.cumsum(cnt[order])[:-1]
        total = float(np.sum(sums))
        m = self.cfg.min_leaf
        valid = (ccnt >= m) & (n - ccnt >= m)
        if not valid.any():
            return 0.0, None
        gain = csum ** 2 / ccnt + (total - csum) ** 2 / (n - ccnt) - total * total / n
        gain = np.where(valid, gain, -np.inf)
        k = int(np.argmax(gain)) + 1
        lv = present[order]
        return float(gain[k - 1]), Split(c, left_levels=frozenset(map(int, lv[:k])),
                                         right_levels=frozenset(map(int, lv[k:])))

    def _random_split(self, rows, sorted_cols):
        m = self.cfg.min_leaf
        n = rows.size
        options = []
        for c in range(self.z.shape[1]):
            if self.categorical[c]:
                codes = self.z[rows, c].astype(np.int64)
                cnt_all = np.bincount(codes)
                present = np.flatnonzero(cnt_all)
                if present.size >= 2:
                    options.append((c, present, cnt_all[present]))
            else:
                v = self.z[sorted_cols[c], c]
                pos = np.flatnonzero(v[:-1] < v[1:])
                pos = pos[(pos + 1 >= m) & (n - pos - 1 >= m)]
                if pos.size:
                    options.append((c, v, pos))
        while options:
            i = int(self.rng.integers(len(options)))
            c, a, b = options[i]
            if not self.categorical[c]:
                p = int(b[int(self.rng.integers(b.size))])
                return Split(c, threshold=_midpoint(float(a[p]), float(a[p + 1])))
            split = self._random_level_split(c, a, b, n, m)
            if split is not None:
                return split
            options.pop(i)
        return None

    def _random_level_split(self, c, present, cnt, n, m):
        L = present.size
        if L <= _ENUMERATE_LEVELS:
            # partitions up to symmetry: the first present level always goes left
            valid = []
            for mask in range(1, 1 << (L - 1)):
                full = (mask << 1) | 1
                if full == (1 << L) - 1:
                    continue
                nl = sum(int(cnt[k]) for k in range(L) if full >> k & 1)
                if nl >= m and n - nl >= m:
                    valid.append(full)
            if not valid:
                return None
            full = valid[int(self.rng.integers(len(valid)))]
        else:
            for _ in range(256):
                bits = self.rng.integers(0, 2, size=L).astype(bool)
                bits[0] = True
                nl = int(cnt[bits].sum())
                if not bits.all() and nl >= m and n - nl >= m:
                    break
            else:
                return None
            full = sum(1 << k for k in np.flatnonzero(bits))
        left = frozenset(int(present[k]) for k in range(L) if full >> k & 1)
        return Split(c, left_levels=left, right_levels=frozenset(map(int, present)) - left)

    def tree(self) -> DecisionTree:
        return DecisionTree(self.feature, self.threshold, self.left, self.right, self.value,
                            self.count, self.left_levels, self.right_levels)


def fit_tree(z, g, cfg: TreeConfig | None = None, schema: ActionSchema | None = None, *,
             rng: np.random.Generator | None = None,
             sorted_cols: list[np.ndarray] | None = None) -> DecisionTree:
    """Fit one regression tree of targets ``g`` on action rows ``z``.

    ``rng`` drives subsampling and random splits; when omitted a generator is
    seeded from ``cfg.seed``.  ``sorted_cols`` may pass a precomputed
    :func:`presort` of ``z`` to skip sorting.
    """
    cfg = cfg or TreeConfig()
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    g = np.asarray(g, dtype=float).ravel()
    n = g.size
    if n == 0 or z.shape[0] != n:
        raise UsageError(f"fit_tree needs matching non-empty inputs, got z={z.shape} g={g.shape}")
    if not np.all(np.isfinite(g)):
        raise UsageError("targets must be finite")
    categorical = [schema.is_categorical(c) for c in range(z.shape[1])] if schema else [False] * z.shape[1]
    if schema is not None and len(schema) != z.shape[1]:
        raise UsageError("schema width does not match z")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if sorted_cols is None:
        sorted_cols = [None if categorical[c] else np.argsort(z[:, c], kind="stable")
                       for c in range(z.shape[1])]
    else:
        sorted_cols = [None if categorical[c] else s for c, s in enumerate(sorted_cols)]

    rows = np.arange(n)
    if cfg.strategy == "subsampled" and cfg.subsample < 1.0:
        size = max(1, math.ceil(cfg.subsample * n))
        rows = np.sort(rng.choice(n, size=size, replace=False))
        keep = np.zeros(n, dtype=bool)
        keep[rows] = True
        sorted_cols = [None if s is None else s[keep[s]] for s in sorted_cols]

    builder = _Builder(z, g, cfg, categorical, rng)
    # random trees ignore the targets except for this permutation-invariant check
    allow = not (cfg.strategy == "random" and np.ptp(g) == 0.0)
    builder.grow(rows, sorted_cols, 0, allow_split=allow)
    return builder.tree()
