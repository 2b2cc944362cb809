"""Random forest classifier with fully deterministic training.

Built from scratch so every contract is pinned: per-tree generators are
seeded from (seed, tree index), candidate thresholds are midpoints between
consecutive distinct sorted feature values, splits maximize Gini impurity
decrease with ties broken by lowest feature index then lowest threshold,
and the text serialization round-trips models bit for bit.

When the sampled feature subset offers no usable split the search widens
to the remaining features, so a node only becomes a leaf when it is pure,
hits a stopping rule, or has no distinguishing feature at all.  That
guarantees an unlimited-depth forest memorizes any consistently labeled
training set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # None: ceil(sqrt(n_features))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def resolve_features(self, n_features: int) -> int:
        m = self.features_per_split
        if m is None:
            m = math.ceil(math.sqrt(n_features))
        return max(1, min(m, n_features))


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "leaf_class")

    def __init__(self):
        self.feature = -1
        self.threshold = 0.0
        self.left: _Node | None = None
        self.right: _Node | None = None
        self.leaf_class = -1

    @property
    def is_leaf(self) -> bool:
        return self.leaf_class >= 0


def _majority(y: np.ndarray) -> int:
    pos = int(y.sum())
    neg = len(y) - pos
    return 1 if pos >= neg else 0  # tie goes to the positive class


def _best_split(X, y, rows, features, min_leaf):
    """Best (decrease, feature, threshold) over the given features, or None.

    Features are scanned in ascending index; within a feature candidates
    ascend by threshold, and only strictly greater decreases replace the
    incumbent, which realizes the documented tie-breaking.
    """
    n = rows.size
    ys = y[rows]
    pos_total = int(ys.sum())
    p = pos_total / n
    parent_gini = 1.0 - p * p - (1.0 - p) * (1.0 - p)
    best = None
    for f in features:
        col = X[rows, f]
        order = np.argsort(col, kind="stable")
        cs = col[order]
        boundary = np.nonzero(cs[1:] != cs[:-1])[0]
        if boundary.size == 0:
            continue
        nl = boundary + 1
        nr = n - nl
        thr = (cs[boundary] + cs[boundary + 1]) / 2.0
        # a midpoint that rounds onto the upper value would misclassify it
        valid = (nl >= min_leaf) & (nr >= min_leaf) & (thr < cs[boundary + 1])
        if not valid.any():
            continue
        pos = np.cumsum(ys[order])
        pl = pos[boundary]
        pr = pos_total - pl
        gini_l = 1.0 - (pl / nl) ** 2 - ((nl - pl) / nl) ** 2
        gini_r = 1.0 - (pr / nr) ** 2 - ((nr - pr) / nr) ** 2
        decrease = parent_gini - (nl * gini_l + nr * gini_r) / n
        decrease = np.where(valid, decrease, -np.inf)
        i = int(np.argmax(decrease))
        if best is None or decrease[i] > best[0]:
            best = (float(decrease[i]), int(f), float(thr[i]))
    return best


def _build_tree(X, y, rows, config: ForestConfig, rng) -> _Node:
    n_features = X.shape[1]
    m = config.resolve_features(n_features)
    root = _Node()
    # preorder traversal; the RNG is consumed in the same order
    stack = [(root, rows, 0)]
    while stack:
        node, node_rows, depth = stack.pop()
        ys = y[node_rows]
        pos = int(ys.sum())
        if (
            pos == 0
            or pos == len(ys)
            or (config.max_depth is not None and depth >= config.max_depth)
            or len(ys) < 2 * config.min_samples_leaf
        ):
            node.leaf_class = _majority(ys)
            continue
        if m < n_features:
            subset = np.sort(rng.choice(n_features, size=m, replace=False))
        else:
            subset = np.arange(n_features)
        best = _best_split(X, y, node_rows, subset, config.min_samples_leaf)
        if best is None and m < n_features:
            rest = np.setdiff1d(np.arange(n_features), subset)
            best = _best_split(X, y, node_rows, rest, config.min_samples_leaf)
        if best is None:
            node.leaf_class = _majority(ys)
            continue
        _, node.feature, node.threshold = best
        mask = X[node_rows, node.feature] <= node.threshold
        node.left = _Node()
        node.right = _Node()
        # push right first so the left subtree is processed next (preorder)
        stack.append((node.right, node_rows[~mask], depth + 1))
        stack.append((node.left, node_rows[mask], depth + 1))
    return root


@dataclass
class RFModel:
    trees: list[_Node]
    config: ForestConfig
    n_features: int

    def tree_votes(self, X: np.ndarray) -> np.ndarray:
        """Per-tree class votes for a batch, shape (n_trees, n_rows)."""
        X = np.asarray(X, dtype=np.float64)
        votes = np.empty((len(self.trees), len(X)), dtype=np.int64)
        for ti, tree in enumerate(self.trees):
            out = votes[ti]
            stack = [(tree, np.arange(len(X)))]
            while stack:
                node, idx = stack.pop()
                if node.is_leaf:
                    out[idx] = node.leaf_class
                else:
                    mask = X[idx, node.feature] <= node.threshold
                    stack.append((node.left, idx[mask]))
                    stack.append((node.right, idx[~mask]))
        return votes

    def predict_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(labels, scores) for a batch; score is the fraction of trees
        voting for the help class, label 1 when score >= 0.5."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"expected feature dimension {self.n_features}, "
                f"got {X.shape[1] if X.ndim == 2 else X.shape}"
            )
        scores = self.tree_votes(X).mean(axis=0)
        return (scores >= 0.5).astype(np.int64), scores

    def to_lines(self) -> list[str]:
        cfg = self.config
        depth = "none" if cfg.max_depth is None else str(cfg.max_depth)
        lines = [
            "format=needsense-rf version=1",
            f"n_trees={cfg.n_trees} max_depth={depth} "
            f"min_samples_leaf={cfg.min_samples_leaf} "
            f"features_per_split={cfg.resolve_features(self.n_features)} "
            f"bootstrap={int(cfg.bootstrap)} seed={cfg.seed} "
            f"n_features={self.n_features}",
        ]
        for ti, tree in enumerate(self.trees):
            lines.append(f"tree {ti}")
            node_id = 0
            stack = [tree]
            while stack:
                node = stack.pop()
                if node.is_leaf:
                    lines.append(f"leaf {node_id} class={node.leaf_class}")
                else:
                    lines.append(
                        f"node {node_id} feat={node.feature} "
                        f"thr={node.threshold!r}"
                    )
                    stack.append(node.right)
                    stack.append(node.left)
                node_id += 1
        return lines

    @classmethod
    def from_lines(cls, lines: list[str]) -> "RFModel":
        if not lines or lines[0].strip() != "format=needsense-rf version=1":
            raise ValueError("not a random forest model file")
        header = dict(p.split("=") for p in lines[1].split())
        depth = header["max_depth"]
        config = ForestConfig(
            n_trees=int(header["n_trees"]),
            max_depth=None if depth == "none" else int(depth),
            min_samples_leaf=int(header["min_samples_leaf"]),
            features_per_split=int(header["features_per_split"]),
            bootstrap=bool(int(header["bootstrap"])),
            seed=int(header["seed"]),
        )
        n_features = int(header["n_features"])
        trees: list[_Node] = []
        root: _Node | None = None
        stack: list[_Node] = []

        def finish_tree():
            if root is not None:
                if stack:
                    raise ValueError("truncated tree in model file")
                trees.append(root)

        for raw in lines[2:]:
            raw = raw.strip()
            if not raw:
                continue
            if raw.startswith("tree "):
                finish_tree()
                root = None
                stack = []
                continue
            node = _Node()
            parts = dict(p.split("=") for p in raw.split()[2:])
            if raw.startswith("leaf "):
                node.leaf_class = int(parts["class"])
            elif raw.startswith("node "):
                node.feature = int(parts["feat"])
                node.threshold = float(parts["thr"])
            else:
                raise ValueError(f"unrecognized model line: {raw}")
            if root is None:
                root = node
            else:
                if not stack:
                    raise ValueError("dangling node in model file")
                parent = stack[-1]
                if parent.left is None:
                    parent.left = node
                else:
                    parent.right = node
                    stack.pop()
            if not node.is_leaf:
                stack.append(node)
        finish_tree()
        if len(trees) != config.n_trees:
            raise ValueError(
                f"model file has {len(trees)} trees, header says {config.n_trees}"
            )
        return cls(trees=trees, config=config, n_features=n_features)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RFModel":
        return cls.from_lines(Path(path).read_text(encoding="utf-8").splitlines())


def fit_forest(X: np.ndarray, y: np.ndarray, config: ForestConfig) -> RFModel:
    """Train on raw arrays; rows are taken in the given (canonical) order."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D and aligned with y")
    if len(X) == 0:
        raise ValueError("cannot train on an empty matrix")
    classes = set(np.unique(y))
    if not classes <= {0, 1}:
        raise ValueError("labels must be 0 or 1")
    if len(classes) < 2:
        raise ValueError("training matrix must contain both classes")
    n = len(X)
    trees = []
    for ti in range(config.n_trees):
        rng = np.random.default_rng([config.seed, ti])
        if config.bootstrap:
            rows = rng.integers(0, n, size=n)
        else:
            rows = np.arange(n)
        trees.append(_build_tree(X, y, rows, config, rng))
    resolved = replace(
        config, features_per_split=config.resolve_features(X.shape[1])
    )
    return RFModel(trees=trees, config=resolved, n_features=X.shape[1])
