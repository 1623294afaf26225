"""Random Forest classifier built from scratch.

Gini-impurity decision trees over bootstrap resamples with per-node
feature subsampling, majority-vote prediction, and out-of-bag accuracy
as the internal validation signal.  Everything is deterministic given
the config seed: tree t draws from a generator seeded ``seed + t``, so
sequential and parallel growth produce identical forests.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

MODEL_MAGIC = "NSPRF 1"


class ModelFormatError(ValueError):
    """Raised for unreadable or version-mismatched model files."""


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: Optional[int] = None  # None = unlimited
    min_samples_split: int = 2
    features_per_split: Union[int, str] = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if isinstance(self.features_per_split, str) and self.features_per_split != "sqrt":
            raise ValueError(f"features_per_split must be an int or 'sqrt'")


# Tree nodes are nested tuples:
#   ("L", counts)                  counts: per-class training counts at the leaf
#   ("S", feature, threshold, left, right)   go left when x[feature] <= threshold
Leaf = tuple
Split = tuple


@dataclass
class ForestModel:
    trees: list
    classes: list
    config: ForestConfig
    n_features: int
    oob_score: Optional[float]

    def class_index(self, label) -> int:
        return self.classes.index(label)


def _resolve_features_per_split(spec, n_features):
    if spec == "sqrt":
        return max(1, int(math.floor(math.sqrt(n_features))))
    m = int(spec)
    if not 1 <= m <= n_features:
        raise ValueError(f"features_per_split={m} outside [1, {n_features}]")
    return m


def _best_split_for_feature(values, y_onehot):
    """Best midpoint threshold on one feature.

    Returns (score, threshold) where score = sum_l^2/n_l + sum_r^2/n_r is
    the quantity maximised by minimum weighted Gini impurity, or None when
    the feature is constant.  Ties on score take the lowest threshold.
    """
    order = np.argsort(values, kind="stable")
    vs = values[order]
    boundaries = np.nonzero(vs[1:] != vs[:-1])[0]
    if boundaries.size == 0:
        return None
    cum = np.cumsum(y_onehot[order], axis=0)
    total = cum[-1]
    n = values.shape[0]
    left = cum[boundaries]
    right = total - left
    nl = (boundaries + 1).astype(np.float64)
    nr = n - nl
    score = (left * left).sum(axis=1) / nl + (right * right).sum(axis=1) / nr
    best = int(np.argmax(score))  # first occurrence = lowest threshold
    b = boundaries[best]
    thr = (vs[b] + vs[b + 1]) / 2.0
    return float(score[best]), float(thr)


def _grow_tree(x, y, n_classes, cfg, rng):
    """Grow one tree over (x, y) with an explicit stack (no recursion cap)."""
    m = _resolve_features_per_split(cfg.features_per_split, x.shape[1])
    y_onehot = np.zeros((y.shape[0], n_classes), dtype=np.float64)
    y_onehot[np.arange(y.shape[0]), y] = 1.0

    def leaf(idx):
        return ("L", tuple(int(c) for c in np.bincount(y[idx], minlength=n_classes)))

    def build(idx, depth):
        if (
            idx.shape[0] < cfg.min_samples_split
            or (cfg.max_depth is not None and depth >= cfg.max_depth)
            or np.unique(y[idx]).shape[0] == 1
        ):
            return leaf(idx)
        # Draw a fresh feature order per node; scan past the first m
        # candidates only if none of them admits a valid split, so nodes
        # with any splittable feature always split (keeps consistent data
        # perfectly fittable at unlimited depth).
        perm = rng.permutation(x.shape[1])
        best = None
        scanned = 0
        for f in perm:
            scanned += 1
            res = _best_split_for_feature(x[idx, f], y_onehot[idx])
            if res is not None:
                score, thr = res
                if best is None or score > best[0] or (
                    score == best[0] and (f < best[1] or (f == best[1] and thr < best[2]))
                ):
                    best = (score, int(f), thr)
            if scanned >= m and best is not None:
                break
        if best is None:
            return leaf(idx)
        _, feat, thr = best
        go_left = x[idx, feat] <= thr
        left_idx = idx[go_left]
        right_idx = idx[~go_left]
        return ("S", feat, thr, build(left_idx, depth + 1), build(right_idx, depth + 1))

    # midpoint splits rarely chain deep, but raise the limit so pathological
    # single-sample peels cannot hit the interpreter cap
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 10000))
    try:
        return build(np.arange(x.shape[0]), 0)
    finally:
        sys.setrecursionlimit(old)


def _tree_leaf(tree, row):
    node = tree
    while node[0] == "S":
        node = node[3] if row[node[1]] <= node[2] else node[4]
    return node[1]


def fit(x, y_labels, cfg: ForestConfig, classes=None) -> ForestModel:
    """Train a forest on feature matrix ``x`` and label sequence ``y_labels``.

    ``classes`` fixes the ordered label list (ties in votes resolve to the
    lowest index); defaults to sorted unique labels.  With bootstrap on,
    the out-of-bag accuracy is computed from trees that never saw each
    sample.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"x must be a non-empty 2D matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("x contains non-finite values")
    y_labels = list(y_labels)
    if len(y_labels) != x.shape[0]:
        raise ValueError(f"{x.shape[0]} rows but {len(y_labels)} labels")
    if classes is None:
        classes = sorted(set(y_labels))
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}
    try:
        y = np.asarray([index[lbl] for lbl in y_labels], dtype=np.intp)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} not in classes {classes}") from None

    n = x.shape[0]
    _resolve_features_per_split(cfg.features_per_split, x.shape[1])
    trees = []
    oob_votes = np.zeros((n, len(classes)), dtype=np.int64)
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(cfg.seed + t)
        if cfg.bootstrap:
            sample = rng.integers(0, n, size=n)
        else:
            sample = np.arange(n)
        tree = _grow_tree(x[sample], y[sample], len(classes), cfg, rng)
        trees.append(tree)
        if cfg.bootstrap:
            in_bag = np.zeros(n, dtype=bool)
            in_bag[sample] = True
            for i in np.nonzero(~in_bag)[0]:
                counts = _tree_leaf(tree, x[i])
                oob_votes[i, int(np.argmax(counts))] += 1

    oob_score = None
    if cfg.bootstrap:
        covered = oob_votes.sum(axis=1) > 0
        if covered.any():
            pred = np.argmax(oob_votes[covered], axis=1)
            oob_score = float(np.mean(pred == y[covered]))
    return ForestModel(
        trees=trees, classes=classes, config=cfg, n_features=x.shape[1], oob_score=oob_score
    )


def _check_row(model, x_row):
    row = np.asarray(x_row, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] != model.n_features:
        raise ValueError(f"expected feature vector of length {model.n_features}, got {row.shape}")
    return row


def predict(model: ForestModel, x_row):
    """Majority vote over the trees; ties go to the lowest class index."""
    row = _check_row(model, x_row)
    votes = np.zeros(len(model.classes), dtype=np.int64)
    for tree in model.trees:
        votes[int(np.argmax(_tree_leaf(tree, row)))] += 1
    return model.classes[int(np.argmax(votes))]


def predict_proba(model: ForestModel, x_row):
    """Average the per-tree leaf class frequencies; sums to 1."""
    row = _check_row(model, x_row)
    acc = np.zeros(len(model.classes), dtype=np.float64)
    for tree in model.trees:
        counts = np.asarray(_tree_leaf(tree, row), dtype=np.float64)
        acc += counts / counts.sum()
    return acc / len(model.trees)


def predict_many(model: ForestModel, x):
    return [predict(model, row) for row in np.asarray(x, dtype=np.float64)]


def _tree_to_sexpr(node):
    if node[0] == "L":
        return "(L " + " ".join(str(c) for c in node[1]) + ")"
    return (
        f"(S {node[1]} {float(node[2]).hex()} "
        + _tree_to_sexpr(node[3])
        + " "
        + _tree_to_sexpr(node[4])
        + ")"
    )


def serialize(model: ForestModel, path) -> None:
    """Write the versioned textual model format (bit-exact round trip)."""
    cfg = model.config
    lines = [
        MODEL_MAGIC,
        "classes " + " ".join(str(c) for c in model.classes),
        (
            f"config n_trees={cfg.n_trees} max_depth={cfg.max_depth} "
            f"min_samples_split={cfg.min_samples_split} "
            f"features_per_split={cfg.features_per_split} "
            f"bootstrap={cfg.bootstrap} seed={cfg.seed}"
        ),
        f"n_features {model.n_features}",
        "oob " + (float(model.oob_score).hex() if model.oob_score is not None else "none"),
    ]
    lines.extend("tree " + _tree_to_sexpr(t) for t in model.trees)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _tokenize_sexpr(text):
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _parse_tree(tokens, pos):
    if tokens[pos] != "(":
        raise ModelFormatError("malformed tree expression")
    pos += 1
    kind = tokens[pos]
    pos += 1
    if kind == "L":
        counts = []
        while tokens[pos] != ")":
            counts.append(int(tokens[pos]))
            pos += 1
        return ("L", tuple(counts)), pos + 1
    if kind == "S":
        feat = int(tokens[pos])
        thr = float.fromhex(tokens[pos + 1])
        left, pos = _parse_tree(tokens, pos + 2)
        right, pos = _parse_tree(tokens, pos)
        if tokens[pos] != ")":
            raise ModelFormatError("unterminated split expression")
        return ("S", feat, thr, left, right), pos + 1
    raise ModelFormatError(f"unknown tree node kind {kind!r}")


def deserialize(path) -> ForestModel:
    """Load a model written by :func:`serialize`."""
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: expected magic {MODEL_MAGIC!r}")
    try:
        classes = lines[1].split()[1:]
        cfg_fields = dict(kv.split("=", 1) for kv in lines[2].split()[1:])
        n_features = int(lines[3].split()[1])
        oob_text = lines[4].split()[1]
    except (IndexError, ValueError):
        raise ModelFormatError(f"{path}: truncated or malformed header") from None
    fps = cfg_fields["features_per_split"]
    cfg = ForestConfig(
        n_trees=int(cfg_fields["n_trees"]),
        max_depth=None if cfg_fields["max_depth"] == "None" else int(cfg_fields["max_depth"]),
        min_samples_split=int(cfg_fields["min_samples_split"]),
        features_per_split=fps if fps == "sqrt" else int(fps),
        bootstrap=cfg_fields["bootstrap"] == "True",
        seed=int(cfg_fields["seed"]),
    )
    trees = []
    for lineno, line in enumerate(lines[5:], start=6):
        if not line.strip():
            continue
        if not line.startswith("tree "):
            raise ModelFormatError(f"{path}: line {lineno}: expected a tree record")
        try:
            tree, pos = _parse_tree(_tokenize_sexpr(line[5:]), 0)
        except (IndexError, ValueError) as exc:
            raise ModelFormatError(f"{path}: line {lineno}: {exc}") from None
        trees.append(tree)
    if len(trees) != cfg.n_trees:
        raise ModelFormatError(f"{path}: expected {cfg.n_trees} trees, found {len(trees)}")
    return ForestModel(
        trees=trees,
        classes=classes,
        config=cfg,
        n_features=n_features,
        oob_score=None if oob_text == "none" else float.fromhex(oob_text),
    )
