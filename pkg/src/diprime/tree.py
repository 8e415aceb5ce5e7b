"""Recursive DiPriMe tree construction, leaf privatisation and prediction."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mechanisms import BudgetLedger, PrivacyBudget, PrivacyError, Variant, sample_laplace
from .splits import (
    CategoricalSchema,
    CategoricalSplit,
    NumericSchema,
    NumericSplit,
    private_categorical_split,
    private_median_split,
    select_attribute,
    split_utility_score,
)


@dataclass(frozen=True)
class TreeConfig:
    d_max: int
    K: int = 1
    variant: Variant = Variant.RANDOM_ATTR
    B: float = 1.0
    budget: PrivacyBudget | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if int(self.d_max) != self.d_max or self.d_max < 1:
            raise PrivacyError(f"d_max must be a positive integer, got {self.d_max}")
        if int(self.K) != self.K or self.K < 1:
            raise PrivacyError(f"K must be a positive integer, got {self.K}")
        if not self.B > 0:
            raise PrivacyError(f"B must be positive, got {self.B}")
        if self.budget is not None and self.budget.d_max != self.d_max:
            raise PrivacyError("budget d_max differs from tree d_max")

    @classmethod
    def private(cls, epsilon, rho, d_max, K=1, variant=Variant.RANDOM_ATTR, B=1.0):
        budget = PrivacyBudget(epsilon, rho, d_max, variant)
        return cls(d_max, K, variant, B, budget)

    def to_dict(self):
        return {"d_max": self.d_max, "K": self.K, "variant": self.variant.value, "B": self.B,
                "budget": None if self.budget is None else self.budget.to_dict()}


@dataclass
class Leaf:
    depth: int
    mean: float | None = None
    counts: np.ndarray | None = None


@dataclass
class Internal:
    depth: int
    split: NumericSplit | CategoricalSplit
    left: "Leaf | Internal"
    right: "Leaf | Internal"

    @property
    def attribute(self):
        return self.split.attribute


# Leaf statistics ---------------------------------------------------------------

def privatize_leaf_regression(total, count, B, epsilon_leaf, rng):
    """Noisy leaf mean, clamped to [-B, B]; empty leaves report 0."""
    if not epsilon_leaf > 0:
        raise PrivacyError(f"epsilon_leaf must be > 0, got {epsilon_leaf}")
    if count == 0:
        return 0.0
    mean = total / count
    if math.isinf(epsilon_leaf):
        return float(np.clip(mean, -B, B))
    noisy = mean + sample_laplace(2.0 * B / (count * epsilon_leaf), rng)
    return float(np.clip(noisy, -B, B))


def privatize_leaf_classification(counts, epsilon_leaf, rng):
    """Per-class Laplace(1/eps) noise, clamped at 0."""
    if not epsilon_leaf > 0:
        raise PrivacyError(f"epsilon_leaf must be > 0, got {epsilon_leaf}")
    counts = np.asarray(counts, dtype=float)
    if math.isinf(epsilon_leaf):
        return counts.copy()
    return np.maximum(counts + sample_laplace(1.0 / epsilon_leaf, rng, size=counts.shape), 0.0)


# Growth ------------------------------------------------------------------------

@dataclass
class _Context:
    X: np.ndarray
    y: np.ndarray
    task: str
    n_classes: int
    config: TreeConfig
    rng: np.random.Generator
    ledger: BudgetLedger | None
    choose: object
    epsilon_leaf: float
    schemas_numeric: list
    levels_used: set = field(default_factory=set)


def initial_ranges(schemas):
    out = {}
    for a, s in enumerate(schemas):
        if isinstance(s, NumericSchema):
            out[a] = (s.lo, s.hi)
        else:
            out[a] = tuple(range(len(s.categories)))
    return out


def _child_ranges(ranges, attrs, split):
    a = split.attribute
    left, right = dict(ranges), dict(ranges)
    if isinstance(split, NumericSplit):
        lo, hi = ranges[a]
        left[a] = (lo, split.threshold)
        right[a] = (split.threshold, hi)
        return left, right, list(attrs), list(attrs)
    left[a] = tuple(sorted(split.left))
    right[a] = tuple(sorted(split.right))
    attrs_l = [b for b in attrs if b != a or len(left[a]) > 1]
    attrs_r = [b for b in attrs if b != a or len(right[a]) > 1]
    return left, right, attrs_l, attrs_r


def _make_leaf(ctx, idx, depth, path):
    if ctx.ledger is not None:
        ctx.ledger.spend_parallel("leaves", path or "root", ctx.epsilon_leaf)
    y = ctx.y[idx]
    if ctx.task == "regression":
        return Leaf(depth, mean=privatize_leaf_regression(float(y.sum()), len(y), ctx.config.B,
                                                         ctx.epsilon_leaf, ctx.rng))
    counts = np.bincount(y, minlength=ctx.n_classes)
    return Leaf(depth, counts=privatize_leaf_classification(counts, ctx.epsilon_leaf, ctx.rng))


def _grow(ctx, idx, depth, ranges, attrs, path):
    if depth >= ctx.config.d_max or not attrs:
        return _make_leaf(ctx, idx, depth, path)
    split = ctx.choose(ctx, idx, ranges, attrs, depth)
    if ctx.ledger is not None:
        ctx.ledger.spend_parallel(f"depth {depth}", path or "root", _level_epsilon(ctx))
    ctx.levels_used.add(depth)
    mask = split.goes_left(ctx.X[idx, split.attribute])
    rl, rr, al, ar = _child_ranges(ranges, attrs, split)
    left = _grow(ctx, idx[mask], depth + 1, rl, al, path + "L")
    right = _grow(ctx, idx[~mask], depth + 1, rr, ar, path + "R")
    return Internal(depth, split, left, right)


def _level_epsilon(ctx):
    b = ctx.config.budget
    return 0.0 if b is None else b.epsilon_level


def grow_tree(data, config, rng, choose, epsilon_leaf, ledger=None):
    """Shared recursion used by DiPriMe and every baseline learner.

    ``choose(ctx, idx, ranges, attrs, depth)`` returns the split for a node.
    Every level up to ``d_max`` is charged to the ledger even if no node
    reaches it, so the total never depends on the data.
    """
    numeric = [isinstance(s, NumericSchema) for s in data.schemas]
    ctx = _Context(data.X, data.y, data.task, data.n_classes, config, rng, ledger, choose,
                   epsilon_leaf, numeric)
    ranges = initial_ranges(data.schemas)
    attrs = [a for a in range(data.n_features) if _can_split(data.schemas[a])]
    if data.n == 0:
        root = _make_leaf(ctx, np.arange(0), 0, "")
    else:
        root = _grow(ctx, np.arange(data.n), 0, ranges, attrs, "")
    if ledger is not None:
        for depth in range(config.d_max):
            if depth not in ctx.levels_used:
                ledger.spend_parallel(f"depth {depth}", "unused", _level_epsilon(ctx))
    return root


def _can_split(schema):
    return isinstance(schema, NumericSchema) or len(schema.categories) >= 2


def _category_counts(column, cats):
    counts = np.bincount(column.astype(int), minlength=max(cats) + 1) if column.size else None
    return {c: (int(counts[c]) if counts is not None else 0) for c in cats}


def split_score(ctx, idx, split):
    if len(idx) == 0:
        return 0.0
    y = ctx.y[idx]
    mask = split.goes_left(ctx.X[idx, split.attribute])
    return split_utility_score(y[mask], y[~mask], ctx.task, ctx.config.B)[0]


def choose_private(ctx, idx, ranges, attrs, depth):
    """Private median candidates on K sampled attributes, then a private pick."""
    cfg = ctx.config
    budget = cfg.budget
    eps_s = budget.epsilon_split
    eps_a = budget.epsilon_attr
    variant = cfg.variant
    rng = ctx.rng
    sampled = rng.choice(np.asarray(attrs), size=min(cfg.K, len(attrs)), replace=False)
    if variant in (Variant.RANDOM_ATTR, Variant.LEAVES_ONLY):
        # Candidates are drawn independently, so drawing only the chosen
        # attribute's split yields the same output distribution.
        a = int(sampled[int(rng.integers(len(sampled)))])
        return _private_split(ctx, idx, ranges, a, eps_s, variant)
    cands = []
    for a in sampled:
        s = _private_split(ctx, idx, ranges, int(a), eps_s, variant)
        cands.append((int(a), s, split_score(ctx, idx, s)))
    j = select_attribute(cands, eps_a, variant, len(idx), cfg.B, rng, ctx.task)
    return cands[j][1]


def _private_split(ctx, idx, ranges, a, eps_s, variant):
    column = ctx.X[idx, a]
    if ctx.schemas_numeric[a]:
        return private_median_split(column, ranges[a], eps_s, variant, ctx.rng, attribute=a, allow_empty=True)
    return private_categorical_split(_category_counts(column, ranges[a]), eps_s, variant, ctx.rng, attribute=a)


def fit_tree(data, config, rng, ledger=None):
    """Fit one DiPriMe tree (any variant, including the leaves-only DP-ERT split).

    Returns the root node. Spending is recorded in ``ledger`` when given.
    """
    if config.budget is None:
        raise PrivacyError("fit_tree needs a privacy budget; use the baselines for non-private trees")
    if data.task == "regression" and data.y.size and np.max(np.abs(data.y)) > config.B * (1 + 1e-12):
        raise PrivacyError("targets exceed the configured bound B")
    return grow_tree(data, config, rng, choose_private, config.budget.epsilon_leaf, ledger)


# Prediction ------------------------------------------------------------------------

def _route(node, X, rows, out_leaf):
    if isinstance(node, Leaf):
        for r in rows:
            out_leaf[r] = node
        return
    mask = node.split.goes_left(X[rows, node.split.attribute])
    _route(node.left, X, rows[mask], out_leaf)
    _route(node.right, X, rows[~mask], out_leaf)


def leaves_for(node, X):
    """Leaf reached by each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = [None] * X.shape[0]
    _route(node, X, np.arange(X.shape[0]), out)
    return out


def leaf_prediction(leaf, task, rng):
    if task == "regression":
        return leaf.mean
    c = leaf.counts
    best = np.flatnonzero(c == c.max())
    return int(best[0]) if best.size == 1 else int(rng.choice(best))


def predict(node, X, task, rng=None, schemas=None):
    """Predict one row (1-D ``X``) or many rows (2-D ``X``).

    Classification ties between noisy counts are broken uniformly at random.
    """
    from .data import check_in_schema

    single = np.ndim(X) == 1
    X2 = np.atleast_2d(np.asarray(X, dtype=float))
    if schemas is not None:
        check_in_schema(X2, schemas)
    rng = np.random.default_rng() if rng is None else rng
    preds = [leaf_prediction(leaf, task, rng) for leaf in leaves_for(node, X2)]
    out = np.array(preds, dtype=float if task == "regression" else int)
    return out[0] if single else out


# Inspection and serialisation ---------------------------------------------------------

def iter_nodes(node):
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        if isinstance(n, Internal):
            stack.append(n.right)
            stack.append(n.left)


def partition_structure(node, X):
    """How a tree carves up the rows of ``X``, ignoring attributes and side.

    Leaves become frozensets of row indices and splits become the frozenset
    of their two children. Trees that split the data identically compare
    equal even when thresholds differ within a gap, or when tied attributes
    produce the same partition with left and right exchanged.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))

    def walk(n, rows):
        if isinstance(n, Leaf):
            return frozenset(rows.tolist())
        mask = n.split.goes_left(X[rows, n.split.attribute])
        return frozenset((walk(n.left, rows[mask]), walk(n.right, rows[~mask])))

    return walk(node, np.arange(X.shape[0]))


def leaf_statistics(node, X):
    """Map each nonempty leaf's row set to its stored mean or counts."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    groups = {}
    for r, leaf in enumerate(leaves_for(node, X)):
        groups.setdefault(id(leaf), (leaf, []))[1].append(r)
    return {frozenset(rows): (leaf.mean if leaf.mean is not None else leaf.counts)
            for leaf, rows in groups.values()}


def depth_of(node):
    if isinstance(node, Leaf):
        return 0
    return 1 + max(depth_of(node.left), depth_of(node.right))


def node_to_dict(node):
    if isinstance(node, Leaf):
        d = {"kind": "leaf", "depth": node.depth}
        if node.mean is not None:
            d["mean"] = node.mean
        if node.counts is not None:
            d["counts"] = [float(c) for c in node.counts]
        return d
    d = {"kind": "split", "depth": node.depth, "attribute": node.split.attribute}
    if isinstance(node.split, NumericSplit):
        d["threshold"] = node.split.threshold
    else:
        d["left_categories"] = sorted(int(c) for c in node.split.left)
        d["right_categories"] = sorted(int(c) for c in node.split.right)
    d["left"] = node_to_dict(node.left)
    d["right"] = node_to_dict(node.right)
    return d


def node_from_dict(d):
    if d["kind"] == "leaf":
        counts = d.get("counts")
        return Leaf(d["depth"], mean=d.get("mean"),
                    counts=None if counts is None else np.asarray(counts, dtype=float))
    if "threshold" in d:
        split = NumericSplit(d["attribute"], float(d["threshold"]))
    else:
        split = CategoricalSplit(d["attribute"], frozenset(d["left_categories"]), frozenset(d["right_categories"]))
    return Internal(d["depth"], split, node_from_dict(d["left"]), node_from_dict(d["right"]))
