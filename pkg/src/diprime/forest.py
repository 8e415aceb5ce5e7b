"""Ensembles over disjoint data blocks, aggregation, metrics and diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .baselines import dp_ert_config, fit_dp_ert_tree, fit_greedy_tree, fit_nonprivate_median_tree
from .mechanisms import BudgetLedger, PrivacyBudget, PrivacyError, Variant
from .splits import CategoricalSchema, NumericSchema
from .tree import (
    Internal,
    Leaf,
    TreeConfig,
    fit_tree,
    leaf_prediction,
    leaves_for,
    node_from_dict,
    node_to_dict,
)

PRIVATE_LEARNERS = {
    "diprime": Variant.RANDOM_ATTR,
    "diprime-exp": Variant.EXP,
    "diprime-flip": Variant.FLIP,
    "dp-ert": Variant.LEAVES_ONLY,
}
NONPRIVATE_LEARNERS = ("median", "greedy")
LEARNERS = tuple(PRIVATE_LEARNERS) + NONPRIVATE_LEARNERS


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int
    tree: TreeConfig
    partition: bool = True
    learner: str = "diprime"

    def __post_init__(self):
        if int(self.n_trees) != self.n_trees or self.n_trees < 1:
            raise PrivacyError(f"n_trees must be a positive integer, got {self.n_trees}")
        if self.learner not in LEARNERS:
            raise PrivacyError(f"unknown learner {self.learner!r}; choose from {', '.join(LEARNERS)}")
        if self.learner in PRIVATE_LEARNERS and self.tree.budget is None:
            raise PrivacyError(f"{self.learner} needs a privacy budget")

    @classmethod
    def build(cls, learner, *, d_max, n_trees=10, K=1, epsilon=None, rho=0.5, partition=True, B=1.0):
        if learner in PRIVATE_LEARNERS:
            if epsilon is None:
                raise PrivacyError(f"{learner} needs epsilon")
            if learner == "dp-ert":
                tree = dp_ert_config(epsilon, d_max, B)
            else:
                tree = TreeConfig.private(epsilon, rho, d_max, K, PRIVATE_LEARNERS[learner], B)
        elif learner in NONPRIVATE_LEARNERS:
            tree = TreeConfig(d_max, K, Variant.RANDOM_ATTR, B, None)
        else:
            raise PrivacyError(f"unknown learner {learner!r}; choose from {', '.join(LEARNERS)}")
        return cls(n_trees, tree, partition, learner)

    @property
    def private(self):
        return self.learner in PRIVATE_LEARNERS

    def tree_epsilon(self):
        """Privacy cost of one tree: every level's split budget plus the leaves."""
        b = self.tree.budget
        if b is None:
            return 0.0
        return math.fsum([b.epsilon_level] * b.d_max + [b.epsilon_leaf])

    def expected_epsilon(self):
        per_tree = self.tree_epsilon()
        return per_tree if self.partition else math.fsum([per_tree] * self.n_trees)

    def to_dict(self):
        return {"learner": self.learner, "n_trees": self.n_trees, "partition": self.partition,
                "tree": self.tree.to_dict()}

    @classmethod
    def from_dict(cls, d):
        t = d["tree"]
        b = t.get("budget")
        budget = None if b is None else PrivacyBudget(b["epsilon_total"], b["rho"], b["d_max"], b["variant"])
        tree = TreeConfig(t["d_max"], t["K"], t["variant"], t["B"], budget)
        return cls(d["n_trees"], tree, d["partition"], d["learner"])


@dataclass
class Forest:
    trees: list
    config: ForestConfig
    task: str
    schemas: tuple
    classes: tuple = ()
    ledger: BudgetLedger = field(default_factory=BudgetLedger)
    tree_ledgers: list = field(default_factory=list)
    seed: int | None = None
    target_scaling: tuple | None = None

    @property
    def learner(self):
        return self.config.learner

    def predict(self, X, rng=None):
        return predict_forest(self, X, rng)

    def to_dict(self):
        return {
            "format": "diprime-forest",
            "version": __version__,
            "learner": self.learner,
            "task": self.task,
            "config": self.config.to_dict(),
            "schemas": [s.to_dict() for s in self.schemas],
            "classes": list(self.classes),
            "seed": self.seed,
            "target_scaling": None if self.target_scaling is None else list(self.target_scaling),
            "ledger": {"total": self.ledger.total(), "entries": self.ledger.to_records()},
            "trees": [node_to_dict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "diprime-forest":
            raise ValueError("not a serialised forest")
        schemas = []
        for s in d["schemas"]:
            if s["kind"] == "numeric":
                schemas.append(NumericSchema(*s["range"], name=s.get("name", "")))
            else:
                schemas.append(CategoricalSchema(tuple(s["categories"]), s.get("name", "")))
        ledger = BudgetLedger()
        for e in d["ledger"]["entries"]:
            if e["kind"] == "sequential":
                ledger.spend(e["label"], e["epsilon"])
            else:
                ledger.spend_parallel(e["group"], e["label"], e["epsilon"])
        ts = d.get("target_scaling")
        return cls([node_from_dict(t) for t in d["trees"]], ForestConfig.from_dict(d["config"]), d["task"],
                   tuple(schemas), tuple(d["classes"]), ledger, [], d.get("seed"),
                   None if ts is None else tuple(ts))


def _seed_sequence(seed):
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2 ** 63))
    return np.random.SeedSequence(seed), seed


def partition_indices(n, n_trees, rng):
    """Random disjoint blocks whose sizes differ by at most one."""
    if n < n_trees:
        raise PrivacyError(f"cannot partition {n} records into {n_trees} blocks")
    return [np.sort(b) for b in np.array_split(rng.permutation(n), n_trees)]


def _fit_one(data, config, rng, ledger):
    learner = config.learner
    if learner == "dp-ert":
        return fit_dp_ert_tree(data, config.tree, rng, ledger)
    if learner in PRIVATE_LEARNERS:
        return fit_tree(data, config.tree, rng, ledger)
    if learner == "median":
        return fit_nonprivate_median_tree(data, config.tree, rng)
    return fit_greedy_tree(data, config.tree, rng)


def fit_forest(data, config, seed=None):
    """Fit ``config.n_trees`` trees, one per disjoint block when partitioning.

    Each tree draws from its own generator spawned from ``seed`` by tree
    index, so a fixed seed reproduces the forest exactly.
    """
    ss, seed_value = _seed_sequence(seed)
    part_ss, *tree_ss = ss.spawn(config.n_trees + 1)
    if config.partition:
        blocks = partition_indices(data.n, config.n_trees, np.random.default_rng(part_ss))
    else:
        blocks = [np.arange(data.n)] * config.n_trees
    trees, ledgers = [], []
    forest_ledger = BudgetLedger()
    for i, (block, s) in enumerate(zip(blocks, tree_ss)):
        ledger = BudgetLedger()
        trees.append(_fit_one(data.subset(block), config, np.random.default_rng(s), ledger))
        ledgers.append(ledger)
        if config.partition:
            forest_ledger.spend_parallel("trees", f"tree {i}", ledger.total())
        else:
            forest_ledger.spend(f"tree {i}", ledger.total())
    forest = Forest(trees, config, data.task, data.schemas, data.classes, forest_ledger, ledgers,
                    seed_value if isinstance(seed_value, (int, np.integer)) else None,
                    None if data.target_scaling is None else (data.target_scaling.lo, data.target_scaling.hi))
    expected = config.expected_epsilon()
    if abs(forest_ledger.total() - expected) > 1e-12 * max(1.0, expected):
        raise RuntimeError(f"ledger total {forest_ledger.total()} != budget {expected}")
    return forest


def _tree_predictions(tree, X, task, rng):
    leaves = leaves_for(tree, X)
    if task == "regression":
        return np.array([leaf.mean for leaf in leaves], dtype=float)
    return np.array([leaf_prediction(leaf, task, rng) for leaf in leaves], dtype=int)


def predict_forest(forest, X, rng=None):
    """Mean of tree predictions (regression) or plurality vote (classification).

    Vote ties are broken uniformly at random.
    """
    from .data import check_in_schema

    single = np.ndim(X) == 1
    X2 = np.atleast_2d(np.asarray(X, dtype=float))
    check_in_schema(X2, forest.schemas)
    rng = np.random.default_rng() if rng is None else rng
    preds = np.stack([_tree_predictions(t, X2, forest.task, rng) for t in forest.trees])
    if forest.task == "regression":
        out = preds.mean(axis=0)
    else:
        k = max(len(forest.classes), int(preds.max()) + 1)
        votes = np.zeros((X2.shape[0], k))
        for row in preds:
            votes[np.arange(X2.shape[0]), row] += 1
        out = np.empty(X2.shape[0], dtype=int)
        for i, v in enumerate(votes):
            best = np.flatnonzero(v == v.max())
            out[i] = best[0] if best.size == 1 else rng.choice(best)
    return out[0] if single else out


def score(task, y_true, y_pred):
    """``("mse", value)`` for regression, ``("accuracy", value)`` otherwise."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if task == "regression":
        return "mse", float(np.mean((y_true.astype(float) - y_pred) ** 2))
    return "accuracy", float(np.mean(y_true == y_pred))


def evaluate(forest, test_data, rng=None):
    metric, value = score(forest.task, test_data.y, predict_forest(forest, test_data.X, rng))
    return {"learner": forest.learner, "metric": metric, "value": value, "n": int(test_data.n),
            "seed": forest.seed}


# Diagnostics -----------------------------------------------------------------------

def _walk(node, X, rows, path, out_leaf, out_split, tree_id, total):
    if isinstance(node, Leaf):
        out_leaf.append({"tree": tree_id, "node": path or "root", "depth": node.depth, "n": int(rows.size),
                         "fraction": rows.size / total if total else 0.0})
        return
    mask = node.split.goes_left(X[rows, node.split.attribute])
    n_left = int(mask.sum())
    out_split.append({"tree": tree_id, "node": path or "root", "depth": node.depth,
                      "attribute": node.split.attribute, "n": int(rows.size),
                      "left_fraction": n_left / rows.size if rows.size else float("nan")})
    _walk(node.left, X, rows[mask], path + "L", out_leaf, out_split, tree_id, total)
    _walk(node.right, X, rows[~mask], path + "R", out_leaf, out_split, tree_id, total)


def diagnostics(forest, train_data):
    """Occupancy of every leaf and left-child fraction of every split.

    The whole training set is routed through each tree.
    """
    leaves, splits = [], []
    for i, tree in enumerate(forest.trees):
        _walk(tree, train_data.X, np.arange(train_data.n), "", leaves, splits, i, train_data.n)
    return {"leaf_occupancy": leaves, "left_fraction": splits}


def histogram(values, bins):
    """Histogram records ``{bin_lo, bin_hi, count, fraction}`` ignoring NaNs."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    counts, edges = np.histogram(v, bins=bins)
    total = counts.sum()
    return [{"bin_lo": float(edges[k]), "bin_hi": float(edges[k + 1]), "count": int(counts[k]),
             "fraction": counts[k] / total if total else 0.0} for k in range(len(counts))]


def balanced_mass(fractions, lo=0.35, hi=0.65):
    """Share of split fractions inside ``[lo, hi]``."""
    v = np.asarray([x for x in fractions if not math.isnan(x)], dtype=float)
    return float(np.mean((v >= lo) & (v <= hi))) if v.size else float("nan")
