"""Comparison learners sharing the DiPriMe tree skeleton.

* DP-ERT: data-independent random splits, whole budget on the leaves.
* Median: the non-private limit of DiPriMe (exact median splits and leaves).
* Greedy: non-private exhaustive best split, a bootstrap-free random forest.
"""
from __future__ import annotations

import math

import numpy as np

from .mechanisms import PrivacyBudget, PrivacyError, Variant
from .splits import (
    MAX_CATEGORIES,
    CategoricalSplit,
    NumericSplit,
    enumerate_categorical_splits,
)
from .tree import TreeConfig, _category_counts, grow_tree, split_score


def dp_ert_config(epsilon, d_max, B=1.0):
    """Tree config spending all of ``epsilon`` on the leaves."""
    budget = PrivacyBudget(epsilon, 0.0, d_max, Variant.LEAVES_ONLY)
    return TreeConfig(d_max, 1, Variant.LEAVES_ONLY, B, budget)


def fit_dp_ert_tree(data, config, rng, ledger=None):
    """Private extremely-randomised tree.

    Attribute uniform, numeric thresholds uniform on the node's range,
    categorical partitions uniform. Only the leaves touch the data.
    """
    from .tree import fit_tree

    if config.budget is None:
        raise PrivacyError("DP-ERT needs a privacy budget")
    if config.budget.variant is not Variant.LEAVES_ONLY:
        config = dp_ert_config(config.budget.epsilon_total, config.d_max, config.B)
    return fit_tree(data, config, rng, ledger)


# Non-private median tree --------------------------------------------------------

def exact_median_split(column, range_a, attribute, numeric):
    """Deterministic balanced split; the left child gets floor(N/2) records."""
    if numeric:
        lo, hi = range_a
        v = np.sort(column)
        n = v.size
        if n == 0:
            return NumericSplit(attribute, (lo + hi) / 2)
        k = n // 2
        below = v[k - 1] if k > 0 else lo
        r = (below + v[k]) / 2
        if not lo < r < hi:
            r = (lo + v[k]) / 2 if lo < v[k] else (lo + hi) / 2
        return NumericSplit(attribute, float(r))
    parts = enumerate_categorical_splits(_category_counts(column, range_a))
    best = max(range(len(parts)), key=lambda i: (parts[i][1], -i))
    left, right = parts[best][0]
    return CategoricalSplit(attribute, left, right)


def _choose_median(attribute_choice):
    def choose(ctx, idx, ranges, attrs, depth):
        rng = ctx.rng
        sampled = rng.choice(np.asarray(attrs), size=min(ctx.config.K, len(attrs)), replace=False)
        if attribute_choice == "random":
            a = int(sampled[int(rng.integers(len(sampled)))])
            return exact_median_split(ctx.X[idx, a], ranges[a], a, ctx.schemas_numeric[a])
        cands = [exact_median_split(ctx.X[idx, int(a)], ranges[int(a)], int(a), ctx.schemas_numeric[int(a)])
                 for a in sampled]
        scores = [split_score(ctx, idx, s) for s in cands]
        return cands[int(np.argmax(scores))]
    return choose


def fit_nonprivate_median_tree(data, config, rng=None, attribute_choice="random"):
    """Median tree with exact leaves.

    ``attribute_choice`` is ``"random"`` (uniform over the K sampled
    attributes) or ``"best"`` (lowest split error among them).
    """
    if attribute_choice not in ("random", "best"):
        raise ValueError(f"unknown attribute_choice {attribute_choice!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    return grow_tree(data, _nonprivate(config), rng, _choose_median(attribute_choice), math.inf)


def _nonprivate(config):
    return TreeConfig(config.d_max, config.K, config.variant, config.B, None)


# Greedy tree ---------------------------------------------------------------------

def _best_numeric(x, y, task, n_classes):
    """Best threshold by pooled squared error or misclassifications.

    Returns ``(loss, threshold)``; thresholds sit midway between distinct values.
    """
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = xs.size
    cut = np.flatnonzero(np.diff(xs) > 0) + 1  # left sizes with a clean cut
    if cut.size == 0:
        return math.inf, None
    if task == "regression":
        s1 = np.cumsum(ys)
        s2 = np.cumsum(ys * ys)
        nl = cut.astype(float)
        nr = n - nl
        sl, ql = s1[cut - 1], s2[cut - 1]
        sr, qr = s1[-1] - sl, s2[-1] - ql
        loss = (ql - sl * sl / nl) + (qr - sr * sr / nr)
    else:
        onehot = np.eye(n_classes)[ys]
        cl = np.cumsum(onehot, axis=0)[cut - 1]
        cr = onehot.sum(axis=0) - cl
        loss = (cut - cl.max(axis=1)) + ((n - cut) - cr.max(axis=1))
    j = int(np.argmin(loss))
    k = cut[j]
    return float(loss[j]), float((xs[k - 1] + xs[k]) / 2)


def _loss(y, task):
    if y.size == 0:
        return 0.0
    if task == "regression":
        return float(np.sum((y - y.mean()) ** 2))
    return float(y.size - np.bincount(y).max())


def _choose_greedy(ctx, idx, ranges, attrs, depth):
    rng = ctx.rng
    sampled = rng.choice(np.asarray(attrs), size=min(ctx.config.K, len(attrs)), replace=False)
    y = ctx.y[idx]
    best = (math.inf, None)
    for a in (int(a) for a in sampled):
        col = ctx.X[idx, a]
        if ctx.schemas_numeric[a]:
            loss, r = _best_numeric(col, y, ctx.task, ctx.n_classes)
            if r is not None and loss < best[0]:
                best = (loss, NumericSplit(a, r))
        else:
            if len(ranges[a]) > MAX_CATEGORIES:
                raise PrivacyError("too many categories for exhaustive splitting")
            for (left, right), _ in enumerate_categorical_splits(_category_counts(col, ranges[a])):
                mask = np.isin(col, list(left))
                loss = _loss(y[mask], ctx.task) + _loss(y[~mask], ctx.task)
                if loss < best[0]:
                    best = (loss, CategoricalSplit(a, left, right))
    if best[1] is None:
        # No attribute separates the node (constant columns or empty node).
        a = int(sampled[0])
        if ctx.schemas_numeric[a]:
            lo, hi = ranges[a]
            return NumericSplit(a, (lo + hi) / 2)
        return exact_median_split(ctx.X[idx, a], ranges[a], a, False)
    return best[1]


def fit_greedy_tree(data, config, rng=None):
    """Non-private CART-style tree over K sampled attributes per node."""
    rng = np.random.default_rng(0) if rng is None else rng
    return grow_tree(data, _nonprivate(config), rng, _choose_greedy, math.inf)
