"""Private median splits, private balanced categorical splits, and private
attribute selection."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mechanisms import PrivacyError, Variant, exp_mechanism, exp_mechanism_pmf, permute_flip, permute_flip_pmf

MAX_CATEGORIES = 12


class DomainError(ValueError):
    """A value lies outside its declared attribute schema."""


@dataclass(frozen=True)
class NumericSchema:
    lo: float
    hi: float
    name: str = ""

    kind = "numeric"

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.lo < self.hi:
            raise DomainError(f"numeric range must be finite with lo < hi, got [{self.lo}, {self.hi}]")

    def to_dict(self):
        return {"name": self.name, "kind": "numeric", "range": [self.lo, self.hi]}


@dataclass(frozen=True)
class CategoricalSchema:
    categories: tuple
    name: str = ""

    kind = "categorical"

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        if len(self.categories) == 0:
            raise DomainError("categorical schema needs at least one category")
        if len(set(self.categories)) != len(self.categories):
            raise DomainError("duplicate categories in schema")

    def to_dict(self):
        return {"name": self.name, "kind": "categorical", "categories": list(self.categories)}


@dataclass(frozen=True)
class NumericSplit:
    attribute: int
    threshold: float

    def goes_left(self, column):
        return np.asarray(column) < self.threshold


@dataclass(frozen=True)
class CategoricalSplit:
    """Left child receives records whose category code is in ``left``."""

    attribute: int
    left: frozenset
    right: frozenset

    def goes_left(self, column):
        return np.isin(np.asarray(column), list(self.left))


class IntervalScores(NamedTuple):
    """Piecewise-constant median score over ``[lo_i, hi_i)``."""

    lo: np.ndarray
    hi: np.ndarray
    score: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return len(self.score)


def _range_of(schema):
    if isinstance(schema, NumericSchema):
        return schema.lo, schema.hi
    lo, hi = schema
    if not lo < hi:
        raise DomainError(f"degenerate range [{lo}, {hi}]")
    return float(lo), float(hi)


def score_numeric_intervals(values, schema):
    """Score every candidate split location of a numeric attribute.

    ``values`` must be sorted ascending. The N data points cut the range into
    N + 1 intervals; interval ``i`` has ``i`` points to its left and scores
    ``-|i - (N - i)|``. Duplicated values produce zero-width intervals.
    """
    lo, hi = _range_of(schema)
    v = np.asarray(values, dtype=float)
    if v.size and (v[0] < lo or v[-1] > hi):
        raise DomainError(f"values outside range [{lo}, {hi}]")
    if v.size > 1 and np.any(np.diff(v) < 0):
        raise ValueError("values must be sorted ascending")
    n = v.size
    edges = np.concatenate(([lo], v, [hi]))
    i = np.arange(n + 1)
    return IntervalScores(edges[:-1], edges[1:], -np.abs(2 * i - n).astype(float), np.diff(edges))


def median_split_pmf(values, schema, epsilon_s, variant=Variant.EXP):
    """Exact probability of each interval being chosen by the private median.

    Returns ``(intervals, probabilities)``.
    """
    iv = score_numeric_intervals(values, schema)
    if Variant(variant) is Variant.FLIP:
        # Uniform base over positive-width intervals.
        keep = iv.weight > 0
        p = np.zeros(len(iv))
        p[keep] = permute_flip_pmf(iv.score[keep], 1.0, epsilon_s)
        return iv, p
    return iv, exp_mechanism_pmf(iv.score, 1.0, epsilon_s, base_weights=iv.weight)


def median_split_density(values, schema, epsilon_s):
    """Density of the threshold under the Lebesgue-base exponential mechanism,
    as ``(intervals, density)`` with density constant on each interval."""
    iv, p = median_split_pmf(values, schema, epsilon_s, Variant.EXP)
    dens = np.zeros(len(iv))
    pos = iv.weight > 0
    dens[pos] = p[pos] / iv.weight[pos]
    return iv, dens


def private_median_split(values, schema, epsilon_s, variant, rng, attribute=0, allow_empty=False):
    """Draw a differentially private median threshold for one attribute.

    ``values`` need not be sorted. Empty nodes inside a tree still need a
    threshold; ``allow_empty=True`` then draws it uniformly over the range.
    """
    lo, hi = _range_of(schema)
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0 and not allow_empty:
        raise ValueError("private median of an empty attribute")
    iv = score_numeric_intervals(v, (lo, hi))
    variant = Variant(variant)
    if variant is Variant.FLIP:
        keep = np.flatnonzero(iv.weight > 0)
        k = keep[permute_flip(iv.score[keep], 1.0, epsilon_s, rng)]
    else:
        k = exp_mechanism(iv.score, 1.0, epsilon_s, rng, base_weights=iv.weight)
    r = rng.uniform(iv.lo[k], iv.hi[k])
    if r <= lo:  # measure-zero, keeps the threshold interior
        r = np.nextafter(lo, hi)
    return NumericSplit(attribute, float(r))


def enumerate_categorical_splits(counts):
    """All unordered binary partitions of a category set with balance scores.

    ``counts`` maps category -> record count (zero counts allowed). Left sets
    are the nonempty subsets of all but the last category, in bitmask order.
    """
    cats = list(counts)
    k = len(cats)
    if k < 2:
        raise PrivacyError("need at least two categories to split")
    if k > MAX_CATEGORIES:
        raise PrivacyError(f"{k} categories exceeds the cap of {MAX_CATEGORIES}; pre-group categories")
    n = np.array([counts[c] for c in cats], dtype=float)
    total = n.sum()
    out = []
    for mask in range(1, 2 ** (k - 1)):
        left = frozenset(cats[j] for j in range(k - 1) if mask >> j & 1)
        n_left = sum(counts[c] for c in left)
        right = frozenset(cats) - left
        out.append(((left, right), -abs(2 * n_left - total)))
    return out


def private_categorical_split(counts, epsilon_s, variant, rng, attribute=0):
    parts = enumerate_categorical_splits(counts)
    scores = np.array([s for _, s in parts])
    if Variant(variant) is Variant.FLIP:
        k = permute_flip(scores, 1.0, epsilon_s, rng)
    else:
        k = exp_mechanism(scores, 1.0, epsilon_s, rng)
    left, right = parts[k][0]
    return CategoricalSplit(attribute, left, right)


def _sse(y):
    if len(y) == 0:
        return 0.0
    return float(np.sum((y - y.mean()) ** 2))


def _errors(y):
    if len(y) == 0:
        return 0
    return len(y) - int(np.bincount(y).max())


def split_utility_score(left, right, task, B=1.0):
    """Utility of a proposed split and its global sensitivity.

    Regression: negative pooled mean squared error, sensitivity ``4B^2/N``.
    Classification: negative misclassification rate under per-side majority
    labels, sensitivity ``2/N``.
    """
    left = np.asarray(left)
    right = np.asarray(right)
    n = len(left) + len(right)
    if n == 0:
        raise ValueError("split utility undefined on an empty node")
    if task == "regression":
        return -(_sse(left.astype(float)) + _sse(right.astype(float))) / n, 4.0 * B * B / n
    if task == "classification":
        return -(_errors(left.astype(int)) + _errors(right.astype(int))) / n, 2.0 / n
    raise ValueError(f"unknown task {task!r}")


def select_attribute(candidates, epsilon_a, variant, N, B, rng, task="regression"):
    """Pick one of ``(attribute, split, score)`` candidates; returns its index."""
    if len(candidates) == 0:
        raise PrivacyError("no candidate attributes")
    if len(candidates) == 1:
        return 0
    variant = Variant(variant)
    if variant in (Variant.RANDOM_ATTR, Variant.LEAVES_ONLY) or epsilon_a == 0:
        return int(rng.integers(len(candidates)))
    n = max(int(N), 1)
    sens = 4.0 * B * B / n if task == "regression" else 2.0 / n
    scores = np.array([c[2] for c in candidates], dtype=float)
    if variant is Variant.FLIP:
        return permute_flip(scores, sens, epsilon_a, rng)
    return exp_mechanism(scores, sens, epsilon_a, rng)
