"""Primitive differential-privacy mechanisms and a composition ledger.

All randomness is drawn from a caller-supplied ``numpy.random.Generator``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np


class PrivacyError(ValueError):
    """Raised for invalid privacy parameters or malformed mechanism inputs."""


@dataclass(frozen=True)
class Sensitivity:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise PrivacyError(f"sensitivity must be finite and >= 0, got {self.value}")

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class ScoredOutcome:
    """One element of a mechanism's outcome space."""

    outcome_id: object
    score: float
    base_weight: float = 1.0


def _as_arrays(candidates, base_weights=None):
    """Accept either ScoredOutcome objects or a plain score vector."""
    if len(candidates) == 0:
        raise PrivacyError("candidate list is empty")
    first = candidates[0]
    if isinstance(first, ScoredOutcome):
        scores = np.array([c.score for c in candidates], dtype=float)
        weights = np.array([c.base_weight for c in candidates], dtype=float)
    else:
        scores = np.asarray(candidates, dtype=float)
        weights = np.ones_like(scores) if base_weights is None else np.asarray(base_weights, dtype=float)
    if weights.shape != scores.shape:
        raise PrivacyError("scores and base weights differ in length")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise PrivacyError("base weights must be finite and nonnegative")
    if not np.any(weights > 0):
        raise PrivacyError("all base weights are zero")
    return scores, weights


def _check_epsilon(epsilon):
    if not (epsilon >= 0) or math.isnan(epsilon):
        raise PrivacyError(f"epsilon must be >= 0, got {epsilon}")


def _resolve(candidates, outcome_index):
    first = candidates[0]
    if isinstance(first, ScoredOutcome):
        return candidates[outcome_index].outcome_id
    return int(outcome_index)


# Laplace -------------------------------------------------------------------

def laplace_from_uniform(u, scale):
    """Inverse CDF of Laplace(0, scale) evaluated at ``u`` in (0, 1)."""
    u = np.asarray(u, dtype=float)
    centred = u - 0.5
    out = -scale * np.sign(centred) * np.log1p(-2.0 * np.abs(centred))
    return out if out.ndim else float(out)


def sample_laplace(scale, rng, size=None):
    """Draw Laplace(0, scale) noise by inverse-CDF from one uniform per draw."""
    scale = float(scale)
    if not math.isfinite(scale) or scale <= 0:
        raise PrivacyError(f"Laplace scale must be finite and > 0, got {scale}")
    # rng.random() lies in [0, 1); reflect to (0, 1] to avoid log1p(-1).
    u = 1.0 - rng.random(size)
    return laplace_from_uniform(u, scale)


# Exponential mechanism -------------------------------------------------------

def exp_mechanism_pmf(candidates, sensitivity, epsilon, base_weights=None):
    """Exact selection probabilities of the exponential mechanism.

    Probabilities are proportional to ``w_i * exp(eps * q_i / (2 * sensitivity))``.
    With ``epsilon == 0`` the scores are ignored and the base weights alone
    are normalised.
    """
    scores, weights = _as_arrays(candidates, base_weights)
    _check_epsilon(epsilon)
    sens = float(sensitivity)
    if epsilon == 0:
        return weights / weights.sum()
    if not sens > 0:
        raise PrivacyError("sensitivity must be > 0 when epsilon > 0")
    if not np.all(np.isfinite(scores)):
        raise PrivacyError("scores must be finite")
    support = weights > 0
    logits = np.full_like(scores, -np.inf)
    logits[support] = epsilon * scores[support] / (2.0 * sens)
    logits -= logits[support].max()
    p = weights * np.exp(logits)
    return p / p.sum()


def exp_mechanism(candidates, sensitivity, epsilon, rng, base_weights=None):
    p = exp_mechanism_pmf(candidates, sensitivity, epsilon, base_weights)
    # Inverse-CDF draw; searchsorted keeps zero-probability entries unreachable.
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    idx = min(idx, len(p) - 1)
    return _resolve(candidates, idx)


# Permute-and-flip ------------------------------------------------------------

def _flip_probabilities(scores, sensitivity, epsilon):
    if not np.all(np.isfinite(scores)):
        raise PrivacyError("scores must be finite")
    if epsilon == 0:
        return np.ones_like(scores)
    if not float(sensitivity) > 0:
        raise PrivacyError("sensitivity must be > 0 when epsilon > 0")
    return np.exp(epsilon * (scores - scores.max()) / (2.0 * float(sensitivity)))


def permute_flip(candidates, sensitivity, epsilon, rng):
    """Permute-and-flip selection with a uniform base measure.

    Base weights on ScoredOutcome inputs are ignored.
    """
    scores, _ = _as_arrays(candidates)
    _check_epsilon(epsilon)
    p = _flip_probabilities(scores, sensitivity, epsilon)
    order = rng.permutation(len(scores))
    for idx in order:
        if p[idx] >= 1.0 or rng.random() < p[idx]:
            return _resolve(candidates, int(idx))
    raise AssertionError("unreachable: the top-scoring outcome always succeeds")


def permute_flip_pmf(candidates, sensitivity, epsilon):
    """Exact output distribution of permute-and-flip.

    Uses the arrival-time representation: outcome ``r`` is returned with
    probability ``p_r * integral_0^1 prod_{j != r} (1 - u p_j) du``.
    """
    scores, _ = _as_arrays(candidates)
    _check_epsilon(epsilon)
    p = _flip_probabilities(scores, sensitivity, epsilon)
    k = len(p)
    out = np.empty(k)
    for r in range(k):
        poly = np.polynomial.Polynomial([1.0])
        for j in range(k):
            if j != r:
                poly = poly * np.polynomial.Polynomial([1.0, -p[j]])
        integral = poly.integ()
        out[r] = p[r] * (integral(1.0) - integral(0.0))
    return out / out.sum()


def permute_flip_pmf_bruteforce(scores, sensitivity, epsilon):
    """Permute-and-flip distribution by enumerating every permutation (k <= 8)."""
    scores = np.asarray(scores, dtype=float)
    k = len(scores)
    if k > 8:
        raise PrivacyError("brute-force enumeration limited to 8 outcomes")
    p = _flip_probabilities(scores, sensitivity, epsilon)
    out = np.zeros(k)
    perms = list(permutations(range(k)))
    for perm in perms:
        survive = 1.0
        for idx in perm:
            out[idx] += survive * p[idx]
            survive *= 1.0 - p[idx]
    return out / len(perms)


# Budgets and composition ------------------------------------------------------

class Variant(str, enum.Enum):
    """How the structure budget is spent at each tree level."""

    RANDOM_ATTR = "random_attr"
    EXP = "exp"
    FLIP = "flip"
    LEAVES_ONLY = "leaves_only"


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon_total: float
    rho: float
    d_max: int
    variant: Variant = Variant.RANDOM_ATTR

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not (self.epsilon_total >= 0) or not math.isfinite(self.epsilon_total):
            raise PrivacyError(f"epsilon_total must be finite and >= 0, got {self.epsilon_total}")
        if int(self.d_max) != self.d_max or self.d_max < 1:
            raise PrivacyError(f"d_max must be a positive integer, got {self.d_max}")
        if self.variant is not Variant.LEAVES_ONLY and not 0 < self.rho < 1:
            raise PrivacyError(f"rho must lie in (0, 1), got {self.rho}")

    @property
    def epsilon_leaf(self):
        if self.variant is Variant.LEAVES_ONLY:
            return self.epsilon_total
        return (1.0 - self.rho) * self.epsilon_total

    @property
    def epsilon_split(self):
        if self.variant is Variant.LEAVES_ONLY:
            return 0.0
        if self.variant is Variant.RANDOM_ATTR:
            return self.rho * self.epsilon_total / self.d_max
        return self.rho * self.epsilon_total / (2 * self.d_max)

    @property
    def epsilon_attr(self):
        if self.variant in (Variant.EXP, Variant.FLIP):
            return self.rho * self.epsilon_total / (2 * self.d_max)
        return 0.0

    @property
    def epsilon_level(self):
        """Budget spent by all splits at one depth (parallel across nodes)."""
        return self.epsilon_split + self.epsilon_attr

    def to_dict(self):
        return {"epsilon_total": self.epsilon_total, "rho": self.rho,
                "d_max": self.d_max, "variant": self.variant.value}


@dataclass(frozen=True)
class LedgerEntry:
    label: str
    epsilon: float
    kind: str = "sequential"
    group: str | None = None

    def __post_init__(self):
        if self.kind not in ("sequential", "parallel"):
            raise PrivacyError(f"unknown composition kind {self.kind!r}")
        if self.kind == "parallel" and self.group is None:
            raise PrivacyError("parallel entries need a group name")
        if not self.epsilon >= 0:
            raise PrivacyError("ledger entries must be nonnegative")


@dataclass
class BudgetLedger:
    """Record of privacy spending.

    Sequential entries add up; parallel entries sharing a group name act on
    disjoint data and contribute only the largest of them.
    """

    entries: list = field(default_factory=list)

    def spend(self, label, epsilon):
        self.entries.append(LedgerEntry(label, float(epsilon)))

    def spend_parallel(self, group, label, epsilon):
        self.entries.append(LedgerEntry(label, float(epsilon), "parallel", group))

    def groups(self):
        out = {}
        for e in self.entries:
            if e.kind == "parallel":
                out.setdefault(e.group, []).append(e.epsilon)
        return out

    def total(self):
        return ledger_total(self)

    def to_records(self):
        return [{"label": e.label, "epsilon": e.epsilon, "kind": e.kind, "group": e.group}
                for e in self.entries]


def ledger_total(ledger):
    terms = [e.epsilon for e in ledger.entries if e.kind == "sequential"]
    terms.extend(max(v) for v in ledger.groups().values())
    return math.fsum(terms)
