"""Closed-form utility bounds and Monte Carlo checks against simulation.

Every check is a one-split (depth-1) statement. Verdicts allow 3 binomial
standard errors of slack.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import spread_values
from .mechanisms import Variant, sample_laplace
from .splits import NumericSchema, median_split_pmf, private_median_split
from .tree import privatize_leaf_regression

THEOREMS = ("thm1", "thm2", "thm3", "cor4", "flip")


def _positive(name, value):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")


def sens_mean(B, N):
    """Sensitivity of a mean of N values bounded by B under add/remove."""
    _positive("N", N)
    return 2.0 * B / N


def sens_mse(B, N):
    """Sensitivity of the mean squared error around the mean."""
    _positive("N", N)
    return 4.0 * B * B / N


def _check_t(t, N):
    if not 0 < t < N / 2:
        raise ValueError(f"need 0 < t < N/2, got t={t}, N={N}")


def thm1_bound(B, N, t, epsilon_leaf):
    """Upper bound on the expected SSE increase of a privatized median split."""
    _check_t(t, N)
    _positive("epsilon_leaf", epsilon_leaf)
    return 4 * B * B * N - 8 * B * B * t + 16 * B * B / (epsilon_leaf ** 2 * t)


def thm2_bound(epsilon_leaf, t, theta_m):
    """Upper bound on the expected accuracy loss of a privatized median split."""
    if not 0.5 <= theta_m <= 1.0:
        raise ValueError(f"theta_m must lie in [1/2, 1], got {theta_m}")
    _positive("t", t)
    a = epsilon_leaf * t * (2 * theta_m - 1)
    return (a / 4 + 0.5) * math.exp(-a)


def thm3_prob(R, d, epsilon_s):
    """Lower bound on the chance that both children of a private median exceed t.

    Applies when the centre N - 2t points span at least ``d`` of a range ``R``.
    """
    if not 0 < d < R:
        raise ValueError(f"need 0 < d < R, got d={d}, R={R}")
    if epsilon_s < 0:
        raise ValueError("epsilon_s must be nonnegative")
    if math.isinf(epsilon_s):
        return 1.0
    e = math.exp(-epsilon_s)
    return d / (R * e + d * (1 - e))


def flip_probability(n0, n1, epsilon_leaf):
    """Chance that Laplace-noised, zero-clamped counts reverse the majority."""
    if n0 < 0 or n1 < 0:
        raise ValueError("counts must be nonnegative")
    a = epsilon_leaf * abs(n1 - n0)
    return (a / 4 + 0.5) * math.exp(-a)


# Monte Carlo -------------------------------------------------------------------------

@dataclass
class BoundReport:
    theorem: str
    inputs: dict
    bound: float
    estimate: float
    stderr: float
    trials: int
    direction: str          # "upper": estimate <= bound; "lower": estimate >= bound; "match": equal
    holds: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def ci(self):
        return (self.estimate - 3 * self.stderr, self.estimate + 3 * self.stderr)

    def to_record(self):
        r = asdict(self)
        r["ci_low"], r["ci_high"] = self.ci
        return r


def _binomial_se(p_hat, p_ref, n):
    p = max(p_hat * (1 - p_hat), p_ref * (1 - p_ref))
    return math.sqrt(p / n)


def _verdict(report):
    slack = 3 * report.stderr
    if report.direction == "upper":
        report.holds = bool(report.estimate <= report.bound + slack)
    elif report.direction == "lower":
        report.holds = bool(report.estimate >= report.bound - slack)
    else:
        report.holds = bool(abs(report.estimate - report.bound) <= slack)
    return report


def min_child_sizes(values, thresholds):
    """Size of the smaller child for each threshold (left is ``x < r``)."""
    v = np.sort(np.asarray(values, dtype=float))
    n_left = np.searchsorted(v, np.asarray(thresholds, dtype=float), side="left")
    return np.minimum(n_left, v.size - n_left)


def zeta(values, schema, epsilon_s, t, variant=Variant.EXP):
    """Exact chance that the private median leaves a child with at most t points."""
    v = np.sort(np.asarray(values, dtype=float))
    iv, p = median_split_pmf(v, schema, epsilon_s, variant)
    i = np.arange(len(iv))
    m = np.minimum(i, v.size - i)
    return float(p[m <= t].sum())


def random_split_zeta(values, schema, t):
    """Same event for a threshold drawn uniformly over the range."""
    v = np.sort(np.asarray(values, dtype=float))
    edges = np.concatenate(([schema.lo], v, [schema.hi]))
    i = np.arange(v.size + 1)
    m = np.minimum(i, v.size - i)
    return float(np.diff(edges)[m <= t].sum() / (schema.hi - schema.lo))


def _sample_min_children(values, schema, epsilon_s, trials, rng, variant=Variant.EXP):
    v = np.sort(np.asarray(values, dtype=float))
    r = [private_median_split(v, schema, epsilon_s, variant, rng).threshold for _ in range(trials)]
    return min_child_sizes(v, r)


def _confront_thm3(s, trials, rng):
    R, d, eps, N, t = s["R"], s["d"], s["epsilon_s"], s["N"], s["t"]
    _check_t(t, N)
    x = spread_values(N, t, d, R, rng)
    m = _sample_min_children(x, NumericSchema(0.0, R), eps, trials, rng)
    p_hat = float(np.mean(m > t))
    b = thm3_prob(R, d, eps)
    return BoundReport("thm3", dict(s), b, p_hat, _binomial_se(p_hat, b, trials), trials, "lower")


def _clustered(N, centres, width, R, rng):
    c = rng.choice(np.asarray(centres, dtype=float), size=N)
    return np.clip(c + rng.uniform(-width, width, size=N), 0.0, R)


def _confront_cor4(s, trials, rng):
    R, eps, N, t = s["R"], s["epsilon_s"], s["N"], s["t"]
    _check_t(t, N)
    x = _clustered(N, s["centres"], s["width"], R, rng)
    schema = NumericSchema(0.0, R)
    m = _sample_min_children(x, schema, eps, trials, rng)
    p_hat = float(np.mean(m <= t))
    b = random_split_zeta(x, schema, t)
    return BoundReport("cor4", dict(s), b, p_hat, _binomial_se(p_hat, b, trials), trials, "upper",
                       extra={"zeta_exact": zeta(x, schema, eps, t)})


def _split_trials(x, schema, eps_s, trials, rng):
    v_order = np.argsort(x, kind="stable")
    xs = x[v_order]
    r = np.array([private_median_split(xs, schema, eps_s, Variant.EXP, rng).threshold for _ in range(trials)])
    return v_order, np.searchsorted(xs, r, side="left")


def _confront_thm1(s, trials, rng, inner=100):
    """Violation rate of the SSE bound versus the chance of a small child."""
    N, B, t, eps_l, eps_s = s["N"], s["B"], s["t"], s["epsilon_leaf"], s["epsilon_s"]
    _check_t(t, N)
    x = rng.uniform(0, 1, N)
    y = rng.uniform(-B, B, N)
    schema = NumericSchema(0.0, 1.0)
    order, k_all = _split_trials(x, schema, eps_s, trials, rng)
    ys = y[order]
    h = N // 2
    sse = float(((ys[:h] - ys[:h].mean()) ** 2).sum() + ((ys[h:] - ys[h:].mean()) ** 2).sum())
    bound = thm1_bound(B, N, t, eps_l)
    violations, gaps = 0, []
    for k in k_all:
        tot = np.zeros(inner)
        for block in (ys[:k], ys[k:]):
            if block.size == 0:
                continue
            means = np.array([privatize_leaf_regression(block.sum(), block.size, B, eps_l, rng) for _ in range(inner)])
            tot += ((block[None, :] - means[:, None]) ** 2).sum(axis=1)
        gap = tot.mean() - sse
        se = tot.std(ddof=1) / math.sqrt(inner)
        gaps.append(gap)
        violations += gap - 3 * se > bound
    z = zeta(x, schema, eps_s, t)
    rate = violations / trials
    return BoundReport("thm1", dict(s), z, rate, _binomial_se(rate, z, trials), trials, "upper",
                       extra={"gap_bound": bound, "mean_gap": float(np.mean(gaps)), "max_gap": float(np.max(gaps))})


def _accuracy_loss(labels_sorted, k, eps_l, rng, inner):
    """Mean over leaf-noise draws of the accuracy with noised counts, plus its se."""
    acc = np.zeros(inner)
    N = labels_sorted.size
    for block in (labels_sorted[:k], labels_sorted[k:]):
        if block.size == 0:
            continue
        n1 = int(block.sum())
        n0 = block.size - n1
        c0 = np.maximum(0.0, n0 + sample_laplace(1.0 / eps_l, rng, inner))
        c1 = np.maximum(0.0, n1 + sample_laplace(1.0 / eps_l, rng, inner))
        pick1 = np.where(c1 == c0, rng.random(inner) < 0.5, c1 > c0)
        acc += np.where(pick1, n1, n0) / N
    return acc.mean(), acc.std(ddof=1) / math.sqrt(inner)


def _confront_thm2(s, trials, rng, inner=100):
    """Violation rate of the accuracy bound versus the chance of a small child.

    Every ``period``-th point (in attribute order) is minority class, so any
    split leaves both children with the same exact-count accuracy.
    """
    N, t, eps_l, eps_s, period = s["N"], s["t"], s["epsilon_leaf"], s["epsilon_s"], s["period"]
    _check_t(t, N)
    x = np.sort(rng.uniform(0, 1, N))
    labels = np.ones(N, dtype=int)
    labels[period - 1::period] = 0
    schema = NumericSchema(0.0, 1.0)
    _, k_all = _split_trials(x, schema, eps_s, trials, rng)
    h = N // 2
    acc = sum(max(b.sum(), b.size - b.sum()) for b in (labels[:h], labels[h:])) / N
    violations, bounds = 0, []
    for k in k_all:
        purities = [max(b.mean(), 1 - b.mean()) for b in (labels[:k], labels[k:]) if b.size]
        b = thm2_bound(eps_l, t, min(purities))
        bounds.append(b)
        mean_acc, se = _accuracy_loss(labels, k, eps_l, rng, inner)
        violations += (acc - mean_acc) - 3 * se > b
    z = zeta(x, schema, eps_s, t)
    rate = violations / trials
    return BoundReport("thm2", dict(s), z, rate, _binomial_se(rate, z, trials), trials, "upper",
                       extra={"exact_accuracy": float(acc), "median_gap_bound": float(np.median(bounds))})


def simulate_flip(n0, n1, epsilon_leaf, trials, rng):
    """Frequency with which noised counts favour the minority class.

    Both counts clamped to zero count as half a flip. With equal counts
    class 0 plays the minority.
    """
    lo, hi = (n0, n1) if n0 <= n1 else (n1, n0)
    a = np.maximum(0.0, lo + sample_laplace(1.0 / epsilon_leaf, rng, trials))
    b = np.maximum(0.0, hi + sample_laplace(1.0 / epsilon_leaf, rng, trials))
    return float(np.mean(a > b) + 0.5 * np.mean((a == 0) & (b == 0)))


def _confront_flip(s, trials, rng):
    n0, n1, eps = s["n0"], s["n1"], s["epsilon_leaf"]
    p = flip_probability(n0, n1, eps)
    est = simulate_flip(n0, n1, eps, trials, rng)
    return BoundReport("flip", dict(s), p, est, _binomial_se(est, p, trials), trials, "match")


_DISPATCH = {"thm1": _confront_thm1, "thm2": _confront_thm2, "thm3": _confront_thm3,
             "cor4": _confront_cor4, "flip": _confront_flip}


def monte_carlo_confront(theorem, scenario, trials, rng):
    """Simulate one scenario and compare the result with its closed form."""
    if theorem not in _DISPATCH:
        raise ValueError(f"unknown theorem {theorem!r}; choose from {', '.join(THEOREMS)}")
    if trials < 1:
        raise ValueError("trials must be positive")
    return _verdict(_DISPATCH[theorem](scenario, int(trials), rng))


def default_scenarios(rng=None):
    """The standard verification suite as ``[(theorem, scenario, trial_scale)]``.

    ``trial_scale`` divides the requested trial count; the utility checks
    average over inner noise draws and so use fewer outer trials.
    """
    rng = np.random.default_rng(12345) if rng is None else rng
    out = []
    for R, d, eps, N, t in [(1.0, 0.5, 2.0, 100, 10), (1.0, 0.5, 0.2, 20, 8), (1.0, 0.2, 0.1, 20, 8),
                            (2.0, 0.5, 0.05, 10, 4), (1.0, 0.1, 0.3, 16, 7)]:
        out.append(("thm3", {"R": R, "d": d, "epsilon_s": eps, "N": N, "t": t}, 1))
    for centres, width, eps, N, t in [((0.2, 0.8), 0.05, 0.1, 20, 8), ((0.1, 0.5, 0.9), 0.03, 0.2, 30, 12),
                                      ((0.05,), 0.04, 0.1, 20, 5), ((0.3, 0.35), 0.02, 0.05, 40, 15),
                                      ((0.1, 0.95), 0.02, 0.3, 20, 9)]:
        out.append(("cor4", {"R": 1.0, "centres": list(centres), "width": width, "epsilon_s": eps,
                             "N": N, "t": t}, 1))
    out.append(("thm1", {"N": 100, "B": 1.0, "t": 25, "epsilon_leaf": 1.0, "epsilon_s": 1.0}, 10))
    out.append(("thm2", {"N": 100, "t": 10, "epsilon_leaf": 0.5, "epsilon_s": 1.0, "period": 5}, 10))
    for _ in range(20):
        n0, n1 = (int(v) for v in rng.integers(0, 15, size=2))
        out.append(("flip", {"n0": n0, "n1": n1, "epsilon_leaf": float(np.round(rng.uniform(0.1, 2.0), 3))}, 1))
    return out


def run_suite(trials=10_000, seed=0, selector=None):
    """Run the default suite, optionally only the listed theorem ids."""
    wanted = None if selector in (None, "all") else set(selector.split(",") if isinstance(selector, str) else selector)
    if wanted and not wanted <= set(THEOREMS):
        raise ValueError(f"unknown selector {sorted(wanted - set(THEOREMS))}; choose from {', '.join(THEOREMS)}")
    ss = np.random.SeedSequence(seed)
    scenarios = default_scenarios()
    children = ss.spawn(len(scenarios))
    reports = []
    for (th, sc, scale), child in zip(scenarios, children):
        if wanted and th not in wanted:
            continue
        reports.append(monte_carlo_confront(th, sc, max(1, trials // scale), np.random.default_rng(child)))
    return reports
