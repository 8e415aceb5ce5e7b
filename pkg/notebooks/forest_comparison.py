"""
Comparing private forests
=========================

Fit every learner on the same skewed regression data, compare test error,
and look at how evenly each one splits the data.
"""

import numpy as np

from diprime.data import synth_regression, train_test_split
from diprime.forest import ForestConfig, balanced_mass, diagnostics, evaluate, fit_forest

data = synth_regression(6000, 10, np.random.default_rng(5), skew=4.0, noise=0.02)
train, test = train_test_split(data, 0.9, np.random.default_rng(0))

for learner in ("median", "greedy", "diprime-flip", "diprime-exp", "diprime", "dp-ert"):
    eps = None if learner in ("median", "greedy") else 10.0
    cfg = ForestConfig.build(learner, d_max=6, n_trees=10, K=5, epsilon=eps)
    forest = fit_forest(train, cfg, seed=1)
    res = evaluate(forest, test)
    fractions = [r["left_fraction"] for r in diagnostics(forest, train)["left_fraction"]]
    print(f"{learner:13s} mse={res['value'] * 100:.3f}e-2  epsilon spent={forest.ledger.total():g}  "
          f"balanced splits={balanced_mass(fractions):.2f}")

# Partitioned forests pay for one tree; disjoint blocks compose in parallel.
# Without partitioning every tree sees all records and the budget adds up.
for partition in (True, False):
    cfg = ForestConfig.build("diprime", d_max=4, n_trees=5, epsilon=1.0, partition=partition)
    print("partition" if partition else "shared data", fit_forest(train, cfg, seed=2).ledger.total())
