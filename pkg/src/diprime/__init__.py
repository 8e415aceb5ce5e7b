"""Differentially private median forests."""

__version__ = "0.1.0"

from .mechanisms import (  # noqa: E402
    BudgetLedger,
    PrivacyBudget,
    PrivacyError,
    ScoredOutcome,
    Sensitivity,
    Variant,
    exp_mechanism,
    exp_mechanism_pmf,
    ledger_total,
    permute_flip,
    permute_flip_pmf,
    sample_laplace,
)
from .splits import (  # noqa: E402
    CategoricalSchema,
    CategoricalSplit,
    DomainError,
    NumericSchema,
    NumericSplit,
    enumerate_categorical_splits,
    median_split_pmf,
    private_categorical_split,
    private_median_split,
    score_numeric_intervals,
    select_attribute,
    split_utility_score,
)
from .tree import TreeConfig, fit_tree, predict, privatize_leaf_classification, privatize_leaf_regression  # noqa: E402
from .data import Dataset, load_csv, scale_target, train_test_split, equal_width_bins  # noqa: E402
from .baselines import fit_dp_ert_tree, fit_greedy_tree, fit_nonprivate_median_tree  # noqa: E402
from .forest import Forest, ForestConfig, diagnostics, evaluate, fit_forest, predict_forest  # noqa: E402
