"""Dataset ingestion, schemas, target scaling, binning and synthetic data."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .splits import CategoricalSchema, DomainError, NumericSchema


class DataError(ValueError):
    """Malformed input file or schema violation."""


@dataclass(frozen=True)
class TargetScaling:
    """Affine map of the original target range onto [0, 1]."""

    lo: float
    hi: float

    def forward(self, y):
        y = np.asarray(y, dtype=float)
        if self.hi == self.lo:
            return np.full_like(y, 0.5)
        return (y - self.lo) / (self.hi - self.lo)

    def inverse(self, y):
        return self.lo + np.asarray(y, dtype=float) * (self.hi - self.lo)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus per-column schema and bounded targets.

    Categorical columns of ``X`` hold integer codes indexing the schema's
    category tuple. Classification targets are integer codes into ``classes``.
    """

    X: np.ndarray
    y: np.ndarray
    schemas: tuple
    task: str
    B: float = 1.0
    classes: tuple = ()
    target_name: str = "y"
    target_scaling: TargetScaling | None = None
    privacy_unsafe: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise DataError("X must be 2-dimensional")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "schemas", tuple(self.schemas))
        if X.shape[1] != len(self.schemas):
            raise DataError(f"{X.shape[1]} columns but {len(self.schemas)} schemas")
        if self.task == "regression":
            y = np.asarray(self.y, dtype=float)
            if y.size and np.max(np.abs(y)) > self.B * (1 + 1e-12):
                raise DataError(f"targets exceed the bound B={self.B}")
        elif self.task == "classification":
            y = np.asarray(self.y, dtype=int)
            if not self.classes:
                raise DataError("classification datasets need a class list")
            if y.size and (y.min() < 0 or y.max() >= len(self.classes)):
                raise DataError("class code out of range")
        else:
            raise DataError(f"unknown task {self.task!r}")
        if y.shape != (X.shape[0],):
            raise DataError("X and y disagree on the number of rows")
        object.__setattr__(self, "y", y)
        check_in_schema(X, self.schemas)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    @property
    def n_classes(self):
        return len(self.classes)

    def subset(self, idx):
        return replace(self, X=self.X[idx], y=self.y[idx])

    def schema_record(self):
        return [s.to_dict() for s in self.schemas]


def check_in_schema(X, schemas):
    """Raise DomainError naming the first (row, column) outside its schema.

    Messages give locations only, never the offending value.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    for j, s in enumerate(schemas):
        col = X[:, j]
        if isinstance(s, NumericSchema):
            bad = ~((col >= s.lo) & (col <= s.hi))
        else:
            bad = ~((col >= 0) & (col < len(s.categories)) & (col == np.floor(col)))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise DomainError(f"row {i}, column {s.name or j}: value outside schema")


# Schema files -----------------------------------------------------------------

def load_schema(spec):
    """Read a schema description from a JSON path or an already-parsed dict.

    Format::

        {"target": {"name": "y", "kind": "numeric", "range": [0, 10]},
         "columns": [{"name": "x1", "kind": "numeric", "range": [0, 1]},
                     {"name": "x2", "kind": "numeric", "range": "infer"},
                     {"name": "c", "kind": "categorical", "categories": ["a", "b"]}]}
    """
    if isinstance(spec, (str, Path)):
        try:
            spec = json.loads(Path(spec).read_text())
        except FileNotFoundError as e:
            raise DataError(f"schema file not found: {spec}") from e
        except json.JSONDecodeError as e:
            raise DataError(f"schema file is not valid JSON: {e}") from e
    if "columns" not in spec or "target" not in spec:
        raise DataError("schema needs 'columns' and 'target'")
    return spec


def _parse_numeric(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {col}: not a number") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}, column {col}: non-finite value")
    return v


def _pad(values):
    lo, hi = float(np.min(values)), float(np.max(values))
    pad = 0.01 * (hi - lo) if hi > lo else 0.01 * max(abs(lo), 1.0)
    return lo - pad, hi + pad


def load_csv(path, schema_spec, task):
    """Parse a headed CSV file against a declarative schema.

    Declared ranges are treated as public knowledge. ``"infer"`` ranges and
    category sets are computed from the data and mark the dataset
    ``privacy_unsafe``.
    """
    spec = load_schema(schema_spec)
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    index = {name: i for i, name in enumerate(header)}
    cols = spec["columns"]
    tgt = spec["target"]
    for c in cols + [tgt]:
        if c["name"] not in index:
            raise DataError(f"column {c['name']!r} missing from {path}")

    raw = {}
    for c in cols + [tgt]:
        j = index[c["name"]]
        vals = []
        for r_i, row in enumerate(rows, start=2):
            if len(row) != len(header):
                raise DataError(f"row {r_i}: expected {len(header)} fields, got {len(row)}")
            text = row[j].strip()
            if text == "":
                raise DataError(f"row {r_i}, column {c['name']}: missing value")
            vals.append(text)
        raw[c["name"]] = vals

    unsafe = False
    schemas, columns = [], []
    for c in cols:
        name, vals = c["name"], raw[c["name"]]
        if c["kind"] == "numeric":
            x = np.array([_parse_numeric(v, i + 2, name) for i, v in enumerate(vals)])
            if c.get("range", "infer") == "infer":
                lo, hi = _pad(x)
                unsafe = True
            else:
                lo, hi = map(float, c["range"])
                bad = np.flatnonzero((x < lo) | (x > hi))
                if bad.size:
                    i = int(bad[0])
                    raise DataError(f"row {i + 2}, column {name}: value outside [{lo}, {hi}]")
            schemas.append(NumericSchema(lo, hi, name))
            columns.append(x)
        elif c["kind"] == "categorical":
            cats = c.get("categories", "infer")
            if cats == "infer":
                cats = sorted(set(vals))
                unsafe = True
            cats = [str(v) for v in cats]
            code = {v: k for k, v in enumerate(cats)}
            x = np.empty(len(vals))
            for i, v in enumerate(vals):
                if v not in code:
                    raise DataError(f"row {i + 2}, column {name}: unknown category")
                x[i] = code[v]
            schemas.append(CategoricalSchema(tuple(cats), name))
            columns.append(x)
        else:
            raise DataError(f"column {name}: unknown kind {c['kind']!r}")

    X = np.column_stack(columns) if columns else np.empty((len(rows), 0))
    tvals = raw[tgt["name"]]
    if task == "regression":
        y = np.array([_parse_numeric(v, i + 2, tgt["name"]) for i, v in enumerate(tvals)])
        rng_decl = tgt.get("range", "infer")
        if rng_decl == "infer":
            B = float(np.max(np.abs(y))) if y.size else 1.0
            B = B if B > 0 else 1.0
            unsafe = True
        else:
            lo, hi = map(float, rng_decl)
            bad = np.flatnonzero((y < lo) | (y > hi))
            if bad.size:
                i = int(bad[0])
                raise DataError(f"row {i + 2}, column {tgt['name']}: target outside [{lo}, {hi}]")
            B = max(abs(lo), abs(hi))
        return Dataset(X, y, schemas, task, B=B, target_name=tgt["name"], privacy_unsafe=unsafe)
    if task == "classification":
        classes = tgt.get("categories", "infer")
        if classes == "infer":
            classes = sorted(set(tvals))
            unsafe = True
        classes = tuple(str(c) for c in classes)
        code = {v: k for k, v in enumerate(classes)}
        y = np.empty(len(tvals), dtype=int)
        for i, v in enumerate(tvals):
            if v not in code:
                raise DataError(f"row {i + 2}, column {tgt['name']}: unknown class")
            y[i] = code[v]
        return Dataset(X, y, schemas, task, classes=classes, target_name=tgt["name"], privacy_unsafe=unsafe)
    raise DataError(f"unknown task {task!r}")


def write_csv(dataset, path):
    """Write a dataset back out with categories and classes decoded."""
    names = [s.name or f"x{j}" for j, s in enumerate(dataset.schemas)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + [dataset.target_name])
        for i in range(dataset.n):
            row = []
            for j, s in enumerate(dataset.schemas):
                v = dataset.X[i, j]
                row.append(s.categories[int(v)] if isinstance(s, CategoricalSchema) else repr(float(v)))
            t = dataset.classes[dataset.y[i]] if dataset.task == "classification" else repr(float(dataset.y[i]))
            w.writerow(row + [t])


def schema_spec_of(dataset):
    """Declarative schema matching ``dataset`` (inverse of ``load_schema``)."""
    if dataset.task == "regression":
        target = {"name": dataset.target_name, "kind": "numeric", "range": [-dataset.B, dataset.B]}
    else:
        target = {"name": dataset.target_name, "kind": "categorical", "categories": list(dataset.classes)}
    cols = []
    for j, s in enumerate(dataset.schemas):
        d = s.to_dict()
        d["name"] = s.name or f"x{j}"
        if isinstance(s, CategoricalSchema):
            d["categories"] = [str(c) for c in s.categories]
        cols.append(d)
    return {"target": target, "columns": cols}


# Transformations ------------------------------------------------------------------

def scale_target(dataset, bounds=None):
    """Map regression targets affinely onto [0, 1] and set ``B = 1``.

    Uses ``bounds`` when given, otherwise the observed min and max (which is
    data-dependent and flags the result ``privacy_unsafe``).
    """
    if dataset.task != "regression":
        raise DataError("only regression targets can be scaled")
    unsafe = dataset.privacy_unsafe
    if bounds is None:
        lo, hi = float(dataset.y.min()), float(dataset.y.max())
        unsafe = True
    else:
        lo, hi = map(float, bounds)
    scaling = TargetScaling(lo, hi)
    y = np.clip(scaling.forward(dataset.y), 0.0, 1.0)
    return replace(dataset, y=y, B=1.0, target_scaling=scaling, privacy_unsafe=unsafe)


def train_test_split(dataset, fraction, rng):
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    perm = rng.permutation(dataset.n)
    n_train = int(round(fraction * dataset.n))
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))


def bin_edges(schema, n_bins):
    return schema.lo + (schema.hi - schema.lo) * np.arange(n_bins + 1) / n_bins


def equal_width_bins(dataset, n_bins):
    """Replace each numeric column by ``n_bins`` equal-width categories.

    Bins are ``[e_k, e_{k+1})`` with the top bin closed. Edges depend only on
    the schema.
    """
    X = dataset.X.copy()
    schemas = list(dataset.schemas)
    for j, s in enumerate(dataset.schemas):
        if isinstance(s, NumericSchema):
            edges = bin_edges(s, n_bins)
            X[:, j] = np.clip(np.searchsorted(edges, X[:, j], side="right") - 1, 0, n_bins - 1)
            schemas[j] = CategoricalSchema(tuple(range(n_bins)), s.name)
    return replace(dataset, X=X, schemas=tuple(schemas))


# Synthetic data -------------------------------------------------------------------

def spread_values(n, t, d, R=1.0, rng=None):
    """1-D values on [0, R] whose N - 2t centermost points span exactly ``d``.

    The remaining ``t`` points on each side fall uniformly in the outer gaps.
    """
    if not (0 < d < R) or not (0 <= 2 * t < n):
        raise ValueError("need 0 < d < R and 0 <= 2t < n")
    rng = np.random.default_rng() if rng is None else rng
    a = (R - d) / 2
    inner = np.concatenate(([a], rng.uniform(a, a + d, n - 2 * t - 2), [a + d]))
    left = rng.uniform(0, a, t)
    right = rng.uniform(a + d, R, t)
    return np.sort(np.concatenate((left, inner, right)))


def _skewed(rng, n, p, skew):
    u = rng.random((n, p))
    return u ** (1.0 + skew)


def synth_regression(n, n_features=10, rng=None, signal=1.0, noise=0.1, skew=0.0,
                     interactions=False):
    """Additive smooth target on features in [0, 1], scaled to [0, 1].

    ``skew > 0`` piles the features up near 0 inside their declared range.
    ``signal = 0`` gives pure noise.
    """
    rng = np.random.default_rng() if rng is None else rng
    X = _skewed(rng, n, n_features, skew)
    # Monotone bumps on the data quantile scale, so every feature carries signal.
    z = X ** (1.0 / (1.0 + skew))
    f = np.sin(np.pi * z).sum(axis=1) + (z - 0.5).sum(axis=1) * 2
    if interactions:
        f = f + 4 * (z[:, 0] - 0.5) * (z[:, 1] - 0.5)
    y = signal * f / max(np.sqrt(n_features), 1.0) + noise * rng.standard_normal(n)
    lo, hi = float(y.min()), float(y.max())
    y = (y - lo) / (hi - lo) if hi > lo else np.full(n, 0.5)
    schemas = [NumericSchema(0.0, 1.0, f"x{j}") for j in range(n_features)]
    return Dataset(X, y, schemas, "regression", B=1.0, privacy_unsafe=False)


def synth_classification(n, n_features=4, rng=None, separation=2.0, skew=0.0, label_noise=0.0,
                         balance=0.5, range_pad=3.0):
    """Two Gaussian classes whose means differ by ``separation`` along a
    random unit direction, declared on a range padded ``range_pad`` standard
    deviations beyond the bulk of the data."""
    rng = np.random.default_rng() if rng is None else rng
    y = (rng.random(n) >= balance).astype(int)
    direction = rng.standard_normal(n_features)
    direction /= np.linalg.norm(direction)
    X = rng.standard_normal((n, n_features)) + np.outer(y - 0.5, direction) * separation
    if skew > 0:
        X = np.sign(X) * np.abs(X) ** (1 + skew)
    if label_noise > 0:
        flip = rng.random(n) < label_noise
        y = np.where(flip, 1 - y, y)
    half = 3.0 + separation / 2
    half = np.sign(half) * abs(half) ** (1 + max(skew, 0)) + range_pad
    X = np.clip(X, -half, half)
    schemas = [NumericSchema(-half, half, f"x{j}") for j in range(n_features)]
    return Dataset(X, y, schemas, "classification", classes=("0", "1"))


def two_clusters(n, n_features=2, rng=None, gap=0.2):
    """Classification data separable by a median split on any attribute."""
    rng = np.random.default_rng() if rng is None else rng
    y = np.repeat([0, 1], [n // 2, n - n // 2])
    centre = np.where(y == 1, 0.75, 0.25)[:, None]
    X = centre + rng.uniform(-(0.25 - gap / 2), 0.25 - gap / 2, (n, n_features))
    schemas = [NumericSchema(0.0, 1.0, f"x{j}") for j in range(n_features)]
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], schemas, "classification", classes=("0", "1"))
