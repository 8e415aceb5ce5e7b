"""Command-line front end: train, eval, sweep, verify and diagnose.

Exit codes are 0 on success, 1 when a verification check fails and 2 on a
usage or I/O error. Outputs carry the config hash, seed and package version.
Training records are never printed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from .bounds import THEOREMS, run_suite
from .forest import Forest, ForestConfig, LEARNERS, diagnostics, evaluate, fit_forest, histogram
from .mechanisms import PrivacyError
from .splits import DomainError

WORKERS_ENV = "DIPRIME_WORKERS"
GRID_KEYS = ("learner", "epsilon", "d_max", "n_trees", "rho", "K")
DEFAULTS = {"learner": "diprime", "epsilon": 1.0, "rho": 0.5, "d_max": 4, "n_trees": 10, "K": 1,
            "partition": True, "scale_target": True, "test_fraction": 0.1}


class UsageError(Exception):
    """Bad configuration or unreadable input (exit code 2)."""


# Configuration ---------------------------------------------------------------------

def load_config(path, overrides=None):
    """Read a JSON experiment config and apply non-None ``overrides``.

    Relative ``data`` and ``schema`` paths resolve against the config's folder.
    """
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file is not valid JSON: {e}") from None
    for key in ("data", "schema"):
        if isinstance(cfg.get(key), str) and not Path(cfg[key]).is_absolute():
            cfg[key] = str(path.parent / cfg[key])
    cfg = {**DEFAULTS, **cfg}
    cfg.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return cfg


def config_hash(cfg):
    """Stable short hash of the run-defining config entries."""
    keep = {k: v for k, v in cfg.items() if k not in ("grid", "seeds", "master_seed")}
    return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]


def _meta(cfg, seed):
    return {"config_hash": config_hash(cfg), "seed": seed, "version": __version__}


def load_dataset(cfg):
    """Dataset named by the config, from a CSV file or a synthetic generator."""
    task = cfg.get("task", "regression")
    if "synthetic" in cfg:
        spec = dict(cfg["synthetic"])
        kind = spec.pop("kind", task)
        rng = np.random.default_rng(spec.pop("seed", 0))
        n = spec.pop("n")
        gen = {"regression": D.synth_regression, "classification": D.synth_classification,
               "two_clusters": D.two_clusters}.get(kind)
        if gen is None:
            raise UsageError(f"unknown synthetic kind {kind!r}")
        data = gen(n, rng=rng, **spec)
        schema = D.schema_spec_of(data)
    else:
        if "data" not in cfg or "schema" not in cfg:
            raise UsageError("config needs 'data' and 'schema' paths (or a 'synthetic' block)")
        schema = D.load_schema(cfg["schema"])
        data = D.load_csv(cfg["data"], schema, task)
    return _prepare(data, schema, cfg), schema


def _prepare(data, schema, cfg):
    if data.task == "regression" and cfg.get("scale_target", True) and data.target_scaling is None:
        declared = schema["target"].get("range", "infer")
        data = D.scale_target(data, None if declared == "infer" else declared)
    if data.privacy_unsafe:
        print("warning: some ranges were inferred from the data and are not covered by the privacy guarantee",
              file=sys.stderr)
    return data


def forest_config(cfg, B=1.0):
    if cfg["learner"] not in LEARNERS:
        raise UsageError(f"unknown learner {cfg['learner']!r}; choose from {', '.join(LEARNERS)}")
    return ForestConfig.build(cfg["learner"], d_max=int(cfg["d_max"]), n_trees=int(cfg["n_trees"]),
                              K=int(cfg["K"]), epsilon=float(cfg["epsilon"]), rho=float(cfg["rho"]),
                              partition=bool(cfg["partition"]), B=B)


def _dump(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# Subcommands -----------------------------------------------------------------------

def cmd_train(args):
    cfg = load_config(args.config, {k: getattr(args, k) for k in ("learner", "epsilon", "rho", "d_max",
                                                                 "n_trees", "K", "data", "schema")})
    data, schema = load_dataset(cfg)
    forest = fit_forest(data, forest_config(cfg, data.B), args.seed)
    meta = {**_meta(cfg, args.seed), "data_schema": schema, "privacy_unsafe": data.privacy_unsafe}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(_dump({**forest.to_dict(), "meta": meta}) + "\n")
    ledger_path = Path(args.ledger) if args.ledger else out.with_suffix(".ledger.jsonl")
    expected = forest.config.expected_epsilon()
    lines = [_dump({"record": "summary", **_meta(cfg, args.seed), "learner": forest.learner,
                    "total": forest.ledger.total(), "expected": expected})]
    for i, tl in enumerate(forest.tree_ledgers):
        lines += [_dump({"record": "entry", "tree": i, **e}) for e in tl.to_records()]
    ledger_path.write_text("\n".join(lines) + "\n")
    print(f"model written to {out}")
    print(f"ledger written to {ledger_path}")
    print(f"ledger total epsilon = {forest.ledger.total()!r}")
    return 0


def _read_model(path):
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"model file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"model file is not valid JSON: {e}") from None
    try:
        return Forest.from_dict(d), d.get("meta", {})
    except (KeyError, ValueError) as e:
        raise UsageError(f"malformed model file: {e}") from None


def _load_for_model(forest, meta, data_path, schema_path):
    schema = D.load_schema(schema_path) if schema_path else meta.get("data_schema")
    if schema is None:
        raise UsageError("model has no embedded schema; pass --schema")
    data = D.load_csv(data_path, schema, forest.task)
    if forest.target_scaling is not None:
        data = D.scale_target(data, forest.target_scaling)
    return data


def cmd_eval(args):
    forest, meta = _read_model(args.model)
    data = _load_for_model(forest, meta, args.data, args.schema)
    rng = np.random.default_rng(args.seed)
    rec = {**evaluate(forest, data, rng), "config_hash": meta.get("config_hash"), "version": __version__}
    line = _dump(rec)
    if args.out:
        Path(args.out).write_text(line + "\n")
    print(line)
    return 0


def _sweep_runs(cfg, seeds):
    grid = cfg.get("grid", {})
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise UsageError(f"unknown grid keys {sorted(unknown)}; allowed: {', '.join(GRID_KEYS)}")
    axes = [(k, grid.get(k, [cfg[k]])) for k in GRID_KEYS]
    runs = []
    for combo in itertools.product(*(v for _, v in axes)):
        run_cfg = {k: v for k, v in cfg.items() if k not in ("grid", "seeds", "master_seed")}
        run_cfg.update(dict(zip(GRID_KEYS, combo)))
        runs.extend((run_cfg, s) for s in seeds)
    return runs


_DATA_CACHE = {}


def _run_one(job):
    """Fit and score one (config, seed) pair; the split depends only on the seed."""
    run_cfg, seed, master = job
    key = _dump({k: run_cfg.get(k) for k in ("data", "schema", "synthetic", "task", "scale_target")})
    if key not in _DATA_CACHE:
        _DATA_CACHE[key] = load_dataset(run_cfg)[0]
    data = _DATA_CACHE[key]
    split_ss, fit_ss = np.random.SeedSequence([master, seed]).spawn(2)
    train, test = D.train_test_split(data, 1 - float(run_cfg["test_fraction"]), np.random.default_rng(split_ss))
    fit_seed = int(fit_ss.generate_state(1, np.uint64)[0] >> 1)
    forest = fit_forest(train, forest_config(run_cfg, train.B), fit_seed)
    res = evaluate(forest, test, np.random.default_rng(fit_ss.spawn(1)[0]))
    return {"row_type": "run", **{k: run_cfg[k] for k in GRID_KEYS}, "partition": run_cfg["partition"],
            "config_hash": config_hash(run_cfg), "seed": seed, "master_seed": master,
            "metric": res["metric"], "value": repr(res["value"]), "std": "", "n_runs": 1,
            "version": __version__}


SWEEP_COLUMNS = ("row_type", "learner", "epsilon", "d_max", "n_trees", "rho", "K", "partition",
                 "config_hash", "seed", "master_seed", "metric", "value", "std", "n_runs", "version")


def _aggregate(rows):
    groups = {}
    for r in rows:
        groups.setdefault(r["config_hash"], []).append(r)
    out = []
    for h, rs in groups.items():
        v = np.array([float(r["value"]) for r in rs])
        first = rs[0]
        out.append({**{k: first[k] for k in SWEEP_COLUMNS}, "row_type": "aggregate", "seed": "",
                    "value": repr(float(np.mean(v))), "std": repr(float(np.std(v, ddof=1)) if v.size > 1 else 0.0),
                    "n_runs": int(v.size)})
    return out


def read_sweep(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def worker_count(flag=None):
    if flag is not None:
        return max(1, int(flag))
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer") from None


def cmd_sweep(args):
    cfg = load_config(args.config)
    master = args.seed if args.seed is not None else int(cfg.get("master_seed", 0))
    seeds = list(range(args.seeds)) if args.seeds is not None else list(cfg.get("seeds", range(5)))
    runs = _sweep_runs(cfg, seeds)
    out = Path(args.out)
    done = []
    if out.exists():
        done = [r for r in read_sweep(out) if r["row_type"] == "run"]
    have = {(r["config_hash"], str(r["seed"])) for r in done}
    todo = [(c, s, master) for c, s in runs if (config_hash(c), str(s)) not in have]
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(done)
        fh.flush()
        workers = worker_count(args.workers)
        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(workers) as pool:
                results = pool.map(_run_one, todo)
                for r in results:
                    w.writerow(r)
                    fh.flush()
                    done.append(r)
        else:
            for job in todo:
                r = _run_one(job)
                w.writerow(r)
                fh.flush()
                done.append(r)
    # Rewrite in grid order with aggregate rows appended.
    order = {(config_hash(c), str(s)): i for i, (c, s) in enumerate(runs)}
    done.sort(key=lambda r: order.get((r["config_hash"], str(r["seed"])), len(order)))
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(done)
        w.writerows(_aggregate(done))
    print(f"{len(todo)} runs executed, {len(runs) - len(todo)} skipped; results in {out}")
    return 0


def cmd_verify(args):
    reports = run_suite(args.trials, args.seed, args.suite)
    meta = {"config_hash": hashlib.sha256(_dump({"suite": args.suite, "trials": args.trials}).encode()).hexdigest()[:16],
            "seed": args.seed, "version": __version__}
    lines = [_dump({**r.to_record(), **meta}) for r in reports]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    failed = [r for r in reports if not r.holds]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks hold", file=sys.stderr)
    return 1 if failed else 0


def cmd_diagnose(args):
    forest, meta = _read_model(args.model)
    data = _load_for_model(forest, meta, args.data, args.schema)
    diag = diagnostics(forest, data)
    stamp = {"config_hash": meta.get("config_hash"), "seed": meta.get("seed"), "version": __version__}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    edges = np.linspace(0, 1, args.bins + 1)
    files = {
        "leaf_occupancy.csv": diag["leaf_occupancy"],
        "left_fraction.csv": diag["left_fraction"],
        "leaf_occupancy_hist.csv": histogram([r["fraction"] for r in diag["leaf_occupancy"]], edges),
        "left_fraction_hist.csv": histogram([r["left_fraction"] for r in diag["left_fraction"]], edges),
    }
    for name, rows in files.items():
        rows = [{**r, **stamp} for r in rows]
        cols = list(rows[0]) if rows else list(stamp)
        with (out / name).open("w", newline="") as fh:
            w = csv.DictWriter(fh, cols)
            w.writeheader()
            w.writerows(rows)
        print(f"wrote {out / name}")
    return 0


# Parser ----------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="diprime", description="Differentially private median forests.")
    p.add_argument("--version", action="version", version=f"diprime {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a forest from a config file")
    t.add_argument("config")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="model.json")
    t.add_argument("--ledger", help="ledger path (default: next to the model)")
    t.add_argument("--learner", choices=LEARNERS)
    t.add_argument("--epsilon", type=float)
    t.add_argument("--rho", type=float)
    t.add_argument("--d-max", dest="d_max", type=int)
    t.add_argument("--n-trees", dest="n_trees", type=int)
    t.add_argument("--K", type=int)
    t.add_argument("--data")
    t.add_argument("--schema")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a saved model on a CSV file")
    e.add_argument("model")
    e.add_argument("--data", required=True)
    e.add_argument("--schema", help="schema file (default: the one stored in the model)")
    e.add_argument("--seed", type=int, default=0, help="seed for tie-breaking")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run a grid of configs over several seeds")
    s.add_argument("config")
    s.add_argument("--seeds", type=int, help="number of replicate seeds (default: config 'seeds' or 5)")
    s.add_argument("--seed", type=int, help="master seed (default: config 'master_seed' or 0)")
    s.add_argument("--out", default="sweep.csv")
    s.add_argument("--workers", type=int, help=f"worker processes (default: ${WORKERS_ENV} or 1)")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="confront the utility bounds with simulation")
    v.add_argument("--suite", default="all", help=f"comma list from {', '.join(THEOREMS)}, or 'all'")
    v.add_argument("--trials", type=int, default=10_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("diagnose", help="leaf occupancy and split balance histograms")
    g.add_argument("model")
    g.add_argument("--data", required=True)
    g.add_argument("--schema")
    g.add_argument("--out-dir", default="diagnostics")
    g.add_argument("--bins", type=int, default=20)
    g.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, D.DataError, DomainError, PrivacyError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
