"""Command-line front-end.

Subcommands
-----------
run
    Split, score raw features on the test partition, engineer features on
    the training partition, rescore, and write a JSON report plus a
    feature file.
transform
    Append saved engineered features as new columns of a CSV file.
verify-ii
    For every feature pair, plant a target built from that pair and record
    where the pair ranks by interaction information.
expand-reduce-bench
    Compare order-2 expand-reduce with and without interaction-information
    filtering of the pairs.

Exit status is 0 exactly when a complete report was written.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .downstream import (
    ConvergenceWarning,
    Evaluator,
    ModelSpec,
    holdout_score,
    metric_for,
    tune,
)
from .engine import EngineConfig, EngineError, expand_reduce, run
from .featurelang import (
    ColumnRef,
    ExprError,
    FittedExpr,
    eval_expr,
    fit_expr,
    leaves,
    parse_expr,
    render_expr,
)
from .infotheory import EstimatorConfig, VariableView, canonical_pairs, pairwise_ii
from .tabular import (
    DataError,
    Kind,
    SplitSpec,
    TaskKind,
    load_csv,
    make_folds,
    train_test_split,
)

ARTIFACT = {"name": "synergyfe", "version": __version__}

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class RunConfig:
    data: str = ""
    target: str = ""
    task: str = ""
    schema: str | None = None
    max_cat_card: int = 20
    model: str | None = None
    alpha: float = 0.001
    C: float = 1.0
    model_max_iterations: int = 1000
    tol: float = 1e-6
    K: int = 3
    P: int = 20
    max_iterations: int = 100
    knn_k: int = 3
    subsample_size: int = 3000
    split_seed: int = 0
    seed: int = 0
    test_fraction: float = 0.2
    folds: int = 5
    prefilter: int | None = None
    max_order: int | None = None
    eval_subsample_factor: float | None = None
    drop_division_ops: bool = False
    tune: bool = False
    output: str = "report.json"
    features_output: str | None = None

    def validate(self) -> "RunConfig":
        problems = []
        if not self.data:
            problems.append("data path is required")
        if not self.target:
            problems.append("target column is required")
        if self.task not in [t.value for t in TaskKind]:
            problems.append(f"task must be classification or regression, got {self.task!r}")
        elif self.model is not None:
            want = "logreg" if self.task == TaskKind.CLASSIFICATION.value else "lasso"
            if self.model != want:
                problems.append(f"model {self.model!r} does not fit a {self.task} task")
        checks = [
            (self.K >= 1, "K must be >= 1"),
            (self.P >= 2 and self.P % 2 == 0, "P must be an even number >= 2"),
            (self.max_iterations >= 0, "max_iterations must be >= 0"),
            (self.knn_k >= 1, "knn_k must be >= 1"),
            (self.subsample_size >= 10 * self.knn_k, "subsample_size must be >= 10 * knn_k"),
            (0.0 < self.test_fraction < 1.0, "test_fraction must be in (0, 1)"),
            (self.folds >= 2, "folds must be >= 2"),
            (self.alpha >= 0, "alpha must be >= 0"),
            (self.C > 0, "C must be > 0"),
            (self.model_max_iterations >= 1, "model_max_iterations must be >= 1"),
            (self.tol > 0, "tol must be > 0"),
            (self.max_cat_card >= 0, "max_cat_card must be >= 0"),
            (self.prefilter is None or self.prefilter >= 2, "prefilter must be >= 2"),
            (self.max_order is None or self.max_order >= 2, "max_order must be >= 2"),
            (self.eval_subsample_factor is None or self.eval_subsample_factor >= 1,
             "eval_subsample_factor must be >= 1"),
        ]
        problems += [msg for ok, msg in checks if not ok]
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    @classmethod
    def from_sources(cls, config_path=None, overrides: dict | None = None) -> "RunConfig":
        """Defaults, then a JSON config file, then explicit overrides."""
        values = {}
        if config_path:
            try:
                with open(config_path, encoding="utf-8") as fh:
                    values = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
            if not isinstance(values, dict):
                raise ConfigError("config file must hold a JSON object")
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            cfg = cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    @property
    def features_path(self) -> str:
        if self.features_output:
            return self.features_output
        out = Path(self.output)
        return str(out.with_name(out.stem + ".features.json"))

    def model_spec(self) -> ModelSpec:
        return ModelSpec.for_task(self.task, alpha=self.alpha, C=self.C,
                                  max_iterations=self.model_max_iterations, tol=self.tol)

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            K=self.K, P=self.P, max_iterations=self.max_iterations,
            estimator=EstimatorConfig(self.knn_k, self.subsample_size, self.seed),
            seed=self.seed, prefilter=self.prefilter, max_order=self.max_order,
            eval_subsample_factor=self.eval_subsample_factor,
            drop_division_ops=self.drop_division_ops)


# --------------------------------------------------------------------------
# helpers


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (Kind, TaskKind)):
        return x.value
    return x


def write_json(path, obj) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def percent_change(before: float, after: float) -> float | None:
    """100 * (after - before) / |before|; None when the baseline is 0."""
    if before == 0:
        return None
    return 100.0 * (after - before) / abs(before)


def _prepare_run(cfg: RunConfig):
    table = load_csv(cfg.data, cfg.target, cfg.task, cfg.max_cat_card, cfg.schema)
    if len(table.feature_names) < 2:
        raise DataError("need at least two feature columns")
    train, test = train_test_split(table, SplitSpec(cfg.test_fraction, cfg.split_seed))
    model = cfg.model_spec()
    ev = Evaluator(model, make_folds(train.n_rows, cfg.folds, cfg.seed), metric_for(cfg.task),
                   cfg.drop_division_ops)
    raw = [ColumnRef(n) for n in train.feature_names]
    if cfg.tune:
        model, _ = tune(raw, train, ev)
        ev = ev.with_model(model)
    return train, test, ev, raw


def _header(cfg) -> dict:
    return {
        "artifact": ARTIFACT,
        "config": asdict(cfg),
        "seeds": {"split": cfg.split_seed, "algorithm": cfg.seed},
    }


def feature_records(features: list, train, kinds) -> list[dict]:
    """Feature-file entries; state is fitted on the full training partition."""
    out = []
    for f in features:
        expr = parse_expr(f["expr"])
        fe = fit_expr(expr, train)
        out.append({
            "expr": f["expr"],
            "order": f["order"],
            "cv_score_when_added": f["cv_after"],
            "state": fe.to_dict()["state"],
            "columns": {c: kinds[c].value for c in sorted(set(leaves(expr)))},
        })
    return out


# --------------------------------------------------------------------------
# commands


def cmd_run(cfg: RunConfig) -> int:
    """End-to-end run; writes ``cfg.output`` and the feature file."""
    start = time.perf_counter()
    cfg.validate()
    train, test, ev, raw = _prepare_run(cfg)
    model, metric = ev.model, ev.metric
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        baseline_test = holdout_score(raw, train, test, model, metric)

    report = _header(cfg)
    report.update(task=cfg.task, metric=metric, model=asdict(model),
                  n_train=train.n_rows, n_test=test.n_rows,
                  baseline_test_score=baseline_test)
    engine_start = time.perf_counter()
    status, error = "complete", None
    try:
        result = run(train, cfg.engine_config(), ev)
    except EngineError as exc:
        status, error, result = "failed", str(exc), exc.report
    engine_time = time.perf_counter() - engine_start

    if result is not None:
        base = [ColumnRef(n) for n in result.base_features] or raw
        final = base + [parse_expr(f["expr"]) for f in result.features]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            test_score = holdout_score(final, train, test, model, metric)
        records = feature_records(result.features, train, train.kinds)
        report.update(
            base_features=[f.name for f in base],
            baseline_cv=result.baseline_cv,
            cv_history=result.history,
            n_iterations=len(result.history),
            n_evaluations=result.n_evaluations,
            features=[r["expr"] for r in records],
            test_score=test_score,
            percent_change_over_baseline=percent_change(baseline_test, test_score),
            features_file=cfg.features_path,
        )
        write_json(cfg.features_path, records)
    report["status"] = status
    if error:
        report["error"] = error
    report["timing"] = {"engine_seconds": engine_time,
                        "total_seconds": time.perf_counter() - start}
    write_json(cfg.output, report)
    if status != "complete":
        print(f"error: {error}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def load_feature_file(path) -> tuple[list[FittedExpr], dict]:
    """Parse a feature file: a JSON array of expression strings or of
    objects with ``expr`` and optional ``state`` and ``columns``."""
    try:
        with open(path, encoding="utf-8") as fh:
            items = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    if not isinstance(items, list):
        raise DataError("feature file must hold a JSON array")
    fitted, kinds, implicit = [], {}, {}
    for item in items:
        if isinstance(item, str):
            item = {"expr": item}
        if not isinstance(item, dict) or "expr" not in item:
            raise DataError(f"bad feature entry: {item!r}")
        try:
            fe = FittedExpr.from_dict(item)
        except (ExprError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad feature {item.get('expr')!r}: {exc}") from exc
        fitted.append(fe)
        kinds.update(item.get("columns", {}))
        if not item.get("state"):
            # without fitted state only numeric leaves can be evaluated
            implicit.update(dict.fromkeys(leaves(fe.expr), "numeric"))
    return fitted, {**implicit, **kinds}


def cmd_transform(features_path, data_path, output_path, schema=None,
                  max_cat_card: int = 20) -> int:
    """Append one column per saved feature, named by its expression text."""
    fitted, kinds = load_feature_file(features_path)
    overrides = {"columns": dict(kinds)}
    if schema is not None:
        if not isinstance(schema, dict):
            with open(schema, encoding="utf-8") as fh:
                schema = json.load(fh)
        overrides["columns"].update(schema.get("columns", {}))
    table = load_csv(data_path, None, None, max_cat_card, overrides)
    new_cols = []
    for fe in fitted:
        try:
            new_cols.append(eval_expr(fe, table))
        except ExprError as exc:
            raise DataError(f"cannot apply {render_expr(fe.expr)}: {exc}") from exc

    with open(data_path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        fh.seek(0)
        rows = list(csv.reader(fh))
    # keep the input's line endings so an empty feature set copies the file
    eol = "\r\n" if first.endswith("\r\n") else "\n"
    header = rows[0] + [render_expr(fe.expr) for fe in fitted]
    out = Path(output_path)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator=eol)
        w.writerow(header)
        for r, row in enumerate(rows[1:]):
            w.writerow(row + [repr(float(col[r])) for col in new_cols])
    return EXIT_OK


TARGET_FUNCTIONS = {
    "sum": ("x+y", lambda x, y: x + y),
    "product": ("x*y", lambda x, y: x * y),
    "sin": ("sin(x^2+x*y+y^2)", lambda x, y: np.sin(x * x + x * y + y * y)),
    "expmax": ("exp(|max(x,y)|)", lambda x, y: np.exp(np.abs(np.maximum(x, y)))),
}


def verify_ii(columns: dict, functions=tuple(TARGET_FUNCTIONS),
              cfg: EstimatorConfig = EstimatorConfig()) -> dict:
    """Rank of each planted pair among all pairs, per target function.

    ``columns`` maps names to numeric arrays. For every pair (i, j) and
    function f the target is ``f(F_i, F_j)``; all pairs are scored against
    it and the position of (i, j) in the ranking is recorded, 0 being best.
    """
    names = list(columns)
    if len(names) < 2:
        raise DataError("need at least two numeric features")
    unknown = [f for f in functions if f not in TARGET_FUNCTIONS]
    if unknown:
        raise DataError(f"unknown target functions: {', '.join(unknown)}")
    views = {n: VariableView(np.asarray(columns[n], dtype=np.float64), Kind.NUMERIC, n)
             for n in names}
    pairs = canonical_pairs((names[a], names[b]) for a in range(len(names))
                            for b in range(a + 1, len(names)))
    n_pairs = len(pairs)
    mi_cache: dict = {}
    out = {}
    for fname in functions:
        text, fn = TARGET_FUNCTIONS[fname]
        ranks = []
        for pair in pairs:
            x, y = views[pair[0]].values, views[pair[1]].values
            target = VariableView(fn(x, y), Kind.NUMERIC, f"{fname}{pair}")
            ranked = pairwise_ii(pairs, views, target, cfg, mi_cache=mi_cache)
            ranks.append(next(r for r, e in enumerate(ranked) if e.pair == pair))
        top = n_pairs * 0.2
        out[fname] = {
            "expression": text,
            "pairs": [list(p) for p in pairs],
            "ranks": ranks,
            "histogram": np.bincount(ranks, minlength=n_pairs).tolist(),
            "fraction_top_20_percent": float(np.mean(np.asarray(ranks) < top)),
        }
    return {"n_features": len(names), "features": names, "n_pairs": n_pairs, "functions": out}


def cmd_verify_ii(data_path, output_path, functions=tuple(TARGET_FUNCTIONS),
                  cfg: EstimatorConfig = EstimatorConfig(), max_cat_card: int = 20,
                  schema=None) -> int:
    start = time.perf_counter()
    table = load_csv(data_path, None, None, max_cat_card, schema)
    numeric = {c.name: c.values for c in table.columns if c.kind is Kind.NUMERIC}
    if len(numeric) < 4:
        warnings.warn(f"only {len(numeric)} numeric features; rank histograms will be coarse")
    result = verify_ii(numeric, functions, cfg)
    report = {"artifact": ARTIFACT,
              "config": {"data": str(data_path), "functions": list(functions), **asdict(cfg)}}
    report.update(result)
    report["timing"] = {"total_seconds": time.perf_counter() - start}
    write_json(output_path, report)
    return EXIT_OK


def cmd_expand_reduce_bench(cfg: RunConfig, factors=(1.0, 5.0), max_selected: int = 10) -> int:
    start = time.perf_counter()
    cfg.validate()
    train, test, ev, raw = _prepare_run(cfg)
    rows = []
    for factor in factors:
        res = expand_reduce(train, ev, factor, cfg.engine_config(), max_selected)
        feats = raw + [parse_expr(s) for s in res.selected]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            test_score = holdout_score(feats, train, test, ev.model, ev.metric)
        row = res.to_dict()
        row["test_score"] = test_score
        rows.append(row)
    ref = rows[0]
    for row in rows:
        row["candidate_fraction"] = row["n_candidates"] / max(ref["n_candidates"], 1)
        row["evaluation_fraction"] = row["n_evaluations"] / max(ref["n_evaluations"], 1)
    report = _header(cfg)
    report["filter_factors"] = list(map(float, factors))
    report["metric"] = ev.metric
    report["results"] = [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]
    report["timing"] = {
        "wall_time": [r["wall_time"] for r in rows],
        "time_ratio": [r["wall_time"] / ref["wall_time"] for r in rows],
        "total_seconds": time.perf_counter() - start,
    }
    write_json(cfg.output, report)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--data")
    p.add_argument("--target")
    p.add_argument("--task", choices=[t.value for t in TaskKind])
    p.add_argument("--schema", help="JSON sidecar {\"columns\": {name: kind}}")
    p.add_argument("--max-cat-card", type=int)
    p.add_argument("--model", choices=["lasso", "logreg"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--C", dest="C", type=float)
    p.add_argument("--model-max-iterations", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--K", "-K", dest="K", type=int)
    p.add_argument("--P", "-P", dest="P", type=int)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--knn-k", type=int)
    p.add_argument("--subsample-size", type=int)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--prefilter", type=int)
    p.add_argument("--max-order", type=int)
    p.add_argument("--eval-subsample-factor", type=float)
    p.add_argument("--drop-division-ops", action="store_const", const=True)
    p.add_argument("--tune", action="store_const", const=True)
    p.add_argument("--output", "-o")
    p.add_argument("--features-output")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synergyfe", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    _config_flags(sub.add_parser("run", help="engineer features and report test scores"))

    p = sub.add_parser("transform", help="append saved features to a CSV file")
    p.add_argument("features")
    p.add_argument("data")
    p.add_argument("output")
    p.add_argument("--schema")
    p.add_argument("--max-cat-card", type=int, default=20)

    p = sub.add_parser("verify-ii", help="rank planted pairs by interaction information")
    p.add_argument("data")
    p.add_argument("--output", "-o", default="verify_ii.json")
    p.add_argument("--functions", default=",".join(TARGET_FUNCTIONS),
                   help=f"comma-separated subset of {', '.join(TARGET_FUNCTIONS)}")
    p.add_argument("--knn-k", type=int, default=3)
    p.add_argument("--subsample-size", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schema")
    p.add_argument("--max-cat-card", type=int, default=20)

    p = sub.add_parser("expand-reduce-bench", help="expand-reduce with and without filtering")
    _config_flags(p)
    p.add_argument("--filter-factors", type=_floats, default=[1.0, 5.0])
    p.add_argument("--max-selected", type=int, default=10)
    return parser


_NOT_CONFIG = {"command", "config", "filter_factors", "max_selected"}


def _run_config(args) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    return RunConfig.from_sources(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_run_config(args))
        if args.command == "transform":
            return cmd_transform(args.features, args.data, args.output, args.schema,
                                 args.max_cat_card)
        if args.command == "verify-ii":
            cfg = EstimatorConfig(args.knn_k, args.subsample_size, args.seed)
            funcs = [f.strip() for f in args.functions.split(",") if f.strip()]
            return cmd_verify_ii(args.data, args.output, funcs, cfg, args.max_cat_card,
                                 args.schema)
        if args.command == "expand-reduce-bench":
            if any(f < 1 for f in args.filter_factors) or not args.filter_factors:
                raise ConfigError("filter factors must be >= 1")
            return cmd_expand_reduce_bench(_run_config(args), args.filter_factors,
                                           args.max_selected)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ExprError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
