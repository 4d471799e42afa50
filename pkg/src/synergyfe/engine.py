"""Greedy interaction-information-guided feature construction.

Each iteration expands the K most synergistic feature pairs with every
applicable bivariate operator, keeps the candidate with the best
cross-validated score, then tries the unary operators on it and adds the
best variant to the pool. Pairs involving the new feature are scored and
merged into the pair table, so later iterations can build on earlier
features.
"""
from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .downstream import ConvergenceWarning, Evaluator, FoldCache, cross_validate
from .featurelang import (
    ColumnRef,
    FeatureExpr,
    OperatorSets,
    bivariate_candidates,
    fit_eval,
    order,
    render_expr,
    univariate_candidates,
)
from .infotheory import (
    EstimatorConfig,
    IIEntry,
    VariableView,
    n_threads,
    pairwise_ii,
    prefilter_features,
    ranking_key,
    target_view,
)
from .tabular import Kind, Table, make_folds


class EngineError(RuntimeError):
    """A fatal error inside a run; ``report`` holds the partial result."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class EngineConfig:
    K: int = 3
    P: int = 20
    max_iterations: int = 100
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    seed: int = 0
    prefilter: int | None = None
    max_order: int | None = None
    eval_subsample_factor: float | None = None
    drop_division_ops: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.P < 2 or self.P % 2:
            raise ValueError(f"patience P must be an even number >= 2, got {self.P}")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.max_order is not None and self.max_order < 2:
            raise ValueError("max_order must be >= 2")
        if self.eval_subsample_factor is not None and self.eval_subsample_factor < 1:
            raise ValueError("eval_subsample_factor must be >= 1")

    @property
    def operators(self) -> OperatorSets:
        return OperatorSets.default(self.drop_division_ops)


def stop_condition(S, P: int, c: int | None = None) -> bool:
    """True once the mean of the last P/2 scores no longer exceeds the
    mean of the P/2 scores before them."""
    if P < 2 or P % 2:
        raise ValueError(f"patience P must be an even number >= 2, got {P}")
    c = len(S) if c is None else c
    if c != len(S):
        raise ValueError("iteration count must equal the number of scores")
    if c < P:
        return False
    half = P // 2
    recent = np.mean(S[c - half:c])
    before = np.mean(S[c - P:c - half])
    return bool(recent - before <= 0)


@dataclass
class EngineState:
    pool: list
    views: list
    ii: list
    n_original: int
    history: list = field(default_factory=list)
    c: int = 0
    added: list = field(default_factory=list)
    n_evaluations: int = 0

    @property
    def rendered(self) -> set:
        return {render_expr(f) for f in self.pool}


@dataclass
class RunReport:
    baseline_cv: float
    history: list
    features: list
    n_evaluations: int = 0
    test_score: float | None = None
    baseline_test: float | None = None
    seed: int = 0
    wall_time: float = 0.0
    base_features: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _feature_view(expr: FeatureExpr, t: Table) -> VariableView:
    if isinstance(expr, ColumnRef):
        return VariableView.from_column(t.column(expr.name))
    _, values = fit_eval(expr, t)
    return VariableView(values, Kind.NUMERIC, render_expr(expr))


def _score_pairs(pairs, views, t, cfg) -> list[IIEntry]:
    return pairwise_ii(pairs, dict(enumerate(views)), target_view(t), cfg.estimator)


def init(t: Table, cfg: EngineConfig) -> EngineState:
    """Pool of original features plus interaction information for all pairs."""
    names = t.feature_names
    if cfg.prefilter is not None:
        names = prefilter_features(t, cfg.prefilter, cfg.estimator)
    if len(names) < 2:
        raise ValueError("need at least two features")
    pool = [ColumnRef(n) for n in names]
    views = [_feature_view(f, t) for f in pool]
    pairs = [(i, j) for i in range(len(pool)) for j in range(i + 1, len(pool))]
    return EngineState(pool, views, _score_pairs(pairs, views, t, cfg), len(pool))


def _score_all(feature_sets, t, ev, cache) -> list[float]:
    def one(fs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            return cross_validate(fs, t, ev, cache)

    workers = min(n_threads(), len(feature_sets))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(one, feature_sets))
    return [one(fs) for fs in feature_sets]


def _eval_context(t: Table, ev: Evaluator, cfg: EngineConfig, state: EngineState, cache):
    if not cfg.eval_subsample_factor or cfg.eval_subsample_factor == 1:
        return t, ev, cache
    rng = np.random.default_rng([cfg.seed, state.c])
    m = max(ev.folds.k, int(t.n_rows / cfg.eval_subsample_factor))
    rows = np.sort(rng.choice(t.n_rows, size=m, replace=False))
    sub = t.take(rows)
    folds = make_folds(m, ev.folds.k, cfg.seed + state.c)
    sub_ev = Evaluator(ev.model, folds, ev.metric, ev.drop_division_ops)
    return sub, sub_ev, FoldCache(sub, folds)


def _drop_over_order(state: EngineState, cfg: EngineConfig):
    if cfg.max_order is None:
        return
    orders = [order(f) for f in state.pool]
    state.ii = [e for e in state.ii if orders[e.i] + orders[e.j] <= cfg.max_order]


def iterate_once(state: EngineState, t: Table, cfg: EngineConfig, ev: Evaluator,
                 cache: FoldCache | None = None) -> EngineState:
    """One greedy step; mutates and returns ``state``."""
    _drop_over_order(state, cfg)
    if not state.ii:
        raise ValueError("interaction table is empty")
    kinds = t.kinds
    ops = cfg.operators
    existing = state.rendered
    et, eev, ecache = _eval_context(t, ev, cfg, state, cache)

    top = state.ii[:cfg.K]
    cands, origin, seen = [], [], set(existing)
    for entry in top:
        for cand in bivariate_candidates(state.pool[entry.i], state.pool[entry.j], kinds, ops):
            key = render_expr(cand)
            if key in seen:
                continue
            seen.add(key)
            cands.append(cand)
            origin.append(entry)
    if not cands:
        state.ii.remove(top[0])
        return state

    scores = _score_all([state.pool + [c] for c in cands], et, eev, ecache)
    best = int(np.argmax(scores))
    winner, pair = cands[best], origin[best]

    unis = [u for u in univariate_candidates(winner, ops) if render_expr(u) not in existing]
    uscores = _score_all([state.pool + [u] for u in unis], et, eev, ecache)
    chosen = unis[int(np.argmax(uscores))]
    state.n_evaluations += len(cands) + len(unis)

    state.pool.append(chosen)
    state.views.append(_feature_view(chosen, t))
    score = _score_all([state.pool], et, eev, ecache)[0]
    state.history.append(score)
    state.c += 1
    state.added.append({"expr": render_expr(chosen), "order": order(chosen), "cv_after": score})

    state.ii.remove(pair)
    new = len(state.pool) - 1
    fresh = _score_pairs([(i, new) for i in range(new)], state.views, t, cfg)
    state.ii = sorted(state.ii + fresh, key=ranking_key)
    return state


def run(t_train: Table, cfg: EngineConfig, ev: Evaluator) -> RunReport:
    """Iterate until the stop condition, ``max_iterations`` or an empty
    pair table; returns the engineered features and score history."""
    start = time.perf_counter()
    state = init(t_train, cfg)
    cache = FoldCache(t_train, ev.folds)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        baseline = cross_validate(state.pool, t_train, ev, cache)

    def report():
        return RunReport(baseline, list(state.history), list(state.added),
                         state.n_evaluations, seed=cfg.seed,
                         wall_time=time.perf_counter() - start,
                         base_features=[f.name for f in state.pool[:state.n_original]])

    try:
        while (state.c < cfg.max_iterations and state.ii
               and not stop_condition(state.history, cfg.P, state.c)):
            iterate_once(state, t_train, cfg, ev, cache)
            cache.discard(state.pool)
    except Exception as exc:
        raise EngineError(f"engine failed at iteration {state.c}: {exc}", report()) from exc
    return report()


def engineered_features(report: RunReport) -> list:
    from .featurelang import parse_expr

    return [parse_expr(f["expr"]) for f in report.features]


# --------------------------------------------------------------------------
# expand-reduce baseline


@dataclass
class ExpandReduceReport:
    filter_factor: float
    n_pairs: int
    n_candidates: int
    n_evaluations: int
    baseline_cv: float
    cv_score: float
    selected: list
    wall_time: float

    def to_dict(self) -> dict:
        return asdict(self)


def expand_reduce(t: Table, ev: Evaluator, filter_factor: float = 1.0,
                  cfg: EngineConfig = EngineConfig(), max_selected: int = 10) -> ExpandReduceReport:
    """Order-2 expand-reduce with optional interaction-information filtering.

    All bivariate candidates of the retained pairs are generated; forward
    selection then repeatedly adds the candidate with the best CV score
    (first one on ties) while it strictly improves on the current score.
    With ``filter_factor > 1`` only the top ``ceil(pairs / filter_factor)``
    pairs by interaction information are expanded.
    """
    if filter_factor < 1:
        raise ValueError("filter_factor must be >= 1")
    start = time.perf_counter()
    names = t.feature_names
    base = [ColumnRef(n) for n in names]
    pairs = [(i, j) for i in range(len(base)) for j in range(i + 1, len(base))]
    if filter_factor > 1:
        keep = math.ceil(len(pairs) / filter_factor)
        views = [_feature_view(f, t) for f in base]
        pairs = [e.pair for e in _score_pairs(pairs, views, t, cfg)[:keep]]
    kinds = t.kinds
    cands = [c for i, j in pairs
             for c in bivariate_candidates(base[i], base[j], kinds, cfg.operators)]

    cache = FoldCache(t, ev.folds)
    current = _score_all([base], t, ev, cache)[0]
    baseline = current
    selected, remaining, n_eval = [], list(cands), 0
    while remaining and len(selected) < max_selected:
        scores = _score_all([base + selected + [c] for c in remaining], t, ev, cache)
        n_eval += len(remaining)
        best = int(np.argmax(scores))
        if not scores[best] > current:
            break
        current = scores[best]
        selected.append(remaining.pop(best))
    return ExpandReduceReport(
        float(filter_factor), len(pairs), len(cands), n_eval, baseline, current,
        [render_expr(c) for c in selected], time.perf_counter() - start)
