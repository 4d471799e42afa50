"""Downstream linear models, scoring metrics and the cross-validation
evaluator used to judge feature sets.

Every preprocessing state (expression fits, one-hot encoders, min-max
scalers) is learned on the training part of a fold only.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numba
import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .featurelang import (
    ColumnRef,
    FeatureExpr,
    FittedExpr,
    eval_expr,
    fit_eval,
    fit_transform,
    render_expr,
    subtree_keys,
)
from .tabular import (
    DataError,
    EncoderState,
    FoldPlan,
    Kind,
    ScalerState,
    Table,
    TaskKind,
    apply_minmax,
    apply_onehot,
    fit_minmax,
    fit_onehot,
)


class ConvergenceWarning(RuntimeWarning):
    pass


class FoldWarning(RuntimeWarning):
    """A fold could not be trained or scored; the metric floor was used."""


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "lasso"
    alpha: float = 0.001
    C: float = 1.0
    max_iterations: int = 1000
    tol: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("lasso", "logreg"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not self.C > 0:
            raise ValueError("C must be > 0")

    @classmethod
    def for_task(cls, task, **kw) -> "ModelSpec":
        kind = "logreg" if TaskKind(task) is TaskKind.CLASSIFICATION else "lasso"
        return cls(kind=kind, **kw)

    @property
    def task(self) -> TaskKind:
        return TaskKind.CLASSIFICATION if self.kind == "logreg" else TaskKind.REGRESSION

    def with_strength(self, value: float) -> "ModelSpec":
        return replace(self, **{"alpha" if self.kind == "lasso" else "C": float(value)})

    @property
    def strength(self) -> float:
        return self.alpha if self.kind == "lasso" else self.C


@dataclass
class FitResult:
    coef: np.ndarray
    intercept: np.ndarray | float
    classes: tuple | None = None
    converged: bool = True
    n_iter: int = 0

    def decision_function(self, X):
        return np.asarray(X) @ self.coef.T + self.intercept

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        if self.classes is None:
            return X @ self.coef + self.intercept
        if len(self.classes) == 1:
            return np.full(len(X), self.classes[0], dtype=object)
        scores = self.decision_function(X)
        if len(self.classes) == 2:
            idx = (scores[:, 0] > 0).astype(int)
        else:
            idx = np.argmax(scores, axis=1)
        return np.asarray(self.classes, dtype=object)[idx]


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@numba.njit(cache=True)
def _lasso_cd(G, c, alpha, max_iter, tol):
    p = G.shape[0]
    beta = np.zeros(p)
    Gb = np.zeros(p)
    resid = np.inf
    for it in range(1, max_iter + 1):
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            rho = c[j] - Gb[j] + gjj * beta[j]
            if rho > alpha:
                new = (rho - alpha) / gjj
            elif rho < -alpha:
                new = (rho + alpha) / gjj
            else:
                new = 0.0
            delta = new - beta[j]
            if delta != 0.0:
                beta[j] = new
                for q in range(p):
                    Gb[q] += G[q, j] * delta
        resid = 0.0
        for j in range(p):
            if G[j, j] <= 0.0:
                continue
            g = c[j] - Gb[j]
            if beta[j] > 0.0:
                r = abs(g - alpha)
            elif beta[j] < 0.0:
                r = abs(g + alpha)
            else:
                r = max(0.0, abs(g) - alpha)
            if r > resid:
                resid = r
        if resid <= tol:
            return beta, it, True
    return beta, max_iter, False


def lasso_kkt_residual(X, y, fit: FitResult, alpha: float) -> np.ndarray:
    """Per-coordinate violation of the Lasso optimality conditions."""
    X = np.asarray(X, dtype=np.float64)
    n = len(y)
    g = X.T @ (np.asarray(y) - X @ fit.coef - fit.intercept) / n
    b = fit.coef
    r = np.where(b != 0, np.abs(g - alpha * np.sign(b)), np.maximum(np.abs(g) - alpha, 0.0))
    return np.where(X.std(0) > 0, r, 0.0)


def train_lasso(X, y, alpha: float, max_iterations: int = 1000, tol: float = 1e-6) -> FitResult:
    """Coordinate descent on ``(1/2n)||y - X b - b0||^2 + alpha ||b||_1``.

    The intercept is unpenalised; iteration stops once every coordinate's
    KKT residual is at most ``tol``. On hitting ``max_iterations`` the last
    iterate is returned with ``converged=False`` and a warning.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per target value")
    n, p = X.shape
    x_mean, y_mean = X.mean(0), y.mean()
    if p == 0:
        return FitResult(np.zeros(0), y_mean)
    Xc = X - x_mean
    G = Xc.T @ Xc / n
    c = Xc.T @ (y - y_mean) / n
    beta, n_iter, ok = _lasso_cd(G, c, float(alpha), int(max_iterations), float(tol))
    if not ok:
        warnings.warn(f"lasso did not converge in {max_iterations} sweeps", ConvergenceWarning,
                      stacklevel=2)
    return FitResult(beta, float(y_mean - x_mean @ beta), converged=ok, n_iter=n_iter)


def logistic_loss_grad(params, X, t, C):
    """Mean cross-entropy plus ``||w||^2 / (2 C n)`` and its gradient.

    ``params`` is ``[w..., b]``; ``t`` holds 0/1 targets.
    """
    n = len(t)
    w, b = params[:-1], params[-1]
    z = X @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - t * z) + w @ w / (2.0 * C * n)
    err = expit(z) - t
    grad = np.empty_like(params)
    grad[:-1] = X.T @ err / n + w / (C * n)
    grad[-1] = err.mean()
    return loss, grad


def _binary_logreg(X, t, C, max_iterations, tol):
    x0 = np.zeros(X.shape[1] + 1)
    res = minimize(logistic_loss_grad, x0, args=(X, t, C), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iterations, "gtol": tol})
    return res.x, bool(res.success), int(res.nit)


def train_logreg(X, y, C: float = 1.0, max_iterations: int = 1000, tol: float = 1e-6) -> FitResult:
    """L2-regularised logistic regression; one-vs-rest for 3+ classes."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=object)
    classes = tuple(sorted(set(y.tolist())))
    p = X.shape[1]
    if len(classes) == 1:
        warnings.warn("single class in training data; predicting it constantly",
                      ConvergenceWarning, stacklevel=2)
        return FitResult(np.zeros((1, p)), np.zeros(1), classes)
    targets = [classes[1]] if len(classes) == 2 else list(classes)
    coefs, intercepts, ok, iters = [], [], True, 0
    for cls in targets:
        params, conv, nit = _binary_logreg(X, (y == cls).astype(np.float64), C, max_iterations, tol)
        coefs.append(params[:-1])
        intercepts.append(params[-1])
        ok &= conv
        iters = max(iters, nit)
    if not ok:
        warnings.warn("logistic regression did not converge", ConvergenceWarning, stacklevel=2)
    return FitResult(np.array(coefs), np.array(intercepts), classes, ok, iters)


def train_model(spec: ModelSpec, X, y) -> FitResult:
    if spec.kind == "lasso":
        return train_lasso(X, y, spec.alpha, spec.max_iterations, spec.tol)
    return train_logreg(X, y, spec.C, spec.max_iterations, spec.tol)


# --------------------------------------------------------------------------
# metrics


def metric_f1_micro(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=object)
    y_pred = np.asarray(y_pred, dtype=object)
    if len(y_true) == 0 or len(y_true) != len(y_pred):
        raise ValueError("f1_micro needs two non-empty label vectors of equal length")
    tp = fp = fn = 0
    for cls in set(y_true.tolist()) | set(y_pred.tolist()):
        t, p = y_true == cls, y_pred == cls
        tp += int(np.sum(t & p))
        fp += int(np.sum(~t & p))
        fn += int(np.sum(t & ~p))
    return 2.0 * tp / (2.0 * tp + fp + fn)


def metric_one_minus_rae(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if len(y_true) == 0 or len(y_true) != len(y_pred):
        raise ValueError("1-RAE needs two non-empty vectors of equal length")
    denom = np.abs(y_true - y_true.mean()).sum()
    if denom == 0:
        raise DataError("1-RAE is undefined for a constant target")
    return 1.0 - np.abs(y_true - y_pred).sum() / denom


METRICS = {"f1_micro": metric_f1_micro, "one_minus_rae": metric_one_minus_rae}
METRIC_FLOOR = 0.0


def metric_for(task) -> str:
    return "f1_micro" if TaskKind(task) is TaskKind.CLASSIFICATION else "one_minus_rae"


# --------------------------------------------------------------------------
# preprocessing pipeline


@dataclass
class Pipeline:
    """Fitted per-feature transforms plus a min-max scaler over the numeric
    block. Categorical original columns are one-hot encoded and not scaled."""

    features: list
    fitted: list = field(default_factory=list)
    scaler: ScalerState | None = None

    @property
    def encoders(self) -> list[EncoderState]:
        return [f for f in self.fitted if isinstance(f, EncoderState)]

    @property
    def fitted_exprs(self) -> list[FittedExpr]:
        return [f for f in self.fitted if isinstance(f, FittedExpr)]

    def transform(self, rows: Table) -> np.ndarray:
        num, cat = [], []
        for feat, fit in zip(self.features, self.fitted):
            if isinstance(fit, EncoderState):
                cat.append(apply_onehot(fit, rows.column(feat.name).values))
            elif fit is None:
                num.append(rows.column(feat.name).values)
            else:
                num.append(eval_expr(fit, rows))
        return _assemble(self.scaler, num, cat, rows.n_rows)


def _assemble(scaler, num, cat, n):
    blocks = []
    if num:
        blocks.append(apply_minmax(scaler, np.column_stack(num)))
    blocks += cat
    return np.hstack(blocks) if blocks else np.zeros((n, 0))


def _is_raw(feat, kinds, kind):
    return isinstance(feat, ColumnRef) and kinds[feat.name] is kind


def fit_pipeline(features: Sequence[FeatureExpr], train: Table) -> tuple[Pipeline, np.ndarray]:
    """Fit all preprocessing on ``train``; returns the pipeline and the
    transformed training matrix."""
    kinds = train.kinds
    fitted, num, cat = [], [], []
    for feat in features:
        if _is_raw(feat, kinds, Kind.CATEGORICAL):
            enc = fit_onehot(train.column(feat.name).values)
            fitted.append(enc)
            cat.append(apply_onehot(enc, train.column(feat.name).values))
        elif _is_raw(feat, kinds, Kind.NUMERIC):
            fitted.append(None)
            num.append(train.column(feat.name).values)
        else:
            fe, values = fit_eval(feat, train)
            fitted.append(fe)
            num.append(values)
    scaler = fit_minmax(np.column_stack(num)) if num else None
    pipe = Pipeline(list(features), fitted, scaler)
    return pipe, _assemble(scaler, num, cat, train.n_rows)


class FoldCache:
    """Memoises per-fold, per-feature scaled blocks for one table and fold
    plan. Min-max scaling and one-hot encoding act column by column, so a
    feature's block does not depend on the rest of the feature set."""

    def __init__(self, table: Table, folds: FoldPlan):
        self.table = table
        self.folds = folds
        self._splits = [(table.take(tr), table.take(te), tr, te) for tr, te in folds]
        self._blocks: dict = {}
        self._memo = [{} for _ in range(folds.k)]

    def split(self, fold: int):
        return self._splits[fold]

    def blocks(self, fold: int, feat: FeatureExpr):
        key = (fold, render_expr(feat))
        got = self._blocks.get(key)
        if got is None:
            train, test, _, _ = self._splits[fold]
            if isinstance(feat, ColumnRef):
                pipe, xtr = fit_pipeline([feat], train)
                got = (xtr, pipe.transform(test))
            else:
                # subtrees shared between candidates are fitted once per fold
                _, (vtr, vte) = fit_transform(feat, train, test, memo=self._memo[fold])
                scaler = fit_minmax(vtr)
                got = (apply_minmax(scaler, vtr[:, None]), apply_minmax(scaler, vte[:, None]))
            self._blocks[key] = got
        return got

    def discard(self, keep: Sequence[FeatureExpr]):
        keep_keys = {render_expr(f) for f in keep}
        self._blocks = {k: v for k, v in self._blocks.items() if k[1] in keep_keys}
        live = set().union(*(subtree_keys(f) for f in keep)) if keep else set()
        self._memo = [{k: v for k, v in m.items() if k in live} for m in self._memo]


# --------------------------------------------------------------------------
# evaluator


@dataclass(frozen=True)
class Evaluator:
    model: ModelSpec
    folds: FoldPlan
    metric: str
    drop_division_ops: bool = False

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if metric_for(self.model.task) != self.metric:
            raise ValueError(f"metric {self.metric} does not match model {self.model.kind}")

    def with_model(self, model: ModelSpec) -> "Evaluator":
        return replace(self, model=model)


def _fit_and_score(model: ModelSpec, metric: str, xtr, ytr, xte, yte) -> float:
    try:
        fit = train_model(model, xtr, ytr)
        return float(METRICS[metric](yte, fit.predict(xte)))
    except (ValueError, np.linalg.LinAlgError) as exc:
        warnings.warn(f"fold failed ({exc}); using metric floor", FoldWarning, stacklevel=3)
        return METRIC_FLOOR


def cross_validate(features: Sequence[FeatureExpr], t: Table, ev: Evaluator,
                   cache: FoldCache | None = None, return_folds: bool = False):
    """Mean held-out score of ``ev.model`` trained on ``features``.

    For every fold, expression states, encoders and scalers are fitted on
    the training rows only, then applied to the held-out rows.
    """
    if len(ev.folds.assignments) != t.n_rows:
        raise ValueError("fold plan does not match the table size")
    scores = []
    y = t.y
    for fold, (tr, te) in enumerate(ev.folds):
        if cache is not None:
            if cache.table is not t or cache.folds is not ev.folds:
                raise ValueError("cache was built for a different table or fold plan")
            # same column layout as fit_pipeline: numeric blocks, then one-hots
            kinds = t.kinds
            ordered = sorted(features, key=lambda f: _is_raw(f, kinds, Kind.CATEGORICAL))
            parts = [cache.blocks(fold, f) for f in ordered]
            xtr = np.hstack([p[0] for p in parts]) if parts else np.zeros((len(tr), 0))
            xte = np.hstack([p[1] for p in parts]) if parts else np.zeros((len(te), 0))
        else:
            pipe, xtr = fit_pipeline(features, t.take(tr))
            xte = pipe.transform(t.take(te))
        scores.append(_fit_and_score(ev.model, ev.metric, xtr, y[tr], xte, y[te]))
    mean = float(np.mean(scores))
    return (mean, scores) if return_folds else mean


def holdout_score(features: Sequence[FeatureExpr], train: Table, test: Table,
                  model: ModelSpec, metric: str) -> float:
    """Fit preprocessing and model on ``train`` and score on ``test``."""
    pipe, xtr = fit_pipeline(features, train)
    return _fit_and_score(model, metric, xtr, train.y, pipe.transform(test), test.y)


def tuning_grid(model: ModelSpec, size: int = 5) -> list[ModelSpec]:
    """Log-spaced regularisation strengths over [1e-5, 100]."""
    return [model.with_strength(v) for v in np.logspace(-5, 2, size)]


def tune(features: Sequence[FeatureExpr], t: Table, ev: Evaluator,
         cache: FoldCache | None = None) -> tuple[ModelSpec, float]:
    """Grid search the regularisation strength; first best value wins."""
    best, best_score = ev.model, -np.inf
    for spec in tuning_grid(ev.model):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            score = cross_validate(features, t, ev.with_model(spec), cache)
        if score > best_score:
            best, best_score = spec, score
    return best, best_score
