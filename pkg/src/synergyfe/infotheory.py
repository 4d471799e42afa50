"""Nearest-neighbour estimators of mutual information, conditional mutual
information and interaction information for mixed discrete/continuous data.

Distances are max-norm. Numeric coordinates are standardised over the
(sub)sample; categorical coordinates contribute 0 when equal and 1 otherwise.
When several points tie at the k-th neighbour radius all of them are counted
(Mesner & Shalizi), which makes the estimators reduce to plug-in estimates on
purely discrete data.

References
----------
Kraskov, Stögbauer & Grassberger (2004), Estimating mutual information.
Frenzel & Pompe (2007), Partial mutual information for coupling analysis.
Mesner & Shalizi (2021), Conditional mutual information estimation for
mixed, discrete and continuous data.
"""
from __future__ import annotations

import os
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping

import numba
import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .tabular import Column, Kind, Table, category_codes


class DegenerateVariableWarning(RuntimeWarning):
    """A variable was constant on the sample used for estimation."""


@dataclass(frozen=True)
class VariableView:
    values: np.ndarray
    kind: Kind = Kind.NUMERIC
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        dtype = np.float64 if self.kind is Kind.NUMERIC else object
        object.__setattr__(self, "values", np.asarray(self.values, dtype=dtype))

    def __len__(self):
        return len(self.values)

    @classmethod
    def from_column(cls, col: Column) -> "VariableView":
        return cls(col.values, col.kind, col.name)


@dataclass(frozen=True)
class EstimatorConfig:
    k: int = 3
    subsample_size: int = 3000
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.subsample_size < 10 * self.k:
            raise ValueError("subsample_size must be at least 10*k")


@dataclass(frozen=True, order=True)
class IIEntry:
    tau: float
    i: Hashable
    j: Hashable

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("an interaction pair needs two distinct features")
        if _sort_key(self.j) < _sort_key(self.i):
            i, j = self.j, self.i
            object.__setattr__(self, "i", i)
            object.__setattr__(self, "j", j)

    @property
    def pair(self):
        return (self.i, self.j)


def _sort_key(ident):
    # mixed int/str identifiers still sort deterministically
    return (type(ident).__name__, ident)


def ranking_key(e: IIEntry):
    return (-e.tau, _sort_key(e.i), _sort_key(e.j))


# --------------------------------------------------------------------------
# plug-in (exact) estimators on discrete data


def plugin_entropy(*views) -> float:
    """Shannon entropy (nats) of the empirical joint of categorical views."""
    if not views or len(views[0]) == 0:
        raise ValueError("plugin_entropy needs at least one non-empty variable")
    n = len(views[0])
    cols = [np.asarray(getattr(v, "values", v), dtype=object) for v in views]
    if any(len(c) != n for c in cols):
        raise ValueError("variables must have equal length")
    counts = np.array(list(Counter(zip(*cols)).values()), dtype=np.float64)
    p = counts / n
    return float(-(p * np.log(p)).sum())


def plugin_mi(x, y) -> float:
    return plugin_entropy(x) + plugin_entropy(y) - plugin_entropy(x, y)


def plugin_cmi(x, y, z) -> float:
    return (plugin_entropy(x, z) + plugin_entropy(y, z)
            - plugin_entropy(z) - plugin_entropy(x, y, z))


def plugin_interaction_information(fi, fj, y) -> float:
    """H(i,j)+H(j,y)+H(i,y)-H(i)-H(j)-H(y)-H(i,j,y)."""
    H = plugin_entropy
    return (H(fi, fj) + H(fj, y) + H(fi, y)
            - H(fi) - H(fj) - H(y) - H(fi, fj, y))


# --------------------------------------------------------------------------
# neighbour search; kernels expect rows sorted by column 0, which is numeric

ONEHOT_LIMIT = 16


@numba.njit(cache=True, nogil=True)
def _dist(data, cat, i, j):
    d = 0.0
    for c in range(data.shape[1]):
        if cat[c]:
            v = 0.0 if data[i, c] == data[j, c] else 1.0
        else:
            v = abs(data[i, c] - data[j, c])
        if v > d:
            d = v
    return d


@numba.njit(cache=True, nogil=True)
def _kth_radius_sorted(data, cat, k):
    n = data.shape[0]
    out = np.empty(n)
    best = np.empty(k)
    for i in range(n):
        best[:] = np.inf
        j = i - 1
        while j >= 0 and data[i, 0] - data[j, 0] <= best[k - 1]:
            d = _dist(data, cat, i, j)
            if d < best[k - 1]:
                pos = k - 1
                while pos > 0 and best[pos - 1] > d:
                    best[pos] = best[pos - 1]
                    pos -= 1
                best[pos] = d
            j -= 1
        j = i + 1
        while j < n and data[j, 0] - data[i, 0] <= best[k - 1]:
            d = _dist(data, cat, i, j)
            if d < best[k - 1]:
                pos = k - 1
                while pos > 0 and best[pos - 1] > d:
                    best[pos] = best[pos - 1]
                    pos -= 1
                best[pos] = d
            j += 1
        out[i] = best[k - 1]
    return out


@numba.njit(cache=True, nogil=True)
def _count_within_mixed(data, cat, radius):
    n = data.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        r = radius[i]
        cnt = 0
        j = i - 1
        while j >= 0 and data[i, 0] - data[j, 0] <= r:
            if _dist(data, cat, i, j) <= r:
                cnt += 1
            j -= 1
        j = i + 1
        while j < n and data[j, 0] - data[i, 0] <= r:
            if _dist(data, cat, i, j) <= r:
                cnt += 1
            j += 1
        out[i] = cnt
    return out


@numba.njit(cache=True, nogil=True)
def _count_within_numeric(data, radius):
    n, d = data.shape
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        r = radius[i]
        x0 = data[i, 0]
        cnt = 0
        j = i - 1
        while j >= 0 and x0 - data[j, 0] <= r:
            inside = True
            for q in range(1, d):
                if abs(data[i, q] - data[j, q]) > r:
                    inside = False
                    break
            if inside:
                cnt += 1
            j -= 1
        j = i + 1
        while j < n and data[j, 0] - x0 <= r:
            inside = True
            for q in range(1, d):
                if abs(data[i, q] - data[j, q]) > r:
                    inside = False
                    break
            if inside:
                cnt += 1
            j += 1
        out[i] = cnt
    return out


@numba.njit(cache=True, nogil=True)
def _count_within_1d(x, radius):
    # x sorted; rounded differences are monotone in x[j], so bisect on them
    n = x.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        r = radius[i]
        lo, hi = 0, i
        while lo < hi:
            mid = (lo + hi) // 2
            if x[i] - x[mid] <= r:
                hi = mid
            else:
                lo = mid + 1
        left = lo
        lo, hi = i, n
        while lo < hi:
            mid = (lo + hi) // 2
            if x[mid] - x[i] <= r:
                lo = mid + 1
            else:
                hi = mid
        out[i] = lo - left - 1
    return out


def _duplicate_counts(data: np.ndarray) -> np.ndarray:
    """For each row, how many other rows are identical."""
    _, inverse, counts = np.unique(data, axis=0, return_inverse=True, return_counts=True)
    return counts[inverse.ravel()] - 1


def _with_numeric_first(data, cat):
    numeric = np.flatnonzero(~cat)
    order = np.r_[numeric[0], np.delete(np.arange(data.shape[1]), numeric[0])]
    data = data[:, order]
    rows = np.argsort(data[:, 0], kind="stable")
    return np.ascontiguousarray(data[rows]), np.ascontiguousarray(cat[order]), rows


def _onehot_embedding(data, cat):
    parts = []
    for c in range(data.shape[1]):
        if cat[c]:
            levels, codes = np.unique(data[:, c], return_inverse=True)
            parts.append(np.eye(len(levels))[codes.ravel()])
        else:
            parts.append(data[:, c:c + 1])
    return np.hstack(parts)


def kth_neighbor_radius(data: np.ndarray, cat: np.ndarray, k: int) -> np.ndarray:
    """Max-norm distance from each row to its k-th nearest other row."""
    return _radius_and_count(data, cat, k)[0]


def _radius_and_count(data, cat, k):
    """k-th neighbour radius and the number of other rows within it.

    The count exceeds k only when neighbours tie at the radius; the tree
    query fetches one extra neighbour so that ties are detected without a
    separate counting pass.
    """
    n = data.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    if cat.all():
        dup = _duplicate_counts(data)
        rho = np.where(dup >= k, 0.0, 1.0)
        return rho, np.where(dup >= k, dup, n - 1)
    n_levels = sum(len(np.unique(data[:, c])) for c in np.flatnonzero(cat))
    if n_levels <= ONEHOT_LIMIT:
        # one-hot coordinates reproduce the 0/1 categorical distance exactly
        emb = _onehot_embedding(data, cat)
        m = min(k + 2, n)
        dist, _ = cKDTree(emb).query(emb, k=m, p=np.inf)
        rho = dist[:, k]
        counts = np.full(n, k, dtype=np.int64)
        tied = dist[:, m - 1] <= rho if m > k + 1 else np.ones(n, dtype=bool)
        if tied.any():
            counts[tied] = count_within(data, cat, rho)[tied]
        return rho, counts
    sdata, scat, rows = _with_numeric_first(data, cat)
    rho = np.empty(n)
    rho[rows] = _kth_radius_sorted(sdata, scat, k)
    return rho, count_within(data, cat, rho)


def count_within(data: np.ndarray, cat: np.ndarray, radius: np.ndarray) -> np.ndarray:
    """Number of other rows at max-norm distance <= radius[i] from row i."""
    n = data.shape[0]
    if cat.all():
        return np.where(radius >= 1.0, n - 1, _duplicate_counts(data))
    sdata, scat, rows = _with_numeric_first(data, cat)
    srad = np.ascontiguousarray(radius[rows])
    out = np.empty(n, dtype=np.int64)
    if scat.any():
        out[rows] = _count_within_mixed(sdata, scat, srad)
    elif sdata.shape[1] == 1:
        out[rows] = _count_within_1d(np.ascontiguousarray(sdata[:, 0]), srad)
    else:
        out[rows] = _count_within_numeric(sdata, srad)
    return out


# --------------------------------------------------------------------------
# preparation and estimators


def subsample_indices(n: int, cfg: EstimatorConfig) -> np.ndarray:
    if n <= cfg.subsample_size:
        return np.arange(n)
    rng = np.random.default_rng(cfg.seed)
    return np.sort(rng.choice(n, size=cfg.subsample_size, replace=False))


def _prepare(view: VariableView, idx: np.ndarray):
    """Return (coordinate column, is_categorical, is_constant)."""
    vals = view.values[idx]
    if view.kind is Kind.CATEGORICAL:
        codes, mapping = category_codes(vals)
        return codes.astype(np.float64), True, len(mapping) <= 1
    x = np.array(vals, dtype=np.float64)
    miss = np.isnan(x)
    if miss.all():
        return np.zeros(len(x)), False, True
    x[miss] = x[~miss].mean()
    sd = x.std()
    if not sd > 0:
        return np.zeros(len(x)), False, True
    return (x - x.mean()) / sd, False, False


def _check_lengths(cfg, *views):
    n = len(views[0])
    if any(len(v) != n for v in views):
        raise ValueError("variables must have equal length")
    m = min(n, cfg.subsample_size)
    if m < 10 * cfg.k:
        raise ValueError(f"need at least {10 * cfg.k} samples, got {m}")
    return n


def _degenerate(names):
    warnings.warn(f"constant variable(s) {names}; estimate set to 0",
                  DegenerateVariableWarning, stacklevel=3)
    return 0.0


def _mi_prepared(px, py, k) -> float:
    data = np.column_stack([px[0], py[0]])
    cat = np.array([px[1], py[1]])
    n = len(data)
    rho, k_tilde = _radius_and_count(data, cat, k)
    nx = count_within(data[:, :1], cat[:1], rho)
    ny = count_within(data[:, 1:], cat[1:], rho)
    terms = digamma(k_tilde) + digamma(n) - (digamma(nx + 1) + digamma(ny + 1))
    return max(float(np.mean(terms)), 0.0)


def _cmi_prepared(px, py, pz, k) -> float:
    data = np.column_stack([px[0], py[0], pz[0]])
    cat = np.array([px[1], py[1], pz[1]])
    rho, k_tilde = _radius_and_count(data, cat, k)
    nxz = count_within(data[:, [0, 2]], cat[[0, 2]], rho)
    nyz = count_within(data[:, [1, 2]], cat[[1, 2]], rho)
    nz = count_within(data[:, 2:], cat[2:], rho)
    terms = digamma(k_tilde) - (digamma(nxz + 1) + digamma(nyz + 1)) + digamma(nz + 1)
    return max(float(np.mean(terms)), 0.0)


def knn_mi(x: VariableView, y: VariableView, cfg: EstimatorConfig = EstimatorConfig()) -> float:
    """Mutual information I(x; y) in nats, clamped at 0.

    Returns 0 (with a :class:`DegenerateVariableWarning`) when either
    variable is constant on the sample.
    """
    n = _check_lengths(cfg, x, y)
    idx = subsample_indices(n, cfg)
    px, py = _prepare(x, idx), _prepare(y, idx)
    if px[2] or py[2]:
        return _degenerate([v.name for v, p in ((x, px), (y, py)) if p[2]])
    return _mi_prepared(px, py, cfg.k)


def knn_cmi(x: VariableView, y: VariableView, z: VariableView,
            cfg: EstimatorConfig = EstimatorConfig()) -> float:
    """Conditional mutual information I(x; y | z) in nats, clamped at 0."""
    n = _check_lengths(cfg, x, y, z)
    idx = subsample_indices(n, cfg)
    px, py, pz = _prepare(x, idx), _prepare(y, idx), _prepare(z, idx)
    if px[2] or py[2]:
        return _degenerate([v.name for v, p in ((x, px), (y, py)) if p[2]])
    return _cmi_prepared(px, py, pz, cfg.k)


def _tau_prepared(pi, pj, py, k) -> float:
    if pi[2] or pj[2]:
        return 0.0
    return _cmi_prepared(pi, pj, py, k) - _mi_prepared(pi, pj, k)


def interaction_information(fi: VariableView, fj: VariableView, y: VariableView,
                            cfg: EstimatorConfig = EstimatorConfig()) -> float:
    """I(fi; fj | y) - I(fi; fj), estimated on one shared subsample.

    Positive values mean the two features carry more information about
    ``y`` together than separately (synergy); negative values mean
    redundancy. Symmetric in ``fi`` and ``fj`` to the last bit.
    """
    n = _check_lengths(cfg, fi, fj, y)
    idx = subsample_indices(n, cfg)
    pi, pj = _prepare(fi, idx), _prepare(fj, idx)
    if pi[2] or pj[2]:
        return _degenerate([v.name for v, p in ((fi, pi), (fj, pj)) if p[2]])
    return _tau_prepared(pi, pj, _prepare(y, idx), cfg.k)


def n_threads() -> int:
    """Worker cap taken from ``IIFE_THREADS`` (default: CPU count)."""
    env = os.environ.get("IIFE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def canonical_pairs(pairs: Iterable) -> list[tuple]:
    out, seen = [], set()
    for a, b in pairs:
        if a == b:
            raise ValueError(f"pair ({a!r}, {b!r}) repeats a feature")
        pair = (a, b) if _sort_key(a) <= _sort_key(b) else (b, a)
        if pair in seen:
            raise ValueError(f"duplicate pair {pair!r}")
        seen.add(pair)
        out.append(pair)
    return out


def pairwise_ii(pairs: Iterable, features: Mapping[Hashable, VariableView], y: VariableView,
                cfg: EstimatorConfig = EstimatorConfig(), n_jobs: int | None = None,
                mi_cache: dict | None = None) -> list[IIEntry]:
    """Interaction information of every pair against ``y``.

    ``features`` maps identifiers to views; ``pairs`` holds identifier
    pairs. Output is sorted by decreasing tau, ties broken by (i, j).

    ``mi_cache`` may hold I(fi; fj) per pair from an earlier call with the
    same features and sample size; the pair term does not involve ``y``.
    """
    pairs = canonical_pairs(pairs)
    if not pairs:
        return []
    used = sorted({f for p in pairs for f in p}, key=_sort_key)
    n = _check_lengths(cfg, y, *(features[f] for f in used))
    idx = subsample_indices(n, cfg)
    prepared = {f: _prepare(features[f], idx) for f in used}
    py = _prepare(y, idx)
    constant = [f for f in used if prepared[f][2]]
    if constant:
        _degenerate(constant)

    def score(pair):
        a, b = pair
        pa, pb = prepared[a], prepared[b]
        if mi_cache is None:
            return IIEntry(_tau_prepared(pa, pb, py, cfg.k), a, b)
        if pa[2] or pb[2]:
            return IIEntry(0.0, a, b)
        mi = mi_cache.get(pair)
        if mi is None:
            mi = mi_cache[pair] = _mi_prepared(pa, pb, cfg.k)
        return IIEntry(_cmi_prepared(pa, pb, py, cfg.k) - mi, a, b)

    workers = min(n_jobs or n_threads(), len(pairs))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            entries = list(pool.map(score, pairs))
    else:
        entries = [score(p) for p in pairs]
    return sorted(entries, key=ranking_key)


def table_views(t: Table, names=None) -> dict[str, VariableView]:
    names = t.feature_names if names is None else names
    return {name: VariableView.from_column(t.column(name)) for name in names}


def target_view(t: Table) -> VariableView:
    return VariableView.from_column(t.column(t.target))


def prefilter_features(t: Table, m: int, cfg: EstimatorConfig = EstimatorConfig()) -> list[str]:
    """Keep the ``m`` features with the highest MI with the target, in
    table order. Returns every feature when ``m`` covers them all."""
    if m < 2:
        raise ValueError("prefilter size must be at least 2")
    names = t.feature_names
    if m >= len(names):
        return names
    y = target_view(t)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateVariableWarning)
        scores = [knn_mi(VariableView.from_column(t.column(c)), y, cfg) for c in names]
    top = sorted(range(len(names)), key=lambda i: (-scores[i], i))[:m]
    return [names[i] for i in sorted(top)]
