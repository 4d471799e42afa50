"""Engineered-feature expressions.

An expression is a tree of :class:`ColumnRef` leaves combined by unary and
binary operators. Expressions are fitted on training rows (group-by
aggregates and ordinal codes for categorical operands) and then evaluated
on any rows with total semantics: the output is always finite.

Text form is prefix notation, e.g. ``mul(col:F1,col:F2)`` or
``gbmean(col:City,col:Price)``; for group-by operators the first argument is
the grouping column and the second the aggregated value.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np
from scipy.special import expit

from .tabular import MISSING, Kind, Table, category_codes


_BARE = re.compile(r'[^\s,()"]+')
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class ExprError(ValueError):
    """Malformed expression text or an expression that does not fit a table."""


class _Node:
    """Immutable expression node; equality and hashing go through the
    rendered text, computed once at construction."""

    __slots__ = ("key", "n_leaves")

    def __eq__(self, other):
        return isinstance(other, _Node) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"{type(self).__name__}({self.key})"

    def __setattr__(self, name, value):
        raise AttributeError("expression nodes are immutable")


class ColumnRef(_Node):
    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", str(name))
        text = f"col:{self.name}" if _BARE.fullmatch(self.name) else \
            "col:" + json.dumps(self.name, ensure_ascii=False)
        object.__setattr__(self, "key", text)
        object.__setattr__(self, "n_leaves", 1)


class Unary(_Node):
    __slots__ = ("op", "child")

    def __init__(self, op: str, child: "FeatureExpr"):
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "child", child)
        object.__setattr__(self, "key", f"{op}({child.key})")
        object.__setattr__(self, "n_leaves", child.n_leaves)


class Binary(_Node):
    __slots__ = ("op", "left", "right")

    def __init__(self, op: str, left: "FeatureExpr", right: "FeatureExpr"):
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "key", f"{op}({left.key},{right.key})")
        object.__setattr__(self, "n_leaves", left.n_leaves + right.n_leaves)


FeatureExpr = Union[ColumnRef, Unary, Binary]


def _sdiv(a, b):
    return a / (np.abs(b) + 1.0)


def _mod(a, b):
    safe = np.where(b == 0, 1.0, b)
    return np.where(b == 0, 0.0, a - safe * np.floor(a / safe))


def _recip(x):
    safe = np.where(x == 0, 1.0, x)
    return np.where(x == 0, 0.0, 1.0 / safe)


NUMERIC_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "rsub": lambda a, b: b - a,
    "mul": lambda a, b: a * b,
    "min": np.minimum,
    "max": np.maximum,
    "sdiv": _sdiv,
    "rsdiv": lambda a, b: _sdiv(b, a),
    "mod": _mod,
    "rmod": lambda a, b: _mod(b, a),
}

GROUPBY_OPS = {
    "gbmin": np.min,
    "gbmax": np.max,
    "gbmean": np.mean,
    "gbmedian": np.median,
    "gbstd": np.std,  # population std: a singleton group gives 0
}

UNARY_OPS = {
    "sq": np.square,
    "abs": np.abs,
    "sqrtabs": lambda x: np.sqrt(np.abs(x)),
    "sigmoid": expit,
    "recip": _recip,
}

DIVISION_OPS = frozenset({"sdiv", "rsdiv", "recip"})
BINARY_OPS = {**NUMERIC_OPS, **GROUPBY_OPS}


@dataclass(frozen=True)
class OperatorSets:
    """Operators available to candidate generation.

    ``drop_division_ops`` removes safe division (both directions) and the
    reciprocal, as done for Lasso downstream models.
    """

    numeric: tuple = tuple(NUMERIC_OPS)
    groupby: tuple = tuple(GROUPBY_OPS)
    unary: tuple = tuple(UNARY_OPS)

    @classmethod
    def default(cls, drop_division_ops: bool = False) -> "OperatorSets":
        if not drop_division_ops:
            return cls()
        return cls(
            tuple(op for op in NUMERIC_OPS if op not in DIVISION_OPS),
            tuple(GROUPBY_OPS),
            tuple(op for op in UNARY_OPS if op not in DIVISION_OPS),
        )


def order(e: FeatureExpr) -> int:
    """Number of original-column leaves, counted with multiplicity."""
    return e.n_leaves


def leaves(e: FeatureExpr) -> list[str]:
    if isinstance(e, ColumnRef):
        return [e.name]
    if isinstance(e, Unary):
        return leaves(e.child)
    return leaves(e.left) + leaves(e.right)


def output_kind(e: FeatureExpr, kinds: Mapping[str, Kind]) -> Kind:
    if isinstance(e, ColumnRef):
        return Kind(kinds[e.name])
    return Kind.NUMERIC


def validate(e: FeatureExpr, kinds: Mapping[str, Kind]) -> None:
    """Raise :class:`ExprError` unless ``e`` is well formed against ``kinds``."""
    if isinstance(e, ColumnRef):
        if e.name not in kinds:
            raise ExprError(f"unknown column {e.name!r} in {render_expr(e)}")
        return
    if isinstance(e, Unary):
        if e.op not in UNARY_OPS:
            raise ExprError(f"unknown unary operator {e.op!r}")
        validate(e.child, kinds)
        return
    if e.op not in BINARY_OPS:
        raise ExprError(f"unknown binary operator {e.op!r}")
    validate(e.left, kinds)
    validate(e.right, kinds)
    if e.op in GROUPBY_OPS and output_kind(e.left, kinds) is not Kind.CATEGORICAL:
        raise ExprError(f"{e.op} must group by a categorical column: {render_expr(e)}")


# --------------------------------------------------------------------------
# fitting and evaluation


@dataclass(frozen=True)
class FittedExpr:
    """An expression plus the state learned from training rows.

    ``state`` maps the text of a stateful subtree to
    ``("groupby", {category: aggregate})`` for group-by nodes or
    ``("ordinal", {category: code})`` for categorical columns used as numbers.
    Identical subtrees fitted on the same rows share one entry.
    """

    expr: FeatureExpr
    state: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "expr": render_expr(self.expr),
            "state": [
                {"node": node, "kind": kind, "map": dict(mapping)}
                for node, (kind, mapping) in sorted(self.state.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedExpr":
        state = {s["node"]: (s["kind"], dict(s["map"])) for s in d.get("state", [])}
        return cls(parse_expr(d["expr"]), state)


def _finite(x):
    x = np.asarray(x, dtype=np.float64)
    bad = ~np.isfinite(x)
    return np.where(bad, 0.0, x) if bad.any() else x


def _labels(table: Table, name: str) -> list:
    return [MISSING if v is None else v for v in _column(table, name).values]


def _column(table: Table, name: str):
    try:
        return table.column(name)
    except KeyError:
        raise ExprError(f"column {name!r} not found") from None


def _group_aggregate(op: str, groups: list, values: np.ndarray) -> dict:
    codes, mapping = category_codes(groups)
    order_ = np.argsort(codes, kind="stable")
    cuts = np.flatnonzero(np.diff(codes[order_])) + 1
    agg = GROUPBY_OPS[op]
    cats = list(mapping)
    return {cats[codes[chunk[0]]]: float(_finite(agg(values[chunk])))
            for chunk in np.split(order_, cuts) if len(chunk)}


def _lookup(mapping: dict, labels: list) -> np.ndarray:
    index = {c: i for i, c in enumerate(mapping)}
    table = np.array(list(mapping.values()) + [0.0], dtype=np.float64)
    return _finite(table[[index.get(g, -1) for g in labels]])


def _node_state(state, key, kind):
    try:
        got_kind, mapping = state[key]
    except KeyError:
        raise ExprError(f"expression is not fitted at node {key}") from None
    if got_kind != kind:
        raise ExprError(f"node {key} holds {got_kind} state, expected {kind}")
    return mapping


def _walk(node, tables, state, fitting, memo):
    """Values of ``node`` on each table, plus the state of its subtree.

    When fitting, state is learned from ``tables[0]``; otherwise it is read
    from ``state``. ``memo`` maps subtree text to earlier results for the
    same tables.
    """
    hit = memo.get(node.key)
    if hit is not None:
        return hit
    sub = {}
    if isinstance(node, ColumnRef):
        cols = [_column(t, node.name) for t in tables]
        if cols[0].kind is Kind.NUMERIC:
            vals = tuple(_finite(c.values) for c in cols)
        else:
            if fitting:
                mapping = category_codes(cols[0].values)[1]
                sub[node.key] = ("ordinal", mapping)
            else:
                mapping = _node_state(state, node.key, "ordinal")
            vals = tuple(category_codes(c.values, mapping)[0].astype(np.float64) for c in cols)
    elif isinstance(node, Unary):
        xs, s = _walk(node.child, tables, state, fitting, memo)
        sub.update(s)
        fn = UNARY_OPS[node.op]
        with np.errstate(all="ignore"):
            vals = tuple(_finite(fn(x)) for x in xs)
    elif node.op in GROUPBY_OPS:
        if not isinstance(node.left, ColumnRef):
            raise ExprError(f"{node.op} must group by a column")
        xs, s = _walk(node.right, tables, state, fitting, memo)
        sub.update(s)
        if fitting:
            mapping = _group_aggregate(node.op, _labels(tables[0], node.left.name), xs[0])
            sub[node.key] = ("groupby", mapping)
        else:
            mapping = _node_state(state, node.key, "groupby")
        vals = tuple(_lookup(mapping, _labels(t, node.left.name)) for t in tables)
    else:
        xs, s1 = _walk(node.left, tables, state, fitting, memo)
        ys, s2 = _walk(node.right, tables, state, fitting, memo)
        sub.update(s1)
        sub.update(s2)
        fn = NUMERIC_OPS[node.op]
        with np.errstate(all="ignore"):
            vals = tuple(_finite(fn(x, y)) for x, y in zip(xs, ys))
    memo[node.key] = (vals, sub)
    return vals, sub


def fit_expr(e: FeatureExpr, train: Table) -> FittedExpr:
    """Learn group-by aggregates and ordinal codes from ``train`` only."""
    _, state = _walk(e, (train,), None, True, {})
    return FittedExpr(e, dict(state))


def eval_expr(fe: FittedExpr, rows: Table) -> np.ndarray:
    return _walk(fe.expr, (rows,), fe.state, False, {})[0][0]


def fit_transform(e: FeatureExpr, train: Table, *others: Table, memo: dict | None = None):
    """Fit on ``train`` and evaluate on ``train`` and every table in ``others``.

    Returns ``(FittedExpr, [train_values, *other_values])``. A ``memo`` dict
    may be shared between calls that use the same tables.
    """
    vals, state = _walk(e, (train,) + others, None, True, {} if memo is None else memo)
    return FittedExpr(e, dict(state)), list(vals)


def fit_eval(e: FeatureExpr, train: Table) -> tuple[FittedExpr, np.ndarray]:
    """Fit on ``train`` and return the fitted expression with its training values."""
    fe, vals = fit_transform(e, train)
    return fe, vals[0]


def subtree_keys(e: FeatureExpr) -> set:
    seen, stack = set(), [e]
    while stack:
        node = stack.pop()
        if node.key in seen:
            continue
        seen.add(node.key)
        if isinstance(node, Unary):
            stack.append(node.child)
        elif isinstance(node, Binary):
            stack += [node.left, node.right]
    return seen


# --------------------------------------------------------------------------
# candidate generation


def bivariate_candidates(fi: FeatureExpr, fj: FeatureExpr, kinds: Mapping[str, Kind],
                         sets: OperatorSets = OperatorSets()) -> list[FeatureExpr]:
    if fi == fj:
        raise ExprError("bivariate candidates need two distinct features")
    ki, kj = output_kind(fi, kinds), output_kind(fj, kinds)
    out = []
    if ki is Kind.CATEGORICAL:
        out += [Binary(op, fi, fj) for op in sets.groupby]
    if kj is Kind.CATEGORICAL:
        out += [Binary(op, fj, fi) for op in sets.groupby]
    out += [Binary(op, fi, fj) for op in sets.numeric]
    return out


def univariate_candidates(e: FeatureExpr, sets: OperatorSets = OperatorSets()) -> list[FeatureExpr]:
    return [e] + [Unary(op, e) for op in sets.unary]


# --------------------------------------------------------------------------
# text form

def render_expr(e: FeatureExpr) -> str:
    return e.key


def parse_expr(text: str) -> FeatureExpr:
    """Inverse of :func:`render_expr`."""
    parser = _Parser(text)
    expr = parser.expr()
    parser.skip_ws()
    if parser.pos != len(text):
        raise ExprError(f"unexpected trailing text at {parser.pos} in {text!r}")
    return expr


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, msg):
        raise ExprError(f"{msg} at position {self.pos} in {self.text!r}")

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def expect(self, ch):
        self.skip_ws()
        if self.pos >= len(self.text):
            if ch == ")":
                self.fail("unbalanced parenthesis: missing ')'")
            self.fail(f"expected {ch!r}, reached end of input")
        if self.text[self.pos] != ch:
            self.fail(f"expected {ch!r}, found {self.text[self.pos]!r}")
        self.pos += 1

    def expr(self) -> FeatureExpr:
        self.skip_ws()
        if self.text.startswith("col:", self.pos):
            self.pos += 4
            return ColumnRef(self.column_name())
        m = _IDENT.match(self.text, self.pos)
        if not m:
            self.fail("expected an operator or 'col:'")
        op = m.group()
        self.pos = m.end()
        self.expect("(")
        args = [self.expr()]
        self.skip_ws()
        if self.pos < len(self.text) and self.text[self.pos] == ",":
            self.pos += 1
            args.append(self.expr())
        self.expect(")")
        if len(args) == 1:
            if op not in UNARY_OPS:
                self.fail(f"unknown unary operator {op!r}")
            return Unary(op, args[0])
        if op not in BINARY_OPS:
            self.fail(f"unknown binary operator {op!r}")
        return Binary(op, args[0], args[1])

    def column_name(self) -> str:
        if self.pos < len(self.text) and self.text[self.pos] == '"':
            try:
                name, end = json.JSONDecoder().raw_decode(self.text, self.pos)
            except json.JSONDecodeError:
                self.fail("bad quoted column name")
            self.pos = end
            return name
        m = _BARE.match(self.text, self.pos)
        if not m:
            self.fail("empty column name")
        self.pos = m.end()
        return m.group()
