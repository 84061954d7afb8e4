"""Signal temporal logic over sampled signals.

The supported fragment is::

    psi ::= pred | !pred | F[a,b] pred | G[a,b] pred
    phi ::= psi | phi & phi | phi | phi

where a predicate is an affine inequality ``mu(x) >= 0`` over named signal
components.  Region sugar ``p in B`` expands an axis-aligned box ``B`` into
the conjunction of its half-planes over the components ``p_x, p_y[, p_z]``;
its negation becomes the disjunction of the outward half-planes.  Temporal
operators therefore carry a *body*: a predicate, or an and/or combination
of predicates produced by the sugar.

Robustness is evaluated at ``t = 0``.  Between samples the signal is taken
to be piecewise linear, and the extrema of the body over each sample gap
are computed exactly (they lie at a gap endpoint or at a crossing of two
predicate lines).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np


class StlError(ValueError):
    pass


class StlSyntaxError(StlError):
    def __init__(self, msg: str, pos: int, text: str):
        super().__init__(f"{msg} at column {pos + 1}: {text[:pos]}<<here>>{text[pos:]}")
        self.pos = pos


class FragmentError(StlSyntaxError):
    pass


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Pred:
    """``sum(coef * x[name]) + const >= 0``."""

    coefs: tuple[tuple[str, float], ...]
    const: float = 0.0

    def names(self) -> set[str]:
        return {n for n, _ in self.coefs}

    def negated(self) -> "Pred":
        return Pred(tuple((n, -c) for n, c in self.coefs), -self.const)

    def __str__(self):
        terms = " + ".join(f"{c:g}*{n}" for n, c in self.coefs)
        return f"({terms} + {self.const:g} >= 0)"


@dataclass(frozen=True)
class NegPred:
    pred: Pred

    def names(self):
        return self.pred.names()

    def __str__(self):
        return f"!{self.pred}"


@dataclass(frozen=True)
class And:
    children: tuple

    def names(self):
        return set().union(*(c.names() for c in self.children))

    def __str__(self):
        return "(" + " & ".join(map(str, self.children)) + ")"


@dataclass(frozen=True)
class Or:
    children: tuple

    def names(self):
        return set().union(*(c.names() for c in self.children))

    def __str__(self):
        return "(" + " | ".join(map(str, self.children)) + ")"


@dataclass(frozen=True)
class Eventually:
    interval: tuple[float, float]
    body: object
    label: str = field(default="", compare=False)  # source text, if parsed

    def names(self):
        return self.body.names()

    def __str__(self):
        return self.label or f"F[{self.interval[0]:g},{self.interval[1]:g}]{self.body}"


@dataclass(frozen=True)
class Always:
    interval: tuple[float, float]
    body: object
    label: str = field(default="", compare=False)  # source text, if parsed

    def names(self):
        return self.body.names()

    def __str__(self):
        return self.label or f"G[{self.interval[0]:g},{self.interval[1]:g}]{self.body}"


StlFormula = Union[Pred, NegPred, And, Or, Eventually, Always]
TEMPORAL = (Eventually, Always)


def is_temporal(node) -> bool:
    return isinstance(node, TEMPORAL) or (
        isinstance(node, (And, Or)) and any(is_temporal(c) for c in node.children))


def validate_fragment(phi) -> None:
    """Raise :class:`StlError` if ``phi`` is outside the supported fragment."""
    if isinstance(phi, (Pred, NegPred)):
        return
    if isinstance(phi, TEMPORAL):
        a, b = phi.interval
        if not 0.0 <= a <= b:
            raise StlError(f"interval [{a}, {b}] must satisfy 0 <= a <= b")
        if is_temporal(phi.body):
            raise StlError("nested temporal operators are outside the fragment")
        return
    if isinstance(phi, (And, Or)):
        for c in phi.children:
            validate_fragment(c)
        return
    raise StlError(f"unknown node {phi!r}")


def box_predicates(vec: str, box) -> list[Pred]:
    """Half-plane predicates whose conjunction is ``vec in box``."""
    axes = "xyz"
    box = np.asarray(box, dtype=float)
    preds = []
    for k, (lo, hi) in enumerate(box):
        name = f"{vec}_{axes[k]}"
        preds.append(Pred(((name, 1.0),), -float(lo)))
        preds.append(Pred(((name, -1.0),), float(hi)))
    return preds


def negate(node):
    """Push a negation through a non-temporal formula (negation normal form)."""
    if isinstance(node, Pred):
        return NegPred(node)
    if isinstance(node, NegPred):
        return node.pred
    if isinstance(node, And):
        return Or(tuple(negate(c) for c in node.children))
    if isinstance(node, Or):
        return And(tuple(negate(c) for c in node.children))
    raise StlError("negation of a temporal operator is outside the fragment")


# ---------------------------------------------------------------------------
# parser

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)
  | (?P<cmp>>=|<=|>|<)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[!&|()\[\],*+\-])
""", re.VERBOSE)


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise StlSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, regions: Mapping[str, Sequence]):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.regions = regions

    def peek(self, k=0):
        return self.toks[self.i + k]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.next()
        if tok[1] != value:
            raise StlSyntaxError(f"expected {value!r}, got {tok[1] or 'end of input'!r}", tok[2], self.text)
        return tok

    def error(self, msg, tok=None, cls=StlSyntaxError):
        tok = tok or self.peek()
        raise cls(msg, tok[2], self.text)

    # formula := and ('|' and)*
    def formula(self, depth=0):
        left = [self.conj(depth)]
        while self.peek()[1] == "|":
            self.next()
            left.append(self.conj(depth))
        return left[0] if len(left) == 1 else Or(tuple(left))

    def conj(self, depth):
        left = [self.unary(depth)]
        while self.peek()[1] == "&":
            self.next()
            left.append(self.unary(depth))
        return left[0] if len(left) == 1 else And(tuple(left))

    def unary(self, depth):
        tok = self.peek()
        if tok[1] == "!":
            self.next()
            inner_tok = self.peek()
            inner = self.unary(depth)
            if is_temporal(inner):
                self.error("negation of a temporal formula is outside the fragment", inner_tok, FragmentError)
            return negate(inner)
        if tok[0] == "ident" and tok[1] in ("F", "G") and self.peek(1)[1] == "[":
            if depth > 0:
                self.error("nested temporal operators are outside the fragment", tok, FragmentError)
            self.next()
            self.expect("[")
            a = self.number()
            self.expect(",")
            b = self.number()
            close = self.expect("]")
            if not 0.0 <= a <= b:
                self.error(f"interval [{a:g}, {b:g}] must satisfy 0 <= a <= b", close, FragmentError)
            self.expect("(")
            body = self.formula(depth + 1)
            end = self.expect(")")
            label = " ".join(self.text[tok[2]:end[2] + 1].split())
            return (Eventually if tok[1] == "F" else Always)((a, b), body, label)
        if tok[1] == "(":
            self.next()
            inner = self.formula(depth)
            self.expect(")")
            return inner
        return self.atom()

    def number(self):
        sign = 1.0
        if self.peek()[1] == "-":
            self.next()
            sign = -1.0
        tok = self.next()
        if tok[0] != "num":
            raise StlSyntaxError(f"expected a number, got {tok[1]!r}", tok[2], self.text)
        return sign * float(tok[1])

    def atom(self):
        tok = self.peek()
        if tok[0] == "ident" and self.peek(1)[1] == "in":
            vec = self.next()[1]
            self.next()
            reg = self.next()
            if reg[0] != "ident":
                self.error("expected a region name", reg)
            if reg[1] not in self.regions:
                self.error(f"unknown region {reg[1]!r}", reg)
            return And(tuple(box_predicates(vec, self.regions[reg[1]])))
        lhs = self.linexpr()
        cmp_tok = self.next()
        if cmp_tok[0] != "cmp":
            raise StlSyntaxError("expected a comparison operator", cmp_tok[2], self.text)
        rhs = self.linexpr()
        coefs: dict[str, float] = {}
        if cmp_tok[1] in (">=", ">"):
            pos_side, neg_side = lhs, rhs
        else:
            pos_side, neg_side = rhs, lhs
        const = pos_side[1] - neg_side[1]
        for n, c in pos_side[0].items():
            coefs[n] = coefs.get(n, 0.0) + c
        for n, c in neg_side[0].items():
            coefs[n] = coefs.get(n, 0.0) - c
        return Pred(tuple(sorted((n, c) for n, c in coefs.items() if c != 0.0)), const)

    def linexpr(self):
        coefs: dict[str, float] = {}
        const = 0.0
        sign = 1.0
        if self.peek()[1] in "+-" and self.peek()[0] == "op":
            sign = -1.0 if self.next()[1] == "-" else 1.0
        while True:
            c, name = self.term()
            if name is None:
                const += sign * c
            else:
                coefs[name] = coefs.get(name, 0.0) + sign * c
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] in "+-":
                self.next()
                sign = -1.0 if nxt[1] == "-" else 1.0
            else:
                return coefs, const

    def term(self):
        tok = self.next()
        if tok[0] == "num":
            if self.peek()[1] == "*":
                self.next()
                ident = self.next()
                if ident[0] != "ident":
                    raise StlSyntaxError("expected a signal name", ident[2], self.text)
                return float(tok[1]), ident[1]
            return float(tok[1]), None
        if tok[0] == "ident":
            if self.peek()[1] == "*":
                self.next()
                num = self.next()
                if num[0] != "num":
                    raise StlSyntaxError("expected a number", num[2], self.text)
                return float(num[1]), tok[1]
            return 1.0, tok[1]
        raise StlSyntaxError(f"unexpected token {tok[1] or 'end of input'!r}", tok[2], self.text)


def parse_formula(text: str, regions: Mapping[str, Sequence] | None = None) -> StlFormula:
    """Parse the concrete syntax into an AST.

    Grammar: ``F[a,b](...)``, ``G[a,b](...)``, ``!``, ``&``, ``|``,
    parentheses, affine comparisons such as ``2*x - y + 1 >= 0`` and region
    membership ``p in B`` for boxes named in ``regions``.
    """
    p = _Parser(text, regions or {})
    phi = p.formula()
    tok = p.peek()
    if tok[0] != "end":
        raise StlSyntaxError(f"unexpected trailing token {tok[1]!r}", tok[2], text)
    return phi


# ---------------------------------------------------------------------------
# signals and robustness


class SampledSignal:
    """Timestamped samples of named signal components."""

    def __init__(self, t, values, names: Sequence[str] | None = None):
        t = np.asarray(t, dtype=float)
        if isinstance(values, Mapping):
            names = list(values)
            values = np.column_stack([np.asarray(values[n], float) for n in names])
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if names is None:
            raise StlError("component names are required")
        if t.ndim != 1 or t.size < 2:
            raise StlError("a signal needs at least two samples")
        if values.shape != (t.size, len(names)):
            raise StlError("values must have shape (len(t), len(names))")
        if np.any(np.diff(t) <= 0):
            raise StlError("timestamps must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(values))):
            raise StlError("signal contains non-finite values")
        self.t = t
        self.values = values
        self.names = list(names)
        self.index = {n: i for i, n in enumerate(self.names)}

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.index[name]]
        except KeyError:
            raise StlError(f"signal has no component {name!r}") from None

    def at(self, tq) -> np.ndarray:
        """Linear interpolation of all components at times ``tq``."""
        tq = np.atleast_1d(np.asarray(tq, dtype=float))
        return np.column_stack([np.interp(tq, self.t, self.values[:, j]) for j in range(len(self.names))])

    def restricted(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Times and values of the samples in ``[a, b]``, endpoints interpolated."""
        if b <= a:
            return np.array([a]), self.at(a)
        inside = (self.t > a) & (self.t < b)
        t = np.concatenate(([a], self.t[inside], [b]))
        return t, np.vstack((self.at(a), self.values[inside], self.at(b)))

    def shifted(self, dt: float) -> "SampledSignal":
        return SampledSignal(self.t + dt, self.values, self.names)


def _pred_values(pred: Pred, sig: SampledSignal, vals: np.ndarray) -> np.ndarray:
    out = np.full(vals.shape[0], pred.const)
    for n, c in pred.coefs:
        if n not in sig.index:
            raise StlError(f"signal has no component {n!r}")
        out = out + c * vals[:, sig.index[n]]
    return out


def _leaves(body) -> list:
    if isinstance(body, (Pred, NegPred)):
        return [body]
    return [l for c in body.children for l in _leaves(c)]


def _combine(body, leaf_vals: dict) -> np.ndarray:
    if isinstance(body, (Pred, NegPred)):
        return leaf_vals[id(body)]
    parts = [_combine(c, leaf_vals) for c in body.children]
    return np.minimum.reduce(parts) if isinstance(body, And) else np.maximum.reduce(parts)


def _leaf_values(body, sig, vals) -> dict:
    out = {}
    for leaf in _leaves(body):
        if isinstance(leaf, Pred):
            out[id(leaf)] = _pred_values(leaf, sig, vals)
        else:
            out[id(leaf)] = -_pred_values(leaf.pred, sig, vals)
    return out


def _body_extremum(body, sig: SampledSignal, a: float, b: float, mode: str) -> float:
    """Exact max (``mode='max'``) or min of the body over ``[a, b]``."""
    t, vals = sig.restricted(a, b)
    lv = _leaf_values(body, sig, vals)
    series = [lv[k] for k in lv]
    pick = np.max if mode == "max" else np.min
    best = pick(_combine(body, lv))
    if len(series) < 2 or t.size < 2:
        return float(best)
    # crossings of leaf lines inside each sample gap
    Y = np.stack(series)  # (L, T)
    y0, y1 = Y[:, :-1], Y[:, 1:]
    slope = y1 - y0
    L = Y.shape[0]
    cand_s = []
    for i in range(L):
        for j in range(i + 1, L):
            den = slope[i] - slope[j]
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (y0[j] - y0[i]) / den
            ok = np.isfinite(s) & (s > 0.0) & (s < 1.0)
            if np.any(ok):
                cand_s.append((np.nonzero(ok)[0], s[ok]))
    if not cand_s:
        return float(best)
    gaps = np.concatenate([g for g, _ in cand_s])
    ss = np.concatenate([s for _, s in cand_s])
    cand = {k: lv[k][gaps] * (1.0 - ss) + lv[k][gaps + 1] * ss for k in lv}
    return float(pick([best, pick(_combine(body, cand))]))


def _check_span(sig: SampledSignal, a: float, b: float) -> None:
    if a < sig.t[0] - 1e-12 or b > sig.t[-1] + 1e-12:
        raise StlError(f"interval [{a:g}, {b:g}] outside signal span [{sig.t[0]:g}, {sig.t[-1]:g}]")


def robustness(phi: StlFormula, sig: SampledSignal, t: float = 0.0) -> float:
    """Spatial robustness of ``phi`` on ``sig`` at time ``t`` (default 0)."""
    if isinstance(phi, (Pred, NegPred, And, Or)) and not is_temporal(phi):
        _check_span(sig, t, t)
        vals = sig.at(t)
        return float(_combine(phi, _leaf_values(phi, sig, vals))[0])
    if isinstance(phi, (And, Or)):
        parts = [robustness(c, sig, t) for c in phi.children]
        return min(parts) if isinstance(phi, And) else max(parts)
    if isinstance(phi, TEMPORAL):
        a, b = t + phi.interval[0], t + phi.interval[1]
        _check_span(sig, a, b)
        mode = "max" if isinstance(phi, Eventually) else "min"
        return _body_extremum(phi.body, sig, a, b, mode)
    raise StlError(f"unknown node {phi!r}")


def robustness_oracle(phi: StlFormula, sig: SampledSignal, dt_fine: float, t: float = 0.0) -> float:
    """Brute-force robustness on a dense linear resampling of ``sig``.

    Every temporal operator is evaluated pointwise on the grid
    ``a, a + dt_fine, ..., b`` (endpoints included) by direct recursion of
    the min/max semantics.  Used to cross-check :func:`robustness`.
    """
    if dt_fine <= 0:
        raise StlError("dt_fine must be positive")

    def point(node, x):  # x: dict name -> value
        if isinstance(node, Pred):
            return node.const + sum(c * x[n] for n, c in node.coefs)
        if isinstance(node, NegPred):
            return -point(node.pred, x)
        vals = [point(c, x) for c in node.children]
        return min(vals) if isinstance(node, And) else max(vals)

    def rec(node):
        if isinstance(node, TEMPORAL):
            a, b = t + node.interval[0], t + node.interval[1]
            _check_span(sig, a, b)
            n = max(int(np.ceil((b - a) / dt_fine)), 1)
            grid = np.linspace(a, b, n + 1)
            X = sig.at(grid)
            vals = [point(node.body, dict(zip(sig.names, row))) for row in X]
            return max(vals) if isinstance(node, Eventually) else min(vals)
        if isinstance(node, (And, Or)) and is_temporal(node):
            vals = [rec(c) for c in node.children]
            return min(vals) if isinstance(node, And) else max(vals)
        return point(node, dict(zip(sig.names, sig.at(t)[0])))

    return float(rec(phi))


def formula_intervals(phi) -> list[tuple[float, float]]:
    if isinstance(phi, TEMPORAL):
        return [phi.interval]
    if isinstance(phi, (And, Or)):
        return [iv for c in phi.children for iv in formula_intervals(c)]
    return []
