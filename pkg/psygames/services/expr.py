"""
Polynomial expressions over action-probability variables.

Utility entries of a psychological game depend on the probabilities with which
players pick their actions. After beliefs are identified with the strategy
profile those entries are plain polynomials, represented here by ``PolyExpr``
with exact ``Fraction`` coefficients. The numeric solver converts them to
floating point through ``PolySystem``.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from types import MappingProxyType
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from lark import Lark, Token, Tree
from lark.exceptions import UnexpectedInput

from psygames.exceptions import ExprSyntaxError, MissingAssignment, NonPolynomial, UnknownVariable

logger = logging.getLogger(__name__)

Number = Union[int, Fraction, float]

# Name of the placeholder action given to players without a real choice.
IDLE_ACTION = 'idle'

EXPR_GRAMMAR = r"""
    ?start: sum

    ?sum: product
        | sum "+" product   -> add
        | sum "-" product   -> sub

    ?product: unary
        | product "*" unary -> mul
        | product "/" unary -> div

    ?unary: power
        | "-" unary         -> neg
        | "+" unary

    ?power: atom
        | atom "^" unary    -> pow

    ?atom: NUMBER           -> number
        | NAME "(" [sum ("," sum)*] ")" -> call
        | NAME              -> var
        | "(" sum ")"

    NUMBER: /\d+(\.\d*)?([eE][+-]?\d+)?/ | /\.\d+([eE][+-]?\d+)?/
    NAME: /[A-Za-z_][A-Za-z_0-9]*/

    %import common.WS
    %ignore WS
"""

_parser = Lark(EXPR_GRAMMAR, parser='lalr')


@dataclass(frozen=True, order=True)
class ProbVar:
    """The probability that ``player`` picks ``action``."""
    player: int
    action: str

    def __str__(self):
        return self.action


Monomial = Tuple[ProbVar, ...]


def _as_fraction(value: Number) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    return Fraction(float(value))


class PolyExpr:
    """
    Immutable polynomial with rational coefficients.

    Terms map a monomial (a sorted tuple of ProbVar, repeated for powers) to a
    nonzero coefficient; the constant term uses the empty monomial.
    """

    __slots__ = ('_terms', '_hash')

    def __init__(self, terms: Optional[Mapping[Monomial, Number]] = None):
        canonical: Dict[Monomial, Fraction] = {}
        for mono, coef in (terms or {}).items():
            key = tuple(sorted(mono))
            total = canonical.get(key, Fraction(0)) + _as_fraction(coef)
            if total:
                canonical[key] = total
            else:
                canonical.pop(key, None)
        self._terms = canonical
        self._hash = None

    # --- Construction helpers ---
    @classmethod
    def const(cls, value: Number) -> 'PolyExpr':
        return cls({(): value})

    @classmethod
    def var(cls, v: ProbVar) -> 'PolyExpr':
        return cls({(v,): 1})

    @classmethod
    def coerce(cls, other) -> 'PolyExpr':
        if isinstance(other, PolyExpr):
            return other
        if isinstance(other, ProbVar):
            return cls.var(other)
        return cls.const(other)

    # --- Inspection ---
    @property
    def terms(self) -> Mapping[Monomial, Fraction]:
        return MappingProxyType(self._terms)

    def variables(self) -> frozenset:
        return frozenset(v for mono in self._terms for v in mono)

    def degree(self) -> int:
        return max((len(mono) for mono in self._terms), default=0)

    def is_constant(self) -> bool:
        return all(not mono for mono in self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def constant_term(self) -> Fraction:
        return self._terms.get((), Fraction(0))

    def coefficient_bound(self) -> Fraction:
        """Upper bound on the sum of |partial derivatives| over the unit cube."""
        return sum((abs(c) * len(mono) for mono, c in self._terms.items()), Fraction(0))

    # --- Arithmetic ---
    def __add__(self, other):
        other = PolyExpr.coerce(other)
        merged = dict(self._terms)
        for mono, coef in other._terms.items():
            merged[mono] = merged.get(mono, Fraction(0)) + coef
        return PolyExpr(merged)

    __radd__ = __add__

    def __neg__(self):
        return PolyExpr({mono: -coef for mono, coef in self._terms.items()})

    def __sub__(self, other):
        return self + (-PolyExpr.coerce(other))

    def __rsub__(self, other):
        return PolyExpr.coerce(other) - self

    def __mul__(self, other):
        other = PolyExpr.coerce(other)
        product: Dict[Monomial, Fraction] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                key = tuple(sorted(m1 + m2))
                product[key] = product.get(key, Fraction(0)) + c1 * c2
        return PolyExpr(product)

    __rmul__ = __mul__

    def __pow__(self, exponent: int):
        if not isinstance(exponent, int) or exponent < 0:
            raise NonPolynomial(f"Exponent must be a non-negative integer, got {exponent!r}")
        result = PolyExpr.const(1)
        for _ in range(exponent):
            result = result * self
        return result

    # --- Identity ---
    def __eq__(self, other):
        if isinstance(other, PolyExpr):
            return self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self._terms == PolyExpr.const(other)._terms
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __repr__(self):
        return f"PolyExpr({self})"

    def __str__(self):
        return unparse(self)


def _monomial_text(mono: Monomial) -> str:
    parts = []
    i = 0
    while i < len(mono):
        j = i
        while j < len(mono) and mono[j] == mono[i]:
            j += 1
        power = j - i
        parts.append(mono[i].action if power == 1 else f"{mono[i].action}^{power}")
        i = j
    return '*'.join(parts)


def unparse(e: PolyExpr) -> str:
    """
    Render a polynomial in the expression syntax accepted by ``parse_expr``.

    Terms are ordered by degree, then lexicographically by (player, action).
    """
    if e.is_zero():
        return '0'
    pieces = []
    for mono in sorted(e.terms, key=lambda m: (len(m), m)):
        coef = e.terms[mono]
        sign = '-' if coef < 0 else '+'
        mag = abs(coef)
        if not mono:
            body = str(mag)
        elif mag == 1:
            body = _monomial_text(mono)
        else:
            body = f"{mag}*{_monomial_text(mono)}"
        pieces.append((sign, body))
    first_sign, first_body = pieces[0]
    text = ('-' if first_sign == '-' else '') + first_body
    for sign, body in pieces[1:]:
        text += f" {sign} {body}"
    return text


@lru_cache(maxsize=8192)
def parse_tree(text: str) -> Tree:
    """
    Parse expression text into a lark tree without resolving any names.

    Raises:
        ExprSyntaxError: If the text does not follow the expression grammar.
    """
    try:
        return _parser.parse(text)
    except UnexpectedInput as e:
        position = getattr(e, 'pos_in_stream', None)
        if position is None:
            position = len(text)
        raise ExprSyntaxError(f"Invalid expression '{text}'", position) from None


def _number(token: Token) -> Fraction:
    # Fraction parses decimals and exponents exactly.
    return Fraction(str(token))


class _Builder:
    """Bottom-up evaluation of an expression tree into a PolyExpr."""

    def __init__(self, names: Mapping[str, ProbVar], constants: Mapping[str, Number]):
        self.names = names
        self.constants = constants

    def build(self, node) -> PolyExpr:
        if isinstance(node, Token):
            # Bare NUMBER/NAME tokens only reach here through the inlined rules.
            return PolyExpr.const(_number(node)) if node.type == 'NUMBER' else self._lookup(str(node))
        rule = node.data
        kids = node.children
        if rule == 'number':
            return PolyExpr.const(_number(kids[0]))
        if rule == 'var':
            return self._lookup(str(kids[0]))
        if rule == 'add':
            return self.build(kids[0]) + self.build(kids[1])
        if rule == 'sub':
            return self.build(kids[0]) - self.build(kids[1])
        if rule == 'mul':
            return self.build(kids[0]) * self.build(kids[1])
        if rule == 'neg':
            return -self.build(kids[0])
        if rule == 'div':
            num, den = self.build(kids[0]), self.build(kids[1])
            if not den.is_constant():
                raise NonPolynomial(f"Division by the non-constant expression '{den}'")
            if den.is_zero():
                raise NonPolynomial("Division by zero")
            return num * (Fraction(1) / den.constant_term())
        if rule == 'pow':
            base, exponent = self.build(kids[0]), self.build(kids[1])
            value = exponent.constant_term()
            if not exponent.is_constant() or value.denominator != 1 or value < 0:
                raise NonPolynomial(f"Exponent '{exponent}' is not a non-negative integer constant")
            return base ** int(value)
        if rule == 'call':
            raise NonPolynomial(f"Function '{kids[0]}' is not allowed in a polynomial expression")
        raise ExprSyntaxError(f"Unexpected expression node '{rule}'")

    def _lookup(self, name: str) -> PolyExpr:
        if name in self.constants:
            return PolyExpr.const(self.constants[name])
        if name in self.names:
            return PolyExpr.var(self.names[name])
        raise UnknownVariable(name)


def build_expr(tree: Tree, vocab: Iterable[ProbVar], constants: Optional[Mapping[str, Number]] = None) -> PolyExpr:
    """Resolve a parsed tree against constants first, then action names."""
    names = {v.action: v for v in vocab if v.action != IDLE_ACTION}
    return _Builder(names, constants or {}).build(tree)


def parse_expr(text: str, vocab: Iterable[ProbVar], constants: Optional[Mapping[str, Number]] = None) -> PolyExpr:
    """
    Parse a polynomial expression over declared action probabilities.

    Identifiers resolve to ``constants`` first and then to the action names of
    ``vocab``. Decimal literals are converted to exact rationals.

    Args:
        text (str): Expression such as ``"1 - 0.5*(w + 3/10)"``.
        vocab (Iterable[ProbVar]): Probability variables the expression may use.
        constants (Optional[Mapping[str, Number]]): Named constant values.

    Returns:
        PolyExpr: The expression in canonical form.

    Raises:
        ExprSyntaxError: If the text is malformed.
        UnknownVariable: If an identifier is neither a constant nor in ``vocab``.
        NonPolynomial: On division by, or exponentiation with, a variable term.
    """
    return build_expr(parse_tree(text), vocab, constants)


def eval_expr(e: PolyExpr, assignment: Mapping[ProbVar, Number]):
    """
    Evaluate a polynomial at a point.

    The result is an exact ``Fraction`` when every assigned value is rational.

    Raises:
        MissingAssignment: If a variable of ``e`` has no value.
    """
    total = Fraction(0)
    for mono, coef in e.terms.items():
        value = coef
        for v in mono:
            try:
                value = value * assignment[v]
            except KeyError:
                raise MissingAssignment(v) from None
        total = total + value
    return total


def grad_expr(e: PolyExpr, var: ProbVar) -> PolyExpr:
    """Formal partial derivative of ``e`` with respect to ``var``."""
    derived: Dict[Monomial, Fraction] = {}
    for mono, coef in e.terms.items():
        power = mono.count(var)
        if not power:
            continue
        rest = list(mono)
        rest.remove(var)
        key = tuple(rest)
        derived[key] = derived.get(key, Fraction(0)) + coef * power
    return PolyExpr(derived)


def substitute(e: PolyExpr, bindings: Mapping[ProbVar, Number]) -> PolyExpr:
    """
    Replace bound variables by values, keeping the remaining variables symbolic.

    Substituting every variable yields a constant polynomial equal to ``eval_expr``.
    """
    if not bindings:
        return e
    result: Dict[Monomial, Fraction] = {}
    for mono, coef in e.terms.items():
        value = coef
        rest = []
        for v in mono:
            if v in bindings:
                value = value * _as_fraction(bindings[v])
            else:
                rest.append(v)
        if value:
            key = tuple(rest)
            result[key] = result.get(key, Fraction(0)) + value
    return PolyExpr(result)


class _StackedPolys:
    """Several polynomials evaluated together over their union of monomials."""

    def __init__(self, polys: Sequence[PolyExpr], variables: Sequence[ProbVar]):
        index = {v: k for k, v in enumerate(variables)}
        monos = sorted({m for p in polys for m in p.terms}, key=lambda m: (len(m), m))
        column = {m: k for k, m in enumerate(monos)}
        self.exps = np.zeros((len(monos), len(variables)), dtype=np.int64)
        for row, mono in enumerate(monos):
            for v in mono:
                self.exps[row, index[v]] += 1
        self.coefs = np.zeros((len(polys), len(monos)), dtype=float)
        for row, p in enumerate(polys):
            for mono, coef in p.terms.items():
                self.coefs[row, column[mono]] = float(coef)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        if not self.coefs.size:
            return np.zeros((X.shape[0], self.coefs.shape[0]))
        monomials = np.prod(X[:, None, :] ** self.exps[None, :, :], axis=2)
        return monomials @ self.coefs.T


class PolySystem:
    """
    Floating-point evaluator for a list of polynomials over one variable order.

    Points are evaluated in batches: ``X`` has shape (points, variables).
    Partial derivatives come from ``grad_expr``.
    """

    def __init__(self, polys: Sequence[PolyExpr], variables: Sequence[ProbVar]):
        self.polys = tuple(polys)
        self.variables = tuple(variables)
        self._values = _StackedPolys(self.polys, self.variables)
        self._partials = [_StackedPolys([grad_expr(p, v) for p in self.polys], self.variables)
                          for v in self.variables]

    def __len__(self):
        return len(self.polys)

    def values(self, X: np.ndarray) -> np.ndarray:
        """Values with shape (points, polynomials)."""
        return self._values(np.atleast_2d(np.asarray(X, dtype=float)))

    def jacobian(self, X: np.ndarray) -> np.ndarray:
        """Partial derivatives with shape (points, polynomials, variables)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self._partials:
            return np.zeros((X.shape[0], len(self.polys), 0))
        return np.stack([p(X) for p in self._partials], axis=2)
