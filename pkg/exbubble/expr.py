"""
Arithmetic mini-language for model coefficient functions.

Coefficients are written as real-valued scalar expressions over the state
variables ``x1 .. xm``::

    parse('exp(-x1^2/2)', dim=2)

Grammar, loosest binding first::

    expression := term (('+' | '-') term)*
    term       := unary (('*' | '/') unary)*
    unary      := ('-' | '+') unary | power
    power      := atom ('^' unary)?
    atom       := number | variable | func '(' expression ')'
                | ('min' | 'max') '(' expression ',' expression ')'
                | '(' expression ')'

``^`` is right-associative and binds tighter than unary minus, so
``-x1^2`` is ``-(x1^2)`` and ``2^3^2`` is ``2^(3^2)``.

Evaluation never returns a silent non-finite value: division by zero,
``log``/``sqrt`` outside their domain and overflow are reported as
:class:`~exbubble.exceptions.ExprEvalError` for scalar evaluation, and as a
per-column error mask for the vectorised :meth:`ExprAst.evaluate_many`.
"""
import math
import re
from dataclasses import dataclass
from dataclasses import field

import numpy as np

from exbubble.exceptions import ExprEvalError
from exbubble.exceptions import ExprSyntaxError
from exbubble.exceptions import UnknownIdentifierError
from exbubble.exceptions import VariableIndexError


UNARY_FUNCTIONS = ('exp', 'log', 'sqrt', 'sinh', 'abs')
BINARY_FUNCTIONS = ('min', 'max')

# integer exponents up to this size use repeated multiplication
MAX_INTEGER_POWER = 64

_TOKEN_RE = re.compile(r'''
    (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),])
  | (?P<space>\s+)
''', re.VERBOSE)

_VARIABLE_RE = re.compile(r'x(\d+)$')


# nodes -----------------------------------------------------------------------

class Node:
    def pretty(self):
        raise NotImplementedError

    def __str__(self):
        return self.pretty()


@dataclass(frozen=True)
class Const(Node):
    value: float
    pos: int = field(default=0, compare=False)

    def pretty(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Var(Node):
    index: int
    name: str = field(default='', compare=False)
    pos: int = field(default=0, compare=False)

    def pretty(self):
        return self.name or f'x{self.index + 1}'


@dataclass(frozen=True)
class Unary(Node):
    op: str
    arg: Node
    pos: int = field(default=0, compare=False)

    def pretty(self):
        if self.op == 'neg':
            return f'(-{self.arg.pretty()})'
        return f'{self.op}({self.arg.pretty()})'


@dataclass(frozen=True)
class Binary(Node):
    op: str
    left: Node
    right: Node
    pos: int = field(default=0, compare=False)

    def pretty(self):
        if self.op in BINARY_FUNCTIONS:
            return f'{self.op}({self.left.pretty()}, {self.right.pretty()})'
        return f'({self.left.pretty()} {self.op} {self.right.pretty()})'


# tokenizer and parser --------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise ExprSyntaxError(f'unexpected character {source[pos]!r}', pos)
        kind = match.lastgroup
        if kind != 'space':
            tokens.append(_Token(kind, match.group(), pos))
        pos = match.end()
    tokens.append(_Token('end', '', len(source)))
    return tokens


class _Parser:

    def __init__(self, source, dim, names=None):
        self.source = source
        self.dim = dim
        self.names = tuple(names) if names is not None else None
        self.tokens = _tokenize(source)
        self.index = 0

    @property
    def token(self):
        return self.tokens[self.index]

    def advance(self):
        token = self.token
        self.index += 1
        return token

    def accept(self, text):
        if self.token.kind == 'op' and self.token.text == text:
            return self.advance()
        return None

    def expect(self, text):
        token = self.accept(text)
        if token is None:
            raise ExprSyntaxError(f'expected {text!r}, found {self._describe()}',
                                  self.token.pos)
        return token

    def _describe(self):
        if self.token.kind == 'end':
            return 'end of input'
        return repr(self.token.text)

    def parse(self):
        node = self.expression()
        if self.token.kind != 'end':
            raise ExprSyntaxError(f'unexpected {self._describe()}', self.token.pos)
        return node

    def expression(self):
        node = self.term()
        while self.token.kind == 'op' and self.token.text in '+-':
            op = self.advance()
            node = Binary(op.text, node, self.term(), pos=op.pos)
        return node

    def term(self):
        node = self.unary()
        while self.token.kind == 'op' and self.token.text in '*/':
            op = self.advance()
            node = Binary(op.text, node, self.unary(), pos=op.pos)
        return node

    def unary(self):
        op = self.accept('-')
        if op is not None:
            return Unary('neg', self.unary(), pos=op.pos)
        if self.accept('+') is not None:
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        op = self.accept('^')
        if op is not None:
            return Binary('^', base, self.unary(), pos=op.pos)
        return base

    def atom(self):
        token = self.token

        if token.kind == 'number':
            self.advance()
            value = float(token.text)
            if not math.isfinite(value):
                raise ExprSyntaxError(f'number {token.text} overflows', token.pos)
            return Const(value, pos=token.pos)

        if token.kind == 'ident':
            self.advance()
            if token.text in UNARY_FUNCTIONS:
                self.expect('(')
                arg = self.expression()
                self.expect(')')
                return Unary(token.text, arg, pos=token.pos)
            if token.text in BINARY_FUNCTIONS:
                self.expect('(')
                left = self.expression()
                self.expect(',')
                right = self.expression()
                self.expect(')')
                return Binary(token.text, left, right, pos=token.pos)
            return self.variable(token)

        if self.accept('(') is not None:
            node = self.expression()
            self.expect(')')
            return node

        raise ExprSyntaxError(f'unexpected {self._describe()}', token.pos)

    def variable(self, token):
        if self.names is not None:
            if token.text not in self.names:
                raise UnknownIdentifierError(f'unknown identifier {token.text!r}',
                                             token.pos)
            return Var(self.names.index(token.text), token.text, pos=token.pos)

        match = _VARIABLE_RE.match(token.text)
        if match is None:
            raise UnknownIdentifierError(f'unknown identifier {token.text!r}',
                                         token.pos)
        index = int(match.group(1))
        if not 1 <= index <= self.dim:
            raise VariableIndexError(
                f'variable {token.text} outside x1..x{self.dim}', token.pos)
        return Var(index - 1, token.text, pos=token.pos)


# evaluation ------------------------------------------------------------------

class _Context:

    def __init__(self, n):
        self.invalid = np.zeros(n, dtype=bool)
        self.error = None

    def flag(self, mask, node, message):
        if mask.any():
            self.invalid |= mask
            if self.error is None:
                self.error = (message, node)


def _safe(values, mask, fill=1.0):
    return np.where(mask, fill, values)


def _check_overflow(result, ctx, node, *inputs):
    finite_inputs = np.ones(result.shape, dtype=bool)
    for arr in inputs:
        finite_inputs &= np.isfinite(arr)
    ctx.flag(~np.isfinite(result) & finite_inputs, node, 'overflow')
    return result


def _integer_power(base, exponent):
    result = np.ones_like(base)
    factor = base.copy()
    k = abs(exponent)
    while k:
        if k & 1:
            result = result * factor
        factor = factor * factor
        k >>= 1
    return result


def _power(node, a, b, ctx):
    exponent = node.right
    if (isinstance(exponent, Const)
            and float(exponent.value).is_integer()
            and abs(exponent.value) <= MAX_INTEGER_POWER):
        k = int(exponent.value)
        result = _integer_power(a, k)
        if k < 0:
            zero = result == 0
            ctx.flag(zero, node, 'division by zero')
            result = 1.0 / _safe(result, zero)
        return _check_overflow(result, ctx, node, a)

    integral = np.isfinite(b) & (b == np.floor(b))
    positive = a > 0
    zero_base = a == 0

    ctx.flag(zero_base & (b < 0), node, 'division by zero')
    ctx.flag((a < 0) & ~integral, node, 'negative base with non-integer exponent')

    result = np.zeros_like(a)
    result = np.where(integral,
                      np.power(_safe(a, zero_base & (b < 0)), b),
                      result)
    logs = np.log(_safe(a, ~positive))
    result = np.where(~integral & positive, np.exp(b * logs), result)
    return _check_overflow(result, ctx, node, a, b)


def _evaluate(node, X, ctx):
    n = X.shape[1]

    if isinstance(node, Const):
        return np.full(n, float(node.value))

    if isinstance(node, Var):
        return np.asarray(X[node.index], dtype=float)

    if isinstance(node, Unary):
        a = _evaluate(node.arg, X, ctx)
        if node.op == 'neg':
            return -a
        if node.op == 'abs':
            return np.abs(a)
        if node.op == 'exp':
            return _check_overflow(np.exp(a), ctx, node, a)
        if node.op == 'sinh':
            return _check_overflow(np.sinh(a), ctx, node, a)
        if node.op == 'log':
            bad = a <= 0
            ctx.flag(bad, node, 'log of non-positive value')
            return np.log(_safe(a, bad))
        if node.op == 'sqrt':
            bad = a < 0
            ctx.flag(bad, node, 'sqrt of negative value')
            return np.sqrt(_safe(a, bad))
        raise ExprEvalError(f'unknown unary operator {node.op!r}', node)

    if isinstance(node, Binary):
        a = _evaluate(node.left, X, ctx)
        b = _evaluate(node.right, X, ctx)
        if node.op == '+':
            return _check_overflow(a + b, ctx, node, a, b)
        if node.op == '-':
            return _check_overflow(a - b, ctx, node, a, b)
        if node.op == '*':
            return _check_overflow(a * b, ctx, node, a, b)
        if node.op == '/':
            bad = b == 0
            ctx.flag(bad, node, 'division by zero')
            return _check_overflow(a / _safe(b, bad), ctx, node, a, b)
        if node.op == '^':
            return _power(node, a, b, ctx)
        if node.op == 'min':
            return np.minimum(a, b)
        if node.op == 'max':
            return np.maximum(a, b)
        raise ExprEvalError(f'unknown binary operator {node.op!r}', node)

    raise ExprEvalError(f'not an expression node: {node!r}')


# public surface --------------------------------------------------------------

@dataclass(frozen=True)
class ExprAst:
    """A parsed coefficient expression over ``dim`` state variables.

    Immutable, hashable and safe to share between threads.
    """
    root: Node
    dim: int
    source: str = field(default='', compare=False)

    def __str__(self):
        return self.root.pretty()

    @property
    def variables(self):
        found = set()

        def walk(node):
            if isinstance(node, Var):
                found.add(node.index)
            elif isinstance(node, Unary):
                walk(node.arg)
            elif isinstance(node, Binary):
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return frozenset(found)

    def evaluate_many(self, X):
        """Evaluate at every column of ``X`` (shape ``(dim, n)``).

        Returns ``(values, invalid, error)``: the values, a boolean mask of
        columns where evaluation failed and the first failure as a
        ``(message, node)`` pair, or ``None``.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[0] != self.dim:
            raise ExprEvalError(f'expected states of dimension {self.dim}, '
                                f'got {X.shape[0]}')

        ctx = _Context(X.shape[1])
        with np.errstate(all='ignore'):
            values = _evaluate(self.root, X, ctx)
            values = np.broadcast_to(values, (X.shape[1],)).astype(float)
        ctx.flag(~np.isfinite(values) & ~ctx.invalid, self.root, 'non-finite value')
        values = np.where(ctx.invalid, np.nan, values)
        return values, ctx.invalid, ctx.error

    def evaluate(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ExprEvalError(f'expected a state of length {self.dim}, '
                                f'got {x.shape[0]}')
        values, invalid, error = self.evaluate_many(x.reshape(-1, 1))
        if invalid[0]:
            message, node = error
            raise ExprEvalError(message, node)
        return float(values[0])


def parse(source: str, dim: int, names=None) -> ExprAst:
    """Parse ``source`` into an :class:`ExprAst` over ``dim`` variables.

    ``names`` optionally replaces the default ``x1 .. x{dim}`` variable names,
    e.g. ``parse('1/n', 1, names=('n',))``.
    """
    if not isinstance(source, str):
        source = str(source)
    if not source.strip():
        raise ExprSyntaxError('empty expression', 0)
    if names is not None and len(names) != dim:
        raise ValueError(f'{len(names)} variable names given for dimension {dim}')
    root = _Parser(source, dim, names).parse()
    return ExprAst(root=root, dim=dim, source=source)


def pretty(ast) -> str:
    """Fully parenthesised rendering that parses back to an equal tree."""
    if isinstance(ast, ExprAst):
        return ast.root.pretty()
    return ast.pretty()


def evaluate(ast: ExprAst, x) -> float:
    return ast.evaluate(x)
