"""Small scalar expression language over named variables.

Hamiltonians, state-modulated matrix entries, output maps, Rayleigh
dissipation functions and shaping functions are all written in this
language.  Trees are immutable, evaluation is pure, and gradients are
exact: they come from a forward-mode dual-number sweep of the tree,
not from finite differences and not from symbolic rewriting.

Grammar (no implicit multiplication):

    sum     :=  term (('+' | '-') term)*          left associative
    term    :=  factor (('*' | '/') factor)*      left associative
    factor  :=  '-' factor | power
    power   :=  primary ('^' ['-'] INTEGER)?
    primary :=  NUMBER | NAME | NAME '(' sum ')' | '(' sum ')'

so '^' binds tighter than unary minus, which binds tighter than '*'
and '/'.  Exponents are integer literals.  Known functions: sin, cos,
exp, ln, sqrt.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt")


class ExprError(ValueError):
    """Base class for expression-language errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at index {position}")
        self.position = position


class UndeclaredVariableError(ExprError):
    def __init__(self, name: str, position: int = -1):
        at = f" at index {position}" if position >= 0 else ""
        super().__init__(f"undeclared variable '{name}'{at}")
        self.name = name


class EvalDomainError(ExprError):
    """Evaluation left the real domain (log of a non-positive number,
    division by zero, overflow, or a non-finite result)."""


# --- syntax tree ------------------------------------------------------------
# Frozen dataclasses give structural equality, which is what the
# print/parse round-trip contract is stated in terms of.

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * /
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Power:
    base: object
    exponent: int


@dataclass(frozen=True)
class Call:
    fn: str
    arg: object


# --- tokenizer --------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


# --- parser -----------------------------------------------------------------

class _Parser:
    def __init__(self, tokens, variables):
        self.tokens = tokens
        self.idx = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.idx]

    def take(self):
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect_op(self, op):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"expected '{op}'", pos)
        return self.take()

    def sum(self):
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                node = Binary(text, node, self.term())
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                node = Binary(text, node, self.factor())
            else:
                return node

    def factor(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self):
        node = self.primary()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.take()
            return Power(node, self.exponent())
        return node

    def exponent(self):
        sign = 1
        kind, text, pos = self.peek()
        if kind == "op" and text == "-":
            self.take()
            sign = -1
            kind, text, pos = self.peek()
        if kind != "num":
            raise ExprSyntaxError("integer exponent expected", pos)
        value = float(text)
        if not value.is_integer():
            raise ExprSyntaxError("integer exponent expected", pos)
        self.take()
        return sign * int(value)

    def primary(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            nkind, ntext, _ = self.peek()
            if text in FUNCTIONS and nkind == "op" and ntext == "(":
                self.take()
                arg = self.sum()
                self.expect_op(")")
                return Call(text, arg)
            if text not in self.variables:
                raise UndeclaredVariableError(text, pos)
            return Var(text)
        if kind == "op" and text == "(":
            node = self.sum()
            self.expect_op(")")
            return node
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", pos)
        raise ExprSyntaxError(f"expected a value, found {text!r}", pos)


# --- printing ---------------------------------------------------------------
# Precedence levels: 1 sum, 2 term, 3 unary minus, 4 power, 5 atom.
# Parenthesisation is chosen so that re-parsing the printed text gives
# back a structurally identical tree.

def _fmt_number(value: float) -> str:
    return repr(float(value))


def _render(node):
    if isinstance(node, Num):
        if node.value < 0:
            return "-" + _fmt_number(-node.value), 3
        return _fmt_number(node.value), 5
    if isinstance(node, Var):
        return node.name, 5
    if isinstance(node, Call):
        inner, _ = _render(node.arg)
        return f"{node.fn}({inner})", 5
    if isinstance(node, Neg):
        inner, prec = _render(node.arg)
        if prec < 3:
            inner = f"({inner})"
        return "-" + inner, 3
    if isinstance(node, Power):
        base, prec = _render(node.base)
        if prec < 5:
            base = f"({base})"
        return f"{base}^{node.exponent}", 4
    if isinstance(node, Binary):
        mine = 1 if node.op in "+-" else 2
        lhs, lp = _render(node.lhs)
        if lp < mine:
            lhs = f"({lhs})"
        rhs, rp = _render(node.rhs)
        if rp <= mine:
            rhs = f"({rhs})"
        return f"{lhs}{node.op}{rhs}", mine
    raise TypeError(f"not an expression node: {node!r}")


def to_source(node) -> str:
    return _render(node)[0]


# --- evaluation -------------------------------------------------------------

def _check_finite(value: float):
    if not math.isfinite(value):
        raise EvalDomainError("non-finite value in evaluation")
    return value


def _eval(node, env) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Binary):
        a = _eval(node.lhs, env)
        b = _eval(node.rhs, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if b == 0.0:
            raise EvalDomainError("division by zero")
        return a / b
    if isinstance(node, Power):
        base = _eval(node.base, env)
        if base == 0.0 and node.exponent < 0:
            raise EvalDomainError("zero raised to a negative power")
        try:
            return base ** node.exponent
        except OverflowError:
            raise EvalDomainError("overflow in power") from None
    if isinstance(node, Call):
        a = _eval(node.arg, env)
        if node.fn == "sin":
            return math.sin(a)
        if node.fn == "cos":
            return math.cos(a)
        if node.fn == "exp":
            try:
                return math.exp(a)
            except OverflowError:
                raise EvalDomainError("overflow in exp") from None
        if node.fn == "ln":
            if a <= 0.0:
                raise EvalDomainError(f"ln of non-positive value {a!r}")
            return math.log(a)
        if a < 0.0:
            raise EvalDomainError(f"sqrt of negative value {a!r}")
        return math.sqrt(a)
    raise TypeError(f"not an expression node: {node!r}")


def _eval_dual(node, env, index):
    """Return (value, gradient) of the subtree.  Gradient entries follow
    the variable order given by `index`."""
    if isinstance(node, Num):
        return node.value, np.zeros(len(index))
    if isinstance(node, Var):
        g = np.zeros(len(index))
        g[index[node.name]] = 1.0
        return env[node.name], g
    if isinstance(node, Neg):
        v, g = _eval_dual(node.arg, env, index)
        return -v, -g
    if isinstance(node, Binary):
        a, da = _eval_dual(node.lhs, env, index)
        b, db = _eval_dual(node.rhs, env, index)
        if node.op == "+":
            return a + b, da + db
        if node.op == "-":
            return a - b, da - db
        if node.op == "*":
            return a * b, a * db + b * da
        if b == 0.0:
            raise EvalDomainError("division by zero")
        return a / b, (da * b - a * db) / (b * b)
    if isinstance(node, Power):
        base, dbase = _eval_dual(node.base, env, index)
        k = node.exponent
        if base == 0.0 and k < 1:
            if k < 0:
                raise EvalDomainError("zero raised to a negative power")
            return 1.0, np.zeros(len(index))  # x^0 with derivative 0
        try:
            value = base ** k
            slope = k * base ** (k - 1)
        except OverflowError:
            raise EvalDomainError("overflow in power") from None
        return value, slope * dbase
    if isinstance(node, Call):
        a, da = _eval_dual(node.arg, env, index)
        if node.fn == "sin":
            return math.sin(a), math.cos(a) * da
        if node.fn == "cos":
            return math.cos(a), -math.sin(a) * da
        if node.fn == "exp":
            try:
                v = math.exp(a)
            except OverflowError:
                raise EvalDomainError("overflow in exp") from None
            return v, v * da
        if node.fn == "ln":
            if a <= 0.0:
                raise EvalDomainError(f"ln of non-positive value {a!r}")
            return math.log(a), da / a
        if a <= 0.0:
            if a < 0.0:
                raise EvalDomainError(f"sqrt of negative value {a!r}")
            raise EvalDomainError("sqrt gradient at zero")
        v = math.sqrt(a)
        return v, da / (2.0 * v)
    raise TypeError(f"not an expression node: {node!r}")


# --- public wrapper ---------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    """A parsed expression together with its declared variable order."""

    root: object
    variables: tuple
    source: str

    def _env(self, point):
        if isinstance(point, dict):
            try:
                return {name: float(point[name]) for name in self.variables}
            except KeyError as exc:
                raise ExprError(f"missing value for variable {exc.args[0]!r}") from None
        values = np.asarray(point, dtype=float)
        if values.shape != (len(self.variables),):
            raise ExprError(
                f"expected {len(self.variables)} values, got shape {values.shape}")
        return dict(zip(self.variables, values))

    def eval(self, point) -> float:
        return _check_finite(_eval(self.root, self._env(point)))

    def eval_grad(self, point):
        index = {name: i for i, name in enumerate(self.variables)}
        value, grad = _eval_dual(self.root, self._env(point), index)
        _check_finite(value)
        if not np.all(np.isfinite(grad)):
            raise EvalDomainError("non-finite gradient in evaluation")
        return value, grad

    def to_source(self) -> str:
        return to_source(self.root)

    def __str__(self) -> str:
        return self.source


def parse_expr(source: str, variables) -> Expr:
    """Parse `source` over the ordered variable names `variables`."""
    names = tuple(variables)
    if len(set(names)) != len(names):
        raise ExprError(f"duplicate variable names in {names!r}")
    for name in names:
        if name in FUNCTIONS:
            raise ExprError(f"variable name {name!r} collides with a function name")
    parser = _Parser(_tokenize(source), frozenset(names))
    node = parser.sum()
    kind, text, pos = parser.peek()
    if kind != "end":
        raise ExprSyntaxError(f"unexpected token {text!r}", pos)
    return Expr(node, names, source)


def expr_from_tree(node, variables) -> Expr:
    """Wrap an already-built tree; the stored source is the printed form."""
    return Expr(node, tuple(variables), to_source(node))


# --- tree construction helpers ----------------------------------------------
# Used when models are combined (closed-loop matrix products, symbolic
# Jacobian columns).  Folding is limited to constants and exact
# zeros/ones so printed entries stay readable; it assumes entries are
# finite wherever they are evaluated.

def n_num(value: float):
    v = float(value)
    if v < 0:
        return Neg(Num(-v))
    return Num(v)


def _const_value(node):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Neg) and isinstance(node.arg, Num):
        return -node.arg.value
    return None


def _is_const(node, value):
    return _const_value(node) == value


def n_neg(node):
    c = _const_value(node)
    if c is not None:
        return n_num(-c)
    if isinstance(node, Neg):
        return node.arg
    return Neg(node)


def n_add(a, b):
    ca, cb = _const_value(a), _const_value(b)
    if ca is not None and cb is not None:
        return n_num(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    return Binary("+", a, b)


def n_sub(a, b):
    ca, cb = _const_value(a), _const_value(b)
    if ca is not None and cb is not None:
        return n_num(ca - cb)
    if cb == 0.0:
        return a
    if ca == 0.0:
        return n_neg(b)
    return Binary("-", a, b)


def n_mul(a, b):
    ca, cb = _const_value(a), _const_value(b)
    if ca is not None and cb is not None:
        return n_num(ca * cb)
    if ca == 0.0 or cb == 0.0:
        return Num(0.0)
    if ca == 1.0:
        return b
    if cb == 1.0:
        return a
    if ca == -1.0:
        return n_neg(b)
    if cb == -1.0:
        return n_neg(a)
    return Binary("*", a, b)


def n_div(a, b):
    cb = _const_value(b)
    if cb == 1.0:
        return a
    ca = _const_value(a)
    if ca is not None and cb is not None and cb != 0.0:
        return n_num(ca / cb)
    return Binary("/", a, b)


def n_pow(base, k: int):
    if k == 0:
        return Num(1.0)
    if k == 1:
        return base
    c = _const_value(base)
    if c is not None:
        try:
            return n_num(c ** k)
        except OverflowError:
            pass
    return Power(base, k)


def relabel(node, mapping):
    """Rename variables throughout a tree (names absent from `mapping`
    are kept)."""
    if isinstance(node, Var):
        return Var(mapping.get(node.name, node.name))
    if isinstance(node, Num):
        return node
    if isinstance(node, Neg):
        return Neg(relabel(node.arg, mapping))
    if isinstance(node, Binary):
        return Binary(node.op, relabel(node.lhs, mapping), relabel(node.rhs, mapping))
    if isinstance(node, Power):
        return Power(relabel(node.base, mapping), node.exponent)
    if isinstance(node, Call):
        return Call(node.fn, relabel(node.arg, mapping))
    raise TypeError(f"not an expression node: {node!r}")


def substitute(node, mapping):
    """Replace variables by whole subtrees; `mapping` maps names to nodes."""
    if isinstance(node, Var):
        return mapping.get(node.name, node)
    if isinstance(node, Num):
        return node
    if isinstance(node, Neg):
        return n_neg(substitute(node.arg, mapping))
    if isinstance(node, Binary):
        a = substitute(node.lhs, mapping)
        b = substitute(node.rhs, mapping)
        return {"+": n_add, "-": n_sub, "*": n_mul, "/": n_div}[node.op](a, b)
    if isinstance(node, Power):
        return n_pow(substitute(node.base, mapping), node.exponent)
    if isinstance(node, Call):
        return Call(node.fn, substitute(node.arg, mapping))
    raise TypeError(f"not an expression node: {node!r}")


def derive(node, name: str):
    """Symbolic derivative of a tree with respect to one variable.

    Only used to *construct* derivative fields (for example the input
    matrix -J dC^T/dx of a converted model); pointwise gradients always
    go through the dual-number evaluator.
    """
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0) if node.name == name else Num(0.0)
    if isinstance(node, Neg):
        return n_neg(derive(node.arg, name))
    if isinstance(node, Binary):
        da = derive(node.lhs, name)
        db = derive(node.rhs, name)
        if node.op == "+":
            return n_add(da, db)
        if node.op == "-":
            return n_sub(da, db)
        if node.op == "*":
            return n_add(n_mul(da, node.rhs), n_mul(node.lhs, db))
        num = n_sub(n_mul(da, node.rhs), n_mul(node.lhs, db))
        return n_div(num, n_pow(node.rhs, 2))
    if isinstance(node, Power):
        k = node.exponent
        du = derive(node.base, name)
        return n_mul(n_mul(n_num(k), n_pow(node.base, k - 1)), du)
    if isinstance(node, Call):
        du = derive(node.arg, name)
        u = node.arg
        if node.fn == "sin":
            return n_mul(Call("cos", u), du)
        if node.fn == "cos":
            return n_neg(n_mul(Call("sin", u), du))
        if node.fn == "exp":
            return n_mul(Call("exp", u), du)
        if node.fn == "ln":
            return n_div(du, u)
        return n_div(du, n_mul(Num(2.0), Call("sqrt", u)))
    raise TypeError(f"not an expression node: {node!r}")
