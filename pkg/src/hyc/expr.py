"""Expression language for ODE right-hand sides, guards and path conditions.

Expressions are immutable trees.  ``parse_expr`` / ``parse_guard`` read infix
text, ``to_text`` prints the canonical fully parenthesized form, ``eval_expr``
and ``Guard.holds`` interpret trees, and ``compile_*`` turn trees into plain
Python callables with identical float semantics for the integrator hot loop.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

TIME = "t"

UNARY_FUNCS = ("sin", "cos", "exp", "sqrt", "abs")
BINARY_OPS = ("+", "-", "*", "/", "^")
COMPARISONS = ("<", "<=", ">", ">=")

_CONSTANTS = {"pi": math.pi}


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, text: str, pos: int):
        self.text = text
        self.pos = pos
        super().__init__(f"{message} at column {pos + 1}: {text!r}")


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, text: str, pos: int):
        self.name = name
        self.pos = pos
        super().__init__(f"unknown identifier {name!r} at column {pos + 1}: {text!r}")


class ExprDomainError(ExprError):
    """Raised when evaluation leaves the real domain (division by zero etc.)."""

    def __init__(self, message: str, node: "Expr | None" = None):
        self.node = node
        where = f" in {to_text(node)}" if node is not None else ""
        super().__init__(message + where)


# ---------------------------------------------------------------------------
# Tree nodes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of UNARY_FUNCS
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Unary, Binary]


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class Compare:
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class And:
    left: "Guard"
    right: "Guard"


@dataclass(frozen=True)
class Or:
    left: "Guard"
    right: "Guard"


@dataclass(frozen=True)
class Not:
    arg: "Guard"


Guard = Union[BoolConst, Compare, And, Or, Not]
_GUARD_TYPES = (BoolConst, Compare, And, Or, Not)


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|==|!=|&&|\|\||[-+*/^()<>=!&|])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Iterable[str], params: Mapping[str, float] | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = set(variables) | {TIME}
        self.params = dict(params or {})

    # token helpers
    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def next(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def accept(self, value: str) -> bool:
        if self.peek()[1] == value and self.peek()[0] in ("op", "id"):
            self.i += 1
            return True
        return False

    def expect(self, value: str) -> None:
        kind, text, pos = self.peek()
        if text != value:
            what = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {what}", self.text, pos)
        self.i += 1

    def fail(self, message: str) -> None:
        raise ExprSyntaxError(message, self.text, self.peek()[2])

    def finish(self) -> None:
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", self.text, pos)

    # guards: or > and > not > comparison
    def guard(self) -> Guard:
        left = self.conj()
        while self.accept("or") or self.accept("||") or self.accept("|"):
            left = Or(left, self.conj())
        return left

    def conj(self) -> Guard:
        left = self.neg()
        while self.accept("and") or self.accept("&&") or self.accept("&"):
            left = And(left, self.neg())
        return left

    def neg(self) -> Guard:
        if self.accept("not") or self.accept("!"):
            return Not(self.neg())
        return self.atom()

    def atom(self) -> Guard:
        kind, text, pos = self.peek()
        if kind == "id" and text in ("true", "false"):
            self.i += 1
            return BoolConst(text == "true")
        if text == "(":
            # Either a parenthesized guard or an arithmetic operand of a comparison.
            save = self.i
            self.i += 1
            try:
                inner = self.guard()
                self.expect(")")
            except ExprSyntaxError:
                self.i = save
            else:
                if self.peek()[1] not in COMPARISONS + ("==", "=", "!="):
                    return inner
                self.i = save
        left = self.expr()
        kind, op, pos = self.peek()
        if op in ("==", "=", "!="):
            raise ExprSyntaxError(
                "equality atoms are not supported (measure-zero guards); use <, <=, > or >=",
                self.text,
                pos,
            )
        if op not in COMPARISONS:
            self.fail("expected a comparison operator")
        self.i += 1
        right = self.expr()
        return Compare(op, left, right)

    # arithmetic: sum > product > unary minus > power > primary
    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.next()[1]
            left = Binary(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.next()[1]
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.i += 1
            return Unary("neg", self.unary())
        if self.peek()[1] == "+" and self.peek()[0] == "op":
            self.i += 1
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.peek()[1] == "^":
            self.i += 1
            # right associative; exponent may carry its own sign
            return Binary("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        kind, text, pos = self.next()
        if kind == "num":
            return Const(float(text))
        if kind == "id":
            if text in UNARY_FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(text, arg)
            if text in self.variables:
                return Var(text)
            if text in self.params:
                return Const(float(self.params[text]))
            if text in _CONSTANTS:
                return Const(_CONSTANTS[text])
            raise UnknownIdentifierError(text, self.text, pos)
        if text == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        what = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", self.text, pos)


def parse_expr(text: str, variables: Sequence[str], params: Mapping[str, float] | None = None) -> Expr:
    """Parse an arithmetic expression over ``variables``, ``t`` and named params."""
    p = _Parser(text, variables, params)
    e = p.expr()
    p.finish()
    return e


def parse_guard(text: str, variables: Sequence[str], params: Mapping[str, float] | None = None) -> Guard:
    p = _Parser(text, variables, params)
    g = p.guard()
    p.finish()
    return g


# ---------------------------------------------------------------------------
# Printing and structural measures
# ---------------------------------------------------------------------------


def _num(value: float) -> str:
    s = repr(float(value))
    return f"({s})" if value < 0 else s


def to_text(node) -> str:
    """Canonical fully parenthesized infix form."""
    if isinstance(node, Const):
        return _num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{to_text(node.arg)})"
        return f"{node.op}({to_text(node.arg)})"
    if isinstance(node, Binary):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, BoolConst):
        return "true" if node.value else "false"
    if isinstance(node, Compare):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, And):
        return f"({to_text(node.left)} and {to_text(node.right)})"
    if isinstance(node, Or):
        return f"({to_text(node.left)} or {to_text(node.right)})"
    if isinstance(node, Not):
        return f"(not {to_text(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def expr_length(node) -> int:
    """Node count: leaves count 1, composites 1 + sum of children."""
    if isinstance(node, (Const, Var, BoolConst)):
        return 1
    if isinstance(node, (Unary, Not)):
        return 1 + expr_length(node.arg)
    if isinstance(node, (Binary, Compare, And, Or)):
        return 1 + expr_length(node.left) + expr_length(node.right)
    raise TypeError(f"not an expression node: {node!r}")


def variables_of(node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, (Const, BoolConst)):
        return set()
    if isinstance(node, (Unary, Not)):
        return variables_of(node.arg)
    return variables_of(node.left) | variables_of(node.right)


def is_guard(node) -> bool:
    return isinstance(node, _GUARD_TYPES)


# ---------------------------------------------------------------------------
# Interpretation
# ---------------------------------------------------------------------------

_UNARY_IMPL: dict[str, Callable[[float], float]] = {
    "neg": lambda a: -a,
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "sqrt": math.sqrt,
    "abs": abs,
}


def _binary(op: str, a: float, b: float) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    return math.pow(a, b)


def eval_expr(e: Expr, valuation: Mapping[str, float], t: float = 0.0) -> float:
    """Evaluate ``e``; raises ExprDomainError naming the offending node."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.name == TIME:
            return float(t)
        try:
            return float(valuation[e.name])
        except KeyError:
            raise ExprError(f"valuation does not cover variable {e.name!r}") from None
    if isinstance(e, Unary):
        a = eval_expr(e.arg, valuation, t)
        try:
            r = _UNARY_IMPL[e.op](a)
        except (ValueError, OverflowError) as exc:
            raise ExprDomainError(f"{e.op}({a!r}): {exc}", e) from None
    else:
        a = eval_expr(e.left, valuation, t)
        b = eval_expr(e.right, valuation, t)
        try:
            r = _binary(e.op, a, b)
        except ZeroDivisionError:
            raise ExprDomainError("division by zero", e) from None
        except (ValueError, OverflowError) as exc:
            raise ExprDomainError(f"{a!r} {e.op} {b!r}: {exc}", e) from None
    if not math.isfinite(r):
        raise ExprDomainError(f"non-finite result {r!r}", e)
    return r


def atom_value(c: Compare, valuation: Mapping[str, float], t: float = 0.0) -> float:
    """Signed slack of one comparison: ``b - a`` for ``a < b``, ``a - b`` for ``a > b``.

    NaN when either side leaves the real domain, so the atom (and its
    negation) is simply false there and guards stay total.
    """
    try:
        a = eval_expr(c.left, valuation, t)
        b = eval_expr(c.right, valuation, t)
    except ExprDomainError:
        return math.nan
    return b - a if c.op in ("<", "<=") else a - b


def _holds(g: Guard, env: Mapping[str, float], t: float, delta: float, negate: bool) -> bool:
    if isinstance(g, BoolConst):
        return g.value != negate
    if isinstance(g, Not):
        return _holds(g.arg, env, t, delta, not negate)
    if isinstance(g, (And, Or)):
        conj = isinstance(g, And) != negate
        left = _holds(g.left, env, t, delta, negate)
        right = _holds(g.right, env, t, delta, negate)
        return (left and right) if conj else (left or right)
    m = atom_value(g, env, t)
    strict = g.op in ("<", ">")
    if negate:
        m, strict = -m, not strict
    return m > -delta if strict else m >= -delta


def guard_holds(g: Guard, valuation: Mapping[str, float], t: float = 0.0, delta: float = 0.0) -> bool:
    """Evaluate a guard; ``delta > 0`` weakens every atom by ``delta``.

    Negations are pushed down to the atoms first, so weakening relaxes the
    guard as a whole.
    """
    return _holds(g, valuation, t, delta, False)


def _margin(g: Guard, env: Mapping[str, float], t: float, negate: bool) -> float:
    if isinstance(g, BoolConst):
        return math.inf if g.value != negate else -math.inf
    if isinstance(g, Not):
        return _margin(g.arg, env, t, not negate)
    if isinstance(g, (And, Or)):
        conj = isinstance(g, And) != negate
        left = _margin(g.left, env, t, negate)
        right = _margin(g.right, env, t, negate)
        return min(left, right) if conj else max(left, right)
    m = atom_value(g, env, t)
    if m != m:
        return -math.inf
    return -m if negate else m


def guard_margin(g: Guard, valuation: Mapping[str, float], t: float = 0.0) -> float:
    """Signed robustness: positive inside the guard, negative outside."""
    return _margin(g, valuation, t, False)


# ---------------------------------------------------------------------------
# Compilation to Python source
# ---------------------------------------------------------------------------

_PY_FUNCS = {"sin": "_sin", "cos": "_cos", "exp": "_exp", "sqrt": "_sqrt", "abs": "abs"}

COMPILE_GLOBALS = {
    "_sin": math.sin,
    "_cos": math.cos,
    "_exp": math.exp,
    "_sqrt": math.sqrt,
    "_pow": math.pow,
    "_inf": math.inf,
    "_nan": math.nan,
    "_DomainErrors": (ZeroDivisionError, ValueError, OverflowError),
}


def py_source(e: Expr, names: Mapping[str, str]) -> str:
    """Python source for ``e``; ``names`` maps variable names to local identifiers."""
    if isinstance(e, Const):
        return f"({float(e.value)!r})"
    if isinstance(e, Var):
        return names[e.name]
    if isinstance(e, Unary):
        if e.op == "neg":
            return f"(-{py_source(e.arg, names)})"
        return f"{_PY_FUNCS[e.op]}({py_source(e.arg, names)})"
    a = py_source(e.left, names)
    b = py_source(e.right, names)
    if e.op == "^":
        return f"_pow({a}, {b})"
    return f"({a} {e.op} {b})"


def _atoms(g: Guard, out: list) -> None:
    if isinstance(g, Compare):
        out.append(g)
    elif isinstance(g, Not):
        _atoms(g.arg, out)
    elif isinstance(g, (And, Or)):
        _atoms(g.left, out)
        _atoms(g.right, out)


def _combine(g: Guard, index: dict, negate: bool, margin: bool) -> str:
    if isinstance(g, BoolConst):
        if margin:
            return "_inf" if g.value != negate else "(-_inf)"
        return "True" if g.value != negate else "False"
    if isinstance(g, Not):
        return _combine(g.arg, index, not negate, margin)
    if isinstance(g, (And, Or)):
        conj = isinstance(g, And) != negate
        a = _combine(g.left, index, negate, margin)
        b = _combine(g.right, index, negate, margin)
        if margin:
            return f"{'min' if conj else 'max'}({a}, {b})"
        return f"({a} {'and' if conj else 'or'} {b})"
    k = index[id(g)]
    strict = g.op in ("<", ">")
    if margin:
        return f"_m{k}n" if negate else f"_m{k}"
    if negate:
        return f"({'-_a%d >= _nd' % k if strict else '-_a%d > _nd' % k})"
    return f"(_a{k} > _nd)" if strict else f"(_a{k} >= _nd)"


def _local_names(variables: Sequence[str]) -> dict[str, str]:
    names = {v: f"_x{i}" for i, v in enumerate(variables)}
    names[TIME] = "_t"
    return names


def _build(src: str, name: str):
    namespace: dict = {}
    exec(compile(src, f"<hyc:{name}>", "exec"), dict(COMPILE_GLOBALS), namespace)
    return namespace[name]


def guard_source(g: Guard, variables: Sequence[str]) -> tuple[str, str]:
    """Python source of ``_holds(_t, _s, _d=0.0)`` and ``_margin(_t, _s)``."""
    names = _local_names(variables)
    atoms: list = []
    _atoms(g, atoms)
    index = {id(a): k for k, a in enumerate(atoms)}
    lines = []
    if variables:
        lines.append(f"    {', '.join(names[v] for v in variables)}, = _s")
    for k, a in enumerate(atoms):
        left = py_source(a.left, names)
        right = py_source(a.right, names)
        diff = f"{right} - {left}" if a.op in ("<", "<=") else f"{left} - {right}"
        lines += [
            "    try:",
            f"        _a{k} = {diff}",
            "    except _DomainErrors:",
            f"        _a{k} = _nan",
        ]
    body = "\n".join(lines) + "\n" if lines else ""
    holds = (
        "def _holds(_t, _s, _d=0.0):\n"
        + body
        + "    _nd = -_d\n"
        + f"    return {_combine(g, index, False, False)}\n"
    )
    margin_lines = [
        f"    _m{k} = -_inf if _a{k} != _a{k} else _a{k}\n    _m{k}n = -_inf if _a{k} != _a{k} else -_a{k}"
        for k in range(len(atoms))
    ]
    margin = (
        "def _margin(_t, _s):\n"
        + body
        + "".join(line + "\n" for line in margin_lines)
        + f"    return {_combine(g, index, False, True)}\n"
    )
    return holds, margin


def compile_guard(g: Guard, variables: Sequence[str]) -> tuple[Callable, Callable]:
    """Return ``(holds, margin)`` callables taking ``(t, state_tuple)``.

    ``holds`` accepts an optional weakening ``delta`` as third argument.  Both
    agree bit for bit with ``guard_holds`` / ``guard_margin`` whenever the
    interpreter evaluates every atom without a domain error.
    """
    holds_src, margin_src = guard_source(g, variables)
    return _build(holds_src, "_holds"), _build(margin_src, "_margin")
