"""Condition mini-language for test pre/post conditions and expected results.

Grammar::

    expr   := clause ("AND" clause)*
    clause := ident OP term | ident "in" "[" term "," term "]"
    OP     := "=" | "!=" | "<" | "<=" | ">" | ">="
    term   := number | version | "quoted string" | ident

Identifiers are runs of words and may contain spaces ("Current Version").
Lookups fold case and whitespace.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from typing import Mapping, Union

from otsectest.assessment import Version, parse_version
from otsectest.errors import ConditionSyntaxError, TypeMismatch, UnboundIdentifier

Value = Union[float, int, Version, str]


@dataclass(frozen=True)
class Ident:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Literal:
    value: Value

    def __str__(self) -> str:
        if isinstance(self.value, str):
            return '"' + self.value.replace('"', '\\"') + '"'
        if isinstance(self.value, float) and self.value.is_integer():
            return str(int(self.value))
        return str(self.value)


Term = Union[Ident, Literal]


@dataclass(frozen=True)
class Comparison:
    left: Ident
    op: str
    right: Term

    def __str__(self) -> str:
        return f"{self.left} {self.op} {self.right}"


@dataclass(frozen=True)
class RangeCheck:
    subject: Ident
    low: Term
    high: Term

    def __str__(self) -> str:
        return f"{self.subject} in [{self.low}, {self.high}]"


@dataclass(frozen=True)
class Conjunction:
    parts: tuple[Union[Comparison, RangeCheck], ...]

    def __str__(self) -> str:
        return " AND ".join(str(p) for p in self.parts)


ConditionExpr = Union[Comparison, RangeCheck, Conjunction]

_TOKEN_RE = re.compile(
    r'\s*(?:(?P<string>"(?:[^"\\]|\\.)*")|(?P<op><=|>=|!=|=|<|>)|(?P<punct>[\[\],])|(?P<word>[^\s\[\],<>=!"]+))'
)
_NUMBER_RE = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?$")
_VERSION_HEAD_RE = re.compile(r"^V\d+\.\d+$", re.IGNORECASE)
_UPDATE_RE = re.compile(r"^Upd\d+$", re.IGNORECASE)

_OPS = {
    "=": operator.eq, "!=": operator.ne, "<": operator.lt,
    "<=": operator.le, ">": operator.gt, ">=": operator.ge,
}


def normalize_name(name: str) -> str:
    return " ".join(name.casefold().split())


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                if text[pos:].strip():
                    raise ConditionSyntaxError(f"unexpected character {text[pos]!r}", pos)
                break
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.i = 0

    def peek(self, offset: int = 0):
        j = self.i + offset
        return self.tokens[j] if j < len(self.tokens) else ("end", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def at_and(self) -> bool:
        kind, value, _ = self.peek()
        return kind == "word" and value == "AND"

    def parse(self) -> ConditionExpr:
        if not self.tokens:
            raise ConditionSyntaxError("empty condition", 0)
        parts = [self.clause()]
        while self.at_and():
            self.take()
            parts.append(self.clause())
        kind, value, pos = self.peek()
        if kind != "end":
            raise ConditionSyntaxError(f"unexpected {value!r}", pos)
        return parts[0] if len(parts) == 1 else Conjunction(tuple(parts))

    def clause(self):
        start = self.peek()[2]
        words = []
        while True:
            kind, value, pos = self.peek()
            if kind != "word" or value == "AND":
                break
            if value.lower() == "in" and self.peek(1)[0] == "punct" and self.peek(1)[1] == "[":
                break
            words.append(value)
            self.take()
        if not words:
            raise ConditionSyntaxError("expected identifier", start)
        if len(words) == 1 and _NUMBER_RE.match(words[0]):
            raise ConditionSyntaxError("expected identifier, found number", start)
        ident = Ident(" ".join(words))
        kind, value, pos = self.take()
        if kind == "op":
            return Comparison(ident, value, self.term())
        if kind == "word":
            self.expect("punct", "[")
            low = self.term()
            self.expect("punct", ",")
            high = self.term()
            self.expect("punct", "]")
            return RangeCheck(ident, low, high)
        raise ConditionSyntaxError("expected operator or 'in'", pos)

    def expect(self, kind: str, value: str):
        k, v, pos = self.take()
        if k != kind or v != value:
            raise ConditionSyntaxError(f"expected {value!r}", pos)

    def term(self) -> Term:
        kind, value, pos = self.peek()
        if kind == "string":
            self.take()
            return Literal(re.sub(r"\\(.)", r"\1", value[1:-1]))
        words = []
        while True:
            k, v, _ = self.peek()
            if k != "word" or v == "AND":
                break
            words.append(v)
            self.take()
        if not words:
            raise ConditionSyntaxError("expected a value", pos)
        if len(words) == 1 and _NUMBER_RE.match(words[0]):
            return Literal(float(words[0]))
        if _VERSION_HEAD_RE.match(words[0]) and (
            len(words) == 1 or (len(words) == 2 and _UPDATE_RE.match(words[1]))
        ):
            return Literal(parse_version(" ".join(words)))
        return Ident(" ".join(words))


def parse_condition(text: str) -> ConditionExpr:
    return _Parser(text).parse()


class Environment:
    """Identifier bindings with case- and whitespace-insensitive lookup."""

    def __init__(self, bindings: Mapping[str, Value] | None = None):
        self._values: dict[str, tuple[str, Value]] = {}
        for name, value in (bindings or {}).items():
            self.bind(name, value)

    def bind(self, name: str, value: Value) -> None:
        self._values[normalize_name(name)] = (" ".join(name.split()), value)

    def get(self, name: str) -> Value:
        try:
            return self._values[normalize_name(name)][1]
        except KeyError:
            raise UnboundIdentifier(name) from None

    def __contains__(self, name: str) -> bool:
        return normalize_name(name) in self._values

    def items(self) -> list[tuple[str, Value]]:
        return sorted(self._values.values(), key=lambda pair: normalize_name(pair[0]))

    def copy(self) -> Environment:
        env = Environment()
        env._values = dict(self._values)
        return env


def _category(value: Value) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, Version):
        return "version"
    return "string"


def _resolve(term: Term, env: Environment) -> Value:
    return env.get(term.name) if isinstance(term, Ident) else term.value


def _check_types(left: Value, right: Value) -> None:
    if _category(left) != _category(right) or _category(left) == "bool":
        raise TypeMismatch(left, right)


def evaluate(expr: ConditionExpr, env: Environment | Mapping[str, Value]) -> bool:
    """Evaluate a parsed condition; mixed-type comparisons raise instead of returning False."""
    if not isinstance(env, Environment):
        env = Environment(env)
    if isinstance(expr, Conjunction):
        # every clause is evaluated so that unbound names are always reported
        results = [evaluate(part, env) for part in expr.parts]
        return all(results)
    if isinstance(expr, RangeCheck):
        value = env.get(expr.subject.name)
        low, high = _resolve(expr.low, env), _resolve(expr.high, env)
        _check_types(value, low)
        _check_types(value, high)
        return low <= value <= high
    left = env.get(expr.left.name)
    right = _resolve(expr.right, env)
    _check_types(left, right)
    return _OPS[expr.op](left, right)


def identifiers(expr: ConditionExpr) -> list[str]:
    """Identifier names referenced by ``expr`` in order of appearance, without repeats."""
    parts = expr.parts if isinstance(expr, Conjunction) else (expr,)
    names: list[str] = []
    for part in parts:
        terms = (part.left, part.right) if isinstance(part, Comparison) else (part.subject, part.low, part.high)
        for term in terms:
            if isinstance(term, Ident) and term.name not in names:
                names.append(term.name)
    return names
