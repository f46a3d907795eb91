"""Behavioral-competency query language.

Grammar (EBNF):

    query    := or_expr
    or_expr  := and_expr ("||" and_expr)*
    and_expr := atom ("&" atom)*
    atom     := field op value | "(" query ")"
    op       := "=" | ">" | "<" | ">=" | "<="
    field    := ident ("." ident)*
    value    := number unit? | ident ("||" ident)*
    unit     := "mph" | "kmh" | "mps"

"turn=left||right" is value-level sugar for (turn=left || turn=right): a
"||" directly between bare values binds tighter than "&". Numeric values
with unit suffixes normalize to SI at parse time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .units import SPEED_UNITS, split_number_unit

# Fields produced by tag lowering and ODD extraction; extend via the
# schema argument of parse_query / the index manifest.
DEFAULT_FIELD_TYPES: dict[str, str] = {
    "event": "string",
    "turn": "string",
    "lane_change": "string",
    "ego_vehicle_event": "string",
    "ODD.intersection": "string",
    "ODD.signage": "string",
    "ODD.traffic_signal": "string",
    "ODD.roadway_type": "string",
    "speed": "number",
    "min_accel": "number",
    "heading_change": "number",
    "turn_radius": "number",
    "gap": "number",
}


class QueryError(ValueError):
    """Syntax or type error in a query; `position` is the 0-based offset
    into the original text when known."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


@dataclass(frozen=True)
class Atom:
    field: str
    op: str  # =, >, <, >=, <=
    value: str | float


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


QueryNode = Atom | And | Or

_TOKEN = re.compile(
    r"\s*(?:(?P<lpar>\()|(?P<rpar>\))|(?P<or>\|\|)|(?P<and>&)"
    r"|(?P<op>>=|<=|=|>|<)|(?P<word>[A-Za-z0-9_.+-]+))"
)

_NUMBER_VALUE = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?(?P<unit>[A-Za-z]+)?$")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == m.start():
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            at = len(text) - len(stripped)
            raise QueryError(f"unexpected character {text[at]!r}", at)
        pos = m.end()
        for name, value in m.groupdict().items():
            if value is not None:
                tokens.append((name, value, m.start(name)))
                break
    return tokens


class _Parser:
    def __init__(self, text: str, schema: dict[str, str]):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.schema = schema

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, len(self.text))

    def take(self, kind=None):
        name, value, pos = self.peek()
        if name is None:
            raise QueryError("unexpected end of query", pos)
        if kind is not None and name != kind:
            raise QueryError(f"expected {kind}, found {value!r}", pos)
        self.i += 1
        return name, value, pos

    def parse(self) -> QueryNode:
        node = self.or_expr()
        name, value, pos = self.peek()
        if name is not None:
            raise QueryError(f"trailing input {value!r}", pos)
        return node

    def or_expr(self) -> QueryNode:
        children = [self.and_expr()]
        while self.peek()[0] == "or":
            self.take("or")
            children.append(self.and_expr())
        return children[0] if len(children) == 1 else Or(tuple(children))

    def and_expr(self) -> QueryNode:
        children = [self.atom()]
        while self.peek()[0] == "and":
            self.take("and")
            children.append(self.atom())
        return children[0] if len(children) == 1 else And(tuple(children))

    def atom(self) -> QueryNode:
        name, value, pos = self.peek()
        if name == "lpar":
            self.take("lpar")
            node = self.or_expr()
            self.take("rpar")
            return node
        _, field, field_pos = self.take("word")
        ftype = self.schema.get(field)
        if ftype is None:
            raise QueryError(f"unknown field {field!r}", field_pos)
        _, op, _ = self.take("op")
        values = [self.take("word")]
        # Value-level disjunction: consume "||" only when a bare word
        # follows and the one after is not an operator (which would mean a
        # new atom at expression level).
        while (
            self.peek()[0] == "or"
            and self.i + 1 < len(self.tokens)
            and self.tokens[self.i + 1][0] == "word"
            and (self.i + 2 >= len(self.tokens) or self.tokens[self.i + 2][0] != "op")
        ):
            self.take("or")
            values.append(self.take("word"))
        atoms = tuple(self._typed_atom(field, ftype, op, v, p) for _, v, p in values)
        if len(atoms) > 1 and op != "=":
            raise QueryError("value alternatives require '='", field_pos)
        return atoms[0] if len(atoms) == 1 else Or(atoms)

    def _typed_atom(self, field: str, ftype: str, op: str, raw: str, pos: int) -> Atom:
        m = _NUMBER_VALUE.match(raw)
        if m:
            unit = m.group("unit")
            if unit is not None and ftype != "number":
                raise QueryError(f"unit on non-numeric field {field!r}", pos)
            if unit is not None and unit not in SPEED_UNITS:
                raise QueryError(f"unknown unit {unit!r}", pos)
            if ftype != "number":
                raise QueryError(f"field {field!r} is {ftype}, got a number", pos)
            value, unit = split_number_unit(raw)
            if unit:
                value = value * SPEED_UNITS[unit]
            return Atom(field, op, float(value))
        if ftype == "number":
            raise QueryError(f"field {field!r} is numeric, got {raw!r}", pos)
        if op != "=":
            raise QueryError(f"operator {op!r} needs a numeric field", pos)
        return Atom(field, op, raw)


def parse_query(text: str, schema: dict[str, str] | None = None) -> QueryNode:
    """Parse a query against a field schema (DEFAULT_FIELD_TYPES when not
    given). Raises QueryError with a position on syntax/type errors."""
    return _Parser(text, schema if schema is not None else DEFAULT_FIELD_TYPES).parse()


def print_query(node: QueryNode) -> str:
    """Canonical text form; parse_query(print_query(ast)) == ast."""

    def fmt_value(v):
        return repr(v) if isinstance(v, float) else str(v)

    def walk(n: QueryNode, parent: str) -> str:
        if isinstance(n, Atom):
            return f"{n.field}{n.op}{fmt_value(n.value)}"
        if isinstance(n, And):
            body = " & ".join(walk(c, "and") for c in n.children)
            return f"({body})" if parent == "atom" else body
        body = " || ".join(walk(c, "or") for c in n.children)
        # Or binds loosest: needs parens inside an And.
        return f"({body})" if parent == "and" else body

    return walk(node, "top")


def query_fields(node: QueryNode) -> set[str]:
    if isinstance(node, Atom):
        return {node.field}
    out: set[str] = set()
    for c in node.children:
        out |= query_fields(c)
    return out


def estimate_query_accuracy(node: QueryNode, per_field_accuracy: dict[str, float]) -> float:
    """Compound search accuracy as the product of the independently
    detected terms' accuracies (Or uses the same product as a conservative
    lower bound)."""
    if isinstance(node, Atom):
        try:
            return float(per_field_accuracy[node.field])
        except KeyError:
            raise QueryError(f"no accuracy entry for field {node.field!r}") from None
    acc = 1.0
    for child in node.children:
        acc *= estimate_query_accuracy(child, per_field_accuracy)
    return acc
