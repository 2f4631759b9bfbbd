"""Recursive descent parser for the polynomial expression grammar.

    expr   := term (('+' | '-') term)*
    term   := ('+' | '-')? factor ('*' factor)*
    factor := base ('^' uint)?
    base   := number | ident | '(' expr ')'
    number := decimal (exponent allowed) | decimal '/' decimal

Implicit multiplication is rejected. A leading sign on a term lets printed
polynomials such as ``-2.0*x1 + 1.0`` round-trip.
"""
from __future__ import annotations

import re
from typing import NamedTuple, Sequence

from densafe.services.poly import Polynomial


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class Token(NamedTuple):
    kind: str
    text: str
    pos: int


_DECIMAL = r"(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?"
_TOKEN_RE = re.compile(
    rf"(?P<ratio>{_DECIMAL}/{_DECIMAL})"
    rf"|(?P<number>{_DECIMAL})"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*^()])"
    r"|(?P<space>\s+)"
)
_UINT_RE = re.compile(r"\d+")


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "space":
            tokens.append(Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


class PolynomialParser:
    def __init__(self, variables: Sequence[str]):
        self.variables = list(variables)
        self.n = len(self.variables)
        self._index = {name: i for i, name in enumerate(self.variables)}
        self._tokens: list[Token] = []
        self._pos = 0

    def parse(self, text: str) -> Polynomial:
        self._tokens = tokenize(text)
        self._pos = 0
        if self._peek().kind == "end":
            raise ParseError("empty expression", 0)
        result = self._expr()
        tok = self._peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected {tok.text!r}", tok.pos)
        return result

    # -- token helpers ------------------------------------------------------

    def _peek(self) -> Token:
        return self._tokens[self._pos]

    def _advance(self) -> Token:
        tok = self._tokens[self._pos]
        self._pos += 1
        return tok

    def _at_op(self, *ops: str) -> bool:
        tok = self._peek()
        return tok.kind == "op" and tok.text in ops

    # -- grammar ------------------------------------------------------------

    def _expr(self) -> Polynomial:
        result = self._term()
        while self._at_op("+", "-"):
            op = self._advance().text
            rhs = self._term()
            result = result + rhs if op == "+" else result - rhs
        return result

    def _term(self) -> Polynomial:
        negate = False
        if self._at_op("+", "-"):
            negate = self._advance().text == "-"
        result = self._factor()
        while self._at_op("*"):
            self._advance()
            result = result * self._factor()
        return -result if negate else result

    def _factor(self) -> Polynomial:
        base = self._base()
        if self._at_op("^"):
            self._advance()
            tok = self._advance()
            if tok.kind != "number" or not _UINT_RE.fullmatch(tok.text):
                raise ParseError("exponent must be a non-negative integer literal", tok.pos)
            return base ** int(tok.text)
        return base

    def _base(self) -> Polynomial:
        tok = self._advance()
        if tok.kind == "number":
            return Polynomial.constant(float(tok.text), self.n)
        if tok.kind == "ratio":
            num, den = tok.text.split("/")
            if float(den) == 0.0:
                raise ParseError("division by zero in ratio literal", tok.pos)
            return Polynomial.constant(float(num) / float(den), self.n)
        if tok.kind == "ident":
            if tok.text not in self._index:
                raise ParseError(f"unknown identifier {tok.text!r}", tok.pos)
            return Polynomial.variable(self._index[tok.text], self.n)
        if tok.kind == "op" and tok.text == "(":
            inner = self._expr()
            closing = self._advance()
            if closing.kind != "op" or closing.text != ")":
                raise ParseError("expected ')'", closing.pos)
            return inner
        if tok.kind == "end":
            raise ParseError("unexpected end of expression", tok.pos)
        raise ParseError(f"unexpected {tok.text!r}", tok.pos)
