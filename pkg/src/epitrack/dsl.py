"""Plain-text reaction model format.

One reaction per line; '#' starts a comment; blank lines are ignored:

    I + S -> 2 I @ 0.1
    I -> S @ 0.05
    0 -> X @ 1.5

Grammar:

    reaction := side "->" side "@" rate
    side     := "0" | term ("+" term)*
    term     := [coefficient] species

Coefficients are positive integers, rates nonnegative floats, species
names identifiers.  Species are numbered in order of first appearance.
Duplicate reaction lines are kept as distinct events.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ModelSyntaxError
from .skm import Event, ReactionSystem

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<arrow>->)
  | (?P<plus>\+)
  | (?P<at>@)
  | (?P<number>-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # arrow | plus | at | number | ident | end
    text: str
    column: int  # 1-based


def _tokenize(line: str, lineno: int) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            raise ModelSyntaxError(
                f"unexpected character {line[pos]!r}", lineno, pos + 1
            )
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    tokens.append(_Token("end", "", len(line) + 1))
    return tokens


class _LineParser:
    def __init__(self, tokens: list[_Token], lineno: int):
        self.tokens = tokens
        self.lineno = lineno
        self.i = 0

    @property
    def here(self) -> _Token:
        return self.tokens[self.i]

    def error(self, message: str, token: _Token | None = None):
        tok = token or self.here
        raise ModelSyntaxError(message, self.lineno, tok.column)

    def take(self, kind: str, what: str) -> _Token:
        tok = self.here
        if tok.kind != kind:
            got = repr(tok.text) if tok.kind != "end" else "end of line"
            self.error(f"expected {what}, got {got}")
        self.i += 1
        return tok

    def parse_side(self) -> dict[str, int]:
        """Parse one side into species -> coefficient; '0' means empty."""
        if (
            self.here.kind == "number"
            and self.here.text == "0"
            and self.tokens[self.i + 1].kind in ("arrow", "at", "end")
        ):
            self.i += 1
            return {}
        counts: dict[str, int] = {}
        while True:
            coeff = 1
            if self.here.kind == "number":
                tok = self.take("number", "coefficient")
                if not re.fullmatch(r"\d+", tok.text) or int(tok.text) == 0:
                    self.error("coefficient must be a positive integer", tok)
                coeff = int(tok.text)
            name = self.take("ident", "a species name").text
            counts[name] = counts.get(name, 0) + coeff
            if self.here.kind != "plus":
                return counts
            self.i += 1

    def parse_reaction(self) -> tuple[dict[str, int], dict[str, int], float]:
        reactants = self.parse_side()
        self.take("arrow", "'->'")
        products = self.parse_side()
        self.take("at", "'@'")
        tok = self.take("number", "a rate constant")
        rate = float(tok.text)
        if rate < 0.0:
            self.error("rate constant must be nonnegative", tok)
        if self.here.kind != "end":
            self.error("unexpected trailing input")
        return reactants, products, rate


def parse_model(text: str) -> ReactionSystem:
    """Parse reaction-model text into a ReactionSystem.

    Raises ModelSyntaxError with a 1-based line and column on bad input.
    """
    species_order: list[str] = []
    seen: set[str] = set()
    parsed: list[tuple[dict[str, int], dict[str, int], float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        parser = _LineParser(_tokenize(line, lineno), lineno)
        reactants, products, rate = parser.parse_reaction()
        for side in (reactants, products):
            for name in side:
                if name not in seen:
                    seen.add(name)
                    species_order.append(name)
        parsed.append((reactants, products, rate))
    events = []
    for reactants, products, rate in parsed:
        alpha = tuple(reactants.get(name, 0) for name in species_order)
        beta = tuple(products.get(name, 0) for name in species_order)
        events.append(Event(reactants=alpha, products=beta, rate=rate))
    return ReactionSystem(species_order, events)


def _format_side(coeffs: tuple[int, ...], names: tuple[str, ...]) -> str:
    terms = []
    for coeff, name in zip(coeffs, names):
        if coeff == 0:
            continue
        terms.append(name if coeff == 1 else f"{coeff} {name}")
    return " + ".join(terms) if terms else "0"


def format_model(system: ReactionSystem) -> str:
    """Render a ReactionSystem back to model text; parse(format(s)) == s."""
    names = tuple(s.name for s in system.species)
    lines = []
    for ev in system.events:
        lines.append(
            f"{_format_side(ev.reactants, names)} -> "
            f"{_format_side(ev.products, names)} @ {ev.rate!r}"
        )
    return "\n".join(lines) + "\n"
