"""Reaction-model text format: parsing, printing, diagnostics."""

from __future__ import annotations

import numpy as np
import pytest

from epitrack.dsl import format_model, parse_model
from epitrack.errors import ModelSyntaxError
from epitrack.skm import Event, ReactionSystem

SIS_TEXT = """\
# time-unit: hours
I + S -> 2 I @ 0.1
I -> S @ 0.05
S -> I @ 0.01
"""


class TestParse:
    def test_sis_file(self):
        system = parse_model(SIS_TEXT)
        assert [s.name for s in system.species] == ["I", "S"]
        assert len(system.events) == 3
        assert system.events[0] == Event((1, 1), (2, 0), 0.1)
        assert system.events[1] == Event((1, 0), (0, 1), 0.05)
        assert system.events[2] == Event((0, 1), (1, 0), 0.01)

    def test_comments_and_blank_lines_ignored(self):
        text = "\n# header\n\nX -> 0 @ 1.0  # death\n\n"
        system = parse_model(text)
        assert len(system.events) == 1
        assert system.events[0] == Event((1,), (0,), 1.0)

    def test_empty_sides(self):
        system = parse_model("0 -> X @ 2.0\nX -> 0 @ 0.5\n")
        assert system.events[0] == Event((0,), (1,), 2.0)
        assert system.events[1] == Event((1,), (0,), 0.5)

    def test_coefficients_with_and_without_space(self):
        a = parse_model("2 X -> Y @ 1\n")
        b = parse_model("2X -> Y @ 1\n")
        assert a == b
        assert a.events[0].reactants == (2, 0)

    def test_repeated_species_in_side_accumulates(self):
        system = parse_model("X + X -> Y @ 1\n")
        assert system.events[0].reactants == (2, 0)

    def test_duplicate_lines_stay_distinct(self):
        system = parse_model("X -> Y @ 1\nX -> Y @ 1\n")
        assert len(system.events) == 2
        assert system.events[0] == system.events[1]

    def test_species_order_is_first_appearance(self):
        system = parse_model("B -> A @ 1\nC + A -> B @ 2\n")
        assert [s.name for s in system.species] == ["B", "A", "C"]

    def test_scientific_notation_rate(self):
        system = parse_model("X -> 0 @ 2.5e-3\n")
        assert system.events[0].rate == 2.5e-3


MALFORMED = [
    ("I + -> S @ 1", 1, 5, "species name"),
    ("I -> S @ -0.5", 1, 10, "nonnegative"),
    ("I -> S @ fast", 1, 10, "rate constant"),
    ("I -> S", 1, 7, "'@'"),
    ("I S @ 1", 1, 3, "'->'"),
    ("I -> S @ 1; x", 1, 11, "unexpected character"),
    ("0 I -> S @ 1", 1, 1, "positive integer"),
    ("1.5 I -> S @ 1", 1, 1, "positive integer"),
    ("I -> S @ 1 extra", 1, 12, "trailing"),
    ("ok -> fine @ 1\nalso -> good @ 2\n-> S @ 1", 3, 1, "species name"),
]


class TestDiagnostics:
    @pytest.mark.parametrize("text,line,col,fragment", MALFORMED)
    def test_malformed_input_pinpointed(self, text, line, col, fragment):
        with pytest.raises(ModelSyntaxError) as exc_info:
            parse_model(text)
        err = exc_info.value
        assert err.line == line
        assert err.column == col
        assert fragment in str(err)


def _random_system(rng: np.random.Generator) -> ReactionSystem:
    n_species = int(rng.integers(1, 5))
    names = [f"SP{i}" for i in range(n_species)]
    events = []
    for _ in range(int(rng.integers(1, 6))):
        alpha = tuple(int(v) for v in rng.integers(0, 3, n_species))
        beta = tuple(int(v) for v in rng.integers(0, 3, n_species))
        rate = float(rng.uniform(0, 5))
        events.append(Event(alpha, beta, rate))
    return ReactionSystem(names, events)


class TestRoundTrip:
    HAND_WRITTEN = [
        SIS_TEXT,
        "0 -> X @ 1.5\nX -> 0 @ 0.3\n",
        "2 X -> Y @ 0.25\nY -> 2 X @ 0.1\n",
        "A + B -> C @ 0.01\nC -> A + B @ 0.02\n",
        "X -> X + Y @ 2.0\nY -> 0 @ 1.0\n",
        "H1 -> H2 @ 0.4\nH2 -> H1 @ 0.6\nH2 -> H3 @ 0.1\nH3 -> H1 @ 0.9\n",
        "S -> I @ 1e-4\n",
        "A -> 2 A @ 0.7\n2 A -> A @ 0.7\n",
    ]

    def test_hand_written_corpus(self):
        for text in self.HAND_WRITTEN:
            system = parse_model(text)
            assert parse_model(format_model(system)) == system

    def test_generated_corpus(self):
        # Grows the corpus to 20 model files total alongside the
        # hand-written set; printing a parsed file reparses identically.
        rng = np.random.default_rng(2024)
        for _ in range(12):
            text = format_model(_random_system(rng))
            system = parse_model(text)
            assert parse_model(format_model(system)) == system

    def test_format_uses_zero_for_empty_side(self):
        system = parse_model("0 -> X @ 2.0\n")
        assert format_model(system).startswith("0 -> X @")
