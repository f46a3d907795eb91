import numpy as np
import pytest

from scenariokit.query import (
    And,
    Atom,
    Or,
    QueryError,
    estimate_query_accuracy,
    parse_query,
    print_query,
)


class TestParse:
    def test_single_atom(self):
        assert parse_query("event=lane_change") == Atom("event", "=", "lane_change")

    def test_value_disjunction_binds_tight(self):
        ast = parse_query("ODD.intersection=3-way & turn=left||right")
        assert ast == And(
            (
                Atom("ODD.intersection", "=", "3-way"),
                Or((Atom("turn", "=", "left"), Atom("turn", "=", "right"))),
            )
        )

    def test_unit_conversion(self):
        ast = parse_query("speed>50mph")
        assert isinstance(ast, Atom)
        assert ast.value == pytest.approx(22.352)

    def test_four_table_queries_parse(self):
        from scenariokit.synthetic import TABLE_QUERIES

        for q in TABLE_QUERIES:
            parse_query(q)

    def test_expression_or_needs_parens_inside_and(self):
        ast = parse_query("(event=turn || event=stop) & speed>5")
        assert isinstance(ast, And)
        assert isinstance(ast.children[0], Or)

    def test_expression_level_or(self):
        ast = parse_query("event=turn || speed>5")
        assert ast == Or((Atom("event", "=", "turn"), Atom("speed", ">", 5.0)))

    def test_syntax_error_reports_position(self):
        with pytest.raises(QueryError) as err:
            parse_query("event=lane_change &&& speed>5")
        assert err.value.position is not None

    def test_unknown_field(self):
        with pytest.raises(QueryError, match="unknown field"):
            parse_query("bogus=1")

    def test_unit_on_string_field(self):
        with pytest.raises(QueryError, match="unit on non-numeric"):
            parse_query("turn=50mph")

    def test_comparison_on_string_field(self):
        with pytest.raises(QueryError, match="needs a numeric field"):
            parse_query("turn>left")

    def test_unknown_unit(self):
        with pytest.raises(QueryError, match="unknown unit"):
            parse_query("speed>5parsecs")

    def test_trailing_garbage(self):
        with pytest.raises(QueryError, match="trailing"):
            parse_query("event=turn speed>5")


def random_ast(rng: np.random.Generator, depth=0):
    """Normalized random AST (no single-child or same-type nesting), the
    shape parse_query can produce."""
    fields = [
        ("event", "string", ["turn", "lane_change", "stop"]),
        ("turn", "string", ["left", "right"]),
        ("ODD.roadway_type", "string", ["freeway", "local"]),
        ("speed", "number", None),
        ("gap", "number", None),
    ]

    def atom():
        name, ftype, pool = fields[rng.integers(0, len(fields))]
        if ftype == "string":
            return Atom(name, "=", pool[rng.integers(0, len(pool))])
        op = ["=", ">", "<", ">=", "<="][rng.integers(0, 5)]
        return Atom(name, op, float(np.round(rng.uniform(0, 40), 3)))

    roll = rng.random()
    if depth >= 2 or roll < 0.4:
        return atom()
    n = int(rng.integers(2, 4))
    make_and = roll < 0.7

    def child():
        c = random_ast(rng, depth + 1)
        # Keep normalization: no And directly under And, no Or under Or.
        while isinstance(c, And if make_and else Or):
            c = random_ast(rng, depth + 1)
        return c

    children = tuple(child() for _ in range(n))
    return And(children) if make_and else Or(children)


class TestPrintRoundTrip:
    def test_examples(self):
        for text in [
            "event=lane_change",
            "speed>22.352",
            "ODD.roadway_type=freeway & speed>10.0 & event=turn",
            "(event=turn || event=stop) & speed<5.0",
        ]:
            ast = parse_query(text)
            assert parse_query(print_query(ast)) == ast

    def test_randomized_identity(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            ast = random_ast(rng)
            printed = print_query(ast)
            assert parse_query(printed) == ast, printed


class TestAccuracy:
    def test_single_atom(self):
        assert estimate_query_accuracy(Atom("event", "=", "turn"), {"event": 0.9}) == 0.9

    def test_product_rule(self):
        ast = And((Atom("event", "=", "turn"), Atom("speed", ">", 5.0)))
        assert estimate_query_accuracy(ast, {"event": 0.9, "speed": 0.8}) == pytest.approx(0.72)

    def test_identity_terms(self):
        ast = And(
            (
                Atom("event", "=", "merge"),
                Atom("speed", ">", 22.0),
                Atom("ODD.roadway_type", "=", "freeway"),
            )
        )
        acc = {"event": 1.0, "speed": 1.0, "ODD.roadway_type": 0.6}
        assert estimate_query_accuracy(ast, acc) == pytest.approx(0.6)

    def test_missing_entry(self):
        with pytest.raises(QueryError, match="no accuracy entry"):
            estimate_query_accuracy(Atom("event", "=", "turn"), {})
