from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurosym.lang import (
    And, Arith, Atom, ConstraintFile, ConstraintTypeError, Concat, Contains, EvalError, LangError,
    NeuralDecl, Num, Or, ParseError, Str, StrLen, StrStr, UndeclaredVariable, Var, VarDecl,
    eval_constraint, eval_expr, free_vars, negate, parse, parse_constraint, print_constraint, print_file,
)

KINDS = {"a": "int", "b": "int", "r": "real", "s": "str", "t": "str"}

EXPLOIT = """\
str input_uri maxlen 128;
str input_version maxlen 128;
int uri_length in 0..128;
int ver_length in 8..128;
int ptr in 0..258;
assert uri_length == strlen(input_uri) && ver_length == strlen(input_version) && ptr > 99;
neural "http.nsx" (uri_length, ver_length) -> (ptr);
"""


# -- parsing examples -------------------------------------------------------------


def test_simple_atom():
    cf = parse("int ptr; assert ptr > 99;")
    assert cf.symbolic == (Atom(">", Var("ptr"), Num(99.0)),)
    assert cf.decls == (VarDecl("ptr", "int"),)


def test_strlen_atom():
    cf = parse("str u; int L; assert L == strlen(u);")
    assert cf.symbolic == (Atom("==", Var("L"), StrLen(Var("u"))),)


def test_missing_operand_reports_position():
    with pytest.raises(ParseError) as exc:
        parse("int a; assert a < ;")
    assert str(exc.value).startswith("1:19:")


def test_line_numbers_in_errors():
    with pytest.raises(ParseError) as exc:
        parse("int a;\n\nassert a > 1 &&;\n")
    assert str(exc.value).startswith("3:")


def test_strlen_of_number_is_type_error():
    with pytest.raises(ConstraintTypeError):
        parse("int a; assert strlen(a) > 1;")


def test_undeclared_variable():
    with pytest.raises(UndeclaredVariable):
        parse("int a; assert b > 1;")


def test_duplicate_declaration():
    with pytest.raises(LangError):
        parse("int a; real a;")


def test_empty_domain_rejected():
    with pytest.raises(LangError):
        parse("int a in 3..1;")


def test_neural_decl_and_comments():
    cf = parse('# header\nint x; int y;\nneural "m.nsx" (x) -> (y); # trailing\n')
    assert cf.neural == (NeuralDecl("m.nsx", ("x",), ("y",)),)


def test_neural_inputs_and_outputs_disjoint():
    with pytest.raises(LangError):
        parse('int x; neural "m.nsx" (x) -> (x);')


def test_mixed_numeric_string_compare_rejected():
    with pytest.raises(ConstraintTypeError):
        parse('int a; str s; assert a == s;')


def test_division_by_zero_parses_and_fails_at_eval():
    c = parse_constraint("a / 0 > 1", KINDS)
    with pytest.raises(EvalError):
        eval_expr(c.left, {"a": 1})


def test_precedence():
    c = parse_constraint("a > 1 || a < 0 && b == 2", KINDS)
    assert isinstance(c, Or) and isinstance(c.right, And)
    e = parse_constraint("a - b - 1 == a * b + 2 / r", KINDS).left
    assert e == Arith("-", Arith("-", Var("a"), Var("b")), Num(1.0))


# -- printing and round trip --------------------------------------------------------


def test_exploit_file_round_trips():
    cf = parse(EXPLOIT)
    assert parse(print_file(cf)) == cf


def test_decls_only_file():
    cf = ConstraintFile([VarDecl("x", "int", 0, 3)], [], [])
    text = print_file(cf)
    assert "assert" not in text
    assert parse(text) == cf


def test_right_nested_subtraction_keeps_parentheses():
    c = Atom("==", Arith("-", Var("a"), Arith("-", Var("b"), Num(1.0))), Num(0.0))
    assert print_constraint(c) == "a - (b - 1) == 0"
    assert parse_constraint(print_constraint(c), KINDS) == c


# -- free variables ---------------------------------------------------------------


def test_free_vars():
    assert free_vars(Atom(">", Var("ptr"), Num(99.0))) == {"ptr"}
    c = And(Atom("<", Var("a"), Var("b")), Atom("<", Var("c"), Var("d")))
    assert free_vars(c) == {"a", "b", "c", "d"}
    cf = parse(EXPLOIT)
    assert free_vars(cf.symbolic[0]) == {"uri_length", "input_uri", "ver_length", "input_version", "ptr"}


# -- semantics ----------------------------------------------------------------------


def test_strstr_and_contains():
    env = {"s": "hello", "t": "ll"}
    assert eval_expr(StrStr(Var("s"), Var("t")), env) == 2
    assert eval_expr(StrStr(Var("s"), Str("z")), env) == -1
    assert eval_constraint(Contains(Concat(Var("s"), Str("!")), Str("o!")), env)
    assert eval_constraint(Atom("==", Var("s"), Str("hello")), env)
    assert not eval_constraint(Atom("!=", Var("s"), Str("hello")), env)


@given(st.integers(-5, 5), st.integers(-5, 5))
def test_negate_flips_truth(a, b):
    for cmp in ("==", "!=", ">", ">=", "<", "<="):
        c = Or(Atom(cmp, Var("a"), Var("b")), And(Atom("<", Var("a"), Num(0.0)), Atom(">", Var("b"), Num(1.0))))
        env = {"a": a, "b": b}
        assert eval_constraint(negate(c), env) != eval_constraint(c, env)


# -- property: random well-typed ASTs round-trip ---------------------------------------

_nums = st.one_of(
    st.integers(-1000, 1000).map(float),
    st.sampled_from([0.5, 1.25, -2.75, 1e-3, 3.14159]),
).map(Num)
_text = st.text(alphabet='ab "\\\n\tz', max_size=4).map(Str)


def _num_expr():
    leaves = st.one_of(_nums, st.sampled_from(["a", "b", "r"]).map(Var))

    def extend(children):
        return st.one_of(
            st.builds(Arith, st.sampled_from("+-*/"), children, children),
            st.builds(StrLen, _str_expr(0)),
            st.builds(StrStr, _str_expr(1), _str_expr(0)),
        )

    return st.recursive(leaves, extend, max_leaves=6)


def _str_expr(depth: int):
    leaves = st.one_of(_text, st.sampled_from(["s", "t"]).map(Var))
    if depth == 0:
        return leaves
    return st.one_of(leaves, st.builds(Concat, leaves, _str_expr(depth - 1)))


_cmp = st.sampled_from(("==", "!=", ">", ">=", "<", "<="))
_atoms = st.one_of(
    st.builds(Atom, _cmp, _num_expr(), _num_expr()),
    st.builds(Atom, st.sampled_from(("==", "!=")), _str_expr(1), _str_expr(1)),
    st.builds(Contains, _str_expr(1), _str_expr(1)),
)
constraints = st.recursive(
    _atoms, lambda ch: st.one_of(st.builds(And, ch, ch), st.builds(Or, ch, ch)), max_leaves=5,
)


@settings(max_examples=1000, deadline=None)
@given(constraints)
def test_random_constraints_round_trip(c):
    text = print_constraint(c)
    assert parse_constraint(text, KINDS) == c


@settings(max_examples=200, deadline=None)
@given(st.lists(constraints, max_size=3))
def test_random_files_round_trip(cs):
    decls = [VarDecl("a", "int", -5, 5), VarDecl("b", "int"), VarDecl("r", "real", -1.5, 2.5),
             VarDecl("s", "str", maxlen=4), VarDecl("t", "str")]
    cf = ConstraintFile(decls, cs, [NeuralDecl("m.nsx", ("a", "b"), ("r",))])
    assert parse(print_file(parse(print_file(cf)))) == cf
