"""KB text language: parsing, canonical serialization, diagnostics."""

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from spook import parse_kb, parse_query, serialize_kb
from spook.errors import DuplicateName, KbSyntaxError, SpookError
from spook.lang import parse_ref, tokenize
from spook.model import Chain

sys.path.insert(0, str(Path(__file__).parent))
from kbgen import generate_case  # noqa: E402

FIXTURE = Path(__file__).parent.parent / "src/spook/fixtures/battalion.spook"

MINI = """
# tiny but uses every declaration kind
class Thing {
  simple hue { range red, blue ; cpd { 0.25 0.75 ; } }
}
class Box {
  complex holds : Thing multi(2) inverse in-box ;
  number holds-count over holds { cpd { 0.5 0.25 0.25 ; } }
  quantifier reds = count(holds.hue == red) ;
  complex near : Thing ;
  reference near-pick over near { entries class Thing ; cpd { 1.0 ; } }
  simple label {
    range a, b ;
    parents reds ;
    cpd { 0.9 0.1 ; 0.5 0.5 ; 0.2 0.8 ; }
  }
}
class Thing2 extends Thing {
  simple hue { range red, blue ; cpd { 0.75 0.25 ; } }
}
instance box-1 : Box { }
instance thing-1 : Thing2 { }

assert box-1.holds = thing-1 ;
"""


def test_mini_kb_parses():
    kb = parse_kb(MINI)
    assert set(kb.classes) == {"Thing", "Box", "Thing2"}
    assert set(kb.instances) == {"box-1", "thing-1"}
    assert kb.classes["Thing2"].superclass == "Thing"


def test_roundtrip_fixpoint_mini():
    once = serialize_kb(parse_kb(MINI))
    twice = serialize_kb(parse_kb(once))
    assert once == twice


def test_roundtrip_fixpoint_battalion_fixture():
    text = FIXTURE.read_text()
    once = serialize_kb(parse_kb(text, source=str(FIXTURE)))
    twice = serialize_kb(parse_kb(once))
    assert once == twice


@pytest.mark.parametrize("seed", range(8))
def test_roundtrip_fixpoint_generated(seed):
    case = generate_case(seed)
    once = serialize_kb(case.kb)
    twice = serialize_kb(parse_kb(once))
    assert once == twice


def test_roundtrip_preserves_cpd_values_exactly():
    kb1 = parse_kb(MINI)
    kb2 = parse_kb(serialize_kb(kb1))
    c1 = kb1.classes["Box"].attributes["label"].cpd
    c2 = kb2.classes["Box"].attributes["label"].cpd
    assert np.array_equal(c1, c2)


def test_comments_and_whitespace_ignored():
    spaced = MINI.replace("range red, blue ;", "range red , blue ;  # trailing\n")
    assert serialize_kb(parse_kb(spaced)) == serialize_kb(parse_kb(MINI))


# --- diagnostics ------------------------------------------------------------------


@pytest.mark.parametrize(
    "text,line,fragment",
    [
        ("class {", 1, "expected"),
        ("class X {\n  simple a { range p q ; cpd { 0.5 0.5 ; } }\n}", 2, "expected ';'"),
        ("class X {\n  simple a { range p, q ; cpd { 0.5 ; 0.5 } }\n}", 2, "cpd"),
        ("class X {\n  simple a { range p, q ; }\n}", 2, "no cpd"),
        ("instance i : X {", 1, "expected"),
        ("junk", 1, "expected 'class'"),
    ],
)
def test_errors_carry_location(text, line, fragment):
    with pytest.raises(KbSyntaxError) as exc:
        parse_kb(text, source="t.spook")
    err = exc.value
    assert err.location is not None
    assert err.location.source == "t.spook"
    assert err.location.line == line
    assert fragment in err.message


def test_duplicate_class_is_located():
    with pytest.raises(DuplicateName) as exc:
        parse_kb("class X { }\nclass X { }")
    assert exc.value.location.line == 2


def test_tokenizer_rejects_stray_characters():
    with pytest.raises(KbSyntaxError) as exc:
        tokenize("class X { simple a ?? }")
    assert exc.value.location is not None


def test_cpd_row_width_checked_at_parse_time():
    bad = "class X {\n  simple a { range p, q ; cpd { 0.2 0.3 0.5 ; } }\n}"
    with pytest.raises(KbSyntaxError) as exc:
        parse_kb(bad)
    assert exc.value.location.line == 2


# --- query expressions ------------------------------------------------------------


def test_parse_query_plain():
    expr = parse_query("P(box-1.label)")
    assert expr.target == ("box-1", Chain.parse("label"))
    assert expr.evidence == ()


def test_parse_query_with_evidence():
    expr = parse_query(
        "P(box-1.label | thing-1.hue = red, box-1.near.hue = blue)"
    )
    assert expr.target == ("box-1", Chain.parse("label"))
    assert expr.evidence == (
        ("thing-1", Chain.parse("hue"), "red"),
        ("box-1", Chain.parse("near.hue"), "blue"),
    )


def test_query_str_reparses_to_itself():
    expr = parse_query("P(box-1.label | thing-1.hue = red)")
    assert parse_query(str(expr)) == expr


@pytest.mark.parametrize(
    "text",
    ["P box-1.label", "P(box-1)", "P(box-1.label", "P(a.b | c)", "P(a.b) extra"],
)
def test_bad_queries_are_located(text):
    with pytest.raises(KbSyntaxError) as exc:
        parse_query(text)
    assert exc.value.location is not None


def test_parse_ref():
    assert parse_ref("box-1.near.hue") == ("box-1", Chain.parse("near.hue"))
    with pytest.raises(KbSyntaxError):
        parse_ref("box-1.near hue")


# --- fuzzing ----------------------------------------------------------------------


@given(st.text(max_size=300))
@settings(max_examples=300, deadline=None)
@example("class")
@example("class X { simple")
@example("cpd { ; }")
def test_fuzz_junk_never_crashes(text):
    try:
        parse_kb(text)
    except SpookError as exc:
        assert exc.location is not None


@given(st.data())
@settings(max_examples=300, deadline=None)
def test_fuzz_mutated_fixture_never_crashes(data):
    """Buzz the parser with edits of a real document: deletions, splices,
    and duplications reach much deeper into the grammar than random junk."""
    text = FIXTURE.read_text()
    n_edits = data.draw(st.integers(1, 6))
    for _ in range(n_edits):
        i = data.draw(st.integers(0, max(0, len(text) - 1)))
        j = min(len(text), i + data.draw(st.integers(1, 30)))
        op = data.draw(st.sampled_from(["del", "dup", "swap"]))
        if op == "del":
            text = text[:i] + text[j:]
        elif op == "dup":
            text = text[:j] + text[i:j] + text[j:]
        else:
            text = text[:i] + text[i:j][::-1] + text[j:]
    try:
        parse_kb(text)
    except SpookError as exc:
        assert exc.location is not None
