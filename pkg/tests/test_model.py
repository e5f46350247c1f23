"""Model layer: inheritance, chain resolution, validation, dependency graph."""

import numpy as np
import pytest

from spook import parse_kb
from spook.errors import (
    IncompatibleOverride,
    NonSimpleChain,
    UnknownAttribute,
)
from spook.model import (
    Chain,
    build_dependency_graph,
    effective_model,
    ensure_valid,
    resolve_chain,
    validate_kb,
)

BASE = """
class Animal {
  simple size { range small, big ; cpd { 0.6 0.4 ; } }
  complex den : Den ;
}
class Dog extends Animal {
  simple size { range small, big ; cpd { 0.2 0.8 ; } }
  simple bark { range quiet, loud ; parents size ; cpd { 0.7 0.3 ; 0.1 0.9 ; } }
}
class Den {
  simple depth { range shallow, deep ; cpd { 0.5 0.5 ; } }
}
instance rex : Dog { }
instance hole : Den { }

assert rex.den = hole ;
"""


def kb_of(text):
    return parse_kb(text)


def codes(text):
    return {d.code for d in validate_kb(kb_of(text)).diagnostics}


# --- inheritance ------------------------------------------------------------------


def test_subclass_relations():
    kb = kb_of(BASE)
    assert kb.class_of("rex") == "Dog"
    assert kb.superclass_chain("Dog") == ["Animal", "Dog"]
    assert kb.is_subclass("Dog", "Animal")
    assert not kb.is_subclass("Animal", "Dog")


def test_effective_model_merges_and_overrides():
    kb = kb_of(BASE)
    dog = effective_model(kb, "Dog")
    assert list(dog) == ["size", "den", "bark"]  # base order first
    assert dog["size"].cpd[0, 1] == 0.8           # override shadows base
    assert effective_model(kb, "Animal")["size"].cpd[0, 1] == 0.4


def test_effective_model_instance_sees_class():
    kb = kb_of(BASE)
    assert list(effective_model(kb, "rex")) == ["size", "den", "bark"]


def test_simple_override_cannot_change_range():
    text = BASE.replace(
        "simple size { range small, big ; cpd { 0.2 0.8 ; } }",
        "simple size { range tiny, huge ; cpd { 0.2 0.8 ; } }",
    )
    with pytest.raises(IncompatibleOverride):
        effective_model(kb_of(text), "Dog")


def test_override_cannot_change_kind():
    text = BASE.replace(
        "simple size { range small, big ; cpd { 0.2 0.8 ; } }",
        "complex size : Den ;",
    )
    with pytest.raises(IncompatibleOverride):
        effective_model(kb_of(text), "Dog")


NARROW = """
class Holder {
  complex item : Base ;
}
class PinnedHolder extends Holder {
  complex item : Narrowed inverse held-by ;
}
class Base {
  simple tag { range x, y ; cpd { 0.5 0.5 ; } }
}
class Narrowed extends Base {
  complex held-by : PinnedHolder inverse item ;
}
"""


def test_complex_override_may_narrow_type_and_pin_inverse():
    kb = kb_of(NARROW)
    decl = effective_model(kb, "PinnedHolder")["item"]
    assert decl.type == "Narrowed"
    assert decl.inverse == "held-by"
    assert validate_kb(kb).ok


def test_complex_override_cannot_widen_type():
    text = NARROW.replace(
        "complex item : Narrowed inverse held-by ;", "complex item : Widened ;"
    ) + "\nclass Widened { }\n"
    with pytest.raises(IncompatibleOverride):
        effective_model(kb_of(text), "PinnedHolder")


def test_complex_override_cannot_change_arity():
    text = NARROW.replace(
        "complex item : Narrowed inverse held-by ;",
        "complex item : Narrowed multi(3) ;",
    )
    with pytest.raises(IncompatibleOverride):
        effective_model(kb_of(text), "PinnedHolder")


def test_complex_override_cannot_repoint_existing_inverse():
    text = """
class A { complex peer : B inverse other ; }
class A2 extends A { complex peer : B inverse third ; }
class B {
  complex other : A inverse peer ;
  complex third : A2 ;
}
"""
    with pytest.raises(IncompatibleOverride):
        effective_model(kb_of(text), "A2")


def test_instance_override_replaces_cpd_only():
    text = BASE.replace(
        "instance rex : Dog { }",
        "instance rex : Dog {\n  simple size { range small, big ; cpd { 0.9 0.1 ; } }\n}",
    )
    kb = kb_of(text)
    assert effective_model(kb, "rex")["size"].cpd[0, 0] == 0.9
    assert effective_model(kb, "Dog")["size"].cpd[0, 0] == 0.2


def test_instance_cannot_override_undeclared_attribute():
    text = BASE.replace(
        "instance rex : Dog { }",
        "instance rex : Dog {\n  simple wings { range no, yes ; cpd { 1.0 0.0 ; } }\n}",
    )
    with pytest.raises(IncompatibleOverride):
        effective_model(kb_of(text), "rex")


# --- chain resolution -------------------------------------------------------------


def test_resolve_simple_attribute():
    res = resolve_chain(kb_of(BASE), "rex", Chain.parse("bark"))
    assert res.terminal_kind == "simple"
    assert res.values == ("quiet", "loud")
    assert res.hops == ("Dog",)


def test_resolve_through_complex_attribute():
    res = resolve_chain(kb_of(BASE), "rex", Chain.parse("den.depth"))
    assert res.hops == ("Dog", "Den")
    assert res.terminal_class == "Den"


def test_resolve_quantifier_domain_is_count_range():
    text = """
class Pack {
  complex has-dog : Dog multi(3) inverse in-pack ;
  quantifier loud-dogs = count(has-dog.bark == loud) ;
}
class Dog {
  complex in-pack : Pack inverse has-dog ;
  simple bark { range quiet, loud ; cpd { 0.5 0.5 ; } }
}
instance p : Pack { }
"""
    res = resolve_chain(kb_of(text), "p", Chain.parse("loud-dogs"))
    assert res.terminal_kind == "quantifier"
    assert res.values == ("0", "1", "2", "3")


def test_resolve_rejects_complex_terminal():
    with pytest.raises(NonSimpleChain):
        resolve_chain(kb_of(BASE), "rex", Chain.parse("den"))


def test_resolve_rejects_multi_hop():
    text = BASE.replace("complex den : Den ;", "complex den : Den multi(2) ;")
    with pytest.raises(NonSimpleChain):
        resolve_chain(kb_of(text), "rex", Chain.parse("den.depth"))


def test_resolve_unknown_attribute():
    with pytest.raises(UnknownAttribute):
        resolve_chain(kb_of(BASE), "rex", Chain.parse("tail"))


# --- validation diagnostics ---------------------------------------------------------


def test_clean_kb_validates():
    assert validate_kb(kb_of(BASE)).ok
    ensure_valid(kb_of(BASE))  # should not raise


def test_unknown_type_flagged():
    assert "unknown-reference" in codes("class A { complex x : Ghost ; }")


def test_one_sided_inverse_flagged():
    text = """
class A { complex to-b : B inverse back ; }
class B { complex back : A ; }
"""
    assert "broken-inverse" in codes(text)


def test_mutual_multi_inverse_flagged():
    text = """
class A { complex to-b : B multi(2) inverse back ; }
class B { complex back : A multi(2) inverse to-b ; }
"""
    assert "broken-inverse" in codes(text)


def test_quantifier_over_single_valued_flagged():
    text = """
class A {
  complex one : B ;
  quantifier n = count(one.f == yes) ;
}
class B { simple f { range no, yes ; cpd { 0.5 0.5 ; } } }
"""
    assert "bad-quantifier" in codes(text)


def test_quantifier_value_outside_range_flagged():
    text = """
class A {
  complex kids : B multi(2) inverse up ;
  quantifier n = count(kids.f == maybe) ;
}
class B {
  complex up : A inverse kids ;
  simple f { range no, yes ; cpd { 0.5 0.5 ; } }
}
"""
    assert "bad-value" in codes(text)


def test_number_over_single_valued_flagged():
    text = """
class A {
  complex one : B ;
  number n over one { cpd { 0.5 0.5 ; } }
}
class B { simple f { range no, yes ; cpd { 0.5 0.5 ; } } }
"""
    assert "bad-number" in codes(text)


def test_reference_entry_unknown_class_flagged():
    text = """
class A {
  complex spot : B ;
  reference pick over spot { entries class Ghost ; cpd { 1.0 ; } }
}
class B { }
"""
    assert "bad-reference" in codes(text)


def test_cpt_row_count_mismatch_flagged():
    text = """
class A {
  simple x { range p, q ; cpd { 0.5 0.5 ; } }
  simple y { range r, s ; parents x ; cpd { 0.5 0.5 ; } }
}
"""
    assert "cpt-shape" in codes(text)


def test_cpt_rows_must_normalize():
    text = """
class A { simple x { range p, q ; cpd { 0.6 0.6 ; } } }
"""
    assert "cpt-normalization" in codes(text)


def test_cpt_tolerance_accepts_decimal_noise():
    # hand-authored tables are only good to ~1e-9
    text = """
class A { simple x { range p, q ; cpd { 0.3333333334 0.6666666666 ; } } }
"""
    assert validate_kb(kb_of(text)).ok


def test_dependency_cycle_flagged():
    text = """
class A {
  simple x { range p, q ; parents y ; cpd { 0.5 0.5 ; 0.5 0.5 ; } }
  simple y { range p, q ; parents x ; cpd { 0.5 0.5 ; 0.5 0.5 ; } }
}
"""
    assert "dependency-cycle" in codes(text)


def test_assertion_on_unknown_instance_flagged():
    text = BASE + "assert ghost.den = hole ;\n"
    assert "unknown-instance" in codes(text)


def test_assertion_value_class_mismatch_flagged():
    text = BASE + "assert rex.den = rex ;\n"
    assert "bad-value" in codes(text)


def test_overfilled_multi_attribute_flagged():
    text = """
class Pack { complex has-dog : Dog multi(1) inverse in-pack ; }
class Dog { complex in-pack : Pack inverse has-dog ; }
instance p : Pack { }
instance d1 : Dog { }
instance d2 : Dog { }

assert p.has-dog = d1 ;
assert p.has-dog = d2 ;
"""
    assert "bad-value" in codes(text)


# --- dependency graph ---------------------------------------------------------------


def test_dependency_graph_orders_influences_first():
    kb = kb_of(BASE)
    g = build_dependency_graph(kb)
    order = g.topological_order()
    assert order is not None
    assert order.index(("Dog", "size")) < order.index(("Dog", "bark"))


def test_dependency_graph_cycle_returns_none():
    text = """
class A {
  simple x { range p, q ; parents y ; cpd { 0.5 0.5 ; 0.5 0.5 ; } }
  simple y { range p, q ; parents x ; cpd { 0.5 0.5 ; 0.5 0.5 ; } }
}
"""
    assert build_dependency_graph(kb_of(text)).topological_order() is None


def test_dependency_graph_threads_chain_hops():
    kb = kb_of(BASE)
    g = build_dependency_graph(kb)
    # bark depends on size within the same class
    assert (("Dog", "size"), ("Dog", "bark")) in g.edges


# --- bindings and assertions ---------------------------------------------------------


def test_asserted_fillers_and_inverse_binding():
    text = """
class Pack { complex has-dog : Dog multi(2) inverse in-pack ; }
class Dog { complex in-pack : Pack inverse has-dog ; }
instance p : Pack { }
instance d : Dog { }

assert p.has-dog = d ;
"""
    kb = kb_of(text)
    ensure_valid(kb)
    assert kb.asserted_fillers("p", "has-dog") == ["d"]
    # the inverse direction is derivable from the same assertion
    assert kb.bindings().get(("d", "in-pack")) == ["p"]
