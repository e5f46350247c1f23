"""Text format for knowledge bases, plus the query expression syntax.

The format is keyword-led and block-structured:

    class Battalion extends Unit {
      complex has-battery : Battery multi(4) inverse in-battalion ;
      quantifier operational-count = count(has-battery.operational == yes) ;
      simple under-fire {
        range none, light, heavy ;
        parents in-environment.defense-level ;
        cpd { 0.8 0.15 0.05 ; 0.5 0.3 0.2 ; 0.15 0.35 0.5 ; }
      }
    }
    instance battalion-charlie : Battalion { }
    assert battalion-charlie.has-battery = battery-1 ;

CPT rows enumerate parent-value combinations lexicographically: parents in
declared order, each parent's values in its declared range order (the last
parent varies fastest). `#` starts a line comment.

The serializer is deterministic (classes, instances, and attribute names are
emitted sorted; ranges, parents, entries, and assertions keep declared order
because CPT layout and filler indexing depend on them), so
serialize(parse(serialize(parse(text)))) == serialize(parse(text)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DuplicateName, KbSyntaxError, Location
from .model import (
    AttributeAssertion,
    AttributeDecl,
    Chain,
    ClassModel,
    ComplexAttr,
    InstanceModel,
    KnowledgeBase,
    NumberAttr,
    QuantifierAttr,
    RefEntry,
    ReferenceAttr,
    SimpleAttr,
)

_PUNCT = ("==", "{", "}", "(", ")", ":", ";", ",", ".", "=", "|")


@dataclass(frozen=True)
class Token:
    kind: str  # name | int | float | punct | eof
    text: str
    line: int
    col: int


def _is_name_start(c: str) -> bool:
    return c.isalpha() or c == "_"


def _is_name_char(c: str) -> bool:
    return c.isalnum() or c in "_-"


def tokenize(text: str, source: str = "<string>") -> list[Token]:
    toks: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c.isspace():
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_col = col
        if _is_name_start(c):
            j = i
            while j < n and _is_name_char(text[j]):
                j += 1
            toks.append(Token("name", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if c.isdigit() or (c in "+-" and i + 1 < n and text[i + 1].isdigit()):
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            kind = "int"
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                kind = "float"
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    kind = "float"
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            toks.append(Token(kind, text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        matched = None
        for p in _PUNCT:
            if text.startswith(p, i):
                matched = p
                break
        if matched is None:
            raise KbSyntaxError(
                f"unexpected character {c!r}", Location(line, col, source)
            )
        toks.append(Token("punct", matched, line, start_col))
        i += len(matched)
        col += len(matched)
    toks.append(Token("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, text: str, source: str):
        self.toks = tokenize(text, source)
        self.pos = 0
        self.source = source

    # -- plumbing ---------------------------------------------------------

    def peek(self) -> Token:
        return self.toks[self.pos]

    def advance(self) -> Token:
        tok = self.toks[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def loc(self, tok: Token) -> Location:
        return Location(tok.line, tok.col, self.source)

    def fail(self, msg: str, tok: Optional[Token] = None) -> None:
        tok = tok or self.peek()
        raise KbSyntaxError(msg, self.loc(tok))

    def accept_punct(self, text: str) -> bool:
        tok = self.peek()
        if tok.kind == "punct" and tok.text == text:
            self.advance()
            return True
        return False

    def expect_punct(self, text: str) -> Token:
        tok = self.peek()
        if tok.kind != "punct" or tok.text != text:
            self.fail(f"expected {text!r}, found {tok.text or 'end of input'!r}")
        return self.advance()

    def expect_name(self, what: str = "a name") -> Token:
        tok = self.peek()
        if tok.kind != "name":
            self.fail(f"expected {what}, found {tok.text or 'end of input'!r}")
        return self.advance()

    def at_word(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "name" and tok.text == word

    def expect_word(self, word: str) -> Token:
        tok = self.peek()
        if not self.at_word(word):
            self.fail(f"expected {word!r}, found {tok.text or 'end of input'!r}")
        return self.advance()

    # -- grammar ------------------------------------------------------------

    def parse_kb(self) -> KnowledgeBase:
        kb = KnowledgeBase()
        while self.peek().kind != "eof":
            if self.at_word("class"):
                self._class_decl(kb)
            elif self.at_word("instance"):
                self._instance_decl(kb)
            elif self.at_word("assert"):
                self._assert_decl(kb)
            else:
                self.fail("expected 'class', 'instance', or 'assert'")
        return kb

    def _class_decl(self, kb: KnowledgeBase) -> None:
        self.expect_word("class")
        name_tok = self.expect_name("a class name")
        name = name_tok.text
        if name in kb.classes or name in kb.instances:
            raise DuplicateName(f"{name!r} is already declared", self.loc(name_tok))
        superclass = None
        if self.at_word("extends"):
            self.advance()
            superclass = self.expect_name("a superclass name").text
        self.expect_punct("{")
        attrs = self._attr_block()
        kb.classes[name] = ClassModel(name, superclass, attrs)

    def _instance_decl(self, kb: KnowledgeBase) -> None:
        self.expect_word("instance")
        name_tok = self.expect_name("an instance name")
        name = name_tok.text
        if name in kb.classes or name in kb.instances:
            raise DuplicateName(f"{name!r} is already declared", self.loc(name_tok))
        self.expect_punct(":")
        cls = self.expect_name("a class name").text
        self.expect_punct("{")
        overrides = self._attr_block()
        kb.instances[name] = InstanceModel(name, cls, overrides)

    def _assert_decl(self, kb: KnowledgeBase) -> None:
        self.expect_word("assert")
        inst = self.expect_name("an instance name").text
        self.expect_punct(".")
        attr = self.expect_name("an attribute name").text
        self.expect_punct("=")
        value = self._value()
        self.expect_punct(";")
        kb.assertions.append(AttributeAssertion(inst, attr, value))

    def _attr_block(self) -> dict[str, AttributeDecl]:
        attrs: dict[str, AttributeDecl] = {}
        while not self.accept_punct("}"):
            decl = self._attr_decl()
            if decl.name in attrs:
                self.fail(f"attribute {decl.name!r} declared twice")
            attrs[decl.name] = decl
        return attrs

    def _attr_decl(self) -> AttributeDecl:
        if self.at_word("simple"):
            return self._simple_decl()
        if self.at_word("complex"):
            return self._complex_decl()
        if self.at_word("quantifier"):
            return self._quantifier_decl()
        if self.at_word("number"):
            return self._number_decl()
        if self.at_word("reference"):
            return self._reference_decl()
        self.fail(
            "expected 'simple', 'complex', 'quantifier', 'number', or 'reference'"
        )

    def _value(self) -> str:
        tok = self.peek()
        if tok.kind not in ("name", "int"):
            self.fail(f"expected a value, found {tok.text or 'end of input'!r}")
        return self.advance().text

    def _chain(self) -> Chain:
        segs = [self.expect_name("an attribute name").text]
        while self.accept_punct("."):
            segs.append(self.expect_name("an attribute name").text)
        return Chain(tuple(segs))

    def _simple_decl(self) -> SimpleAttr:
        self.expect_word("simple")
        name_tok = self.expect_name("an attribute name")
        name = name_tok.text
        self.expect_punct("{")
        values: Optional[tuple[str, ...]] = None
        parents: tuple[Chain, ...] = ()
        cpd: Optional[np.ndarray] = None
        while not self.accept_punct("}"):
            if self.at_word("range"):
                self.advance()
                vals = [self._value()]
                while self.accept_punct(","):
                    vals.append(self._value())
                self.expect_punct(";")
                values = tuple(vals)
            elif self.at_word("parents"):
                parents = self._parents_stmt()
            elif self.at_word("cpd"):
                cpd = self._cpd_stmt()
            else:
                self.fail("expected 'range', 'parents', or 'cpd'")
        if values is None:
            self.fail(f"simple attribute {name!r} has no range", name_tok)
        if cpd is None:
            self.fail(f"simple attribute {name!r} has no cpd", name_tok)
        if cpd.shape[1] != len(values):
            self.fail(
                f"simple attribute {name!r}: cpd rows have {cpd.shape[1]} "
                f"entries, range has {len(values)} values",
                name_tok,
            )
        return SimpleAttr(name=name, values=values, parents=parents, cpd=cpd)

    def _complex_decl(self) -> ComplexAttr:
        self.expect_word("complex")
        name = self.expect_name("an attribute name").text
        self.expect_punct(":")
        typ = self.expect_name("a class name").text
        bound = None
        inverse = None
        if self.at_word("multi"):
            self.advance()
            self.expect_punct("(")
            tok = self.peek()
            if tok.kind != "int":
                self.fail("expected an integer bound")
            bound = int(self.advance().text)
            self.expect_punct(")")
        if self.at_word("inverse"):
            self.advance()
            inverse = self.expect_name("an attribute name").text
        self.expect_punct(";")
        return ComplexAttr(name=name, type=typ, bound=bound, inverse=inverse)

    def _quantifier_decl(self) -> QuantifierAttr:
        self.expect_word("quantifier")
        name = self.expect_name("an attribute name").text
        self.expect_punct("=")
        self.expect_word("count")
        self.expect_punct("(")
        chain = self._chain()
        if len(chain) < 2:
            self.fail("expected attribute.chain inside count(...)")
        self.expect_punct("==")
        value = self._value()
        self.expect_punct(")")
        self.expect_punct(";")
        return QuantifierAttr(
            name=name, over=chain.head, chain=chain.rest, value=value
        )

    def _number_decl(self) -> NumberAttr:
        self.expect_word("number")
        name_tok = self.expect_name("an attribute name")
        name = name_tok.text
        self.expect_word("over")
        over = self.expect_name("an attribute name").text
        self.expect_punct("{")
        parents: tuple[Chain, ...] = ()
        cpd: Optional[np.ndarray] = None
        while not self.accept_punct("}"):
            if self.at_word("parents"):
                parents = self._parents_stmt()
            elif self.at_word("cpd"):
                cpd = self._cpd_stmt()
            else:
                self.fail("expected 'parents' or 'cpd'")
        if cpd is None:
            self.fail(f"number attribute {name!r} has no cpd", name_tok)
        return NumberAttr(name=name, over=over, parents=parents, cpd=cpd)

    def _reference_decl(self) -> ReferenceAttr:
        self.expect_word("reference")
        name_tok = self.expect_name("an attribute name")
        name = name_tok.text
        self.expect_word("over")
        over = self.expect_name("an attribute name").text
        self.expect_punct("{")
        entries: tuple[RefEntry, ...] = ()
        parents: tuple[Chain, ...] = ()
        cpd: Optional[np.ndarray] = None
        while not self.accept_punct("}"):
            if self.at_word("entries"):
                self.advance()
                got = [self._entry()]
                while self.accept_punct(","):
                    got.append(self._entry())
                self.expect_punct(";")
                entries = tuple(got)
            elif self.at_word("parents"):
                parents = self._parents_stmt()
            elif self.at_word("cpd"):
                cpd = self._cpd_stmt()
            else:
                self.fail("expected 'entries', 'parents', or 'cpd'")
        if not entries:
            self.fail(f"reference attribute {name!r} has no entries", name_tok)
        if cpd is None:
            self.fail(f"reference attribute {name!r} has no cpd", name_tok)
        return ReferenceAttr(
            name=name, over=over, entries=entries, parents=parents, cpd=cpd
        )

    def _entry(self) -> RefEntry:
        if self.at_word("class"):
            self.advance()
            return RefEntry(True, self.expect_name("a class name").text)
        if self.at_word("instance"):
            self.advance()
            return RefEntry(False, self.expect_name("an instance name").text)
        self.fail("expected 'class' or 'instance'")

    def _parents_stmt(self) -> tuple[Chain, ...]:
        self.expect_word("parents")
        chains = [self._chain()]
        while self.accept_punct(","):
            chains.append(self._chain())
        self.expect_punct(";")
        return tuple(chains)

    def _cpd_stmt(self) -> np.ndarray:
        self.expect_word("cpd")
        open_tok = self.expect_punct("{")
        rows: list[list[float]] = []
        row: list[float] = []
        while True:
            tok = self.peek()
            if tok.kind in ("int", "float"):
                row.append(float(self.advance().text))
            elif tok.kind == "punct" and tok.text == ";":
                self.advance()
                if not row:
                    self.fail("empty cpd row", tok)
                rows.append(row)
                row = []
            elif tok.kind == "punct" and tok.text == "}":
                self.advance()
                if row:
                    rows.append(row)
                break
            else:
                self.fail(f"expected a number, ';', or '}}' in cpd")
        if not rows:
            self.fail("cpd has no rows", open_tok)
        width = len(rows[0])
        for i, r in enumerate(rows):
            if len(r) != width:
                self.fail(
                    f"cpd row {i} has {len(r)} entries, expected {width}", open_tok
                )
        return np.array(rows, dtype=float)


def parse_kb(text: str, source: str = "<string>") -> KnowledgeBase:
    """Parses the text format into an (unvalidated) knowledge base."""
    return _Parser(text, source).parse_kb()


# --- serialization -----------------------------------------------------------


def _fmt_num(x: float) -> str:
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(float(x))


def _cpd_lines(cpd: np.ndarray, indent: str) -> list[str]:
    out = [f"{indent}cpd {{"]
    for row in np.atleast_2d(cpd):
        out.append(f"{indent}  " + " ".join(_fmt_num(v) for v in row) + " ;")
    out.append(f"{indent}}}")
    return out


def _attr_lines(decl: AttributeDecl, indent: str) -> list[str]:
    if decl.kind == "simple":
        out = [f"{indent}simple {decl.name} {{"]
        out.append(f"{indent}  range " + ", ".join(decl.values) + " ;")
        if decl.parents:
            out.append(
                f"{indent}  parents " + ", ".join(str(c) for c in decl.parents) + " ;"
            )
        out.extend(_cpd_lines(decl.cpd, indent + "  "))
        out.append(f"{indent}}}")
        return out
    if decl.kind == "complex":
        line = f"{indent}complex {decl.name} : {decl.type}"
        if decl.multi:
            line += f" multi({decl.bound})"
        if decl.inverse is not None:
            line += f" inverse {decl.inverse}"
        return [line + " ;"]
    if decl.kind == "quantifier":
        chain = Chain((decl.over,) + decl.chain.segments)
        return [
            f"{indent}quantifier {decl.name} = count({chain} == {decl.value}) ;"
        ]
    if decl.kind == "number":
        out = [f"{indent}number {decl.name} over {decl.over} {{"]
        if decl.parents:
            out.append(
                f"{indent}  parents " + ", ".join(str(c) for c in decl.parents) + " ;"
            )
        out.extend(_cpd_lines(decl.cpd, indent + "  "))
        out.append(f"{indent}}}")
        return out
    if decl.kind == "reference":
        out = [f"{indent}reference {decl.name} over {decl.over} {{"]
        out.append(
            f"{indent}  entries " + ", ".join(str(e) for e in decl.entries) + " ;"
        )
        if decl.parents:
            out.append(
                f"{indent}  parents " + ", ".join(str(c) for c in decl.parents) + " ;"
            )
        out.extend(_cpd_lines(decl.cpd, indent + "  "))
        out.append(f"{indent}}}")
        return out
    raise AssertionError(decl)


def serialize_kb(kb: KnowledgeBase) -> str:
    """Canonical text: sorted declarations, declared-order internals."""
    lines: list[str] = []
    for cname in sorted(kb.classes):
        cls = kb.classes[cname]
        head = f"class {cname}"
        if cls.superclass is not None:
            head += f" extends {cls.superclass}"
        lines.append(head + " {")
        for aname in sorted(cls.attributes):
            lines.extend(_attr_lines(cls.attributes[aname], "  "))
        lines.append("}")
        lines.append("")
    for iname in sorted(kb.instances):
        inst = kb.instances[iname]
        if inst.overrides:
            lines.append(f"instance {iname} : {inst.cls} {{")
            for aname in sorted(inst.overrides):
                lines.extend(_attr_lines(inst.overrides[aname], "  "))
            lines.append("}")
        else:
            lines.append(f"instance {iname} : {inst.cls} {{ }}")
    if kb.instances:
        lines.append("")
    for a in kb.assertions:
        lines.append(f"assert {a.instance}.{a.attribute} = {a.value} ;")
    return "\n".join(lines).strip() + "\n"


# --- query expressions ----------------------------------------------------------


@dataclass(frozen=True)
class QueryExpr:
    """P(instance.chain | instance.chain = value, ...)"""

    target: tuple[str, Chain]
    evidence: tuple[tuple[str, Chain, str], ...] = ()

    def __str__(self) -> str:
        inst, chain = self.target
        body = f"{inst}.{chain}"
        if self.evidence:
            body += " | " + ", ".join(
                f"{i}.{c} = {v}" for i, c, v in self.evidence
            )
        return f"P({body})"


def parse_ref(text: str, source: str = "<ref>") -> tuple[str, Chain]:
    """Parses a bare `instance.attr.attr...` reference."""
    p = _Parser(text, source)
    inst = p.expect_name("an object name").text
    p.expect_punct(".")
    chain = p._chain()
    if p.peek().kind != "eof":
        p.fail("unexpected trailing input")
    return inst, chain


def parse_query(text: str, source: str = "<query>") -> QueryExpr:
    p = _Parser(text, source)
    p.expect_word("P")
    p.expect_punct("(")

    def ref() -> tuple[str, Chain]:
        inst = p.expect_name("an object name").text
        p.expect_punct(".")
        return inst, p._chain()

    target = ref()
    evidence: list[tuple[str, Chain, str]] = []
    if p.accept_punct("|"):
        while True:
            inst, chain = ref()
            p.expect_punct("=")
            evidence.append((inst, chain, p._value()))
            if not p.accept_punct(","):
                break
    p.expect_punct(")")
    if p.peek().kind != "eof":
        p.fail("unexpected trailing input")
    return QueryExpr(target=target, evidence=tuple(evidence))
