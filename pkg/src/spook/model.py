"""In-memory knowledge base: classes, instances, attributes, local models.

A knowledge base holds class models (reusable probability models), named
instances deriving from them, and assertions wiring instances together.
Attribute kinds:

  simple      finite-range random variable with parent chains and a CPT
  complex     typed relation slot to another object (single- or multi-valued,
              optional inverse)
  quantifier  count of fillers of a multi-valued attribute whose chain takes
              a given value
  number      random variable over the filler count of a multi-valued
              attribute (range 0..bound)
  reference   random variable selecting the filler of a single-valued
              attribute from declared candidates (subclasses or instances)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .errors import (
    IncompatibleOverride,
    InvalidModel,
    NonSimpleChain,
    UnknownAttribute,
    UnknownReference,
)

CPT_ROW_TOL = 1e-9


@dataclass(frozen=True, order=True)
class Chain:
    """Dotted attribute path A1.A2.....Ak relative to some object."""

    segments: tuple[str, ...]

    @staticmethod
    def parse(text: str) -> "Chain":
        parts = tuple(p for p in text.split("."))
        if not parts or any(not p for p in parts):
            raise NonSimpleChain(f"malformed chain {text!r}")
        return Chain(parts)

    @staticmethod
    def of(*segments: str) -> "Chain":
        return Chain(tuple(segments))

    @property
    def head(self) -> str:
        return self.segments[0]

    @property
    def rest(self) -> "Chain":
        return Chain(self.segments[1:])

    def __len__(self) -> int:
        return len(self.segments)

    def __str__(self) -> str:
        return ".".join(self.segments)


# --- attribute declarations --------------------------------------------------

@dataclass(frozen=True, eq=False)
class SimpleAttr:
    name: str
    values: tuple[str, ...]
    parents: tuple[Chain, ...] = ()
    cpd: np.ndarray = None  # rows: parent combos in declaration order, C-order

    kind = "simple"


@dataclass(frozen=True, eq=False)
class ComplexAttr:
    name: str
    type: str
    bound: Optional[int] = None  # None = single-valued, int = multi upper bound
    inverse: Optional[str] = None

    kind = "complex"

    @property
    def multi(self) -> bool:
        return self.bound is not None


@dataclass(frozen=True, eq=False)
class QuantifierAttr:
    """Counts fillers Y of multi-valued `over` with Y.chain == value."""

    name: str
    over: str
    chain: Chain
    value: str

    kind = "quantifier"


@dataclass(frozen=True, eq=False)
class NumberAttr:
    """Random variable over the filler count of multi-valued `over`."""

    name: str
    over: str
    parents: tuple[Chain, ...] = ()
    cpd: np.ndarray = None

    kind = "number"


@dataclass(frozen=True)
class RefEntry:
    """Candidate filler: a subclass of the slot type or a named instance."""

    is_class: bool
    target: str

    def __str__(self) -> str:
        return ("class " if self.is_class else "instance ") + self.target


@dataclass(frozen=True, eq=False)
class ReferenceAttr:
    """Random variable selecting the filler of single-valued `over`."""

    name: str
    over: str
    entries: tuple[RefEntry, ...] = ()
    parents: tuple[Chain, ...] = ()
    cpd: np.ndarray = None

    kind = "reference"


AttributeDecl = Union[SimpleAttr, ComplexAttr, QuantifierAttr, NumberAttr, ReferenceAttr]

VALUE_BEARING = ("simple", "quantifier", "number", "reference")


def decls_equal(a: AttributeDecl, b: AttributeDecl) -> bool:
    if type(a) is not type(b):
        return False
    for f in a.__dataclass_fields__:
        va, vb = getattr(a, f), getattr(b, f)
        if isinstance(va, np.ndarray) or isinstance(vb, np.ndarray):
            if va is None or vb is None or va.shape != vb.shape or not np.array_equal(va, vb):
                return False
        elif va != vb:
            return False
    return True


# --- objects -----------------------------------------------------------------

@dataclass
class ClassModel:
    name: str
    superclass: Optional[str] = None
    attributes: dict[str, AttributeDecl] = field(default_factory=dict)


@dataclass
class InstanceModel:
    name: str
    cls: str
    overrides: dict[str, AttributeDecl] = field(default_factory=dict)


@dataclass(frozen=True)
class AttributeAssertion:
    """`instance.attribute = value`; value is a range symbol, an instance
    name (complex), or a decimal count (number)."""

    instance: str
    attribute: str
    value: str


@dataclass
class KnowledgeBase:
    classes: dict[str, ClassModel] = field(default_factory=dict)
    instances: dict[str, InstanceModel] = field(default_factory=dict)
    assertions: list[AttributeAssertion] = field(default_factory=list)

    def __post_init__(self):
        self._effective: dict[str, dict[str, AttributeDecl]] = {}
        self._bindings = None
        self._evidence = None

    # -- naming ---------------------------------------------------------------

    def is_class(self, name: str) -> bool:
        return name in self.classes

    def is_instance(self, name: str) -> bool:
        return name in self.instances

    def class_of(self, obj: str) -> str:
        if obj in self.classes:
            return obj
        if obj in self.instances:
            return self.instances[obj].cls
        raise UnknownReference(f"unknown object {obj!r}")

    def superclass_chain(self, cls: str) -> list[str]:
        """Root-first inheritance path ending at `cls`. Raises on cycles."""
        path: list[str] = []
        seen = set()
        cur: Optional[str] = cls
        while cur is not None:
            if cur in seen:
                raise UnknownReference(f"inheritance cycle through {cur!r}")
            if cur not in self.classes:
                raise UnknownReference(f"unknown class {cur!r}")
            seen.add(cur)
            path.append(cur)
            cur = self.classes[cur].superclass
        path.reverse()
        return path

    def is_subclass(self, sub: str, sup: str) -> bool:
        return sup in self.superclass_chain(sub)

    # -- assertion views --------------------------------------------------------

    def _index_assertions(self) -> None:
        """Builds complex-attribute bindings (including derived inverse
        bindings) and baseline evidence from the assertion list."""
        bindings: dict[tuple[str, str], list[str]] = {}
        evidence: dict[tuple[str, str], str] = {}

        def bind(inst: str, attr: str, target: str) -> None:
            fillers = bindings.setdefault((inst, attr), [])
            if target not in fillers:
                fillers.append(target)

        for a in self.assertions:
            model = effective_model(self, a.instance)
            decl = model.get(a.attribute)
            if decl is None:
                continue  # reported by the validator
            if decl.kind == "complex":
                ref = _reference_over(model, a.attribute)
                if ref is not None and decl.bound is None:
                    # assertion on a reference-uncertain slot clamps the selector
                    evidence[(a.instance, ref.name)] = a.value
                    continue
                bind(a.instance, a.attribute, a.value)
                inv = decl.inverse
                if inv is not None and a.value in self.instances:
                    bind(a.value, inv, a.instance)
            else:
                evidence[(a.instance, a.attribute)] = a.value

        # all-named fillers pin any declared number attribute to the count
        for (inst, attr), fillers in list(bindings.items()):
            model = effective_model(self, inst)
            decl = model.get(attr)
            if decl is not None and decl.kind == "complex" and decl.multi:
                num = _number_over(model, attr)
                if num is not None:
                    evidence.setdefault((inst, num.name), str(len(fillers)))
        self._bindings = bindings
        self._evidence = evidence

    def bindings(self) -> dict[tuple[str, str], list[str]]:
        if self._bindings is None:
            self._index_assertions()
        return self._bindings

    def baseline_evidence(self) -> dict[tuple[str, str], str]:
        """Evidence implied by assertions on value-bearing attributes."""
        if self._evidence is None:
            self._index_assertions()
        return self._evidence

    def asserted_fillers(self, inst: str, attr: str) -> Optional[list[str]]:
        return self.bindings().get((inst, attr))


def _reference_over(model: dict[str, AttributeDecl], attr: str) -> Optional[ReferenceAttr]:
    for d in model.values():
        if d.kind == "reference" and d.over == attr:
            return d
    return None


def _number_over(model: dict[str, AttributeDecl], attr: str) -> Optional[NumberAttr]:
    for d in model.values():
        if d.kind == "number" and d.over == attr:
            return d
    return None


# --- inheritance flattening ----------------------------------------------------

def _check_override(
    kb: "KnowledgeBase", base: AttributeDecl, over: AttributeDecl, ctx: str
) -> None:
    if base.kind != over.kind:
        raise IncompatibleOverride(
            f"{ctx}: cannot override {base.kind} attribute {base.name!r} with {over.kind}"
        )
    if base.kind == "simple" and base.values != over.values:
        raise IncompatibleOverride(
            f"{ctx}: override of {base.name!r} changes the value range"
        )
    if base.kind == "complex":
        # narrowing only: the target may tighten to a subclass and an
        # inverse may be pinned where the base left it open, but arity is
        # part of the interface and stays fixed
        narrows = over.type == base.type or (
            over.type in kb.classes
            and base.type in kb.classes
            and kb.is_subclass(over.type, base.type)
        )
        if (base.multi, base.bound) != (over.multi, over.bound) or not narrows \
                or (base.inverse is not None and over.inverse != base.inverse):
            raise IncompatibleOverride(
                f"{ctx}: complex attribute {base.name!r} may only be narrowed"
                " (subclass target, added inverse)"
            )
    if base.kind == "quantifier" and not decls_equal(base, over):
        raise IncompatibleOverride(
            f"{ctx}: quantifier attribute {base.name!r} may only be re-declared identically"
        )
    if base.kind in ("number", "reference") and base.over != over.over:
        raise IncompatibleOverride(
            f"{ctx}: override of {base.name!r} changes the governed attribute"
        )
    if base.kind == "reference" and base.entries != over.entries:
        raise IncompatibleOverride(
            f"{ctx}: override of {base.name!r} changes the candidate range"
        )


def effective_model(kb: KnowledgeBase, obj: str) -> dict[str, AttributeDecl]:
    """Flattened attribute map of a class or instance, inheritance applied,
    overrides shadowing. Deterministic: superclass declaration order first,
    subclass additions after."""
    cached = kb._effective.get(obj)
    if cached is not None:
        return cached

    cls = kb.class_of(obj)
    merged: dict[str, AttributeDecl] = {}
    for c in kb.superclass_chain(cls):
        for name, decl in kb.classes[c].attributes.items():
            if name in merged:
                _check_override(kb, merged[name], decl, f"class {c!r}")
            merged[name] = decl
    if obj in kb.instances:
        for name, decl in kb.instances[obj].overrides.items():
            if name not in merged:
                raise IncompatibleOverride(
                    f"instance {obj!r} overrides undeclared attribute {name!r}"
                )
            _check_override(kb, merged[name], decl, f"instance {obj!r}")
            merged[name] = decl

    kb._effective[obj] = merged
    return merged


def domain_of(model: dict[str, AttributeDecl], decl: AttributeDecl) -> tuple[str, ...]:
    """Value range of a value-bearing declaration within its model."""
    if decl.kind == "simple":
        return decl.values
    if decl.kind in ("quantifier", "number"):
        over = model.get(decl.over)
        if over is None or over.kind != "complex" or not over.multi:
            raise UnknownAttribute(
                f"{decl.name!r} counts {decl.over!r}, which is not a multi-valued complex attribute"
            )
        return tuple(str(i) for i in range(over.bound + 1))
    if decl.kind == "reference":
        return tuple(e.target for e in decl.entries)
    raise NonSimpleChain(f"attribute {decl.name!r} has no value range")


# --- chain resolution ------------------------------------------------------------

@dataclass(frozen=True)
class ChainResolution:
    chain: Chain
    hops: tuple[str, ...]          # class visited at each hop, start object first
    terminal_class: str
    terminal_attr: str
    terminal_kind: str
    values: tuple[str, ...]
    single_valued: bool = True


def resolve_chain(kb: KnowledgeBase, start: str, chain: Chain) -> ChainResolution:
    """Type-checks a chain from a class or instance.

    Interior hops must be single-valued complex attributes; the terminal must
    be value-bearing (simple, quantifier, number, or reference).
    """
    cls = kb.class_of(start)
    hops = [cls]
    for i, seg in enumerate(chain.segments):
        model = effective_model(kb, cls)
        decl = model.get(seg)
        if decl is None:
            raise UnknownAttribute(f"{cls!r} has no attribute {seg!r} (chain {chain})")
        last = i == len(chain.segments) - 1
        if last:
            if decl.kind == "complex":
                raise NonSimpleChain(
                    f"chain {chain} ends at complex attribute {seg!r}"
                )
            return ChainResolution(
                chain=chain,
                hops=tuple(hops),
                terminal_class=cls,
                terminal_attr=seg,
                terminal_kind=decl.kind,
                values=domain_of(model, decl),
            )
        if decl.kind != "complex":
            raise NonSimpleChain(
                f"chain {chain} passes through {decl.kind} attribute {seg!r}"
            )
        if decl.multi:
            raise NonSimpleChain(
                f"chain {chain} passes through multi-valued attribute {seg!r}"
            )
        cls = decl.type
        hops.append(cls)
    raise NonSimpleChain("empty chain")


# --- dependency graph --------------------------------------------------------------

Node = tuple[str, str]  # (owner: class or instance name, attribute name)


@dataclass
class DependencyGraph:
    nodes: list[Node]
    edges: set[tuple[Node, Node]]

    def successors(self) -> dict[Node, list[Node]]:
        succ: dict[Node, list[Node]] = {n: [] for n in self.nodes}
        for src, dst in sorted(self.edges):
            succ[src].append(dst)
        return succ

    def topological_order(self) -> Optional[list[Node]]:
        """Sources (influences) first; None when cyclic. Lexicographic
        tie-break for determinism."""
        succ = self.successors()
        indeg = {n: 0 for n in self.nodes}
        for _, dst in self.edges:
            indeg[dst] += 1
        import heapq

        ready = [n for n in self.nodes if indeg[n] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            n = heapq.heappop(ready)
            order.append(n)
            for m in succ[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    heapq.heappush(ready, m)
        if len(order) != len(self.nodes):
            return None
        return order

    def find_cycle(self) -> Optional[list[Node]]:
        succ = self.successors()
        WHITE, GRAY, BLACK = 0, 1, 2
        color = {n: WHITE for n in self.nodes}
        stack: list[Node] = []

        def visit(n: Node) -> Optional[list[Node]]:
            color[n] = GRAY
            stack.append(n)
            for m in succ[n]:
                if color[m] == GRAY:
                    return stack[stack.index(m):] + [m]
                if color[m] == WHITE:
                    cyc = visit(m)
                    if cyc is not None:
                        return cyc
            stack.pop()
            color[n] = BLACK
            return None

        for n in sorted(self.nodes):
            if color[n] == WHITE:
                cyc = visit(n)
                if cyc is not None:
                    return cyc
        return None


def _filler_sources(kb: KnowledgeBase, owner: str, decl: ComplexAttr) -> list[str]:
    """Objects a complex slot can resolve to, for edge construction."""
    if owner in kb.instances:
        asserted = kb.asserted_fillers(owner, decl.name)
        if asserted:
            return list(asserted)
    model = effective_model(kb, owner)
    ref = _reference_over(model, decl.name)
    if ref is not None and not decl.multi:
        return [e.target for e in ref.entries]
    return [decl.type]


def build_dependency_graph(kb: KnowledgeBase) -> DependencyGraph:
    """Influence graph over (object, attribute) pairs.

    Each parent chain contributes a direct edge terminal -> dependent plus
    per-hop edges threaded through the complex attributes it traverses, so a
    topological order of the graph is also a safe local processing order.
    """
    nodes: list[Node] = []
    edges: set[tuple[Node, Node]] = set()
    owners = sorted(kb.classes) + sorted(kb.instances)
    for owner in owners:
        model = effective_model(kb, owner)
        for name in model:
            nodes.append((owner, name))
    node_set = set(nodes)

    def add_edge(src: Node, dst: Node) -> None:
        # self-loops are kept: they witness degenerate cycles
        if src in node_set and dst in node_set:
            edges.add((src, dst))

    def walk(obj: str, segs: tuple[str, ...], container: Node, dependent: Node) -> None:
        model = effective_model(kb, obj)
        seg = segs[0]
        decl = model.get(seg)
        if decl is None:
            return  # unresolvable chains are the validator's report, not ours
        here = (obj, seg)
        if len(segs) == 1:
            add_edge(here, container)
            add_edge(here, dependent)
            return
        if decl.kind != "complex" or decl.multi:
            return
        add_edge(here, container)
        ref = _reference_over(model, seg)
        if ref is not None:
            add_edge((obj, ref.name), here)
        for cand in _filler_sources(kb, obj, decl):
            walk(cand, segs[1:], here, dependent)

    for owner in owners:
        model = effective_model(kb, owner)
        for name, decl in model.items():
            dep = (owner, name)
            if decl.kind in ("simple", "number", "reference"):
                for chain in decl.parents:
                    walk(owner, chain.segments, dep, dep)
            if decl.kind == "number":
                add_edge(dep, (owner, decl.over))
            if decl.kind == "reference":
                add_edge(dep, (owner, decl.over))
            if decl.kind == "quantifier":
                over_node = (owner, decl.over)
                add_edge(over_node, dep)
                over = model.get(decl.over)
                if over is None or over.kind != "complex":
                    continue
                for src in _filler_sources(kb, owner, over):
                    walk(src, decl.chain.segments, over_node, dep)
    return DependencyGraph(nodes=nodes, edges=edges)


# --- validation -----------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


@dataclass
class ValidationReport:
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.diagnostics

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(str(d) for d in self.diagnostics)


def _expected_rows(kb: KnowledgeBase, owner: str, parents: Iterable[Chain]) -> int:
    rows = 1
    for chain in parents:
        res = resolve_chain(kb, owner, chain)
        rows *= len(res.values)
    return rows


def validate_kb(kb: KnowledgeBase) -> ValidationReport:
    """Full structural and probabilistic check; diagnostics, not exceptions."""
    diags: list[Diagnostic] = []

    def err(code: str, msg: str) -> None:
        diags.append(Diagnostic(code, msg))

    clash = set(kb.classes) & set(kb.instances)
    for name in sorted(clash):
        err("duplicate-name", f"{name!r} is declared as both a class and an instance")

    for iname in sorted(kb.instances):
        inst = kb.instances[iname]
        if inst.cls not in kb.classes:
            err("unknown-reference", f"instance {iname!r} has unknown class {inst.cls!r}")

    # inheritance sanity before any effective-model call
    for cname in sorted(kb.classes):
        try:
            kb.superclass_chain(cname)
        except UnknownReference as e:
            err("inheritance", f"class {cname!r}: {e.message}")
    if any(d.code == "inheritance" or d.code == "unknown-reference" for d in diags):
        return ValidationReport(diags)

    owners = sorted(kb.classes) + sorted(kb.instances)
    models: dict[str, dict[str, AttributeDecl]] = {}
    for owner in owners:
        try:
            models[owner] = effective_model(kb, owner)
        except IncompatibleOverride as e:
            err("incompatible-override", e.message)
    if any(d.code == "incompatible-override" for d in diags):
        return ValidationReport(diags)

    for owner in owners:
        model = models[owner]
        ctx = ("instance " if owner in kb.instances else "class ") + repr(owner)
        for name, decl in model.items():
            where = f"{ctx}, attribute {name!r}"
            if decl.kind == "complex":
                if decl.type not in kb.classes:
                    err("unknown-reference", f"{where}: unknown type {decl.type!r}")
                    continue
                if decl.multi and decl.bound < 1:
                    err("bad-bound", f"{where}: multi-valued bound must be >= 1")
                if decl.inverse is not None:
                    tmodel = models.get(decl.type, {})
                    inv = tmodel.get(decl.inverse)
                    if inv is None or inv.kind != "complex":
                        err("broken-inverse",
                            f"{where}: inverse {decl.inverse!r} is not a complex attribute of {decl.type!r}")
                    else:
                        if inv.inverse != name:
                            err("broken-inverse",
                                f"{where}: inverse {decl.inverse!r} does not point back to {name!r}")
                        if inv.multi and decl.multi:
                            err("broken-inverse",
                                f"{where}: multi-valued attributes cannot be mutual inverses")
                        if inv.type in kb.classes and \
                                not kb.is_subclass(kb.class_of(owner), inv.type):
                            err("broken-inverse",
                                f"{where}: inverse type {inv.type!r} does not cover {kb.class_of(owner)!r}")
                continue
            if decl.kind == "quantifier":
                over = model.get(decl.over)
                if over is None or over.kind != "complex" or not over.multi:
                    err("bad-quantifier",
                        f"{where}: counts {decl.over!r}, which is not multi-valued complex")
                    continue
                if over.type not in kb.classes:
                    continue
                try:
                    res = resolve_chain(kb, over.type, decl.chain)
                except (UnknownAttribute, NonSimpleChain) as e:
                    err("bad-quantifier", f"{where}: {e.message}")
                    continue
                if res.terminal_kind == "quantifier":
                    err("bad-quantifier",
                        f"{where}: quantifier chains may not count another quantifier")
                if decl.value not in res.values:
                    err("bad-value",
                        f"{where}: {decl.value!r} is not a value of chain {decl.chain}")
                continue
            if decl.kind in ("number", "reference"):
                over = model.get(decl.over)
                if over is None or over.kind != "complex":
                    err(f"bad-{decl.kind}",
                        f"{where}: governs {decl.over!r}, which is not a complex attribute")
                    continue
                if decl.kind == "number" and not over.multi:
                    err("bad-number", f"{where}: number attributes need a multi-valued attribute")
                    continue
                if decl.kind == "reference":
                    if over.multi:
                        err("bad-reference",
                            f"{where}: reference attributes need a single-valued attribute")
                        continue
                    if over.inverse is not None:
                        err("bad-reference",
                            f"{where}: reference-uncertain attribute {decl.over!r} may not declare an inverse")
                    if not decl.entries:
                        err("bad-reference", f"{where}: empty candidate range")
                    seen: set[str] = set()
                    for e in decl.entries:
                        if e.target in seen:
                            err("bad-reference", f"{where}: duplicate entry {e.target!r}")
                        seen.add(e.target)
                        if e.is_class:
                            if e.target not in kb.classes or over.type not in kb.classes \
                                    or not kb.is_subclass(e.target, over.type):
                                err("bad-reference",
                                    f"{where}: {e.target!r} is not a subclass of {over.type!r}")
                        else:
                            if e.target not in kb.instances or over.type not in kb.classes \
                                    or not kb.is_subclass(kb.class_of(e.target), over.type):
                                err("bad-reference",
                                    f"{where}: {e.target!r} is not an instance of {over.type!r}")

            # CPT checks for CPD-bearing kinds
            if decl.kind in ("simple", "number", "reference"):
                try:
                    rows = _expected_rows(kb, owner, decl.parents)
                except (UnknownAttribute, NonSimpleChain) as e:
                    err("bad-chain", f"{where}: {e.message}")
                    continue
                try:
                    cols = len(domain_of(model, decl))
                except (UnknownAttribute, NonSimpleChain):
                    continue
                if decl.cpd is None:
                    err("missing-cpt", f"{where}: no CPT")
                    continue
                if decl.cpd.shape != (rows, cols):
                    err("cpt-shape",
                        f"{where}: CPT shape {decl.cpd.shape} != ({rows}, {cols})")
                    continue
                if np.any(decl.cpd < 0) or not np.all(np.isfinite(decl.cpd)):
                    err("cpt-range", f"{where}: CPT entries must be finite and >= 0")
                bad = np.abs(decl.cpd.sum(axis=1) - 1.0) > CPT_ROW_TOL
                for r in np.nonzero(bad)[0]:
                    err("cpt-normalization",
                        f"{where}: CPT row {int(r)} sums to {decl.cpd[r].sum():.12g}")

    _validate_assertions(kb, models, err)

    if not diags:
        graph = build_dependency_graph(kb)
        cycle = graph.find_cycle() if graph.topological_order() is None else None
        if cycle is not None:
            pretty = " -> ".join(f"{o}.{a}" for o, a in cycle)
            err("dependency-cycle", f"probabilistic influences are cyclic: {pretty}")

    return ValidationReport(diags)


def ensure_valid(kb: KnowledgeBase) -> None:
    """Raises InvalidModel with the full diagnostic list; engines call this
    before building anything.

    A clean verdict is cached on the KB, which is treated as immutable once
    engines start reading it.
    """
    if getattr(kb, "_validated", False):
        return
    report = validate_kb(kb)
    if not report.ok:
        raise InvalidModel("invalid knowledge base:\n" + str(report))
    kb._validated = True


def _validate_assertions(kb, models, err) -> None:
    single_seen: dict[tuple[str, str], str] = {}
    multi_counts: dict[tuple[str, str], list[str]] = {}
    for a in kb.assertions:
        if a.instance not in kb.instances:
            err("unknown-instance", f"assertion on unknown instance {a.instance!r}")
            continue
        model = models[a.instance]
        decl = model.get(a.attribute)
        where = f"assertion {a.instance}.{a.attribute} = {a.value}"
        if decl is None:
            err("unknown-attribute", f"{where}: no such attribute")
            continue
        if decl.kind == "complex":
            if a.value not in kb.instances:
                err("unknown-instance", f"{where}: value is not a named instance")
                continue
            if decl.type in kb.classes and not kb.is_subclass(kb.class_of(a.value), decl.type):
                err("bad-value", f"{where}: {a.value!r} is not an instance of {decl.type!r}")
                continue
            ref = _reference_over(model, a.attribute)
            if ref is not None and not decl.multi:
                if not any((not e.is_class) and e.target == a.value for e in ref.entries):
                    err("bad-value",
                        f"{where}: {a.value!r} is not in the candidate range of {ref.name!r}")
                continue
            if decl.multi:
                fillers = multi_counts.setdefault((a.instance, a.attribute), [])
                if a.value not in fillers:
                    fillers.append(a.value)
                if len(fillers) > decl.bound:
                    err("bad-value", f"{where}: more than {decl.bound} fillers asserted")
            else:
                key = (a.instance, a.attribute)
                if key in single_seen and single_seen[key] != a.value:
                    err("bad-value",
                        f"{where}: conflicts with earlier assertion = {single_seen[key]!r}")
                single_seen[key] = a.value
        elif decl.kind == "number":
            over = model.get(decl.over)
            bound = over.bound if over is not None and over.kind == "complex" and over.multi else 0
            if not a.value.isdigit() or not (0 <= int(a.value) <= bound):
                err("bad-value", f"{where}: expected an integer in 0..{bound}")
        elif decl.kind == "quantifier":
            if a.value not in domain_of(model, decl):
                err("bad-value", f"{where}: outside 0..count range")
        else:
            try:
                dom = domain_of(model, decl)
            except (UnknownAttribute, NonSimpleChain):
                continue
            if a.value not in dom:
                err("bad-value", f"{where}: {a.value!r} not in {dom}")

    # derived inverse conflicts: a single-valued inverse bound to two objects
    derived: dict[tuple[str, str], str] = {}
    for a in kb.assertions:
        if a.instance not in kb.instances or a.value not in kb.instances:
            continue
        model = models[a.instance]
        decl = model.get(a.attribute)
        if decl is None or decl.kind != "complex" or decl.inverse is None:
            continue
        if _reference_over(model, a.attribute) is not None and not decl.multi:
            continue
        tmodel = models.get(a.value)
        inv = tmodel.get(decl.inverse) if tmodel else None
        if inv is None or inv.kind != "complex" or inv.multi:
            continue
        key = (a.value, decl.inverse)
        prior = derived.get(key)
        if prior is not None and prior != a.instance:
            err("bad-value",
                f"{a.value}.{decl.inverse} is implied to be both {prior!r} and {a.instance!r}")
        derived[key] = a.instance
