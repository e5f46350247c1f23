"""Grounding backend: compile a knowledge base into one flat network.

Every named instance is expanded into ground objects (generated fillers get
path ids like `group-1/has-launcher[2]`), then each value-bearing attribute
becomes one network node. Counting is always materialized naively here — a
quantifier node's parents are all its filler chains — which is exactly the
translation the structured solver is measured against.

Shared deterministic CPT builders (counting tables, count gates, value
multiplexers) live here; the structured solver reuses them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bn import DiscreteNetwork, Factor, query as bn_query
from .errors import (
    ContradictoryEvidence,
    InvalidModel,
    NaiveCapExceeded,
    NonSimpleChain,
    RangeMismatch,
    RecursionDepthExceeded,
    UnknownInstance,
    UnsupportedStructure,
)
from .lang import QueryExpr
from .model import (
    Chain,
    ComplexAttr,
    KnowledgeBase,
    _number_over,
    _reference_over,
    domain_of,
    effective_model,
    ensure_valid,
    resolve_chain,
)

NAIVE_FILLER_CAP = 16
NAIVE_ROW_CAP = 1 << 22
DEPTH_CAP = 32


# --- deterministic CPT builders ------------------------------------------------


def quantifier_cpt_naive(m: int, dom_size: int, hit_index: int, cols: int) -> np.ndarray:
    """Counting table: parents are m filler values over a dom_size range,
    output is #(value == hit_index) in a 0..cols-1 range. Rows enumerate the
    parent combinations in C-order (last filler fastest)."""
    if m > NAIVE_FILLER_CAP:
        raise NaiveCapExceeded(
            f"naive counting over {m} fillers exceeds the cap of {NAIVE_FILLER_CAP}"
        )
    rows = dom_size**m
    if rows > NAIVE_ROW_CAP:
        raise NaiveCapExceeded(
            f"naive counting table needs {rows} rows (cap {NAIVE_ROW_CAP})"
        )
    cpt = np.zeros((rows, cols))
    if m == 0:
        cpt[0, 0] = 1.0
        return cpt
    hits = np.zeros(rows, dtype=int)
    # C-order: filler i contributes with stride dom_size**(m-1-i)
    idx = np.arange(rows)
    for i in range(m):
        stride = dom_size ** (m - 1 - i)
        hits += (idx // stride) % dom_size == hit_index
    cpt[idx, hits] = 1.0
    return cpt


def number_gate(n: int, dom_size: int, hit_index: int) -> np.ndarray:
    """Counting table gated by a count variable: parents are (count m in
    0..n, then n filler values); only the first m fillers are counted."""
    if n > NAIVE_FILLER_CAP:
        raise NaiveCapExceeded(
            f"gated counting over {n} fillers exceeds the cap of {NAIVE_FILLER_CAP}"
        )
    rows = (n + 1) * dom_size**n
    if rows > NAIVE_ROW_CAP:
        raise NaiveCapExceeded(
            f"gated counting table needs {rows} rows (cap {NAIVE_ROW_CAP})"
        )
    cpt = np.zeros((rows, n + 1))
    block = dom_size**n
    idx = np.arange(block)
    for m in range(n + 1):
        hits = np.zeros(block, dtype=int)
        for i in range(m):
            stride = dom_size ** (n - 1 - i)
            hits += (idx // stride) % dom_size == hit_index
        cpt[m * block + idx, hits] = 1.0
    return cpt


def multiplexer_cpt(num_entries: int, card: int) -> np.ndarray:
    """Selector table: parents are (selector over num_entries, then one value
    per entry over `card`); the output copies the selected entry's value."""
    rows = num_entries * card**num_entries
    if rows > NAIVE_ROW_CAP:
        raise NaiveCapExceeded(
            f"multiplexer table needs {rows} rows (cap {NAIVE_ROW_CAP})"
        )
    cpt = np.zeros((rows, card))
    block = card**num_entries
    idx = np.arange(block)
    for sel in range(num_entries):
        stride = card ** (num_entries - 1 - sel)
        chosen = (idx // stride) % card
        cpt[sel * block + idx, chosen] = 1.0
    return cpt


# --- ground object graph ---------------------------------------------------------


@dataclass
class GroundObject:
    id: str
    cls: str
    model_key: str  # instance name for named roots, class name for generated
    depth: int
    bindings: dict[str, list[str]] = field(default_factory=dict)
    generated: set[str] = field(default_factory=set)  # attrs with generated fillers
    # reference-uncertain slots: attr -> [(entry label, candidate object id)]
    candidates: dict[str, list[tuple[str, str]]] = field(default_factory=dict)


class GroundMap:
    """Ground object graph plus the mapping from (instance, chain) to node
    ids in the flat network. Multiplexer nodes for reference-uncertain hops
    are materialized on first use."""

    def __init__(self, kb: KnowledgeBase, net: DiscreteNetwork):
        self.kb = kb
        self.net = net
        self.objects: dict[str, GroundObject] = {}
        self._building: set[str] = set()

    def model(self, gobj: GroundObject) -> dict:
        return effective_model(self.kb, gobj.model_key)

    # -- node materialization ---------------------------------------------------

    def value_node(self, gobj: GroundObject, attr: str) -> str:
        node_id = f"{gobj.id}/{attr}"
        if node_id in self.net.nodes:
            return node_id
        if node_id in self._building:
            raise InvalidModel(f"grounding cycle at {node_id!r}")
        self._building.add(node_id)
        try:
            model = self.model(gobj)
            decl = model.get(attr)
            if decl is None:
                raise NonSimpleChain(f"{gobj.cls!r} has no attribute {attr!r}")
            if decl.kind == "quantifier":
                self._quantifier_node(node_id, gobj, decl)
            elif decl.kind in ("simple", "number", "reference"):
                parent_ids = [self.chain_node(gobj, c) for c in decl.parents]
                self.net.add_node(node_id, domain_of(model, decl), parent_ids, decl.cpd)
            else:
                raise NonSimpleChain(
                    f"attribute {attr!r} is complex and has no node of its own"
                )
        finally:
            self._building.discard(node_id)
        return node_id

    def _quantifier_node(self, node_id: str, gobj: GroundObject, decl) -> None:
        model = self.model(gobj)
        over: ComplexAttr = model[decl.over]
        fillers = gobj.bindings.get(decl.over, [])
        res = resolve_chain(self.kb, over.type, decl.chain)
        hit = res.values.index(decl.value)
        cols = over.bound + 1
        filler_nodes = [
            self.chain_node(self.objects[f], decl.chain) for f in fillers
        ]
        num = _number_over(model, decl.over)
        if num is not None and decl.over in gobj.generated:
            gate = number_gate(over.bound, len(res.values), hit)
            parents = [self.value_node(gobj, num.name)] + filler_nodes
            self.net.add_node(node_id, domain_of(model, decl), parents, gate)
        else:
            cpt = quantifier_cpt_naive(len(fillers), len(res.values), hit, cols)
            self.net.add_node(node_id, domain_of(model, decl), filler_nodes, cpt)

    def chain_node(self, gobj: GroundObject, chain: Chain) -> str:
        seg = chain.head
        if len(chain) == 1:
            return self.value_node(gobj, seg)
        model = self.model(gobj)
        decl = model.get(seg)
        if decl is None or decl.kind != "complex" or decl.multi:
            raise NonSimpleChain(
                f"chain {chain} from {gobj.id!r} does not pass through a "
                f"single-valued complex attribute"
            )
        bound = gobj.bindings.get(seg)
        if bound:
            return self.chain_node(self.objects[bound[0]], chain.rest)
        cands = gobj.candidates.get(seg)
        if cands is None:
            inv = _inverse_decl(self.kb, decl)
            if inv is not None and inv.multi:
                raise UnsupportedStructure(
                    f"chain {chain} from {gobj.id!r} traverses {seg!r}, whose "
                    f"owner would have to be generated through the multi-valued "
                    f"inverse {decl.inverse!r}; assert the filler instead"
                )
            raise InvalidModel(f"{gobj.id!r}.{seg} is unbound")  # phase-1 bug guard
        mux_id = f"{gobj.id}/{chain}"
        if mux_id in self.net.nodes:
            return mux_id
        ref = _reference_over(model, seg)
        selector = self.value_node(gobj, ref.name)
        branch_nodes = [
            self.chain_node(self.objects[oid], chain.rest) for _, oid in cands
        ]
        res = resolve_chain(self.kb, gobj.model_key, chain)
        for b in branch_nodes:
            if self.net.values(b) != res.values:
                raise RangeMismatch(
                    f"multiplexer branch {b!r} has range {self.net.values(b)}, "
                    f"expected {res.values}"
                )
        cpt = multiplexer_cpt(len(cands), len(res.values))
        self.net.add_node(mux_id, res.values, [selector] + branch_nodes, cpt)
        return mux_id

    def query_node(self, instance: str, chain: Chain) -> str:
        if instance not in self.kb.instances:
            raise UnknownInstance(f"no instance named {instance!r}")
        resolve_chain(self.kb, instance, chain)  # type-check with good errors
        return self.chain_node(self.objects[instance], chain)


# --- expansion --------------------------------------------------------------------


def ground(kb: KnowledgeBase) -> tuple[DiscreteNetwork, GroundMap]:
    """Expands named instances into the ground object graph, then builds the
    flat network eagerly for every value-bearing attribute of every named
    instance (generated objects materialize on demand through chains)."""
    ensure_valid(kb)
    net = DiscreteNetwork()
    gmap = GroundMap(kb, net)
    queue: list[GroundObject] = []

    def make(obj_id: str, cls: str, model_key: str, depth: int) -> GroundObject:
        if depth > DEPTH_CAP:
            raise RecursionDepthExceeded(
                f"object expansion deeper than {DEPTH_CAP} at {obj_id!r}"
            )
        gobj = GroundObject(id=obj_id, cls=cls, model_key=model_key, depth=depth)
        gmap.objects[obj_id] = gobj
        queue.append(gobj)
        return gobj

    for iname in sorted(kb.instances):
        make(iname, kb.class_of(iname), iname, 0)
    for (inst, attr), fillers in kb.bindings().items():
        gmap.objects[inst].bindings[attr] = list(fillers)

    while queue:
        gobj = queue.pop(0)
        model = effective_model(kb, gobj.model_key)
        for attr, decl in model.items():
            if decl.kind != "complex" or attr in gobj.bindings:
                continue
            ref = _reference_over(model, attr)
            if ref is not None and not decl.multi:
                cands: list[tuple[str, str]] = []
                for entry in ref.entries:
                    if entry.is_class:
                        cid = f"{gobj.id}/{attr}={entry.target}"
                        make(cid, entry.target, entry.target, gobj.depth + 1)
                        cands.append((entry.target, cid))
                    else:
                        cands.append((entry.target, entry.target))
                gobj.candidates[attr] = cands
                continue
            inv = _inverse_decl(kb, decl)
            if not decl.multi and inv is not None and inv.multi:
                # generating an owner through a multi-valued inverse is not
                # supported; left unbound, raising only if a chain traverses it
                continue
            fillers = []
            count = decl.bound if decl.multi else 1
            for i in range(count):
                fid = f"{gobj.id}/{attr}[{i}]" if decl.multi else f"{gobj.id}/{attr}"
                child = make(fid, decl.type, decl.type, gobj.depth + 1)
                if decl.inverse is not None:
                    child.bindings[decl.inverse] = [gobj.id]
                fillers.append(fid)
            gobj.bindings[attr] = fillers
            gobj.generated.add(attr)

    for iname in sorted(kb.instances):
        gobj = gmap.objects[iname]
        for attr, decl in effective_model(kb, iname).items():
            if decl.kind != "complex":
                gmap.value_node(gobj, attr)
    return net, gmap


def _inverse_decl(kb: KnowledgeBase, decl: ComplexAttr) -> Optional[ComplexAttr]:
    if decl.inverse is None:
        return None
    inv = effective_model(kb, decl.type).get(decl.inverse)
    return inv if inv is not None and inv.kind == "complex" else None


# --- query answering ----------------------------------------------------------------


@dataclass(frozen=True)
class QueryAnswer:
    values: tuple[str, ...]
    probs: np.ndarray

    def as_dict(self) -> dict[str, float]:
        return {v: float(p) for v, p in zip(self.values, self.probs)}

    def __getitem__(self, value: str) -> float:
        return float(self.probs[self.values.index(value)])


def collect_evidence(kb: KnowledgeBase, expr: QueryExpr, resolve) -> dict[str, str]:
    """Maps asserted values plus the query's observations to network nodes via
    `resolve(instance, chain) -> node id`; conflicting values are an error."""
    ev: dict[str, str] = {}

    def put(node: str, value: str, why: str) -> None:
        if ev.get(node, value) != value:
            raise ContradictoryEvidence(
                f"{why}: {node!r} cannot be both {ev[node]!r} and {value!r}"
            )
        ev[node] = value

    for (inst, attr), value in sorted(kb.baseline_evidence().items()):
        put(resolve(inst, Chain.of(attr)), value, "asserted value")
    for inst, chain, value in expr.evidence:
        put(resolve(inst, chain), value, "observation")
    return ev


def answer_query_kbmc(
    kb: KnowledgeBase,
    expr: QueryExpr,
    prebuilt: Optional[tuple[DiscreteNetwork, GroundMap]] = None,
) -> QueryAnswer:
    """Answers P(target | evidence, assertions) on the flat network."""
    net, gmap = prebuilt if prebuilt is not None else ground(kb)
    target = gmap.query_node(*expr.target)
    ev = collect_evidence(kb, expr, gmap.query_node)
    posterior: Factor = bn_query(net, [target], ev)
    return QueryAnswer(values=net.values(target), probs=posterior.table)
