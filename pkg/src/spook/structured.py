"""Structured backend: recursive per-class subqueries composed at the top.

Instead of grounding everything flat, each class is solved as a little local
network whose conditional table P(outputs | inputs) is cached and reused:

  * chains that climb back out through the entry attribute become the input
    interface (the needed() set of the entry point);
  * chains that land on named instances become *global* inputs, bound only
    in the top-level network so shared instances stay correlated;
  * multi-valued attributes are counted combinatorially — one per-filler
    subquery plus a recurrence over count vectors — rather than one node per
    filler (the naive mode keeps per-filler nodes, mirroring the grounder).

The top-level network has one node per (instance, attribute); asserted
complex values are flattened away (a chain through an asserted slot is just
the target instance's node), asserted simple values become evidence.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bn import DiscreteNetwork, query as bn_query, triangulation_stats
from .errors import (
    CycleDetected,
    ImpossibleEvidence,
    InvalidModel,
    NonSimpleChain,
    RangeMismatch,
    RecursionDepthExceeded,
    UnknownInstance,
    UnsupportedStructure,
)
from .kbmc import (
    QueryAnswer,
    collect_evidence,
    multiplexer_cpt,
    number_gate,
    quantifier_cpt_naive,
)
from .lang import QueryExpr
from .model import (
    Chain,
    ComplexAttr,
    KnowledgeBase,
    QuantifierAttr,
    _number_over,
    _reference_over,
    domain_of,
    effective_model,
    ensure_valid,
    resolve_chain,
)

DEPTH_CAP = 64


# --- counting recurrences ------------------------------------------------------


def binomial_cpt(p: float, n: int) -> np.ndarray:
    """Distribution of #successes among n i.i.d. draws, by the recurrence
    P_0(0)=1, P_{m+1}(k) = (1-p)·P_m(k) + p·P_m(k-1)."""
    if not 0.0 <= p <= 1.0:
        raise InvalidModel(f"probability {p} outside [0, 1]")
    dist = np.zeros(n + 1)
    dist[0] = 1.0
    for _ in range(n):
        dist[1:] = (1.0 - p) * dist[1:] + p * dist[:-1]
        dist[0] *= 1.0 - p
    return dist


def _vector_recurrence(contrib: np.ndarray, n: int, ell: int) -> tuple[list[np.ndarray], int]:
    """All partial count-vector distributions P_0..P_n over {0..n}^ell.

    `contrib` has one probability per contribution pattern c ∈ {0,1}^ell
    (C-order bit patterns, coordinate 0 = most significant). Returns the list
    of P_m tables (flat, C-order over count vectors) and the number of
    multiply-add operations performed.
    """
    shape = (n + 1,) * ell
    cur = np.zeros(shape)
    cur[(0,) * ell] = 1.0
    tables = [cur.reshape(-1).copy()]
    ops = 0
    for _ in range(n):
        nxt = np.zeros(shape)
        for pattern in range(1 << ell):
            p = float(contrib[pattern])
            bits = [(pattern >> (ell - 1 - j)) & 1 for j in range(ell)]
            src = tuple(
                slice(None, -1) if b else slice(None) for b in bits
            )
            dst = tuple(
                slice(1, None) if b else slice(None) for b in bits
            )
            nxt[dst] += p * cur[src]
            ops += cur[src].size
        cur = nxt
        tables.append(cur.reshape(-1).copy())
    return tables, ops


def quantifier_joint_cpt(
    contrib: np.ndarray, n: int, number_dist: Optional[np.ndarray] = None
) -> np.ndarray:
    """Joint distribution over ell counters after n fillers (C-order over
    {0..n}^ell). With a count distribution, mixes the partials: the row for
    #A = m is exactly P_m."""
    contrib = np.asarray(contrib, dtype=float)
    ell = int(round(np.log2(contrib.size)))
    if 1 << ell != contrib.size:
        raise InvalidModel("contribution distribution size must be a power of 2")
    if abs(contrib.sum() - 1.0) > 1e-9:
        raise InvalidModel("contribution distribution must sum to 1")
    tables, _ = _vector_recurrence(contrib, n, ell)
    if number_dist is None:
        return tables[n]
    number_dist = np.asarray(number_dist, dtype=float)
    if number_dist.shape != (n + 1,):
        raise InvalidModel(f"count distribution must have {n + 1} entries")
    return sum(w * t for w, t in zip(number_dist, tables))


# --- subquery results -----------------------------------------------------------


def _canonical_chains(chains) -> tuple[Chain, ...]:
    return tuple(sorted(set(chains), key=str))


def _joint_labels(doms: Sequence[tuple[str, ...]]) -> tuple[str, ...]:
    if not doms:
        return ("()",)
    return tuple("|".join(combo) for combo in itertools.product(*doms))


def _projection_cpd(doms: Sequence[tuple[str, ...]], coord: int) -> np.ndarray:
    """Deterministic CPD extracting one coordinate of a C-order joint."""
    sizes = [len(d) for d in doms]
    rows = int(np.prod(sizes))
    out = np.zeros((rows, sizes[coord]))
    idx = np.arange(rows)
    stride = int(np.prod(sizes[coord + 1:]))
    out[idx, (idx // stride) % sizes[coord]] = 1.0
    return out


@dataclass(frozen=True)
class SubQueryResult:
    target: str
    outputs: tuple[Chain, ...]
    entry: Optional[str]
    entry_inputs: tuple[Chain, ...]                 # suffixes after the entry attr
    global_inputs: tuple[tuple[str, Chain], ...]    # (instance, chain), sorted
    entry_values: tuple[tuple[str, ...], ...]
    global_values: tuple[tuple[str, ...], ...]
    output_values: tuple[tuple[str, ...], ...]
    table: np.ndarray  # rows: C-order over (entry joint, globals); cols: outputs joint

    @property
    def input_count(self) -> int:
        return len(self.entry_inputs) + len(self.global_inputs)


# --- needed-set analysis ---------------------------------------------------------


@dataclass
class _Analysis:
    needed_attrs: set[str] = field(default_factory=set)
    complex_suffixes: dict[str, set[Chain]] = field(default_factory=dict)
    ref_suffixes: dict[str, set[Chain]] = field(default_factory=dict)
    quantifier_groups: dict[str, set[str]] = field(default_factory=dict)
    tau: set[Chain] = field(default_factory=set)
    global_inputs: set[tuple[str, Chain]] = field(default_factory=set)


class StructuredEngine:
    """Recursive solver over one validated knowledge base.

    `reuse=False` disables the subquery cache (every call recomputes);
    `naive_quantifiers=True` materializes one subnetwork per filler instead
    of the count-vector recurrence.
    """

    def __init__(
        self,
        kb: KnowledgeBase,
        reuse: bool = True,
        naive_quantifiers: bool = False,
    ):
        ensure_valid(kb)
        self.kb = kb
        self.reuse = reuse
        self.naive_quantifiers = naive_quantifiers
        self._cache: dict = {}
        self._hits = 0
        self._misses = 0
        # (target, served-from-cache) per subquery request, in request order
        self.request_log: list[tuple[str, bool]] = []
        self._analyses: dict = {}
        # networks retained for post-hoc clique statistics; triangulation is
        # deliberately not computed on the query path
        self._local_nets: list[DiscreteNetwork] = []
        self._top_nets: deque = deque(maxlen=8)

    def cache_stats(self) -> tuple[int, int, int]:
        return (self._hits, self._misses, len(self._cache))

    @property
    def local_max_clique(self) -> int:
        """Largest triangulated clique over every local network solved so far."""
        return max(
            (triangulation_stats(n).max_clique for n in self._local_nets),
            default=0,
        )

    @property
    def top_max_clique(self) -> int:
        """Largest triangulated clique over recent top-level networks."""
        return max(
            (triangulation_stats(n).max_clique for n in self._top_nets),
            default=0,
        )

    @property
    def top_network(self) -> Optional[DiscreteNetwork]:
        """Instance-web network of the most recent query, for debug dumps."""
        return self._top_nets[-1] if self._top_nets else None

    # -- shared model helpers -----------------------------------------------------

    def _model(self, target: str):
        return effective_model(self.kb, target)

    def _bindings(self, target: str) -> dict[str, list[str]]:
        if target in self.kb.instances:
            return {
                attr: fillers
                for (inst, attr), fillers in self.kb.bindings().items()
                if inst == target
            }
        return {}

    def _check_traversable(self, target: str, decl: ComplexAttr, chain: Chain) -> None:
        if decl.multi:
            raise NonSimpleChain(
                f"chain {chain} passes through multi-valued {decl.name!r}"
            )
        inv = effective_model(self.kb, decl.type).get(decl.inverse or "")
        if inv is not None and inv.kind == "complex" and inv.multi:
            raise UnsupportedStructure(
                f"chain {chain} from {target!r} traverses {decl.name!r}, whose "
                f"owner would have to be generated through the multi-valued "
                f"inverse {decl.inverse!r}; assert the filler instead"
            )

    def _quantifier_specs(
        self, target: str, over: str, names: Sequence[str]
    ) -> list[QuantifierAttr]:
        model = self._model(target)
        return [model[n] for n in sorted(names)]

    # -- needed-set analysis ------------------------------------------------------

    def _analyze(
        self, target: str, outputs: frozenset, entry: Optional[str], depth: int
    ) -> _Analysis:
        key = (target, outputs, entry)
        cached = self._analyses.get(key)
        if cached is not None:
            return cached
        if depth > DEPTH_CAP:
            raise RecursionDepthExceeded(
                f"subquery nesting deeper than {DEPTH_CAP} at {target!r}"
            )
        kb = self.kb
        model = self._model(target)
        bindings = self._bindings(target)
        ana = _Analysis()
        seen: set[Chain] = set()
        work: list[Chain] = []

        def push(chain: Chain) -> None:
            if chain not in seen:
                seen.add(chain)
                work.append(chain)

        for chain in outputs:
            push(chain)
        if target in kb.instances:
            # own asserted values are conditioned on; their nodes must exist
            for (inst, attr), _v in kb.baseline_evidence().items():
                if inst == target:
                    push(Chain.of(attr))

        def drain() -> None:
            while work:
                chain = work.pop()
                head = chain.head
                if entry is not None and head == entry:
                    if len(chain) == 1:
                        raise NonSimpleChain(
                            f"chain {chain} ends at the entry attribute"
                        )
                    ana.tau.add(chain.rest)
                    continue
                decl = model.get(head)
                if decl is None:
                    raise NonSimpleChain(f"{target!r} has no attribute {head!r}")
                if len(chain) == 1:
                    if decl.kind == "complex":
                        raise NonSimpleChain(f"chain {chain} ends at a complex attribute")
                    if head in ana.needed_attrs:
                        continue
                    ana.needed_attrs.add(head)
                    if decl.kind in ("simple", "number", "reference"):
                        for c in decl.parents:
                            push(c)
                    else:  # quantifier
                        over = decl.over
                        if over in bindings:
                            for f in bindings[over]:
                                ana.global_inputs.add((f, decl.chain))
                        else:
                            ana.quantifier_groups.setdefault(over, set()).add(head)
                            num = _number_over(model, over)
                            if num is not None:
                                push(Chain.of(num.name))
                    continue
                if decl.kind != "complex":
                    raise NonSimpleChain(
                        f"chain {chain} passes through {decl.kind} attribute {head!r}"
                    )
                if head in bindings:
                    ana.global_inputs.add((bindings[head][0], chain.rest))
                    continue
                ref = _reference_over(model, head)
                if ref is not None and not decl.multi:
                    ana.ref_suffixes.setdefault(head, set()).add(chain.rest)
                    push(Chain.of(ref.name))
                    continue
                self._check_traversable(target, decl, chain)
                ana.complex_suffixes.setdefault(head, set()).add(chain.rest)

        drain()
        while True:
            before = len(seen)
            for attr, suffixes in sorted(
                ana.complex_suffixes.items(), key=lambda kv: kv[0]
            ):
                child_decl: ComplexAttr = model[attr]
                child = self._analyze(
                    child_decl.type, frozenset(suffixes), child_decl.inverse, depth + 1
                )
                for rho in child.tau:
                    push(rho)
                ana.global_inputs |= child.global_inputs
            for attr, suffixes in sorted(
                ana.ref_suffixes.items(), key=lambda kv: kv[0]
            ):
                ref = _reference_over(model, attr)
                for e in ref.entries:
                    if e.is_class:
                        child = self._analyze(
                            e.target, frozenset(suffixes), None, depth + 1
                        )
                        ana.global_inputs |= child.global_inputs
                    else:
                        for rest in suffixes:
                            ana.global_inputs.add((e.target, rest))
            for over, names in sorted(
                ana.quantifier_groups.items(), key=lambda kv: kv[0]
            ):
                specs = self._quantifier_specs(target, over, names)
                over_decl: ComplexAttr = model[over]
                child = self._analyze(
                    over_decl.type,
                    frozenset(s.chain for s in specs),
                    over_decl.inverse,
                    depth + 1,
                )
                for rho in child.tau:
                    push(rho)
                ana.global_inputs |= child.global_inputs
            drain()
            if len(seen) == before:
                break

        self._analyses[key] = ana
        return ana

    # -- subquery solving -----------------------------------------------------------

    def solve_query(
        self,
        target: str,
        outputs: Sequence[Chain],
        entry: Optional[str] = None,
    ) -> SubQueryResult:
        """P(outputs | interface) for a class or instance; cached for classes."""
        return self._solve(target, outputs, entry, depth=0)

    def _solve(
        self, target: str, outputs, entry: Optional[str], depth: int
    ) -> SubQueryResult:
        outputs = _canonical_chains(outputs)
        if not outputs:
            raise InvalidModel("subquery needs at least one output chain")
        for chain in outputs:
            resolve_chain(self.kb, target, chain)
        if entry is not None:
            decl = self._model(target).get(entry)
            if decl is None or decl.kind != "complex":
                raise InvalidModel(f"entry point {entry!r} is not a complex attribute")
        key = (target, outputs, entry, self.naive_quantifiers)
        cacheable = target in self.kb.classes
        if cacheable and self.reuse and key in self._cache:
            self._hits += 1
            self.request_log.append((target, True))
            return self._cache[key]
        self._misses += 1
        self.request_log.append((target, False))
        result = _LocalBuild(self, target, outputs, entry, depth).run()
        if cacheable and self.reuse:
            self._cache[key] = result
        return result

    # -- top level -------------------------------------------------------------------

    def solve_top_level(self, expr: QueryExpr) -> QueryAnswer:
        """Builds the instance-web network for this query and answers it."""
        top = self.build_top(
            [expr.target] + [(i, c) for i, c, _v in expr.evidence]
        )
        target = top.node(*expr.target)
        ev = collect_evidence(self.kb, expr, top.node)
        posterior = bn_query(top.net, [target], ev)
        self._top_nets.append(top.net)
        return QueryAnswer(values=top.net.values(target), probs=posterior.table)

    def build_top(self, extra_chains: Sequence[tuple[str, Chain]] = ()) -> "TopLevelNet":
        builder = _TopBuild(self, extra_chains)
        return builder.run()


def answer_query_structured(
    kb: KnowledgeBase,
    expr: QueryExpr,
    engine: Optional[StructuredEngine] = None,
    **flags,
) -> QueryAnswer:
    engine = engine or StructuredEngine(kb, **flags)
    return engine.solve_top_level(expr)


# --- local network construction ----------------------------------------------------


class _LocalBuild:
    """One SolveQuery invocation: local network, conditional table."""

    ENTRY = "<entry>"
    OUTPUT = "<out>"

    def __init__(self, engine, target, outputs, entry, depth):
        self.e = engine
        self.kb = engine.kb
        self.target = target
        self.outputs = outputs
        self.entry = entry
        self.depth = depth
        self.model = engine._model(target)
        self.bindings = engine._bindings(target)
        self.ana = engine._analyze(target, frozenset(outputs), entry, depth)
        self.net = DiscreteNetwork()
        self.nodes: dict[str, str] = {}  # chain text -> node id
        self.building: set[str] = set()
        self.tau = _canonical_chains(self.ana.tau)
        self.globals_ = tuple(
            sorted(self.ana.global_inputs, key=lambda g: (g[0], str(g[1])))
        )

    # entry coordinate domains resolve on the class the entry points back to
    def _entry_doms(self) -> tuple[tuple[str, ...], ...]:
        if not self.tau:
            return ()
        back_cls = self.model[self.entry].type
        return tuple(
            resolve_chain(self.kb, back_cls, rho).values for rho in self.tau
        )

    def run(self) -> SubQueryResult:
        entry_doms = self._entry_doms()
        if self.tau:
            labels = _joint_labels(entry_doms)
            self.net.add_node(
                self.ENTRY, labels, (), np.full((1, len(labels)), 1.0 / len(labels))
            )
            for j, rho in enumerate(self.tau):
                self.net.add_node(
                    f"{self.ENTRY}.{rho}",
                    entry_doms[j],
                    (self.ENTRY,),
                    _projection_cpd(entry_doms, j),
                )
        global_doms = []
        for inst, g in self.globals_:
            dom = resolve_chain(self.kb, inst, g).values
            global_doms.append(dom)
            gid = self._global_id(inst, g)
            self.net.add_node(gid, dom, (), np.full((1, len(dom)), 1.0 / len(dom)))

        for attr in sorted(self.ana.needed_attrs):
            self.get_chain_node(Chain.of(attr))
        out_parents = [self.get_chain_node(c) for c in self.outputs]
        out_doms = tuple(self.net.values(p) for p in out_parents)
        labels = _joint_labels(out_doms)
        self.net.add_node(
            self.OUTPUT, labels, out_parents, np.eye(len(labels))
        )

        evidence = {}
        if self.target in self.kb.instances:
            for (inst, attr), v in self.kb.baseline_evidence().items():
                if inst == self.target:
                    evidence[self.get_chain_node(Chain.of(attr))] = v

        given = ([self.ENTRY] if self.tau else []) + [
            self._global_id(i, g) for i, g in self.globals_
        ]
        table = self._conditional_table(given, evidence)
        self.e._local_nets.append(self.net)
        return SubQueryResult(
            target=self.target,
            outputs=self.outputs,
            entry=self.entry,
            entry_inputs=self.tau,
            global_inputs=self.globals_,
            entry_values=entry_doms,
            global_values=tuple(global_doms),
            output_values=out_doms,
            table=table,
        )

    def _conditional_table(self, given: list[str], evidence: dict) -> np.ndarray:
        """P(output | given combination) for every combination, rows in
        C-order over the given ranges.

        One joint elimination run instead of a per-row loop.  Rows with no
        mass are impossible under this instance's assertions and never
        receive weight in any composition, so any valid distribution will
        do; uniform keeps the table well-formed.
        """
        out_card = len(self.net.values(self.OUTPUT))
        rows = 1
        for g in given:
            rows *= len(self.net.values(g))
        try:
            joint = bn_query(self.net, [*given, self.OUTPUT], evidence).table
        except ImpossibleEvidence:
            return np.full((rows, out_card), 1.0 / out_card)
        flat = joint.reshape(rows, out_card)
        mass = flat.sum(axis=1, keepdims=True)
        dead = (mass == 0.0).ravel()
        mass[dead.reshape(-1, 1)] = 1.0
        table = flat / mass
        table[dead] = 1.0 / out_card
        return table

    # -- node builders ---------------------------------------------------------------

    def _global_id(self, inst: str, chain: Chain) -> str:
        return f"<g:{inst}.{chain}>"

    def get_chain_node(self, chain: Chain) -> str:
        """Node carrying the chain's value, creating it (and whatever it
        needs) on first use."""
        text = str(chain)
        if text in self.nodes:
            return self.nodes[text]
        if text in self.building:
            raise CycleDetected(f"local build cycle at {self.target!r}.{chain}")
        self.building.add(text)
        try:
            node = self._build_chain(chain)
        finally:
            self.building.discard(text)
        self.nodes[text] = node
        return node

    def _build_chain(self, chain: Chain) -> str:
        head = chain.head
        if self.entry is not None and head == self.entry:
            return f"{self.ENTRY}.{chain.rest}"
        decl = self.model[head]
        if len(chain) == 1:
            return self._value_node(head, decl)
        if head in self.bindings:
            return self._global_id(self.bindings[head][0], chain.rest)
        ref = _reference_over(self.model, head)
        if ref is not None and not decl.multi:
            return self._mux_node(head, ref, chain.rest)
        return self._subquery_projection(head, chain.rest)

    def _value_node(self, attr: str, decl) -> str:
        if decl.kind in ("simple", "number", "reference"):
            parents = [self.get_chain_node(c) for c in decl.parents]
            self.net.add_node(attr, domain_of(self.model, decl), parents, decl.cpd)
            return attr
        if decl.kind == "quantifier":
            return self._quantifier_node(attr, decl)
        raise NonSimpleChain(f"attribute {attr!r} carries no value")

    def process_complex_attribute(self, attr: str) -> str:
        """Joint node for a generic single-valued complex attribute: one
        recursive subquery over every chain needed through it."""
        node_id = f"<sub:{attr}>"
        if node_id in self.net.nodes:
            return node_id
        decl: ComplexAttr = self.model[attr]
        suffixes = _canonical_chains(self.ana.complex_suffixes[attr])
        child = self.e._solve(decl.type, suffixes, decl.inverse, self.depth + 1)
        parents = [self.get_chain_node(rho) for rho in child.entry_inputs]
        parents += [self._global_id(i, g) for i, g in child.global_inputs]
        labels = _joint_labels(child.output_values)
        self.net.add_node(node_id, labels, parents, child.table)
        return node_id

    def _subquery_projection(self, attr: str, rest: Chain) -> str:
        joint = self.process_complex_attribute(attr)
        suffixes = _canonical_chains(self.ana.complex_suffixes[attr])
        coord = suffixes.index(rest)
        child_doms = [
            resolve_chain(self.kb, self.model[attr].type, s).values for s in suffixes
        ]
        proj_id = f"<sub:{attr}>.{rest}"
        if proj_id not in self.net.nodes:
            self.net.add_node(
                proj_id,
                child_doms[coord],
                (joint,),
                _projection_cpd(child_doms, coord),
            )
        return proj_id

    def _mux_node(self, attr: str, ref, rest: Chain) -> str:
        mux_id = f"<mux:{attr}.{rest}>"
        if mux_id in self.net.nodes:
            return mux_id
        selector = self.get_chain_node(Chain.of(ref.name))
        suffixes = _canonical_chains(self.ana.ref_suffixes[attr])
        res = resolve_chain(self.kb, self.target, Chain((attr,) + rest.segments))
        branches = []
        for e in ref.entries:
            if e.is_class:
                child = self.e._solve(e.target, suffixes, None, self.depth + 1)
                joint_id = f"<ref:{attr}={e.target}>"
                if joint_id not in self.net.nodes:
                    parents = [
                        self._global_id(i, g) for i, g in child.global_inputs
                    ]
                    self.net.add_node(
                        joint_id,
                        _joint_labels(child.output_values),
                        parents,
                        child.table,
                    )
                coord = suffixes.index(rest)
                doms = [
                    resolve_chain(self.kb, e.target, s).values for s in suffixes
                ]
                proj_id = f"{joint_id}.{rest}"
                if proj_id not in self.net.nodes:
                    self.net.add_node(
                        proj_id, doms[coord], (joint_id,), _projection_cpd(doms, coord)
                    )
                branches.append(proj_id)
            else:
                branches.append(self._global_id(e.target, rest))
        for b in branches:
            if self.net.values(b) != res.values:
                raise RangeMismatch(
                    f"multiplexer branch {b!r} has range {self.net.values(b)}, "
                    f"expected {res.values}"
                )
        cpt = multiplexer_cpt(len(branches), len(res.values))
        self.net.add_node(mux_id, res.values, [selector] + branches, cpt)
        return mux_id

    # -- quantifiers -------------------------------------------------------------------

    def _group_for(self, over: str) -> tuple[list[QuantifierAttr], tuple[Chain, ...]]:
        names = self.ana.quantifier_groups[over]
        specs = self.e._quantifier_specs(self.target, over, names)
        sigma = _canonical_chains(s.chain for s in specs)
        return specs, sigma

    def _quantifier_node(self, attr: str, decl: QuantifierAttr) -> str:
        over = decl.over
        if over in self.bindings:
            return self._named_count_node(attr, decl)
        specs, sigma = self._group_for(over)
        over_decl: ComplexAttr = self.model[over]
        if self.e.naive_quantifiers:
            return self._naive_count_node(attr, decl, specs, sigma, over_decl)
        count = self._joint_count_node(over, specs, sigma, over_decl)
        coord = [s.name for s in specs].index(attr)
        n = over_decl.bound
        doms = [tuple(str(i) for i in range(n + 1))] * len(specs)
        proj_id = f"<cnt:{over}>.{attr}"
        if proj_id not in self.net.nodes:
            self.net.add_node(
                proj_id, doms[coord], (f"<cnt:{over}>",), _projection_cpd(doms, coord)
            )
        return proj_id

    def _named_count_node(self, attr: str, decl: QuantifierAttr) -> str:
        fillers = self.bindings[decl.over]
        bound = self.model[decl.over].bound
        filler_nodes = [
            self._global_id(f, decl.chain) for f in fillers
        ]
        res = resolve_chain(self.kb, self.model[decl.over].type, decl.chain)
        cpt = quantifier_cpt_naive(
            len(fillers), len(res.values), res.values.index(decl.value), bound + 1
        )
        self.net.add_node(attr, domain_of(self.model, decl), filler_nodes, cpt)
        return attr

    def _child_input_nodes(self, child: SubQueryResult) -> list[str]:
        parents = [self.get_chain_node(rho) for rho in child.entry_inputs]
        parents += [self._global_id(i, g) for i, g in child.global_inputs]
        return parents

    def _joint_count_node(
        self, over: str, specs, sigma, over_decl: ComplexAttr
    ) -> str:
        node_id = f"<cnt:{over}>"
        if node_id in self.net.nodes:
            return node_id
        # one interface request per filler; results are interchangeable, so
        # the cache collapses them to a single solve when reuse is on
        for _ in range(over_decl.bound):
            child = self.e._solve(
                over_decl.type, sigma, over_decl.inverse, self.depth + 1
            )
        parents = self._child_input_nodes(child)
        n = over_decl.bound
        cat = _category_matrix(child, specs, sigma)
        num = _number_over(self.model, over)
        rows = []
        for r in range(cat.shape[0]):
            tables, _ops = _vector_recurrence(cat[r], n, len(specs))
            if num is not None:
                rows.extend(tables)  # one row per (input combo, m): m fastest
            else:
                rows.append(tables[n])
        cpt = np.vstack(rows)
        labels = _joint_labels(
            [tuple(str(i) for i in range(n + 1))] * len(specs)
        )
        if num is not None:
            parents = parents + [self.get_chain_node(Chain.of(num.name))]
        self.net.add_node(node_id, labels, parents, cpt)
        return node_id

    def _naive_count_node(
        self, attr: str, decl: QuantifierAttr, specs, sigma, over_decl: ComplexAttr
    ) -> str:
        n = over_decl.bound
        filler_nodes = []
        for i in range(n):
            joint_id = f"<sub:{decl.over}[{i}]>"
            if joint_id not in self.net.nodes:
                child = self.e._solve(
                    over_decl.type, sigma, over_decl.inverse, self.depth + 1
                )
                parents = self._child_input_nodes(child)
                self.net.add_node(
                    joint_id, _joint_labels(child.output_values), parents, child.table
                )
            doms = [
                resolve_chain(self.kb, over_decl.type, s).values for s in sigma
            ]
            coord = sigma.index(decl.chain)
            proj_id = f"{joint_id}.{decl.chain}"
            if proj_id not in self.net.nodes:
                self.net.add_node(
                    proj_id, doms[coord], (joint_id,), _projection_cpd(doms, coord)
                )
            filler_nodes.append(proj_id)
        res = resolve_chain(self.kb, over_decl.type, decl.chain)
        hit = res.values.index(decl.value)
        num = _number_over(self.model, decl.over)
        if num is not None:
            gate = number_gate(n, len(res.values), hit)
            parents = [self.get_chain_node(Chain.of(num.name))] + filler_nodes
            self.net.add_node(attr, domain_of(self.model, decl), parents, gate)
        else:
            cpt = quantifier_cpt_naive(n, len(res.values), hit, n + 1)
            self.net.add_node(attr, domain_of(self.model, decl), filler_nodes, cpt)
        return attr


def _category_matrix(child: SubQueryResult, specs, sigma) -> np.ndarray:
    """Folds the per-filler table P(sigma | inputs) into contribution-pattern
    probabilities: column c = P(filler satisfies exactly the specs whose bit
    is set in c)."""
    ell = len(specs)
    rows, cols = child.table.shape
    combos = list(itertools.product(*child.output_values))
    cat = np.zeros((rows, 1 << ell))
    for col, combo in enumerate(combos):
        pattern = 0
        for j, spec in enumerate(specs):
            value = combo[sigma.index(spec.chain)]
            if value == spec.value:
                pattern |= 1 << (ell - 1 - j)
        cat[:, pattern] += child.table[:, col]
    return cat


# --- top-level network ----------------------------------------------------------------


@dataclass
class TopLevelNet:
    net: DiscreteNetwork
    _builder: "_TopBuild"

    def node(self, instance: str, chain: Chain) -> str:
        return self._builder.top_node(instance, chain)


class _TopBuild:
    """The instance web: one node per (instance, value-bearing attribute),
    plus joint/multiplexer nodes for chains into generic structure."""

    def __init__(self, engine: StructuredEngine, extra_chains):
        self.e = engine
        self.kb = engine.kb
        self.extra = list(extra_chains)
        self.net = DiscreteNetwork()
        self.nodes: dict[tuple[str, str], str] = {}
        self.building: set[tuple[str, str]] = set()
        # needed chain suffixes through generic/ref attrs, per instance
        self.csuf: dict[tuple[str, str], set[Chain]] = {}
        self.rsuf: dict[tuple[str, str], set[Chain]] = {}

    def run(self) -> TopLevelNet:
        self._prepass()
        for inst in sorted(self.kb.instances):
            for attr, decl in self.e._model(inst).items():
                if decl.kind != "complex":
                    self.top_node(inst, Chain.of(attr))
        for inst, chain in self.extra:
            self.top_node(inst, chain)
        return TopLevelNet(net=self.net, _builder=self)

    # -- pre-pass: discover every chain the web needs -------------------------------

    def _prepass(self) -> None:
        seen: set[tuple[str, str]] = set()
        work: list[tuple[str, Chain]] = []

        def push(inst: str, chain: Chain) -> None:
            key = (inst, str(chain))
            if key not in seen:
                seen.add(key)
                work.append((inst, chain))

        for inst in sorted(self.kb.instances):
            for attr, decl in self.e._model(inst).items():
                if decl.kind != "complex":
                    push(inst, Chain.of(attr))
        for inst, chain in self.extra:
            if inst not in self.kb.instances:
                raise UnknownInstance(f"no instance named {inst!r}")
            push(inst, chain)

        def handle(inst: str, chain: Chain) -> None:
            model = self.e._model(inst)
            bindings = self.e._bindings(inst)
            head = chain.head
            decl = model.get(head)
            if decl is None:
                raise NonSimpleChain(f"{inst!r} has no attribute {head!r}")
            if len(chain) == 1:
                if decl.kind == "complex":
                    raise NonSimpleChain(f"chain {chain} ends at a complex attribute")
                if decl.kind in ("simple", "number", "reference"):
                    for c in decl.parents:
                        push(inst, c)
                else:  # quantifier
                    over = decl.over
                    if over in bindings:
                        for f in bindings[over]:
                            push(f, decl.chain)
                    else:
                        over_decl = model[over]
                        num = _number_over(model, over)
                        if num is not None:
                            push(inst, Chain.of(num.name))
                        # all quantifiers over the attribute share one subquery
                        sigma = frozenset(
                            d.chain
                            for d in model.values()
                            if d.kind == "quantifier" and d.over == over
                        )
                        child = self.e._analyze(
                            over_decl.type, sigma, over_decl.inverse, 0
                        )
                        for rho in child.tau:
                            push(inst, rho)
                        for j, g in child.global_inputs:
                            push(j, g)
                return
            if decl.kind != "complex":
                raise NonSimpleChain(
                    f"chain {chain} passes through {decl.kind} attribute {head!r}"
                )
            if head in bindings:
                push(bindings[head][0], chain.rest)
                return
            ref = _reference_over(model, head)
            if ref is not None and not decl.multi:
                self.rsuf.setdefault((inst, head), set()).add(chain.rest)
                push(inst, Chain.of(ref.name))
                for e in ref.entries:
                    if e.is_class:
                        child = self.e._analyze(
                            e.target,
                            frozenset(self.rsuf[(inst, head)]),
                            None,
                            0,
                        )
                        for j, g in child.global_inputs:
                            push(j, g)
                    else:
                        push(e.target, chain.rest)
                return
            self.e._check_traversable(inst, decl, chain)
            self.csuf.setdefault((inst, head), set()).add(chain.rest)
            child = self.e._analyze(
                decl.type, frozenset(self.csuf[(inst, head)]), decl.inverse, 0
            )
            for rho in child.tau:
                push(inst, rho)
            for j, g in child.global_inputs:
                push(j, g)

        while work:
            inst, chain = work.pop()
            handle(inst, chain)

    # -- build pass -------------------------------------------------------------------

    def top_node(self, inst: str, chain: Chain) -> str:
        if inst not in self.kb.instances:
            raise UnknownInstance(f"no instance named {inst!r}")
        key = (inst, str(chain))
        if key in self.nodes:
            return self.nodes[key]
        if key in self.building:
            raise CycleDetected(f"top-level build cycle at {inst}.{chain}")
        self.building.add(key)
        try:
            node = self._build(inst, chain)
        finally:
            self.building.discard(key)
        self.nodes[key] = node
        return node

    def _build(self, inst: str, chain: Chain) -> str:
        model = self.e._model(inst)
        bindings = self.e._bindings(inst)
        head = chain.head
        decl = model.get(head)
        if decl is None:
            raise NonSimpleChain(f"{inst!r} has no attribute {head!r}")
        if len(chain) == 1:
            if decl.kind == "complex":
                raise NonSimpleChain(f"chain {chain} ends at a complex attribute")
            return self._value_node(inst, head, decl)
        if decl.kind != "complex":
            raise NonSimpleChain(
                f"chain {chain} passes through {decl.kind} attribute {head!r}"
            )
        if head in bindings:
            return self.top_node(bindings[head][0], chain.rest)
        ref = _reference_over(model, head)
        if ref is not None and not decl.multi:
            return self._mux_node(inst, head, ref, chain.rest)
        return self._sub_projection(inst, head, decl, chain.rest)

    def _value_node(self, inst: str, attr: str, decl) -> str:
        node_id = f"{inst}::{attr}"
        if node_id in self.net.nodes:
            return node_id
        model = self.e._model(inst)
        if decl.kind in ("simple", "number", "reference"):
            parents = [self.top_node(inst, c) for c in decl.parents]
            self.net.add_node(node_id, domain_of(model, decl), parents, decl.cpd)
            return node_id
        # quantifier
        bindings = self.e._bindings(inst)
        over = decl.over
        if over in bindings:
            fillers = bindings[over]
            res = resolve_chain(self.kb, model[over].type, decl.chain)
            filler_nodes = [self.top_node(f, decl.chain) for f in fillers]
            cpt = quantifier_cpt_naive(
                len(fillers),
                len(res.values),
                res.values.index(decl.value),
                model[over].bound + 1,
            )
            self.net.add_node(node_id, domain_of(model, decl), filler_nodes, cpt)
            return node_id
        specs = [
            d for d in model.values() if d.kind == "quantifier" and d.over == over
        ]
        specs.sort(key=lambda d: d.name)
        sigma = _canonical_chains(d.chain for d in specs)
        over_decl: ComplexAttr = model[over]
        if self.e.naive_quantifiers:
            return self._naive_value_node(
                inst, node_id, decl, specs, sigma, over_decl, model
            )
        count = self._joint_count_node(inst, over, specs, sigma, over_decl, model)
        n = over_decl.bound
        doms = [tuple(str(i) for i in range(n + 1))] * len(specs)
        coord = [d.name for d in specs].index(attr)
        self.net.add_node(node_id, doms[coord], (count,), _projection_cpd(doms, coord))
        return node_id

    def _child_parents(self, inst: str, child: SubQueryResult) -> list[str]:
        parents = [self.top_node(inst, rho) for rho in child.entry_inputs]
        parents += [self.top_node(j, g) for j, g in child.global_inputs]
        return parents

    def _joint_count_node(
        self, inst, over, specs, sigma, over_decl, model
    ) -> str:
        node_id = f"{inst}::{over}|count"
        if node_id in self.net.nodes:
            return node_id
        # per-filler requests, as in the local build: cache reuse, not the
        # builder, is what avoids repeated work here
        for _ in range(over_decl.bound):
            child = self.e._solve(over_decl.type, sigma, over_decl.inverse, 0)
        parents = self._child_parents(inst, child)
        n = over_decl.bound
        cat = _category_matrix(child, specs, sigma)
        num = _number_over(model, over)
        rows = []
        for r in range(cat.shape[0]):
            tables, _ops = _vector_recurrence(cat[r], n, len(specs))
            if num is not None:
                rows.extend(tables)  # one row per (input combo, m): m fastest
            else:
                rows.append(tables[n])
        cpt = np.vstack(rows)
        if num is not None:
            parents = parents + [self.top_node(inst, Chain.of(num.name))]
        labels = _joint_labels([tuple(str(i) for i in range(n + 1))] * len(specs))
        self.net.add_node(node_id, labels, parents, cpt)
        return node_id

    def _naive_value_node(
        self, inst, node_id, decl, specs, sigma, over_decl, model
    ) -> str:
        n = over_decl.bound
        filler_nodes = []
        for i in range(n):
            joint_id = f"{inst}::{decl.over}[{i}]|joint"
            if joint_id not in self.net.nodes:
                child = self.e._solve(over_decl.type, sigma, over_decl.inverse, 0)
                parents = self._child_parents(inst, child)
                self.net.add_node(
                    joint_id, _joint_labels(child.output_values), parents, child.table
                )
            doms = [resolve_chain(self.kb, over_decl.type, s).values for s in sigma]
            coord = sigma.index(decl.chain)
            proj_id = f"{joint_id}.{decl.chain}"
            if proj_id not in self.net.nodes:
                self.net.add_node(
                    proj_id, doms[coord], (joint_id,), _projection_cpd(doms, coord)
                )
            filler_nodes.append(proj_id)
        res = resolve_chain(self.kb, over_decl.type, decl.chain)
        hit = res.values.index(decl.value)
        num = _number_over(model, decl.over)
        if num is not None:
            gate = number_gate(n, len(res.values), hit)
            parents = [self.top_node(inst, Chain.of(num.name))] + filler_nodes
            self.net.add_node(node_id, domain_of(model, decl), parents, gate)
        else:
            cpt = quantifier_cpt_naive(n, len(res.values), hit, n + 1)
            self.net.add_node(node_id, domain_of(model, decl), filler_nodes, cpt)
        return node_id

    def _sub_projection(self, inst: str, attr: str, decl: ComplexAttr, rest: Chain) -> str:
        registered = self.csuf.get((inst, attr), set())
        if rest not in registered:
            raise InvalidModel(
                f"chain {attr}.{rest} on {inst!r} was not announced before the "
                f"build; pass it via extra_chains"
            )
        suffixes = _canonical_chains(registered)
        joint_id = f"{inst}::{attr}|joint"
        if joint_id not in self.net.nodes:
            child = self.e._solve(decl.type, suffixes, decl.inverse, 0)
            parents = self._child_parents(inst, child)
            self.net.add_node(
                joint_id, _joint_labels(child.output_values), parents, child.table
            )
        doms = [resolve_chain(self.kb, decl.type, s).values for s in suffixes]
        coord = suffixes.index(rest)
        proj_id = f"{joint_id}.{rest}"
        if proj_id not in self.net.nodes:
            self.net.add_node(
                proj_id, doms[coord], (joint_id,), _projection_cpd(doms, coord)
            )
        return proj_id

    def _mux_node(self, inst: str, attr: str, ref, rest: Chain) -> str:
        mux_id = f"{inst}::{attr}.{rest}|mux"
        if mux_id in self.net.nodes:
            return mux_id
        registered = self.rsuf.get((inst, attr), set())
        if rest not in registered:
            raise InvalidModel(
                f"chain {attr}.{rest} on {inst!r} was not announced before the "
                f"build; pass it via extra_chains"
            )
        selector = self.top_node(inst, Chain.of(ref.name))
        suffixes = _canonical_chains(registered)
        res = resolve_chain(self.kb, inst, Chain((attr,) + rest.segments))
        branches = []
        for e in ref.entries:
            if e.is_class:
                child = self.e._solve(e.target, suffixes, None, 0)
                joint_id = f"{inst}::{attr}={e.target}|joint"
                if joint_id not in self.net.nodes:
                    parents = [self.top_node(j, g) for j, g in child.global_inputs]
                    self.net.add_node(
                        joint_id,
                        _joint_labels(child.output_values),
                        parents,
                        child.table,
                    )
                doms = [resolve_chain(self.kb, e.target, s).values for s in suffixes]
                coord = suffixes.index(rest)
                proj_id = f"{joint_id}.{rest}"
                if proj_id not in self.net.nodes:
                    self.net.add_node(
                        proj_id, doms[coord], (joint_id,), _projection_cpd(doms, coord)
                    )
                branches.append(proj_id)
            else:
                branches.append(self.top_node(e.target, rest))
        for b in branches:
            if self.net.values(b) != res.values:
                raise RangeMismatch(
                    f"multiplexer branch {b!r} has range {self.net.values(b)}, "
                    f"expected {res.values}"
                )
        cpt = multiplexer_cpt(len(branches), len(res.values))
        self.net.add_node(mux_id, res.values, [selector] + branches, cpt)
        return mux_id
