"""Flat discrete Bayesian networks: factor algebra and exact inference.

The network is the common backend target: both the grounding translator and
the structured solver emit `DiscreteNetwork`s (the latter as throwaway local
networks). Inference is variable elimination over numpy factors with a
min-fill ordering; a brute-force enumerator doubles as the test oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    BadValue,
    ImpossibleEvidence,
    InvalidModel,
    StateSpaceTooLarge,
    UnknownReference,
)

MASS_FLOOR = 1e-300          # evidence mass below this is "impossible"
ENUM_STATE_CAP = 1 << 20     # joint enumeration refuses beyond this many states
RESCALE_LO, RESCALE_HI = 1e-100, 1e100


class Factor:
    """Non-negative table over a tuple of named discrete variables.

    `table` carries one axis per scope variable, in scope order.
    """

    __slots__ = ("scope", "table")

    def __init__(self, scope: Sequence[str], table: np.ndarray):
        self.scope = tuple(scope)
        self.table = np.asarray(table, dtype=float)
        if self.table.ndim != len(self.scope):
            raise InvalidModel(
                f"factor over {self.scope} has table of rank {self.table.ndim}"
            )

    def _broadcast_to(self, scope: tuple[str, ...]) -> np.ndarray:
        missing = [v for v in scope if v not in self.scope]
        t = self.table.reshape(self.table.shape + (1,) * len(missing))
        cur = list(self.scope) + missing
        return np.transpose(t, [cur.index(v) for v in scope])

    def multiply(self, other: "Factor") -> "Factor":
        scope = self.scope + tuple(v for v in other.scope if v not in self.scope)
        return Factor(scope, self._broadcast_to(scope) * other._broadcast_to(scope))

    def marginalize(self, var: str) -> "Factor":
        axis = self.scope.index(var)
        return Factor(
            self.scope[:axis] + self.scope[axis + 1:], self.table.sum(axis=axis)
        )

    def reduce(self, var: str, index: int) -> "Factor":
        axis = self.scope.index(var)
        return Factor(
            self.scope[:axis] + self.scope[axis + 1:],
            np.take(self.table, index, axis=axis),
        )

    def transpose(self, scope: Sequence[str]) -> "Factor":
        if set(scope) != set(self.scope) or len(scope) != len(self.scope):
            raise InvalidModel(f"cannot transpose {self.scope} to {tuple(scope)}")
        return Factor(scope, np.transpose(self.table, [self.scope.index(v) for v in scope]))

    def normalized(self) -> "Factor":
        z = self.table.sum()
        if z < MASS_FLOOR:
            raise ImpossibleEvidence("all probability mass excluded")
        return Factor(self.scope, self.table / z)

    def __repr__(self) -> str:
        return f"Factor({self.scope}, shape={self.table.shape})"


@dataclass
class NetNode:
    name: str
    values: tuple[str, ...]
    parents: tuple[str, ...]
    cpt: np.ndarray  # shape (*parent_cards, card)


class DiscreteNetwork:
    def __init__(self) -> None:
        self.nodes: dict[str, NetNode] = {}

    def add_node(
        self,
        name: str,
        values: Sequence[str],
        parents: Sequence[str] = (),
        cpt: Optional[np.ndarray] = None,
    ) -> NetNode:
        if name in self.nodes:
            raise InvalidModel(f"duplicate network node {name!r}")
        for p in parents:
            if p not in self.nodes:
                raise InvalidModel(f"node {name!r} has undeclared parent {p!r}")
        values = tuple(values)
        parent_cards = tuple(len(self.nodes[p].values) for p in parents)
        shape = parent_cards + (len(values),)
        table = np.asarray(cpt, dtype=float)
        if table.ndim == 2 and table.shape != shape and table.size == math.prod(shape):
            # rows = parent combinations in C-order, columns = own values
            table = table.reshape(shape)
        if table.shape != shape:
            raise InvalidModel(
                f"node {name!r}: CPT shape {table.shape} incompatible with {shape}"
            )
        node = NetNode(name, values, tuple(parents), table)
        self.nodes[name] = node
        return node

    # -- lookups ---------------------------------------------------------------

    def node(self, name: str) -> NetNode:
        try:
            return self.nodes[name]
        except KeyError:
            raise UnknownReference(f"no network node named {name!r}") from None

    def values(self, name: str) -> tuple[str, ...]:
        return self.node(name).values

    def value_index(self, name: str, value: str) -> int:
        node = self.node(name)
        try:
            return node.values.index(value)
        except ValueError:
            raise BadValue(
                f"{value!r} is not a value of {name!r} (range {node.values})"
            ) from None

    def factor(self, name: str) -> Factor:
        node = self.node(name)
        return Factor(node.parents + (name,), node.cpt)

    def ancestors(self, names: Iterable[str]) -> set[str]:
        seen: set[str] = set()
        stack = list(names)
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(self.node(n).parents)
        return seen

    def topological(self) -> list[str]:
        order: list[str] = []
        state: dict[str, int] = {}

        def visit(n: str) -> None:
            if state.get(n) == 2:
                return
            if state.get(n) == 1:
                raise InvalidModel(f"network cycle through {n!r}")
            state[n] = 1
            for p in self.nodes[n].parents:
                visit(p)
            state[n] = 2
            order.append(n)

        for n in self.nodes:
            visit(n)
        return order

    def to_graph_dict(self) -> dict:
        """JSON-ready dump: nodes with ranges, parents, flattened CPTs."""
        out = []
        for n in self.topological():
            node = self.nodes[n]
            rows = int(np.prod(node.cpt.shape[:-1])) if node.parents else 1
            out.append(
                {
                    "name": node.name,
                    "values": list(node.values),
                    "parents": list(node.parents),
                    "cpt": node.cpt.reshape(rows, len(node.values)).tolist(),
                }
            )
        return {"nodes": out}


# --- variable elimination -------------------------------------------------------


def _fill_count(adj: dict[str, set[str]], v: str) -> int:
    nbrs = [u for u in adj[v] if u != v]
    return sum(
        1 for a, b in itertools.combinations(nbrs, 2) if b not in adj[a]
    )


def _min_fill_order(
    scopes: list[tuple[str, ...]], elim: set[str]
) -> list[str]:
    """Min-fill over the interaction graph; lexicographic tie-break.

    Fill counts are cached and recomputed only for vertices whose
    neighborhood an elimination touched, which keeps large sparse networks
    (grounded models run to thousands of variables) out of quadratic
    territory.
    """
    adj: dict[str, set[str]] = {}
    for scope in scopes:
        for v in scope:
            adj.setdefault(v, set())
        for a, b in itertools.combinations(scope, 2):
            adj[a].add(b)
            adj[b].add(a)
    for v in elim:
        adj.setdefault(v, set())

    fill: dict[str, int] = {v: _fill_count(adj, v) for v in elim}
    order: list[str] = []
    remaining = set(elim)
    while remaining:
        best = min(remaining, key=lambda v: (fill[v], v))
        nbrs = [u for u in adj[best] if u != best]
        for a, b in itertools.combinations(nbrs, 2):
            adj[a].add(b)
            adj[b].add(a)
        for u in nbrs:
            adj[u].discard(best)
        del adj[best]
        remaining.discard(best)
        order.append(best)
        # eliminating `best` only perturbs fill counts near its neighborhood
        dirty = set(nbrs)
        for u in nbrs:
            dirty.update(adj[u])
        for v in dirty & remaining:
            fill[v] = _fill_count(adj, v)
    return order


@dataclass
class _Elimination:
    result: Factor
    log_scale: float
    max_clique: int = 0


def _eliminate(factors: list[Factor], elim_vars: list[str]) -> _Elimination:
    log_scale = 0.0
    max_clique = max((len(f.scope) for f in factors), default=0)
    factors = list(factors)
    for v in elim_vars:
        touching = [f for f in factors if v in f.scope]
        if not touching:
            continue
        rest = [f for f in factors if v not in f.scope]
        prod = touching[0]
        for f in touching[1:]:
            prod = prod.multiply(f)
        max_clique = max(max_clique, len(prod.scope))
        prod = prod.marginalize(v)
        m = float(prod.table.max(initial=0.0))
        if m > 0.0 and not (RESCALE_LO < m < RESCALE_HI):
            prod = Factor(prod.scope, prod.table / m)
            log_scale += math.log(m)
        factors = rest + [prod]

    result = Factor((), np.asarray(1.0).reshape(()))
    for f in factors:
        result = result.multiply(f)
    max_clique = max(max_clique, len(result.scope))
    return _Elimination(result, log_scale, max_clique)


def _check_evidence(net: DiscreteNetwork, evidence: Mapping[str, str]) -> dict[str, int]:
    return {var: net.value_index(var, val) for var, val in evidence.items()}


def query(
    net: DiscreteNetwork,
    targets: Sequence[str],
    evidence: Optional[Mapping[str, str]] = None,
) -> Factor:
    """Posterior joint over `targets` given hard evidence; axes follow the
    order targets were given in."""
    evidence = dict(evidence or {})
    ev_idx = _check_evidence(net, evidence)
    targets = list(targets)
    if not targets:
        raise BadValue("query needs at least one target variable")
    for t in targets:
        net.node(t)

    relevant = net.ancestors(set(targets) | set(evidence))
    factors: list[Factor] = []
    for n in relevant:
        f = net.factor(n)
        for var, idx in ev_idx.items():
            if var in f.scope:
                f = f.reduce(var, idx)
        factors.append(f)
    # targets that are themselves observed stay as indicator columns
    for t in targets:
        if t in ev_idx:
            ind = np.zeros(len(net.values(t)))
            ind[ev_idx[t]] = 1.0
            factors.append(Factor((t,), ind))

    elim = sorted(relevant - set(targets) - set(evidence))
    order = _min_fill_order([f.scope for f in factors], set(elim))
    run = _eliminate(factors, order)

    joint = run.result
    mass = joint.table.sum()
    if mass <= 0.0 or math.log(max(mass, 5e-324)) + run.log_scale < math.log(MASS_FLOOR):
        raise ImpossibleEvidence(
            f"evidence {evidence!r} has no probability mass"
        )
    return Factor(joint.scope, joint.table / mass).transpose(targets)


def conditional_query(
    net: DiscreteNetwork,
    target: str,
    given: Sequence[str],
    evidence: Optional[Mapping[str, str]] = None,
) -> np.ndarray:
    """P(target | given combination, evidence) as a dense table.

    Rows iterate the `given` ranges in C-order; impossible rows are NaN.
    Deliberately a literal per-combination loop: slow and obviously correct,
    which is what its callers (CPD construction) need.
    """
    evidence = dict(evidence or {})
    given = list(given)
    doms = [net.values(g) for g in given]
    rows = int(np.prod([len(d) for d in doms])) if doms else 1
    out = np.full((rows, len(net.values(target))), np.nan)
    for row, combo in enumerate(itertools.product(*doms)):
        ev = dict(evidence)
        ev.update(zip(given, combo))
        try:
            out[row] = query(net, [target], ev).table
        except ImpossibleEvidence:
            pass
    return out


def joint_enumerate(
    net: DiscreteNetwork,
    targets: Sequence[str],
    evidence: Optional[Mapping[str, str]] = None,
) -> Factor:
    """Brute-force posterior by materializing the full joint. Oracle-grade;
    refuses networks beyond ENUM_STATE_CAP states."""
    evidence = dict(evidence or {})
    ev_idx = _check_evidence(net, evidence)
    for t in targets:
        net.node(t)
    scope = tuple(net.topological())
    states = 1
    for n in scope:
        states *= len(net.values(n))
        if states > ENUM_STATE_CAP:
            raise StateSpaceTooLarge(
                f"joint enumeration needs > {ENUM_STATE_CAP} states"
            )
    table = np.ones((1,) * len(scope))
    joint = Factor(scope, table)
    for n in scope:
        joint = Factor(scope, joint.table * net.factor(n)._broadcast_to(scope))
    for var, idx in ev_idx.items():
        keep = np.zeros(len(net.values(var)))
        keep[idx] = 1.0
        joint = Factor(scope, joint.table * Factor((var,), keep)._broadcast_to(scope))
    for var in scope:
        if var not in targets:
            joint = joint.marginalize(var)
    return joint.normalized().transpose(list(targets))


@dataclass(frozen=True)
class TriangulationStats:
    max_clique: int      # node count of the largest clique met during elimination
    total_cells: int     # sum of clique state-space sizes


def triangulation_stats(net: DiscreteNetwork) -> TriangulationStats:
    """Moralize, then simulate min-fill elimination of every variable,
    recording the cliques formed. A cheap structural cost report."""
    card = {n: len(net.values(n)) for n in net.nodes}
    adj: dict[str, set[str]] = {n: set() for n in net.nodes}
    for n, node in net.nodes.items():
        fam = node.parents + (n,)
        for a, b in itertools.combinations(fam, 2):
            adj[a].add(b)
            adj[b].add(a)

    max_clique = 1 if net.nodes else 0
    total_cells = 0
    remaining = set(net.nodes)
    while remaining:
        best, best_fill = None, -1
        for v in sorted(remaining):
            nbrs = [u for u in adj[v] if u in remaining]
            fill = sum(
                1 for a, b in itertools.combinations(nbrs, 2) if b not in adj[a]
            )
            if best is None or fill < best_fill:
                best, best_fill = v, fill
        nbrs = [u for u in adj[best] if u in remaining]
        clique = [best] + nbrs
        max_clique = max(max_clique, len(clique))
        cells = 1
        for u in clique:
            cells *= card[u]
        total_cells += cells
        for a, b in itertools.combinations(nbrs, 2):
            adj[a].add(b)
            adj[b].add(a)
        remaining.discard(best)
    return TriangulationStats(max_clique=max_clique, total_cells=total_cells)


def dump_network(net: DiscreteNetwork) -> str:
    """Textual dump of a network (node list + CPT rows), stable for diffing.

    Nodes appear in topological order; rows walk parent combinations in
    C-order (last parent fastest), matching the in-memory CPT layout.
    """
    lines: list[str] = []
    for name in net.topological():
        node = net.nodes[name]
        lines.append(f"node {name}")
        lines.append("  values " + " ".join(node.values))
        if node.parents:
            lines.append("  parents " + " ".join(node.parents))
        rows = int(np.prod(node.cpt.shape[:-1], dtype=np.int64)) if node.parents else 1
        for row in node.cpt.reshape(rows, len(node.values)):
            lines.append("  row " + " ".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"
