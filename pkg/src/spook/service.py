"""Session layer: knowledge-base store, observation sessions, HTTP endpoints.

A session binds a loaded knowledge base to one inference backend and
accumulates observations.  Observing records evidence without running
inference; queries run the selected backend over the session's evidence
and append to a history of (query, posterior, wall time) entries.

The HTTP surface is a thin JSON mapping over the same session objects
the REPL drives directly.  All failures surface as
``{"code": ..., "message": ..., "location"?: ...}`` bodies.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Optional

from .errors import (
    BadValue,
    ContradictoryEvidence,
    SpookError,
    UnknownInstance,
    UnknownKB,
    UnknownReference,
)
from .kbmc import answer_query_kbmc, ground
from .lang import QueryExpr, parse_kb, parse_ref
from .model import Chain, KnowledgeBase, effective_model, ensure_valid, resolve_chain
from .structured import StructuredEngine, answer_query_structured

BACKENDS = ("structured", "kbmc")


@dataclass
class Observation:
    instance: str
    chain: Chain
    value: str

    def as_dict(self) -> dict:
        return {"instance": self.instance, "chain": str(self.chain), "value": self.value}


@dataclass
class HistoryEntry:
    query: str
    posterior: dict[str, float]
    seconds: float

    def as_dict(self) -> dict:
        return {"query": self.query, "posterior": self.posterior, "seconds": self.seconds}


@dataclass
class Session:
    """One observation/query dialogue against a fixed KB and backend."""

    id: str
    kb_id: str
    kb: KnowledgeBase
    backend: str
    evidence: list[Observation] = field(default_factory=list)
    history: list[HistoryEntry] = field(default_factory=list)
    # lazily built backend state, kept for the life of the session so the
    # structured subquery cache carries across queries
    _engine: Optional[StructuredEngine] = None
    _ground: Optional[tuple] = None

    def observe(self, instance: str, chain: Chain, value: str) -> Observation:
        if instance not in self.kb.instances:
            raise UnknownInstance(f"unknown instance {instance!r}")
        res = resolve_chain(self.kb, instance, chain)
        if value not in res.values:
            raise BadValue(
                f"{instance}.{chain} takes values {{{', '.join(res.values)}}}, "
                f"not {value!r}"
            )
        for obs in self.evidence:
            if obs.instance == instance and obs.chain == chain:
                if obs.value == value:
                    return obs  # idempotent re-observe
                raise ContradictoryEvidence(
                    f"{instance}.{chain} already observed as {obs.value!r}; "
                    f"retract it before observing {value!r}"
                )
        obs = Observation(instance, chain, value)
        self.evidence.append(obs)
        return obs

    def retract(self, instance: str, chain: Chain, value: Optional[str] = None) -> Observation:
        for i in range(len(self.evidence) - 1, -1, -1):
            obs = self.evidence[i]
            if obs.instance == instance and obs.chain == chain:
                if value is not None and obs.value != value:
                    continue
                del self.evidence[i]
                return obs
        raise UnknownReference(f"no observation of {instance}.{chain} to retract")

    def query_expr(self, instance: str, chain: Chain) -> QueryExpr:
        ev = tuple((o.instance, o.chain, o.value) for o in self.evidence)
        return QueryExpr(target=(instance, chain), evidence=ev)

    def query_posterior(self, instance: str, chain: Chain) -> HistoryEntry:
        expr = self.query_expr(instance, chain)
        t0 = time.perf_counter()
        if self.backend == "kbmc":
            if self._ground is None:
                self._ground = ground(self.kb)
            ans = answer_query_kbmc(self.kb, expr, prebuilt=self._ground)
        else:
            if self._engine is None:
                self._engine = StructuredEngine(self.kb)
            ans = answer_query_structured(self.kb, expr, engine=self._engine)
        entry = HistoryEntry(str(expr), ans.as_dict(), time.perf_counter() - t0)
        self.history.append(entry)
        return entry

    def stats(self) -> dict:
        out: dict = {"backend": self.backend, "observations": len(self.evidence),
                     "queries": len(self.history)}
        if self.backend == "structured" and self._engine is not None:
            hits, misses, entries = self._engine.cache_stats()
            out.update(cache_hits=hits, cache_misses=misses, cache_entries=entries)
        if self.backend == "kbmc" and self._ground is not None:
            net, gmap = self._ground
            out.update(nodes=len(net.nodes), objects=len(gmap.objects))
        return out


def model_graph(kb: KnowledgeBase) -> dict:
    """Deterministic class/instance topology document for display layers.

    Nodes are classes and instances; edges are subclass links, instance-of
    links, and complex attributes (annotated with bound and inverse).
    """
    nodes = []
    for name in sorted(kb.classes):
        nodes.append({"name": name, "kind": "class",
                      "extends": kb.classes[name].superclass})
    for name in sorted(kb.instances):
        nodes.append({"name": name, "kind": "instance",
                      "class": kb.class_of(name)})
    edges = []
    for name in sorted(kb.classes):
        cls = kb.classes[name]
        if cls.superclass is not None:
            edges.append({"from": name, "to": cls.superclass, "kind": "extends"})
    for name in sorted(kb.instances):
        edges.append({"from": name, "to": kb.class_of(name), "kind": "instance-of"})
    for name in sorted(kb.classes):
        model = effective_model(kb, name)
        for attr in sorted(model):
            decl = model[attr]
            if decl.kind != "complex":
                continue
            edges.append({
                "from": name, "to": decl.type, "kind": "complex",
                "attribute": attr,
                "multi": decl.multi, "bound": decl.bound,
                "inverse": decl.inverse,
            })
    bindings = kb.bindings()
    for (inst, attr) in sorted(bindings):
        for filler in bindings[(inst, attr)]:
            edges.append({"from": inst, "to": filler, "kind": "binding",
                          "attribute": attr})
    return {"nodes": nodes, "edges": edges}


class ServiceState:
    """In-memory store behind both the HTTP app and the REPL."""

    def __init__(self) -> None:
        self.kbs: dict[str, KnowledgeBase] = {}
        self.sources: dict[str, str] = {}
        self.sessions: dict[str, Session] = {}
        self._kb_seq = itertools.count(1)
        self._sess_seq = itertools.count(1)

    def load_kb(self, source: str, name: Optional[str] = None,
                origin: str = "<kb>") -> str:
        kb = parse_kb(source, source=origin)
        ensure_valid(kb)
        kb_id = name or f"kb-{next(self._kb_seq)}"
        self.kbs[kb_id] = kb
        self.sources[kb_id] = source
        return kb_id

    def get_kb(self, kb_id: str) -> KnowledgeBase:
        if kb_id not in self.kbs:
            raise UnknownKB(f"no knowledge base named {kb_id!r}")
        return self.kbs[kb_id]

    def create_session(self, kb_id: str, backend: str = "structured") -> Session:
        kb = self.get_kb(kb_id)
        if backend not in BACKENDS:
            raise BadValue(f"backend must be one of {BACKENDS}, not {backend!r}")
        sess = Session(id=f"s-{next(self._sess_seq)}", kb_id=kb_id, kb=kb,
                       backend=backend)
        self.sessions[sess.id] = sess
        return sess

    def get_session(self, session_id: str) -> Session:
        if session_id not in self.sessions:
            raise UnknownKB(f"no session named {session_id!r}")
        return self.sessions[session_id]


_NOT_FOUND = (UnknownKB, UnknownInstance, UnknownReference)


def error_body(exc: SpookError) -> dict:
    body = {"code": exc.code, "message": str(exc)}
    loc = getattr(exc, "location", None)
    if loc is not None:
        body["location"] = {"source": loc.source, "line": loc.line,
                            "column": loc.column}
    return body


try:  # pydantic only matters when the HTTP app is built
    from pydantic import BaseModel
except ImportError:  # pragma: no cover
    BaseModel = object  # type: ignore[misc,assignment]


class KbIn(BaseModel):
    source: str
    name: Optional[str] = None


class SessionIn(BaseModel):
    kb: str
    backend: str = "structured"


class ObserveIn(BaseModel):
    instance: str
    chain: str
    value: str


class RetractIn(BaseModel):
    instance: str
    chain: str
    value: Optional[str] = None


class QueryIn(BaseModel):
    target: str


def create_app(state: Optional[ServiceState] = None):
    """Builds the FastAPI application over a (possibly shared) store."""
    from fastapi import FastAPI, Request
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse

    state = state or ServiceState()
    app = FastAPI(title="spook", version="0.1.0")
    app.state.store = state
    # the browser client is served as a static page from wherever, so the
    # API answers cross-origin requests; there are no credentials to leak
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(SpookError)
    async def _spook_error(request: Request, exc: SpookError):
        status = 404 if isinstance(exc, _NOT_FOUND) else 400
        return JSONResponse(status_code=status, content=error_body(exc))

    @app.post("/kb")
    def load_kb(body: KbIn):
        kb_id = state.load_kb(body.source, name=body.name)
        kb = state.kbs[kb_id]
        return {"id": kb_id, "classes": len(kb.classes),
                "instances": len(kb.instances)}

    @app.get("/kb/{kb_id}/graph")
    def kb_graph(kb_id: str):
        return model_graph(state.get_kb(kb_id))

    @app.get("/kb/{kb_id}/resolve")
    def kb_resolve(kb_id: str, instance: str, chain: str):
        # value domain for an (instance, chain) pair; display layers use
        # this to offer legal values instead of free-typing them
        kb = state.get_kb(kb_id)
        if instance not in kb.instances:
            raise UnknownInstance(f"unknown instance {instance!r}")
        res = resolve_chain(kb, instance, Chain.parse(chain))
        return {"instance": instance, "chain": str(res.chain),
                "kind": res.terminal_kind, "values": list(res.values)}

    @app.post("/session")
    def create_session(body: SessionIn):
        sess = state.create_session(body.kb, body.backend)
        return {"id": sess.id, "kb": sess.kb_id, "backend": sess.backend}

    @app.get("/session/{session_id}/evidence")
    def evidence(session_id: str):
        sess = state.get_session(session_id)
        return {"evidence": [o.as_dict() for o in sess.evidence]}

    @app.post("/session/{session_id}/observe")
    def observe(session_id: str, body: ObserveIn):
        sess = state.get_session(session_id)
        sess.observe(body.instance, Chain.parse(body.chain), body.value)
        return {"evidence": [o.as_dict() for o in sess.evidence]}

    @app.delete("/session/{session_id}/observe")
    def retract(session_id: str, body: RetractIn):
        sess = state.get_session(session_id)
        gone = sess.retract(body.instance, Chain.parse(body.chain), body.value)
        return {"retracted": gone.as_dict(),
                "evidence": [o.as_dict() for o in sess.evidence]}

    @app.post("/session/{session_id}/query")
    def query(session_id: str, body: QueryIn):
        sess = state.get_session(session_id)
        inst, chain = parse_ref(body.target)
        entry = sess.query_posterior(inst, chain)
        return {**entry.as_dict(), "backend": sess.backend, "stats": sess.stats()}

    @app.get("/session/{session_id}/history")
    def history(session_id: str):
        sess = state.get_session(session_id)
        return {"entries": [e.as_dict() for e in sess.history]}

    return app
