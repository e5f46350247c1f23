"""Probabilistic object-oriented knowledge bases with two exact backends."""

from .errors import SpookError
from .model import (
    AttributeAssertion,
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
    build_dependency_graph,
    effective_model,
    resolve_chain,
    validate_kb,
)
from .lang import parse_kb, parse_query, serialize_kb, QueryExpr
from .kbmc import QueryAnswer, answer_query_kbmc, ground
from .structured import StructuredEngine, answer_query_structured

__all__ = [
    "AttributeAssertion",
    "Chain",
    "ClassModel",
    "ComplexAttr",
    "InstanceModel",
    "KnowledgeBase",
    "NumberAttr",
    "QuantifierAttr",
    "QueryAnswer",
    "QueryExpr",
    "RefEntry",
    "ReferenceAttr",
    "SimpleAttr",
    "SpookError",
    "StructuredEngine",
    "answer_query_kbmc",
    "answer_query_structured",
    "build_dependency_graph",
    "effective_model",
    "ground",
    "parse_kb",
    "parse_query",
    "resolve_chain",
    "serialize_kb",
    "validate_kb",
]
