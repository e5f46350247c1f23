"""Battlespace model generator and scaling benchmark.

The generated model is a battalion commanding `b` batteries, each holding one
group of every kind (`groups` kinds, structurally uniform, independently
parameterized), each group holding up to `u` units.  Suppression flows down
(environment -> battalion -> battery -> unit); damage summaries flow back up
through quantifiers.  Group membership carries number uncertainty and the
environment's location carries reference uncertainty, so every structural
feature of the engine is on the clock.

`run_matrix` times backend/mode cells end-to-end (model build + one probe
query) and reports medians, VE clique sizes, and subquery-cache counters as
CSV rows.  A cell whose first repetition exceeds the budget stops early and
reports that single measurement with `timeout=True` (the CSV keeps the
numeric seconds; the budget lives in the config, so consumers can re-derive
the flag).
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bn import triangulation_stats
from .errors import SpookError
from .kbmc import answer_query_kbmc, ground
from .lang import QueryExpr, parse_kb
from .model import Chain, KnowledgeBase
from .structured import StructuredEngine, answer_query_structured

CSV_HEADER = ("backend", "reuse", "qmode", "units",
              "seconds", "max_clique", "cache_hits", "cache_misses")

AGREEMENT_TOL = 1e-6


def _fmt(x: float) -> str:
    return repr(float(x))


def generate_battalion_kb(
    units: int,
    batteries: int = 4,
    groups: int = 11,
    named_batteries: bool = False,
    seed: int = 7,
) -> str:
    """Deterministic KB text for a battalion model.

    Same arguments -> byte-identical text.  CPD entries are seeded draws
    bounded away from 0 and 1; only structural tables (counts, gates,
    multiplexers, built later by the engines) are deterministic.

    `named_batteries=False` leaves the batteries generic, which routes the
    battalion's battery summary through a class-level subquery instead of
    per-instance top nodes.
    """
    if units < 1 or batteries < 1 or groups < 1:
        raise SpookError("units, batteries, and groups must all be >= 1")
    rng = np.random.default_rng([seed, units, batteries, groups])

    def cpd(rows: int, cols: int) -> list[str]:
        t = rng.random((rows, cols)) + 0.3
        t /= t.sum(axis=1, keepdims=True)
        return [" ".join(_fmt(x) for x in row) for row in t]

    def cpd_block(rows: int, cols: int, indent: str) -> str:
        body = (" ;\n" + indent + "      ").join(cpd(rows, cols))
        return f"cpd {{ {body} ; }}" if rows == 1 else (
            "cpd {\n" + indent + "      " + body + " ;\n" + indent + "    }")

    u, b, g = units, batteries, groups
    out = io.StringIO()
    w = out.write
    w(f"# battlespace model: {b} batteries x {g} group kinds x "
      f"up to {u} units per group\n\n")
    w("class Military-Unit { }\n\n")
    w("class Weather {\n"
      f"  simple condition {{ range clear, storm ; {cpd_block(1, 2, '')} }}\n"
      "}\n\n")
    w("class Location {\n"
      f"  simple cover {{ range thin, solid ; {cpd_block(1, 2, '')} }}\n"
      "  simple concealment {\n"
      "    range poor, good ;\n"
      "    parents cover ;\n"
      f"    {cpd_block(2, 2, '  ')}\n"
      "  }\n"
      "}\n\n")
    # terrain kinds differ only in how much cover they offer
    for terrain in ("Mountain-Location", "Desert-Location"):
        w(f"class {terrain} extends Location {{\n"
          f"  simple cover {{ range thin, solid ; {cpd_block(1, 2, '')} }}\n"
          "}\n\n")
    w("class Environment {\n"
      "  complex has-weather : Weather ;\n"
      "  complex at-location : Location ;\n"
      "  reference which-location over at-location {\n"
      "    entries class Mountain-Location, class Desert-Location ;\n"
      f"    {cpd_block(1, 2, '  ')}\n"
      "  }\n"
      "  simple visibility {\n"
      "    range low, high ;\n"
      "    parents has-weather.condition, at-location.concealment ;\n"
      f"    {cpd_block(4, 2, '  ')}\n"
      "  }\n"
      "}\n\n")
    w("class Battalion extends Military-Unit {\n"
      "  complex in-environment : Environment ;\n"
      f"  complex has-battery : Battery multi({b}) inverse in-battalion ;\n"
      "  simple under-fire {\n"
      "    range none, heavy ;\n"
      "    parents in-environment.visibility ;\n"
      f"    {cpd_block(2, 2, '  ')}\n"
      "  }\n"
      "  quantifier batteries-operational = count(has-battery.operational == yes) ;\n"
      "  simple current-activity {\n"
      "    range advance, hold, retreat ;\n"
      "    parents batteries-operational ;\n"
      f"    {cpd_block(b + 1, 3, '  ')}\n"
      "  }\n"
      "}\n\n")

    # battery-level damage summaries roll the group kinds up through a
    # shallow balanced tree; no battery-side family couples more than three
    # summaries at once, so its CPTs stay small however many kinds there are
    kinds = list(range(1, g + 1))
    tier_pools = [
        ["fire-damage", "support-damage", "aux-damage", "reserve-damage",
         "screen-damage", "train-damage"],
        ["forward-damage", "rear-damage", "depth-damage"],
    ]
    layer = [f"has-group-{k}.crippled" for k in kinds]
    aggregates: list[tuple[str, list[str]]] = []
    width = 3
    for pool in tier_pools:
        if len(layer) <= width:
            break
        step = -(-len(layer) // -(-len(layer) // width))
        chunks = [layer[i:i + step] for i in range(0, len(layer), step)]
        names = pool[:len(chunks)]
        aggregates.extend(zip(names, chunks))
        layer = names
        width = 2
    w("class Battery extends Military-Unit {\n"
      "  complex in-battalion : Battalion inverse has-battery ;\n")
    for k in kinds:
        w(f"  complex has-group-{k} : Group-{k} inverse in-battery ;\n")
    w("  simple hit {\n"
      "    range no, yes ;\n"
      "    parents in-battalion.under-fire ;\n"
      f"    {cpd_block(2, 2, '  ')}\n"
      "  }\n")
    for name, chunk in aggregates:
        w(f"  simple {name} {{\n"
          "    range low, high ;\n"
          f"    parents {', '.join(chunk)} ;\n"
          f"    {cpd_block(2 ** len(chunk), 2, '  ')}\n"
          "  }\n")
    w("  simple operational {\n"
      "    range no, yes ;\n"
      f"    parents {', '.join(layer)} ;\n"
      f"    {cpd_block(2 ** len(layer), 2, '  ')}\n"
      "  }\n"
      "}\n\n")

    # every group kind narrows the same base, so each one asks for the SAME
    # unit subquery: with reuse the solver prices the unit model once,
    # without it every kind pays again
    w("class Group-Base extends Military-Unit {\n"
      "  complex in-battery : Battery ;\n"
      f"  complex has-unit : Unit multi({u}) inverse in-group ;\n"
      f"  number unit-count over has-unit {{ {cpd_block(1, u + 1, '')} }}\n"
      "  quantifier units-damaged = count(has-unit.status == destroyed) ;\n"
      f"  simple supply {{ range short, stocked ; {cpd_block(1, 2, '')} }}\n"
      "  simple logistics {\n"
      "    range strained, solid ;\n"
      "    parents in-battery.in-battalion.under-fire, supply ;\n"
      f"    {cpd_block(4, 2, '  ')}\n"
      "  }\n"
      "  simple crippled {\n"
      "    range no, yes ;\n"
      "    parents units-damaged, logistics ;\n"
      f"    {cpd_block((u + 1) * 2, 2, '  ')}\n"
      "  }\n"
      "}\n\n")
    for k in kinds:
        w(f"class Group-{k} extends Group-Base {{\n"
          f"  complex in-battery : Battery inverse has-group-{k} ;\n"
          f"  simple supply {{ range short, stocked ; {cpd_block(1, 2, '')} }}\n"
          "  simple logistics {\n"
          "    range strained, solid ;\n"
          "    parents in-battery.in-battalion.under-fire, supply ;\n"
          f"    {cpd_block(4, 2, '  ')}\n"
          "  }\n"
          "  simple crippled {\n"
          "    range no, yes ;\n"
          "    parents units-damaged, logistics ;\n"
          f"    {cpd_block((u + 1) * 2, 2, '  ')}\n"
          "  }\n"
          "}\n\n")
    # each unit hides at its own (reference-uncertain) location; location
    # models are shared classes, so the structured solver prices them once
    # while grounding pays per unit
    w("class Unit extends Military-Unit {\n"
      "  complex in-group : Group-Base inverse has-unit ;\n"
      "  complex at-location : Location ;\n"
      "  reference hidden-at over at-location {\n"
      "    entries class Mountain-Location, class Desert-Location ;\n"
      f"    {cpd_block(1, 2, '  ')}\n"
      "  }\n"
      f"  simple fuel {{ range dry, low, full ; {cpd_block(1, 3, '')} }}\n"
      "  simple crew-ready {\n"
      "    range no, yes ;\n"
      "    parents fuel, in-group.supply ;\n"
      f"    {cpd_block(6, 2, '  ')}\n"
      "  }\n"
      "  simple targeting {\n"
      "    range blind, locked ;\n"
      "    parents at-location.concealment ;\n"
      f"    {cpd_block(2, 2, '  ')}\n"
      "  }\n"
      "  simple readiness {\n"
      "    range low, high ;\n"
      "    parents crew-ready, targeting ;\n"
      f"    {cpd_block(4, 2, '  ')}\n"
      "  }\n"
      "  simple status {\n"
      "    range ok, degraded, destroyed ;\n"
      "    parents in-group.in-battery.hit, readiness ;\n"
      f"    {cpd_block(4, 3, '  ')}\n"
      "  }\n"
      "}\n\n")

    w("instance env-1 : Environment { }\n")
    w("instance battalion-1 : Battalion { }\n")
    if named_batteries:
        for i in range(1, b + 1):
            w(f"instance battery-{i} : Battery {{ }}\n")
    w("\nassert battalion-1.in-environment = env-1 ;\n")
    if named_batteries:
        for i in range(1, b + 1):
            w(f"assert battalion-1.has-battery = battery-{i} ;\n")
    return out.getvalue()


def probe_query() -> QueryExpr:
    """The query every benchmark cell answers."""
    return QueryExpr(
        target=("battalion-1", Chain.parse("current-activity")),
        evidence=(("env-1", Chain.parse("visibility"), "low"),),
    )


@dataclass
class BenchConfig:
    units: tuple[int, ...] = (1, 2, 4)
    batteries: int = 4
    groups: int = 11
    backends: tuple[str, ...] = ("kbmc", "structured")
    include_naive: bool = True
    repetitions: int = 5
    budget_seconds: float = 60.0
    seed: int = 7

    def __post_init__(self) -> None:
        if not self.units:
            raise SpookError("units range must be nonempty")
        if self.repetitions < 1:
            raise SpookError("repetitions must be >= 1")


@dataclass
class CellResult:
    backend: str
    reuse: str          # yes | no | - (kbmc has no cache)
    qmode: str          # combinatoric | naive
    units: int
    seconds: float
    max_clique: int
    cache_hits: int
    cache_misses: int
    timeout: bool = False
    posterior: dict[str, float] = field(default_factory=dict)

    def csv_row(self) -> list:
        return [self.backend, self.reuse, self.qmode, self.units,
                self.seconds, self.max_clique, self.cache_hits,
                self.cache_misses]


def _timed(fn: Callable[[], None], repetitions: int,
           budget: float) -> tuple[float, bool]:
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
        if times[-1] > budget:
            return times[-1], True
    return statistics.median(times), False


def _run_kbmc_cell(kb: KnowledgeBase, expr: QueryExpr, units: int,
                   cfg: BenchConfig) -> CellResult:
    state: dict = {}

    def once() -> None:
        net, gmap = ground(kb)
        state["ans"] = answer_query_kbmc(kb, expr, prebuilt=(net, gmap))
        state["net"] = net

    seconds, timed_out = _timed(once, cfg.repetitions, cfg.budget_seconds)
    clique = triangulation_stats(state["net"]).max_clique
    return CellResult("kbmc", "-", "naive", units, seconds, clique,
                      0, 0, timed_out, state["ans"].as_dict())


def _run_structured_cell(kb: KnowledgeBase, expr: QueryExpr, units: int,
                         reuse: bool, naive: bool,
                         cfg: BenchConfig) -> CellResult:
    state: dict = {}

    def once() -> None:
        engine = StructuredEngine(kb, reuse=reuse, naive_quantifiers=naive)
        state["ans"] = answer_query_structured(kb, expr, engine=engine)
        state["engine"] = engine

    seconds, timed_out = _timed(once, cfg.repetitions, cfg.budget_seconds)
    engine = state["engine"]
    hits, misses, _ = engine.cache_stats()
    clique = max(engine.local_max_clique, engine.top_max_clique)
    return CellResult("structured", "yes" if reuse else "no",
                      "naive" if naive else "combinatoric", units, seconds,
                      clique, hits, misses, timed_out, state["ans"].as_dict())


def _run_unit_cells(cfg: BenchConfig, u: int) -> list[CellResult]:
    """All cells for one unit count, on engines isolated to this call."""
    expr = probe_query()
    text = generate_battalion_kb(u, cfg.batteries, cfg.groups, seed=cfg.seed)
    kb = parse_kb(text, source=f"battalion-u{u}")
    cell_group: list[CellResult] = []
    if "kbmc" in cfg.backends:
        cell_group.append(_run_kbmc_cell(kb, expr, u, cfg))
    if "structured" in cfg.backends:
        modes = [False, True] if cfg.include_naive else [False]
        for naive in modes:
            for reuse in (True, False):
                cell_group.append(_run_structured_cell(
                    kb, expr, u, reuse, naive, cfg))
    for cell in cell_group:
        ref = cell_group[0]
        for value, p in ref.posterior.items():
            if abs(cell.posterior[value] - p) > AGREEMENT_TOL:
                raise SpookError(
                    f"backend disagreement at u={u}: "
                    f"{cell.backend}/{cell.qmode} got "
                    f"{cell.posterior[value]:.9f} for {value!r}, "
                    f"{ref.backend} got {p:.9f}")
    return cell_group


def run_matrix(cfg: BenchConfig, parallel: bool = False) -> list[CellResult]:
    """Times every (backend, reuse, qmode) cell at every unit count.

    Raises if two completed cells disagree on the probe posterior by more
    than 1e-6: accuracy is supposed to be mode-independent, so disagreement
    is an engine bug, not a data point.

    `parallel` farms unit counts out to a thread pool (one isolated KB and
    engine set per worker); timings are noisier, clique and cache columns
    are unaffected.
    """
    if parallel:
        with ThreadPoolExecutor() as pool:
            groups = list(pool.map(lambda u: _run_unit_cells(cfg, u),
                                   cfg.units))
    else:
        groups = [_run_unit_cells(cfg, u) for u in cfg.units]
    return [cell for group in groups for cell in group]


def write_csv(rows: list[CellResult], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.csv_row())
