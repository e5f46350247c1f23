"""Command-line front end.

Subcommands:
  check  parse + validate KB files, diagnostics on stderr
  fmt    canonical formatting of a KB file
  query  answer one conditional query against a KB file
  bench  run the scaling benchmark matrix, CSV out
  serve  run the HTTP session service
  repl   interactive session on stdin/stdout
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import Optional, Sequence

from .bench import BenchConfig, run_matrix, write_csv
from .bn import dump_network, triangulation_stats
from .errors import SpookError
from .kbmc import answer_query_kbmc, ground
from .lang import parse_kb, parse_query, serialize_kb
from .model import KnowledgeBase, ensure_valid, validate_kb
from .structured import StructuredEngine, answer_query_structured


def _diag(exc: SpookError, fallback: str) -> str:
    if exc.location is not None:
        loc = exc.location
        return f"{loc.source}:{loc.line}:{loc.column}: {exc.message}"
    return f"{fallback}: {exc.message}"


def _load_kb(path: str) -> KnowledgeBase:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    kb = parse_kb(text, source=path)
    ensure_valid(kb)
    return kb


def _cmd_check(args: argparse.Namespace) -> int:
    failed = False
    for path in args.files:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            print(f"{path}: {exc.strerror or exc}", file=sys.stderr)
            failed = True
            continue
        try:
            kb = parse_kb(text, source=path)
        except SpookError as exc:
            print(_diag(exc, path), file=sys.stderr)
            failed = True
            continue
        report = validate_kb(kb)
        for diag in report.diagnostics:
            # semantic diagnostics name the declaration, not a source span
            print(f"{path}: {diag}", file=sys.stderr)
        failed = failed or not report.ok
    return 1 if failed else 0


def _cmd_fmt(args: argparse.Namespace) -> int:
    with open(args.file, "r", encoding="utf-8") as fh:
        text = fh.read()
    formatted = serialize_kb(parse_kb(text, source=args.file))
    if args.write:
        if formatted != text:
            with open(args.file, "w", encoding="utf-8") as fh:
                fh.write(formatted)
    else:
        sys.stdout.write(formatted)
    return 0


def _cmd_query(args: argparse.Namespace) -> int:
    kb = _load_kb(args.kb)
    expr = parse_query(args.query)
    if args.backend == "kbmc":
        net, gmap = ground(kb)
        answer = answer_query_kbmc(kb, expr, prebuilt=(net, gmap))
        if args.dump_bn:
            with open(args.dump_bn, "w", encoding="utf-8") as fh:
                fh.write(dump_network(net))
        stats_lines = [
            f"# grounded nodes={len(net.nodes)} objects={len(gmap.objects)}",
            f"# max clique: flat={triangulation_stats(net).max_clique}",
        ]
    else:
        engine = StructuredEngine(
            kb, reuse=not args.no_reuse, naive_quantifiers=args.naive_quantifiers
        )
        answer = answer_query_structured(kb, expr, engine=engine)
        if args.dump_bn:
            top = engine.top_network
            if top is not None:
                with open(args.dump_bn, "w", encoding="utf-8") as fh:
                    fh.write(dump_network(top))
        hits, misses, entries = engine.cache_stats()
        stats_lines = [
            f"# cache hits={hits} misses={misses} entries={entries}",
            f"# max clique: local={engine.local_max_clique}"
            f" top={engine.top_max_clique}",
        ]
    for value, p in answer.as_dict().items():
        print(f"{value} {p:.12g}")
    if args.stats:
        for line in stats_lines:
            print(line)
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f.name for f in dataclasses.fields(BenchConfig)}
        unknown = set(raw) - known
        if unknown:
            raise SpookError(f"unknown bench config keys: {sorted(unknown)}")
        for key in ("units", "backends"):
            if key in raw:
                raw[key] = tuple(raw[key])
        cfg = BenchConfig(**raw)
    else:
        cfg = BenchConfig()
    rows = run_matrix(cfg, parallel=args.parallel)
    write_csv(rows, args.out)
    print(f"{len(rows)} cells -> {args.out}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return 0


def _cmd_repl(args: argparse.Namespace) -> int:
    from .repl import main as repl_main

    repl_main(args.kb)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spook",
        description="Probabilistic object-oriented knowledge bases: "
        "validate, query, benchmark, serve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="parse and validate KB files")
    p.add_argument("files", nargs="+", metavar="FILE")
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("fmt", help="canonical formatting of a KB file")
    p.add_argument("file", metavar="FILE")
    p.add_argument("--write", action="store_true",
                   help="rewrite the file in place instead of printing")
    p.set_defaults(func=_cmd_fmt)

    p = sub.add_parser("query", help="answer a conditional query")
    p.add_argument("kb", metavar="KB")
    p.add_argument("query", metavar="QUERY",
                   help='e.g. \'P(battery-a.hit | battalion-charlie.under-fire = heavy)\'')
    p.add_argument("--backend", choices=("structured", "kbmc"),
                   default="structured")
    p.add_argument("--no-reuse", action="store_true",
                   help="disable the structured subquery cache")
    p.add_argument("--naive-quantifiers", action="store_true",
                   help="expand quantifier counts as explicit joint families")
    p.add_argument("--stats", action="store_true",
                   help="print cache counters and max clique sizes")
    p.add_argument("--dump-bn", metavar="PATH",
                   help="write the constructed network as a textual dump")
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("bench", help="run the scaling benchmark matrix")
    p.add_argument("--config", metavar="FILE",
                   help="JSON file with BenchConfig fields")
    p.add_argument("--out", default="results.csv", metavar="FILE")
    p.add_argument("--parallel", action="store_true",
                   help="run unit counts on a thread pool (noisier timings)")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("repl", help="interactive session")
    p.add_argument("kb", nargs="?", default=None, metavar="KB",
                   help="KB file to load on startup")
    p.set_defaults(func=_cmd_repl)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpookError as exc:
        print(_diag(exc, "error"), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
