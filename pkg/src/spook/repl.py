"""Line-oriented front end over the session layer.

Commands mirror the HTTP endpoints one-to-one so a transcript here can be
replayed against a running server:

    load <path> [as <name>]   parse + validate a KB file, open a session
    backend <structured|kbmc> select backend for subsequently opened sessions
    observe <inst.chain> = <value>
    retract <inst.chain> [= <value>]
    query <inst.chain>
    history
    stats
    help | quit
"""

from __future__ import annotations

import shlex
from typing import Callable, Optional

from .errors import SpookError
from .lang import parse_ref
from .model import Chain
from .service import BACKENDS, ServiceState, Session


def _fmt_posterior(posterior: dict[str, float]) -> str:
    return "  ".join(f"{v}={p:.4f}" for v, p in posterior.items())


class Repl:
    def __init__(self, state: Optional[ServiceState] = None) -> None:
        self.state = state or ServiceState()
        self.backend = "structured"
        self.session: Optional[Session] = None

    def _need_session(self) -> Session:
        if self.session is None:
            raise SpookError("no knowledge base loaded; use: load <path>")
        return self.session

    def execute(self, line: str) -> str:
        """Runs one command, returning its printable output.

        Raises SystemExit on quit; SpookError surfaces as a message through
        run() but propagates here so callers can test error paths.
        """
        words = shlex.split(line, comments=True)
        if not words:
            return ""
        cmd, args = words[0], words[1:]
        handler = getattr(self, f"_cmd_{cmd.replace('-', '_')}", None)
        if handler is None:
            return f"unknown command {cmd!r}; try: help"
        return handler(args)

    # -- commands ---------------------------------------------------------

    def _cmd_help(self, args: list[str]) -> str:
        return __doc__.strip()

    def _cmd_quit(self, args: list[str]) -> str:
        raise SystemExit(0)

    _cmd_exit = _cmd_quit

    def _cmd_backend(self, args: list[str]) -> str:
        if not args:
            return f"backend: {self.backend}"
        if args[0] not in BACKENDS:
            raise SpookError(f"backend must be one of {BACKENDS}")
        self.backend = args[0]
        if self.session is not None:
            # reopen on the same KB; observations carry over
            old = self.session
            self.session = self.state.create_session(old.kb_id, self.backend)
            self.session.evidence = old.evidence
        return f"backend: {self.backend}"

    def _cmd_load(self, args: list[str]) -> str:
        if not args:
            raise SpookError("usage: load <path> [as <name>]")
        path = args[0]
        name = args[2] if len(args) == 3 and args[1] == "as" else None
        with open(path, encoding="utf-8") as fh:
            source = fh.read()
        kb_id = self.state.load_kb(source, name=name, origin=path)
        self.session = self.state.create_session(kb_id, self.backend)
        kb = self.state.kbs[kb_id]
        return (f"loaded {kb_id}: {len(kb.classes)} classes, "
                f"{len(kb.instances)} instances (session {self.session.id}, "
                f"backend {self.backend})")

    def _parse_binding(self, args: list[str], what: str) -> tuple[str, Chain, Optional[str]]:
        text = " ".join(args)
        ref, eq, value = text.partition("=")
        if not ref.strip():
            raise SpookError(f"usage: {what} <instance.chain> = <value>")
        inst, chain = parse_ref(ref.strip())
        return inst, chain, value.strip() if eq else None

    def _cmd_observe(self, args: list[str]) -> str:
        inst, chain, value = self._parse_binding(args, "observe")
        if value is None:
            raise SpookError("usage: observe <instance.chain> = <value>")
        sess = self._need_session()
        sess.observe(inst, chain, value)
        return f"observing {len(sess.evidence)}: " + "; ".join(
            f"{o.instance}.{o.chain} = {o.value}" for o in sess.evidence)

    def _cmd_retract(self, args: list[str]) -> str:
        inst, chain, value = self._parse_binding(args, "retract")
        sess = self._need_session()
        gone = sess.retract(inst, chain, value)
        return f"retracted {gone.instance}.{gone.chain} = {gone.value}"

    def _cmd_query(self, args: list[str]) -> str:
        if not args:
            raise SpookError("usage: query <instance.chain>")
        sess = self._need_session()
        inst, chain = parse_ref(" ".join(args))
        entry = sess.query_posterior(inst, chain)
        return f"{entry.query}\n  {_fmt_posterior(entry.posterior)}   [{entry.seconds:.3f}s]"

    def _cmd_history(self, args: list[str]) -> str:
        sess = self._need_session()
        if not sess.history:
            return "(no queries yet)"
        lines = []
        for i, e in enumerate(sess.history, 1):
            lines.append(f"{i:3d}. {e.query}  ->  {_fmt_posterior(e.posterior)}"
                         f"   [{e.seconds:.3f}s]")
        return "\n".join(lines)

    def _cmd_stats(self, args: list[str]) -> str:
        sess = self._need_session()
        stats = sess.stats()
        return "\n".join(f"{k}: {v}" for k, v in stats.items())

    # -- driver -----------------------------------------------------------

    def run(self, input_fn: Callable[[str], str] = input,
            print_fn: Callable[[str], None] = print) -> None:
        print_fn("spook repl; type 'help' for commands")
        while True:
            try:
                line = input_fn("spook> ")
            except EOFError:
                break
            try:
                out = self.execute(line)
            except SystemExit:
                break
            except SpookError as exc:
                out = f"error [{exc.code}]: {exc}"
            except FileNotFoundError as exc:
                out = f"error: {exc}"
            if out:
                print_fn(out)


def main(path: Optional[str] = None) -> None:
    repl = Repl()
    if path is not None:
        print(repl.execute(f"load {path}"))
    repl.run()
