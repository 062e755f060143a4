"""Command-line front end.

    reglock check FILE [--emit-effects] [--json]
    reglock run FILE --seed N [--max-steps N] [--metatheory]
                [--trace text|json] [--snapshots] [--unchecked]
    reglock explore FILE [--max-steps N] [--force-threads] [--json]

Exit codes: 0 success, 1 rejected by the checker, 2 usage or I/O error,
3 deadlock detected, 4 stuck state or metatheory violation (a soundness
fault), 5 exploration budget exceeded or refused.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from .interp import ExploreRefusal, Trace, explore, run_seeded
from .meta import Harness
from .parser import ParseError, parse_program
from .typecheck import CheckFailure, check_program, link_bodies

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_USAGE = 2
EXIT_DEADLOCK = 3
EXIT_UNSOUND = 4
EXIT_BUDGET = 5


def _load(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _parse_and_check(path: str, out) -> tuple[Optional[object], Optional[object], int]:
    """Returns (program, typed, exit_code); typed is None on rejection."""
    try:
        text = _load(path)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None, None, EXIT_USAGE
    try:
        program = parse_program(text)
    except ParseError as exc:
        print(f"parse error: {exc}", file=out)
        return None, None, EXIT_REJECTED
    result = check_program(program)
    if not result.ok:
        return program, None, EXIT_REJECTED
    return program, result, EXIT_OK


def cmd_check(args) -> int:
    try:
        text = _load(args.file)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        program = parse_program(text)
    except ParseError as exc:
        if args.json:
            print(json.dumps({"ok": False,
                              "diagnostics": [{"code": exc.code,
                                               "message": exc.message,
                                               "loc": str(exc.loc) if exc.loc else None}]}))
        else:
            print(f"parse error: {exc}")
        return EXIT_REJECTED
    result = check_program(program)
    if not result.ok:
        if args.json:
            print(json.dumps({"ok": False,
                              "diagnostics": [d.to_json() for d in result.diagnostics]}))
        else:
            for d in result.diagnostics:
                print(d.render())
        return EXIT_REJECTED
    typed = result.typed
    if args.json:
        payload = {
            "ok": True,
            "defs": {name: str(t) for name, t in typed.def_types.items()},
        }
        if args.emit_effects:
            payload["effects"] = {
                name: {str(line): eff.pretty(omit_bottom=True, show_purity=False)
                       for line, eff in sorted(lines.items())}
                for name, lines in typed.effect_lines.items()
            }
        print(json.dumps(payload))
        return EXIT_OK
    for d in program.defs:
        print(f"ok {d.name} : {typed.def_types[d.name]}")
    if args.emit_effects:
        for d in program.defs:
            for line, eff in sorted(typed.effect_lines.get(d.name, {}).items()):
                print(f"{d.name}:{line}: {eff.pretty(omit_bottom=True, show_purity=False)}")
    return EXIT_OK


def _print_trace(trace: Trace, fmt: str, snapshots: bool) -> None:
    if fmt == "json":
        payload = {
            "seed": trace.seed,
            "steps": [
                {"step": s.index, "thread": s.tid, "rule": s.rule,
                 "digest": s.digest, **({"store": s.snapshot} if snapshots else {})}
                for s in trace.steps
            ],
            "terminal": {"kind": trace.terminal.kind, **trace.terminal.detail},
            "trace_digest": trace.digest(),
        }
        print(json.dumps(payload, default=str))
        return
    for s in trace.steps:
        print(f"{s.index} {s.tid} {s.rule}")
    detail = json.dumps(trace.terminal.detail, sort_keys=True, default=str)
    print(f"terminal {trace.terminal.kind} {detail}")
    print(f"trace {trace.digest()}")


def cmd_run(args) -> int:
    seed = args.seed
    if seed is None:
        env = os.environ.get("REGLOCK_SEED")
        if env is None:
            print("error: --seed is required (or set REGLOCK_SEED)", file=sys.stderr)
            return EXIT_USAGE
        seed = int(env)

    if args.unchecked:
        try:
            program = parse_program(_load(args.file))
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except ParseError as exc:
            print(f"parse error: {exc}")
            return EXIT_REJECTED
        try:
            main_expr = link_bodies(program)
        except CheckFailure as exc:
            print(exc.diagnostic.render())
            return EXIT_REJECTED
        harness = None
    else:
        try:
            text = _load(args.file)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        try:
            program = parse_program(text)
        except ParseError as exc:
            print(f"parse error: {exc}")
            return EXIT_REJECTED
        result = check_program(program)
        if not result.ok:
            for d in result.diagnostics:
                print(d.render())
            return EXIT_REJECTED
        main_expr = result.typed.linked_main()
        harness = Harness(result.typed) if args.metatheory else None

    trace = run_seeded(main_expr, seed, max_steps=args.max_steps, harness=harness,
                       snapshots=args.snapshots)
    _print_trace(trace, args.trace, args.snapshots)
    kind = trace.terminal.kind
    if kind == "all_done":
        if harness is not None:
            print("metatheory: 0 violations")
        return EXIT_OK
    if kind == "deadlock":
        return EXIT_DEADLOCK
    if kind in ("stuck", "violation"):
        return EXIT_UNSOUND
    return EXIT_BUDGET


def cmd_explore(args) -> int:
    try:
        text = _load(args.file)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        program = parse_program(text)
    except ParseError as exc:
        print(f"parse error: {exc}")
        return EXIT_REJECTED
    result = check_program(program)
    if not result.ok:
        for d in result.diagnostics:
            print(d.render())
        return EXIT_REJECTED
    main_expr = result.typed.linked_main()
    try:
        report = explore(main_expr, max_steps=args.max_steps, force=args.force_threads)
    except ExploreRefusal as exc:
        print(f"refused: {exc}")
        return EXIT_BUDGET
    payload = {
        "states": report.states,
        "terminals": dict(sorted(report.terminals.items())),
        "stuck": report.stuck_reports,
        "deadlock_cycles": report.deadlock_cycles,
        "budget_hits": report.budget_hits,
    }
    if args.json:
        print(json.dumps(payload))
    else:
        print(f"states {report.states}")
        for kind, count in sorted(report.terminals.items()):
            print(f"terminal {kind} {count}")
        if report.deadlock_cycles:
            print(f"deadlock cycles {report.deadlock_cycles}")
        for s in report.stuck_reports:
            print(f"stuck {json.dumps(s, sort_keys=True)}")
        print(f"budget hits {report.budget_hits}")
    if report.stuck_reports:
        return EXIT_UNSOUND
    if report.budget_hits:
        return EXIT_BUDGET
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reglock", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="typecheck a program")
    p_check.add_argument("file")
    p_check.add_argument("--emit-effects", action="store_true",
                         help="print the effect after each checked source line")
    p_check.add_argument("--json", action="store_true")
    p_check.set_defaults(fn=cmd_check)

    p_run = sub.add_parser("run", help="run under a seeded random scheduler")
    p_run.add_argument("file")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--max-steps", type=int, default=10_000)
    p_run.add_argument("--metatheory", action="store_true",
                       help="validate typing and store invariants after every step")
    p_run.add_argument("--trace", choices=("text", "json"), default="text")
    p_run.add_argument("--snapshots", action="store_true",
                       help="embed store snapshots in the trace (json)")
    p_run.add_argument("--unchecked", action="store_true",
                       help="skip the typechecker (testing hook; runs may fault)")
    p_run.set_defaults(fn=cmd_run)

    p_exp = sub.add_parser("explore", help="enumerate all interleavings")
    p_exp.add_argument("file")
    p_exp.add_argument("--max-steps", type=int, default=2_000)
    p_exp.add_argument("--force-threads", action="store_true",
                       help="explore even with more than 3 live threads")
    p_exp.add_argument("--json", action="store_true")
    p_exp.set_defaults(fn=cmd_explore)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
