"""Command-line front end: ``check``, ``slice``, ``emit-chc`` and ``corpus run``.

Exit codes: 0 safe (or all corpus expectations met), 1 bug (or a corpus
mismatch), 2 timeout or unknown, 3 usage error, 4 a pipeline stage or
the manifest failed.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from . import report as rp
from .engine.interp import DEFAULT_BUDGET, DEFAULT_DOMAIN
from .kir import print_module
from .pipeline import ENGINES, Options, StageError, check, load, prepare

EXIT_USAGE = 3
EXIT_STAGE = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def _common(p: argparse.ArgumentParser, engine: bool = True) -> None:
    p.add_argument("--entry", help="init function (overrides the module's entry declaration)")
    p.add_argument("--format", choices=("text", "machine"), default="text")
    if not engine:
        return
    p.add_argument("--bound", type=_positive, default=1, help="bmc loop unrolling bound")
    p.add_argument("--domain", type=_positive, default=DEFAULT_DOMAIN,
                   help="size of the nondet integer domain {0..N-1}")
    p.add_argument("--budget", type=_positive, default=DEFAULT_BUDGET,
                   help="step budget of the explicit-state engines")
    p.add_argument("--no-slice", action="store_true")
    p.add_argument("--underflow-check", nargs="?", const=True, default=True, type=_on_off,
                   metavar="on|off")
    p.add_argument("--solver-cmd", help="Horn solver command with a {file} placeholder")
    p.add_argument("--timeout", type=float, default=300.0, help="solver timeout in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="krefcheck", description="Refcount bug verifier for KIR programs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", help="verify one program")
    p.add_argument("file")
    p.add_argument("--engine", choices=ENGINES, default="enum")
    _common(p)

    p = sub.add_parser("slice", help="print the sliced harness program")
    p.add_argument("file")
    p.add_argument("-o", "--output", help="write the program here instead of stdout")
    _common(p, engine=False)

    p = sub.add_parser("emit-chc", help="write the Horn clause script")
    p.add_argument("file")
    p.add_argument("-o", "--output", help="script path (default: stdout)")
    p.add_argument("--entry")
    p.add_argument("--no-slice", action="store_true")
    p.add_argument("--no-inline", action="store_true",
                   help="keep calls as summary predicates instead of inlining")
    p.add_argument("--domain", type=_positive, default=DEFAULT_DOMAIN)
    p.add_argument("--underflow-check", nargs="?", const=True, default=True, type=_on_off,
                   metavar="on|off")

    p = sub.add_parser("corpus", help="ground-truth corpus commands")
    csub = p.add_subparsers(dest="corpus_command", required=True, parser_class=_Parser)
    r = csub.add_parser("run", help="run the manifest and compare with expectations")
    r.add_argument("manifest", nargs="?", help="manifest.json (default: the bundled one)")
    r.add_argument("--engines", "--engine", dest="engines", default="enum",
                   help="comma list of enum, chc, bmc<k>")
    r.add_argument("--jobs", type=_positive, default=1)
    _common(r)
    return parser


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as err:
        raise StageError("input", f"cannot read {path}: {err.strerror}") from None


def _options(args, engine: str) -> Options:
    return Options(engine=engine, bound=args.bound, domain=args.domain, budget=args.budget,
                   underflow_check=args.underflow_check, slice=not args.no_slice,
                   solver_cmd=args.solver_cmd, timeout=args.timeout)


def _entry_name(module, args) -> str:
    if args.entry:
        return args.entry
    if module.entry is None:
        raise StageError("harness", "no entry declaration; pass --entry")
    return module.entry.init_function


def cmd_check(args) -> int:
    module = load(_read(args.file), args.file)
    opts = _options(args, args.engine)
    verdict, prep = check(module, args.entry, opts)
    report = rp.CheckReport(
        file=args.file, entry=_entry_name(module, args), engine=args.engine,
        bound=args.bound if args.engine == "bmc" else None, domain=args.domain,
        slicing=rp.SliceStats(opts.slice, prep.before, prep.after,
                              prep.rule_counts() if opts.slice else {}),
        timings={k: round(v, 6) for k, v in prep.timings.items()},
        **rp.verdict_fields(verdict))
    if args.format == "machine":
        print(rp.to_machine(report))
        if report.bounded:
            print(f"warning: safe only within loop bound {args.bound}", file=sys.stderr)
    else:
        print(rp.render_check(report))
    return report.exit_code


def cmd_slice(args) -> int:
    module = load(_read(args.file), args.file)
    prep = prepare(module, args.entry, True)
    text = print_module(prep.module)
    provenance = []
    for fn, marking in prep.markings.items():
        order = _block_order(prep.harness.module, fn)
        for (block, index), rule in sorted(marking.provenance.items(),
                                           key=lambda kv: (order[kv[0][0]], kv[0][1])):
            provenance.append({"function": fn, "block": block, "index": index, "rule": rule})
    report = rp.SliceReport(args.file, _entry_name(module, args),
                            rp.SliceStats(True, prep.before, prep.after, prep.rule_counts()),
                            provenance, text)
    if args.output:
        Path(args.output).write_text(text)
    if args.format == "machine":
        print(rp.to_machine(report))
    else:
        if not args.output:
            sys.stdout.write(text)
        print(rp.render_slice_stats(report), file=sys.stderr)
    return 0


def _block_order(module, fn: str) -> dict[str, int]:
    return {b.label: i for i, b in enumerate(module.function(fn).blocks)}


def cmd_emit_chc(args) -> int:
    from .engine.chc import ChcError, emit_smtlib, encode_chc
    module = load(_read(args.file), args.file)
    prep = prepare(module, args.entry, not args.no_slice)
    try:
        system = encode_chc(prep.module, inline=not args.no_inline, domain=args.domain,
                            underflow_check=args.underflow_check)
    except ChcError as err:
        raise StageError("chc", str(err)) from None
    script = emit_smtlib(system)
    if args.output:
        Path(args.output).write_text(script)
    else:
        sys.stdout.write(script)
    return 0


def cmd_corpus_run(args) -> int:
    from .corpus import ManifestError, load_manifest, parse_engine, run_corpus
    engines = [e.strip() for e in args.engines.split(",") if e.strip()]
    try:
        for e in engines:
            parse_engine(e)
    except ValueError as err:
        print(f"krefcheck: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        manifest = load_manifest(args.manifest)
    except ManifestError as err:
        print(f"error [manifest]: {err}", file=sys.stderr)
        return EXIT_STAGE
    report = run_corpus(manifest, engines, sliced=not args.no_slice,
                        options=_options(args, "enum"), jobs=args.jobs)
    print(rp.to_machine(report) if args.format == "machine" else rp.render_corpus(report))
    return report.exit_code


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"check": cmd_check, "slice": cmd_slice, "emit-chc": cmd_emit_chc,
                "corpus": cmd_corpus_run}
    try:
        return handlers[args.command](args)
    except StageError as err:
        print(f"error [{err.stage}]: {err.message}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
