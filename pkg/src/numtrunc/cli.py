"""Command line: ``numtrunc run | reproduce | corpus``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checker import write_records
from .engine import EngineConfig, run
from .harness import CorpusError, load_records, record_input, reproduce, run_corpus
from .isa import ParseError, parse_program
from .solver import DEFAULT_BUDGET


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--solver-budget", type=int, default=DEFAULT_BUDGET, metavar="N")
    p.add_argument("--solver-workers", type=int, default=1, metavar="N")
    p.add_argument("--out", metavar="DIR", help="output directory (default: a temp dir)")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--smt2-dir", metavar="DIR")
    p.add_argument("--step-limit", type=int, default=100_000, metavar="N")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="numtrunc", description="Concolic numeric truncation checker for mini x86-64 programs")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="analyze a program on a seed input")
    p.add_argument("program")
    p.add_argument("input")
    p.add_argument("--debug", action="store_true", help="check concrete/symbolic agreement")
    p.add_argument("--trace-shadow", action="store_true", help="print shadow maps per step")
    p = sub.add_parser("reproduce", parents=[common], help="verify warning records by replay")
    p.add_argument("program")
    p.add_argument("records", help="JSON lines file of warning records")
    p.add_argument("--input", help="replay this file instead of each record's input")
    p = sub.add_parser("corpus", parents=[common], help="run the accuracy harness")
    p.add_argument("manifest", nargs="?", help="manifest file (default: shipped corpus)")
    return parser


def _config(args) -> EngineConfig:
    return EngineConfig(step_limit=args.step_limit, solver_budget=args.solver_budget,
                        solver_workers=args.solver_workers, out_dir=args.out,
                        smt2_dir=args.smt2_dir, debug=getattr(args, "debug", False),
                        trace_shadow=getattr(args, "trace_shadow", False))


def cmd_run(args) -> int:
    program = parse_program(Path(args.program).read_text())
    data = Path(args.input).read_bytes()
    report = run(program, data, _config(args))
    out = Path(report.out_dir)
    write_records(report.warnings, out / "warnings.jsonl")
    write_records(report.sites, out / "sites.jsonl")
    for line in report.shadow_trace:
        print(line)
    for d in report.diagnostics:
        print(f"diagnostic: {d}", file=sys.stderr)
    for v in report.violations:
        print(f"agreement violation: {v}", file=sys.stderr)
    if args.verbose:
        for w in report.sites:
            print(f"job {w.job.job_id}: {len(w.job.constraints)} constraints, "
                  f"{len(w.job.layout)} inputs -> {w.status}")
        for r in report.path_predicate:
            print(f"branch {r.index} {r.mnemonic} {'taken' if r.taken else 'not-taken'}")
    for w in report.warnings:
        print(f"warning: {w.message}")
        print(f"  input: {w.input_path}")
    state = "complete" if report.complete else "incomplete"
    print(f"{report.trace_length} steps ({state}), {len(report.path_predicate)} branch "
          f"constraints, {len(report.jobs)} solver jobs, {len(report.warnings)} warnings; "
          f"records in {out}")
    if not report.complete:
        return 2
    return 1 if report.warnings else 0


def cmd_reproduce(args) -> int:
    program = parse_program(Path(args.program).read_text())
    path = Path(args.records)
    records = load_records(path)
    if not records:
        print(f"{path}: no warning records", file=sys.stderr)
        return 2
    all_ok = True
    for rec in records:
        if args.input:
            data = Path(args.input).read_bytes()
        elif rec.get("input"):
            data = record_input(rec, path.parent)
        else:
            print(f"insn {rec['insn']}: not-verified (no input)")
            all_ok = False
            continue
        rep = reproduce(program, rec, data, args.step_limit)
        word = "verified" if rep.verified else f"not-verified ({rep.reason})"
        print(f"insn {rec['insn']} {rec['kind']} bits {rec['bits'][0]}..{rec['bits'][1]}: {word}")
        all_ok &= rep.verified
    return 0 if all_ok else 1


def cmd_corpus(args) -> int:
    report = run_corpus(args.manifest, out_dir=args.out, config=_config(args))
    if args.verbose:
        for r in sorted(report.results, key=lambda r: r.case.name):
            for w in r.report.sites if r.report else []:
                print(f"{r.case.name}: job {w.job.job_id} -> {w.status}")
    print(report.table())
    return 0 if report.accuracy == 1.0 else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "reproduce": cmd_reproduce, "corpus": cmd_corpus}[args.command]
    try:
        return handler(args)
    except ParseError as exc:
        print(f"parse error:\n{exc}", file=sys.stderr)
        return 2
    except (OSError, CorpusError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
