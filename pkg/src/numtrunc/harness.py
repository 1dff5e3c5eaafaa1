"""Reproduction oracle and the corpus accuracy harness.

A warning is reproduced by replaying the program concretely on the generated
input and looking at the value about to be narrowed each time the flagged
instruction is reached: the bits the instruction drops are tested with the
concrete form of the security predicate.

Corpus cases are listed in a manifest, one per line::

    program.asm, seeds/program.bin, expect=error, insns=site_a;site_b
    clean.asm, seeds/clean.bin, expect=clean

``insns`` entries are instruction indices or labels.  Outcomes follow the
usual test-suite protocol: on an error case, warnings exactly at the expected
sites that all reproduce give TP, a warning anywhere else gives FP, anything
else is FN; on a clean case any warning is FP and silence is TN.
"""

from __future__ import annotations

import json
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from .bitvec import mask
from .checker import CONVERSIONS, cropped_is_error
from .engine import EngineConfig, RunReport, run
from .isa import Machine, MachineTrap, Mem, Program, RegisterSlice, parse_program, step_concrete

OUTCOMES = ("TP", "FP", "FN", "TN")


class CorpusError(ValueError):
    pass


# ----------------------------------------------------------------------------
# reproduction

@dataclass
class Reproduction:
    verified: bool
    reason: str                 # "verified" | "not-truncated" | "unreached"
    visits: int = 0
    cropped: list[int] = field(default_factory=list)


def _container(m: Machine, insn, high: int) -> int:
    if insn.mnemonic in CONVERSIONS:
        return m.regs["rax"]
    src = insn.operands[1]
    if isinstance(src, RegisterSlice):
        return m.regs[src.reg]
    if isinstance(src, Mem):
        return m.memory.read(m.address(src), (high + 1) // 8)
    raise ValueError(f"insn {insn.index} has no narrowed source")


def reproduce(program: Program, record: dict, data: bytes, step_limit: int = 100_000) -> Reproduction:
    """Replay ``data`` and test the cropped bits whenever ``record['insn']`` runs."""
    index = record["insn"]
    low, high = record["bits"]
    kind = record["kind"]
    size = high - low + 1
    m = Machine(program, data)
    seen: list[int] = []
    while not m.halted and m.steps < step_limit:
        insn = program[m.pc]
        if insn.index == index:
            cropped = (_container(m, insn, high) >> low) & mask(size)
            seen.append(cropped)
            if cropped_is_error(cropped, size, kind):
                return Reproduction(True, "verified", len(seen), seen)
        try:
            step_concrete(m, insn)
        except MachineTrap:
            break
    return Reproduction(False, "not-truncated" if seen else "unreached", len(seen), seen)


def record_input(record: dict, base: Path | None = None) -> bytes:
    path = Path(record["input"])
    if not path.is_absolute() and base is not None:
        path = base / path
    return path.read_bytes()


# ----------------------------------------------------------------------------
# manifest and classification

@dataclass(frozen=True)
class CorpusCase:
    name: str
    program: Path
    seed: Path
    expect_error: bool
    insns: tuple[str, ...] = ()

    def expected_indices(self, program: Program) -> set[int]:
        return {program.resolve(s) for s in self.insns}


def load_manifest(path: str | Path) -> list[CorpusCase]:
    path = Path(path)
    base = path.parent
    cases = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        fields = [f.strip() for f in body.split(",")]
        if len(fields) < 3:
            raise CorpusError(f"{path}:{lineno}: expected 'program, seed, expect=...'")
        program, seed, *options = fields
        opts = {}
        for opt in options:
            key, sep, value = opt.partition("=")
            if not sep:
                raise CorpusError(f"{path}:{lineno}: bad option {opt!r}")
            opts[key.strip()] = value.strip()
        if opts.get("expect") not in ("error", "clean"):
            raise CorpusError(f"{path}:{lineno}: expect must be 'error' or 'clean'")
        insns = tuple(s.strip() for s in opts.get("insns", "").split(";") if s.strip())
        case = CorpusCase(Path(program).stem, base / program, base / seed,
                          opts["expect"] == "error", insns)
        for f in (case.program, case.seed):
            if not f.exists():
                raise CorpusError(f"{path}:{lineno}: missing file {f}")
        cases.append(case)
    if not cases:
        raise CorpusError(f"{path}: manifest lists no cases")
    return cases


def shipped_manifest() -> Path:
    return Path(str(resources.files("numtrunc") / "corpus" / "manifest.txt"))


def classify(expect_error: bool, expected: set[int], warned: Sequence[int],
             verified: Sequence[bool]) -> str:
    if not expect_error:
        return "FP" if warned else "TN"
    if expected and any(i not in expected for i in warned):
        return "FP"
    if not warned or not all(verified):
        return "FN"
    if expected and not expected <= set(warned):
        return "FN"
    return "TP"


@dataclass
class CaseResult:
    case: CorpusCase
    outcome: str
    records: list[dict]
    reproductions: list[Reproduction]
    report: RunReport | None = None


def _rate(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass
class AccuracyReport:
    results: list[CaseResult]

    @property
    def counts(self) -> dict[str, int]:
        c = dict.fromkeys(OUTCOMES, 0)
        for r in self.results:
            c[r.outcome] += 1
        return c

    @property
    def true_positive_rate(self) -> float:
        c = self.counts
        return _rate(c["TP"], c["TP"] + c["FN"])

    @property
    def true_negative_rate(self) -> float:
        c = self.counts
        return _rate(c["TN"], c["TN"] + c["FP"])

    @property
    def accuracy(self) -> float:
        c = self.counts
        return _rate(c["TP"] + c["TN"], sum(c.values()))

    def table(self) -> str:
        lines = [f"{'case':<24} {'expect':<6} {'outcome':<7} warnings"]
        for r in sorted(self.results, key=lambda r: r.case.name):
            sites = ",".join(f"{rec['insn']}:{rec['kind'][0]}" for rec in r.records) or "-"
            lines.append(f"{r.case.name:<24} {'error' if r.case.expect_error else 'clean':<6} "
                         f"{r.outcome:<7} {sites}")
        c = self.counts
        lines.append(" ".join(f"{k}={c[k]}" for k in OUTCOMES))
        lines.append(f"TPR={self.true_positive_rate:.2f} TNR={self.true_negative_rate:.2f} "
                     f"accuracy={self.accuracy:.2f}")
        return "\n".join(lines)


Analyzer = Callable[[Program, bytes, Path], tuple[list[dict], RunReport | None]]


def engine_analyzer(config: EngineConfig | None = None) -> Analyzer:
    """Default analyzer: a concolic run, reporting satisfiable warnings only."""
    config = config or EngineConfig()

    def analyze(program: Program, data: bytes, out_dir: Path):
        cfg = EngineConfig(**{**config.__dict__, "out_dir": str(out_dir)})
        report = run(program, data, cfg)
        return [w.record() for w in report.warnings], report

    return analyze


def run_case(case: CorpusCase, analyzer: Analyzer, out_dir: Path) -> CaseResult:
    program = parse_program(case.program.read_text())
    data = case.seed.read_bytes()
    records, report = analyzer(program, data, out_dir)
    records = sorted(records, key=lambda r: (r["insn"], r["kind"]))
    reps = []
    for rec in records:
        if rec.get("input"):
            reps.append(reproduce(program, rec, record_input(rec, out_dir)))
        else:
            reps.append(Reproduction(False, "no-input"))
    outcome = classify(case.expect_error, case.expected_indices(program),
                       [r["insn"] for r in records], [r.verified for r in reps])
    return CaseResult(case, outcome, records, reps, report)


def run_corpus(manifest: str | Path | None = None, analyzer: Analyzer | None = None,
               out_dir: str | Path | None = None, config: EngineConfig | None = None) -> AccuracyReport:
    cases = load_manifest(manifest or shipped_manifest())
    analyzer = analyzer or engine_analyzer(config)
    root = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="numtrunc-corpus-"))
    results = []
    for case in cases:
        case_dir = root / case.name
        case_dir.mkdir(parents=True, exist_ok=True)
        results.append(run_case(case, analyzer, case_dir))
    return AccuracyReport(results)


def load_records(path: str | Path) -> list[dict]:
    return [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
