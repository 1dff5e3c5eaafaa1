"""Numeric truncation sites, security predicates and signedness inference.

A site is an instruction that keeps only the low ``kept`` bytes of a symbolic
value whose actual size is larger. For the dropped bits ``low..high`` of the
value, ``cropped = extract(high, low, value)`` and the error predicates are::

    signed:    not (cropped == 0...0  or  cropped == 1...1)
    unsigned:  not (cropped == 0...0)

``1...1`` is the all-ones vector. The signed form accepts an all-ones cropped
part regardless of the kept sign bit, so e.g. 0xFF7F narrowed to 8 bits is not
reported even though the kept byte reads as +127.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import bitvec as bv
from .bitvec import BV
from .isa import Instruction, Mem, RegisterSlice, SIGNED_JCC, UNSIGNED_JCC
from .shadow import CONVERSION_SIZE, ShadowTracker
from .solver import InputSlot, SolverJob, SolverVerdict

MOVES = frozenset({"mov", "movsx", "movzx"})
CONVERSIONS = frozenset(CONVERSION_SIZE)


@dataclass(frozen=True)
class Hint:
    signedness: str      # "signed" | "unsigned"
    read_index: int


@dataclass(frozen=True)
class TruncationSite:
    insn_index: int
    line: int
    text: str
    source_kind: str          # "memory" | "register" | "conversion"
    phi_var: BV
    high: int
    low: int
    signedness: str = "signed"
    inferred_from: str = "default"    # "hint" | "branch-slice" | "default"

    def __post_init__(self):
        if not 0 <= self.low <= self.high < self.phi_var.width:
            raise ValueError(
                f"site bits {self.low}..{self.high} invalid for width {self.phi_var.width}")

    @property
    def kept_bits(self) -> int:
        return self.low

    @property
    def cropped(self) -> BV:
        return bv.extract(self.high, self.low, self.phi_var)


def build_predicate(site: TruncationSite) -> BV:
    cropped = site.cropped
    size = site.high - site.low + 1
    all_zero = bv.eq(cropped, bv.zeros(size))
    if site.signedness == "unsigned":
        return bv.bnot(all_zero)
    return bv.bnot(bv.bor(all_zero, bv.eq(cropped, bv.ones(size))))


def cropped_is_error(cropped: int, size: int, signedness: str) -> bool:
    """Concrete counterpart of :func:`build_predicate`."""
    if signedness == "unsigned":
        return cropped != 0
    return cropped not in (0, (1 << size) - 1)


def infer_signedness(phi_var: BV, path: Sequence, hints: Mapping[int, Hint]) -> tuple[str, str]:
    """Pick the predicate flavour for ``phi_var``: input hints, then branches, then signed."""
    names = phi_var.variables
    hinted = [hints[v] for v in names if v in hints]
    if hinted:
        latest = max(hinted, key=lambda h: h.read_index)
        return latest.signedness, "hint"
    for record in reversed(path):
        if not (record.variables & names):
            continue
        if record.mnemonic in SIGNED_JCC:
            return "signed", "branch-slice"
        if record.mnemonic in UNSIGNED_JCC:
            return "unsigned", "branch-slice"
    return "signed", "default"


def _site(insn: Instruction, kind: str, phi_var: BV, high: int, low: int) -> TruncationSite:
    return TruncationSite(insn.index, insn.line, insn.text, kind, phi_var, high, low)


def _low_bytes(phi: BV, size: int) -> BV:
    return phi if size * 8 == phi.width else bv.extract(8 * size - 1, 0, phi)


def check_mov_from_mem(insn: Instruction, state, shadow: ShadowTracker) -> TruncationSite | None:
    src = insn.operands[1]
    addr = state.address(src)
    if state.mem_expr(addr, src.size) is None:
        return None
    tracked = shadow.stack.lookup(addr)
    if tracked is None or src.size >= tracked:
        return None
    phi_var = state.mem_term(addr, tracked)
    return _site(insn, "memory", phi_var, 8 * tracked - 1, 8 * src.size)


def check_mov_from_reg(insn: Instruction, state, shadow: ShadowTracker) -> TruncationSite | None:
    src = insn.operands[1]
    phi_full = state.full_reg_expr(src.reg)
    if phi_full is None:
        return None
    tracked = shadow.regs.lookup(src.reg)
    if tracked is not None:
        if src.size >= tracked:
            return None
        return _site(insn, "register", _low_bytes(phi_full, tracked), 8 * tracked - 1, 8 * src.size)
    # unknown size: only a strict subregister read, i.e. an extract, can truncate
    if src.is_full:
        return None
    found = bv.match_extract(state.reg_expr(src))
    if found is None:
        return None
    high, _, inner = found
    if high + 1 > inner.width - 1:
        return None
    return _site(insn, "register", inner, inner.width - 1, high + 1)


def check_conversion(insn: Instruction, state, shadow: ShadowTracker) -> TruncationSite | None:
    phi = state.full_reg_expr("rax")
    if phi is None:
        return None
    tracked = shadow.regs.lookup("rax")
    if tracked is None:
        return None
    extended = CONVERSION_SIZE[insn.mnemonic]
    if tracked <= extended:
        return None
    return _site(insn, "conversion", _low_bytes(phi, tracked), 8 * tracked - 1, 8 * extended)


def inspect(insn: Instruction, state, shadow: ShadowTracker) -> TruncationSite | None:
    """Run the check matching ``insn`` against pre-instruction state."""
    if insn.mnemonic in CONVERSIONS:
        return check_conversion(insn, state, shadow)
    if insn.mnemonic in MOVES:
        src = insn.operands[1]
        if isinstance(src, Mem):
            return check_mov_from_mem(insn, state, shadow)
        if isinstance(src, RegisterSlice):
            return check_mov_from_reg(insn, state, shadow)
    return None


@dataclass
class TruncationWarning:
    site: TruncationSite
    job: SolverJob
    verdict: SolverVerdict | None = None
    input_path: str | None = None
    input_bytes: bytes | None = None

    @property
    def status(self) -> str:
        return self.verdict.status if self.verdict else "pending"

    @property
    def message(self) -> str:
        s = self.site
        return (f"insn {s.insn_index} (line {s.line}) `{s.text}`: {s.signedness} numeric "
                f"truncation of bits {s.low}..{s.high} [{self.status}]")

    def record(self) -> dict:
        s = self.site
        return {"insn": s.insn_index, "line": s.line, "kind": s.signedness,
                "bits": [s.low, s.high], "verdict": self.status, "input": self.input_path}

    def to_json(self) -> str:
        return json.dumps(self.record())


@dataclass
class TruncationChecker:
    """Turns sites into solver jobs, one per (instruction, signedness)."""

    submit: object = None
    warnings: list[TruncationWarning] = field(default_factory=list)
    _seen: set = field(default_factory=set)

    def raise_site(self, site: TruncationSite, path: Sequence, slots: Mapping[int, InputSlot],
                   hints: Mapping[int, Hint]) -> TruncationWarning | None:
        signedness, origin = infer_signedness(site.phi_var, path, hints)
        site = TruncationSite(site.insn_index, site.line, site.text, site.source_kind,
                              site.phi_var, site.high, site.low, signedness, origin)
        key = (site.insn_index, signedness)
        if key in self._seen:
            return None
        self._seen.add(key)
        constraints = tuple(r.condition for r in path) + (build_predicate(site),)
        used = set().union(*(c.variables for c in constraints))
        layout = tuple(sorted((slots[v] for v in used), key=lambda s: s.read_index))
        job = SolverJob(f"insn{site.insn_index:04d}-{signedness}", constraints, layout,
                        warning_id=f"{site.insn_index}:{signedness}")
        warning = TruncationWarning(site, job)
        self.warnings.append(warning)
        if self.submit is not None:
            self.submit(job)
        return warning


def write_records(warnings: Sequence[TruncationWarning], path: str | Path) -> None:
    Path(path).write_text("".join(w.to_json() + "\n" for w in warnings))
