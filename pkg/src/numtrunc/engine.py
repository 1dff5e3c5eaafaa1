"""Concolic execution over the mini ISA.

Each instruction is processed in four steps: the truncation checker looks at
the pre-instruction state, the concrete machine steps, the symbolic state is
updated from formulas built on the pre-instruction state, and finally the
shadow tracker is updated.

Registers are symbolic as a whole: a full register maps to one 64-bit formula
(or nothing, when concrete).  Memory is symbolic per byte.  Conditional jumps
append :class:`BranchRecord` s built from the operands of the last
flag-setting instruction.
"""

from __future__ import annotations

import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import bitvec as bv
from .bitvec import BV
from .checker import Hint, TruncationChecker, TruncationWarning, inspect
from .isa import (
    Imm, Instruction, Machine, MachineTrap, Mem, Program, RegisterSlice, JCC,
    condition_holds, reg_slice, step_concrete,
)
from .shadow import ShadowTracker
from .solver import DEFAULT_BUDGET, InputSlot, SolverJob, SolverQueue, model_to_input_bytes

log = logging.getLogger(__name__)

_ARITH = {"add": bv.add, "sub": bv.sub, "and": bv.bvand, "or": bv.bvor, "xor": bv.bvxor}
_FLAG_KIND = {"add": "add", "sub": "sub", "cmp": "sub",
              "and": "logic", "or": "logic", "xor": "logic", "test": "logic"}
_COMPARE = {"je": bv.eq, "jne": bv.ne, "jl": bv.slt, "jle": bv.sle, "jg": bv.sgt,
            "jge": bv.sge, "jb": bv.ult, "jbe": bv.ule, "ja": bv.ugt, "jae": bv.uge}
NEGATED = {"je": "jne", "jne": "je", "jl": "jge", "jge": "jl", "jle": "jg", "jg": "jle",
           "jb": "jae", "jae": "jb", "jbe": "ja", "ja": "jbe"}
_CONVERSION = {"cbw": (8, "ax"), "cwde": (16, "eax"), "cdqe": (32, "rax")}
_RAX = reg_slice("rax")


@dataclass(frozen=True)
class BranchRecord:
    index: int
    mnemonic: str
    taken: bool
    condition: BV

    @property
    def variables(self) -> frozenset:
        return self.condition.variables


@dataclass(frozen=True)
class FlagSource:
    """Operands of the last flag-setting instruction, as formulas."""

    kind: str                 # "sub" | "logic" | "add" | "shift"
    a: BV
    b: BV | None
    result: BV
    carry: BV | None = None   # shifts: the last bit shifted out

    @property
    def is_symbolic(self) -> bool:
        return self.result.is_symbolic or self.a.is_symbolic or (
            self.b is not None and self.b.is_symbolic)


def _flag_formulas(src: FlagSource) -> dict[str, BV]:
    r = src.result
    w = r.width
    zf = bv.eq(r, bv.zeros(w))
    sf = bv.slt(r, bv.zeros(w))
    if src.kind == "add":
        cf = bv.ult(r, src.a)
        sa, sb = bv.slt(src.a, bv.zeros(w)), bv.slt(src.b, bv.zeros(w))
        of = bv.band(bv.eq(sa, sb), bv.ne(sf, sa))
    else:
        cf = bv.eq(src.carry, bv.true()) if src.carry is not None else bv.false()
        of = bv.false()
    return {"ZF": zf, "SF": sf, "CF": cf, "OF": of}


def branch_condition(src: FlagSource, mnemonic: str, taken: bool) -> BV:
    """Width-1 formula for ``mnemonic`` that holds on the executed direction."""
    mn = mnemonic if taken else NEGATED[mnemonic]
    if src.kind == "sub":
        return _COMPARE[mn](src.a, src.b)
    if src.kind == "logic":
        return _COMPARE[mn](src.result, bv.zeros(src.result.width))
    f = _flag_formulas(src)
    zf, cf = f["ZF"], f["CF"]
    sf_is_of = bv.eq(f["SF"], f["OF"])
    return {
        "je": zf, "jne": bv.bnot(zf),
        "jl": bv.bnot(sf_is_of), "jge": sf_is_of,
        "jle": bv.bor(zf, bv.bnot(sf_is_of)), "jg": bv.band(bv.bnot(zf), sf_is_of),
        "jb": cf, "jae": bv.bnot(cf),
        "jbe": bv.bor(cf, zf), "ja": bv.band(bv.bnot(cf), bv.bnot(zf)),
    }[mn]


def _byte_of(term: BV, i: int) -> BV:
    """Byte ``i`` of ``term``, looking through concat/extend/extract where possible."""
    lo, hi = 8 * i, 8 * i + 7
    while True:
        if term.width == 8 and lo == 0:
            return term
        if term.kind == "concat":
            top, bottom = term.args
            if hi < bottom.width:
                term = bottom
                continue
            if lo >= bottom.width:
                term, lo, hi = top, lo - bottom.width, hi - bottom.width
                continue
        elif term.kind == "zext":
            child = term.args[0]
            if lo >= child.width:
                return bv.zeros(8)
            if hi < child.width:
                term = child
                continue
        elif term.kind == "sext":
            child = term.args[0]
            if hi < child.width:
                term = child
                continue
        elif term.kind == "const":
            return bv.const((term.value >> lo) & 0xFF, 8)
        return bv.extract(hi, lo, term)


def concat_bytes(parts: list[BV]) -> BV:
    """Concatenate byte formulas (most significant first), merging neighbours.

    Adjacent slices of one formula are fused back into a single extract, and an
    extract covering its whole operand collapses to that operand, so a value
    stored and reloaded at the same width keeps its original shape.
    """
    out: list[BV] = []
    for part in parts:
        if out:
            prev = out[-1]
            if prev.kind == "const" and part.kind == "const":
                out[-1] = bv.const((prev.value << part.width) | part.value, prev.width + part.width)
                continue
            a, b = bv.match_extract(prev), bv.match_extract(part)
            if a and b and a[2] == b[2] and a[1] == b[0] + 1:
                out[-1] = bv.extract(a[0], b[1], a[2])
                continue
        out.append(part)
    merged = [_whole(p) for p in out]
    result = merged[0]
    for p in merged[1:]:
        result = bv.concat(result, p)
    return result


def _whole(e: BV) -> BV:
    m = bv.match_extract(e)
    if m and m[1] == 0 and m[0] == m[2].width - 1:
        return m[2]
    return e


class MachineState:
    """Concrete machine plus the symbolic view of registers and memory."""

    def __init__(self, program: Program, data: bytes = b""):
        self.machine = Machine(program, data)
        self.sym_regs: dict[str, BV] = {}
        self.sym_mem: dict[int, BV] = {}
        self.path: list[BranchRecord] = []
        self.hints: dict[int, Hint] = {}
        self.slots: dict[int, InputSlot] = {}
        self.seed_values: dict[int, int] = {}
        self.flag_source: FlagSource | None = None

    @property
    def read_index(self) -> int:
        return len(self.slots)

    def address(self, mem: Mem) -> int:
        return self.machine.address(mem)

    # -- reading ---------------------------------------------------------------

    def full_reg_expr(self, reg: str) -> BV | None:
        return self.sym_regs.get(reg)

    def reg_expr(self, sl: RegisterSlice) -> BV | None:
        phi = self.sym_regs.get(sl.reg)
        if phi is None:
            return None
        return phi if sl.is_full and sl.low == 0 else bv.extract(sl.high, sl.low, phi)

    def reg_term(self, sl: RegisterSlice) -> BV:
        e = self.reg_expr(sl)
        return e if e is not None else bv.const(self.machine.get(sl), sl.width)

    def mem_expr(self, addr: int, n: int) -> BV | None:
        if not any(a in self.sym_mem for a in range(addr, addr + n)):
            return None
        return self.mem_term(addr, n)

    def mem_term(self, addr: int, n: int) -> BV:
        parts = []
        for a in range(addr + n - 1, addr - 1, -1):
            e = self.sym_mem.get(a)
            parts.append(e if e is not None else bv.const(self.machine.memory.read(a, 1), 8))
        return concat_bytes(parts)

    def term(self, op, size: int) -> BV:
        if isinstance(op, RegisterSlice):
            return self.reg_term(op)
        if isinstance(op, Mem):
            return self.mem_term(self.address(op), op.size)
        return bv.const(op.value & bv.mask(8 * size), 8 * size)

    # -- writing (formulas are planned on the pre-state, committed after) -------

    def plan_reg(self, sl: RegisterSlice, value: BV) -> tuple[str, BV | None]:
        if sl.width == 64:
            full = value
        elif sl.width == 32:
            full = bv.zext(32, value)
        else:
            old = self.sym_regs.get(sl.reg)
            if old is None:
                old = bv.const(self.machine.regs[sl.reg], 64)
            full = concat_bytes([bv.extract(63, sl.width, old), value])
        return sl.reg, (full if full.is_symbolic else None)

    def commit_reg(self, reg: str, full: BV | None) -> None:
        if full is None:
            self.sym_regs.pop(reg, None)
        else:
            self.sym_regs[reg] = full

    def commit_mem(self, addr: int, n: int, value: BV) -> None:
        for i in range(n):
            if value.is_symbolic:
                byte = _byte_of(value, i)
                if byte.is_symbolic:
                    self.sym_mem[addr + i] = byte
                    continue
            self.sym_mem.pop(addr + i, None)


@dataclass
class EngineConfig:
    step_limit: int = 100_000
    solver_budget: int = DEFAULT_BUDGET
    solver_workers: int = 1
    out_dir: str | None = None
    smt2_dir: str | None = None
    debug: bool = False
    trace_shadow: bool = False


@dataclass
class RunReport:
    trace_length: int
    path_predicate: list[BranchRecord]
    sites: list[TruncationWarning]
    complete: bool
    exit_reason: str | None
    diagnostics: list[str] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    jobs: list[SolverJob] = field(default_factory=list)
    shadow_trace: list[str] = field(default_factory=list)
    output: list[int] = field(default_factory=list)
    out_dir: str | None = None

    @property
    def warnings(self) -> list[TruncationWarning]:
        """Satisfiable warnings only; UNSAT/UNKNOWN sites stay in :attr:`sites`."""
        return [w for w in self.sites if w.status == "sat"]

    @property
    def generated_inputs(self) -> list[str]:
        return [w.input_path for w in self.warnings if w.input_path]


class ConcolicEngine:
    def __init__(self, program: Program, data: bytes = b"", config: EngineConfig | None = None):
        self.program = program
        self.data = bytes(data)
        self.config = config or EngineConfig()
        self.state = MachineState(program, data)
        self.shadow = ShadowTracker(self.state.machine.regs["rsp"])
        out = self.config.out_dir or tempfile.mkdtemp(prefix="numtrunc-")
        self.out_dir = Path(out)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        smt2 = self.config.smt2_dir or self.out_dir / "smt2"
        self.queue = SolverQueue(self.config.solver_budget, smt2, self.config.solver_workers)
        self.checker = TruncationChecker(submit=self.queue.submit)
        self.violations: list[str] = []
        self.shadow_trace: list[str] = []

    # -- main loop -------------------------------------------------------------

    def run(self) -> RunReport:
        m = self.state.machine
        complete = True
        diagnostics: list[str] = []
        while not m.halted:
            if m.steps >= self.config.step_limit:
                complete = False
                diagnostics.append(f"step limit {self.config.step_limit} reached")
                break
            insn = self.program[m.pc]
            try:
                self.step(insn)
            except MachineTrap as trap:
                complete = False
                diagnostics.append(f"trap: {trap}")
                break
        report = RunReport(
            trace_length=m.steps, path_predicate=list(self.state.path), sites=[],
            complete=complete, exit_reason=m.exit_reason if complete else None,
            diagnostics=m.diagnostics + diagnostics, violations=self.violations,
            jobs=list(self.queue.jobs), shadow_trace=self.shadow_trace, output=list(m.output),
            out_dir=str(self.out_dir))
        self._finalize(report)
        return report

    def _finalize(self, report: RunReport) -> None:
        verdicts = self.queue.drain()
        for w in self.checker.warnings:
            w.verdict = verdicts[w.job.job_id]
            if w.verdict.is_sat:
                data = model_to_input_bytes(w.verdict.assignment, w.job.layout, self.data)
                path = self.out_dir / "inputs" / f"{w.job.job_id}.bin"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(data)
                w.input_path, w.input_bytes = str(path), data
        report.sites = sorted(self.checker.warnings,
                              key=lambda w: (w.site.insn_index, w.site.signedness))

    def step(self, insn: Instruction) -> None:
        st = self.state
        # (1) checks against the pre-instruction state
        site = inspect(insn, st, self.shadow)
        if site is not None:
            self.checker.raise_site(site, st.path, st.slots, st.hints)
        # formulas and shadow effects are planned on the pre-state
        commit, shadow_update = self.symbolic_step(insn)
        flags_before = st.machine.flags.copy()
        # (2) concrete step
        step_concrete(st.machine, insn)
        # (3) symbolic update
        commit()
        if insn.mnemonic in JCC:
            self.on_conditional_jump(insn, flags_before)
        elif insn.read_kind:
            self.read_intrinsic(insn)
        # (4) shadow update
        if shadow_update is not None:
            shadow_update()
        if self.config.trace_shadow:
            self.shadow_trace.append(f"{insn.index}: {self.shadow.dump()}")
        if self.config.debug:
            self.check_agreement(insn)

    # -- symbolic semantics ----------------------------------------------------

    def symbolic_step(self, insn: Instruction) -> tuple[Callable[[], None], Callable[[], None] | None]:
        """Plan the symbolic and shadow effects of ``insn`` from the pre-state."""
        st, sh = self.state, self.shadow
        m = st.machine
        mn, ops = insn.mnemonic, insn.operands
        regs: list[tuple[str, BV | None]] = []
        mems: list[tuple[int, int, BV]] = []
        shadow_update = None

        def source_loc(op):
            if isinstance(op, RegisterSlice):
                return op
            if isinstance(op, Mem):
                return st.address(op)
            return None

        if mn == "mov":
            dst, src = ops
            value = st.term(src, dst.size)
            sym, loc = value.is_symbolic, source_loc(src)
            if isinstance(dst, Mem):
                addr = st.address(dst)
                mems.append((addr, dst.size, value))
                shadow_update = lambda: sh.on_store(addr, loc, dst.size, sym)
            else:
                regs.append(st.plan_reg(dst, value))
                shadow_update = lambda: sh.on_load(dst, loc, dst.size, sym)
        elif mn in ("movsx", "movzx"):
            dst, src = ops
            value = st.term(src, src.size)
            extend = bv.sext if mn == "movsx" else bv.zext
            regs.append(st.plan_reg(dst, extend(dst.width - value.width, value)))
            sym, loc = value.is_symbolic, source_loc(src)
            shadow_update = lambda: sh.on_load(dst, loc, src.size, sym)
        elif mn == "lea":
            dst, src = ops
            if src.base is None:
                value = bv.const(st.address(src) & bv.mask(dst.width), dst.width)
            else:
                base = st.reg_term(src.base)
                value = bv.add(base, bv.const(src.disp & bv.mask(base.width), base.width))
                if value.width > dst.width:
                    value = bv.extract(dst.width - 1, 0, value)
                elif value.width < dst.width:
                    value = bv.zext(dst.width - value.width, value)
            regs.append(st.plan_reg(dst, value))
            sym = value.is_symbolic
            shadow_update = lambda: sh.on_other_write({dst.reg: (dst.size, sym)})
        elif mn in _CONVERSION:
            frm, dst_name = _CONVERSION[mn]
            phi = st.reg_term(_RAX)
            regs.append(st.plan_reg(reg_slice(dst_name), bv.sext(frm, bv.extract(frm - 1, 0, phi))))
            shadow_update = lambda: sh.on_conversion(mn, "rax" in st.sym_regs)
        elif mn in _FLAG_KIND:
            dst, src = ops
            a, b = st.term(dst, dst.size), st.term(src, dst.size)
            if mn in ("xor", "sub") and src == dst:
                result = bv.zeros(dst.width)
            elif mn in ("cmp", "test"):
                result = (bv.sub if mn == "cmp" else bv.bvand)(a, b)
            else:
                result = _ARITH[mn](a, b)
            st.flag_source = FlagSource(_FLAG_KIND[mn], a, b, result)
            if mn not in ("cmp", "test"):
                regs.append(st.plan_reg(dst, result))
                sym = result.is_symbolic
                shadow_update = lambda: sh.on_other_write({dst.reg: (dst.size, sym)})
        elif mn == "not":
            dst = ops[0]
            result = bv.bvnot(st.reg_term(dst))
            regs.append(st.plan_reg(dst, result))
            sym = result.is_symbolic
            shadow_update = lambda: sh.on_other_write({dst.reg: (dst.size, sym)})
        elif mn in ("shl", "shr", "sar"):
            dst, cnt = ops
            a, k, w = st.reg_term(dst), cnt.value, dst.width
            if mn == "shl":
                result = bv.concat(bv.extract(w - 1 - k, 0, a), bv.zeros(k))
                carry = bv.extract(w - k, w - k, a)
            else:
                upper = bv.extract(w - 1, k, a)
                result = bv.zext(k, upper) if mn == "shr" else bv.sext(k, upper)
                carry = bv.extract(k - 1, k - 1, a)
            st.flag_source = FlagSource("shift", a, None, result, carry)
            regs.append(st.plan_reg(dst, result))
            sym = result.is_symbolic
            shadow_update = lambda: sh.on_other_write({dst.reg: (dst.size, sym)})
        elif mn == "push":
            op = ops[0]
            size = 8 if isinstance(op, Imm) else op.size
            value = st.term(op, size)
            sp_after = m.regs["rsp"] - size
            mems.append((sp_after, size, value))
            sym, loc = value.is_symbolic, source_loc(op)
            shadow_update = lambda: sh.on_push(sp_after, loc, size, sym)
        elif mn == "pop":
            op = ops[0]
            sp = m.regs["rsp"]
            value = st.mem_term(sp, op.size)
            sym = value.is_symbolic
            if isinstance(op, RegisterSlice):
                regs.append(st.plan_reg(op, value))
                shadow_update = lambda: sh.on_pop(op, sp, sym)
            else:
                # the destination address is formed with the incremented rsp
                addr = (st.address(op) + op.size) if op.base and op.base.reg == "rsp" \
                    else st.address(op)
                size = sh.stack.lookup(sp) if sym else None
                mems.append((addr, op.size, value))

                def shadow_update():
                    if size is None:
                        sh.stack.clear(addr, op.size)
                    else:
                        sh.stack.set(addr, size)
        elif mn == "call":
            slot = m.regs["rsp"] - 8
            mems.append((slot, 8, bv.const(insn.index + 1, 64)))

            def shadow_update():
                sh.on_concrete_store(slot, 8)
                sh.on_call(slot)
        elif mn == "ret":
            if m.depth > 0:
                shadow_update = sh.on_ret
        elif mn == "print":
            regs.append(("rax", None))
            shadow_update = lambda: sh.on_modeled_function_return(False, False)

        def commit():
            for reg, full in regs:
                st.commit_reg(reg, full)
            for addr, n, value in mems:
                st.commit_mem(addr, n, value)

        return commit, shadow_update

    def on_conditional_jump(self, insn: Instruction, flags_before: dict) -> BranchRecord | None:
        src = self.state.flag_source
        if src is None or not src.is_symbolic:
            return None
        taken = condition_holds(flags_before, insn.mnemonic)
        cond = branch_condition(src, insn.mnemonic, taken)
        if not cond.is_symbolic:
            return None
        record = BranchRecord(insn.index, insn.mnemonic, taken, cond)
        self.state.path.append(record)
        if self.config.debug and bv.evaluate(cond, self.state.seed_values) != 1:
            self.violations.append(f"insn {insn.index}: branch condition false on seed")
        return record

    def read_intrinsic(self, insn: Instruction) -> BV:
        """Bind a fresh variable to the bytes the concrete step just consumed."""
        st, sh = self.state, self.shadow
        m = st.machine
        kind, bits = insn.read_kind
        event = m.last_read
        index = st.read_index
        name = f"in{index}_{kind}{bits}"
        x = bv.var(index, name, bits)
        st.slots[index] = InputSlot(index, name, bits, index, event.offset)
        st.seed_values[index] = event.value
        if kind in ("i", "u"):
            st.hints[index] = Hint("signed" if kind == "i" else "unsigned", index)
        dst = insn.operands[0]
        if isinstance(dst, RegisterSlice):
            # upper bits of the destination are unchanged by the step
            reg, full = st.plan_reg(dst, x)
            st.commit_reg(reg, full)
            sh.regs[dst.reg] = bits // 8
        else:
            addr = st.address(dst)
            st.commit_mem(addr, bits // 8, x)
            sh.on_input(addr, bits // 8)
        if not (isinstance(dst, RegisterSlice) and dst.reg == "rax"):
            st.commit_reg("rax", None)
        sh.on_modeled_function_return(True, "rax" in st.sym_regs, bits // 8)
        return x

    # -- debug ------------------------------------------------------------------

    def check_agreement(self, insn: Instruction) -> None:
        st = self.state
        m = st.machine
        memo: dict = {}
        for reg, phi in st.sym_regs.items():
            got = bv.evaluate(phi, st.seed_values, memo)
            if got != m.regs[reg]:
                self.violations.append(
                    f"insn {insn.index}: {reg} formula gives {got:#x}, concrete {m.regs[reg]:#x}")
        for addr, phi in st.sym_mem.items():
            got, want = bv.evaluate(phi, st.seed_values, memo), m.memory.read(addr, 1)
            if got != want:
                self.violations.append(
                    f"insn {insn.index}: byte {addr:#x} formula gives {got:#x}, concrete {want:#x}")


def run(program: Program, data: bytes = b"", config: EngineConfig | None = None) -> RunReport:
    return ConcolicEngine(program, data, config).run()
