"""A small x86-64 flavoured instruction set: parser and concrete semantics.

Sixteen 64-bit registers with the usual 32/16/8-bit low aliases (no ah/bh/ch/dh),
byte-addressable little-endian memory made of two windows (a 64 KiB stack
below ``STACK_TOP`` and a 64 KiB data area at ``DATA_BASE``), and CF/ZF/SF/OF
flags.  Program text is one instruction per line::

    [label:] mnemonic [op1[, op2]]    # comment

Memory operands are written ``BYTE|WORD|DWORD|QWORD PTR [reg+disp]``; the size
keyword may be dropped when the other operand is a register.

Besides the usual instructions there are intrinsics standing in for library
calls: ``read_<k><bits> dest`` (k = ``i`` signed text-to-int, ``u`` unsigned,
``x`` raw bytes with no signedness) consumes ``bits/8`` little-endian bytes of
input, ``print src`` writes a value out, and ``exit`` stops the program.
Intrinsics follow the call convention for ``rax``: a read into some other
destination leaves 1 in ``rax`` (items converted), ``print`` leaves 0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

__all__ = [
    "REGISTERS", "RegisterSlice", "Mem", "Imm", "Label", "Instruction", "Program",
    "ParseError", "MachineTrap", "Machine", "reg_slice", "parse_program",
    "step_concrete", "condition_holds", "STACK_TOP", "STACK_SIZE", "DATA_BASE",
    "DATA_SIZE", "JCC", "SIGNED_JCC", "UNSIGNED_JCC",
]

REGISTERS = ("rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp",
             "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15")

STACK_TOP = 0x7FFF_0000
STACK_SIZE = 0x1_0000
DATA_BASE = 0x0060_0000
DATA_SIZE = 0x1_0000

SIGNED_JCC = frozenset({"jl", "jle", "jg", "jge"})
UNSIGNED_JCC = frozenset({"jb", "jbe", "ja", "jae"})
JCC = SIGNED_JCC | UNSIGNED_JCC | {"je", "jne"}
_JCC_ALIASES = {"jz": "je", "jnz": "jne", "jnae": "jb", "jnb": "jae", "jc": "jb", "jnc": "jae",
                "jna": "jbe", "jnbe": "ja", "jnge": "jl", "jnl": "jge", "jng": "jle", "jnle": "jg"}

_SIZE_WORDS = {"byte": 1, "word": 2, "dword": 4, "qword": 8}
_READ = re.compile(r"read_([iux])(8|16|32|64)\Z")


@dataclass(frozen=True)
class RegisterSlice:
    reg: str
    high: int
    low: int
    name: str = field(default="", compare=False)

    @property
    def size(self) -> int:
        return (self.high - self.low + 1) // 8

    @property
    def width(self) -> int:
        return self.high - self.low + 1

    @property
    def is_full(self) -> bool:
        return self.high == 63

    def __str__(self) -> str:
        return self.name or f"{self.reg}[{self.high}:{self.low}]"


def _build_aliases() -> dict[str, RegisterSlice]:
    table = {}
    legacy = {"rax": ("eax", "ax", "al"), "rbx": ("ebx", "bx", "bl"),
              "rcx": ("ecx", "cx", "cl"), "rdx": ("edx", "dx", "dl"),
              "rsi": ("esi", "si", "sil"), "rdi": ("edi", "di", "dil"),
              "rbp": ("ebp", "bp", "bpl"), "rsp": ("esp", "sp", "spl")}
    for reg in REGISTERS:
        names = legacy.get(reg) or (reg + "d", reg + "w", reg + "b")
        table[reg] = RegisterSlice(reg, 63, 0, reg)
        for name, high in zip(names, (31, 15, 7)):
            table[name] = RegisterSlice(reg, high, 0, name)
    return table


_ALIASES = _build_aliases()


def reg_slice(name: str) -> RegisterSlice:
    """``"ax"`` -> ``RegisterSlice("rax", 15, 0)``."""
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown register {name!r}") from None


@dataclass(frozen=True)
class Mem:
    base: RegisterSlice | None
    disp: int
    size: int | None

    def __str__(self) -> str:
        word = {1: "BYTE", 2: "WORD", 4: "DWORD", 8: "QWORD"}.get(self.size, "")
        inner = str(self.base) if self.base else ""
        if self.disp or not self.base:
            sign = "-" if self.disp < 0 else ("+" if self.base else "")
            inner += f"{sign}{abs(self.disp):#x}"
        return f"{word} PTR [{inner}]".strip()


@dataclass(frozen=True)
class Imm:
    value: int

    def __str__(self) -> str:
        return hex(self.value)


@dataclass(frozen=True)
class Label:
    name: str
    target: int = -1


Operand = RegisterSlice | Mem | Imm | Label


@dataclass(frozen=True)
class Instruction:
    index: int
    mnemonic: str
    operands: tuple
    label: str | None = None
    line: int = 0
    text: str = ""

    def __str__(self) -> str:
        return self.text or f"{self.mnemonic} " + ", ".join(map(str, self.operands))

    @property
    def read_kind(self) -> tuple[str, int] | None:
        m = _READ.match(self.mnemonic)
        return (m.group(1), int(m.group(2))) if m else None


@dataclass(frozen=True)
class Program:
    instructions: tuple[Instruction, ...]
    labels: dict
    entry: int = 0

    def __len__(self) -> int:
        return len(self.instructions)

    def __getitem__(self, i: int) -> Instruction:
        return self.instructions[i]

    def resolve(self, site: int | str) -> int:
        """Instruction index of ``site`` (an index or a label)."""
        if isinstance(site, int):
            return site
        if site.lstrip("-").isdigit():
            return int(site)
        return self.labels[site]


class ParseError(ValueError):
    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        super().__init__("\n".join(f"line {n}: {msg}" for n, msg in errors))


class MachineTrap(RuntimeError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"insn {index}: {message}")
        self.index = index


# ----------------------------------------------------------------------------
# parsing

_MEM_RE = re.compile(
    r"(?:(?P<size>byte|word|dword|qword)\s+ptr\s*)?\[\s*(?P<body>[^\]]*)\]\Z", re.I)
_LABEL_RE = re.compile(r"^\s*([A-Za-z_.][\w.]*)\s*:")

_ARITH = {"add", "sub", "and", "or", "xor"}
_SHIFT = {"shl", "shr", "sar"}
_NO_OPERANDS = {"cbw", "cwde", "cdqe", "ret", "exit", "nop"}


def _parse_operand(tok: str) -> Operand:
    t = tok.strip()
    low = t.lower()
    if low in _ALIASES:
        return _ALIASES[low]
    m = _MEM_RE.match(t)
    if m:
        size = _SIZE_WORDS[m.group("size").lower()] if m.group("size") else None
        body = m.group("body").replace(" ", "")
        parts = re.match(r"([A-Za-z]\w*)?(?:([+-])?(\w+))?\Z", body)
        if not parts:
            raise ValueError(f"bad memory operand {t!r}")
        base_name, sign, num = parts.groups()
        if base_name and base_name.lower() not in _ALIASES:
            raise ValueError(f"unknown base register {base_name!r}")
        base = _ALIASES[base_name.lower()] if base_name else None
        if base is not None and base.size < 4:
            raise ValueError(f"base register {base} must be 32 or 64 bits")
        disp = int(num, 0) if num else 0
        if sign == "-":
            disp = -disp
        return Mem(base, disp, size)
    try:
        return Imm(int(t, 0))
    except ValueError:
        pass
    if re.fullmatch(r"[A-Za-z_.][\w.]*", t):
        return Label(t)
    raise ValueError(f"cannot parse operand {t!r}")


def _split_operands(rest: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in rest:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur)
    return [o.strip() for o in out]


def _fits(value: int, size: int) -> bool:
    return -(1 << (8 * size - 1)) <= value < (1 << (8 * size))


def _size_of(op) -> int | None:
    if isinstance(op, RegisterSlice):
        return op.size
    if isinstance(op, Mem):
        return op.size
    return None


def _check(mn: str, ops: list) -> list:
    """Validate operand kinds/sizes; returns operands with memory sizes filled in."""
    n = len(ops)

    def want(count):
        if n != count:
            raise ValueError(f"{mn} takes {count} operand(s), got {n}")

    def fill(pair):
        a, b = pair
        sa, sb = _size_of(a), _size_of(b)
        if isinstance(a, Mem) and sa is None and sb is not None:
            a = Mem(a.base, a.disp, sb)
        if isinstance(b, Mem) and sb is None and sa is not None:
            b = Mem(b.base, b.disp, sa)
        return [a, b]

    def rm(op, what):
        if not isinstance(op, (RegisterSlice, Mem)):
            raise ValueError(f"{mn}: {what} must be a register or memory operand")
        if isinstance(op, Mem) and op.size is None:
            raise ValueError(f"{mn}: memory operand needs a size (BYTE/WORD/DWORD/QWORD PTR)")

    if mn in _NO_OPERANDS:
        want(0)
        return ops
    if mn == "mov" or mn in _ARITH or mn in ("cmp", "test"):
        want(2)
        ops = fill(ops)
        dst, src = ops
        rm(dst, "destination")
        if isinstance(dst, Mem) and isinstance(src, Mem):
            raise ValueError(f"{mn}: two memory operands")
        if mn in _ARITH and not isinstance(dst, RegisterSlice):
            raise ValueError(f"{mn}: destination must be a register")
        if isinstance(src, Imm):
            if not _fits(src.value, dst.size):
                raise ValueError(f"{mn}: immediate {src.value:#x} does not fit {dst.size} bytes")
        else:
            rm(src, "source")
            if src.size != dst.size:
                raise ValueError(f"{mn}: operand sizes differ ({dst.size} vs {src.size})")
        return ops
    if mn in ("movsx", "movzx"):
        want(2)
        dst, src = ops
        if not isinstance(dst, RegisterSlice):
            raise ValueError(f"{mn}: destination must be a register")
        rm(src, "source")
        if src.size >= dst.size:
            raise ValueError(f"{mn}: source must be narrower than destination")
        return ops
    if mn == "lea":
        want(2)
        dst, src = ops
        if not isinstance(dst, RegisterSlice) or dst.size < 4 or not isinstance(src, Mem):
            raise ValueError("lea: expected 32/64-bit register and memory operand")
        return [dst, Mem(src.base, src.disp, dst.size)]
    if mn == "not":
        want(1)
        if not isinstance(ops[0], RegisterSlice):
            raise ValueError("not: operand must be a register")
        return ops
    if mn in _SHIFT:
        want(2)
        dst, cnt = ops
        if not isinstance(dst, RegisterSlice) or not isinstance(cnt, Imm):
            raise ValueError(f"{mn}: expected register and immediate count")
        if not 1 <= cnt.value < dst.width:
            raise ValueError(f"{mn}: shift count {cnt.value} out of range")
        return ops
    if mn == "push":
        want(1)
        op = ops[0]
        if isinstance(op, Label):
            raise ValueError("push: label operand")
        if isinstance(op, (RegisterSlice, Mem)):
            rm(op, "operand")
            if op.size == 1:
                raise ValueError("push: 8-bit operand")
        elif not _fits(op.value, 8):
            raise ValueError("push: immediate too large")
        return ops
    if mn == "pop":
        want(1)
        op = ops[0]
        rm(op, "operand")
        if op.size == 1:
            raise ValueError("pop: 8-bit operand")
        return ops
    if mn in ("jmp", "call") or mn in JCC:
        want(1)
        if not isinstance(ops[0], Label):
            raise ValueError(f"{mn}: target must be a label")
        return ops
    if _READ.match(mn):
        want(1)
        rm(ops[0], "destination")
        bits = int(_READ.match(mn).group(2))
        if isinstance(ops[0], Mem) and ops[0].size is None:
            ops = [Mem(ops[0].base, ops[0].disp, bits // 8)]
        if ops[0].size != bits // 8:
            raise ValueError(f"{mn}: destination must be {bits // 8} bytes")
        return ops
    if mn == "print":
        want(1)
        if isinstance(ops[0], Label):
            raise ValueError("print: label operand")
        if isinstance(ops[0], Mem):
            rm(ops[0], "operand")
        return ops
    raise ValueError(f"unknown mnemonic {mn!r}")


def parse_program(text: str) -> Program:
    """Parse program text; raises :class:`ParseError` listing every bad line."""
    errors: list[tuple[int, str]] = []
    raw: list[tuple[int, str, list, str | None, str]] = []
    labels: dict[str, int] = {}
    pending: list[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        while True:
            m = _LABEL_RE.match(body)
            if not m:
                break
            name = m.group(1)
            if name in labels or name in pending:
                errors.append((lineno, f"duplicate label {name!r}"))
            pending.append(name)
            body = body[m.end():].strip()
        if not body:
            continue
        parts = body.split(None, 1)
        mn = parts[0].lower()
        mn = _JCC_ALIASES.get(mn, mn)
        try:
            ops = [_parse_operand(o) for o in _split_operands(parts[1])] if len(parts) > 1 else []
            ops = _check(mn, ops)
        except ValueError as exc:
            errors.append((lineno, str(exc)))
            pending.clear()
            continue
        index = len(raw)
        for name in pending:
            labels[name] = index
        raw.append((lineno, mn, ops, pending[0] if pending else None, body))
        pending = []
    for name in pending:
        labels[name] = len(raw)

    insns = []
    for index, (lineno, mn, ops, label, body) in enumerate(raw):
        resolved = []
        for op in ops:
            if isinstance(op, Label):
                if op.name not in labels or labels[op.name] >= len(raw):
                    errors.append((lineno, f"unresolved label {op.name!r}"))
                    continue
                op = Label(op.name, labels[op.name])
            resolved.append(op)
        insns.append(Instruction(index, mn, tuple(resolved), label, lineno, body))
    if not raw and not errors:
        errors.append((0, "empty program"))
    if errors:
        raise ParseError(sorted(errors))
    entry = labels.get("main", 0)
    return Program(tuple(insns), labels, entry)


# ----------------------------------------------------------------------------
# concrete machine

def _mask(bits: int) -> int:
    return (1 << bits) - 1


class Memory:
    def __init__(self):
        self.windows = [(STACK_TOP - STACK_SIZE, bytearray(STACK_SIZE)),
                        (DATA_BASE, bytearray(DATA_SIZE))]

    def _window(self, addr: int, n: int) -> tuple[bytearray, int]:
        for base, buf in self.windows:
            if base <= addr and addr + n <= base + len(buf):
                return buf, addr - base
        raise MachineTrap(f"memory access of {n} bytes at {addr:#x} outside valid windows")

    def read(self, addr: int, n: int) -> int:
        buf, off = self._window(addr, n)
        return int.from_bytes(buf[off:off + n], "little")

    def write(self, addr: int, n: int, value: int) -> None:
        buf, off = self._window(addr, n)
        buf[off:off + n] = (value & _mask(8 * n)).to_bytes(n, "little")


@dataclass
class ReadEvent:
    offset: int
    nbytes: int
    value: int
    short: bool


class Machine:
    """Concrete register file, flags, memory, input cursor and control state."""

    def __init__(self, program: Program, data: bytes = b""):
        self.program = program
        self.regs = {r: 0 for r in REGISTERS}
        self.regs["rsp"] = STACK_TOP
        self.regs["rbp"] = STACK_TOP
        self.flags = {"CF": 0, "ZF": 0, "SF": 0, "OF": 0}
        self.memory = Memory()
        self.pc = program.entry
        self.depth = 0
        self.halted = False
        self.exit_reason: str | None = None
        self.input = bytes(data)
        self.cursor = 0
        self.output: list[int] = []
        self.diagnostics: list[str] = []
        self.last_read: ReadEvent | None = None
        self.steps = 0

    def get(self, sl: RegisterSlice) -> int:
        return (self.regs[sl.reg] >> sl.low) & _mask(sl.width)

    def set(self, sl: RegisterSlice, value: int) -> None:
        value &= _mask(sl.width)
        if sl.width >= 32:
            # 32-bit writes clear the upper half, as on x86-64
            self.regs[sl.reg] = value
        else:
            keep = self.regs[sl.reg] & ~_mask(sl.width) & _mask(64)
            self.regs[sl.reg] = keep | value

    def address(self, mem: Mem) -> int:
        base = self.get(mem.base) if mem.base is not None else 0
        return (base + mem.disp) & _mask(64)

    def load(self, op, size: int | None = None) -> int:
        if isinstance(op, RegisterSlice):
            return self.get(op)
        if isinstance(op, Mem):
            return self.memory.read(self.address(op), op.size)
        return op.value & _mask(8 * (size or 8))

    def store(self, op, value: int) -> None:
        if isinstance(op, RegisterSlice):
            self.set(op, value)
        else:
            self.memory.write(self.address(op), op.size, value)

    def push(self, value: int, size: int) -> None:
        self.regs["rsp"] = (self.regs["rsp"] - size) & _mask(64)
        self.memory.write(self.regs["rsp"], size, value)

    def pop(self, size: int) -> int:
        value = self.memory.read(self.regs["rsp"], size)
        self.regs["rsp"] = (self.regs["rsp"] + size) & _mask(64)
        return value

    def consume(self, n: int) -> ReadEvent:
        chunk = self.input[self.cursor:self.cursor + n]
        short = len(chunk) < n
        if short:
            self.diagnostics.append(
                f"input exhausted at offset {self.cursor}: wanted {n} bytes, zero-filled")
        event = ReadEvent(self.cursor, n, int.from_bytes(chunk.ljust(n, b"\0"), "little"), short)
        self.cursor += n
        self.last_read = event
        return event


def _msb(value: int, bits: int) -> int:
    return (value >> (bits - 1)) & 1


def _flags_sub(m: Machine, a: int, b: int, bits: int) -> int:
    r = (a - b) & _mask(bits)
    m.flags.update(CF=int(a < b), ZF=int(r == 0), SF=_msb(r, bits),
                   OF=_msb((a ^ b) & (a ^ r), bits))
    return r


def _flags_add(m: Machine, a: int, b: int, bits: int) -> int:
    r = (a + b) & _mask(bits)
    m.flags.update(CF=int(a + b > _mask(bits)), ZF=int(r == 0), SF=_msb(r, bits),
                   OF=_msb(~(a ^ b) & (a ^ r), bits))
    return r


def _flags_logic(m: Machine, r: int, bits: int, cf: int = 0) -> int:
    m.flags.update(CF=cf, ZF=int(r == 0), SF=_msb(r, bits), OF=0)
    return r


def condition_holds(flags: dict, mnemonic: str) -> bool:
    cf, zf, sf, of = flags["CF"], flags["ZF"], flags["SF"], flags["OF"]
    return {
        "je": zf == 1, "jne": zf == 0,
        "jl": sf != of, "jge": sf == of,
        "jle": zf == 1 or sf != of, "jg": zf == 0 and sf == of,
        "jb": cf == 1, "jae": cf == 0,
        "jbe": cf == 1 or zf == 1, "ja": cf == 0 and zf == 0,
    }[mnemonic]


def _sign_extend(value: int, from_bits: int, to_bits: int) -> int:
    if _msb(value, from_bits):
        value |= _mask(to_bits) ^ _mask(from_bits)
    return value


def step_concrete(m: Machine, insn: Instruction) -> Machine:
    """Execute one instruction on ``m`` in place and return it."""
    mn = insn.mnemonic
    ops = insn.operands
    nxt = insn.index + 1
    try:
        if mn == "mov":
            dst, src = ops
            m.store(dst, m.load(src, dst.size))
        elif mn in ("movsx", "movzx"):
            dst, src = ops
            v = m.load(src)
            if mn == "movsx":
                v = _sign_extend(v, 8 * src.size, 8 * dst.size)
            m.set(dst, v)
        elif mn == "lea":
            dst, src = ops
            m.set(dst, m.address(src))
        elif mn in ("cbw", "cwde", "cdqe"):
            frm = {"cbw": 8, "cwde": 16, "cdqe": 32}[mn]
            dst = reg_slice({"cbw": "ax", "cwde": "eax", "cdqe": "rax"}[mn])
            m.set(dst, _sign_extend(m.regs["rax"] & _mask(frm), frm, 2 * frm))
        elif mn in _ARITH or mn in ("cmp", "test"):
            dst, src = ops
            bits = 8 * dst.size
            a, b = m.load(dst), m.load(src, dst.size)
            if mn in ("add",):
                r = _flags_add(m, a, b, bits)
            elif mn in ("sub", "cmp"):
                r = _flags_sub(m, a, b, bits)
            elif mn in ("and", "test"):
                r = _flags_logic(m, a & b, bits)
            elif mn == "or":
                r = _flags_logic(m, a | b, bits)
            else:
                r = _flags_logic(m, a ^ b, bits)
            if mn not in ("cmp", "test"):
                m.set(dst, r)
        elif mn == "not":
            m.set(ops[0], ~m.get(ops[0]))
        elif mn in _SHIFT:
            dst, cnt = ops
            bits, k = dst.width, cnt.value
            a = m.get(dst)
            if mn == "shl":
                r, cf = (a << k) & _mask(bits), (a >> (bits - k)) & 1
            elif mn == "shr":
                r, cf = a >> k, (a >> (k - 1)) & 1
            else:
                r = (_sign_extend(a, bits, bits + k) >> k) & _mask(bits)
                cf = (a >> (k - 1)) & 1
            m.set(dst, _flags_logic(m, r, bits, cf))
        elif mn == "push":
            op = ops[0]
            size = 8 if isinstance(op, Imm) else op.size
            m.push(m.load(op, size), size)
        elif mn == "pop":
            op = ops[0]
            value = m.pop(op.size)
            m.store(op, value)
        elif mn == "call":
            m.push(nxt, 8)
            m.depth += 1
            nxt = ops[0].target
        elif mn == "ret":
            if m.depth == 0:
                m.halted, m.exit_reason = True, "ret"
            else:
                nxt = m.pop(8)
                m.depth -= 1
        elif mn == "jmp":
            nxt = ops[0].target
        elif mn in JCC:
            if condition_holds(m.flags, mn):
                nxt = ops[0].target
        elif insn.read_kind:
            _, bits = insn.read_kind
            event = m.consume(bits // 8)
            m.store(ops[0], event.value)
            if not (isinstance(ops[0], RegisterSlice) and ops[0].reg == "rax"):
                m.regs["rax"] = 1
        elif mn == "print":
            op = ops[0]
            m.output.append(m.load(op, 8))
            m.regs["rax"] = 0
        elif mn == "exit":
            m.halted, m.exit_reason = True, "exit"
        elif mn == "nop":
            pass
        else:
            raise MachineTrap(f"no semantics for {mn}", insn.index)
    except MachineTrap as trap:
        if trap.index is None:
            raise MachineTrap(str(trap), insn.index) from None
        raise
    m.steps += 1
    if not m.halted:
        if not 0 <= nxt < len(m.program):
            m.halted, m.exit_reason = True, "fell-off"
        m.pc = nxt
    return m
