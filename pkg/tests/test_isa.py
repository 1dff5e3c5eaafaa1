from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from numtrunc.isa import (
    STACK_TOP, Imm, Machine, MachineTrap, Mem, ParseError, condition_holds, parse_program,
    reg_slice, step_concrete,
)


def run_concrete(text: str, data: bytes = b"", limit: int = 10_000) -> Machine:
    prog = parse_program(text)
    m = Machine(prog, data)
    while not m.halted and m.steps < limit:
        step_concrete(m, prog[m.pc])
    return m


def test_register_aliases():
    assert reg_slice("ax") == reg_slice("AX")
    ax = reg_slice("ax")
    assert (ax.reg, ax.high, ax.low, ax.size) == ("rax", 15, 0, 2)
    assert reg_slice("r9b").reg == "r9" and reg_slice("r9b").size == 1
    assert reg_slice("sil").reg == "rsi"
    assert reg_slice("rdx").is_full and not reg_slice("edx").is_full
    with pytest.raises(ValueError):
        reg_slice("ah")


def test_parse_basic_program():
    prog = parse_program("""
    # comment line
    main:   mov eax, 5        # trailing comment
            MOV WORD PTR [rbp-0x8], ax
    l1: l2: jz main
            ret
    """)
    assert len(prog) == 4 and prog.entry == 0
    assert prog.labels == {"main": 0, "l1": 2, "l2": 2}
    mov = prog[1]
    assert mov.operands[0] == Mem(reg_slice("rbp"), -8, 2) and mov.line == 4
    assert prog[2].mnemonic == "je" and prog[2].operands[0].target == 0
    assert prog.resolve("l1") == 2 and prog.resolve("3") == 3 and prog.resolve(1) == 1


def test_memory_size_inferred_from_register():
    prog = parse_program("mov [rbp-4], eax\nmov ecx, [rsp+8]\nexit")
    assert prog[0].operands[0].size == 4 and prog[1].operands[1].size == 4


def test_entry_is_main_label():
    prog = parse_program("helper: ret\nmain: exit")
    assert prog.entry == 1


@pytest.mark.parametrize("text, fragment", [
    ("mov eax, bx", "sizes differ"),
    ("mov [rbp-4], 5", "needs a size"),
    ("mov DWORD PTR [rbp-4], DWORD PTR [rbp-8]", "two memory"),
    ("add DWORD PTR [rbp-4], eax", "must be a register"),
    ("mov al, 0x1ff", "does not fit"),
    ("frob eax", "unknown mnemonic"),
    ("jmp nowhere", "unresolved label"),
    ("push al", "8-bit"),
    ("shl eax, 40", "out of range"),
    ("read_i32 ax", "must be 4 bytes"),
    ("movsx eax, ecx", "narrower"),
    ("x: nop\nx: nop", "duplicate label"),
    ("", "empty program"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ParseError) as info:
        parse_program(text)
    assert fragment in str(info.value)
    assert str(info.value).startswith("line ")


def test_parse_error_lists_every_bad_line():
    with pytest.raises(ParseError) as info:
        parse_program("mov eax, 1\nfrob\nmov eax, bx\nexit")
    assert [n for n, _ in info.value.errors] == [2, 3]


def test_subregister_writes():
    m = run_concrete("""
        mov rax, 0x1122334455667788
        mov ax, 0xaaaa
        mov rbx, 0x1122334455667788
        mov bl, 0xbb
        mov rcx, 0x1122334455667788
        mov ecx, 0xcccccccc
        exit
    """)
    assert m.regs["rax"] == 0x112233445566AAAA
    assert m.regs["rbx"] == 0x11223344556677BB
    assert m.regs["rcx"] == 0x00000000CCCCCCCC      # 32-bit writes clear the upper half


def test_extensions_and_conversions():
    m = run_concrete("""
        mov eax, 0x80
        movsx ecx, al
        movzx edx, al
        mov eax, 0x8000
        cwde
        mov rbx, rax
        mov eax, 0xf0
        cbw
        exit
    """)
    assert m.regs["rcx"] == 0xFFFFFF80 and m.regs["rdx"] == 0x80
    assert m.regs["rbx"] == 0xFFFF8000
    assert m.regs["rax"] & 0xFFFF == 0xFFF0


def test_little_endian_memory_and_stack():
    m = run_concrete("""
        mov DWORD PTR [rsp-0x10], 0x11223344
        mov al, BYTE PTR [rsp-0x10]
        mov bx, WORD PTR [rsp-0xe]
        push 0x55
        pop rcx
        exit
    """)
    assert m.get(reg_slice("al")) == 0x44 and m.get(reg_slice("bx")) == 0x1122
    assert m.regs["rcx"] == 0x55 and m.regs["rsp"] == STACK_TOP


def test_call_ret_and_depth():
    m = run_concrete("""
    main:
        call f
        print eax
        exit
    f:
        mov eax, 7
        ret
    """)
    assert m.output == [7] and m.depth == 0 and m.exit_reason == "exit"


def test_ret_from_entry_and_fall_off():
    assert run_concrete("ret").exit_reason == "ret"
    assert run_concrete("nop").exit_reason == "fell-off"


def test_reads_and_short_input():
    m = run_concrete("read_i32 DWORD PTR [rsp-8]\nmov ebx, DWORD PTR [rsp-8]\nread_u16 cx\nexit",
                     b"\x40\x9c\x00\x00\x01")
    assert m.regs["rbx"] == 40000
    assert m.get(reg_slice("cx")) == 1        # zero-filled high byte
    assert m.regs["rax"] == 1                 # reads into other registers leave 1 in rax
    assert m.diagnostics and "zero-filled" in m.diagnostics[0]


def test_trap_outside_memory():
    prog = parse_program("mov eax, DWORD PTR [rax]\nexit")
    with pytest.raises(MachineTrap) as info:
        step_concrete(Machine(prog), prog[0])
    assert info.value.index == 0


_JCC = ["je", "jne", "jl", "jle", "jg", "jge", "jb", "jbe", "ja", "jae"]


def _reference(mn, a, b, bits):
    sa = a - (1 << bits) if a >> (bits - 1) else a
    sb = b - (1 << bits) if b >> (bits - 1) else b
    return {"je": a == b, "jne": a != b, "jl": sa < sb, "jle": sa <= sb, "jg": sa > sb,
            "jge": sa >= sb, "jb": a < b, "jbe": a <= b, "ja": a > b, "jae": a >= b}[mn]


@settings(max_examples=300, deadline=None)
@given(bits=st.sampled_from([8, 16, 32, 64]), data=st.data())
def test_cmp_flags_match_integer_comparisons(bits, data):
    a = data.draw(st.integers(0, (1 << bits) - 1))
    b = data.draw(st.one_of(st.integers(0, (1 << bits) - 1), st.sampled_from([0, 1, a])))
    name = {8: "al", 16: "ax", 32: "eax", 64: "rax"}[bits]
    other = {8: "bl", 16: "bx", 32: "ebx", 64: "rbx"}[bits]
    prog = parse_program(f"cmp {name}, {other}\nexit")
    m = Machine(prog)
    m.regs["rax"], m.regs["rbx"] = a, b
    step_concrete(m, prog[0])
    for mn in _JCC:
        assert condition_holds(m.flags, mn) == _reference(mn, a, b, bits), mn


@settings(max_examples=200, deadline=None)
@given(a=st.integers(0, 2**32 - 1), b=st.integers(0, 2**32 - 1))
def test_add_flags(a, b):
    prog = parse_program("add eax, ebx\nexit")
    m = Machine(prog)
    m.regs["rax"], m.regs["rbx"] = a, b
    step_concrete(m, prog[0])
    r = (a + b) & 0xFFFFFFFF
    assert m.regs["rax"] == r
    assert m.flags["CF"] == int(a + b > 0xFFFFFFFF) and m.flags["ZF"] == int(r == 0)
    sa, sb = (a ^ 0x80000000) - 0x80000000, (b ^ 0x80000000) - 0x80000000
    assert m.flags["OF"] == int(not -2**31 <= sa + sb < 2**31)


@settings(max_examples=200, deadline=None)
@given(v=st.integers(0, 2**16 - 1), k=st.integers(1, 15))
def test_shifts(v, k):
    prog = parse_program(f"shl ax, {k}\nshr bx, {k}\nsar cx, {k}\nexit")
    m = Machine(prog)
    for r in ("rax", "rbx", "rcx"):
        m.regs[r] = v
    for insn in prog.instructions[:3]:
        step_concrete(m, insn)
    signed = v - (1 << 16) if v >> 15 else v
    assert m.get(reg_slice("ax")) == (v << k) & 0xFFFF
    assert m.get(reg_slice("bx")) == v >> k
    assert m.get(reg_slice("cx")) == (signed >> k) & 0xFFFF
    assert m.flags["CF"] == (v >> (k - 1)) & 1


def test_imm_operand_str():
    assert str(Imm(16)) == "0x10"
    assert str(Mem(reg_slice("rbp"), -10, 2)) == "WORD PTR [rbp-0xa]"


def test_cmp_flags_exhaustive_8_bit():
    prog = parse_program("cmp al, bl\nexit")
    m = Machine(prog)
    bad = []
    for a in range(256):
        for b in range(256):
            m.regs["rax"], m.regs["rbx"] = a, b
            step_concrete(m, prog[0])
            bad += [(a, b, mn) for mn in _JCC if condition_holds(m.flags, mn) != _reference(mn, a, b, 8)]
    assert bad == []
