# coding: utf-8

# # The mini x86-64 machine
#
# Programs are Intel-syntax text. The machine models subregister aliasing, a
# downward stack, flags and a handful of input intrinsics.

# In[1]:

from numtrunc.isa import Machine, parse_program, reg_slice, step_concrete


# In[2]:

program = parse_program("""
main:
    read_i32 DWORD PTR [rsp-0x8]
    mov eax, DWORD PTR [rsp-0x8]
    mov WORD PTR [rsp-0xa], ax
    movsx ecx, WORD PTR [rsp-0xa]
    print ecx
    exit
""")
for insn in program.instructions:
    print(insn.index, insn.text)


# Run it on the value 40000 and look at what the 16-bit round trip produced.

# In[3]:

m = Machine(program, (40000).to_bytes(4, "little"))
while not m.halted:
    step_concrete(m, program[m.pc])
print("printed:", m.output, "ecx as signed:", m.get(reg_slice("ecx")) - (1 << 32))


# Writing a 32-bit register clears the upper half; narrower writes keep it.

# In[4]:

m = Machine(parse_program("mov rax, -1\nmov ax, 0\nmov ebx, -1\nexit"))
for _ in range(3):
    step_concrete(m, m.program[m.pc])
print(hex(m.regs["rax"]), hex(m.regs["rbx"]))
