# coding: utf-8

# # A concolic run
#
# The engine executes the program on a seed that causes no trouble, keeps the
# symbolic view alongside, and asks the solver whether a different input would
# lose significant bits at each narrowing it sees.

# In[1]:

from numtrunc.engine import EngineConfig, run
from numtrunc.isa import parse_program


# In[2]:

program = parse_program("""
main:
    read_i32 DWORD PTR [rsp-0x8]
    mov eax, DWORD PTR [rsp-0x8]
    cmp eax, 0
    jl done
    mov WORD PTR [rsp-0xa], ax
done:
    exit
""")
report = run(program, (100).to_bytes(4, "little"), EngineConfig(debug=True))
print(report.trace_length, "steps,", len(report.path_predicate), "branch conditions")
for rec in report.path_predicate:
    print(" ", rec.mnemonic, "taken" if rec.taken else "not taken", rec.condition)


# The seed 100 is harmless. The solver proposes a value that stays on the same
# path (non-negative) and has nonzero bits above bit 15.

# In[3]:

for w in report.warnings:
    print(w.message)
    print("  generated input:", w.input_bytes.hex(), "=", int.from_bytes(w.input_bytes, "little"))
print("agreement violations in debug mode:", report.violations)
