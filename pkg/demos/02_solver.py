# coding: utf-8

# # Solving bitvector constraints
#
# The built-in solver enumerates small inputs exhaustively and falls back to a
# guided search for wide ones. Jobs carry an input layout so a model can be
# turned straight into an input file.

# In[1]:

from numtrunc import bitvec as bv
from numtrunc.solver import InputSlot, SolverJob, model_to_input_bytes, solve


# Find a 16-bit value whose upper byte is nonzero while the value stays below 0x300.

# In[2]:

x = bv.var(0, "x", 16)
layout = (InputSlot(0, "x", 16, 0, 0),)
job = SolverJob("demo", (bv.ne(bv.extract(15, 8, x), bv.zeros(8)),
                         bv.ult(x, bv.const(0x300, 16))), layout)
verdict = solve(job)
print(verdict.status, hex(verdict.assignment[0]), verdict.evaluations, "evaluations")


# Tighten the bound below 0x100 and the system becomes unsatisfiable; the
# whole 16-bit space is checked to prove it.

# In[3]:

job = SolverJob("none", (bv.ne(bv.extract(15, 8, x), bv.zeros(8)),
                         bv.ult(x, bv.const(0x100, 16))), layout)
print(solve(job).status, solve(job).evaluations)


# A model becomes the bytes of an input file, little-endian at the slot offset.

# In[4]:

print(model_to_input_bytes({0: 0x1FF}, layout).hex())
