# coding: utf-8

# # Bitvector formulas
#
# Every symbolic value in the engine is a tree of fixed-width bitvector
# operations. This notebook builds a few, evaluates them, and prints the
# SMT-LIB text the solver would hand to an external tool.

# In[1]:

import numpy as np

from numtrunc import bitvec as bv


# A 32-bit input, its low 16 bits, and the sign extension back to 32 bits.

# In[2]:

x = bv.var(0, "x", 32)
low = bv.extract(15, 0, x)
back = bv.sext(16, low)
print(back, back.width)


# Evaluation is modular: 40000 fits in 32 bits, but not in a signed 16-bit value.

# In[3]:

print(bv.evaluate(back, {0: 40000}), bv.to_signed(bv.evaluate(back, {0: 40000}), 32))


# The same formula can be evaluated for a whole column of inputs with numpy.

# In[4]:

values = np.arange(0, 1 << 20, 4099, dtype=np.uint64)
(lost,) = bv.evaluate_batch([bv.ne(back, x)], {0: values}, len(values))
print(f"{int(lost.sum())} of {len(values)} samples change when narrowed to 16 bits")


# Shared subterms are bound once in the SMT-LIB output.

# In[5]:

twice = bv.add(back, back)
print(bv.to_smtlib([bv.eq(twice, bv.const(0, 32))]))
