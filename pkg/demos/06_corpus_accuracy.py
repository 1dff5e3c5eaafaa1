# coding: utf-8

# # Corpus accuracy and reproduction
#
# Each corpus case has a seed that runs clean and, for error cases, the
# instructions where truncation is possible. Every warning is checked by
# replaying its generated input and testing the dropped bits concretely.

# In[1]:

from numtrunc.harness import run_corpus

report = run_corpus()
print(report.table())


# In[2]:

for result in report.results:
    for rec, rep in zip(result.records, result.reproductions):
        print(f"{result.case.name:<24} insn {rec['insn']:>2} bits {rec['bits']} "
              f"{rep.reason}, dropped bits {[hex(c) for c in rep.cropped]}")
