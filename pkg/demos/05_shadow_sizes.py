# coding: utf-8

# # Tracking the real size of values
#
# A value read as 32 bits and narrowed to 8 in a caller is later widened and
# narrowed again inside the callee. Only the caller loses information. The
# shadow maps remember how many bytes of each location are meaningful, so the
# callee's narrow stores are not reported.

# In[1]:

from numtrunc.engine import EngineConfig, run
from numtrunc.harness import shipped_manifest
from numtrunc.isa import parse_program

corpus = shipped_manifest().parent
program = parse_program((corpus / "fp_trap_args.asm").read_text())
seed = (corpus / "seeds" / "fp_trap_args.bin").read_bytes()


# In[2]:

report = run(program, seed, EngineConfig(trace_shadow=True))
for line in report.shadow_trace[4:12]:
    index = int(line.split(":")[0])
    print(f"{program[index].text:<36} {line.split(': ', 1)[1]}")


# In[3]:

print("solver jobs:", [j.job_id for j in report.jobs])
print("warnings at:", [w.site.text for w in report.warnings])
