"""Concolic detection of numeric truncation (CWE-197) in a mini x86-64 ISA."""

from .bitvec import BV, evaluate, to_smtlib
from .checker import TruncationSite, TruncationWarning, build_predicate, infer_signedness
from .engine import BranchRecord, EngineConfig, RunReport, run
from .harness import AccuracyReport, load_manifest, reproduce, run_corpus
from .isa import Program, parse_program
from .shadow import ShadowTracker
from .solver import SolverJob, SolverVerdict, solve

__all__ = [
    "BV", "evaluate", "to_smtlib", "TruncationSite", "TruncationWarning", "build_predicate",
    "infer_signedness", "BranchRecord", "EngineConfig", "RunReport", "run", "AccuracyReport",
    "load_manifest", "reproduce", "run_corpus", "Program", "parse_program", "ShadowTracker",
    "SolverJob", "SolverVerdict", "solve",
]
__version__ = "0.1.0"
