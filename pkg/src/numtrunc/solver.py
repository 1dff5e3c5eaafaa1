"""Satisfiability checking for path + security predicates.

The built-in solver enumerates assignments of the symbolic input bytes.
Constraints are first split into groups that share no variables; each group
is then handled on its own:

* if the group's input space fits in the evaluation budget it is enumerated
  exhaustively in lexicographic layout order, so the first model found is
  deterministic and UNSAT answers are exact;
* otherwise a budgeted search over boundary-value candidates (0, 1, powers of
  two and their neighbours, constants occurring in the constraints) followed
  by seeded random sampling looks for a model.  A hit is a genuine model (it
  is re-checked); a miss is UNKNOWN, and the whole job is written out as an
  SMT-LIB2 script for an external solver.
"""

from __future__ import annotations

import logging
import os
import zlib
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .bitvec import BV, BitvecError, constants, evaluate, evaluate_batch, to_smtlib

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 1 << 20
CHUNK = 1 << 16


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class InputSlot:
    """Where a symbolic input variable lives in the input file."""

    var_id: int
    name: str
    width: int
    read_index: int
    offset: int

    @property
    def nbytes(self) -> int:
        return (self.width + 7) // 8


@dataclass(frozen=True)
class SolverJob:
    job_id: str
    constraints: tuple[BV, ...]
    layout: tuple[InputSlot, ...]
    warning_id: str | None = None

    def __post_init__(self):
        ids = [s.var_id for s in self.layout]
        if len(ids) != len(set(ids)):
            raise SolverError(f"job {self.job_id}: duplicate variable in layout")
        known = set(ids)
        for c in self.constraints:
            if c.width != 1:
                raise SolverError(f"job {self.job_id}: constraint of width {c.width}")
            missing = c.variables - known
            if missing:
                raise SolverError(
                    f"job {self.job_id}: variables {sorted(missing)} missing from layout")


@dataclass(frozen=True)
class SolverVerdict:
    status: str                      # "sat" | "unsat" | "unknown"
    assignment: Mapping[int, int] | None = None
    reason: str | None = None        # for unknown: "budget-exceeded"
    smt2_path: str | None = None
    evaluations: int = 0

    @property
    def is_sat(self) -> bool:
        return self.status == "sat"


def _components(constraints: Sequence[BV], order: Sequence[int]) -> list[tuple[list[BV], list[int]]]:
    """Group constraints into variable-disjoint components, in layout order."""
    parent = {v: v for v in order}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for c in constraints:
        vs = list(c.variables)
        for other in vs[1:]:
            a, b = find(vs[0]), find(other)
            if a != b:
                parent[b] = a
    groups: dict[int, tuple[list[BV], list[int]]] = {}
    for c in constraints:
        root = find(next(iter(c.variables)))
        groups.setdefault(root, ([], []))[0].append(c)
    rank = {v: i for i, v in enumerate(order)}
    for root, (_, members) in groups.items():
        members.extend(sorted((v for v in order if find(v) == root), key=rank.__getitem__))
    return sorted(groups.values(), key=lambda g: rank[g[1][0]])


def _all_hold(constraints, env, size) -> np.ndarray:
    ok = np.ones(size, dtype=bool)
    for value in evaluate_batch(constraints, env, size):
        ok &= value.astype(bool)
    return ok


def _decode(index: int, widths: Sequence[int]) -> list[int]:
    vals = []
    for w in reversed(widths):
        vals.append(index & ((1 << w) - 1))
        index >>= w
    return vals[::-1]


def _exhaustive(constraints, var_ids, widths) -> tuple[dict[int, int] | None, int]:
    total_width = sum(widths)
    total = 1 << total_width
    try:
        for start in range(0, total, CHUNK):
            stop = min(total, start + CHUNK)
            idx = np.arange(start, stop, dtype=np.uint64)
            env = {}
            shift = 0
            for vid, w in zip(reversed(var_ids), reversed(widths)):
                env[vid] = (idx >> np.uint64(shift)) & np.uint64((1 << w) - 1)
                shift += w
            hits = np.flatnonzero(_all_hold(constraints, env, stop - start))
            if hits.size:
                return dict(zip(var_ids, _decode(start + int(hits[0]), widths))), start + int(hits[0]) + 1
        return None, total
    except BitvecError:
        pass
    for i in range(total):
        a = dict(zip(var_ids, _decode(i, widths)))
        if all(evaluate(c, a) for c in constraints):
            return a, i + 1
    return None, total


def _candidates(width: int, consts: Sequence[int]) -> list[int]:
    m = (1 << width) - 1
    vals = [0, 1, m, m >> 1, 1 << (width - 1)]
    for k in range(width):
        p = 1 << k
        vals += [p, p - 1, p + 1, m ^ (p - 1), (m ^ (p - 1)) - 1]
    for c in consts:
        c &= m
        vals += [c, (c + 1) & m, (c - 1) & m, (-c) & m, c ^ m]
    out, seen = [], set()
    for v in vals:
        v &= m
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def _guided(constraints, var_ids, widths, budget, seed) -> tuple[dict[int, int] | None, int]:
    consts = constants(*constraints)
    lists = [_candidates(w, consts) for w in widths]
    cap = max(1, budget // 2)
    # shrink the candidate lists (keeping their heads) until the product fits
    while np.prod([len(l) for l in lists], dtype=float) > cap:
        longest = max(range(len(lists)), key=lambda i: len(lists[i]))
        lists[longest] = lists[longest][: max(1, len(lists[longest]) * 3 // 4)]
    arrays = [np.array(l, dtype=np.uint64) for l in lists]
    radices = [len(l) for l in lists]
    total = int(np.prod(radices, dtype=np.int64))
    used = 0
    for start in range(0, total, CHUNK):
        idx = np.arange(start, min(total, start + CHUNK), dtype=np.int64)
        env = {}
        rest = idx
        for vid, arr, r in zip(reversed(var_ids), reversed(arrays), reversed(radices)):
            env[vid] = arr[rest % r]
            rest = rest // r
        size = len(idx)
        used += size
        hits = np.flatnonzero(_all_hold(constraints, env, size))
        if hits.size:
            h = int(hits[0])
            return {vid: int(env[vid][h]) for vid in var_ids}, used

    rng = np.random.default_rng(seed)
    while used < budget:
        size = min(CHUNK, budget - used)
        env = {}
        for vid, w in zip(var_ids, widths):
            raw = rng.integers(0, np.iinfo(np.uint64).max, size=size, dtype=np.uint64, endpoint=True)
            # random bit-length keeps small and large magnitudes both likely
            keep = rng.integers(1, w + 1, size=size).astype(np.uint64)
            env[vid] = raw >> (np.uint64(64) - keep)
        used += size
        hits = np.flatnonzero(_all_hold(constraints, env, size))
        if hits.size:
            h = int(hits[0])
            return {vid: int(env[vid][h]) for vid in var_ids}, used
    return None, used


def solve(job: SolverJob, budget: int = DEFAULT_BUDGET,
          smt2_dir: str | os.PathLike | None = None) -> SolverVerdict:
    """Decide the conjunction of ``job.constraints``.

    SAT models cover exactly the variables occurring in the constraints.
    """
    if budget < 1:
        raise SolverError("budget must be at least 1")
    for c in job.constraints:
        if c.width != 1:
            raise SolverError(f"constraint of width {c.width}, expected 1")

    ground = [c for c in job.constraints if not c.is_symbolic]
    if any(evaluate(c, {}) == 0 for c in ground):
        return SolverVerdict("unsat")
    symbolic = [c for c in job.constraints if c.is_symbolic]
    order = [s.var_id for s in job.layout]
    width_of = {s.var_id: s.width for s in job.layout}

    model: dict[int, int] = {}
    evaluations = 0
    unresolved = False
    for group, var_ids in _components(symbolic, order):
        widths = [width_of[v] for v in var_ids]
        if sum(widths) < 64 and (1 << sum(widths)) <= budget:
            found, n = _exhaustive(group, var_ids, widths)
            evaluations += n
            if found is None:
                return SolverVerdict("unsat", evaluations=evaluations)
        else:
            seed = zlib.crc32(f"{job.job_id}/{var_ids}".encode())
            found, n = _guided(group, var_ids, widths, budget, seed)
            evaluations += n
            if found is None:
                unresolved = True
                continue
        model.update(found)

    if unresolved:
        path = None
        if smt2_dir is not None:
            Path(smt2_dir).mkdir(parents=True, exist_ok=True)
            path = str(Path(smt2_dir) / f"{job.job_id}.smt2")
            Path(path).write_text(to_smtlib(job.constraints))
        log.info("job %s: budget exceeded, smt2 at %s", job.job_id, path)
        return SolverVerdict("unknown", reason="budget-exceeded", smt2_path=path,
                             evaluations=evaluations)

    for c in job.constraints:
        if evaluate(c, model) != 1:
            raise SolverError(f"job {job.job_id}: model fails re-check on {c!r}")
    return SolverVerdict("sat", assignment=dict(sorted(model.items())), evaluations=evaluations)


def model_to_input_bytes(assignment: Mapping[int, int], layout: Sequence[InputSlot],
                         seed: bytes = b"") -> bytes:
    """Patch the seed input with the model's values (little-endian per slot)."""
    out = bytearray(seed)
    for slot in layout:
        if slot.var_id not in assignment:
            raise SolverError(f"model has no value for {slot.name}")
        end = slot.offset + slot.nbytes
        if len(out) < end:
            out.extend(bytes(end - len(out)))
        out[slot.offset:end] = assignment[slot.var_id].to_bytes(slot.nbytes, "little")
    return bytes(out)


@dataclass
class SolverQueue:
    """Jobs submitted during a run; solved inline or by a thread pool.

    Results are keyed by job id so the completion order never leaks into
    reports.
    """

    budget: int = DEFAULT_BUDGET
    smt2_dir: str | os.PathLike | None = None
    workers: int = 1
    jobs: list[SolverJob] = field(default_factory=list)
    _futures: dict[str, Future] = field(default_factory=dict, repr=False)
    _pool: ThreadPoolExecutor | None = field(default=None, repr=False)

    def submit(self, job: SolverJob) -> None:
        self.jobs.append(job)
        if self.workers > 1:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=self.workers)
            self._futures[job.job_id] = self._pool.submit(solve, job, self.budget, self.smt2_dir)

    def drain(self) -> dict[str, SolverVerdict]:
        results = {}
        for job in self.jobs:
            if job.job_id in self._futures:
                results[job.job_id] = self._futures[job.job_id].result()
            else:
                results[job.job_id] = solve(job, self.budget, self.smt2_dir)
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None
        return dict(sorted(results.items()))
