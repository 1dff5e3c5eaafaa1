from __future__ import annotations

import itertools
import random
from pathlib import Path

import pytest

from numtrunc import bitvec as bv
from numtrunc.harness import shipped_manifest
from numtrunc.isa import parse_program
from numtrunc.solver import InputSlot

CORPUS = shipped_manifest().parent


def corpus_program(name: str):
    return parse_program((CORPUS / f"{name}.asm").read_text())


def corpus_seed(name: str) -> bytes:
    return (CORPUS / "seeds" / f"{name}.bin").read_bytes()


# -- an evaluator written from the textbook definitions, kept apart from bitvec --

def _signed(v, w):
    return v - (1 << w) if v >> (w - 1) & 1 else v


def oracle_eval(e, env) -> int:
    w = e.width
    m = (1 << w) - 1
    k = e.kind
    ev = [oracle_eval(a, env) for a in e.args]
    if k == "var":
        return env[e.params[0]] & m
    if k == "const":
        return e.params[0]
    if k == "extract":
        h, l = e.params
        return (ev[0] >> l) % (1 << (h - l + 1))
    if k == "concat":
        return ev[0] * (1 << e.args[1].width) + ev[1]
    if k == "zext":
        return ev[0]
    if k == "sext":
        return _signed(ev[0], e.args[0].width) % (1 << w)
    if k in ("add", "sub", "and", "or", "xor"):
        a, b = ev
        return {"add": a + b, "sub": a - b, "and": a & b, "or": a | b, "xor": a ^ b}[k] % (1 << w)
    if k == "not":
        return m - ev[0]
    cw = e.args[0].width if e.args else 0
    if k in ("eq", "ne", "ult", "ule", "ugt", "uge", "slt", "sle", "sgt", "sge"):
        a, b = ev
        if k[0] == "s":
            a, b = _signed(a, cw), _signed(b, cw)
        op = k[1:] if k[0] in "su" else k
        return int({"eq": a == b, "ne": a != b, "lt": a < b, "le": a <= b,
                    "gt": a > b, "ge": a >= b}[op])
    if k == "band":
        return int(ev[0] == 1 and ev[1] == 1)
    if k == "bor":
        return int(ev[0] == 1 or ev[1] == 1)
    if k == "bnot":
        return 1 - ev[0]
    if k == "ite":
        return ev[1] if ev[0] == 1 else ev[2]
    raise AssertionError(k)


def to_z3(e, cache=None):
    import z3
    cache = {} if cache is None else cache
    if id(e) in cache:
        return cache[id(e)]
    a = [to_z3(c, cache) for c in e.args]
    k = e.kind

    def as_bool(x):
        return x if z3.is_bool(x) else x == z3.BitVecVal(1, 1)

    def as_bv(x):
        return z3.If(x, z3.BitVecVal(1, 1), z3.BitVecVal(0, 1)) if z3.is_bool(x) else x

    if k == "var":
        r = z3.BitVec(e.name, e.width)
    elif k == "const":
        r = z3.BitVecVal(e.params[0], e.width)
    elif k == "extract":
        r = z3.Extract(e.params[0], e.params[1], as_bv(a[0]))
    elif k == "concat":
        r = z3.Concat(as_bv(a[0]), as_bv(a[1]))
    elif k == "zext":
        r = z3.ZeroExt(e.params[0], as_bv(a[0]))
    elif k == "sext":
        r = z3.SignExt(e.params[0], as_bv(a[0]))
    elif k in ("add", "sub", "and", "or", "xor"):
        x, y = map(as_bv, a)
        r = {"add": x + y, "sub": x - y, "and": x & y, "or": x | y, "xor": x ^ y}[k]
    elif k == "not":
        r = ~as_bv(a[0])
    elif k in ("eq", "ne", "ult", "ule", "ugt", "uge", "slt", "sle", "sgt", "sge"):
        x, y = map(as_bv, a)
        r = {"eq": x == y, "ne": x != y, "ult": z3.ULT(x, y), "ule": z3.ULE(x, y),
             "ugt": z3.UGT(x, y), "uge": z3.UGE(x, y), "slt": x < y, "sle": x <= y,
             "sgt": x > y, "sge": x >= y}[k]
    elif k == "band":
        r = z3.And(as_bool(a[0]), as_bool(a[1]))
    elif k == "bor":
        r = z3.Or(as_bool(a[0]), as_bool(a[1]))
    elif k == "bnot":
        r = z3.Not(as_bool(a[0]))
    elif k == "ite":
        r = z3.If(as_bool(a[0]), as_bv(a[1]), as_bv(a[2]))
    else:
        raise AssertionError(k)
    cache[id(e)] = r
    return r


# -- random formulas --------------------------------------------------------------

_BIN = [bv.add, bv.sub, bv.bvand, bv.bvor, bv.bvxor]
_CMP = [bv.eq, bv.ne, bv.ult, bv.ule, bv.ugt, bv.uge, bv.slt, bv.sle, bv.sgt, bv.sge]


def random_term(rng: random.Random, variables, width: int, depth: int):
    """A random term of ``width`` bits over ``variables`` (list of BV vars)."""
    if depth <= 0 or rng.random() < 0.25:
        fitting = [v for v in variables if v.width == width]
        if fitting and rng.random() < 0.7:
            return rng.choice(fitting)
        if variables and rng.random() < 0.5:
            v = rng.choice(variables)
            if v.width > width:
                low = rng.randrange(0, v.width - width + 1)
                return bv.extract(low + width - 1, low, v)
            if v.width < width:
                ext = rng.choice([bv.zext, bv.sext])
                return ext(width - v.width, v)
        return bv.const(rng.getrandbits(width), width)
    choice = rng.randrange(6)
    if choice <= 2:
        return rng.choice(_BIN)(random_term(rng, variables, width, depth - 1),
                                random_term(rng, variables, width, depth - 1))
    if choice == 3:
        return bv.bvnot(random_term(rng, variables, width, depth - 1))
    if choice == 4 and width > 1:
        split = rng.randrange(1, width)
        return bv.concat(random_term(rng, variables, width - split, depth - 1),
                         random_term(rng, variables, split, depth - 1))
    wider = min(64, width + rng.randrange(1, 9))
    if wider == width:
        return bv.bvnot(random_term(rng, variables, width, depth - 1))
    inner = random_term(rng, variables, wider, depth - 1)
    low = rng.randrange(0, wider - width + 1)
    return bv.extract(low + width - 1, low, inner)


def random_constraint(rng: random.Random, variables, depth: int = 3):
    w = rng.choice([v.width for v in variables] + [4, 8])
    c = rng.choice(_CMP)(random_term(rng, variables, w, depth), random_term(rng, variables, w, depth))
    r = rng.random()
    if r < 0.15:
        return bv.bnot(c)
    if r < 0.3:
        return bv.bor(c, random_constraint(rng, variables, depth - 1) if depth > 1 else bv.false())
    return c


def slots_for(*variables, offsets=None):
    offsets = offsets or list(itertools.accumulate([0] + [(v.width + 7) // 8 for v in variables]))
    return tuple(InputSlot(v.params[0], v.name, v.width, i, offsets[i])
                 for i, v in enumerate(variables))


def brute_force(constraints, variables):
    """First satisfying assignment in layout order (first variable most significant)."""
    for values in itertools.product(*[range(1 << v.width) for v in variables]):
        env = {v.params[0]: x for v, x in zip(variables, values)}
        if all(oracle_eval(c, env) == 1 for c in constraints):
            return env
    return None


def random_problem(seed: int):
    rng = random.Random(seed)
    total = rng.choice([2, 4, 6, 8, 8, 10, 12, 12, 14, 16])
    widths = []
    while sum(widths) < total:
        widths.append(min(rng.choice([1, 2, 4, 8]), total - sum(widths)))
    variables = [bv.var(i, f"in{i}", w) for i, w in enumerate(widths)]
    cs = [random_constraint(rng, variables, 2) for _ in range(rng.randrange(1, 4))]
    return variables, cs


# -- acceptance summary -----------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture
def tmp_out(tmp_path) -> Path:
    return tmp_path / "out"
