from __future__ import annotations

import random

import numpy as np
import pytest
import z3
from hypothesis import given, settings, strategies as st

from numtrunc import bitvec as bv
from numtrunc.bitvec import BitvecError, UnboundVariableError

from conftest import oracle_eval, random_constraint, random_term, to_z3

x8 = bv.var(0, "x", 8)
y8 = bv.var(1, "y", 8)
x32 = bv.var(2, "z", 32)


def test_structural_equality_and_hash():
    a = bv.add(x8, bv.const(1, 8))
    b = bv.add(bv.var(0, "x", 8), bv.const(1, 8))
    assert a == b and hash(a) == hash(b)
    assert a != bv.add(x8, bv.const(2, 8))
    assert {a, b} == {a}


def test_nodes_are_immutable():
    with pytest.raises(AttributeError):
        x8.width = 9


@pytest.mark.parametrize("make", [
    lambda: bv.const(256, 8),
    lambda: bv.const(-1, 8),
    lambda: bv.extract(8, 0, x8),
    lambda: bv.extract(2, 3, x8),
    lambda: bv.add(x8, x32),
    lambda: bv.eq(x8, x32),
    lambda: bv.band(x8, bv.true()),
    lambda: bv.zext(-1, x8),
    lambda: bv.ite(bv.true(), x8, x32),
])
def test_malformed_nodes_rejected(make):
    with pytest.raises(BitvecError):
        make()


def test_nested_extract_collapses():
    e = bv.extract(3, 1, bv.extract(20, 8, x32))
    assert e.kind == "extract" and e.params == (11, 9) and e.args[0] is x32
    assert bv.match_extract(e) == (11, 9, x32)
    assert bv.match_extract(bv.add(x8, y8)) is None


def test_variables_and_constants():
    e = bv.ult(bv.add(x8, bv.const(7, 8)), bv.extract(7, 0, x32))
    assert e.variables == {0, 2}
    assert bv.free_variables(e) == {0: ("x", 8), 2: ("z", 32)}
    assert bv.constants(e) == [7]
    assert not bv.const(3, 8).is_symbolic


def test_unbound_variable():
    with pytest.raises(UnboundVariableError) as info:
        bv.evaluate(bv.add(x8, y8), {0: 1})
    assert info.value.name == "y"


def test_evaluate_examples():
    # sign extension of 0x80 and signed/unsigned comparisons
    assert bv.evaluate(bv.sext(8, x8), {0: 0x80}) == 0xFF80
    assert bv.evaluate(bv.zext(8, x8), {0: 0x80}) == 0x0080
    assert bv.evaluate(bv.slt(x8, bv.zeros(8)), {0: 0x80}) == 1
    assert bv.evaluate(bv.ult(x8, bv.zeros(8)), {0: 0x80}) == 0
    assert bv.evaluate(bv.concat(x8, y8), {0: 0x12, 1: 0x34}) == 0x1234
    assert bv.evaluate(bv.extract(15, 8, x32), {2: 0xAABBCCDD}) == 0xCC


def test_deep_chain_does_not_recurse():
    e = x32
    for i in range(20_000):
        e = bv.add(e, bv.const(1, 32))
    assert bv.evaluate(e, {2: 5}) == 20_005
    assert "define-fun" in bv.to_smtlib([bv.eq(e, bv.zeros(32))])


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32), values=st.lists(st.integers(0, 2**64 - 1), min_size=3, max_size=3))
def test_evaluate_matches_oracle(seed, values):
    rng = random.Random(seed)
    vs = [x8, y8, x32]
    width = rng.choice([1, 4, 8, 16, 32, 64])
    e = random_term(rng, vs, width, 4)
    env = {0: values[0] & 0xFF, 1: values[1] & 0xFF, 2: values[2] & 0xFFFFFFFF}
    assert bv.evaluate(e, env) == oracle_eval(e, env)
    c = random_constraint(rng, vs)
    assert bv.evaluate(c, env) == oracle_eval(c, env)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_batch_matches_scalar(seed):
    rng = random.Random(seed)
    vs = [x8, y8, x32]
    exprs = [random_term(rng, vs, rng.choice([8, 16, 64]), 3), random_constraint(rng, vs)]
    n = 64
    env = {0: np.array([rng.getrandbits(8) for _ in range(n)], dtype=np.uint64),
           1: np.array([rng.getrandbits(8) for _ in range(n)], dtype=np.uint64),
           2: np.array([rng.getrandbits(32) for _ in range(n)], dtype=np.uint64)}
    got = bv.evaluate_batch(exprs, env, n)
    for i in range(n):
        point = {k: int(v[i]) for k, v in env.items()}
        for e, col in zip(exprs, got):
            assert int(col[i]) == bv.evaluate(e, point)


def test_batch_rejects_wide_symbolic():
    wide = bv.concat(x32, bv.concat(x32, x8))
    with pytest.raises(BitvecError):
        bv.evaluate_batch([bv.eq(wide, wide)], {2: np.zeros(2, np.uint64), 0: np.zeros(2, np.uint64)}, 2)


def test_smtlib_rejects_non_boolean():
    with pytest.raises(BitvecError):
        bv.to_smtlib([x8])


@settings(max_examples=120, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_smtlib_round_trip_against_z3(seed):
    """The emitted script and a direct translation are equivalent for z3."""
    rng = random.Random(seed)
    vs = [x8, y8, x32]
    cs = [random_constraint(rng, vs) for _ in range(rng.randrange(1, 4))]
    text = bv.to_smtlib(cs)
    assert text.startswith("(set-logic QF_BV)") and "(check-sat)" in text
    parsed = z3.And(*z3.parse_smt2_string(text))
    direct = z3.And(*[to_z3(c) for c in cs])
    s = z3.Solver()
    s.add(parsed != direct)
    assert s.check() == z3.unsat
    s = z3.Solver()
    s.add(parsed)
    if s.check() == z3.sat:
        m = s.model()
        env = {v.params[0]: m.eval(z3.BitVec(v.name, v.width), model_completion=True).as_long()
               for v in vs}
        assert all(bv.evaluate(c, env) == 1 for c in cs)
