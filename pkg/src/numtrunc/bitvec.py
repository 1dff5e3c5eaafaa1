"""Immutable bitvector formulas.

Every node carries its result width in bits. Truth values are width-1
bitvectors (1 = true), so a single evaluator covers terms and predicates.
Nodes compare structurally and may be shared freely between formulas.

Two evaluators are provided: :func:`evaluate` works on Python integers and is
the reference semantics; :func:`evaluate_batch` runs the same semantics over
numpy ``uint64`` arrays (one lane per candidate assignment) and is what the
enumeration solver uses.  Batch evaluation is limited to widths <= 64.
"""

from __future__ import annotations

import re
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "BV", "BitvecError", "UnboundVariableError",
    "var", "const", "true", "false", "extract", "make_extract", "concat",
    "zext", "sext", "add", "sub", "bvand", "bvor", "bvxor", "bvnot",
    "eq", "ne", "slt", "sle", "sgt", "sge", "ult", "ule", "ugt", "uge",
    "band", "bor", "bnot", "ite", "ones", "zeros",
    "evaluate", "evaluate_batch", "match_extract", "free_variables",
    "constants", "to_smtlib", "to_signed",
]


class BitvecError(ValueError):
    """Ill-formed formula construction or evaluation request."""


class UnboundVariableError(BitvecError, KeyError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable {name!r}")
        self.name = name

    def __str__(self) -> str:
        return self.args[0]


ARITH = frozenset({"add", "sub", "and", "or", "xor"})
COMPARE = frozenset({"eq", "ne", "slt", "sle", "sgt", "sge", "ult", "ule", "ugt", "uge"})
BOOL_OPS = frozenset({"band", "bor", "bnot"})


def mask(width: int) -> int:
    return (1 << width) - 1


def to_signed(value: int, width: int) -> int:
    sign = 1 << (width - 1)
    return value - (1 << width) if value & sign else value


class BV:
    """A bitvector formula node.

    ``params`` holds the integer parameters of the node: ``(id,)`` for
    variables, ``(value,)`` for constants, ``(high, low)`` for extracts and
    ``(extra_bits,)`` for extensions.
    """

    __slots__ = ("kind", "width", "args", "params", "name", "_hash", "_vars")

    def __init__(self, kind: str, width: int, args: tuple = (), params: tuple = (),
                 name: str | None = None):
        self.kind = kind
        self.width = width
        self.args = args
        self.params = params
        self.name = name
        self._hash = hash((kind, width, params, name, args))
        if kind == "var":
            self._vars = frozenset(params[:1])
        elif not args:
            self._vars = frozenset()
        elif len(args) == 1:
            self._vars = args[0]._vars
        else:
            self._vars = frozenset().union(*(a._vars for a in args))

    def __setattr__(self, key, value):
        if hasattr(self, "_vars"):
            raise AttributeError("BV nodes are immutable")
        object.__setattr__(self, key, value)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, BV) or self._hash != other._hash:
            return False
        return (self.kind == other.kind and self.width == other.width
                and self.params == other.params and self.name == other.name
                and self.args == other.args)

    @property
    def variables(self) -> frozenset:
        """Ids of the variables occurring in this formula."""
        return self._vars

    @property
    def is_symbolic(self) -> bool:
        return bool(self._vars)

    @property
    def value(self) -> int:
        if self.kind != "const":
            raise BitvecError(f"{self.kind} node has no constant value")
        return self.params[0]

    def __repr__(self) -> str:
        return _to_text(self)


def _to_text(e: BV, depth: int = 0) -> str:
    if depth > 40:
        return "..."
    if e.kind == "var":
        return e.name
    if e.kind == "const":
        return f"{e.params[0]:#x}:{e.width}"
    inner = ", ".join(_to_text(a, depth + 1) for a in e.args)
    if e.kind == "extract":
        return f"extract({e.params[0]}, {e.params[1]}, {inner})"
    if e.kind in ("zext", "sext"):
        return f"{e.kind}{e.params[0]}({inner})"
    return f"{e.kind}({inner})"


# ----------------------------------------------------------------------------
# construction

def var(var_id: int, name: str, width: int) -> BV:
    if width < 1:
        raise BitvecError(f"variable {name!r} has non-positive width {width}")
    return BV("var", width, (), (var_id,), name)


def const(value: int, width: int) -> BV:
    if width < 1:
        raise BitvecError(f"constant has non-positive width {width}")
    if not 0 <= value <= mask(width):
        raise BitvecError(f"constant {value:#x} does not fit in {width} bits")
    return BV("const", width, (), (value,))


def zeros(width: int) -> BV:
    return const(0, width)


def ones(width: int) -> BV:
    """All-ones bitvector (every bit set)."""
    return const(mask(width), width)


def true() -> BV:
    return const(1, 1)


def false() -> BV:
    return const(0, 1)


def extract(high: int, low: int, child: BV) -> BV:
    """Bits ``low..high`` of ``child``.

    Nested extracts are collapsed, constants are folded, a slice lying inside
    one half of a concat is taken from that half, and a full-width slice is the
    operand itself.
    """
    if not 0 <= low <= high < child.width:
        raise BitvecError(
            f"extract bounds high={high}, low={low} invalid for width {child.width}")
    while True:
        if child.kind == "extract":
            inner_high, inner_low = child.params
            high, low = inner_low + high, inner_low + low
            child = child.args[0]
            assert high <= inner_high
        elif child.kind == "concat":
            hi, lo = child.args
            if high < lo.width:
                child = lo
            elif low >= lo.width:
                high, low, child = high - lo.width, low - lo.width, hi
            else:
                break
        else:
            break
    if child.kind == "const":
        return const((child.params[0] >> low) & mask(high - low + 1), high - low + 1)
    if low == 0 and high == child.width - 1:
        return child
    return BV("extract", high - low + 1, (child,), (high, low))


make_extract = extract


def concat(hi: BV, lo: BV) -> BV:
    return BV("concat", hi.width + lo.width, (hi, lo))


def zext(extra: int, child: BV) -> BV:
    if extra < 0:
        raise BitvecError("negative extension")
    return BV("zext", child.width + extra, (child,), (extra,))


def sext(extra: int, child: BV) -> BV:
    if extra < 0:
        raise BitvecError("negative extension")
    return BV("sext", child.width + extra, (child,), (extra,))


def _same_width(kind: str, a: BV, b: BV) -> None:
    if a.width != b.width:
        raise BitvecError(f"{kind}: operand widths differ ({a.width} vs {b.width})")


def _binary(kind: str):
    def build(a: BV, b: BV) -> BV:
        _same_width(kind, a, b)
        return BV(kind, a.width, (a, b))
    build.__name__ = kind
    return build


def _compare(kind: str):
    def build(a: BV, b: BV) -> BV:
        _same_width(kind, a, b)
        return BV(kind, 1, (a, b))
    build.__name__ = kind
    return build


add = _binary("add")
sub = _binary("sub")
bvand = _binary("and")
bvor = _binary("or")
bvxor = _binary("xor")

eq = _compare("eq")
ne = _compare("ne")
slt = _compare("slt")
sle = _compare("sle")
sgt = _compare("sgt")
sge = _compare("sge")
ult = _compare("ult")
ule = _compare("ule")
ugt = _compare("ugt")
uge = _compare("uge")


def bvnot(a: BV) -> BV:
    return BV("not", a.width, (a,))


def _boolean(e: BV, what: str) -> None:
    if e.width != 1:
        raise BitvecError(f"{what} expects width-1 operands, got width {e.width}")


def band(*items: BV) -> BV:
    if not items:
        return true()
    out = items[0]
    _boolean(out, "band")
    for item in items[1:]:
        _boolean(item, "band")
        out = BV("band", 1, (out, item))
    return out


def bor(*items: BV) -> BV:
    if not items:
        return false()
    out = items[0]
    _boolean(out, "bor")
    for item in items[1:]:
        _boolean(item, "bor")
        out = BV("bor", 1, (out, item))
    return out


def bnot(a: BV) -> BV:
    _boolean(a, "bnot")
    return BV("bnot", 1, (a,))


def ite(cond: BV, then: BV, other: BV) -> BV:
    _boolean(cond, "ite")
    _same_width("ite", then, other)
    return BV("ite", then.width, (cond, then, other))


# ----------------------------------------------------------------------------
# traversal helpers

def _postorder(roots: Iterable[BV]) -> list[BV]:
    """Distinct nodes reachable from ``roots``, children before parents."""
    order: list[BV] = []
    seen: set[int] = set()
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in reversed(node.args):
                if id(child) not in seen:
                    stack.append((child, False))
    return order


def free_variables(*exprs: BV) -> dict[int, tuple[str, int]]:
    """Map of variable id -> (name, width), in id order."""
    found = {}
    for node in _postorder(exprs):
        if node.kind == "var":
            found[node.params[0]] = (node.name, node.width)
    return dict(sorted(found.items()))


def constants(*exprs: BV) -> list[int]:
    return sorted({n.params[0] for n in _postorder(exprs) if n.kind == "const"})


def match_extract(expr: BV) -> tuple[int, int, BV] | None:
    """``(high, low, inner)`` if ``expr`` is an extract, else ``None``."""
    if expr.kind != "extract":
        return None
    high, low = expr.params
    inner = expr.args[0]
    while inner.kind == "extract":
        inner_high, inner_low = inner.params
        high, low = inner_low + high, inner_low + low
        inner = inner.args[0]
    return high, low, inner


# ----------------------------------------------------------------------------
# scalar evaluation

def _apply(node: BV, vals: list[int], assignment: Mapping[int, int]) -> int:
    k = node.kind
    w = node.width
    if k == "var":
        try:
            return assignment[node.params[0]] & mask(w)
        except KeyError:
            raise UnboundVariableError(node.name) from None
    if k == "const":
        return node.params[0]
    if k == "extract":
        high, low = node.params
        return (vals[0] >> low) & mask(high - low + 1)
    if k == "concat":
        return (vals[0] << node.args[1].width) | vals[1]
    if k == "zext":
        return vals[0]
    if k == "sext":
        cw = node.args[0].width
        return to_signed(vals[0], cw) & mask(w)
    if k == "add":
        return (vals[0] + vals[1]) & mask(w)
    if k == "sub":
        return (vals[0] - vals[1]) & mask(w)
    if k == "and":
        return vals[0] & vals[1]
    if k == "or":
        return vals[0] | vals[1]
    if k == "xor":
        return vals[0] ^ vals[1]
    if k == "not":
        return ~vals[0] & mask(w)
    if k in COMPARE:
        a, b = vals
        if k[0] == "s":
            cw = node.args[0].width
            a, b = to_signed(a, cw), to_signed(b, cw)
        return int(_CMP[k](a, b))
    if k == "band":
        return vals[0] & vals[1]
    if k == "bor":
        return vals[0] | vals[1]
    if k == "bnot":
        return vals[0] ^ 1
    if k == "ite":
        return vals[1] if vals[0] else vals[2]
    raise BitvecError(f"unknown node kind {k!r}")


_CMP = {
    "eq": lambda a, b: a == b, "ne": lambda a, b: a != b,
    "slt": lambda a, b: a < b, "sle": lambda a, b: a <= b,
    "sgt": lambda a, b: a > b, "sge": lambda a, b: a >= b,
    "ult": lambda a, b: a < b, "ule": lambda a, b: a <= b,
    "ugt": lambda a, b: a > b, "uge": lambda a, b: a >= b,
}


def evaluate(expr: BV, assignment: Mapping[int, int], memo: dict | None = None) -> int:
    """Value of ``expr`` under ``assignment`` (variable id -> value).

    ``memo`` may be shared between calls with the same assignment.
    """
    if memo is None:
        memo = {}
    if id(expr) in memo:
        return memo[id(expr)]
    for node in _postorder([expr]):
        key = id(node)
        if key not in memo:
            memo[key] = _apply(node, [memo[id(c)] for c in node.args], assignment)
    return memo[id(expr)]


# ----------------------------------------------------------------------------
# vectorised evaluation

_U = np.uint64


def _np_mask(width: int):
    return _U(mask(width))


def _apply_batch(node: BV, vals: list, env: Mapping[int, np.ndarray]):
    k = node.kind
    w = node.width
    if k == "var":
        try:
            return env[node.params[0]] & _np_mask(w)
        except KeyError:
            raise UnboundVariableError(node.name) from None
    if k == "extract":
        high, low = node.params
        return (vals[0] >> _U(low)) & _np_mask(high - low + 1)
    if k == "concat":
        return (vals[0] << _U(node.args[1].width)) | vals[1]
    if k == "zext":
        return vals[0]
    if k == "sext":
        cw = node.args[0].width
        fill = _U(mask(w) ^ mask(cw))
        negative = (vals[0] >> _U(cw - 1)) & _U(1)
        return vals[0] | (negative * fill)
    if k == "add":
        return (vals[0] + vals[1]) & _np_mask(w)
    if k == "sub":
        return (vals[0] - vals[1]) & _np_mask(w)
    if k in ("and", "band"):
        return vals[0] & vals[1]
    if k in ("or", "bor"):
        return vals[0] | vals[1]
    if k == "xor":
        return vals[0] ^ vals[1]
    if k == "not":
        return ~vals[0] & _np_mask(w)
    if k == "bnot":
        return vals[0] ^ _U(1)
    if k in COMPARE:
        a, b = vals
        if k[0] == "s":
            flip = _U(1 << (node.args[0].width - 1))
            a, b = a ^ flip, b ^ flip
        return _CMP[k](a, b).astype(_U)
    if k == "ite":
        return np.where(vals[0].astype(bool), vals[1], vals[2])
    raise BitvecError(f"unknown node kind {k!r}")


def evaluate_batch(exprs: Iterable[BV], env: Mapping[int, np.ndarray],
                   size: int) -> list[np.ndarray]:
    """Evaluate formulas lane-wise; ``env`` maps variable id -> uint64 array.

    Variable-free subterms are folded with :func:`evaluate`. Returns one
    array of length ``size`` per formula.
    """
    exprs = list(exprs)
    memo: dict[int, object] = {}
    scalar_memo: dict = {}
    for node in _postorder(exprs):
        if node.width > 64:
            raise BitvecError("batch evaluation supports widths up to 64 bits")
        if not node.is_symbolic:
            memo[id(node)] = _U(evaluate(node, {}, scalar_memo))
        else:
            memo[id(node)] = _apply_batch(node, [memo[id(c)] for c in node.args], env)
    out = []
    for e in exprs:
        v = memo[id(e)]
        if not isinstance(v, np.ndarray):
            v = np.full(size, v, dtype=_U)
        out.append(v)
    return out


# ----------------------------------------------------------------------------
# SMT-LIB2 rendering

_SMT_OPS = {
    "add": "bvadd", "sub": "bvsub", "and": "bvand", "or": "bvor", "xor": "bvxor",
    "not": "bvnot", "concat": "concat",
    "slt": "bvslt", "sle": "bvsle", "sgt": "bvsgt", "sge": "bvsge",
    "ult": "bvult", "ule": "bvule", "ugt": "bvugt", "uge": "bvuge",
    "eq": "=", "ne": "distinct", "band": "and", "bor": "or", "bnot": "not",
}
_SYMBOL = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*\Z")


def _natural_bool(node: BV) -> bool:
    return node.kind in COMPARE or node.kind in BOOL_OPS


def to_smtlib(constraints: Iterable[BV]) -> str:
    """Render width-1 constraints as a QF_BV script (declare, assert, check-sat).

    Width-1 results of comparisons and boolean connectives become ``Bool``
    terms; other width-1 terms are coerced with ``(= t #b1)`` where a truth
    value is expected. Shared and long subterms are bound once with ``define-fun``.
    """
    constraints = list(constraints)
    for c in constraints:
        if c.width != 1:
            raise BitvecError(f"constraint has width {c.width}, expected 1")

    nodes = _postorder(constraints)
    parents: dict[int, int] = {}
    for node in nodes:
        for child in node.args:
            parents[id(child)] = parents.get(id(child), 0) + 1

    names: dict[int, str] = {}
    lines = ["(set-logic QF_BV)"]
    var_names: dict[int, str] = {}
    for vid, (name, width) in free_variables(*constraints).items():
        sym = name if _SYMBOL.match(name) and name not in var_names.values() else f"v{vid}"
        var_names[vid] = sym
        lines.append(f"(declare-const {sym} (_ BitVec {width}))")

    text: dict[int, str] = {}

    def ref(node: BV, want_bool: bool) -> str:
        body = names.get(id(node)) or text[id(node)]
        is_bool = _natural_bool(node)
        if want_bool and not is_bool:
            return f"(= {body} #b1)"
        if not want_bool and is_bool:
            return f"(ite {body} #b1 #b0)"
        return body

    counter = 0
    for node in nodes:
        k = node.kind
        if k == "var":
            text[id(node)] = var_names[node.params[0]]
            continue
        if k == "const":
            text[id(node)] = f"(_ bv{node.params[0]} {node.width})"
            continue
        if k == "extract":
            high, low = node.params
            s = f"((_ extract {high} {low}) {ref(node.args[0], False)})"
        elif k in ("zext", "sext"):
            op = "zero_extend" if k == "zext" else "sign_extend"
            s = f"((_ {op} {node.params[0]}) {ref(node.args[0], False)})"
        elif k == "ite":
            c, t, f = node.args
            s = f"(ite {ref(c, True)} {ref(t, False)} {ref(f, False)})"
        elif k in BOOL_OPS:
            s = "(" + _SMT_OPS[k] + " " + " ".join(ref(a, True) for a in node.args) + ")"
        elif k in ("eq", "ne") and all(_natural_bool(a) for a in node.args):
            s = "(" + _SMT_OPS[k] + " " + " ".join(ref(a, True) for a in node.args) + ")"
        else:
            s = "(" + _SMT_OPS[k] + " " + " ".join(ref(a, False) for a in node.args) + ")"
        text[id(node)] = s
        # shared terms, and long ones so that deep chains stay linear in size
        if parents.get(id(node), 0) > 1 or len(s) > 256:
            counter += 1
            name = f"t{counter}"
            sort = "Bool" if _natural_bool(node) else f"(_ BitVec {node.width})"
            lines.append(f"(define-fun {name} () {sort} {s})")
            names[id(node)] = name

    for c in constraints:
        lines.append(f"(assert {ref(c, True)})")
    lines.append("(check-sat)")
    lines.append("(get-model)")
    return "\n".join(lines) + "\n"
