"""Bytecode semantics as a small block IR, and type-based check elimination.

A ``SemFunction`` takes ``nparams`` boxed operands. Values are block-local
SSA names; a block re-reads a parameter through ``Unbox``/``Param`` instead
of receiving it through a phi. ``optimize_checks`` removes or cheapens type
checks under a predicate over the operand types, and ``split_fast_slow``
derives a speculative fast path plus the complementary slow path.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from . import boxing
from .boxing import CheckDecision, select_checker


# -- instructions ------------------------------------------------------------

@dataclass(frozen=True)
class TypeCheck:
    dst: str
    param: int
    mask: int


@dataclass(frozen=True)
class RuleCheck:
    """A type check replaced by a strength-reduction rule (or a cheaper checker)."""
    dst: str
    param: int
    mask: int
    rule: object
    negated: bool = False

    def pre(self):
        return getattr(self.rule, "pre", boxing.LATTICE.top)

    def decides(self):
        return getattr(self.rule, "decides", None) or self.rule.mask


@dataclass(frozen=True)
class Const:
    dst: str
    value: object


@dataclass(frozen=True)
class Param:
    dst: str
    param: int


@dataclass(frozen=True)
class Unbox:
    dst: str
    param: int
    mask: int


@dataclass(frozen=True)
class Box:
    dst: str
    mask: int
    src: str


@dataclass(frozen=True)
class PrimOp:
    dst: str
    op: str
    srcs: tuple


@dataclass(frozen=True)
class Opaque:
    """A runtime call with unknown result; never folded."""
    dst: str
    name: str
    srcs: tuple = ()


# -- terminators -------------------------------------------------------------

@dataclass(frozen=True)
class CondBr:
    cond: str
    then: str
    other: str


@dataclass(frozen=True)
class Br:
    target: str


@dataclass(frozen=True)
class ReturnValue:
    src: str


@dataclass(frozen=True)
class Dispatch:
    pass


@dataclass(frozen=True)
class BranchTaken:
    pass


@dataclass(frozen=True)
class EnterSlowPath:
    tag: str


@dataclass(frozen=True)
class MakeCallMarker:
    tag: str


@dataclass(frozen=True)
class Trap:
    pass


TERMINATORS = (CondBr, Br, ReturnValue, Dispatch, BranchTaken, EnterSlowPath,
               MakeCallMarker, Trap)


@dataclass
class Block:
    name: str
    instrs: list
    term: object

    def successors(self):
        t = self.term
        if isinstance(t, CondBr):
            return [t.then, t.other]
        if isinstance(t, Br):
            return [t.target]
        return []


@dataclass
class SemFunction:
    name: str
    nparams: int
    blocks: list
    boxed: tuple = None     # per-parameter flag; non-boxed params cannot be speculated on

    def __post_init__(self):
        if self.boxed is None:
            self.boxed = (True,) * self.nparams

    @property
    def entry(self):
        return self.blocks[0].name

    def block(self, name):
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def block_map(self):
        return {b.name: b for b in self.blocks}

    def verify(self):
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate block name")
        known = set(names)
        for b in self.blocks:
            if not isinstance(b.term, TERMINATORS):
                raise ValueError(f"block {b.name} lacks a terminator")
            for s in b.successors():
                if s not in known:
                    raise ValueError(f"block {b.name} branches to unknown {s}")
            defined = set()
            for ins in b.instrs:
                for src in _uses(ins):
                    if src not in defined:
                        raise ValueError(f"{b.name}: value {src} used outside its block")
                if hasattr(ins, "param") and not 0 <= ins.param < self.nparams:
                    raise ValueError(f"{b.name}: parameter {ins.param} out of range")
                defined.add(ins.dst)
            for src in _term_uses(b.term):
                if src not in defined:
                    raise ValueError(f"{b.name}: value {src} used outside its block")
        return self


def _uses(ins):
    if isinstance(ins, Box):
        return (ins.src,)
    if isinstance(ins, (PrimOp, Opaque)):
        return ins.srcs
    return ()


def _term_uses(t):
    if isinstance(t, CondBr):
        return (t.cond,)
    if isinstance(t, ReturnValue):
        return (t.src,)
    return ()


# -- type predicates -----------------------------------------------------------

class TypePredicate:
    """An explicit set of base-type tuples, one entry per operand (n <= 4)."""

    MAX_ARITY = 4

    def __init__(self, n, tuples, lattice=boxing.LATTICE):
        if n > self.MAX_ARITY:
            raise ValueError("type predicates support at most 4 operands")
        self.n = n
        self.lattice = lattice
        self.tuples = frozenset(tuples)

    @classmethod
    def conjunction(cls, masks, lattice=boxing.LATTICE):
        masks = list(masks)
        if len(masks) > cls.MAX_ARITY:
            raise ValueError("type predicates support at most 4 operands")
        choices = [lattice.bases(m) for m in masks]
        return cls(len(masks), itertools.product(*choices), lattice)

    @classmethod
    def top(cls, n, lattice=boxing.LATTICE):
        return cls.conjunction([lattice.top] * n, lattice)

    def minus(self, other):
        return TypePredicate(self.n, self.tuples - other.tuples, self.lattice)

    def intersect(self, other):
        return TypePredicate(self.n, self.tuples & other.tuples, self.lattice)

    def __contains__(self, tup):
        return tuple(tup) in self.tuples

    def __len__(self):
        return len(self.tuples)

    def __iter__(self):
        return iter(sorted(self.tuples))

    def projection(self, i):
        m = 0
        for t in self.tuples:
            m |= 1 << t[i]
        return m


# -- reachability under a concrete type assignment -----------------------------

_UNKNOWN = object()


def _fold_prim(op, vals):
    if any(v is _UNKNOWN for v in vals):
        return _UNKNOWN
    if op == "not":
        return not vals[0]
    if op == "and":
        return vals[0] and vals[1]
    if op == "or":
        return vals[0] or vals[1]
    return _UNKNOWN


def reachable_blocks(f, assignment):
    """Blocks reachable when operand i has base type ``assignment[i]``.

    This is sparse conditional constant propagation specialised to the IR:
    type checks fold to constants, constant conditions prune edges, and every
    other value is overdefined.
    """
    blocks = f.block_map()
    seen = set()
    work = [f.entry]
    while work:
        name = work.pop()
        if name in seen:
            continue
        seen.add(name)
        b = blocks[name]
        env = {}
        for ins in b.instrs:
            if isinstance(ins, TypeCheck):
                env[ins.dst] = (ins.mask >> assignment[ins.param]) & 1 == 1
            elif isinstance(ins, RuleCheck):
                t = assignment[ins.param]
                if (ins.pre() >> t) & 1:
                    env[ins.dst] = ((ins.decides() >> t) & 1 == 1) != ins.negated
                else:
                    env[ins.dst] = _UNKNOWN
            elif isinstance(ins, Const):
                env[ins.dst] = ins.value
            elif isinstance(ins, PrimOp):
                env[ins.dst] = _fold_prim(ins.op, [env[s] for s in ins.srcs])
            else:
                env[ins.dst] = _UNKNOWN
        t = b.term
        if isinstance(t, CondBr):
            c = env[t.cond]
            if c is _UNKNOWN:
                work += [t.then, t.other]
            else:
                work.append(t.then if c else t.other)
        elif isinstance(t, Br):
            work.append(t.target)
    return seen


def compute_type_map(f, pred):
    """For each block, the per-operand union of types under which it is reachable."""
    m = {b.name: [0] * f.nparams for b in f.blocks}
    for tup in pred.tuples:
        for name in reachable_blocks(f, tup):
            row = m[name]
            for i, t in enumerate(tup):
                row[i] |= 1 << t
    return m


def reachable_under(f, pred):
    out = set()
    for tup in pred.tuples:
        out |= reachable_blocks(f, tup)
    return out


# -- check optimisation --------------------------------------------------------

def optimize_checks(f, pred, scheme=boxing.GUEST):
    """Algorithm: fold or cheapen every type check using the per-block type map."""
    if pred.n != f.nparams:
        raise ValueError("predicate arity does not match the function")
    if not pred.tuples:
        return always_trap(f)
    tmap = compute_type_map(f, pred)
    live = reachable_under(f, pred)
    folded_edges = set()
    out_blocks = []
    for b in f.blocks:
        if b.name not in live:
            continue
        instrs = []
        for ins in b.instrs:
            if isinstance(ins, TypeCheck):
                d = select_checker(scheme, tmap[b.name][ins.param], ins.mask)
                instrs.append(_apply_decision(ins, d, scheme))
            else:
                instrs.append(ins)
        out_blocks.append(Block(b.name, instrs, b.term))
    g = SemFunction(f.name, f.nparams, out_blocks, f.boxed)
    # fold branches on constant conditions
    for b in g.blocks:
        t = b.term
        if isinstance(t, CondBr):
            c = _const_value(b, t.cond)
            if c is None and (t.then in live) != (t.other in live):
                # the condition folded during propagation even though it is not a literal
                c = t.then in live
            if c is not None:
                b.term = Br(t.then if c else t.other)
                folded_edges.add((b.name, b.term.target))
    _remove_unreachable(g)
    _dead_consts(g)
    _merge_folded(g, folded_edges)
    return g.verify()


def _apply_decision(ins, d, scheme):
    if d.kind == "alwaysTrue":
        return Const(ins.dst, True)
    if d.kind == "alwaysFalse":
        return Const(ins.dst, False)
    rule = d.rule
    if not d.negated and isinstance(rule, boxing.TypeChecker) and rule.mask == ins.mask \
            and rule is scheme.checker_for(ins.mask):
        return ins
    return RuleCheck(ins.dst, ins.param, ins.mask, rule, d.negated)


def _const_value(block, name):
    for ins in block.instrs:
        if ins.dst == name:
            if isinstance(ins, Const) and isinstance(ins.value, bool):
                return ins.value
            return None
    return None


def _remove_unreachable(g):
    blocks = g.block_map()
    seen = set()
    work = [g.entry]
    while work:
        n = work.pop()
        if n in seen:
            continue
        seen.add(n)
        work += blocks[n].successors()
    g.blocks = [b for b in g.blocks if b.name in seen]


def _dead_consts(g):
    for b in g.blocks:
        used = set(_term_uses(b.term))
        for ins in b.instrs:
            used.update(_uses(ins))
        b.instrs = [i for i in b.instrs
                    if not (isinstance(i, (Const, TypeCheck, RuleCheck, Param)) and i.dst not in used)]


def _merge_folded(g, folded_edges):
    """Merge a block into its predecessor when the joining edge came from a fold."""
    changed = True
    while changed:
        changed = False
        preds = {}
        for b in g.blocks:
            for s in b.successors():
                preds.setdefault(s, []).append(b.name)
        blocks = g.block_map()
        for b in g.blocks:
            t = b.term
            if not isinstance(t, Br) or (b.name, t.target) not in folded_edges:
                continue
            succ = blocks[t.target]
            if succ.name == g.entry or preds.get(succ.name) != [b.name] or succ is b:
                continue
            b.instrs = b.instrs + succ.instrs
            b.term = succ.term
            for s in succ.successors():
                if (succ.name, s) in folded_edges:
                    folded_edges.add((b.name, s))
            g.blocks.remove(succ)
            changed = True
            break


def always_trap(f):
    return SemFunction(f.name, f.nparams, [Block("entry", [], Trap())], f.boxed)


def is_always_trap(f):
    return len(f.blocks) == 1 and not f.blocks[0].instrs and isinstance(f.blocks[0].term, Trap)


@dataclass(frozen=True)
class Guard:
    param: int
    mask: int
    decision: CheckDecision


def split_fast_slow(f, speculation, known=None, scheme=boxing.GUEST):
    """Return (fast, slow, guards) for per-operand speculated masks.

    ``speculation[i]`` is None for operands that are not speculated on.
    ``known[i]`` is the statically known mask (defaults to top).
    """
    top = scheme.lattice.top
    known = list(known) if known is not None else [top] * f.nparams
    spec = list(speculation)
    if len(spec) != f.nparams or len(known) != f.nparams:
        raise ValueError("speculation and known masks must cover every operand")
    fast_masks = []
    guards = []
    for i, (s, k) in enumerate(zip(spec, known)):
        if s is None:
            fast_masks.append(k)
            continue
        if not f.boxed[i]:
            raise ValueError(f"operand {i} is not a boxed value and cannot be speculated on")
        m = s & k
        if m == 0:
            raise ValueError(f"speculated type for operand {i} contradicts what is known")
        fast_masks.append(m)
        if m != k:
            guards.append(Guard(i, m, select_checker(scheme, k, m)))
    p_known = TypePredicate.conjunction(known, scheme.lattice)
    p_fast = TypePredicate.conjunction(fast_masks, scheme.lattice)
    p_slow = p_known.minus(p_fast)
    fast = optimize_checks(f, p_fast, scheme)
    slow = optimize_checks(f, p_slow, scheme) if p_slow.tuples else always_trap(f)
    return fast, slow, guards


# -- reference interpreter -----------------------------------------------------

@dataclass(frozen=True)
class Outcome:
    tag: str
    value: object = None


def _prim(op, vals):
    if op == "add":
        return vals[0] + vals[1]
    if op == "sub":
        return vals[0] - vals[1]
    if op == "mul":
        return vals[0] * vals[1]
    if op == "div":
        return float_div(vals[0], vals[1])
    if op == "mod":
        return float_mod(vals[0], vals[1])
    if op == "lt":
        return vals[0] < vals[1]
    if op == "le":
        return vals[0] <= vals[1]
    if op == "eq":
        return vals[0] == vals[1]
    if op == "not":
        return not vals[0]
    if op == "and":
        return vals[0] and vals[1]
    if op == "or":
        return vals[0] or vals[1]
    raise ValueError(f"unknown primitive {op!r}")


def float_div(a, b):
    """IEEE division; Python raises on a zero divisor where the guest wants inf/nan."""
    try:
        return a / b
    except ZeroDivisionError:
        if a != a or a == 0:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)


def float_mod(a, b):
    """``a - floor(a / b) * b`` evaluated in doubles."""
    q = float_div(a, b)
    if q == q and not math.isinf(q):
        q = float(math.floor(q))
    return a - q * b


def run(f, args, scheme=boxing.GUEST, max_steps=10_000):
    """Execute ``f`` on boxed words; returns the terminator outcome."""
    blocks = f.block_map()
    name = f.entry
    for _ in range(max_steps):
        b = blocks[name]
        env = {}
        for ins in b.instrs:
            if isinstance(ins, TypeCheck):
                env[ins.dst] = scheme.check(args[ins.param], ins.mask)
            elif isinstance(ins, RuleCheck):
                w = args[ins.param]
                if not scheme.check(w, ins.pre()):
                    raise AssertionError("strength-reduced check applied outside its precondition")
                env[ins.dst] = bool(ins.rule.fn(w)) != ins.negated
            elif isinstance(ins, Const):
                env[ins.dst] = ins.value
            elif isinstance(ins, Param):
                env[ins.dst] = args[ins.param]
            elif isinstance(ins, Unbox):
                w = args[ins.param]
                if not scheme.check(w, ins.mask):
                    raise AssertionError("unbox of a value outside its declared type")
                env[ins.dst] = boxing.w2d(w) if ins.mask & ~boxing.tDouble == 0 else w
            elif isinstance(ins, Box):
                v = env[ins.src]
                env[ins.dst] = boxing.d2w(v) if isinstance(v, float) else v
            elif isinstance(ins, PrimOp):
                env[ins.dst] = _prim(ins.op, [env[s] for s in ins.srcs])
            elif isinstance(ins, Opaque):
                env[ins.dst] = hash((ins.name,) + tuple(env[s] for s in ins.srcs))
            else:
                raise TypeError(ins)
        t = b.term
        if isinstance(t, CondBr):
            name = t.then if env[t.cond] else t.other
        elif isinstance(t, Br):
            name = t.target
        elif isinstance(t, ReturnValue):
            return Outcome("return", env[t.src])
        elif isinstance(t, Dispatch):
            return Outcome("dispatch")
        elif isinstance(t, BranchTaken):
            return Outcome("branch")
        elif isinstance(t, EnterSlowPath):
            return Outcome("slowpath:" + t.tag)
        elif isinstance(t, MakeCallMarker):
            return Outcome("call:" + t.tag)
        elif isinstance(t, Trap):
            return Outcome("trap")
    raise RuntimeError("step limit exceeded")


# -- textual dump ----------------------------------------------------------------

def dump(f, lattice=boxing.LATTICE):
    fm = lattice.format
    lines = [f"func {f.name}({f.nparams})"]
    for b in f.blocks:
        lines.append(f"{b.name}:")
        for ins in b.instrs:
            if isinstance(ins, TypeCheck):
                s = f"%{ins.dst} = typecheck p{ins.param} {fm(ins.mask)}"
            elif isinstance(ins, RuleCheck):
                neg = "not " if ins.negated else ""
                s = f"%{ins.dst} = {neg}check[{ins.rule.name}] p{ins.param} {fm(ins.mask)}"
            elif isinstance(ins, Const):
                s = f"%{ins.dst} = const {ins.value!r}"
            elif isinstance(ins, Param):
                s = f"%{ins.dst} = param p{ins.param}"
            elif isinstance(ins, Unbox):
                s = f"%{ins.dst} = unbox p{ins.param} {fm(ins.mask)}"
            elif isinstance(ins, Box):
                s = f"%{ins.dst} = box {fm(ins.mask)} %{ins.src}"
            elif isinstance(ins, PrimOp):
                s = f"%{ins.dst} = {ins.op} " + ", ".join("%" + x for x in ins.srcs)
            elif isinstance(ins, Opaque):
                s = f"%{ins.dst} = opaque {ins.name}(" + ", ".join("%" + x for x in ins.srcs) + ")"
            else:
                s = repr(ins)
            lines.append("  " + s)
        t = b.term
        if isinstance(t, CondBr):
            s = f"condbr %{t.cond}, {t.then}, {t.other}"
        elif isinstance(t, Br):
            s = f"br {t.target}"
        elif isinstance(t, ReturnValue):
            s = f"return %{t.src}"
        elif isinstance(t, Dispatch):
            s = "dispatch"
        elif isinstance(t, BranchTaken):
            s = "branch"
        elif isinstance(t, EnterSlowPath):
            s = f"slowpath {t.tag}"
        elif isinstance(t, MakeCallMarker):
            s = f"call {t.tag}"
        else:
            s = "trap"
        lines.append("  " + s)
    return "\n".join(lines) + "\n"


def count_instructions(f):
    return sum(len(b.instrs) + 1 for b in f.blocks)


def type_checks(f):
    return [(b.name, i) for b in f.blocks for i in b.instrs if isinstance(i, (TypeCheck, RuleCheck))]
