"""Random well-formed SemFunctions plus an independent reachability oracle."""
import itertools
import random

from tieredvm import boxing, semir
from tieredvm.boxing import LATTICE, tDouble, tDoubleNaN, tDoubleNotNaN
from tieredvm.semir import (Block, Box, Br, CondBr, Const, Dispatch, EnterSlowPath, Opaque,
                            Param, PrimOp, ReturnValue, SemFunction, TypeCheck, Unbox)

TOP = LATTICE.top
DOUBLE_MASKS = (tDouble, tDoubleNotNaN, tDoubleNaN)


def rand_mask(rng):
    return rng.randint(1, TOP)


def random_function(rng, max_params=3, max_blocks=8):
    n = rng.randint(1, max_params)
    nblocks = rng.randint(1, max_blocks)
    names = [f"b{i}" for i in range(nblocks)]
    blocks = []
    extra = []
    budget = max_blocks - nblocks
    for i, name in enumerate(names):
        later = names[i + 1:]
        instrs = []
        conds = []
        for k in range(rng.randint(0, 3)):
            v = f"t{k}"
            instrs.append(TypeCheck(v, rng.randrange(n), rand_mask(rng)))
            conds.append(v)
        if conds and rng.random() < 0.3:
            op = rng.choice(("and", "or", "not"))
            srcs = (conds[0],) if op == "not" or len(conds) < 2 else (conds[0], conds[1])
            if op != "not" and len(srcs) < 2:
                op = "not"
            instrs.append(PrimOp("j", op, srcs))
            conds.append("j")
        if rng.random() < 0.15:
            instrs.append(Opaque("o", "probe"))
            instrs.append(PrimOp("ob", "eq", ("o", "o")))
            conds.append("ob")
        r = rng.random()
        if later and conds and r < 0.55:
            term = CondBr(rng.choice(conds), rng.choice(later), rng.choice(later))
        elif later and r < 0.7:
            term = Br(rng.choice(later))
        elif budget > 0 and r < 0.85:
            # a private leaf reached only when the guard proves a double
            p = rng.randrange(n)
            leaf = f"u{len(extra)}"
            instrs.append(TypeCheck("g", p, rng.choice(DOUBLE_MASKS)))
            q = rng.randrange(n)
            leaf_instrs = [Unbox("a", p, tDouble)]
            if q != p:
                leaf_instrs.append(Param("pq", q))
            leaf_instrs += [PrimOp("r", rng.choice(("add", "mul", "sub")), ("a", "a")),
                            Box("w", tDouble, "r")]
            extra.append(Block(leaf, leaf_instrs, ReturnValue("w")))
            budget -= 1
            other = rng.choice(later) if later else None
            if other is None:
                slow = f"s{len(extra)}"
                extra.append(Block(slow, [], EnterSlowPath("guard")))
                budget -= 1
                other = slow
            term = CondBr("g", leaf, other)
        else:
            term = _leaf_term(rng, n, instrs)
        blocks.append(Block(name, instrs, term))
    return SemFunction("rand", n, blocks + extra).verify()


def _leaf_term(rng, n, instrs):
    r = rng.random()
    if r < 0.3:
        instrs.append(Param("pv", rng.randrange(n)))
        return ReturnValue("pv")
    if r < 0.5:
        instrs.append(Const("cv", rng.random() < 0.5))
        return ReturnValue("cv")
    if r < 0.75:
        return EnterSlowPath(rng.choice(("x", "y")))
    return Dispatch()


def random_predicate(rng, n):
    while True:
        p = semir.TypePredicate.conjunction([rand_mask(rng) for _ in range(n)])
        if rng.random() < 0.3:
            q = semir.TypePredicate.conjunction([rand_mask(rng) for _ in range(n)])
            p = p.minus(q)
        if p.tuples:
            return p


def sample_inputs(tup, k):
    """The k-th representative word for each operand's base type (k = 0, 1, 2)."""
    out = []
    for i, t in enumerate(tup):
        reps = boxing.representatives(t)
        out.append(reps[(k + i) % len(reps)])
    return out


def outcomes_match(f, g, pred, per_type=3):
    for tup in pred:
        for k in range(per_type):
            args = sample_inputs(tup, k)
            a = semir.run(f, args)
            b = semir.run(g, args)
            if a != b:
                return False, (tup, args, a, b)
    return True, None


# -- oracle for the per-block type map ---------------------------------------

def oracle_visited(f, tup):
    """Explore f under one type tuple; any condition not made of type checks forks."""
    blocks = {b.name: b for b in f.blocks}
    seen = set()
    stack = [f.entry]
    while stack:
        name = stack.pop()
        if name in seen:
            continue
        seen.add(name)
        b = blocks[name]
        vals = {}
        for ins in b.instrs:
            if isinstance(ins, TypeCheck):
                vals[ins.dst] = tup[ins.param] in LATTICE.bases(ins.mask)
            elif isinstance(ins, Const):
                vals[ins.dst] = ins.value
            elif isinstance(ins, PrimOp) and ins.op in ("and", "or", "not"):
                xs = [vals.get(s) for s in ins.srcs]
                if None in xs:
                    vals[ins.dst] = None
                elif ins.op == "not":
                    vals[ins.dst] = not xs[0]
                elif ins.op == "and":
                    vals[ins.dst] = xs[0] and xs[1]
                else:
                    vals[ins.dst] = xs[0] or xs[1]
            else:
                vals[ins.dst] = None
        t = b.term
        if isinstance(t, CondBr):
            c = vals.get(t.cond)
            stack.extend([t.then, t.other] if c is None else [t.then if c else t.other])
        elif isinstance(t, Br):
            stack.append(t.target)
    return seen


def oracle_type_map(f, pred):
    m = {b.name: [0] * f.nparams for b in f.blocks}
    for tup in pred:
        for name in oracle_visited(f, tup):
            for i, t in enumerate(tup):
                m[name][i] |= 1 << t
    return m


def all_tuples(n):
    return list(itertools.product(range(LATTICE.size), repeat=n))


def make_rng(seed):
    return random.Random(seed)
