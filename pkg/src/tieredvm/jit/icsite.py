"""Tier-2 inline-cache sites: an inline slab, a chain of outlined stubs, and the call cache."""
from __future__ import annotations

from ..boxing import FUNC_LO, HANDLE_MASK, STRING_LO
from ..interpreter import call_error, call_lib, enter_closure
from ..runtime import Closure
from .holes import make_hole, patch_value, prove_range, recover_source

MAX_STUBS = 8
EMPTY = -1


class StubFamily:
    """Per-descriptor stub code: one patched effect function per concrete effect.

    Payload fields with a declared range are stored as holes; the stub code
    recovers them with the decision the range prover picked.
    """

    def __init__(self, desc, namespace):
        from ..ic import effect_source
        self.desc = desc
        self.fns = []
        self.patches = []
        for c in desc.concrete:
            holes = []
            patched = {}
            for f in c.payload:
                if f.lo is not None:
                    e = make_hole("icStateField", (c.effect.name, f.name), lo=f.lo, hi=f.hi)
                    d = prove_range(e)
                    patched[f.name] = recover_source(e, d, "{}")
                    holes.append((e, d))
                else:
                    holes.append(None)
            name = f"stub_{desc.name}_{c.ordinal}"
            ns = dict(namespace)
            exec(compile(effect_source(c, name, patched), f"<stub {c.label}>", "exec"), ns)
            self.fns.append(ns[name])
            self.patches.append(holes)

    def patch(self, c, payload):
        return tuple(v if h is None else patch_value(h[0], h[1], v)
                     for h, v in zip(self.patches[c.ordinal], payload))


class ICSite:
    """One generic-IC site in compiled code."""
    __slots__ = ("desc", "family", "plain", "capacity", "slab_key", "slab_fn", "slab_state",
                 "slab_ordinal", "chain", "mega", "created")

    def __init__(self, desc, family, plain_fns):
        self.desc = desc
        self.family = family
        self.plain = plain_fns
        self.capacity = desc.slab_capacity
        self.slab_key = desc.impossible_key if desc.impossible_key is not None else EMPTY
        self.slab_fn = None
        self.slab_state = None
        self.slab_ordinal = None
        self.chain = []           # (key, fn, patched state, ordinal), newest first
        self.mega = False
        self.created = 0

    @property
    def slab_occupied(self):
        return self.slab_fn is not None

    def install(self, key, concrete, payload):
        """Record a new entry: the slab if it is free and fits, else a prepended stub."""
        patched = self.family.patch(concrete, payload)
        fn = self.family.fns[concrete.ordinal]
        if self.slab_fn is None and concrete.payload_size <= self.capacity:
            self.slab_key = key
            self.slab_fn = fn
            self.slab_state = patched
            self.slab_ordinal = concrete.ordinal
            return False
        self.chain.insert(0, (key, fn, patched, concrete.ordinal))
        self.created += 1
        if len(self.chain) >= MAX_STUBS:
            self.mega = True
        return True

    def lookup_order(self):
        keys = []
        if self.slab_fn is not None:
            keys.append(self.slab_key)
        keys.extend(e[0] for e in self.chain)
        return keys


def site_miss(st, s, key, obj, name, val):
    C = st.C
    C.ic_misses += 1
    desc = s.desc
    d = desc.body(obj, name)
    c = desc.concrete_for(d.effect, d.state)
    payload = desc.payload_of(c, d.state)
    if d.cacheable and not s.mega and st.vm.use_ic:
        if s.install(key, c, payload):
            C.stubs += 1
    return s.plain[c.ordinal](obj, name, val, payload)


MODE_EMPTY, MODE_DIRECT, MODE_CLOSURE = range(3)


class CallSite:
    """Direct/closure dual-mode call cache."""
    __slots__ = ("mode", "fn", "closure", "proto", "transitions")

    def __init__(self):
        self.mode = MODE_EMPTY
        self.fn = None
        self.closure = None
        self.proto = None
        self.transitions = 0


def jit_call(st, site, c, nargs, nrets, rs):
    f = st.stack[c]
    if site.mode == MODE_DIRECT and f == site.fn:
        # a hit proves the callee is this exact function: no type check, no code load
        enter_closure(st, site.closure, c, nargs, rs, st.base)
        return True
    st.C.fn_checks += 1
    if not FUNC_LO <= f < STRING_LO:
        raise call_error(st, f)
    fo = st.heap.objs[f & HANDLE_MASK]
    if fo.__class__ is not Closure:
        return call_lib(st, fo, c, nargs, nrets, rs)
    if site.mode == MODE_CLOSURE:
        if fo.proto is not site.proto:
            site.mode = MODE_DIRECT
            site.fn = f
            site.closure = fo
    elif site.mode == MODE_DIRECT and fo.proto is site.closure.proto:
        site.mode = MODE_CLOSURE
        site.proto = fo.proto
        site.transitions += 1
    elif site.mode != MODE_CLOSURE:
        site.mode = MODE_DIRECT
        site.fn = f
        site.closure = fo
    enter_closure(st, fo, c, nargs, rs, st.base)
    return True
