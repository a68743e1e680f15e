"""Execution engine shared by the interpreter and the compiled tier.

Guest frames live on one growable list (the coroutine stack), never on the
Python stack. A frame is laid out as

    [variadic args...][callee, caller base, return site, #varargs][locals...]

with ``base`` pointing at local 0. Handlers receive the pinned state ``st``
and their position and return the next position, or ``FRAME_SWITCH`` after
they moved execution to another frame or tier.
"""
from __future__ import annotations

from bisect import bisect_left

from .boxing import FALSE, FUNC_LO, HANDLE_MASK, NIL, STRING_LO, TRUE
from .runtime import Closure, GuestError, LibFunction, Upvalue, type_name

FRAME_SWITCH = -1
HEADER = 4
STACK_LIMIT = 1 << 24
VARRES = 0xFFFF                 # "store all results as variadic results"

RS_TOP, RS_INTERP, RS_JIT, RS_LIB = range(4)

TIER_INTERP, TIER_COMPILED, TIER_FAILED = range(3)


class Counters:
    KEYS = ("bytecodesExecuted", "decodesPerformed", "branchesTaken", "icHits", "icMisses",
            "icStubsCreated", "tierUps", "osrEntries", "compiledBytecodes", "emittedCellBytes")

    def __init__(self):
        self.bytecodes = 0
        self.decodes = 0
        self.branches = 0
        self.ic_hits = 0
        self.ic_misses = 0
        self.stubs = 0
        self.tier_ups = 0
        self.osr = 0
        self.compiled = 0
        self.cell_bytes = 0
        self.effect_switches = 0
        self.existence_checks = 0
        self.fn_checks = 0
        self.copies = 0
        self.brute = 0

    def as_dict(self):
        return {"bytecodesExecuted": self.bytecodes, "decodesPerformed": self.decodes,
                "branchesTaken": self.branches, "icHits": self.ic_hits,
                "icMisses": self.ic_misses, "icStubsCreated": self.stubs,
                "tierUps": self.tier_ups, "osrEntries": self.osr,
                "compiledBytecodes": self.compiled, "emittedCellBytes": self.cell_bytes}


class CodeBlock:
    """One function prototype: its bytecode, constants, profile and tier state."""

    def __init__(self, stream, nparams, is_vararg, frame_size, protos=(), upvals=(),
                 name="?", line=0, ic_descs=()):
        self.stream = stream
        self.buf = stream.buf
        self.consts = stream.consts
        self.ords = stream.ordinals()
        self.nparams = nparams
        self.is_vararg = is_vararg
        self.frame_size = frame_size
        self.protos = list(protos)
        self.upvals = list(upvals)        # (kind, index) per captured variable
        self.name = name
        self.line = line
        self.ic_descs = list(ic_descs)    # descriptor per interpreter IC slot
        self.ics = []
        self.count = 0
        self.tier = TIER_INTERP
        self.co = None

    def reset_ics(self, make_slot):
        self.ics = [make_slot(d) for d in self.ic_descs]

    def walk(self):
        yield self
        for p in self.protos:
            yield from p.walk()


class Pinned:
    """The state threaded through every handler."""
    __slots__ = ("stack", "base", "cb", "co", "buf", "consts", "seg", "pos", "closure",
                 "heap", "vm", "C", "genv", "depth", "peak", "uv_slots", "uv_objs",
                 "vr_start", "vr_count", "vr_stamp", "step", "debug", "halted", "results")

    def __init__(self, vm):
        self.vm = vm
        self.heap = vm.heap
        self.C = vm.counters
        self.genv = vm.genv
        self.stack = [NIL] * 1024
        self.base = 0
        self.cb = None
        self.co = None
        self.buf = None
        self.consts = None
        self.seg = 0
        self.pos = 0
        self.closure = None
        self.depth = 0
        self.peak = 0
        self.uv_slots = []
        self.uv_objs = []
        self.vr_start = 0
        self.vr_count = 0
        self.vr_stamp = -2
        self.step = 0
        self.debug = vm.debug
        self.halted = False
        self.results = None


def grow_stack(st, need):
    stack = st.stack
    n = len(stack)
    if need > STACK_LIMIT:
        raise st.heap.error("stack overflow")
    while n < need:
        n *= 2
    stack.extend([NIL] * (min(n, STACK_LIMIT) - len(stack)))


# -- profiling -----------------------------------------------------------------

def take_branch(st, pos, target):
    cb = st.cb
    ords = cb.ords
    d = ords[pos] - st.seg + 1
    cb.count += d
    C = st.C
    C.bytecodes += d
    C.branches += 1
    st.seg = ords[target]
    return target


def osr_branch(st, pos, target):
    take_branch(st, pos, target)
    cb = st.cb
    vm = st.vm
    if vm.osr and vm.tiering:
        co = cb.co
        if co is None and cb.tier == TIER_INTERP and cb.count >= vm.threshold:
            co = vm.tier_up(cb)
        if co is not None:
            st.C.osr += 1
            st.co = co
            st.pos = co.bc_to_cell[cb.ords[target]]
            return FRAME_SWITCH
    return target


def credit_exit(st, pos):
    cb = st.cb
    d = cb.ords[pos] - st.seg + 1
    cb.count += d
    st.C.bytecodes += d


# -- calls -------------------------------------------------------------------------

def enter_function(st, closure, base):
    cb = closure.proto
    st.base = base
    st.closure = closure
    co = cb.co
    if co is None and cb.tier == TIER_INTERP:
        vm = st.vm
        if vm.tiering and cb.count >= vm.threshold:
            co = vm.tier_up(cb)
    st.cb = cb
    if co is not None:
        st.co = co
        st.pos = co.entry
    else:
        st.co = None
        st.buf = cb.buf
        st.consts = cb.consts
        st.pos = 0
        st.seg = 0


def enter_closure(st, fo, c, nargs, rs, caller_base):
    """Build the callee frame for a call whose callee sits in slot ``c``."""
    cb = fo.proto
    np = cb.nparams
    stack = st.stack
    argbase = c + HEADER
    if nargs > np and cb.is_vararg:
        nv = nargs - np
        top = argbase + nargs
        newbase = top + nv + HEADER
        need = newbase + cb.frame_size
        if need > len(stack):
            grow_stack(st, need)
        stack[top:top + nv] = stack[argbase + np:argbase + nargs]
        stack[newbase:newbase + np] = stack[argbase:argbase + np]
        st.C.copies += nv + np
        h = newbase - HEADER
        stack[h] = stack[c]
        stack[h + 1] = caller_base
        stack[h + 2] = rs
        stack[h + 3] = nv
    else:
        newbase = argbase
        need = newbase + cb.frame_size
        if need > len(stack):
            grow_stack(st, need)
        while nargs < np:
            stack[argbase + nargs] = NIL
            nargs += 1
        stack[c + 1] = caller_base
        stack[c + 2] = rs
        stack[c + 3] = 0
    d = st.depth + 1
    st.depth = d
    if d > st.peak:
        st.peak = d
    enter_function(st, fo, newbase)


def call_error(st, f):
    return st.heap.error(f"attempt to call a {type_name(f)} value")


def do_call(st, c, nargs, nrets, rs):
    """Call the function in slot ``c``; True if a guest frame was entered."""
    f = st.stack[c]
    if FUNC_LO <= f < STRING_LO:
        fo = st.heap.objs[f & HANDLE_MASK]
        if fo.__class__ is Closure:
            enter_closure(st, fo, c, nargs, rs, st.base)
            return True
        return call_lib(st, fo, c, nargs, nrets, rs)
    raise call_error(st, f)


def call_lib(st, fo, c, nargs, nrets, rs):
    if fo.raw:
        return fo.fn(st, c, nargs, nrets, rs)
    stack = st.stack
    res = fo.fn(st, stack[c + HEADER:c + HEADER + nargs])
    store_results(st, c, nrets, res)
    return False


def store_results(st, dest, nrets, vals):
    stack = st.stack
    if nrets == 1:
        stack[dest] = vals[0] if vals else NIL
    elif nrets == VARRES:
        n = len(vals)
        if dest + n > len(stack):
            grow_stack(st, dest + n + 1)
        stack[dest:dest + n] = vals
        st.vr_start = dest
        st.vr_count = n
        st.vr_stamp = st.step
    else:
        n = len(vals)
        if dest + nrets > len(stack):
            grow_stack(st, dest + nrets + 1)
        for k in range(nrets):
            stack[dest + k] = vals[k] if k < n else NIL


def varres_values(st):
    if st.debug and st.vr_stamp != st.step - 1:
        raise AssertionError("variadic results read after an intervening bytecode")
    s = st.vr_start
    return st.stack[s:s + st.vr_count]


def call_varres(st, c, nargs, nrets, rs):
    vals = varres_values(st)
    n = len(vals)
    dst = c + HEADER + nargs
    if dst + n > len(st.stack):
        grow_stack(st, dst + n + 1)
    st.stack[dst:dst + n] = vals
    st.C.copies += n
    return do_call(st, c, nargs + n, nrets, rs)


def do_tail_call(st, c, nargs):
    """Replace the current frame by a call to the function in slot ``c``."""
    stack = st.stack
    base = st.base
    f = stack[c]
    if st.uv_slots and st.uv_slots[-1] >= base:
        close_upvalues(st, base)
    if FUNC_LO <= f < STRING_LO:
        fo = st.heap.objs[f & HANDLE_MASK]
        if fo.__class__ is Closure:
            bottom = base - HEADER - stack[base - 1]
            caller = stack[base - 3]
            rs = stack[base - 2]
            stack[bottom] = f
            stack[bottom + HEADER:bottom + HEADER + nargs] = stack[c + HEADER:c + HEADER + nargs]
            st.C.copies += nargs
            st.depth -= 1
            enter_closure(st, fo, bottom, nargs, rs, caller)
            return FRAME_SWITCH
        if not fo.raw:
            return do_return(st, fo.fn(st, stack[c + HEADER:c + HEADER + nargs]))
        rs = (RS_LIB, tail_return_cont, 0, 0, c, VARRES, None)
        if fo.fn(st, c, nargs, VARRES, rs):
            return FRAME_SWITCH
        return do_return(st, varres_values(st))
    raise call_error(st, f)


def tail_call_varres(st, c, nargs):
    vals = varres_values(st)
    n = len(vals)
    dst = c + HEADER + nargs
    if dst + n > len(st.stack):
        grow_stack(st, dst + n + 1)
    st.stack[dst:dst + n] = vals
    return do_tail_call(st, c, nargs + n)


def tail_return_cont(st, frame_base, vals, rs):
    st.base = frame_base
    return do_return(st, vals)


def do_return(st, vals):
    """Pop the current frame and hand ``vals`` to the caller's return continuation."""
    stack = st.stack
    base = st.base
    if st.uv_slots and st.uv_slots[-1] >= base:
        close_upvalues(st, base)
    rs = stack[base - 2]
    caller = stack[base - 3]
    st.depth -= 1
    kind = rs[0]
    if kind == RS_LIB:
        return rs[1](st, caller, vals, rs)
    store_results(st, rs[4], rs[5], vals)
    if kind == RS_TOP:
        st.halted = True
        st.results = list(vals)
        return FRAME_SWITCH
    st.base = caller
    st.closure = rs[6]
    if kind == RS_INTERP:
        cb = rs[1]
        st.cb = cb
        st.co = None
        st.buf = cb.buf
        st.consts = cb.consts
        st.pos = rs[2]
        st.seg = rs[3]
    else:
        co = rs[1]
        st.co = co
        st.cb = co.cb
        st.pos = rs[2]
    return FRAME_SWITCH


def lib_return(st, lib_base, vals):
    st.base = lib_base
    return do_return(st, vals)


def push_lib_frame(st, c, rs):
    """Turn the call at slot ``c`` into a frame for a raw library function."""
    stack = st.stack
    stack[c + 1] = st.base
    stack[c + 2] = rs
    stack[c + 3] = 0
    st.depth += 1
    if st.depth > st.peak:
        st.peak = st.depth
    st.base = c + HEADER
    st.closure = None
    return c + HEADER


def long_jump(st, target_base, vals):
    """Discard frames up to and including ``target_base`` and return ``vals`` from it."""
    stack = st.stack
    b = st.base
    discarded = 0
    while b != target_base:
        rs = stack[b - 2]
        if rs[0] == RS_TOP:
            raise ValueError("long jump target is not on the stack")
        _credit_frame(rs)
        st.depth -= 1
        discarded += 1
        b = stack[b - 3]
    close_upvalues(st, target_base)
    st.base = target_base
    do_return(st, vals)
    return discarded + 1


def _credit_frame(rs):
    if rs[0] == RS_INTERP:
        cb = rs[1]
        return cb.ords[rs[2]] - rs[3]
    return 0


def unwind(st, err):
    """Propagate a guest error to the nearest catching library frame."""
    stack = st.stack
    objs = st.heap.objs
    b = st.base
    cur = objs[stack[b - 4] & HANDLE_MASK] if b >= HEADER else None
    if st.co is None and cur.__class__ is Closure and st.buf is not None:
        credit_exit(st, st.pos)
    while True:
        fo = objs[stack[b - 4] & HANDLE_MASK]
        if fo.__class__ is LibFunction and fo.catcher:
            close_upvalues(st, b)
            st.base = b
            do_return(st, [FALSE, err.value])
            return
        rs = stack[b - 2]
        st.depth -= 1
        if rs[0] == RS_TOP:
            close_upvalues(st, 0)
            st.halted = True
            raise err
        d = _credit_frame(rs)
        if d:
            rs[1].count += d
            st.C.bytecodes += d
        b = stack[b - 3]


# -- upvalues ------------------------------------------------------------------------

def find_upvalue(st, slot):
    slots = st.uv_slots
    i = bisect_left(slots, slot)
    if i < len(slots) and slots[i] == slot:
        return st.uv_objs[i]
    uv = Upvalue(slot)
    slots.insert(i, slot)
    st.uv_objs.insert(i, uv)
    return uv


def close_upvalues(st, floor):
    slots = st.uv_slots
    if not slots or slots[-1] < floor:
        return
    i = bisect_left(slots, floor)
    stack = st.stack
    for uv in st.uv_objs[i:]:
        uv.value = stack[uv.slot]
        uv.open = False
    del slots[i:]
    del st.uv_objs[i:]


UV_LOCAL, UV_LOCAL_IMMUTABLE, UV_PARENT, UV_SELF = range(4)


def make_closure(st, index):
    proto = st.cb.protos[index]
    base = st.base
    stack = st.stack
    ups = []
    self_slots = []
    for kind, idx in proto.upvals:
        if kind == UV_LOCAL:
            ups.append(find_upvalue(st, base + idx))
        elif kind == UV_LOCAL_IMMUTABLE:
            ups.append(stack[base + idx])
        elif kind == UV_PARENT:
            ups.append(st.closure.upvals[idx])
        else:
            self_slots.append(len(ups))
            ups.append(NIL)
    clo = Closure(proto, ups)
    w = st.heap.new_function(clo)
    for k in self_slots:
        ups[k] = w
    return w


# -- variadic arguments --------------------------------------------------------------

def vararg_to_varres(st):
    nv = st.stack[st.base - 1]
    st.vr_start = st.base - HEADER - nv
    st.vr_count = nv
    st.vr_stamp = st.step


def vararg_copy(st, dst, n):
    stack = st.stack
    nv = stack[st.base - 1]
    src = st.base - HEADER - nv
    for k in range(n):
        stack[dst + k] = stack[src + k] if k < nv else NIL


# -- dispatch loops ------------------------------------------------------------------

def interp_loop(st, handlers):
    buf = st.buf
    pos = st.pos
    n = 0
    try:
        while True:
            pos = handlers[buf[pos] | (buf[pos + 1] << 8)](st, pos)
            n += 1
            if pos < 0:
                if st.co is not None or st.halted:
                    return
                buf = st.buf
                pos = st.pos
    except GuestError:
        st.pos = pos
        n += 1
        raise
    finally:
        st.C.decodes += n


def jit_loop(st):
    co = st.co
    hs = co.handlers
    ps = co.payloads
    i = st.pos
    n = 0
    try:
        while True:
            i = hs[i](st, ps[i], i)
            n += 1
            if i < 0:
                if st.co is None or st.halted:
                    return
                co = st.co
                hs = co.handlers
                ps = co.payloads
                i = st.pos
    except GuestError:
        n += 1
        raise
    finally:
        st.C.bytecodes += n


def debug_interp_loop(st, handlers):
    """Like ``interp_loop`` but counts every step and enables freshness assertions."""
    buf = st.buf
    pos = st.pos
    C = st.C
    try:
        while True:
            st.step += 1
            C.brute += 1
            C.decodes += 1
            pos = handlers[buf[pos] | (buf[pos + 1] << 8)](st, pos)
            if pos < 0:
                if st.co is not None or st.halted:
                    return
                buf = st.buf
                pos = st.pos
    except GuestError:
        st.pos = pos
        raise


def debug_jit_loop(st):
    co = st.co
    i = st.pos
    C = st.C
    while True:
        st.step += 1
        C.brute += 1
        C.bytecodes += 1
        i = co.handlers[i](st, co.payloads[i], i)
        if i < 0:
            if st.co is None or st.halted:
                return
            co = st.co
            i = st.pos


def execute(st, handlers):
    """Run until the outermost frame returns; guest errors propagate to catchers."""
    debug = st.debug
    while not st.halted:
        try:
            if st.co is None:
                if debug:
                    debug_interp_loop(st, handlers)
                else:
                    interp_loop(st, handlers)
            elif debug:
                debug_jit_loop(st)
            else:
                jit_loop(st)
        except GuestError as e:
            unwind(st, e)
    return st.results


def run_closure(st, handlers, fword, args):
    """Call the guest function ``fword`` with ``args`` from the host and run it to completion."""
    stack = st.stack
    c = HEADER
    stack[c] = fword
    for k, a in enumerate(args):
        stack[c + HEADER + k] = a
    st.halted = False
    st.results = None
    rs = (RS_TOP, None, 0, 0, 0, 0, None)
    fo = st.heap.objs[fword & HANDLE_MASK]
    stack[0:4] = [fword, 0, rs, 0]
    st.base = HEADER
    if do_call(st, c, len(args), 0, rs):
        return execute(st, handlers)
    return []


__all__ = ["FRAME_SWITCH", "HEADER", "VARRES", "TRUE", "FALSE", "NIL"]
