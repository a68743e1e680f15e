"""The guest's small standard library."""
from __future__ import annotations

import math
import time

from ..boxing import DOUBLE_LIMIT, FALSE, HANDLE_MASK, NIL, STRING_LO, TRUE, d2w, w2d
from ..interpreter import (HEADER, RS_LIB, VARRES, do_call, grow_stack, lib_return,
                           push_lib_frame)
from ..runtime import GuestError, LibFunction, str_to_number, tostring, type_name


def _arg(args, k):
    return args[k] if k < len(args) else NIL


def _num_arg(st, args, k, fname):
    w = _arg(args, k)
    if w < DOUBLE_LIMIT:
        return w2d(w)
    if w >= STRING_LO:
        x = str_to_number(st.heap.objs[w & HANDLE_MASK])
        if x is not None:
            return x
    raise st.heap.error(f"bad argument #{k + 1} to '{fname}' (number expected, got "
                        f"{'no value' if k >= len(args) else type_name(w)})")


def lib_print(st, args):
    heap = st.heap
    st.vm.write("\t".join(tostring(heap, w) for w in args) + "\n")
    return []


def lib_clock(st, args):
    return [d2w(time.process_time())]


def lib_floor(st, args):
    return [d2w(float(math.floor(_num_arg(st, args, 0, "floor"))))]


def lib_sqrt(st, args):
    x = _num_arg(st, args, 0, "sqrt")
    return [d2w(math.sqrt(x) if x >= 0 else math.nan)]


def lib_error(st, args):
    raise GuestError(_arg(args, 0))


def lib_tostring(st, args):
    return [st.heap.intern(tostring(st.heap, _arg(args, 0)))]


def lib_tonumber(st, args):
    w = _arg(args, 0)
    if w < DOUBLE_LIMIT:
        return [w]
    if w >= STRING_LO:
        x = str_to_number(st.heap.objs[w & HANDLE_MASK])
        if x is not None:
            return [d2w(x)]
    return [NIL]


def lib_type(st, args):
    if not args:
        raise st.heap.error("bad argument #1 to 'type' (value expected)")
    return [st.heap.intern(type_name(args[0]))]


def lib_select(st, args):
    n = _arg(args, 0)
    if n >= STRING_LO and st.heap.objs[n & HANDLE_MASK] == "#":
        return [d2w(float(len(args) - 1))]
    i = int(_num_arg(st, args, 0, "select"))
    if i < 0:
        i = len(args) + i
        if i < 1:
            raise st.heap.error("bad argument #1 to 'select' (index out of range)")
    elif i == 0:
        raise st.heap.error("bad argument #1 to 'select' (index out of range)")
    return list(args[i:])


def pcall_cont(st, frame_base, vals, rs):
    return lib_return(st, frame_base, [TRUE] + list(vals))


def lib_pcall(st, c, nargs, nrets, rs):
    """Call the first argument in protected mode; errors unwind to this frame."""
    if nargs == 0:
        raise st.heap.error("bad argument #1 to 'pcall' (value expected)")
    fbase = push_lib_frame(st, c, rs)
    stack = st.stack
    n = nargs - 1
    need = fbase + HEADER + n + 1
    if need > len(stack):
        grow_stack(st, need)
    # callee stays in the first argument slot; its arguments move up past a header
    stack[fbase + HEADER:fbase + HEADER + n] = stack[fbase + 1:fbase + 1 + n]
    st.C.copies += n
    inner = (RS_LIB, pcall_cont, 0, 0, fbase, VARRES, None)
    try:
        if do_call(st, fbase, n, VARRES, inner):
            return True
    except GuestError as e:
        return lib_return(st, fbase, [FALSE, e.value])
    return lib_return(st, fbase, [TRUE] + st.stack[st.vr_start:st.vr_start + st.vr_count])


GLOBALS = {
    "print": lib_print,
    "clock": lib_clock,
    "error": lib_error,
    "tostring": lib_tostring,
    "tonumber": lib_tonumber,
    "type": lib_type,
    "select": lib_select,
}

MATH = {"floor": lib_floor, "sqrt": lib_sqrt}


def install(vm):
    heap = vm.heap
    env = vm.genv_table
    for name, fn in GLOBALS.items():
        vm.set_global(name, heap.new_function(LibFunction(name, fn)))
    vm.set_global("pcall", heap.new_function(LibFunction("pcall", lib_pcall, raw=True,
                                                         catcher=True)))
    math_w = heap.new_table()
    for name, fn in MATH.items():
        vm.set_field(math_w, name, heap.new_function(LibFunction(name, fn)))
    vm.set_global("math", math_w)
    vm.set_field(math_w, "huge", d2w(math.inf))
    vm.set_field(math_w, "pi", d2w(math.pi))
    return env
