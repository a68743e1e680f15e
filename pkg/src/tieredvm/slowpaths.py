"""Out-of-line routines reached from handler slow paths (both tiers share them)."""
from __future__ import annotations

from .boxing import (DOUBLE_LIMIT, FALSE, FUNC_LO, HANDLE_MASK, NIL, STRING_LO, TABLE_LO,
                     TRUE, d2w, w2d)
from .runtime import (Table, fmt_number, str_to_number, table_get, table_len, table_set,
                      type_name)
from .semir import float_div, float_mod

_ARITH = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": float_div,
    "mod": float_mod,
}


def _num(st, w):
    if w < DOUBLE_LIMIT:
        return w2d(w)
    if w >= STRING_LO:
        return str_to_number(st.heap.objs[w & HANDLE_MASK])
    return None


def sp_arith(st, op, a, b):
    x = _num(st, a)
    y = _num(st, b)
    if x is None or y is None:
        bad = b if x is not None else a
        raise st.heap.error(f"attempt to perform arithmetic on a {type_name(bad)} value")
    return d2w(_ARITH[op](x, y))


def sp_compare(st, op, a, b):
    if a < DOUBLE_LIMIT and b < DOUBLE_LIMIT:
        x, y = w2d(a), w2d(b)
    elif a >= STRING_LO and b >= STRING_LO:
        x = st.heap.objs[a & HANDLE_MASK]
        y = st.heap.objs[b & HANDLE_MASK]
    else:
        raise st.heap.error(f"attempt to compare {type_name(a)} with {type_name(b)}")
    return x < y if op == "lt" else x <= y


def sp_equal(st, op, a, b):
    # only reached when at least one side is not a double, so raw words decide
    return a == b


def sp_len(st, v):
    if v >= STRING_LO:
        return d2w(float(len(st.heap.objs[v & HANDLE_MASK].encode("utf-8"))))
    if TABLE_LO <= v < FUNC_LO:
        return d2w(float(table_len(st.heap.objs[v & HANDLE_MASK])))
    raise st.heap.error(f"attempt to get length of a {type_name(v)} value")


def _concat_piece(st, w):
    if w < DOUBLE_LIMIT:
        return fmt_number(w2d(w))
    if w >= STRING_LO:
        return st.heap.objs[w & HANDLE_MASK]
    raise st.heap.error(f"attempt to concatenate a {type_name(w)} value")


def sp_concat(st, a, b):
    return st.heap.intern(_concat_piece(st, a) + _concat_piece(st, b))


def index_error(st, v, name=None):
    if name is not None:
        return st.heap.error(f"attempt to index a {type_name(v)} value (field '{st.heap.objs[name & HANDLE_MASK]}')")
    return st.heap.error(f"attempt to index a {type_name(v)} value")


def sp_getbyval(st, obj, key):
    if TABLE_LO <= obj < FUNC_LO:
        return table_get(st.heap, st.heap.objs[obj & HANDLE_MASK], key)
    raise index_error(st, obj)


def sp_setbyval(st, obj, key, val):
    if TABLE_LO <= obj < FUNC_LO:
        table_set(st.heap, st.heap.objs[obj & HANDLE_MASK], key, val)
        return
    raise index_error(st, obj)


def sp_setlist(st, tab, start_slot, n, first, with_varres):
    from .interpreter import varres_values
    t = st.heap.objs[tab & HANDLE_MASK]
    vals = st.stack[start_slot:start_slot + n]
    if with_varres:
        vals = vals + varres_values(st)
    heap = st.heap
    for k, v in enumerate(vals):
        table_set(heap, t, d2w(float(first + k)), v)


def sp_not(v):
    return TRUE if (v == NIL or v == FALSE) else FALSE


def new_table(st):
    return st.heap.new_table()


SLOW_ROUTINES = {
    "arith": ("sp_arith", "value"),
    "compare": ("sp_compare", "bool"),
    "equal": ("sp_equal", "bool"),
}

__all__ = ["sp_arith", "sp_compare", "sp_equal", "sp_len", "sp_concat", "sp_getbyval",
           "sp_setbyval", "sp_setlist", "sp_not", "index_error", "Table"]
