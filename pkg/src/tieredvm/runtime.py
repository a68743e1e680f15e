"""Heap entities of the guest language and the helpers shared by both tiers."""
from __future__ import annotations

import math

from . import boxing
from .boxing import (FALSE, FUNC_LO, HANDLE_MASK, NIL, STRING_LO, TABLE_LO, TRUE,
                     d2w, w2d)

INLINE_SLOTS = 4
DICT_MODE_LIMIT = 64           # a table with more named properties stops using hidden classes
DICT_CLASS_ID = 0x7FFFFFFF      # shared id for dictionary-mode tables; never cached
POS_ZERO = d2w(0.0)


class GuestError(Exception):
    """A guest-level error carrying the thrown boxed value."""

    def __init__(self, value, text=None):
        super().__init__(text if text is not None else value)
        self.value = value
        self.text = text


class HiddenClass:
    __slots__ = ("id", "props", "transitions", "count", "parent", "shapes")

    def __init__(self, cid, parent=None, shapes=None):
        self.id = cid
        self.parent = parent
        self.shapes = shapes
        self.props = dict(parent.props) if parent is not None else {}
        self.count = len(self.props)
        self.transitions = {}


class Shapes:
    """Owns every hidden class; ids start at 1 so 0 can never be a real key."""

    def __init__(self):
        self.root = HiddenClass(1, shapes=self)
        self.by_id = [None, self.root]

    def transition(self, hc, name):
        child = hc.transitions.get(name)
        if child is None:
            child = HiddenClass(len(self.by_id), hc, self)
            child.props[name] = hc.count
            child.count = hc.count + 1
            self.by_id.append(child)
            hc.transitions[name] = child
        return child


class Table:
    __slots__ = ("hc", "inline", "overflow", "arr", "hash", "dict_props", "meta")

    def __init__(self, hc):
        self.hc = hc
        self.inline = [NIL] * INLINE_SLOTS
        self.overflow = []
        self.arr = []
        self.hash = None
        self.dict_props = None     # name word -> value once in dictionary mode
        self.meta = 0              # stand-in for "may have a metatable"; see ICs


class Closure:
    __slots__ = ("proto", "upvals")

    def __init__(self, proto, upvals):
        self.proto = proto
        self.upvals = upvals


class LibFunction:
    """A host function. ``raw`` ones receive the call frame and may re-enter the guest."""
    __slots__ = ("name", "fn", "raw", "catcher")

    def __init__(self, name, fn, raw=False, catcher=False):
        self.name = name
        self.fn = fn
        self.raw = raw
        self.catcher = catcher


class Upvalue:
    __slots__ = ("slot", "value", "open")

    def __init__(self, slot):
        self.slot = slot
        self.value = NIL
        self.open = True


class Heap:
    def __init__(self):
        self.objs = [None]         # handle 0 is never allocated
        self.strings = {}
        self.shapes = Shapes()

    def intern(self, s):
        w = self.strings.get(s)
        if w is None:
            w = STRING_LO | len(self.objs)
            self.objs.append(s)
            self.strings[s] = w
        return w

    def new_table(self):
        self.objs.append(Table(self.shapes.root))
        return TABLE_LO | (len(self.objs) - 1)

    def new_function(self, fobj):
        self.objs.append(fobj)
        return FUNC_LO | (len(self.objs) - 1)

    def get(self, w):
        return self.objs[w & HANDLE_MASK]

    def string(self, w):
        return self.objs[w & HANDLE_MASK]

    def error(self, text):
        return GuestError(self.intern(text), text)


# -- properties -------------------------------------------------------------------

def prop_lookup(t, name):
    """Read a named property without any caching."""
    if t.dict_props is not None:
        return t.dict_props.get(name, NIL)
    i = t.hc.props.get(name)
    if i is None:
        return NIL
    return t.inline[i] if i < INLINE_SLOTS else t.overflow[i - INLINE_SLOTS]


def prop_store(heap, t, name, value):
    if t.dict_props is not None:
        t.dict_props[name] = value
        return
    hc = t.hc
    i = hc.props.get(name)
    if i is None:
        if hc.count >= DICT_MODE_LIMIT:
            to_dictionary_mode(t)
            t.dict_props[name] = value
            return
        hc = heap.shapes.transition(hc, name)
        t.hc = hc
        i = hc.props[name]
        if i >= INLINE_SLOTS:
            t.overflow.append(NIL)
    if i < INLINE_SLOTS:
        t.inline[i] = value
    else:
        t.overflow[i - INLINE_SLOTS] = value


def dict_store(t, name, value):
    if t.dict_props is None:
        to_dictionary_mode(t)
    t.dict_props[name] = value


def meta_lookup(t, name):
    # tables never carry metatables here; the flag only exists to exercise a cache axis
    return NIL


def to_dictionary_mode(t):
    d = {}
    for name, i in t.hc.props.items():
        d[name] = t.inline[i] if i < INLINE_SLOTS else t.overflow[i - INLINE_SLOTS]
    t.dict_props = d
    t.hc = DICT_CLASS
    t.inline = [NIL] * INLINE_SLOTS
    t.overflow = []


DICT_CLASS = HiddenClass(DICT_CLASS_ID)


def class_id(t):
    return t.hc.id


# -- indexing by arbitrary keys -------------------------------------------------------

def _norm_key(heap, key):
    if key < boxing.DOUBLE_LIMIT:
        if (key & boxing.ABS_MASK) > boxing.INF_BITS:
            raise heap.error("table index is NaN")
        if key == 0x8000000000000000:
            return POS_ZERO
        return key
    if key == NIL:
        raise heap.error("table index is nil")
    return key


def _array_index(key):
    if key < boxing.DOUBLE_LIMIT:
        x = w2d(key)
        if x >= 1 and x == int(x) and x < 2 ** 31:
            return int(x)
    return 0


def table_get(heap, t, key):
    if key >= STRING_LO:
        return prop_lookup(t, key)
    k = _array_index(key)
    if 0 < k <= len(t.arr):
        return t.arr[k - 1]
    if t.hash is None or key == NIL:
        return NIL
    if key < boxing.DOUBLE_LIMIT:
        if (key & boxing.ABS_MASK) > boxing.INF_BITS:
            return NIL
        if key == 0x8000000000000000:
            key = POS_ZERO
    return t.hash.get(key, NIL)


def table_set(heap, t, key, value):
    if key >= STRING_LO:
        prop_store(heap, t, key, value)
        return
    key = _norm_key(heap, key)
    k = _array_index(key)
    arr = t.arr
    if k and k <= len(arr):
        arr[k - 1] = value
        if k == len(arr) and value == NIL:
            while arr and arr[-1] == NIL:
                arr.pop()
        return
    if k == len(arr) + 1 and value != NIL:
        arr.append(value)
        h = t.hash
        if h:
            h.pop(key, None)
            while True:
                nk = d2w(float(len(arr) + 1))
                if nk not in h:
                    break
                arr.append(h.pop(nk))
        return
    if t.hash is None:
        t.hash = {}
    if value == NIL:
        t.hash.pop(key, None)
    else:
        t.hash[key] = value


def table_len(t):
    return len(t.arr)


# -- conversions ---------------------------------------------------------------

def fmt_number(x):
    if x != x:
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == int(x) and abs(x) < 1e16:
        if x == 0 and math.copysign(1.0, x) < 0:
            return "-0"
        return str(int(x))
    return repr(x)


def tostring(heap, w):
    if w < boxing.DOUBLE_LIMIT:
        return fmt_number(w2d(w))
    if w == NIL or w < boxing.BOOL_LO:
        return "nil"
    if w < TABLE_LO:
        return "true" if w & 1 else "false"
    if w < FUNC_LO:
        return f"table:{w & HANDLE_MASK}"
    if w < STRING_LO:
        return f"function:{w & HANDLE_MASK}"
    return heap.objs[w & HANDLE_MASK]


def str_to_number(s):
    s = s.strip()
    if not s:
        return None
    try:
        neg = s.startswith("-")
        body = s[1:] if neg or s.startswith("+") else s
        if body[:2].lower() == "0x":
            v = float(int(body[2:], 16))
            return -v if neg else v
        if body.lower() in ("inf", "infinity", "nan") or "_" in body:
            return None
        return float(s)
    except ValueError:
        return None


TYPE_NAMES = {boxing.T_NIL: "nil", boxing.T_BOOL: "boolean", boxing.T_DNAN: "number",
              boxing.T_DNOTNAN: "number", boxing.T_STRING: "string",
              boxing.T_FUNCTION: "function", boxing.T_TABLE: "table"}


def type_name(w):
    return TYPE_NAMES[boxing.typeof(w)]


def to_number(heap, w):
    """Numeric value of ``w`` with string coercion, or None."""
    if w < boxing.DOUBLE_LIMIT:
        return w2d(w)
    if w >= STRING_LO:
        return str_to_number(heap.objs[w & HANDLE_MASK])
    return None


def box_number(x):
    return d2w(x)


def truthy(w):
    return w != NIL and w != FALSE


def bool_word(b):
    return TRUE if b else FALSE
