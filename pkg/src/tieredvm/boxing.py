"""Type lattice, NaN-boxed value words and type-check selection.

A boxed value is an unsigned 64-bit word held in a Python int. Doubles are
stored as their raw IEEE-754 bits. Every other value lives in the impure-NaN
space at or above ``DOUBLE_LIMIT`` so that "is this a double" is one compare.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

WORD_MASK = (1 << 64) - 1

# memoryview aliasing of one 8-byte buffer is the cheapest bit cast available
_buf = bytearray(8)
_dview = memoryview(_buf).cast("d")
_qview = memoryview(_buf).cast("Q")


def w2d(w):
    _qview[0] = w
    return _dview[0]


def d2w(x):
    _dview[0] = x
    return _qview[0]


def popcount(mask):
    return bin(mask).count("1")


class TypeLattice:
    """A finite set of base types (at most 64) plus named composite masks."""

    def __init__(self, base_names):
        if not 0 < len(base_names) <= 64:
            raise ValueError("a lattice holds between 1 and 64 base types")
        if len(set(base_names)) != len(base_names):
            raise ValueError("duplicate base type name")
        self.base_names = list(base_names)
        self.top = (1 << len(base_names)) - 1
        self.bottom = 0
        self.masks = {}
        for i, name in enumerate(base_names):
            self.masks[name] = 1 << i
        self.masks["tTop"] = self.top
        self.masks["tBottom"] = 0

    def declare(self, name, members):
        if name in self.masks:
            raise ValueError(f"mask {name!r} already declared")
        m = 0
        for member in members:
            m |= self.mask(member)
        self.masks[name] = m
        return m

    def mask(self, name):
        try:
            return self.masks[name]
        except KeyError:
            raise KeyError(f"unknown type mask {name!r}") from None

    def index(self, name):
        return self.base_names.index(name)

    def bases(self, mask):
        """Indices of the base types contained in ``mask``."""
        out = []
        i = 0
        while mask:
            if mask & 1:
                out.append(i)
            mask >>= 1
            i += 1
        return out

    @property
    def size(self):
        return len(self.base_names)

    def format(self, mask):
        for name, m in self.masks.items():
            if m == mask:
                return name
        return "{" + "|".join(self.base_names[i] for i in self.bases(mask)) + "}"


@dataclass(eq=False)
class TypeChecker:
    """A routine deciding membership in ``mask`` for any word.

    ``expr`` is a Python expression over the word named ``v``; it is both
    evaluated for the IR interpreter and inlined by the handler generator.
    """
    name: str
    mask: int
    cost: int
    expr: str
    fn: object = field(default=None, repr=False)


@dataclass(eq=False)
class StrengthReductionRule:
    """``expr`` decides membership in ``decides`` for words known to be in ``pre``."""
    name: str
    pre: int
    decides: int
    cost: int
    expr: str
    fn: object = field(default=None, repr=False)


@dataclass(frozen=True)
class CheckDecision:
    kind: str                 # "alwaysTrue", "alwaysFalse" or "rule"
    rule: object = None       # a TypeChecker or StrengthReductionRule
    negated: bool = False

    @property
    def cost(self):
        return 0 if self.rule is None else self.rule.cost

    def describe(self):
        if self.kind != "rule":
            return self.kind
        return ("not " if self.negated else "") + self.rule.name


class BoxingScheme:
    """Binds a lattice to a word encoding, its checkers and reduction rules."""

    def __init__(self, lattice, typeof, env=None):
        self.lattice = lattice
        self.typeof = typeof
        self.env = dict(env or {})
        self.env.setdefault("_typebit", lambda v: 1 << typeof(v))
        self.checkers = []
        self.rules = []

    def _compile(self, expr):
        return eval("lambda v: " + expr, dict(self.env))

    def add_checker(self, name, mask, cost, expr):
        if mask in (0,):
            raise ValueError("cannot declare a checker for the empty mask")
        c = TypeChecker(name, mask, cost, expr)
        c.fn = self._compile(expr)
        self.checkers.append(c)
        return c

    def add_rule(self, name, pre, decides, cost, expr):
        if decides & ~pre:
            raise ValueError("a rule may only decide types inside its precondition")
        r = StrengthReductionRule(name, pre, decides, cost, expr)
        r.fn = self._compile(expr)
        self.rules.append(r)
        return r

    def checker_for(self, mask):
        """Cheapest exact checker for ``mask``; synthesizes a generic one if none exists."""
        best = None
        for c in self.checkers:
            if c.mask == mask and (best is None or c.cost < best.cost):
                best = c
        if best is None:
            best = self.add_checker(f"generic:{self.lattice.format(mask)}", mask, 100,
                                    f"(_typebit(v) & {mask:#x}) != 0")
        return best

    def candidates(self):
        """Rules in declaration order followed by checkers seen as ⟨top, S, c⟩ rules."""
        top = self.lattice.top
        out = [(r, r.pre, r.decides) for r in self.rules]
        out += [(c, top, c.mask) for c in self.checkers]
        return out

    def check(self, word, mask):
        return (1 << self.typeof(word)) & mask != 0


def select_checker(scheme, known, to_check):
    """Choose the cheapest sound way to decide ``to_check`` given ``known``."""
    if known & ~to_check == 0:
        return CheckDecision("alwaysTrue")
    if known & to_check == 0:
        return CheckDecision("alwaysFalse")
    best = None
    for rule, pre, decides in scheme.candidates():
        if known & ~pre:
            continue
        if to_check & known == decides & known:
            d = CheckDecision("rule", rule, False)
        elif known & ~to_check == decides & known:
            d = CheckDecision("rule", rule, True)
        else:
            continue
        if best is None or d.cost < best.cost:
            best = d
    if best is None:
        best = CheckDecision("rule", scheme.checker_for(to_check), False)
    return best


def decision_fn(decision):
    """Python predicate over words implementing a non-constant decision."""
    f = decision.rule.fn
    if decision.negated:
        return lambda v: not f(v)
    return f


def decision_expr(decision, var):
    if decision.kind == "alwaysTrue":
        return "True"
    if decision.kind == "alwaysFalse":
        return "False"
    e = subst_operand(decision.rule.expr, var)
    return f"(not {e})" if decision.negated else e


def subst_operand(expr, var):
    # checker expressions name their operand ``v``; swap in a real variable
    return "(" + re.sub(r"\bv\b", var, expr) + ")"


# ---------------------------------------------------------------------------
# The guest language's lattice and encoding

T_NIL, T_BOOL, T_DNAN, T_DNOTNAN, T_STRING, T_FUNCTION, T_TABLE = range(7)

LATTICE = TypeLattice(["tNil", "tBool", "tDoubleNaN", "tDoubleNotNaN",
                       "tString", "tFunction", "tTable"])
tNil = LATTICE.mask("tNil")
tBool = LATTICE.mask("tBool")
tDoubleNaN = LATTICE.mask("tDoubleNaN")
tDoubleNotNaN = LATTICE.mask("tDoubleNotNaN")
tString = LATTICE.mask("tString")
tFunction = LATTICE.mask("tFunction")
tTable = LATTICE.mask("tTable")
tDouble = LATTICE.declare("tDouble", ["tDoubleNaN", "tDoubleNotNaN"])
tHeapEntity = LATTICE.declare("tHeapEntity", ["tString", "tFunction", "tTable"])
tTop = LATTICE.top
tBottom = 0

DOUBLE_LIMIT = 0xFFFBFFFF00000000
PURE_NAN = 0x7FF8000000000000
ABS_MASK = 0x7FFFFFFFFFFFFFFF
INF_BITS = 0x7FF0000000000000
NIL_LO = DOUBLE_LIMIT
BOOL_LO = 0xFFFC000000000000
TABLE_LO = 0xFFFD000000000000
FUNC_LO = 0xFFFE000000000000
STRING_LO = 0xFFFF000000000000
HEAP_LO = TABLE_LO
HANDLE_MASK = 0xFFFFFFFF

NIL = NIL_LO
FALSE = BOOL_LO
TRUE = BOOL_LO | 1


def typeof(w):
    if w < DOUBLE_LIMIT:
        return T_DNAN if (w & ABS_MASK) > INF_BITS else T_DNOTNAN
    if w < BOOL_LO:
        return T_NIL
    if w < TABLE_LO:
        return T_BOOL
    if w < FUNC_LO:
        return T_TABLE
    if w < STRING_LO:
        return T_FUNCTION
    return T_STRING


def box_double(x):
    return d2w(float(x))


def unbox_double(w):
    return w2d(w)


def box_bool(b):
    return TRUE if b else FALSE


def box_table(handle):
    return TABLE_LO | handle


def box_function(handle):
    return FUNC_LO | handle


def box_string(handle):
    return STRING_LO | handle


def handle_of(w):
    return w & HANDLE_MASK


def is_double(w):
    return w < DOUBLE_LIMIT


def is_truthy(w):
    return w != NIL and w != FALSE


def _make_guest_scheme():
    env = {"DOUBLE_LIMIT": DOUBLE_LIMIT, "ABS_MASK": ABS_MASK, "INF_BITS": INF_BITS,
           "NIL_LO": NIL_LO, "BOOL_LO": BOOL_LO, "TABLE_LO": TABLE_LO,
           "FUNC_LO": FUNC_LO, "STRING_LO": STRING_LO}
    s = BoxingScheme(LATTICE, typeof, env)
    # under a known double, NaN-ness is a single masked compare
    s.add_rule("double-nan-self-compare", tDouble, tDoubleNaN, 10,
               "(v & ABS_MASK) > INF_BITS")
    # a known heap entity is a table iff it sits below the function range
    s.add_rule("heap-entity-header-compare", tHeapEntity, tTable, 10,
               "v < FUNC_LO")
    s.add_checker("isNil", tNil, 20, "NIL_LO <= v < BOOL_LO")
    s.add_checker("isBool", tBool, 20, "BOOL_LO <= v < TABLE_LO")
    s.add_checker("isDoubleNaN", tDoubleNaN, 30, "v < DOUBLE_LIMIT and (v & ABS_MASK) > INF_BITS")
    s.add_checker("isDoubleNotNaN", tDoubleNotNaN, 10, "(v & ABS_MASK) <= INF_BITS")
    s.add_checker("isDouble", tDouble, 20, "v < DOUBLE_LIMIT")
    s.add_checker("isString", tString, 10, "v >= STRING_LO")
    s.add_checker("isFunction", tFunction, 20, "FUNC_LO <= v < STRING_LO")
    s.add_checker("isTable", tTable, 20, "TABLE_LO <= v < FUNC_LO")
    s.add_checker("isHeapEntity", tHeapEntity, 10, "v >= TABLE_LO")
    return s


GUEST = _make_guest_scheme()


def representatives(t):
    """A fixed list of sample words owned by base type ``t``."""
    if t == T_NIL:
        return [NIL, NIL_LO + 1, NIL_LO + 0xFFFFFFFF, BOOL_LO - 1]
    if t == T_BOOL:
        return [FALSE, TRUE, BOOL_LO + 7, TABLE_LO - 1]
    if t == T_DNAN:
        return [PURE_NAN, 0x7FF0000000000001, 0xFFF8000000000000, DOUBLE_LIMIT - 1,
                0x7FFFFFFFFFFFFFFF, 0xFFF0000000000001]
    if t == T_DNOTNAN:
        return [d2w(0.0), d2w(-0.0), d2w(1.5), d2w(-2.0), d2w(math.inf), d2w(-math.inf),
                d2w(5e-324), d2w(1.7976931348623157e308)]
    if t == T_STRING:
        return [STRING_LO, STRING_LO + 1, WORD_MASK, STRING_LO + 12345]
    if t == T_FUNCTION:
        return [FUNC_LO, FUNC_LO + 3, STRING_LO - 1, FUNC_LO + 99]
    if t == T_TABLE:
        return [TABLE_LO, TABLE_LO + 1, FUNC_LO - 1, TABLE_LO + 42]
    raise ValueError(t)
