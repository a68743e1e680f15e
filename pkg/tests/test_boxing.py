import math
import struct

from hypothesis import given, strategies as st

from tieredvm import boxing
from tieredvm.boxing import (GUEST, LATTICE, T_BOOL, T_DNAN, T_DNOTNAN, T_FUNCTION, T_NIL,
                             T_STRING, T_TABLE, select_checker, tBool, tDouble, tDoubleNaN,
                             tDoubleNotNaN, tFunction, tHeapEntity, tNil, tString, tTable)

ALL_TYPES = range(LATTICE.size)
masks = st.integers(min_value=0, max_value=LATTICE.top)


def _bits(x):
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def test_union_of_double_halves_is_double():
    assert tDoubleNaN | tDoubleNotNaN == tDouble


def test_intersect_with_bottom():
    assert tTable & LATTICE.bottom == LATTICE.bottom


def test_nan_half_is_subset_of_double():
    assert tDoubleNaN & ~tDouble == 0


def test_typeof_examples():
    assert boxing.typeof(boxing.box_double(1.5)) == T_DNOTNAN
    assert boxing.typeof(0x7FF8000000000000) == T_DNAN
    assert boxing.typeof(boxing.NIL) == T_NIL


def test_every_encoder_classifies_back():
    cases = [(boxing.NIL, T_NIL), (boxing.box_bool(True), T_BOOL), (boxing.box_bool(False), T_BOOL),
             (boxing.box_double(2.0), T_DNOTNAN), (boxing.box_double(math.nan), T_DNAN),
             (boxing.box_table(7), T_TABLE), (boxing.box_function(7), T_FUNCTION),
             (boxing.box_string(7), T_STRING)]
    for w, t in cases:
        assert boxing.typeof(w) == t


def test_non_doubles_live_above_the_limit():
    for t in (T_NIL, T_BOOL, T_STRING, T_FUNCTION, T_TABLE):
        for w in boxing.representatives(t):
            assert w >= 0xFFFBFFFF00000000


def test_double_round_trip_is_bit_exact():
    for x in (0.0, -0.0, 1.5, -1e300, math.inf, 5e-324):
        w = boxing.box_double(x)
        assert w == _bits(x)
        assert _bits(boxing.unbox_double(w)) == _bits(x)


def test_boundary_patterns():
    assert boxing.typeof(0xFFFBFFFF00000000 - 1) == T_DNAN
    assert boxing.typeof(0xFFFBFFFF00000000) == T_NIL


def test_checkers_agree_with_typeof_on_samples():
    for c in GUEST.checkers:
        for t in ALL_TYPES:
            for w in boxing.representatives(t):
                assert bool(c.fn(w)) == bool(c.mask >> boxing.typeof(w) & 1), (c.name, hex(w))


def test_rules_are_exact_inside_their_precondition():
    for r in GUEST.rules:
        assert r.decides & ~r.pre == 0 and r.decides != r.pre
        for t in LATTICE.bases(r.pre):
            for w in boxing.representatives(t):
                assert bool(r.fn(w)) == bool(r.decides >> t & 1), (r.name, hex(w))


def test_select_checker_examples():
    assert select_checker(GUEST, tDouble, tDouble).kind == "alwaysTrue"
    assert select_checker(GUEST, tDouble, tTable).kind == "alwaysFalse"
    d = select_checker(GUEST, tHeapEntity, tTable)
    assert d.kind == "rule" and d.rule.name == "heap-entity-header-compare" and not d.negated


def test_select_checker_uses_negated_rule():
    # under a known double, "not NaN" is the NaN rule negated
    d = select_checker(GUEST, tDouble, tDoubleNotNaN)
    assert d.kind == "rule"
    assert d.cost <= GUEST.checker_for(tDoubleNotNaN).cost


def test_generic_checker_synthesized_for_odd_mask():
    m = tNil | tString
    c = GUEST.checker_for(m)
    for t in ALL_TYPES:
        for w in boxing.representatives(t):
            assert bool(c.fn(w)) == bool(m >> t & 1)


@given(masks.filter(bool), masks)
def test_select_checker_is_sound(known, to_check):
    d = select_checker(GUEST, known, to_check)
    for t in LATTICE.bases(known):
        for w in boxing.representatives(t):
            want = bool(to_check >> t & 1)
            if d.kind == "alwaysTrue":
                got = True
            elif d.kind == "alwaysFalse":
                got = False
            else:
                got = bool(boxing.decision_fn(d)(w))
            assert got == want


@given(masks, masks, masks)
def test_mask_lattice_laws(a, b, c):
    top = LATTICE.top

    def comp(x):
        return top & ~x
    assert (a | b) | c == a | (b | c)
    assert (a & b) & c == a & (b & c)
    assert a | (a & b) == a
    assert a & (a | b) == a
    assert comp(a | b) == comp(a) & comp(b)
    assert comp(a & b) == comp(a) | comp(b)
    assert comp(comp(a)) == a


@given(st.integers(min_value=0, max_value=2 ** 64 - 1))
def test_typeof_is_total_and_unique(w):
    t = boxing.typeof(w)
    owners = [c for c in GUEST.checkers if c.mask in (1 << k for k in ALL_TYPES) and c.fn(w)]
    assert [c.mask for c in owners] == [1 << t]


def test_lattice_format_names():
    assert LATTICE.format(tDouble) == "tDouble"
    assert LATTICE.format(tNil | tBool) == "{tNil|tBool}"
