import struct

import pytest
from hypothesis import given, settings, strategies as st

from tieredvm import boxing
from tieredvm.boxing import tDouble, tString
from tieredvm.bytecode import (BytecodeBuilder, BytecodeDef, BytecodeError, Constant, Cst,
                               HasValue, IsConstant, IsLocal, Literal, Loc, Local,
                               LocalOrConstant, Registry, Variant)
from tieredvm.guest.bytecodes import build_registry

K = boxing.d2w


@pytest.fixture(scope="module")
def reg():
    return build_registry().finalize()


def test_add_allocates_one_opcode_per_variant(reg):
    labels = [i.label for i in reg.variants_of("Add")]
    assert labels == ["Add.LL", "Add.LC", "Add.CL", "Add.LK", "Add.KL"]
    assert len({i.opcode for i in reg.variants_of("Add")}) == 5


def test_has_value_on_local_rejected():
    r = Registry()
    d = BytecodeDef("Bad", [Local("a")], variants=[Variant({"a": HasValue(1)})])
    with pytest.raises(BytecodeError):
        r.register(d)


def test_duplicate_name_rejected():
    r = Registry()
    r.register(BytecodeDef("X", []))
    with pytest.raises(BytecodeError):
        r.register(BytecodeDef("X", []))


def test_same_length_group_padding(reg):
    lengths = {i.length for i in reg.infos[1:] if i.defn.group == "arith"}
    assert len(lengths) == 1
    widest = max(i.struct.size for i in reg.infos[1:] if i.defn.group == "arith")
    assert lengths == {widest}


def test_select_variant_prefers_typed_constant(reg):
    info = reg.select_variant("Add", {"lhs": Loc(1), "rhs": Cst(K(2.0))})
    assert info.label == "Add.LC"
    info = reg.select_variant("Add", {"lhs": Loc(1), "rhs": Loc(2)})
    assert info.label == "Add.LL"
    s = boxing.box_string(3)
    info = reg.select_variant("Add", {"lhs": Loc(1), "rhs": Cst(s)})
    assert info.label == "Add.LK"


def test_emit_and_decode_round_trip(reg):
    b = BytecodeBuilder(reg)
    pos = b.create_Add(lhs=Loc(1), rhs=Cst(K(123.4)), out=Loc(2))
    b.create_Add(lhs=Loc(3), rhs=Cst(K(123.4)), out=Loc(4))
    s = b.build()
    assert len(s.consts) == 1
    d = s.decode(pos)
    assert d.kind == "Add" and d.info.label == "Add.LC"
    assert d.operands == {"lhs": Loc(1), "rhs": Cst(K(123.4))}
    assert d.output == Loc(2)
    assert s.get_bytecode_kind(pos) == "Add"


def test_constants_compare_bitwise(reg):
    b = BytecodeBuilder(reg)
    b.create_LoadConstant(value=Cst(K(0.0)), out=Loc(0))
    b.create_LoadConstant(value=Cst(K(-0.0)), out=Loc(1))
    b.create_LoadConstant(value=Cst(K(0.0)), out=Loc(2))
    assert len(b.build().consts) == 2


def test_decode_inside_a_bytecode_fails(reg):
    b = BytecodeBuilder(reg)
    b.create_Add(lhs=Loc(1), rhs=Loc(2), out=Loc(3))
    s = b.build()
    with pytest.raises(BytecodeError):
        s.decode(1)


def _loop(reg):
    b = BytecodeBuilder(reg)
    top = b.get_cur_length()
    b.create_Add(lhs=Loc(0), rhs=Cst(K(1.0)), out=Loc(0))
    exit_pos = b.create_BranchIfNotLt(lhs=Loc(0), rhs=Cst(K(10.0)))
    b.create_Jump(loop=1, target=top)
    b.set_branch_target(exit_pos, b.get_cur_length())
    b.create_Return(base=Loc(0), n=1)
    return b.build()


def test_branch_offsets(reg):
    s = _loop(reg)
    jumps = [d for d in s if d.target is not None]
    forward, backward = jumps
    assert forward.target > forward.pos
    assert backward.target < backward.pos
    raw = struct.unpack_from("<i", s.buf, backward.pos + backward.info.struct.size - 4)[0]
    assert raw < 0


def test_unset_branch_target_is_not_well_formed(reg):
    b = BytecodeBuilder(reg)
    b.create_BranchIfTruthy(cond=Loc(0))
    with pytest.raises(BytecodeError):
        b.check_wellformedness()


def test_mid_bytecode_target_is_not_well_formed(reg):
    b = BytecodeBuilder(reg)
    b.create_Add(lhs=Loc(0), rhs=Loc(0), out=Loc(0))
    b.create_Jump(loop=0, target=1)
    with pytest.raises(BytecodeError):
        b.check_wellformedness()


def test_set_target_on_non_branch_rejected(reg):
    b = BytecodeBuilder(reg)
    pos = b.create_Move(src=Loc(0), out=Loc(1))
    with pytest.raises(BytecodeError):
        b.set_branch_target(pos, 0)


def test_replace_add_with_sub_in_place(reg):
    b = BytecodeBuilder(reg)
    p0 = b.create_Add(lhs=Loc(1), rhs=Cst(K(5.0)), out=Loc(2))
    p1 = b.create_Move(src=Loc(2), out=Loc(3))
    s = b.build()
    before = list(s.starts), len(s)
    s.replace_bytecode(p0, "Sub", lhs=Loc(1), rhs=Cst(K(-5.0)))
    assert (list(s.starts), len(s)) == before
    d = s.decode(p0)
    assert d.kind == "Sub" and d.operands["rhs"] == Cst(K(-5.0)) and d.output == Loc(2)
    assert s.decode(p1).kind == "Move"


def test_replace_across_groups_rejected(reg):
    b = BytecodeBuilder(reg)
    p0 = b.create_Add(lhs=Loc(1), rhs=Loc(1), out=Loc(2))
    s = b.build()
    with pytest.raises(BytecodeError):
        s.replace_bytecode(p0, "Concat", lhs=Loc(1), rhs=Loc(1))


def test_literal_range_checked(reg):
    b = BytecodeBuilder(reg)
    with pytest.raises(BytecodeError):
        b.create_Jump(loop=256, target=0)


def test_disassembly_is_deterministic(reg):
    assert _loop(reg).disassemble() == _loop(reg).disassemble()
    assert "Jump" in _loop(reg).disassemble()


def _brute_starts_ok(s):
    starts = set(s.starts)
    for d in s:
        if d.target is not None and d.target not in starts:
            return False
    return True


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 40)), min_size=1, max_size=12))
def test_wellformedness_matches_brute_scan(ops):
    reg = build_registry().finalize()
    b = BytecodeBuilder(reg)
    branches = []
    for kind, arg in ops:
        if kind == 0:
            b.create_Move(src=Loc(arg), out=Loc(arg))
        elif kind == 1:
            b.create_Add(lhs=Loc(arg), rhs=Cst(K(float(arg))), out=Loc(0))
        else:
            branches.append((b.create_Jump(loop=0), arg))
    end = b.get_cur_length()
    for pos, arg in branches:
        b.set_branch_target(pos, arg % (end + 1))
    starts = set(b.starts)
    want = all(arg % (end + 1) in starts for _, arg in branches)
    try:
        b.check_wellformedness()
        got = True
    except BytecodeError:
        got = False
    assert got == want
    if got:
        assert _brute_starts_ok(b.build())


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["L", "C", "S"]), st.sampled_from(["L", "C", "S"]))
def test_variant_choice_is_deterministic_and_maximal(a, b_):
    reg = build_registry().finalize()

    def val(k):
        return {"L": Loc(4), "C": Cst(K(1.0)), "S": Cst(boxing.box_string(9))}[k]
    ops = {"lhs": val(a), "rhs": val(b_)}
    if a != "L" and b_ != "L":
        with pytest.raises(BytecodeError):
            reg.select_variant("Add", ops)
        return
    first = reg.select_variant("Add", ops)
    assert first.label == build_registry().finalize().select_variant("Add", ops).label
    from tieredvm.bytecode import specificity
    eligible = [i for i in reg.variants_of("Add") if reg._accepts(i.defn, i.variant, ops)]
    best = max(specificity(i.defn, i.variant) for i in eligible)
    assert specificity(first.defn, first.variant) == best
    assert first is [i for i in eligible if specificity(i.defn, i.variant) == best][0]


def test_typed_constant_variant_score_is_higher():
    from tieredvm.bytecode import specificity
    d = BytecodeDef("T", [LocalOrConstant("x")],
                    variants=[Variant({"x": IsConstant()}), Variant({"x": IsConstant(tDouble)}),
                              Variant({"x": IsConstant(tString)})])
    scores = [specificity(d, v) for v in d.variants]
    assert scores[1] > scores[0] and scores[2] > scores[1]


def test_constant_operand_requires_constant(reg):
    b = BytecodeBuilder(reg)
    with pytest.raises(BytecodeError):
        b.emit("GetGlobal", name=Loc(1), out=Loc(0))


def test_literal_operands(reg):
    r = Registry()
    r.register(BytecodeDef("Lit", [Literal("n", 2, signed=True)], variants=[
        Variant({}), Variant({"n": HasValue(0)})]))
    r.finalize()
    b = BytecodeBuilder(r)
    p0 = b.emit("Lit", n=0)
    p1 = b.emit("Lit", n=-7)
    s = b.build()
    assert s.decode(p0).info.index == 1
    assert s.decode(p1).operands["n"] == -7
    assert Constant("c").boxed and not Literal("l", 1).boxed
    assert IsLocal() == IsLocal()
