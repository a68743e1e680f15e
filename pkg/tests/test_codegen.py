from pathlib import Path

import pytest

from tieredvm.bytecode import Cst, Loc
from tieredvm.guest.codegen import CodegenError, compile_source
from tieredvm.runtime import Heap
from tieredvm.vm import shared_handlers


def _main(src):
    return compile_source(src, shared_handlers().registry, Heap())


def _decoded(src):
    return [d for cb in _main(src).walk() for d in cb.stream]


def test_add_with_literal_uses_constant_variant():
    adds = [d for d in _decoded("local a = 1\nlocal b = a + 2") if d.kind == "Add"]
    assert [d.info.label for d in adds] == ["Add.LC"]
    assert isinstance(adds[0].operands["lhs"], Loc)
    assert isinstance(adds[0].operands["rhs"], Cst)


def test_while_loop_closes_with_loop_jump():
    ds = _decoded("local a = 1\nwhile a < 3 do a = a + 1 end")
    jumps = [d for d in ds if d.kind == "Jump"]
    assert len(jumps) == 1
    j = jumps[0]
    assert j.operands["loop"] == 1 and j.target < j.pos


def test_forward_if_jump_is_not_a_loop():
    ds = _decoded("local a = 1\nif a then a = 2 else a = 3 end")
    assert all(d.operands["loop"] == 0 for d in ds if d.kind == "Jump")


def test_field_read_emits_get_by_id():
    ds = _decoded("local o = {x = 1}\nlocal y = o.x")
    gets = [d for d in ds if d.kind == "GetById"]
    assert len(gets) == 1
    assert gets[0].info.defn.ic is not None


def test_every_stream_is_well_formed():
    src = (Path(__file__).parent.parent / "corpus" / "closures.lua").read_text()
    for cb in _main(src).walk():
        starts = set(cb.stream.starts)
        assert all(d.target in starts for d in cb.stream if d.target is not None)


def test_codegen_is_deterministic():
    src = "local function f(a, ...) local t = {...} return #t + a end\nprint(f(1, 2, 3))"
    a = [cb.stream.disassemble() for cb in _main(src).walk()]
    b = [cb.stream.disassemble() for cb in _main(src).walk()]
    assert a == b


def test_break_outside_loop_rejected():
    with pytest.raises(CodegenError):
        _main("break")
