from hypothesis import given, settings, strategies as st

from tieredvm import boxing
from tieredvm.bytecode import BytecodeBuilder, Loc
from tieredvm.interpreter import CodeBlock
from tieredvm.jit.compiler import compile_codeblock
from tieredvm.jit.holes import (TARGET_HI, TARGET_LO, make_hole, patch_value, prove_range,
                                recover, recover_source)
from tieredvm.jit.icsite import MODE_CLOSURE, MODE_DIRECT, CallSite
from tieredvm.vm import VM, VMConfig, shared_handlers

import holefuzz


def test_slot_offset_hole_is_adjusted_by_one():
    e = make_hole("operandSlot", "lhs", [("mul", 8)])
    d = prove_range(e)
    assert (d.kind, d.k) == ("adjusted", 1)
    assert patch_value(e, d, 1) == 9 and recover(e, d, 9) == 8


def test_shifted_slot_offset_is_direct():
    e = make_hole("operandSlot", "lhs", [("mul", 8), ("add", 1)])
    assert prove_range(e).kind == "direct"


def test_too_wide_interval_falls_back_to_runtime():
    e = make_hole("literal", 0, [("mul", 2)], width=4)
    assert prove_range(e).kind == "runtime"
    assert recover(e, prove_range(e), 7) == 14


def test_non_affine_step_is_runtime():
    e = make_hole("operandSlot", 0, [("hash", 3)])
    d = prove_range(e)
    assert d.kind == "runtime"
    assert "hash_step" in recover_source(e, d, "p")


def test_constant_value_holes_are_wide_and_direct():
    e = make_hole("constantValue", "rhs")
    assert e.wide and prove_range(e).kind == "direct"


def test_recover_source_matches_recover():
    for chain in ([("mul", 8)], [("mul", 8), ("add", 1)], [("add", -5), ("mul", 3)]):
        e = make_hole("operandSlot", 0, chain)
        d = prove_range(e)
        for x in (0, 1, 17, 10 ** 6):
            p = patch_value(e, d, x)
            assert eval(recover_source(e, d, "p"), {"p": p}) == e.evaluate(x)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_fuzzed_holes_recover_their_value(seed):
    import random
    rng = random.Random(seed)
    e = holefuzz.random_hole(rng)
    assert holefuzz.check_hole(e, rng, samples=20) == []


def test_patched_values_stay_in_target():
    kinds, problems = holefuzz.fuzz(n=200, seed=3, samples=20)
    assert problems == []
    assert all(v > 0 for v in kinds.values())
    assert TARGET_LO == 1 and TARGET_HI == 2 ** 31 - 2 ** 24 - 1


def _add_block():
    hs = shared_handlers()
    b = BytecodeBuilder(hs.registry)
    b.create_Add(lhs=Loc(1), rhs=Loc(3), out=Loc(2))
    b.create_Return(base=Loc(2), n=1)
    return hs, CodeBlock(b.build(), 0, False, 4)


def test_add_cell_payload_is_patched_slot_offsets():
    hs, cb = _add_block()
    co = compile_codeblock(cb, hs)
    # output first, then lhs and rhs; each slot*8 shifted by one into range
    assert co.payloads[1] == [17, 9, 25]
    rec = co.spd[co.slow_payloads[1][0]]
    assert (rec["lhs"], rec["rhs"], rec["out"]) == (1, 3, 2)


def test_compile_stats_sizes_agree():
    hs, cb = _add_block()
    s = compile_codeblock(cb, hs).stats
    assert s.predicted == s.emitted
    assert s.visits == s.bytecodes == 2
    assert s.unresolved == 0


def _stencil(kind):
    hs = shared_handlers()
    info = [i for i in hs.registry.infos[1:] if i.defn.name == kind][0]
    return hs.stencils[info.base_opcode]


def test_jump_stencil_keeps_its_branch():
    s = _stencil("Jump")
    assert any(sl.kind == "branch" for sl in s.slots)
    assert not s.fallthrough_eliminable


def test_add_stencil_guards_and_site_kinds():
    s = _stencil("Add")
    assert s.fallthrough_eliminable and len(s.guards) == 2
    assert _stencil("GetById").site == "prop"
    assert _stencil("Call").site == "call"


LOOP_FN = """
function f(n)
  local s = 0
  for i = 1, n do s = s + i end
  return s
end
"""


def test_compiled_code_never_decodes():
    vm = VM(VMConfig(threshold=0))
    vm.run(LOOP_FN)
    fn = vm.get_global("f")
    vm.call(fn, [boxing.d2w(3.0)])
    assert vm.heap.get(fn).proto.co is not None
    d0, b0 = vm.counters.decodes, vm.counters.bytecodes
    r = vm.call(fn, [boxing.d2w(100.0)])
    assert boxing.w2d(r[0]) == 5050.0
    assert vm.counters.decodes == d0
    assert vm.counters.bytecodes > b0


def test_osr_enters_compiled_loop():
    src = "local s = 0\nfor i = 1, 5000 do s = s + i end\nprint(s)\n"
    vm = VM(VMConfig(threshold=100))
    vm.run(src)
    assert vm.output == "12502500\n"
    assert vm.counters.osr >= 1 and vm.counters.tier_ups >= 1
    plain = VM(VMConfig(tiering=False))
    plain.run(src)
    assert plain.counters.bytecodes == vm.counters.bytecodes


CALLS = """
function mk(k) return function(x) return x + k end end
a = mk(1)
b = mk(2)
function g(h, n)
  local s = 0
  for i = 1, n do s = s + h(i) end
  return s
end
"""


def _call_site(vm, fn):
    co = vm.heap.get(fn).proto.co
    sites = [s for s in co.sites if isinstance(s, CallSite)]
    assert len(sites) == 1
    return sites[0]


def test_direct_call_hits_skip_function_checks():
    vm = VM(VMConfig(threshold=0))
    vm.run(CALLS)
    g = vm.get_global("g")
    a = vm.get_global("a")
    vm.call(g, [a, boxing.d2w(1.0)])
    f0 = vm.counters.fn_checks
    r = vm.call(g, [a, boxing.d2w(50.0)])
    assert boxing.w2d(r[0]) == 50 * 51 / 2 + 50
    assert vm.counters.fn_checks == f0
    assert _call_site(vm, g).mode == MODE_DIRECT


def test_alternating_closures_switch_to_closure_mode_once():
    vm = VM(VMConfig(threshold=0))
    vm.run(CALLS)
    g, a, b = (vm.get_global(n) for n in "gab")
    one = boxing.d2w(1.0)
    for _ in range(3):
        vm.call(g, [a, one])
        vm.call(g, [b, one])
    site = _call_site(vm, g)
    assert site.mode == MODE_CLOSURE and site.transitions == 1
