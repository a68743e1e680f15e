import pytest
from hypothesis import given, settings, strategies as st

from tieredvm import boxing
from tieredvm.guest.bytecodes import GET_IC, LOC_INLINE
from tieredvm.ic import (FALLBACK, Decision, EffectDef, Field, ICDescriptor, ICError,
                         InterpreterIC, SpecializeFull, SpecializeWithFallback,
                         compile_effects, expand_specializations)
from tieredvm.runtime import Heap, prop_store
from tieredvm.vm import VM, VMConfig, shared_handlers

import icdrive


def _desc(fields, impossible=None, fuse=False, body=None):
    eff = EffectDef("e", fields, "return (obj, S)")
    return ICDescriptor("t", body or (lambda obj, name: Decision("e", {})), [eff],
                        impossible_key=impossible, fuse=fuse)


def test_two_full_boolean_axes_give_four_effects():
    d = _desc([SpecializeFull("meta", (0, 1)), SpecializeFull("found", (0, 1))])
    assert len(d.concrete) == 4


def test_no_axes_one_effect():
    assert len(_desc([Field("slot")]).concrete) == 1


def test_axis_with_fallback_gives_three():
    d = _desc([SpecializeWithFallback("k", (0, 1))])
    assert [c.fixed["k"] for c in d.concrete] == [0, 1, FALLBACK]


@given(st.lists(st.integers(1, 4), max_size=3), st.lists(st.booleans(), max_size=3))
def test_expansion_count_is_cartesian_product(sizes, fallbacks):
    fields = []
    expected = 1
    for i, n in enumerate(sizes):
        fb = fallbacks[i] if i < len(fallbacks) else False
        if fb:
            fields.append(SpecializeWithFallback(f"f{i}", range(n)))
            expected *= n + 1
        else:
            fields.append(SpecializeFull(f"f{i}", range(n)))
            expected *= n
    assert len(expand_specializations(_desc(fields))) == expected


def test_state_field_cap():
    with pytest.raises(ICError):
        EffectDef("big", [Field(f"f{i}") for i in range(9)], "pass")


def test_unlisted_value_on_full_axis_rejected():
    d = _desc([SpecializeFull("k", (0, 1))])
    with pytest.raises(ICError):
        d.concrete_for("e", {"k": 5})


def _get_slot():
    hs = shared_handlers()
    return InterpreterIC(GET_IC, hs.effect_fns[GET_IC.name])


def _obj_with(heap, **props):
    w = heap.new_table()
    t = heap.get(w)
    for k, v in props.items():
        prop_store(heap, t, heap.intern(k), boxing.d2w(v))
    return t


def test_shared_hidden_class_hits_without_body():
    heap = Heap()
    o1 = _obj_with(heap, a=1.0, x=2.0)
    o2 = _obj_with(heap, a=5.0, x=7.0)
    assert o1.hc is o2.hc
    s = _get_slot()
    x = heap.intern("x")
    assert boxing.w2d(s.execute(o1.hc.id, o1, x)) == 2.0
    runs = s.body_runs
    assert boxing.w2d(s.execute(o2.hc.id, o2, x)) == 7.0
    assert s.body_runs == runs and s.hits == 1
    assert s.state == (1,)


def test_impossible_key_means_no_existence_checks():
    heap = Heap()
    o = _obj_with(heap, x=1.0)
    s = _get_slot()
    assert s.key == 0
    s.execute(o.hc.id, o, heap.intern("x"))
    assert s.misses == 1 and s.existence_checks == 0


def test_without_impossible_key_existence_is_checked():
    calls = []

    def body(obj, name):
        calls.append(1)
        return Decision("e", {})
    d = _desc([], body=body)
    s = InterpreterIC(d, compile_effects(d, {}))
    assert not s.valid
    s.execute(3, "o", "n")
    s.execute(3, "o", "n")
    assert s.existence_checks == 2 and len(calls) == 1


def test_uncacheable_leaves_slot_unchanged():
    d = _desc([], body=lambda obj, name: Decision("e", {}, cacheable=False))
    s = InterpreterIC(d, compile_effects(d, {}))
    s.execute(3, "o", "n")
    assert s.key is None and not s.populated()


def test_key_mismatch_replaces_entry():
    heap = Heap()
    o1 = _obj_with(heap, x=1.0)
    o2 = _obj_with(heap, y=1.0, x=3.0)
    s = _get_slot()
    x = heap.intern("x")
    s.execute(o1.hc.id, o1, x)
    s.execute(o2.hc.id, o2, x)
    assert s.key == o2.hc.id and s.state == (1,)


def test_fused_descriptor_quickens_and_stops_switching():
    heap = Heap()
    o = _obj_with(heap, x=1.0)
    s = _get_slot()
    for _ in range(5):
        s.execute(o.hc.id, o, heap.intern("x"))
    c = GET_IC.concrete[s.quickened]
    assert c.fixed["loc"] == LOC_INLINE
    assert s.effect_switches == 0 and s.hits == 4


def test_unfused_descriptor_counts_effect_switches():
    d = _desc([], fuse=False)
    s = InterpreterIC(d, compile_effects(d, {}))
    s.execute(1, "o", "n")
    s.execute(1, "o", "n")
    assert s.quickened is None and s.effect_switches == 1


def test_random_ops_are_transparent():
    r = icdrive.interp_ic_ops(n_ops=10_000, seed=11)
    assert r["mismatches"] == 0 and r["mono_violations"] == 0
    assert r["hits"] > 0 and r["uncacheable"] > 0


PROGRAM = """
local o = {x = 1}
local s = 0
local function get(t) return t.x end
for i = 1, 50 do s = s + get(o) end
print(s)
"""


def _getbyid_labels(vm, main):
    return [d.info.label for cb in main.walk() for d in cb.stream if d.kind == "GetById"]


def test_engine_quickens_getbyid_in_place():
    vm = VM(VMConfig(tiering=False, threshold=None))
    main = vm.load(PROGRAM)
    before = _getbyid_labels(vm, main)
    lengths = [len(cb.stream) for cb in main.walk()]
    from tieredvm.runtime import Closure
    vm.call(vm.heap.new_function(Closure(main, [])))
    after = _getbyid_labels(vm, main)
    assert all("!" not in x for x in before) and all("!" in x for x in after)
    assert [len(cb.stream) for cb in main.walk()] == lengths
    assert vm.output == "50\n"
    assert vm.counters.effect_switches == 0
    assert vm.counters.existence_checks == 0
    assert vm.counters.ic_hits > 40


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=30))
def test_jit_site_matches_slab_chain_model(seq):
    site, vm, objs, results = icdrive.drive_jit_get_site(seq, 5)
    m = icdrive.SiteModel()
    for k in seq:
        m.access(icdrive.class_key(vm, objs[k]))
    assert site.lookup_order() == m.order()
    assert site.mega == m.mega
    assert [boxing.w2d(r[0]) for r in results] == [100.0 + k for k in seq]
    assert vm.counters.stubs - vm.baseline["icStubsCreated"] == len(m.chain)


def test_jit_site_goes_megamorphic():
    seq = list(range(12)) * 2
    site, vm, objs, results = icdrive.drive_jit_get_site(seq, 12)
    m = icdrive.SiteModel()
    for k in seq:
        m.access(icdrive.class_key(vm, objs[k]))
    assert site.mega and len(site.chain) == 8
    assert site.lookup_order() == m.order()
    assert vm.counters.ic_misses - vm.baseline["icMisses"] == m.misses
    assert [boxing.w2d(r[0]) for r in results] == [100.0 + k for k in seq]


def test_slab_capacity_is_smallest_effect_payload():
    from tieredvm.guest.bytecodes import PUT_IC
    assert GET_IC.slab_capacity == 1
    assert PUT_IC.slab_capacity == 1
    assert max(c.payload_size for c in PUT_IC.concrete) == 2


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30))
def test_same_insertion_order_shares_one_class(k):
    heap = Heap()
    objs = [_obj_with(heap, a=float(i), b=2.0, x=float(i)) for i in range(k)]
    assert len({o.hc.id for o in objs}) == 1
    s = _get_slot()
    x = heap.intern("x")
    got = [boxing.w2d(s.execute(o.hc.id, o, x)) for o in objs]
    assert got == [float(i) for i in range(k)]
    assert s.hits == k - 1 and s.misses == 1
