"""The guest language's bytecode set.

Value-producing arithmetic and compare-and-branch kinds are described in the
semantic IR so that their fast paths come out of type speculation. The rest
are handler templates written against a tiny macro language:

    $op      value of a local or constant operand
    %op      absolute stack slot of a local or range operand
    #op      value of a literal operand
    @rs      return-site prefix for calls made by this bytecode
    @resume  position (or cell) right after this bytecode
    @ic      this bytecode's inline-cache or call-cache site

and the line directives ``@out EXPR``, ``@next``, ``@branch``, ``@frame``
and ``@credit``.
"""
from __future__ import annotations

from ..boxing import GUEST, tDouble, tDoubleNotNaN, tString
from ..bytecode import (Constant, HasValue, IsConstant, IsLocal, Literal, Local,
                        LocalOrConstant, RangeRO, RangeRW, Registry, Variant, BytecodeDef)
from ..ic import Decision, EffectDef, Field, ICDescriptor, SpecializeFull
from ..runtime import DICT_MODE_LIMIT, INLINE_SLOTS
from ..semir import (Block, Box, BranchTaken, CondBr, Dispatch, EnterSlowPath, Param,
                     PrimOp, ReturnValue, SemFunction, TypeCheck, Unbox)

ARITH_OPS = ("add", "sub", "mul", "div", "mod")
COMPARE_OPS = {"Lt": ("lt", "compare"), "Le": ("le", "compare"), "Eq": ("eq", "equal")}

# property locations inside a table, used by the property-access caches
LOC_INLINE, LOC_OVERFLOW, LOC_ABSENT, LOC_DICT = range(4)


def arith_semantics(op):
    return SemFunction(op, 2, [
        Block("entry", [TypeCheck("c0", 0, tDouble)], CondBr("c0", "crit_edge", "non_double")),
        Block("crit_edge", [TypeCheck("c1", 1, tDouble)], CondBr("c1", "double_op", "non_double")),
        Block("double_op", [Unbox("a", 0, tDouble), Unbox("b", 1, tDouble),
                            PrimOp("r", op, ("a", "b")), Box("w", tDouble, "r")],
              ReturnValue("w")),
        Block("non_double", [], EnterSlowPath(f"arith:{op}")),
    ]).verify()


def compare_semantics(op, routine, negate):
    tail = [PrimOp("r", op, ("a", "b"))]
    cond = "r"
    if negate:
        tail.append(PrimOp("n", "not", ("r",)))
        cond = "n"
    tag = f"{routine}:{op}" + (":not" if negate else "")
    return SemFunction(op, 2, [
        Block("entry", [TypeCheck("c0", 0, tDouble)], CondBr("c0", "crit_edge", "non_double")),
        Block("crit_edge", [TypeCheck("c1", 1, tDouble)], CondBr("c1", "double_cmp", "non_double")),
        Block("double_cmp", [Unbox("a", 0, tDouble), Unbox("b", 1, tDouble)] + tail,
              CondBr(cond, "taken", "fallthrough")),
        Block("taken", [], BranchTaken()),
        Block("fallthrough", [], Dispatch()),
        Block("non_double", [], EnterSlowPath(tag)),
    ]).verify()


def identity_semantics():
    return SemFunction("identity", 1, [Block("entry", [Param("x", 0)], ReturnValue("x"))]).verify()


def arith_variants(spec_mask):
    return [
        Variant({"lhs": IsLocal(), "rhs": IsLocal()},
                speculate={"lhs": spec_mask, "rhs": spec_mask}, name="LL"),
        Variant({"lhs": IsLocal(), "rhs": IsConstant(tDouble)},
                speculate={"lhs": spec_mask}, name="LC"),
        Variant({"lhs": IsConstant(tDouble), "rhs": IsLocal()},
                speculate={"rhs": spec_mask}, name="CL"),
        Variant({"lhs": IsLocal(), "rhs": IsConstant()}, name="LK"),
        Variant({"lhs": IsConstant(), "rhs": IsLocal()}, name="KL"),
    ]


# -- property access caches -------------------------------------------------------

GET_EFFECT = EffectDef("get", [
    Field("slot", 0, DICT_MODE_LIMIT - 1),
    SpecializeFull("loc", (LOC_INLINE, LOC_OVERFLOW, LOC_ABSENT, LOC_DICT)),
    SpecializeFull("meta", (0, 1)),
], """
if loc == 0:
    return obj.inline[slot]
if loc == 1:
    return obj.overflow[slot]
if loc == 3:
    return obj.dict_props.get(name, NIL)
if meta:
    return meta_lookup(obj, name)
return NIL
""")


def get_body(obj, name):
    meta = obj.meta
    if obj.dict_props is not None:
        return Decision("get", {"slot": 0, "loc": LOC_DICT, "meta": meta}, cacheable=False)
    i = obj.hc.props.get(name)
    if i is None:
        return Decision("get", {"slot": 0, "loc": LOC_ABSENT, "meta": meta})
    if i < INLINE_SLOTS:
        return Decision("get", {"slot": i, "loc": LOC_INLINE, "meta": meta})
    return Decision("get", {"slot": i - INLINE_SLOTS, "loc": LOC_OVERFLOW, "meta": meta})


PUT_EFFECT = EffectDef("put", [
    Field("slot", 0, DICT_MODE_LIMIT - 1),
    SpecializeFull("loc", (LOC_INLINE, LOC_OVERFLOW, LOC_DICT)),
], """
if loc == 0:
    obj.inline[slot] = val
elif loc == 1:
    obj.overflow[slot] = val
else:
    dict_store(obj, name, val)
""")

ADD_EFFECT = EffectDef("add", [
    Field("slot", 0, DICT_MODE_LIMIT - 1),
    Field("shape"),
    SpecializeFull("loc", (LOC_INLINE, LOC_OVERFLOW)),
], """
obj.hc = shape
if loc == 0:
    obj.inline[slot] = val
else:
    obj.overflow.append(val)
""")


def put_body(obj, name):
    if obj.dict_props is not None:
        return Decision("put", {"slot": 0, "loc": LOC_DICT}, cacheable=False)
    hc = obj.hc
    i = hc.props.get(name)
    if i is not None:
        if i < INLINE_SLOTS:
            return Decision("put", {"slot": i, "loc": LOC_INLINE})
        return Decision("put", {"slot": i - INLINE_SLOTS, "loc": LOC_OVERFLOW})
    if hc.count >= DICT_MODE_LIMIT:
        return Decision("put", {"slot": 0, "loc": LOC_DICT}, cacheable=False)
    child = hc.shapes.transition(hc, name)
    i = child.props[name]
    if i < INLINE_SLOTS:
        return Decision("add", {"slot": i, "shape": child, "loc": LOC_INLINE})
    return Decision("add", {"slot": i - INLINE_SLOTS, "shape": child, "loc": LOC_OVERFLOW})


def make_get_ic(name="get_prop"):
    return ICDescriptor(name, get_body, [GET_EFFECT], impossible_key=0, fuse=True)


def make_put_ic(name="put_prop"):
    return ICDescriptor(name, put_body, [PUT_EFFECT, ADD_EFFECT], impossible_key=0, fuse=True)


GET_IC = make_get_ic()
PUT_IC = make_put_ic()

# prologues bind obj/key/name/val for the cache lookup (@iclookup); epilogues consume R
IC_PROLOGUES = {
    "GetById": """
o = $obj
if not (TABLE_LO <= o < FUNC_LO):
    raise index_error(st, o, $name)
obj = st.heap.objs[o & 0xFFFFFFFF]
key = obj.hc.id
name = $name
val = None
""",
    "SetById": """
o = $obj
if not (TABLE_LO <= o < FUNC_LO):
    raise index_error(st, o, $name)
obj = st.heap.objs[o & 0xFFFFFFFF]
key = obj.hc.id
name = $name
val = $val
""",
    "GetGlobal": """
obj = st.genv
key = obj.hc.id
name = $name
val = None
""",
    "SetGlobal": """
obj = st.genv
key = obj.hc.id
name = $name
val = $val
""",
}

IC_EPILOGUES = {
    "GetById": "@out R\n@next\n",
    "SetById": "@next\n",
    "GetGlobal": "@out R\n@next\n",
    "SetGlobal": "@next\n",
}


def ic_body(kind):
    return IC_PROLOGUES[kind].lstrip("\n") + "@iclookup\n" + IC_EPILOGUES[kind]


def L_or_C(name):
    return [Variant({name: IsLocal()}, name="L"), Variant({name: IsConstant()}, name="C")]


def build_registry():
    R = Registry(GUEST)
    ident = identity_semantics()
    R.register(BytecodeDef("Move", [Local("src")], has_output=True, semantics=ident,
                           doc="copy a local"))
    R.register(BytecodeDef("LoadConstant", [Constant("value")], has_output=True,
                           semantics=ident, doc="load a constant"))
    for op in ARITH_OPS:
        R.register(BytecodeDef(op.capitalize(), [LocalOrConstant("lhs"), LocalOrConstant("rhs")],
                               has_output=True, semantics=arith_semantics(op),
                               variants=arith_variants(tDoubleNotNaN), group="arith"))
    for kind, (op, routine) in COMPARE_OPS.items():
        for neg in (False, True):
            name = f"BranchIf{'Not' if neg else ''}{kind}"
            vs = [
                Variant({"lhs": IsLocal(), "rhs": IsLocal()},
                        speculate={"lhs": tDouble, "rhs": tDouble}, name="LL"),
                Variant({"lhs": IsLocal(), "rhs": IsConstant(tDouble)},
                        speculate={"lhs": tDouble}, name="LC"),
                Variant({"lhs": IsConstant(tDouble), "rhs": IsLocal()},
                        speculate={"rhs": tDouble}, name="CL"),
                Variant({"lhs": IsLocal(), "rhs": IsConstant()}, name="LK"),
                Variant({"lhs": IsConstant(), "rhs": IsLocal()}, name="KL"),
            ]
            R.register(BytecodeDef(name, [LocalOrConstant("lhs"), LocalOrConstant("rhs")],
                                   may_branch=True, variants=vs,
                                   semantics=compare_semantics(op, routine, neg)))
    R.register(BytecodeDef("Concat", [LocalOrConstant("lhs"), LocalOrConstant("rhs")],
                           has_output=True,
                           variants=[Variant({"lhs": IsLocal(), "rhs": IsLocal()}, name="LL"),
                                     Variant({"lhs": IsLocal(), "rhs": IsConstant()}, name="LC"),
                                     Variant({"lhs": IsConstant(), "rhs": IsLocal()}, name="CL")],
                           body="@out sp_concat(st, $lhs, $rhs)\n@next\n"))
    R.register(BytecodeDef("Not", [Local("src")], has_output=True, body="""
v = $src
@out (TRUE if (v == NIL or v == FALSE) else FALSE)
@next
"""))
    R.register(BytecodeDef("Len", [Local("src")], has_output=True,
                           body="@out sp_len(st, $src)\n@next\n"))
    R.register(BytecodeDef("BranchIfTruthy", [Local("cond")], may_branch=True, body="""
v = $cond
if v != NIL and v != FALSE:
    @branch
@next
"""))
    R.register(BytecodeDef("BranchIfFalsy", [Local("cond")], may_branch=True, body="""
v = $cond
if v == NIL or v == FALSE:
    @branch
@next
"""))
    R.register(BytecodeDef("Jump", [Literal("loop", 1)], may_branch=True,
                           variants=[Variant({"loop": HasValue(1)}, osr_check=True, name="loop"),
                                     Variant({"loop": HasValue(0)}, name="fwd")],
                           body="@branch\n"))
    R.register(BytecodeDef("NewTable", [], has_output=True,
                           body="@out st.heap.new_table()\n@next\n"))
    R.register(BytecodeDef("GetById", [Local("obj"), Constant("name", tString)], has_output=True,
                           ic=GET_IC, fuse_ic=True, body=ic_body("GetById")))
    R.register(BytecodeDef("SetById", [Local("obj"), Constant("name", tString),
                                       LocalOrConstant("val")],
                           variants=L_or_C("val"), ic=PUT_IC, fuse_ic=True,
                           body=ic_body("SetById")))
    R.register(BytecodeDef("GetGlobal", [Constant("name", tString)], has_output=True,
                           ic=make_get_ic("get_global"), fuse_ic=True,
                           body=ic_body("GetGlobal")))
    R.register(BytecodeDef("SetGlobal", [Constant("name", tString), LocalOrConstant("val")],
                           variants=L_or_C("val"), ic=make_put_ic("put_global"), fuse_ic=True,
                           body=ic_body("SetGlobal")))
    R.register(BytecodeDef("GetByVal", [Local("obj"), LocalOrConstant("key")], has_output=True,
                           variants=L_or_C("key"),
                           body="@out sp_getbyval(st, $obj, $key)\n@next\n"))
    R.register(BytecodeDef("SetByVal", [Local("obj"), LocalOrConstant("key"),
                                        LocalOrConstant("val")],
                           variants=[Variant({"key": IsLocal(), "val": IsLocal()}, name="LL"),
                                     Variant({"key": IsLocal(), "val": IsConstant()}, name="LC"),
                                     Variant({"key": IsConstant(), "val": IsLocal()}, name="CL"),
                                     Variant({"key": IsConstant(), "val": IsConstant()}, name="CC")],
                           body="sp_setbyval(st, $obj, $key, $val)\n@next\n"))
    R.register(BytecodeDef("SetList", [Local("tab"), RangeRO("base"), Literal("n", 2),
                                       Literal("first", 4)],
                           body="sp_setlist(st, $tab, %base, #n, #first, False)\n@next\n"))
    R.register(BytecodeDef("SetListVarRes", [Local("tab"), RangeRO("base"), Literal("n", 2),
                                             Literal("first", 4)],
                           body="sp_setlist(st, $tab, %base, #n, #first, True)\n@next\n"))
    R.register(BytecodeDef("CreateClosure", [Literal("proto", 4)], has_output=True,
                           body="@out make_closure(st, #proto)\n@next\n"))
    R.register(BytecodeDef("UpvalueGet", [Literal("ord", 2), Literal("imm", 1)], has_output=True,
                           variants=[Variant({"imm": HasValue(1)}, name="imm"),
                                     Variant({"imm": HasValue(0)}, name="mut")], body="""
uv = st.closure.upvals[#ord]
if #imm:
    @out uv
elif uv.open:
    @out stack[uv.slot]
else:
    @out uv.value
@next
"""))
    R.register(BytecodeDef("UpvaluePut", [Literal("ord", 2), LocalOrConstant("val")],
                           variants=L_or_C("val"), body="""
uv = st.closure.upvals[#ord]
if uv.open:
    stack[uv.slot] = $val
else:
    uv.value = $val
@next
"""))
    R.register(BytecodeDef("UpvalueClose", [Local("base")],
                           body="close_upvalues(st, %base)\n@next\n"))
    call_body = """
if do_call(st, %base, #nargs, #nrets, (@rs, %base, #nrets, st.closure)):
    @frame
@next
"""
    call_jit = """
if jit_call(st, @ic, %base, #nargs, #nrets, (@rs, %base, #nrets, st.closure)):
    @frame
@next
"""
    R.register(BytecodeDef("Call", [RangeRW("base"), Literal("nargs", 2), Literal("nrets", 2)],
                           variants=[Variant({"nrets": HasValue(1)}, name="r1"),
                                     Variant({"nrets": HasValue(0)}, name="r0"),
                                     Variant({}, name="rn")],
                           body=call_body, jit_body=call_jit))
    R.register(BytecodeDef("CallVarRes", [RangeRW("base"), Literal("nargs", 2),
                                          Literal("nrets", 2)], body="""
if call_varres(st, %base, #nargs, #nrets, (@rs, %base, #nrets, st.closure)):
    @frame
@next
"""))
    R.register(BytecodeDef("TailCall", [RangeRW("base"), Literal("nargs", 2)], body="""
@credit
return do_tail_call(st, %base, #nargs)
"""))
    R.register(BytecodeDef("TailCallVarRes", [RangeRW("base"), Literal("nargs", 2)], body="""
@credit
return tail_call_varres(st, %base, #nargs)
"""))
    R.register(BytecodeDef("Return", [RangeRO("base"), Literal("n", 2)],
                           variants=[Variant({"n": HasValue(0)}, name="r0"),
                                     Variant({"n": HasValue(1)}, name="r1"),
                                     Variant({}, name="rn")], body="""
@credit
return do_return(st, stack[%base:%base + #n])
"""))
    R.register(BytecodeDef("ReturnVarRes", [RangeRO("base"), Literal("n", 2)], body="""
@credit
return do_return(st, stack[%base:%base + #n] + varres_values(st))
"""))
    R.register(BytecodeDef("VarArgsToVarRes", [], body="vararg_to_varres(st)\n@next\n"))
    R.register(BytecodeDef("VarArgsCopy", [RangeRW("base"), Literal("n", 2)],
                           body="vararg_copy(st, %base, #n)\n@next\n"))
    return R.finalize()

