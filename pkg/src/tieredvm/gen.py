"""Handler generation for both tiers from the bytecode definitions.

For each variant this emits Python source and compiles it:

* an interpreter handler ``h(st, pos) -> next pos`` that decodes its own
  operands (plus a slow-path function when the semantics was split);
* a tier-2 stencil: a fast cell ``c(st, P, i) -> next cell`` whose payload
  ``P`` holds patched holes instead of decoded operands, an optional slow
  bridge cell, and the ahead-of-time slow path it transfers to.

Fused inline caches also get one quickened interpreter handler per concrete
effect.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import boxing, interpreter, slowpaths
from .bytecode import HasValue, IsConstant, IsLocal, OperandKind
from .ic import InterpreterIC, compile_effects
from .jit import icsite
from .jit.holes import hash_step, make_hole, prove_range, recover_source
from .lowering import lower
from .runtime import dict_store, meta_lookup
from .semir import (BranchTaken, Dispatch, EnterSlowPath, ReturnValue, Trap, float_div,
                    float_mod, split_fast_slow)


class GenError(Exception):
    pass


def base_namespace():
    ns = dict(boxing.GUEST.env)
    ns.update({
        "NIL": boxing.NIL, "TRUE": boxing.TRUE, "FALSE": boxing.FALSE,
        "w2d": boxing.w2d, "d2w": boxing.d2w, "float_div": float_div, "float_mod": float_mod,
        "hash_step": hash_step, "dict_store": dict_store, "meta_lookup": meta_lookup,
        "RS_INTERP": interpreter.RS_INTERP, "RS_JIT": interpreter.RS_JIT,
        "jit_call": icsite.jit_call, "site_miss": icsite.site_miss,
    })
    for name in ("take_branch", "osr_branch", "credit_exit", "do_call", "call_varres",
                 "do_tail_call", "tail_call_varres", "do_return", "varres_values",
                 "make_closure", "close_upvalues", "vararg_to_varres", "vararg_copy"):
        ns[name] = getattr(interpreter, name)
    for name in ("sp_arith", "sp_compare", "sp_equal", "sp_len", "sp_concat", "sp_getbyval",
                 "sp_setbyval", "sp_setlist", "index_error"):
        ns[name] = getattr(slowpaths, name)
    return ns


_INLINE = re.compile(r"\$(\w+)|%(\w+)|#(\w+)|@(rs|resume|ic)\b")


def expand(template, be, indent=1):
    """Expand macros in ``template`` for backend ``be``; returns source lines."""
    out = []
    base_pad = "    " * indent

    def inline(text):
        def rep(m):
            if m.group(1):
                return be.value(m.group(1))
            if m.group(2):
                return be.slot(m.group(2))
            if m.group(3):
                return be.literal(m.group(3))
            return getattr(be, m.group(4))()
        return _INLINE.sub(rep, text)

    for raw in template.strip("\n").splitlines():
        body = raw.lstrip()
        if not body:
            continue
        pad = base_pad + raw[:len(raw) - len(body)]
        if body.startswith("@out "):
            new = be.out(inline(body[5:]))
        elif body == "@next":
            new = be.next()
        elif body == "@branch":
            new = be.branch()
        elif body == "@frame":
            new = ["return -1"]
        elif body == "@credit":
            new = be.credit()
        elif body == "@iclookup":
            new = be.iclookup()
        else:
            new = [inline(body)]
        out.extend(pad + line for line in new)
    return out


class InterpBackend:
    def __init__(self, info, quick=None):
        self.info = info
        self.defn = info.defn
        self.quick = quick            # concrete effect for a quickened handler
        self.used_values = []

    def _spec(self, name):
        return self.info.variant.specs.get(name)

    def value(self, name):
        if name not in self.used_values:
            self.used_values.append(name)
        return f"v_{name}"

    def load(self, name):
        op = self.defn.operand(name)
        if op.kind == OperandKind.CONSTANT or isinstance(self._spec(name), IsConstant):
            return f"st.consts[f_{name}]"
        return f"stack[base + f_{name}]"

    def slot(self, name):
        return f"(base + f_{name})"

    def literal(self, name):
        s = self._spec(name)
        if isinstance(s, HasValue):
            return str(s.value)
        return f"f_{name}"

    def out(self, expr):
        return [f"stack[base + f_out] = {expr}"]

    def next(self):
        return [f"return pos + {self.info.length}"]

    def branch(self):
        fn = "osr_branch" if self.info.variant.osr_check else "take_branch"
        return [f"return {fn}(st, pos, pos + f_target)"]

    def credit(self):
        return ["credit_exit(st, pos)"]

    def rs(self):
        return f"RS_INTERP, st.cb, pos + {self.info.length}, st.seg"

    def resume(self):
        return f"pos + {self.info.length}"

    def ic(self):
        return "st.cb.ics[f_ic]"

    def iclookup(self):
        desc = self.defn.ic
        hit = ["    st.C.ic_hits += 1"]
        if self.quick is None:
            hit.append("    st.C.effect_switches += 1")
            call = f"EFFECTS_{desc.name}[s.ordinal](obj, name, val, s.state)"
        else:
            call = f"EFF_{desc.name}_{self.quick.ordinal}(obj, name, val, s.state)"
        if desc.impossible_key is None:
            test = ["st.C.existence_checks += 1", "if s.valid and s.key == key:"]
        else:
            test = ["if s.key == key:"]
        return (["s = st.cb.ics[f_ic]"] + test + hit + [f"    R = {call}", "else:",
                "    R = ic_miss(st, s, key, obj, name, val, pos)"])

    def preamble(self):
        names = ["_op"] + [n for _, n, _ in self.info.fields]
        lines = []
        if len(names) > 1:
            lines.append(f"({', '.join('f_' + n if n != '_op' else n for n in names)},) = "
                         f"S_{self.info.opcode}.unpack_from(st.buf, pos)")
        lines.append("stack = st.stack")
        lines.append("base = st.base")
        return lines


@dataclass
class PayloadSlot:
    kind: str                     # "hole" or "branch"
    source: tuple                 # what the compiler replays to fill it
    expr: object = None
    decision: object = None

    def describe(self):
        if self.kind == "branch":
            return "branch-target slot (pass 4)"
        lo, hi = self.expr.interval() or (None, None)
        rng = f"[{lo}, {hi}]" if lo is not None else "[?]"
        return f"hole {self.expr.describe()} range {rng} -> {self.decision}"


class JitBackend:
    """Cells read burned-in payload values; nothing is decoded at run time."""

    def __init__(self, info):
        self.info = info
        self.defn = info.defn
        self.slots = []
        self._index = {}
        self.used_values = []
        self.has_next = False
        self.has_branch = False

    def _spec(self, name):
        return self.info.variant.specs.get(name)

    def _hole(self, key, root, index=None, chain=(), width=None):
        j = self._index.get(key)
        if j is None:
            e = make_hole(root, index, chain, width)
            j = len(self.slots)
            self.slots.append(PayloadSlot("hole", key, e, prove_range(e)))
            self._index[key] = j
        s = self.slots[j]
        return recover_source(s.expr, s.decision, f"P[{j}]")

    def value(self, name):
        if name not in self.used_values:
            self.used_values.append(name)
        return f"v_{name}"

    def load(self, name):
        op = self.defn.operand(name)
        if op.kind == OperandKind.CONSTANT or isinstance(self._spec(name), IsConstant):
            return self._hole(("const", name), "constantValue", name)
        return f"stack[base + ({self._hole(('slot', name), 'operandSlot', name, (('mul', 8),))} >> 3)]"

    def slot(self, name):
        return f"(base + ({self._hole(('slot', name), 'operandSlot', name, (('mul', 8),))} >> 3))"

    def literal(self, name):
        s = self._spec(name)
        if isinstance(s, HasValue):
            return str(s.value)
        return self._hole(("literal", name), "literal", name, (), self.defn.operand(name).width)

    def out(self, expr):
        h = self._hole(("out",), "outputSlot", None, (("mul", 8),))
        return [f"stack[base + ({h} >> 3)] = {expr}"]

    def next(self):
        self.has_next = True
        return ["return i + 1"]

    def branch(self):
        self.has_branch = True
        j = self._index.get(("target",))
        if j is None:
            j = len(self.slots)
            self.slots.append(PayloadSlot("branch", ("target",)))
            self._index[("target",)] = j
        return ["st.C.branches += 1", f"return P[{j}]"]

    def credit(self):
        return []

    def rs(self):
        return f"RS_JIT, st.co, {self.resume()}, 0"

    def resume(self):
        return self._hole(("next",), "fallthroughAddr")

    def ic(self):
        return "st.co.sites[i]"

    def iclookup(self):
        return ["s = st.co.sites[i]",
                "if s.slab_key == key:",
                "    st.C.ic_hits += 1",
                "    R = s.slab_fn(obj, name, val, s.slab_state)",
                "else:",
                "    for e in s.chain:",
                "        if e[0] == key:",
                "            st.C.ic_hits += 1",
                "            R = e[1](obj, name, val, e[2])",
                "            break",
                "    else:",
                "        R = site_miss(st, s, key, obj, name, val)"]

    def preamble(self):
        return ["stack = st.stack", "base = st.base"]


class AotBackend:
    """Slow paths entered from the bridge cell; operands come from the SlowPathData record."""

    def __init__(self, info):
        self.info = info
        self.defn = info.defn

    def _spec(self, name):
        return self.info.variant.specs.get(name)

    def load(self, name):
        op = self.defn.operand(name)
        if op.kind == OperandKind.CONSTANT or isinstance(self._spec(name), IsConstant):
            return f"R[{name!r}]"
        return f"stack[base + R[{name!r}]]"

    def value(self, name):
        return f"v_{name}"

    def out(self, expr):
        return [f"stack[base + R['out']] = {expr}"]

    def next(self):
        return ["return R['next']"]

    def branch(self):
        return ["st.C.branches += 1", "return R['target']"]

    def credit(self):
        return []


def slow_call_lines(tag, names, be, defn):
    """Lines implementing ``EnterSlowPath(tag)`` with the given operand expressions."""
    parts = tag.split(":")
    routine, kind = slowpaths.SLOW_ROUTINES[parts[0]]
    op = parts[1]
    args = ", ".join(["st", repr(op)] + names)
    if kind == "value":
        if not defn.has_output:
            raise GenError(f"{defn.name}: value slow path without an output")
        return be.out(f"{routine}({args})") + be.next()
    neg = len(parts) > 2 and parts[2] == "not"
    return ([f"if {'not ' if neg else ''}{routine}({args}):"]
            + ["    " + x for x in be.branch()] + be.next())


def lower_semantics(f, defn, be, indent):
    names = [be.value(o.name) for o in defn.operands if o.boxed]

    def on_term(t, val):
        if isinstance(t, ReturnValue):
            return be.out(val(t.src)) + be.next()
        if isinstance(t, Dispatch):
            return be.next()
        if isinstance(t, BranchTaken):
            return be.branch()
        if isinstance(t, EnterSlowPath):
            return slow_call_lines(t.tag, names, be, defn)
        if isinstance(t, Trap):
            return ["raise AssertionError('unreachable path')"]
        raise GenError(f"{defn.name}: unsupported terminator {t!r}")

    return lower(f, names, on_term, indent)


def known_masks(info):
    """Statically known mask per boxed operand: constants carry their declared mask."""
    top = boxing.LATTICE.top
    out = []
    for op in info.defn.operands:
        if not op.boxed:
            continue
        s = info.variant.specs.get(op.name)
        if isinstance(s, IsConstant) and s.mask is not None:
            out.append(s.mask)
        elif op.kind == OperandKind.CONSTANT and op.mask is not None:
            out.append(op.mask)
        else:
            out.append(top)
    return out


@dataclass
class Stencil:
    info: object
    fast: object                  # cell handler
    slots: list                   # PayloadSlots of the fast cell
    source: str
    bridge: object = None         # slow bridge cell handler
    bridge_slots: list = field(default_factory=list)
    aot: object = None
    fallthrough_eliminable: bool = False
    site: str = None              # "prop", "call" or None
    record_fields: tuple = ()
    guards: list = field(default_factory=list)

    @property
    def fast_bytes(self):
        return 8 + 8 * len(self.slots)

    @property
    def slow_bytes(self):
        return 0 if self.bridge is None else 8 + 8 * len(self.bridge_slots)

    @property
    def spd_bytes(self):
        return 0 if self.bridge is None else 8 * (1 + len(self.record_fields))

    def describe(self):
        lines = [f"{self.info.label} (opcode {self.info.opcode})"]
        lines.append(f"  fast cell: {len(self.slots)} payload slots, "
                     f"fallthrough {'eliminated' if self.fallthrough_eliminable else 'explicit'}")
        for g in self.guards:
            lines.append(f"    guard p{g.param} {boxing.LATTICE.format(g.mask)} via {g.decision.describe()}")
        for j, s in enumerate(self.slots):
            lines.append(f"    P[{j}] {s.describe()}")
        if self.bridge is not None:
            lines.append("  slow bridge cell:")
            for j, s in enumerate(self.bridge_slots):
                lines.append(f"    P[{j}] {s.describe()}")
        if self.site:
            lines.append(f"  ic site: {self.site}")
        return "\n".join(lines)


class HandlerSet:
    """Everything generated from one registry."""

    def __init__(self, registry, vm_hooks=None):
        self.registry = registry
        self.ns = base_namespace()
        self.handlers = [None] * len(registry.infos)
        self.stencils = {}
        self.sources = {}
        self.quick = {}
        self.effect_fns = {}
        self.families = {}
        self.splits = {}
        self._build()

    # -- helpers -----------------------------------------------------------------
    def _compile(self, src, name, label):
        ns = self.ns
        exec(compile(src, f"<{label}>", "exec"), ns)
        return ns[name]

    def _descs(self):
        seen = {}
        for d in self.registry.order:
            if d.ic is not None:
                seen[d.ic.name] = d.ic
        return seen.values()

    def make_slot(self, desc):
        return InterpreterIC(desc, self.effect_fns[desc.name])

    def _build(self):
        R = self.registry
        for desc in self._descs():
            fns = compile_effects(desc, self.ns)
            self.effect_fns[desc.name] = fns
            self.ns[f"EFFECTS_{desc.name}"] = fns
            for c, fn in zip(desc.concrete, fns):
                self.ns[f"EFF_{desc.name}_{c.ordinal}"] = fn
            self.families[desc.name] = icsite.StubFamily(desc, self.ns)
        self.ns["ic_miss"] = self._ic_miss
        for info in list(R.infos[1:]):
            self.ns[f"S_{info.opcode}"] = info.struct
            self.handlers[info.opcode] = self._interp_handler(info)
            self.stencils[info.opcode] = self._stencil(info)
        for info in list(R.infos[1:]):
            d = info.defn
            if d.ic is not None and d.fuse_ic and info.quickened is None:
                for c in d.ic.concrete:
                    op = R.add_quickened(info.opcode, c.ordinal)
                    self.quick[(info.opcode, c.ordinal)] = op
                    self.handlers.append(None)
                    self.ns[f"S_{op}"] = info.struct
                    self.handlers[op] = self._interp_handler(R.infos[op], c)
        self.handlers[0] = self._nop_handler()

    def _nop_handler(self):
        def nop(st, pos):
            raise RuntimeError(f"executed padding at {pos}")
        return nop

    def _ic_miss(self, st, s, key, obj, name, val, pos):
        C = st.C
        C.ic_misses += 1
        desc = s.desc
        d = desc.body(obj, name)
        c = desc.concrete_for(d.effect, d.state)
        payload = desc.payload_of(c, d.state)
        if d.cacheable and st.vm.use_ic:
            if st.debug and key == desc.impossible_key:
                raise AssertionError("a runtime key equals the impossible key")
            s.key = key
            s.valid = True
            s.ordinal = c.ordinal
            s.state = payload
            if desc.fuse:
                buf = st.buf
                base_op = self.registry.infos[buf[pos] | (buf[pos + 1] << 8)].base_opcode
                q = self.quick[(base_op, c.ordinal)]
                buf[pos] = q & 0xFF
                buf[pos + 1] = q >> 8
                s.quickened = c.ordinal
        return s.fns[c.ordinal](obj, name, val, payload)

    # -- interpreter ----------------------------------------------------------------
    def _split(self, info):
        key = info.opcode
        if key not in self.splits:
            d = info.defn
            boxed = [o for o in d.operands if o.boxed]
            spec = [info.variant.speculate.get(o.name) for o in boxed]
            known = known_masks(info)
            if any(s is not None for s in spec):
                fast, slow, guards = split_fast_slow(d.semantics, spec, known)
            else:
                from .semir import TypePredicate, optimize_checks
                p = TypePredicate.conjunction(known, boxing.LATTICE)
                fast, slow, guards = optimize_checks(d.semantics, p), None, []
            self.splits[key] = (fast, slow, guards)
        return self.splits[key]

    def _guard_expr(self, info, guards, be):
        boxed = [o for o in info.defn.operands if o.boxed]
        parts = []
        for g in guards:
            parts.append(boxing.decision_expr(g.decision, be.value(boxed[g.param].name)))
        return " and ".join(parts)

    def _interp_handler(self, info, quick=None):
        d = info.defn
        be = InterpBackend(info, quick)
        name = f"h_{d.name}_{info.opcode}"
        body = []
        extra = ""
        if d.semantics is not None:
            fast, slow, guards = self._split(info)
            if guards:
                body.append(f"    if {self._guard_expr(info, guards, be)}:")
                body += lower_semantics(fast, d, be, 2)
                args = ", ".join(be.value(o.name) for o in d.operands if o.boxed)
                body.append(f"    return {name}_slow(st, pos, {args})")
                extra = self._interp_slow(info, slow, name + "_slow")
            else:
                body += lower_semantics(fast, d, be, 1)
        else:
            body += expand(d.body, be)
        pre = ["    " + x for x in be.preamble()]
        pre += [f"    v_{n} = {be.load(n)}" for n in be.used_values]
        src = f"def {name}(st, pos):\n" + "\n".join(pre + body) + "\n" + extra
        self.sources[info.opcode] = src
        return self._compile(src, name, info.label)

    def _interp_slow(self, info, slow, name):
        d = info.defn
        be = InterpBackend(info)
        boxed = [o.name for o in d.operands if o.boxed]
        lines = lower_semantics(slow, d, be, 1)
        pre = ["    " + x for x in be.preamble()]
        return (f"\n\ndef {name}(st, pos, {', '.join('v_' + n for n in boxed)}):\n"
                + "\n".join(pre + lines) + "\n")

    # -- tier 2 -----------------------------------------------------------------------
    def _stencil(self, info):
        d = info.defn
        be = JitBackend(info)
        name = f"c_{d.name}_{info.opcode}"
        body = []
        st = Stencil(info, None, be.slots, "")
        extra = ""
        if d.semantics is not None:
            fast, slow, guards = self._split(info)
            st.guards = guards
            if guards:
                body.append(f"    if {self._guard_expr(info, guards, be)}:")
                body += lower_semantics(fast, d, be, 2)
                body.append("    return st.co.slow[i](st, st.co.slow_payloads[i], i)")
                extra, st.record_fields = self._aot(info, slow, name)
                bridge_hole = make_hole("slowPathDataOffset")
                st.bridge_slots = [PayloadSlot("hole", ("spd",), bridge_hole,
                                               prove_range(bridge_hole))]
            else:
                body += lower_semantics(fast, d, be, 1)
        else:
            body += expand(d.jit_body or d.body, be)
            if d.ic is not None:
                st.site = "prop"
            elif "@ic" in (d.jit_body or ""):
                st.site = "call"
        pre = ["    " + x for x in be.preamble()]
        pre += [f"    v_{n} = {be.load(n)}" for n in be.used_values]
        src = f"def {name}(st, P, i):\n" + "\n".join(pre + body) + "\n" + extra
        st.source = src
        ns = self.ns
        exec(compile(src, f"<stencil {info.label}>", "exec"), ns)
        st.fast = ns[name]
        if extra:
            st.aot = ns[name + "_aot"]
            st.bridge = ns[name + "_bridge"]
        st.fallthrough_eliminable = be.has_next
        return st

    def _aot(self, info, slow, name):
        d = info.defn
        be = AotBackend(info)
        boxed = [o.name for o in d.operands if o.boxed]
        lines = lower_semantics(slow, d, be, 1)
        pre = ["    stack = st.stack", "    base = st.base"]
        pre += [f"    v_{n} = {be.load(n)}" for n in boxed]
        h = make_hole("slowPathDataOffset")
        rec = recover_source(h, prove_range(h), "P[0]")
        src = (f"\n\ndef {name}_aot(st, R):\n" + "\n".join(pre + lines) + "\n"
               f"\n\ndef {name}_bridge(st, P, i):\n"
               f"    return {name}_aot(st, st.co.spd[{rec}])\n")
        fields = ["pos", "next"] + [o.name for o in d.operands]
        if d.has_output:
            fields.append("out")
        if d.may_branch:
            fields.append("target")
        return src, tuple(fields)

    def dump_templates(self):
        out = []
        for info in self.registry.infos[1:]:
            if info.quickened is None:
                out.append(self.stencils[info.opcode].describe())
        return "\n".join(out) + "\n"
