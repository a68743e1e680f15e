"""The tier-2 compiler: four passes over a CodeBlock producing a CodeObject.

1. size every stencil's fast cell, slow bridge and SlowPathData record;
2. allocate the hot, cold and SlowPathData arenas at exactly those sizes;
3. one scan over the bytecode: copy stencils, replay holes against the
   decoded operands, emit SlowPathData records and the bytecode->cell map;
4. patch branch-target slots (forward targets are unknown during pass 3).
"""
from __future__ import annotations

from .holes import patch_value
from .icsite import CallSite, ICSite

SPD_HEADER = 8
UNRESOLVED = object()


class CompileUnsupported(Exception):
    def __init__(self, kind):
        super().__init__(f"no tier-2 stencil for {kind}")
        self.kind = kind


class CompileStats:
    def __init__(self):
        self.predicted = {}
        self.emitted = {}
        self.visits = 0
        self.bytecodes = 0
        self.unresolved = 0


def _trap_cell(st, P, i):
    raise RuntimeError("control reached cell 0")


class CodeObject:
    def __init__(self, cb):
        self.cb = cb
        self.entry = 1
        self.handlers = None      # hot arena: fast cells in bytecode order
        self.payloads = None
        self.slow = None          # cold arena, indexed by the owning fast cell
        self.slow_payloads = None
        self.spd = {}             # SlowPathData offset -> record
        self.sites = None
        self.bc_to_cell = None
        self.stats = CompileStats()

    @property
    def size(self):
        return sum(self.stats.emitted.values())


def _root_value(src, d, cell, spd_off):
    k = src[0]
    if k == "slot":
        return d.operands[src[1]].slot
    if k == "const":
        return d.operands[src[1]].word
    if k == "literal":
        return d.operands[src[1]]
    if k == "out":
        return d.output.slot
    if k == "next":
        return cell + 1
    if k == "spd":
        return spd_off
    raise ValueError(src)


def compile_codeblock(cb, handler_set, C=None):
    """Compile ``cb``; raises CompileUnsupported without producing a partial object."""
    registry = handler_set.registry
    stencils = handler_set.stencils
    co = CodeObject(cb)
    stats = co.stats
    stream = cb.stream
    starts = stream.starts
    n = len(starts)

    # pass 1: sizes
    chosen = []
    fast_bytes = slow_bytes = spd_bytes = 0
    for pos in starts:
        info = registry.infos[stream.buf[pos] | (stream.buf[pos + 1] << 8)]
        s = stencils.get(info.base_opcode)
        if s is None or s.fast is None:
            raise CompileUnsupported(info.defn.name)
        chosen.append(s)
        fast_bytes += s.fast_bytes
        slow_bytes += s.slow_bytes
        spd_bytes += s.spd_bytes
    stats.predicted = {"fast": fast_bytes, "slow": slow_bytes, "spd": SPD_HEADER + spd_bytes}

    # pass 2: allocate
    co.handlers = [_trap_cell] + [None] * n
    co.payloads = [()] + [None] * n
    co.slow = [None] * (n + 1)
    co.slow_payloads = [None] * (n + 1)
    co.sites = [None] * (n + 1)
    co.bc_to_cell = [None] * n
    emitted = {"fast": 0, "slow": 0, "spd": SPD_HEADER}
    pending = []
    ords = cb.ords

    # pass 3: one scan
    for idx, pos in enumerate(starts):
        stats.visits += 1
        s = chosen[idx]
        d = stream.decode(pos)
        cell = idx + 1
        co.bc_to_cell[idx] = cell
        spd_off = emitted["spd"] if s.bridge is not None else None
        payload = []
        for j, slot in enumerate(s.slots):
            if slot.kind == "branch":
                payload.append(UNRESOLVED)
                pending.append((co.payloads, cell, j, d.target))
            else:
                payload.append(patch_value(slot.expr, slot.decision,
                                           _root_value(slot.source, d, cell, spd_off)))
        co.handlers[cell] = s.fast
        co.payloads[cell] = payload
        emitted["fast"] += 8 + 8 * len(payload)
        if s.bridge is not None:
            rec = {"pos": pos, "next": cell + 1}
            for name, v in d.operands.items():
                rec[name] = v.slot if hasattr(v, "slot") else (v.word if hasattr(v, "word") else v)
            if d.output is not None:
                rec["out"] = d.output.slot
            if d.target is not None:
                rec["target"] = UNRESOLVED
                pending.append((None, rec, "target", d.target))
            bp = [patch_value(b.expr, b.decision, spd_off) for b in s.bridge_slots]
            co.slow[cell] = s.bridge
            co.slow_payloads[cell] = bp
            co.spd[spd_off] = rec
            emitted["slow"] += 8 + 8 * len(bp)
            emitted["spd"] += 8 * (1 + len(rec) - 0)
        if s.site == "prop":
            desc = d.info.defn.ic
            co.sites[cell] = ICSite(desc, handler_set.families[desc.name],
                                    handler_set.effect_fns[desc.name])
        elif s.site == "call":
            co.sites[cell] = CallSite()
    stats.emitted = emitted
    stats.bytecodes = n

    # pass 4: branch targets
    for arena, where, j, target in pending:
        t = co.bc_to_cell[ords[target]]
        if arena is None:
            where[j] = t
        else:
            arena[where][j] = t
    stats.unresolved = sum(1 for p in co.payloads[1:] for v in p if v is UNRESOLVED)
    stats.unresolved += sum(1 for r in co.spd.values() if r.get("target") is UNRESOLVED)
    if stats.unresolved:
        raise AssertionError("branch slots left unresolved after pass 4")
    if C is not None:
        C.compiled += n
        C.cell_bytes += emitted["fast"] + emitted["slow"]
    return co
