"""Declarative bytecode definitions and their binary encoding.

Each ``BytecodeDef`` lists typed operands and a set of variants. A variant
specialises operands (local vs constant, a literal's exact value) and may
request speculative type-based splitting. Every variant gets its own opcode
and a fixed little-endian layout:

    opcode u16 | operands in declaration order | output u16 | ic-slot u32 | branch i32

Locals, range bases and range lengths are u16, constant-table indices u32,
literals use their declared width. Members of a same-length group are padded
with zero (Nop) bytes to a common length so one can be rewritten into another.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from . import boxing
from .boxing import popcount

NOP_OPCODE = 0
MAX_LOCAL = 0xFFFF


class BytecodeError(Exception):
    pass


class OperandKind(enum.Enum):
    LOCAL = "local"
    CONSTANT = "constant"
    LOCAL_OR_CONSTANT = "local-or-constant"
    RANGE_RO = "range-ro"
    RANGE_RW = "range-rw"
    LITERAL = "literal"


@dataclass(frozen=True)
class OperandSpec:
    name: str
    kind: OperandKind
    mask: int = None
    width: int = 0
    signed: bool = False

    @property
    def boxed(self):
        return self.kind in (OperandKind.LOCAL, OperandKind.CONSTANT, OperandKind.LOCAL_OR_CONSTANT)


def Local(name):
    return OperandSpec(name, OperandKind.LOCAL)


def Constant(name, mask=None):
    return OperandSpec(name, OperandKind.CONSTANT, mask)


def LocalOrConstant(name):
    return OperandSpec(name, OperandKind.LOCAL_OR_CONSTANT)


def RangeRO(name):
    return OperandSpec(name, OperandKind.RANGE_RO)


def RangeRW(name):
    return OperandSpec(name, OperandKind.RANGE_RW)


def Literal(name, width, signed=False):
    if width not in (1, 2, 4, 8):
        raise BytecodeError("literal width must be 1, 2, 4 or 8 bytes")
    return OperandSpec(name, OperandKind.LITERAL, width=width, signed=signed)


# operand values handed to the builder and returned by the decoder

@dataclass(frozen=True)
class Loc:
    slot: int

    def __repr__(self):
        return f"L{self.slot}"


@dataclass(frozen=True)
class Cst:
    word: int

    def __repr__(self):
        return f"K({self.word:#x})"


# variant specialisations

@dataclass(frozen=True)
class IsLocal:
    pass


@dataclass(frozen=True)
class IsConstant:
    mask: int = None


@dataclass(frozen=True)
class HasValue:
    value: int


@dataclass
class Variant:
    specs: dict = field(default_factory=dict)
    speculate: dict = field(default_factory=dict)     # operand name -> speculated mask
    osr_check: bool = False
    name: str = ""


@dataclass
class BytecodeDef:
    name: str
    operands: list
    has_output: bool = False
    may_branch: bool = False
    variants: list = None
    semantics: object = None       # SemFunction for the main component, if IR-defined
    body: str = None               # handler template for kinds not expressed in the IR
    jit_body: str = None           # tier-2 override of ``body``
    ic: object = None              # ICDescriptor for inline-cached kinds
    fuse_ic: bool = False          # quicken cached effects into dedicated opcodes
    group: str = None              # same-length group
    doc: str = ""

    def __post_init__(self):
        if self.variants is None:
            self.variants = [Variant()]

    def operand(self, name):
        for op in self.operands:
            if op.name == name:
                return op
        raise KeyError(name)


_LIT_FMT = {(1, False): "B", (2, False): "H", (4, False): "I", (8, False): "Q",
            (1, True): "b", (2, True): "h", (4, True): "i", (8, True): "q"}


@dataclass
class VariantInfo:
    opcode: int
    defn: BytecodeDef
    index: int
    variant: Variant
    fields: list                  # (role, name, fmt) after the opcode
    struct: struct.Struct = None
    length: int = 0
    quickened: object = None      # effect ordinal for quickened IC opcodes
    base_opcode: int = None

    @property
    def label(self):
        v = self.variant.name or str(self.index)
        q = f"!{self.quickened}" if self.quickened is not None else ""
        return f"{self.defn.name}.{v}{q}"

    def field_index(self, role, name=None):
        for i, (r, n, _) in enumerate(self.fields):
            if r == role and (name is None or n == name):
                return i + 1
        raise KeyError((role, name))


def specificity(defn, variant, lattice=boxing.LATTICE):
    score = 0.0
    top_bits = popcount(lattice.top)
    for op in defn.operands:
        s = variant.specs.get(op.name)
        if isinstance(s, HasValue):
            score += 4
        elif isinstance(s, IsConstant) and s.mask is not None:
            score += 2 + (top_bits - popcount(s.mask)) / 64
        elif isinstance(s, (IsLocal, IsConstant)):
            score += 2
    return score


class Registry:
    """Holds every bytecode definition and assigns opcodes to variants."""

    def __init__(self, scheme=boxing.GUEST):
        self.scheme = scheme
        self.defs = {}
        self.order = []
        self.infos = [None]          # opcode 0 is the Nop/padding pattern
        self.by_def = {}
        self.finalized = False

    def register(self, defn):
        if self.finalized:
            raise BytecodeError("registry already finalized")
        if defn.name in self.defs:
            raise BytecodeError(f"duplicate bytecode {defn.name}")
        if len(self.infos) + len(defn.variants) > 0xFFFF:
            raise BytecodeError("opcode space exhausted")
        self._validate(defn)
        self.defs[defn.name] = defn
        self.order.append(defn)
        ops = []
        for i, v in enumerate(defn.variants):
            info = VariantInfo(len(self.infos), defn, i, v, self._fields(defn, v))
            info.base_opcode = info.opcode
            self.infos.append(info)
            ops.append(info)
        self.by_def[defn.name] = ops
        return [i.opcode for i in ops]

    def _validate(self, defn):
        names = [o.name for o in defn.operands]
        if len(set(names)) != len(names):
            raise BytecodeError(f"{defn.name}: duplicate operand name")
        if not defn.variants:
            raise BytecodeError(f"{defn.name}: at least one variant is required")
        for v in defn.variants:
            for name, spec in v.specs.items():
                op = defn.operand(name)
                if isinstance(spec, HasValue) and op.kind != OperandKind.LITERAL:
                    raise BytecodeError(f"{defn.name}: HasValue only applies to literals")
                if isinstance(spec, (IsLocal, IsConstant)) and op.kind != OperandKind.LOCAL_OR_CONSTANT:
                    raise BytecodeError(f"{defn.name}: {name} is not a LocalOrConstant operand")
            for op in defn.operands:
                if op.kind == OperandKind.LOCAL_OR_CONSTANT and not isinstance(v.specs.get(op.name), (IsLocal, IsConstant)):
                    raise BytecodeError(f"{defn.name}: every variant must say whether {op.name} is a local or a constant")
            for name in v.speculate:
                if not defn.operand(name).boxed:
                    raise BytecodeError(f"{defn.name}: cannot speculate on the type of non-boxed operand {name}")
            if v.osr_check and not defn.may_branch:
                raise BytecodeError(f"{defn.name}: only branching bytecodes may carry an OSR check")

    def _fields(self, defn, v):
        out = []
        for op in defn.operands:
            k = op.kind
            if k in (OperandKind.LOCAL, OperandKind.RANGE_RO, OperandKind.RANGE_RW):
                out.append(("operand", op.name, "H"))
            elif k == OperandKind.CONSTANT:
                out.append(("operand", op.name, "I"))
            elif k == OperandKind.LOCAL_OR_CONSTANT:
                out.append(("operand", op.name, "H" if isinstance(v.specs[op.name], IsLocal) else "I"))
            else:
                out.append(("operand", op.name, _LIT_FMT[(op.width, op.signed)]))
        if defn.has_output:
            out.append(("output", "out", "H"))
        if defn.ic is not None:
            out.append(("ic", "ic", "I"))
        if defn.may_branch:
            out.append(("target", "target", "i"))
        return out

    def finalize(self):
        groups = {}
        for info in self.infos[1:]:
            info.struct = struct.Struct("<H" + "".join(f for _, _, f in info.fields))
            info.length = info.struct.size
            if info.defn.group:
                g = groups.setdefault(info.defn.group, [])
                g.append(info)
        for members in groups.values():
            n = max(i.length for i in members)
            for i in members:
                i.length = n
        self.finalized = True
        return self

    def add_quickened(self, opcode, effect):
        base = self.infos[opcode]
        info = VariantInfo(len(self.infos), base.defn, base.index, base.variant, base.fields,
                           base.struct, base.length, effect, base.opcode)
        self.infos.append(info)
        return info.opcode

    def info(self, opcode):
        if not 0 < opcode < len(self.infos):
            raise BytecodeError(f"invalid opcode {opcode}")
        return self.infos[opcode]

    def variants_of(self, name):
        return self.by_def[name]

    def select_variant(self, name, values):
        """The most specific variant accepting ``values``; ties go to the earliest."""
        defn = self.defs[name]
        best = None
        best_score = -1.0
        for info in self.by_def[name]:
            if not self._accepts(defn, info.variant, values):
                continue
            s = specificity(defn, info.variant, self.scheme.lattice)
            if s > best_score:
                best, best_score = info, s
        if best is None:
            raise BytecodeError(f"no variant of {name} accepts {values}")
        return best

    def _accepts(self, defn, v, values):
        for op in defn.operands:
            val = values[op.name]
            spec = v.specs.get(op.name)
            if op.kind == OperandKind.LOCAL_OR_CONSTANT:
                if isinstance(spec, IsLocal) and not isinstance(val, Loc):
                    return False
                if isinstance(spec, IsConstant):
                    if not isinstance(val, Cst):
                        return False
                    if spec.mask is not None and not self.scheme.check(val.word, spec.mask):
                        return False
            elif isinstance(spec, HasValue) and val != spec.value:
                return False
        return True


@dataclass
class Decoded:
    pos: int
    length: int
    info: VariantInfo
    operands: dict
    output: Loc = None
    ic: int = None
    target: int = None

    @property
    def kind(self):
        return self.info.defn.name

    @property
    def next_pos(self):
        return self.pos + self.length


def _check_operand(op, val, name):
    k = op.kind
    if k in (OperandKind.LOCAL, OperandKind.RANGE_RO, OperandKind.RANGE_RW):
        if not isinstance(val, Loc):
            raise BytecodeError(f"{name}.{op.name} must be a local")
        if not 0 <= val.slot <= MAX_LOCAL:
            raise BytecodeError(f"{name}.{op.name}: local {val.slot} out of range")
    elif k == OperandKind.CONSTANT:
        if not isinstance(val, Cst):
            raise BytecodeError(f"{name}.{op.name} must be a constant")
    elif k == OperandKind.LOCAL_OR_CONSTANT:
        if not isinstance(val, (Loc, Cst)):
            raise BytecodeError(f"{name}.{op.name} must be a local or a constant")
    else:
        if not isinstance(val, int) or isinstance(val, bool):
            raise BytecodeError(f"{name}.{op.name} must be an integer literal")
        bits = op.width * 8
        lo, hi = (-(1 << (bits - 1)), (1 << (bits - 1)) - 1) if op.signed else (0, (1 << bits) - 1)
        if not lo <= val <= hi:
            raise BytecodeError(f"{name}.{op.name}: literal {val} does not fit {op.width} bytes")


class BytecodeBuilder:
    """Appends bytecodes to a stream; ``create_<Kind>(...)`` is shorthand for ``emit``."""

    def __init__(self, registry):
        if not registry.finalized:
            raise BytecodeError("registry must be finalized before building")
        self.registry = registry
        self.buf = bytearray()
        self.consts = []
        self._const_index = {}
        self.starts = []
        self.unset_targets = set()
        self.ic_count = 0

    def __getattr__(self, name):
        if name.startswith("create_"):
            kind = name[len("create_"):]
            if kind in self.registry.defs:
                return lambda **ops: self.emit(kind, **ops)
        raise AttributeError(name)

    def constant(self, word):
        i = self._const_index.get(word)
        if i is None:
            i = len(self.consts)
            self.consts.append(word)
            self._const_index[word] = i
        return i

    def get_cur_length(self):
        return len(self.buf)

    def emit(self, kind, out=None, target=None, **ops):
        defn = self.registry.defs.get(kind)
        if defn is None:
            raise BytecodeError(f"unknown bytecode {kind}")
        for op in defn.operands:
            if op.name not in ops:
                raise BytecodeError(f"{kind}: missing operand {op.name}")
            _check_operand(op, ops[op.name], kind)
        extra = set(ops) - {o.name for o in defn.operands}
        if extra:
            raise BytecodeError(f"{kind}: unknown operands {sorted(extra)}")
        if defn.has_output and out is None:
            raise BytecodeError(f"{kind} needs an output operand")
        if not defn.has_output and out is not None:
            raise BytecodeError(f"{kind} has no output operand")
        if out is not None and not (isinstance(out, Loc) and 0 <= out.slot <= MAX_LOCAL):
            raise BytecodeError(f"{kind}: bad output operand {out!r}")
        info = self.registry.select_variant(kind, ops)
        pos = len(self.buf)
        ic = None
        if defn.ic is not None:
            ic = self.ic_count
            self.ic_count += 1
        self.buf += _encode(info, ops, out, ic, 0, self.constant)
        self.starts.append(pos)
        if defn.may_branch:
            if target is None:
                self.unset_targets.add(pos)
            else:
                self.set_branch_target(pos, target)
        return pos

    def _info_at(self, pos):
        op = self.buf[pos] | (self.buf[pos + 1] << 8)
        return self.registry.info(op)

    def set_branch_target(self, pos, target):
        info = self._info_at(pos)
        if not info.defn.may_branch:
            raise BytecodeError(f"{info.defn.name} does not branch")
        struct.pack_into("<i", self.buf, pos + info.struct.size - 4, target - pos)
        self.unset_targets.discard(pos)

    def set_output_operand(self, pos, slot):
        info = self._info_at(pos)
        if not info.defn.has_output:
            raise BytecodeError(f"{info.defn.name} has no output")
        k = info.field_index("output")
        offset = struct.calcsize("<H" + "".join(f for _, _, f in info.fields[:k - 1]))
        struct.pack_into("<H", self.buf, pos + offset, slot)

    def check_wellformedness(self):
        if self.unset_targets:
            raise BytecodeError(f"branch targets never set at {sorted(self.unset_targets)}")
        starts = set(self.starts)
        end = len(self.buf)
        for pos in self.starts:
            info = self._info_at(pos)
            if info.defn.may_branch:
                (off,) = struct.unpack_from("<i", self.buf, pos + info.struct.size - 4)
                if pos + off not in starts:
                    raise BytecodeError(f"branch at {pos} targets {pos + off}, not a bytecode start")
        if end and not self.starts:
            raise BytecodeError("stream has bytes but no bytecodes")

    def build(self):
        self.check_wellformedness()
        return CodeStream(self.registry, bytearray(self.buf), list(self.consts),
                          list(self.starts), self.ic_count)


def _encode(info, ops, out, ic, offset, intern):
    vals = [info.opcode]
    for role, name, _ in info.fields:
        if role == "operand":
            v = ops[name]
            if isinstance(v, Loc):
                vals.append(v.slot)
            elif isinstance(v, Cst):
                vals.append(intern(v.word))
            else:
                vals.append(v)
        elif role == "output":
            vals.append(out.slot)
        elif role == "ic":
            vals.append(ic)
        else:
            vals.append(offset)
    raw = info.struct.pack(*vals)
    return raw + bytes(info.length - len(raw))


class CodeStream:
    """A finished bytecode stream with its constant table."""

    def __init__(self, registry, buf, consts, starts, ic_count):
        self.registry = registry
        self.buf = buf
        self.consts = consts
        self.starts = starts
        self._startset = set(starts)
        self.ic_count = ic_count

    def __len__(self):
        return len(self.buf)

    def opcode_at(self, pos):
        if pos not in self._startset:
            raise BytecodeError(f"position {pos} is not the start of a bytecode")
        return self.buf[pos] | (self.buf[pos + 1] << 8)

    def get_bytecode_kind(self, pos):
        return self.registry.info(self.opcode_at(pos)).defn.name

    def get_next_bytecode_position(self, pos):
        return pos + self.registry.info(self.opcode_at(pos)).length

    def decode(self, pos):
        info = self.registry.info(self.opcode_at(pos))
        raw = info.struct.unpack_from(self.buf, pos)
        d = Decoded(pos, info.length, info, {})
        for (role, name, _), v in zip(info.fields, raw[1:]):
            if role == "operand":
                op = info.defn.operand(name)
                k = op.kind
                if k in (OperandKind.LOCAL, OperandKind.RANGE_RO, OperandKind.RANGE_RW):
                    d.operands[name] = Loc(v)
                elif k == OperandKind.CONSTANT:
                    d.operands[name] = Cst(self.consts[v])
                elif k == OperandKind.LOCAL_OR_CONSTANT:
                    if isinstance(info.variant.specs[name], IsLocal):
                        d.operands[name] = Loc(v)
                    else:
                        d.operands[name] = Cst(self.consts[v])
                else:
                    d.operands[name] = v
            elif role == "output":
                d.output = Loc(v)
            elif role == "ic":
                d.ic = v
            else:
                d.target = pos + v
        return d

    def constant_index(self, pos, name):
        info = self.registry.info(self.opcode_at(pos))
        raw = info.struct.unpack_from(self.buf, pos)
        return raw[info.field_index("operand", name)]

    def __iter__(self):
        for pos in self.starts:
            yield self.decode(pos)

    def ordinals(self):
        """Map from byte position to bytecode ordinal (None inside a bytecode)."""
        out = [None] * (len(self.buf) + 1)
        for i, pos in enumerate(self.starts):
            out[pos] = i
        out[len(self.buf)] = len(self.starts)
        return out

    def replace_bytecode(self, pos, kind, out=None, **ops):
        """Overwrite the bytecode at ``pos`` with one of identical encoded length."""
        old = self.registry.info(self.opcode_at(pos))
        new_def = self.registry.defs[kind]
        for op in new_def.operands:
            if op.name not in ops:
                raise BytecodeError(f"{kind}: missing operand {op.name}")
            _check_operand(op, ops[op.name], kind)
        new = self.registry.select_variant(kind, ops)
        if old.defn.group is None or old.defn.group != new_def.group:
            raise BytecodeError("replacement must stay within a same-length group")
        if new.length != old.length:
            raise BytecodeError("replacement must have the same encoded length")
        if new_def.has_output != old.defn.has_output or new_def.may_branch != old.defn.may_branch:
            raise BytecodeError("replacement must keep output and branch shape")
        d = self.decode(pos)
        if new_def.has_output and out is None:
            out = d.output
        offset = (d.target - pos) if d.target is not None else 0
        ic = d.ic

        def intern(word):
            try:
                return self.consts.index(word)
            except ValueError:
                self.consts.append(word)
                return len(self.consts) - 1
        self.buf[pos:pos + old.length] = _encode(new, ops, out, ic, offset, intern)

    def disassemble(self, fmt_const=None):
        fmt_const = fmt_const or format_word
        lines = []
        for d in self:
            parts = []
            for name, v in d.operands.items():
                if isinstance(v, Cst):
                    parts.append(f"{name}={fmt_const(v.word)}")
                else:
                    parts.append(f"{name}={v!r}" if isinstance(v, Loc) else f"{name}={v}")
            if d.output is not None:
                parts.append(f"out={d.output!r}")
            if d.target is not None:
                parts.append(f"target={d.target}")
            lines.append(f"{d.pos:6d}  {d.info.label:<24} " + " ".join(parts))
        return "\n".join(lines) + ("\n" if lines else "")


def format_word(w):
    if boxing.is_double(w):
        return repr(boxing.w2d(w))
    return f"{w:#018x}"
