"""Generic inline caching over an arbitrary key and idempotent effect.

An ``ICDescriptor`` bundles a body ``λi`` that inspects its input and picks an
effect, and a list of ``EffectDef`` that describe what a cached entry does.
Every effect carries a small state record; selected state fields may be
specialised, in which case each listed value gets its own concrete effect
(and, when quickened, its own interpreter opcode).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

MAX_STATE_FIELDS = 8
FALLBACK = "*"


class ICError(Exception):
    pass


@dataclass(frozen=True)
class StateField:
    name: str
    lo: int = None                 # annotated value range, inclusive
    hi: int = None
    values: tuple = None           # specialised values, if any
    fallback: bool = False         # keep a generic effect for unlisted values

    @property
    def specialized(self):
        return self.values is not None


def Field(name, lo=None, hi=None):
    return StateField(name, lo, hi)


def SpecializeFull(name, values):
    return StateField(name, values=tuple(values))


def SpecializeWithFallback(name, values, lo=None, hi=None):
    return StateField(name, lo, hi, tuple(values), True)


@dataclass
class EffectDef:
    """``body`` is Python source run with ``obj``, ``name``, ``val`` and every state field bound."""
    name: str
    fields: list
    body: str

    def __post_init__(self):
        if len(self.fields) > MAX_STATE_FIELDS:
            raise ICError(f"effect {self.name}: state may hold at most {MAX_STATE_FIELDS} fields")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ICError(f"effect {self.name}: duplicate state field")


@dataclass
class ConcreteEffect:
    ordinal: int
    effect: EffectDef
    fixed: dict                    # specialised field -> value (or FALLBACK)
    payload: list                  # StateFields carried at runtime

    @property
    def label(self):
        parts = [f"{k}={v}" for k, v in self.fixed.items()]
        return self.effect.name + ("[" + ",".join(parts) + "]" if parts else "")

    @property
    def payload_size(self):
        return len(self.payload)


@dataclass
class Decision:
    """What ``λi`` returns: the effect to apply and its full state."""
    effect: str
    state: dict
    cacheable: bool = True


@dataclass
class ICDescriptor:
    name: str
    body: object                   # callable(obj, name) -> Decision
    effects: list
    impossible_key: int = None
    fuse: bool = False
    concrete: list = field(default_factory=list)

    def __post_init__(self):
        self.concrete = expand_specializations(self)
        self._index = {}
        for c in self.concrete:
            self._index[(c.effect.name, tuple(sorted(c.fixed.items(), key=lambda kv: kv[0])))] = c

    def effect(self, name):
        for e in self.effects:
            if e.name == name:
                return e
        raise ICError(f"{self.name}: unknown effect {name}")

    def concrete_for(self, name, state):
        e = self.effect(name)
        fixed = {}
        for f in e.fields:
            if f.name not in state:
                raise ICError(f"{self.name}.{name}: state field {f.name} missing")
            if f.specialized:
                v = state[f.name]
                if v in f.values:
                    fixed[f.name] = v
                elif f.fallback:
                    fixed[f.name] = FALLBACK
                else:
                    raise ICError(f"{self.name}.{name}: {f.name}={v!r} is not a specialised value")
        return self._index[(name, tuple(sorted(fixed.items(), key=lambda kv: kv[0])))]

    def payload_of(self, concrete, state):
        return tuple(state[f.name] for f in concrete.payload)

    @property
    def slab_capacity(self):
        return min(c.payload_size for c in self.concrete)


def expand_specializations(desc):
    """Cartesian product of every specialised field, one concrete effect per combination."""
    out = []
    for e in desc.effects:
        axes = []
        for f in e.fields:
            if f.specialized:
                vals = list(f.values) + ([FALLBACK] if f.fallback else [])
                axes.append([(f.name, v) for v in vals])
        for combo in itertools.product(*axes):
            fixed = dict(combo)
            payload = [f for f in e.fields
                       if not f.specialized or fixed.get(f.name) == FALLBACK]
            out.append(ConcreteEffect(len(out), e, fixed, payload))
    return out


def effect_source(concrete, fn_name, patched=None):
    """Source of a function ``fn(obj, name, val, S)`` applying ``concrete``.

    ``S`` holds the runtime payload. ``patched`` maps a payload field to the
    Python expression that recovers its value from a patched hole (used by
    tier-2 stubs); by default fields are read raw.
    """
    patched = patched or {}
    lines = [f"def {fn_name}(obj, name, val, S):"]
    for i, f in enumerate(concrete.payload):
        src = f"S[{i}]"
        lines.append(f"    {f.name} = {patched.get(f.name, '{}').format(src)}")
    for name, v in concrete.fixed.items():
        if v != FALLBACK:
            lines.append(f"    {name} = {v!r}")
    for line in concrete.effect.body.strip("\n").splitlines():
        lines.append("    " + line)
    return "\n".join(lines) + "\n"


def compile_effects(desc, namespace, prefix="eff", patched=None):
    """Build one Python function per concrete effect."""
    fns = []
    for c in desc.concrete:
        name = f"{prefix}_{desc.name}_{c.ordinal}"
        src = effect_source(c, name, patched)
        ns = dict(namespace)
        exec(compile(src, f"<effect {c.label}>", "exec"), ns)
        fns.append(ns[name])
    return fns


class InterpreterIC:
    """The monomorphic cache an interpreter keeps for one bytecode.

    With an impossible key the slot starts out holding that key, so a hit is
    a single compare. Without one, a separate validity flag is tested and the
    number of such existence checks is counted.
    """

    def __init__(self, desc, effect_fns=None):
        self.desc = desc
        self.fns = effect_fns
        if desc.impossible_key is not None:
            self.key = desc.impossible_key
            self.valid = True
        else:
            self.key = None
            self.valid = False
        self.ordinal = None
        self.state = None
        self.quickened = None
        self.hits = 0
        self.misses = 0
        self.existence_checks = 0
        self.effect_switches = 0
        self.body_runs = 0

    def populated(self):
        return self.ordinal is not None

    def execute(self, key, obj, name, val=None):
        """Run the cached effect for ``key`` or fall back to the body."""
        if self.desc.impossible_key is None:
            self.existence_checks += 1
            hit = self.valid and self.key == key
        else:
            hit = self.key == key
        if hit:
            self.hits += 1
            if self.quickened is None:
                self.effect_switches += 1
            return self.fns[self.ordinal](obj, name, val, self.state)
        self.misses += 1
        self.body_runs += 1
        d = self.desc.body(obj, name)
        c = self.desc.concrete_for(d.effect, d.state)
        payload = self.desc.payload_of(c, d.state)
        if d.cacheable:
            self.key = key
            self.valid = True
            self.ordinal = c.ordinal
            self.state = payload
            if self.desc.fuse:
                self.quickened = c.ordinal
        return self.fns[c.ordinal](obj, name, val, payload)
