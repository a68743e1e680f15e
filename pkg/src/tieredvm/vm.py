"""The assembled engine: registry, generated handlers, heap, globals and tier policy."""
from __future__ import annotations

import time
from dataclasses import dataclass

from .guest.bytecodes import build_registry
from .guest.codegen import compile_source
from .guest import stdlib
from .gen import HandlerSet
from .interpreter import (TIER_COMPILED, TIER_FAILED, Counters, Pinned, run_closure)
from .jit.compiler import CompileUnsupported, compile_codeblock
from .runtime import Closure, GuestError, Heap, prop_lookup, prop_store, tostring

_SHARED = {}


def shared_handlers():
    """Registry and handler set are pure functions of the bytecode definitions; build once."""
    hs = _SHARED.get("hs")
    if hs is None:
        hs = HandlerSet(build_registry())
        _SHARED["hs"] = hs
    return hs


@dataclass
class VMConfig:
    tiering: bool = True
    threshold: int = 5000
    osr: bool = True
    use_ic: bool = True
    debug: bool = False

    def __post_init__(self):
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("tier-up threshold must be >= 0")


class GuestRuntimeError(Exception):
    """An error that reached the top of the guest program."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class VM:
    def __init__(self, config=None, write=None):
        cfg = config or VMConfig()
        self.config = cfg
        self.tiering = cfg.tiering and cfg.threshold is not None
        self.threshold = cfg.threshold if cfg.threshold is not None else 0
        self.osr = cfg.osr
        self.use_ic = cfg.use_ic
        self.debug = cfg.debug
        self.hs = shared_handlers()
        self.registry = self.hs.registry
        self.handlers = self.hs.handlers
        self.heap = Heap()
        self.counters = Counters()
        self.genv_word = self.heap.new_table()
        self.genv = self.heap.get(self.genv_word)
        self.genv.meta = 1         # exercises the second specialisation axis of the global caches
        self.genv_table = self.genv
        self._out = []
        self.write = write or self._out.append
        self.compiled = []
        self.last_state = None
        stdlib.install(self)

    # globals ------------------------------------------------------------------------
    def set_global(self, name, w):
        prop_store(self.heap, self.genv, self.heap.intern(name), w)

    def get_global(self, name):
        return prop_lookup(self.genv, self.heap.intern(name))

    def set_field(self, tword, name, w):
        prop_store(self.heap, self.heap.get(tword), self.heap.intern(name), w)

    @property
    def output(self):
        return "".join(self._out)

    # compilation --------------------------------------------------------------------
    def load(self, src):
        main = compile_source(src, self.registry, self.heap)
        for cb in main.walk():
            cb.reset_ics(self.hs.make_slot)
        return main

    def tier_up(self, cb):
        try:
            co = compile_codeblock(cb, self.hs, self.counters)
        except CompileUnsupported:
            cb.tier = TIER_FAILED
            return None
        cb.co = co
        cb.tier = TIER_COMPILED
        self.counters.tier_ups += 1
        self.compiled.append(cb)
        return co

    # running -------------------------------------------------------------------------
    def call(self, fword, args=()):
        st = Pinned(self)
        self.last_state = st
        try:
            return run_closure(st, self.handlers, fword, list(args))
        except GuestError as e:
            raise GuestRuntimeError(tostring(self.heap, e.value), e.value) from None

    def run(self, src):
        """Compile and run ``src``; returns the main chunk's results."""
        main = self.load(src)
        fword = self.heap.new_function(Closure(main, []))
        return self.call(fword)

    def run_timed(self, src):
        t0 = time.perf_counter()
        try:
            self.run(src)
        finally:
            self.wall_ms = (time.perf_counter() - t0) * 1000.0
        return self.wall_ms

    def stats(self):
        return self.counters.as_dict()

    @property
    def peak_depth(self):
        return self.last_state.peak if self.last_state is not None else 0


def run_source(src, **config):
    """Convenience: run ``src`` with a fresh VM and return (output, vm)."""
    vm = VM(VMConfig(**config))
    vm.run(src)
    return vm.output, vm
