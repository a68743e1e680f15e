"""Runtime-constant holes and the range proof that decides how to patch them.

A hole is a root runtime constant (an operand slot, a literal, a code
address...) followed by a chain of affine steps. Patched values are
represented like 32-bit symbol addresses, which must lie in
``[1, 2**31 - 2**24)``. The prover picks one of three encodings:

* direct:    the expression always lies in the target range;
* adjusted:  the range is narrow enough but misplaced, so ``k`` is added at
             patch time and subtracted again by the code that reads the hole;
* runtime:   non-affine or too wide, so the raw root is stored and the chain
             is evaluated when the cell runs.

Holes flagged ``wide`` stand for 64-bit immediates and accept any word.
"""
from __future__ import annotations

from dataclasses import dataclass

TARGET_LO = 1
TARGET_HI = 2 ** 31 - 2 ** 24 - 1
WIDE_LO = 0
WIDE_HI = 2 ** 64 - 1

MAX_SLOT = 10 ** 6
MAX_SPD_OFFSET = 2 ** 28

ROOT_KINDS = ("operandSlot", "literal", "constantValue", "outputSlot", "fallthroughAddr",
              "branchTargetAddr", "slowPathDataOffset", "icStateField")

AFFINE_OPS = ("mul", "add")


def root_range(kind, width=None, lo=None, hi=None):
    """Declared value range of a root runtime constant."""
    if kind in ("operandSlot", "outputSlot"):
        return 0, MAX_SLOT
    if kind == "literal":
        bits = 8 * (width or 4)
        return 0, 2 ** bits - 1
    if kind == "constantValue":
        return 0, WIDE_HI
    if kind in ("fallthroughAddr", "branchTargetAddr"):
        return TARGET_LO, TARGET_HI
    if kind == "slowPathDataOffset":
        return 1, MAX_SPD_OFFSET
    if kind == "icStateField":
        if lo is None or hi is None:
            return None
        return lo, hi
    raise ValueError(f"unknown hole root {kind!r}")


@dataclass(frozen=True)
class HoleExpr:
    root: str
    index: object = None
    chain: tuple = ()              # ((op, const), ...) applied left to right
    lo: int = None
    hi: int = None
    wide: bool = False

    def evaluate(self, x):
        for op, c in self.chain:
            if op == "mul":
                x = x * c
            elif op == "add":
                x = x + c
            elif op == "hash":
                x = hash_step(x, c)
            else:
                raise ValueError(f"unknown hole step {op!r}")
        return x

    @property
    def affine(self):
        return all(op in AFFINE_OPS for op, _ in self.chain)

    def interval(self):
        if self.lo is None or not self.affine:
            return None
        lo, hi = self.lo, self.hi
        for op, c in self.chain:
            if op == "mul":
                lo, hi = sorted((lo * c, hi * c))
            else:
                lo, hi = lo + c, hi + c
        return lo, hi

    def describe(self):
        s = self.root if self.index is None else f"{self.root}({self.index})"
        for op, c in self.chain:
            s += {"mul": f"*{c}", "add": f"+{c}"}.get(op, f".{op}({c})")
        return s


def hash_step(x, c):
    # a deliberately non-affine mixing step
    x = (x ^ (x >> 16)) * (0x45D9F3B + c)
    return (x ^ (x >> 16)) & 0xFFFFFFFF


def make_hole(root, index=None, chain=(), width=None, lo=None, hi=None, wide=None):
    r = root_range(root, width, lo, hi)
    if wide is None:
        wide = root == "constantValue"
    return HoleExpr(root, index, tuple(chain), r[0] if r else None, r[1] if r else None, wide)


@dataclass(frozen=True)
class HoleDecision:
    kind: str                      # "direct", "adjusted" or "runtime"
    k: int = 0

    def __str__(self):
        if self.kind == "adjusted":
            return f"adjusted({self.k:+d})"
        return self.kind


def prove_range(expr):
    lo_t, hi_t = (WIDE_LO, WIDE_HI) if expr.wide else (TARGET_LO, TARGET_HI)
    iv = expr.interval()
    if iv is None:
        return HoleDecision("runtime")
    lo, hi = iv
    if lo_t <= lo and hi <= hi_t:
        return HoleDecision("direct")
    if hi - lo <= hi_t - lo_t:
        if lo < lo_t:
            return HoleDecision("adjusted", lo_t - lo)
        return HoleDecision("adjusted", hi_t - hi)
    return HoleDecision("runtime")


def patch_value(expr, decision, root_value):
    """The number written into the hole for a concrete root value."""
    if decision.kind == "direct":
        return expr.evaluate(root_value)
    if decision.kind == "adjusted":
        return expr.evaluate(root_value) + decision.k
    return root_value


def recover(expr, decision, patched):
    """What the cell computes from the patched number; equals ``expr.evaluate(root)``."""
    if decision.kind == "direct":
        return patched
    if decision.kind == "adjusted":
        return patched - decision.k
    return expr.evaluate(patched)


def recover_source(expr, decision, src):
    """Python source for ``recover`` with the patched value held in ``src``."""
    if decision.kind == "direct":
        return src
    if decision.kind == "adjusted":
        return f"({src} - {decision.k})" if decision.k > 0 else f"({src} + {-decision.k})"
    e = src
    for op, c in expr.chain:
        if op == "mul":
            e = f"({e} * {c})"
        elif op == "add":
            e = f"({e} + {c})"
        else:
            e = f"hash_step({e}, {c})"
    return e
