"""Fuzzing the hole range prover against direct evaluation."""
import random

from tieredvm.jit.holes import (TARGET_HI, TARGET_LO, make_hole, patch_value, prove_range,
                                recover)

STD_ROOTS = ("operandSlot", "outputSlot", "slowPathDataOffset", "fallthroughAddr", "literal")


def random_hole(rng):
    steps = []
    for _ in range(rng.randint(0, 3)):
        if rng.random() < 0.5:
            steps.append(("mul", rng.choice([1, 2, 4, 8, 16, -1, -8, 3])))
        else:
            steps.append(("add", rng.randint(-2 ** 31, 2 ** 31)
                          if rng.random() < 0.3 else rng.randint(-64, 64)))
    if rng.random() < 0.5:
        lo = rng.randint(0, 2 ** 32)
        hi = lo + rng.choice([0, 1, 10, 1000, 10 ** 6, 2 ** 28, 2 ** 31, 2 ** 33])
        return make_hole("icStateField", ("e", "f"), steps, lo=lo, hi=hi, wide=False)
    root = rng.choice(STD_ROOTS)
    return make_hole(root, 0, steps, width=rng.choice([1, 2, 4]) if root == "literal" else None)


def check_hole(expr, rng, samples=100):
    """Returns a list of problems; empty when every sample behaves."""
    d = prove_range(expr)
    problems = []
    lo, hi = expr.lo, expr.hi
    roots = [lo, hi] + [rng.randint(lo, hi) for _ in range(samples - 2)]
    for x in roots:
        patched = patch_value(expr, d, x)
        if d.kind in ("direct", "adjusted") and not TARGET_LO <= patched <= TARGET_HI:
            problems.append(("out of range", expr, d, x, patched))
        if recover(expr, d, patched) != expr.evaluate(x):
            problems.append(("recover mismatch", expr, d, x, patched))
    iv = expr.interval()
    if d.kind == "runtime" and iv is not None and iv[1] - iv[0] <= TARGET_HI - TARGET_LO:
        problems.append(("gave up on a shiftable interval", expr, d))
    if d.kind == "direct" and (iv[0] < TARGET_LO or iv[1] > TARGET_HI):
        problems.append(("direct outside target", expr, d))
    return problems


def fuzz(n=1000, seed=0, samples=100):
    rng = random.Random(seed)
    kinds = {"direct": 0, "adjusted": 0, "runtime": 0}
    problems = []
    for _ in range(n):
        e = random_hole(rng)
        kinds[prove_range(e).kind] += 1
        problems += check_hole(e, rng, samples)
    return kinds, problems
