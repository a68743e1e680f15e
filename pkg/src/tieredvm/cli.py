"""Command-line entry point: run, dump, difftest and bench."""
from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from pathlib import Path

from .boxing import DOUBLE_LIMIT, STRING_LO, w2d
from .guest.syntax import GuestSyntaxError
from .guest.codegen import CodegenError
from .interpreter import Counters
from .runtime import fmt_number
from .vm import VM, GuestRuntimeError, VMConfig

EXIT_OK, EXIT_GUEST, EXIT_USAGE, EXIT_MISMATCH = 0, 1, 2, 3
STATS_KEYS = Counters.KEYS + ("wallTimeMs",)
DIFF_THRESHOLDS = (0, 1, 100)


class UsageError(Exception):
    pass


def _threshold(text):
    if text in ("inf", "none", "never"):
        return None
    n = int(text)
    if n < 0:
        raise argparse.ArgumentTypeError("threshold must be >= 0")
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="tieredvm", description="Run guest programs on the tiered VM.")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a program")
    r.add_argument("file")
    r.add_argument("--interpreter-only", action="store_true")
    r.add_argument("--tier-up-threshold", type=_threshold, default=5000, metavar="N")
    r.add_argument("--no-osr", action="store_true")
    r.add_argument("--stats", action="store_true")
    r.add_argument("--stats-format", choices=("text", "csv"), default="text")
    r.add_argument("--debug", action="store_true",
                   help="count every step and check variadic-result freshness")

    d = sub.add_parser("dump", help="print bytecode or stencil listings")
    d.add_argument("file")
    g = d.add_mutually_exclusive_group(required=True)
    g.add_argument("--bytecode", action="store_true")
    g.add_argument("--templates", action="store_true")

    t = sub.add_parser("difftest", help="compare interpreter-only and tiered output")
    t.add_argument("file")
    t.add_argument("--thresholds", default=",".join(map(str, DIFF_THRESHOLDS)))

    b = sub.add_parser("bench", help="run every program in a directory under both modes")
    b.add_argument("dir")
    b.add_argument("--csv", action="store_true")
    b.add_argument("--tier-up-threshold", type=_threshold, default=5000, metavar="N")
    return p


def read_source(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None


def execute(src, config):
    """Run ``src``; returns (stdout text, error text or None, vm, wall ms)."""
    vm = VM(config)
    err = None
    t0 = time.perf_counter()
    try:
        vm.run(src)
    except GuestRuntimeError as e:
        err = f"error: {e}"
    except (GuestSyntaxError, CodegenError) as e:
        err = f"syntax error: {e}"
    wall = (time.perf_counter() - t0) * 1000.0
    return vm.output, err, vm, wall


def stats_row(vm, wall):
    row = dict(vm.stats())
    row["wallTimeMs"] = round(wall, 3)
    return row


def format_stats(row, fmt="text"):
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STATS_KEYS)
        w.writerow([row[k] for k in STATS_KEYS])
        return buf.getvalue()
    width = max(len(k) for k in STATS_KEYS)
    return "".join(f"{k:<{width}}  {row[k]}\n" for k in STATS_KEYS)


def config_for(mode, threshold=5000, osr=True, debug=False):
    if mode == "interpreter":
        return VMConfig(tiering=False, threshold=None, osr=osr, debug=debug)
    return VMConfig(tiering=threshold is not None, threshold=threshold, osr=osr, debug=debug)


def cmd_run(a, out, err):
    src = read_source(a.file)
    mode = "interpreter" if a.interpreter_only else "tiered"
    text, e, vm, wall = execute(src, config_for(mode, a.tier_up_threshold, not a.no_osr, a.debug))
    out.write(text)
    if e is not None:
        err.write(e + "\n")
    if a.stats:
        out.write(format_stats(stats_row(vm, wall), a.stats_format))
    return EXIT_GUEST if e is not None else EXIT_OK


def const_formatter(heap):
    def fmt(w):
        if w < DOUBLE_LIMIT:
            return fmt_number(w2d(w))
        if w >= STRING_LO:
            return repr(heap.string(w))
        return f"{w:#018x}"
    return fmt


def dump_bytecode(src):
    vm = VM(VMConfig(tiering=False, threshold=None))
    main = vm.load(src)
    fmt = const_formatter(vm.heap)
    parts = []
    for k, cb in enumerate(main.walk()):
        parts.append(f"function #{k} {cb.name} (line {cb.line}) params={cb.nparams} "
                     f"vararg={int(cb.is_vararg)} frame={cb.frame_size} upvals={cb.upvals}\n")
        parts.append(cb.stream.disassemble(fmt))
    return "".join(parts)


def dump_templates(src):
    vm = VM(VMConfig(tiering=False, threshold=None))
    main = vm.load(src)
    seen = []
    for cb in main.walk():
        for d in cb.stream:
            op = d.info.opcode
            if op not in seen:
                seen.append(op)
    stencils = vm.hs.stencils
    return "\n".join(stencils[op].describe() for op in seen) + "\n"


def cmd_dump(a, out, err):
    src = read_source(a.file)
    try:
        out.write(dump_bytecode(src) if a.bytecode else dump_templates(src))
    except (GuestSyntaxError, CodegenError) as e:
        err.write(f"syntax error: {e}\n")
        return EXIT_GUEST
    return EXIT_OK


def difftest(src, thresholds=DIFF_THRESHOLDS, debug=False):
    """Run interpreter-only and tiered at each threshold; returns a list of mismatches."""
    ref_out, ref_err, _, _ = execute(src, config_for("interpreter", debug=debug))
    bad = []
    for th in thresholds:
        o, e, _, _ = execute(src, config_for("tiered", th, debug=debug))
        if o != ref_out or e != ref_err:
            bad.append(th)
    return bad


def cmd_difftest(a, out, err):
    src = read_source(a.file)
    try:
        ths = [_threshold(x) for x in a.thresholds.split(",") if x]
    except (ValueError, argparse.ArgumentTypeError):
        raise UsageError(f"bad threshold list {a.thresholds!r}") from None
    bad = difftest(src, ths)
    if bad:
        out.write("MISMATCH at thresholds " + ",".join(map(str, bad)) + "\n")
        return EXIT_MISMATCH
    out.write("OK\n")
    return EXIT_OK


def cmd_bench(a, out, err):
    d = Path(a.dir)
    if not d.is_dir():
        raise UsageError(f"not a directory: {a.dir}")
    rows = []
    for f in sorted(d.glob("*.lua")):
        src = f.read_text(encoding="utf-8")
        for mode in ("interpreter", "tiered"):
            _, e, vm, wall = execute(src, config_for(mode, a.tier_up_threshold))
            row = {"file": f.name, "mode": mode}
            row.update(stats_row(vm, wall))
            rows.append(row)
    cols = ("file", "mode") + STATS_KEYS
    if a.csv:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] for c in cols])
    else:
        for r in rows:
            out.write(f"{r['file']:<24} {r['mode']:<12} bytecodes={r['bytecodesExecuted']:<10} "
                      f"wall={r['wallTimeMs']:.1f}ms\n")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "dump": cmd_dump, "difftest": cmd_difftest, "bench": cmd_bench}


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return COMMANDS[a.cmd](a, out, err)
    except UsageError as e:
        err.write(f"tieredvm: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
