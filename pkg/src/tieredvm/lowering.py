"""Lower a ``SemFunction`` to Python source for handler generation.

The CFG is acyclic, so blocks are emitted by structured recursion: a
conditional branch becomes an if/else and shared successors are duplicated.
"""
from __future__ import annotations

from . import boxing
from .boxing import subst_operand
from .semir import (Box, Br, Const, CondBr, Opaque, Param, PrimOp, RuleCheck,
                    TypeCheck, Unbox)

_BINOPS = {"add": "+", "sub": "-", "mul": "*", "lt": "<", "le": "<=", "eq": "=="}


class LoweringError(Exception):
    pass


def lower(f, params, on_term, indent=1, scheme=boxing.GUEST):
    """Return source lines for ``f``.

    ``params[i]`` is a Python expression for boxed operand i (normally a local
    variable). ``on_term(term, value_expr)`` returns the lines for a non-branch
    terminator; ``value_expr`` maps an SSA name to its Python expression.
    """
    blocks = f.block_map()
    lines = []

    def emit(name, depth, env, active):
        if name in active:
            raise LoweringError("semantic functions must be acyclic")
        b = blocks[name]
        env = dict(env)
        pad = "    " * depth
        for ins in b.instrs:
            if isinstance(ins, TypeCheck):
                env[ins.dst] = subst_operand(scheme.checker_for(ins.mask).expr, params[ins.param])
            elif isinstance(ins, RuleCheck):
                e = subst_operand(ins.rule.expr, params[ins.param])
                env[ins.dst] = f"(not {e})" if ins.negated else e
            elif isinstance(ins, Const):
                env[ins.dst] = repr(ins.value)
            elif isinstance(ins, Param):
                env[ins.dst] = params[ins.param]
            elif isinstance(ins, Unbox):
                var = f"_{ins.dst}"
                if ins.mask & ~boxing.tDouble == 0:
                    lines.append(f"{pad}{var} = w2d({params[ins.param]})")
                else:
                    lines.append(f"{pad}{var} = {params[ins.param]}")
                env[ins.dst] = var
            elif isinstance(ins, Box):
                var = f"_{ins.dst}"
                if ins.mask & ~boxing.tDouble == 0:
                    lines.append(f"{pad}{var} = d2w({env[ins.src]})")
                else:
                    lines.append(f"{pad}{var} = {env[ins.src]}")
                env[ins.dst] = var
            elif isinstance(ins, PrimOp):
                var = f"_{ins.dst}"
                a = [env[s] for s in ins.srcs]
                if ins.op in _BINOPS:
                    e = f"{a[0]} {_BINOPS[ins.op]} {a[1]}"
                elif ins.op == "div":
                    e = f"float_div({a[0]}, {a[1]})"
                elif ins.op == "mod":
                    e = f"float_mod({a[0]}, {a[1]})"
                elif ins.op == "not":
                    e = f"not {a[0]}"
                elif ins.op in ("and", "or"):
                    e = f"{a[0]} {ins.op} {a[1]}"
                else:
                    raise LoweringError(f"no lowering for primitive {ins.op!r}")
                lines.append(f"{pad}{var} = {e}")
                env[ins.dst] = var
            elif isinstance(ins, Opaque):
                var = f"_{ins.dst}"
                args = ", ".join(env[s] for s in ins.srcs)
                lines.append(f"{pad}{var} = {ins.name}({args})")
                env[ins.dst] = var
            else:
                raise LoweringError(f"cannot lower {ins!r}")
        t = b.term
        if isinstance(t, CondBr):
            lines.append(f"{pad}if {env[t.cond]}:")
            emit(t.then, depth + 1, env, active | {name})
            lines.append(f"{pad}else:")
            emit(t.other, depth + 1, env, active | {name})
        elif isinstance(t, Br):
            emit(t.target, depth, env, active | {name})
        else:
            for line in on_term(t, lambda s: env[s]):
                lines.append(pad + line)

    emit(f.entry, indent, {}, frozenset())
    return lines
